//! Scores area pairs with the season-aware objective and writes the index.
//!
//! ```text
//! cargo run --release --example objective
//! ```

use neindex::index::{objective_q, PairEvaluator, SeasonMask};
use neindex::synthdata::{gen_sst, gen_stations, planted_targets, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (r_on, r_re) in [(0.270, -0.177), (-0.653, -0.754), (-0.560, -0.714)] {
        println!("q({r_on:+.3}, {r_re:+.3}) = {:.3}", objective_q(r_on, r_re));
    }

    let spec = SynthSpec::default();
    let field = gen_sst(&spec, 0)?;
    let targets = planted_targets(&gen_stations(&spec, 0)?)?;
    let nt = field.spec().nt;
    let ev = PairEvaluator::new(&field, &targets, &SeasonMask::default(), 0.8, 0..nt)?;
    for (name, pair) in [("initial", &spec.initial), ("planted", &spec.planted())] {
        let rep = ev.evaluate(&pair.a, &pair.b);
        println!(
            "{name}: r_onset {:.3} r_retreat {:.3} q {:.3}",
            rep.r_onset,
            rep.r_retreat,
            rep.q
        );
    }

    let inland = {
        let mut p = spec.planted();
        p.b = neindex::geogrid::AreaSet::single(neindex::geogrid::Rect::new(10.0, 13.0, 100.0, 101.5)?);
        p
    };
    let rep = ev.evaluate(&inland.a, &inland.b);
    println!("mostly land B: valid {} ({})", rep.valid, rep.violation.unwrap_or_default());

    let z = ev.index(&spec.planted().a, &spec.planted().b)?;
    let path = std::env::temp_dir().join("planted_index.csv");
    neindex::index::write_index_csv(&z, &path)?;
    println!("wrote {} months of z to {}", z.values.len(), path.display());
    Ok(())
}
