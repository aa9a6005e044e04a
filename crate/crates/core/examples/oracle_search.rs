//! Exhaustive search over all translations of the template areas; the
//! ground truth the DQN is measured against.
//!
//! ```text
//! cargo run --release --example oracle_search [seed]
//! ```

use std::time::Instant;

use neindex::dqn::{exhaustive_search, SearchConfig};
use neindex::index::{PairEvaluator, SeasonMask};
use neindex::synthdata::{gen_sst, gen_stations, planted_targets, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let spec = SynthSpec::default();
    let field = gen_sst(&spec, seed)?;
    let targets = planted_targets(&gen_stations(&spec, seed)?)?;
    let nt = field.spec().nt;
    let ev = PairEvaluator::new(&field, &targets, &SeasonMask::default(), 0.8, 0..nt)?;

    let t = Instant::now();
    let res = exhaustive_search(&ev, &spec.initial, &spec.domain(), &SearchConfig::default())?;
    println!(
        "{} x {} placements, {} pairs in {:.1?}",
        res.placements_a,
        res.placements_b,
        res.evaluated,
        t.elapsed()
    );
    println!("best q {:.4} at {}", res.best_q, serde_json::to_string(&res.best)?);
    let planted = spec.planted();
    println!(
        "planted q {:.4} at {}",
        ev.evaluate(&planted.a, &planted.b).q,
        serde_json::to_string(&planted)?
    );
    Ok(())
}
