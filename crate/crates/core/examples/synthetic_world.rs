//! Builds a synthetic world with a planted SST dipole and two rainfall
//! regimes, then checks the planted index against its analytic correlation.
//!
//! ```text
//! cargo run --release --example synthetic_world [seed]
//! ```

use neindex::geogrid::ocean_fraction;
use neindex::index::{pearson, raw_index};
use neindex::synthdata::{expected_objective, expected_rho_index, gen_sst, gen_stations, latent, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let spec = SynthSpec::default();
    let field = gen_sst(&spec, seed)?;
    let stations = gen_stations(&spec, seed)?;
    let g = field.spec();
    println!("grid {}x{} at {} deg, {} months from {}", g.nlat, g.nlon, g.dlat, g.nt, g.t0);
    println!("{} stations", stations.stations.len());

    let planted = spec.planted();
    let mask = field.ocean_mask();
    println!(
        "planted A {:?} ocean {:.2}, B {:?} ocean {:.2}",
        planted.a.rects()[0].to_array(),
        ocean_fraction(&planted.a, &mask)?,
        planted.b.rects()[0].to_array(),
        ocean_fraction(&planted.b, &mask)?
    );

    let raw = raw_index(&field, &planted.a, &planted.b)?;
    let r = pearson(&raw, &latent(&spec, seed))?;
    println!("corr(index, latent) = {r:.3}  (analytic {:.3})", expected_rho_index(&spec));
    let (r_on, r_re, q) = expected_objective(&spec);
    println!("analytic objective at the planted areas: r_onset {r_on:.3}, r_retreat {r_re:.3}, q {q:.3}");
    Ok(())
}
