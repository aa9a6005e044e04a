//! Forecasts a cluster's rainfall 12 months ahead with and without the NE
//! index and reports the RMSE of each arm.
//!
//! ```text
//! cargo run --release --example forecast_ablation [seed] [--full-grid]
//! ```

use neindex::forecast::{ablation_experiment, AblationConfig, ForecastError, ForecastGrid};
use neindex::synthdata::{gen_forecast_world, ForecastWorldSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.iter().find_map(|a| a.parse().ok()).unwrap_or(0);
    let mut cfg = AblationConfig::default();
    if !args.iter().any(|a| a == "--full-grid") {
        cfg.grid = ForecastGrid {
            hidden: vec![16],
            layers: vec![1],
            dropout: vec![0.0],
        };
    }
    let world = gen_forecast_world(&ForecastWorldSpec::default(), seed);
    for (id, rain) in &world.clusters {
        match ablation_experiment(*id, rain, &world.indices, &world.ne_index, &cfg) {
            Ok((base, with)) => {
                println!("cluster {id}: inputs {:?}", base.selected[0]);
                for (k, (b, w)) in base.fold_rmse.iter().zip(&with.fold_rmse).enumerate() {
                    println!("  fold {}: base {b:.2}  base+ne {w:.2} mm/month", k + 1);
                }
                let lift = 1.0 - with.mean_rmse() / base.mean_rmse();
                println!(
                    "  mean: base {:.2}  base+ne {:.2}  lift {:.1}%",
                    base.mean_rmse(),
                    with.mean_rmse(),
                    100.0 * lift
                );
            }
            Err(e @ ForecastError::SkippedCluster { .. }) => println!("{e}"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}
