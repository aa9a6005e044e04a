//! Trains the DQN area search on a synthetic world and reports the best
//! visited pair.
//!
//! ```text
//! cargo run --release --example dqn_search [timesteps] [seed]
//! ```

use std::sync::Arc;

use neindex::dqn::{train, DqnConfig};
use neindex::index::SeasonMask;
use neindex::rl_env::{EnvConfig, SstEnv};
use neindex::synthdata::{gen_sst, gen_stations, planted_targets, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let timesteps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20_000);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let spec = SynthSpec::default();
    let field = Arc::new(gen_sst(&spec, seed)?);
    let targets = Arc::new(planted_targets(&gen_stations(&spec, seed)?)?);
    let nt = field.spec().nt;
    let config = EnvConfig::new(spec.domain(), spec.initial.clone());
    let mut env = SstEnv::new(field, targets, &SeasonMask::default(), 0..nt, config)?;
    let initial_q = env.evaluate(&spec.initial).q;

    let dqn = DqnConfig {
        total_timesteps: timesteps,
        seed,
        ..Default::default()
    };
    let outcome = train(&mut env, &dqn)?;
    let returns = outcome.history.episode_returns();
    println!("{} episodes, {} distinct pairs scored", returns.len(), env.evaluations());
    let chunk = (returns.len() / 5).max(1);
    for (k, c) in returns.chunks(chunk).enumerate() {
        println!("  episodes {:>4}..: mean return {:+.4}", k * chunk, c.iter().sum::<f64>() / c.len() as f64);
    }
    let (best, q) = outcome.best.ok_or("no scorable state")?;
    println!("initial q {initial_q:.4}, best q {q:.4}");
    println!("best areas {}", serde_json::to_string(&best)?);
    Ok(())
}
