//! Trains the DQN agent on a five-state chain and compares its greedy values
//! with value iteration.
//!
//! ```text
//! cargo run --release --example chain_mdp
//! ```

use neindex::dqn::{train, ChainEnv, DqnConfig, QNetwork};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = DqnConfig {
        total_timesteps: 20_000,
        learn_start: 500,
        target_sync_every: 250,
        hidden: vec![32, 32],
        seed: 7,
        ..Default::default()
    };
    let mut env = ChainEnv::new(20);
    let outcome = train(&mut env, &config)?;
    let exact = ChainEnv::value_iteration(config.gamma);
    let greedy = |q: &QNetwork, s: usize| q.qvalues(&ChainEnv::one_hot(s)).into_iter().fold(f64::MIN, f64::max);
    println!("state  learned  exact");
    let mut worst: f64 = 0.0;
    for (s, v) in exact.iter().enumerate().take(ChainEnv::GOAL) {
        let learned = greedy(&outcome.qnet, s);
        worst = worst.max((learned - v).abs());
        println!("{s:>5}  {learned:>7.4}  {v:.4}");
    }
    println!("max abs error {worst:.4}");
    Ok(())
}
