//! Walks through the discrete action spaces and the environment's
//! constraint handling.
//!
//! ```text
//! cargo run --release --example actions
//! ```

use std::sync::Arc;

use neindex::index::SeasonMask;
use neindex::rl_env::{enumerate_actions, ActionMode, EnvConfig, SstEnv};
use neindex::synthdata::{gen_sst, gen_stations, planted_targets, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for mode in [ActionMode::ShiftOnly, ActionMode::ShiftAndResize] {
        let actions = enumerate_actions(mode);
        let names: Vec<String> = actions.iter().map(ToString::to_string).collect();
        println!("{mode:?}: {} actions", actions.len());
        println!("  {}", names.join(", "));
    }

    let spec = SynthSpec::default();
    let field = Arc::new(gen_sst(&spec, 0)?);
    let targets = Arc::new(planted_targets(&gen_stations(&spec, 0)?)?);
    let nt = field.spec().nt;
    let config = EnvConfig {
        mode: ActionMode::ShiftAndResize,
        jitter: 0,
        ..EnvConfig::new(spec.domain(), spec.initial.clone())
    };
    let mut env = SstEnv::new(field, targets, &SeasonMask::default(), 0..nt, config)?;
    let start = env.reset_state(0)?.last_q;
    println!("start q {start:.4}");
    let actions = env.actions().to_vec();
    for (k, a) in actions.iter().enumerate() {
        let before = env.state().expect("reset").clone();
        let tr = env.step_action(*a)?;
        match &tr.rejected {
            Some(why) => println!("{k:>2} {a:<24} rejected: {why}"),
            None => println!("{k:>2} {a:<24} q {:.4}  reward {:+.4}", tr.state.last_q, tr.reward),
        }
        // undo so every action starts from the same state
        if tr.rejected.is_none() {
            env.step_action(a.inverse())?;
        }
        assert_eq!(env.state().expect("reset").areas, before.areas);
    }
    Ok(())
}
