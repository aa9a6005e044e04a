//! Groups synthetic rain gauges into regimes: QC, imputation, climatology
//! features, PCA and centroid-distance merging.
//!
//! ```text
//! cargo run --release --example station_clustering [d] [n]
//! ```

use neindex::stations::{adjusted_rand_index, cluster_pipeline, prepare_stations, ClusterParams};
use neindex::synthdata::{gen_stations, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let d = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2.0);
    let n = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let synth = gen_stations(&SynthSpec::default(), 0)?;
    let kept = prepare_stations(&synth.stations, 0.8)?;
    println!("{} of {} stations pass QC", kept.len(), synth.stations.len());

    let clusters = cluster_pipeline(&kept, ClusterParams { d, n })?;
    for c in &clusters {
        println!("cluster {}: {}", c.id, c.member_ids.join(" "));
    }
    let truth: Vec<usize> = kept.iter().map(|s| synth.regime(&s.id).map_or(0, |r| r as usize)).collect();
    let found: Vec<usize> = kept
        .iter()
        .map(|s| clusters.iter().position(|c| c.member_ids.contains(&s.id)).unwrap_or(usize::MAX))
        .collect();
    println!("adjusted Rand index vs planted regimes: {:.3}", adjusted_rand_index(&truth, &found));
    Ok(())
}
