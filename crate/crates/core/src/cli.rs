//! Command-line entry points. Every subcommand reads a JSON run config whose
//! relative paths resolve against the config file's directory; flags
//! override config values.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::dqn::{self, DqnConfig, SearchConfig};
use crate::forecast::{self, AblationConfig, FeatureMatrix, ForecastError};
use crate::fsio;
use crate::geogrid::{self, SstField};
use crate::index::{self, IndexSeries, PairEvaluator, SeasonMask, SeasonTargets};
use crate::rl_env::{ActionMode, AreaPair, EnvConfig, SstEnv};
use crate::stations::{self, Cluster, ClusterParams, Station};
use crate::synthdata::{self, ForecastWorldSpec, Regime, SynthSpec};

/// Exit status for invalid flags or configuration.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for failures while running a command.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "neindex",
    about = "Search for a two-area SST difference index and measure its forecasting value",
    after_help = FORMATS_HELP
)]
struct Cli {
    /// Run config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world with planted areas and its run configs.
    Synth,
    /// Group stations by rainfall regime; writes clusters.csv.
    Cluster(ClusterArgs),
    /// Train the DQN area search; writes best_areas.json and history.csv.
    Optimize(OptimizeArgs),
    /// Score an area pair; writes objective.csv and index.csv.
    Evaluate(EvaluateArgs),
    /// Forecast one cluster's rainfall; writes forecast_<K>.csv.
    Forecast(ForecastArgs),
    /// Exhaustive search over area translations; writes oracle_areas.json
    /// and oracle.csv.
    Oracle,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    /// Centroid-distance merge threshold.
    #[arg(long)]
    d: Option<f64>,
    /// Number of principal components.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ActionMode>,
    #[arg(long)]
    timesteps: Option<u64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Area pair JSON; defaults to the config's initial areas.
    #[arg(long)]
    areas: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[arg(long)]
    cluster: u32,
    /// Also run the arm with the NE index appended.
    #[arg(long)]
    with_ne: bool,
}

fn parse_mode(s: &str) -> Result<ActionMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

const FORMATS_HELP: &str = "\
File formats:
  sst/                 grid.json (grid spec) + sst.bin (little-endian f32, time-major)
  stations.csv         station_id,lat,lon,year,month,rain_mm (empty rain = missing)
  clusters.csv         cluster_id,station_id
  indices.csv          index_name,year,month,value
  index.csv            year,month,z
  best_areas.json      {\"A\": [[lat_min,lat_max,lon_min,lon_max], ...], \"B\": [...]}
  history.csv          step,episode,reward,best_q,epsilon
  objective.csv        r_onset,r_retreat,q,valid,violation
  forecast_<K>.csv     cluster_id,fold,arm,rmse_mm_month

Exit status: 0 success, 1 runtime error, 2 usage or config error.";

/// Input and output locations; relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub sst_dir: Option<PathBuf>,
    pub stations_csv: Option<PathBuf>,
    /// Defaults to `<output_dir>/clusters.csv`.
    pub clusters_csv: Option<PathBuf>,
    pub indices_csv: Option<PathBuf>,
    /// Defaults to `<output_dir>/index.csv`.
    pub ne_index_csv: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Cluster ids pooled into each season's rainfall target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeasonClusters {
    pub onset: Vec<u32>,
    pub retreat: Vec<u32>,
}

impl Default for SeasonClusters {
    fn default() -> Self {
        Self {
            onset: (1..=4).collect(),
            retreat: (5..=12).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub cluster: ClusterParams,
    /// Minimum fraction of non-missing months for a station to be kept.
    pub completeness: f64,
    pub seasons: SeasonClusters,
    /// 1-based calendar months of the onset season.
    pub onset_months: Vec<u32>,
    /// Inclusive normalisation window; the whole record when absent.
    pub reference: Option<[YearMonth; 2]>,
    pub env: Option<EnvConfig>,
    pub dqn: DqnConfig,
    pub search: SearchConfig,
    pub forecast: AblationConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            cluster: ClusterParams::default(),
            completeness: 0.8,
            seasons: SeasonClusters::default(),
            onset_months: SeasonMask::default().onset_months(),
            reference: None,
            env: None,
            dqn: DqnConfig::default(),
            search: SearchConfig::default(),
            forecast: AblationConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        fsio::write_atomic(path, text.as_bytes())
    }

    pub fn season_mask(&self) -> Result<SeasonMask, String> {
        SeasonMask::from_onset_months(&self.onset_months)
            .ok_or_else(|| format!("onset_months must be calendar months 1..=12: {:?}", self.onset_months))
    }
}

enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl<E: std::error::Error + Send + Sync + 'static> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

/// Config plus the directory its relative paths hang off.
struct Context {
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
}

impl Context {
    fn load(cli: &Cli) -> CliResult<Self> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| config_err("--config <FILE> is required for this command"))?;
        let mut cfg = RunConfig::read(path).map_err(Failure::Config)?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let out = match &cli.out {
            Some(o) => o.clone(),
            None => base.join(cfg.paths.output_dir.clone().unwrap_or_else(|| "out".into())),
        };
        Ok(Self { cfg, base, out })
    }

    fn input(&self, p: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
        let p = p
            .as_ref()
            .ok_or_else(|| config_err(format!("paths.{what} is not set")))?;
        let full = self.base.join(p);
        if !full.exists() {
            return Err(config_err(format!("paths.{what}: {} does not exist", full.display())));
        }
        Ok(full)
    }

    fn input_or_output(&self, p: &Option<PathBuf>, default: &str, what: &str) -> CliResult<PathBuf> {
        match p {
            Some(_) => self.input(p, what),
            None => {
                let full = self.out.join(default);
                if !full.exists() {
                    return Err(config_err(format!("{} does not exist; set paths.{what}", full.display())));
                }
                Ok(full)
            }
        }
    }

    fn output(&self, name: &str) -> CliResult<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        Ok(self.out.join(name))
    }

    fn field(&self) -> CliResult<SstField> {
        Ok(geogrid::load_sst(&self.input(&self.cfg.paths.sst_dir, "sst_dir")?)?)
    }

    fn stations(&self) -> CliResult<Vec<Station>> {
        let raw = stations::read_stations_csv(&self.input(&self.cfg.paths.stations_csv, "stations_csv")?)?;
        Ok(stations::prepare_stations(&raw, self.cfg.completeness)?)
    }

    fn clusters(&self) -> CliResult<Vec<Cluster>> {
        let p = self.input_or_output(&self.cfg.paths.clusters_csv, "clusters.csv", "clusters_csv")?;
        Ok(stations::read_clusters_csv(&p)?)
    }

    fn env_config(&self) -> CliResult<EnvConfig> {
        self.cfg
            .env
            .clone()
            .ok_or_else(|| config_err("env (domain and initial areas) is not set"))
    }

    fn reference(&self, field: &SstField) -> CliResult<std::ops::Range<usize>> {
        let spec = field.spec();
        match self.cfg.reference {
            None => Ok(0..spec.nt),
            Some([a, b]) => {
                let lo = spec.t0.months_until(a);
                let hi = spec.t0.months_until(b) + 1;
                if lo < 0 || hi as usize > spec.nt || lo >= hi {
                    return Err(config_err(format!("reference window {a}..{b} is outside the SST record")));
                }
                Ok(lo as usize..hi as usize)
            }
        }
    }

    fn targets(&self) -> CliResult<SeasonTargets> {
        let st = self.stations()?;
        let clusters = self.clusters()?;
        let pooled = |ids: &[u32]| -> CliResult<_> {
            if !clusters.iter().any(|c| ids.contains(&c.id)) {
                return Err(config_err(format!("no cluster with id in {ids:?}")));
            }
            Ok(stations::pooled_cluster_series(&clusters, ids, &st)?)
        };
        Ok(SeasonTargets {
            onset: pooled(&self.cfg.seasons.onset)?,
            retreat: pooled(&self.cfg.seasons.retreat)?,
        })
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Synth => run_synth(&cli),
        Command::Cluster(a) => run_cluster(&cli, a),
        Command::Optimize(a) => run_optimize(&cli, a),
        Command::Evaluate(a) => run_evaluate(&cli, a),
        Command::Forecast(a) => run_forecast(&cli, a),
        Command::Oracle => run_oracle(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn run_synth(cli: &Cli) -> CliResult<()> {
    let dir = cli.out.clone().ok_or_else(|| config_err("synth needs --out <DIR>"))?;
    let seed = cli.seed.unwrap_or(0);
    let spec = SynthSpec::default();
    let field = synthdata::gen_sst(&spec, seed)?;
    geogrid::save_sst(&field, &dir.join("sst"))?;
    let st = synthdata::gen_stations(&spec, seed)?;
    stations::write_stations_csv(&st.stations, &dir.join("stations.csv"))?;

    // map clusters found with default parameters onto the planted regimes
    let mut cfg = RunConfig::default();
    let kept = stations::prepare_stations(&st.stations, cfg.completeness)?;
    let clusters = stations::cluster_pipeline(&kept, cfg.cluster)?;
    let mut onset = Vec::new();
    let mut retreat = Vec::new();
    for c in &clusters {
        let south = c.member_ids.iter().filter(|id| st.regime(id) == Some(Regime::South)).count();
        if 2 * south > c.len() {
            onset.push(c.id);
        } else {
            retreat.push(c.id);
        }
    }
    cfg.paths = Paths {
        sst_dir: Some("sst".into()),
        stations_csv: Some("stations.csv".into()),
        output_dir: Some("out".into()),
        ..Default::default()
    };
    cfg.seasons = SeasonClusters { onset, retreat };
    cfg.env = Some(EnvConfig::new(spec.domain(), spec.initial.clone()));
    cfg.dqn.total_timesteps = 20_000;
    cfg.seed = seed;
    cfg.write(&dir.join("run.json"))?;

    let fdir = dir.join("forecast");
    let fspec = ForecastWorldSpec::default();
    let world = synthdata::gen_forecast_world(&fspec, seed);
    let mut fstations = Vec::new();
    let mut fclusters = Vec::new();
    for (id, series) in &world.clusters {
        let members: Vec<String> = ["a", "b", "c"].iter().map(|s| format!("F{id}{s}")).collect();
        for (k, name) in members.iter().enumerate() {
            let scale = 0.9 + 0.1 * k as f64;
            fstations.push(Station {
                id: name.clone(),
                lat: 7.0 + *id as f64,
                lon: 100.0 + k as f64 * 0.1,
                start: world.start,
                rain: series.iter().map(|v| Some(v * scale)).collect(),
            });
        }
        fclusters.push(Cluster {
            id: *id,
            member_ids: members,
            centroid: Vec::new(),
        });
    }
    std::fs::create_dir_all(&fdir)?;
    stations::write_stations_csv(&fstations, &fdir.join("stations.csv"))?;
    stations::write_clusters_csv(&fclusters, &fdir.join("clusters.csv"))?;
    forecast::write_indices_csv(&world.indices, &fdir.join("indices.csv"))?;
    let ne = IndexSeries {
        start: world.start,
        values: world.ne_index.clone(),
        reference: 0..world.ne_index.len(),
    };
    index::write_index_csv(&ne, &fdir.join("ne_index.csv"))?;
    let mut fcfg = RunConfig {
        paths: Paths {
            stations_csv: Some("stations.csv".into()),
            clusters_csv: Some("clusters.csv".into()),
            indices_csv: Some("indices.csv".into()),
            ne_index_csv: Some("ne_index.csv".into()),
            output_dir: Some("out".into()),
            ..Default::default()
        },
        seed,
        ..Default::default()
    };
    fcfg.forecast.grid = forecast::ForecastGrid {
        hidden: vec![16],
        layers: vec![1],
        dropout: vec![0.0],
    };
    fcfg.write(&fdir.join("run.json"))?;
    println!("wrote synthetic world to {}", dir.display());
    Ok(())
}

fn run_cluster(cli: &Cli, args: &ClusterArgs) -> CliResult<()> {
    let mut ctx = Context::load(cli)?;
    if let Some(d) = args.d {
        ctx.cfg.cluster.d = d;
    }
    if let Some(n) = args.n {
        ctx.cfg.cluster.n = n;
    }
    let st = ctx.stations()?;
    let clusters = match stations::cluster_pipeline(&st, ctx.cfg.cluster) {
        Err(stations::StationError::InvalidParams(m)) => return Err(config_err(m)),
        r => r?,
    };
    stations::write_clusters_csv(&clusters, &ctx.output("clusters.csv")?)?;
    println!("{} stations in {} clusters", st.len(), clusters.len());
    Ok(())
}

fn build_env(ctx: &Context, mode: Option<ActionMode>) -> CliResult<SstEnv> {
    let mut env_cfg = ctx.env_config()?;
    if let Some(m) = mode {
        env_cfg.mode = m;
    }
    env_cfg.validate().map_err(|e| config_err(e.to_string()))?;
    let field = ctx.field()?;
    let reference = ctx.reference(&field)?;
    let targets = ctx.targets()?;
    let mask = ctx.cfg.season_mask().map_err(Failure::Config)?;
    Ok(SstEnv::new(Arc::new(field), Arc::new(targets), &mask, reference, env_cfg)?)
}

fn run_optimize(cli: &Cli, args: &OptimizeArgs) -> CliResult<()> {
    let ctx = Context::load(cli)?;
    let mut env = build_env(&ctx, args.mode)?;
    let mut dqn_cfg = ctx.cfg.dqn.clone();
    if let Some(t) = args.timesteps {
        dqn_cfg.total_timesteps = t;
    }
    dqn_cfg.seed = ctx.cfg.seed;
    dqn_cfg.validate().map_err(|e| config_err(e.to_string()))?;
    let outcome = dqn::train(&mut env, &dqn_cfg)?;
    dqn::write_history_csv(&outcome.history, &ctx.output("history.csv")?)?;
    let (best, q) = outcome
        .best
        .ok_or_else(|| Failure::Runtime(anyhow::anyhow!("no scorable state was visited")))?;
    best.write_json(&ctx.output("best_areas.json")?)?;
    println!("best q = {q:.4}");
    Ok(())
}

fn evaluator(ctx: &Context) -> CliResult<(PairEvaluator<Box<SstField>, Box<SeasonTargets>>, EnvConfig)> {
    let field = ctx.field()?;
    let reference = ctx.reference(&field)?;
    let targets = ctx.targets()?;
    let mask = ctx.cfg.season_mask().map_err(Failure::Config)?;
    let env_cfg = ctx.env_config()?;
    let ev = PairEvaluator::new(Box::new(field), Box::new(targets), &mask, env_cfg.min_ocean, reference)?;
    Ok((ev, env_cfg))
}

fn run_evaluate(cli: &Cli, args: &EvaluateArgs) -> CliResult<()> {
    let ctx = Context::load(cli)?;
    let (ev, env_cfg) = evaluator(&ctx)?;
    let pair = match &args.areas {
        Some(p) => AreaPair::read_json(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
        None => env_cfg.initial.clone(),
    };
    let report = ev.evaluate(&pair.a, &pair.b);
    index::write_objective_csv(std::slice::from_ref(&report), &ctx.output("objective.csv")?)?;
    let z = ev.index(&pair.a, &pair.b)?;
    index::write_index_csv(&z, &ctx.output("index.csv")?)?;
    match report.score() {
        Some(q) => println!("q = {q:.4}"),
        None => println!("invalid: {}", report.violation.as_deref().unwrap_or("")),
    }
    Ok(())
}

fn run_oracle(cli: &Cli) -> CliResult<()> {
    let ctx = Context::load(cli)?;
    let (ev, env_cfg) = evaluator(&ctx)?;
    let search = SearchConfig {
        min_ocean: env_cfg.min_ocean,
        ..ctx.cfg.search
    };
    let res = dqn::exhaustive_search(&ev, &env_cfg.initial, &env_cfg.domain, &search)?;
    res.best.write_json(&ctx.output("oracle_areas.json")?)?;
    let report = ev.evaluate(&res.best.a, &res.best.b);
    index::write_objective_csv(std::slice::from_ref(&report), &ctx.output("oracle.csv")?)?;
    println!("oracle q = {:.4} over {} pairs", res.best_q, res.evaluated);
    Ok(())
}

/// Overlapping months of several monthly series.
fn common_window(series: &[(YearMonth, usize)]) -> Option<(YearMonth, usize)> {
    let start = series.iter().map(|(s, _)| *s).max()?;
    let end = series.iter().map(|(s, n)| s.add_months(*n as i64)).min()?;
    let len = start.months_until(end);
    (len > 0).then_some((start, len as usize))
}

fn slice_from(start: YearMonth, values: &[f64], at: YearMonth, len: usize) -> Vec<f64> {
    let off = start.months_until(at) as usize;
    values[off..off + len].to_vec()
}

fn run_forecast(cli: &Cli, args: &ForecastArgs) -> CliResult<()> {
    let ctx = Context::load(cli)?;
    let st = ctx.stations()?;
    let clusters = ctx.clusters()?;
    let cluster = clusters
        .iter()
        .find(|c| c.id == args.cluster)
        .ok_or_else(|| config_err(format!("cluster {} not found", args.cluster)))?;
    let target = stations::cluster_mean_series(cluster, &st)?;
    let candidates = forecast::read_indices_csv(&ctx.input(&ctx.cfg.paths.indices_csv, "indices_csv")?)?;
    let ne = if args.with_ne {
        let p = ctx.input_or_output(&ctx.cfg.paths.ne_index_csv, "index.csv", "ne_index_csv")?;
        Some(index::read_index_csv(&p)?)
    } else {
        None
    };
    let mut axes = vec![(target.start, target.values.len()), (candidates.start, candidates.len())];
    if let Some((s, v)) = &ne {
        axes.push((*s, v.len()));
    }
    let (start, len) = common_window(&axes).ok_or_else(|| Failure::Runtime(ForecastError::AxisMismatch.into()))?;
    let y = slice_from(target.start, &target.values, start, len);
    let features: FeatureMatrix = candidates.window(start, len)?;
    let cfg: &AblationConfig = &ctx.cfg.forecast;
    let mut cfg = cfg.clone();
    cfg.base.seed = ctx.cfg.seed;
    for f in &cfg.folds {
        f.validate().map_err(|e| config_err(e.to_string()))?;
    }
    cfg.base.validate().map_err(|e| config_err(e.to_string()))?;

    let rows = match &ne {
        None => forecast::report_rows(args.cluster, &forecast::base_experiment(&y, &features, &cfg)?),
        Some((s, v)) => {
            let z = slice_from(*s, v, start, len);
            match forecast::ablation_experiment(args.cluster, &y, &features, &z, &cfg) {
                Err(e @ ForecastError::SkippedCluster { .. }) => {
                    eprintln!("{e}");
                    return Ok(());
                }
                r => {
                    let (base, with) = r?;
                    let mut rows = forecast::report_rows(args.cluster, &base);
                    rows.extend(forecast::report_rows(args.cluster, &with));
                    rows
                }
            }
        }
    };
    let name = format!("forecast_{}.csv", args.cluster);
    forecast::write_report_csv(&rows, &ctx.output(&name)?)?;
    for r in &rows {
        println!("{} fold {} {}: {:.2} mm/month", r.cluster_id, r.fold, r.arm, r.rmse_mm_month);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.cluster, ClusterParams { d: 2.0, n: 2 });
        assert_eq!(cfg.onset_months, vec![1, 2, 3, 10, 11, 12]);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seeed": 1}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(partial.seed, 9);
    }

    #[test]
    fn usage_errors_exit_with_config_status() {
        assert_eq!(dispatch(["neindex", "optimize", "--bogus"]), EXIT_CONFIG);
        assert_eq!(dispatch(["neindex", "optimize", "--mode", "diagonal"]), EXIT_CONFIG);
        assert_eq!(dispatch(["neindex", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(dispatch(["neindex", "oracle"]), EXIT_CONFIG);
        assert_eq!(dispatch(["neindex", "--help"]), 0);
    }

    #[test]
    fn missing_inputs_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            paths: Paths {
                stations_csv: Some("nope.csv".into()),
                ..Default::default()
            },
            ..Default::default()
        };
        let p = dir.path().join("run.json");
        cfg.write(&p).unwrap();
        assert_eq!(dispatch(["neindex", "--config", p.to_str().unwrap(), "cluster"]), EXIT_CONFIG);
    }

    #[test]
    fn overlap_window() {
        let ym = |y, m| YearMonth::new(y, m).unwrap();
        assert_eq!(
            common_window(&[(ym(2000, 1), 24), (ym(2000, 6), 24)]),
            Some((ym(2000, 6), 19))
        );
        assert_eq!(common_window(&[(ym(2000, 1), 2), (ym(2001, 1), 2)]), None);
    }
}
