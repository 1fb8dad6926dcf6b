//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for usage and
//! configuration errors.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kvswarm_core::workload::generate;

use crate::config::{config_hash, digest_bytes, ConfigError, RunConfig};
use crate::experiment::{self, Workload};
use crate::formats;
use crate::report;

pub const SEED_ENV: &str = "KVSWARM_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "kvswarm",
    version,
    about = "Co-activation aware KV cache offloading simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted activation trace and its ground-truth groups.
    Gen(GenArgs),
    /// Cluster the profiling prefix of a trace.
    Cluster(ClusterArgs),
    /// Stripe clusters over devices and plan the DRAM tier.
    Place(PlaceArgs),
    /// Run the storage simulation for each mode and sweep point.
    Simulate(SimulateArgs),
    /// Summarize (and optionally plot) a finished simulate run.
    Report(ReportArgs),
}

/// Options shared by the configurable subcommands.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory [default: runs/<command>-<hash>].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub entries: Option<String>,
    #[arg(long)]
    pub groups: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub sparsity: Option<String>,
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub overlap: Option<String>,
    #[arg(long)]
    pub decode_steps: Option<String>,
    #[arg(long)]
    pub popularity: Option<String>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub trace: PathBuf,
    /// Cluster radius in (0, 1), or `auto`.
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub max_replicas: Option<String>,
}

#[derive(Debug, Args)]
pub struct PlaceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub trace: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub clusters: PathBuf,
    #[arg(long)]
    pub disks: Option<String>,
    #[arg(long)]
    pub cache_ratio: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trace to replay; without it the planted workload is generated.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Precomputed clusters for `--trace`.
    #[arg(long, value_name = "FILE", requires = "trace")]
    pub clusters: Option<PathBuf>,
    /// Comma list of swarm, no_balance, static, no_dedup, no_cluster.
    #[arg(long)]
    pub modes: Option<String>,
    /// Device counts, e.g. `4` or `1..8`.
    #[arg(long)]
    pub disks: Option<String>,
    /// Sparsity points, e.g. `0.1` or `0.02..0.2`.
    #[arg(long)]
    pub sparsity: Option<String>,
    #[arg(long)]
    pub cache_ratio: Option<String>,
    #[arg(long)]
    pub emit_plots: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,
    #[arg(long)]
    pub emit_plots: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

/// Defaults, then the config file, then `KVSWARM_SEED`, then flags.
fn resolve(
    common: &Common,
    flags: &[(&str, &Option<String>)],
    env_seed: Option<&str>,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    if let Some(s) = env_seed {
        cfg.set("seed", s)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = &common.seed {
        cfg.set("seed", s)?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    Ok(cfg)
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", path.display())))
}

fn out_dir(common: &Common, command: &str, hash: &str) -> Result<PathBuf, CliError> {
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{command}-{}", &hash[..12])));
    fs::create_dir_all(&dir).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", dir.display())))?;
    Ok(dir)
}

/// Writes `config.txt`: the hash, input digests and canonical config.
fn write_config(
    dir: &Path,
    hash: &str,
    command: &str,
    cfg: &RunConfig,
    inputs: &BTreeMap<String, String>,
) -> Result<(), CliError> {
    let mut text = format!("# {}\n# command={command}\n", report::stamp(hash));
    for (k, v) in inputs {
        text.push_str(&format!("# input {k} sha256={v}\n"));
    }
    text.push_str(&cfg.canonical());
    fs::write(dir.join("config.txt"), text).map_err(runtime)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(anyhow::anyhow!("{}: {e}", path.display())))
}

fn single_disk(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.disks.0.len() != 1 {
        return Err(CliError::Usage("place takes a single device count".into()));
    }
    Ok(())
}

struct Ctx<'a> {
    out: &'a mut dyn Write,
    env_seed: Option<String>,
}

impl Ctx<'_> {
    fn say(&mut self, line: impl AsRef<str>) -> Result<(), CliError> {
        writeln!(self.out, "{}", line.as_ref()).map_err(runtime)
    }
}

fn cmd_gen(a: &GenArgs, cx: &mut Ctx) -> Result<(), CliError> {
    let cfg = resolve(
        &a.common,
        &[
            ("entries", &a.entries),
            ("groups", &a.groups),
            ("steps", &a.steps),
            ("sparsity", &a.sparsity),
            ("noise", &a.noise),
            ("overlap", &a.overlap),
            ("decode_steps", &a.decode_steps),
            ("popularity", &a.popularity),
        ],
        cx.env_seed.as_deref(),
    )?;
    if cfg.sparsity.0.len() != 1 {
        return Err(CliError::Usage("gen takes a single sparsity".into()));
    }
    let inputs = BTreeMap::new();
    let hash = config_hash("gen", &cfg, &inputs);
    let w = generate(&cfg.planted_spec(cfg.sparsity.0[0]))
        .map_err(|e| CliError::Usage(format!("invalid workload: {e}")))?;
    let dir = out_dir(&a.common, "gen", &hash)?;
    let stamp = vec![report::stamp(&hash)];
    let mut f = create(&dir.join("trace.kvtrace"))?;
    formats::write_trace(&mut f, &w.trace, &stamp).map_err(runtime)?;
    f.flush().map_err(runtime)?;
    let mut g = create(&dir.join("groups.txt"))?;
    formats::write_groups(&mut g, &w.groups, &stamp).map_err(runtime)?;
    g.flush().map_err(runtime)?;
    write_config(&dir, &hash, "gen", &cfg, &inputs)?;
    cx.say(format!("config {hash}"))?;
    cx.say(format!(
        "wrote {} steps over {} entries to {}",
        w.trace.len(),
        w.trace.entry_count(),
        dir.display()
    ))
}

fn load_trace(path: &Path) -> Result<(kvswarm_core::ActivationTrace, String), CliError> {
    let bytes = read_input(path)?;
    let t = formats::read_trace(BufReader::new(&bytes[..]))
        .map_err(|e| runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
    Ok((t, digest_bytes(&bytes)))
}

fn load_clusters(path: &Path) -> Result<(kvswarm_core::ClusterSet, String), CliError> {
    let bytes = read_input(path)?;
    let cs = formats::read_clusters(BufReader::new(&bytes[..]))
        .map_err(|e| runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
    Ok((cs, digest_bytes(&bytes)))
}

fn cmd_cluster(a: &ClusterArgs, cx: &mut Ctx) -> Result<(), CliError> {
    let cfg = resolve(
        &a.common,
        &[("tau", &a.tau), ("max_replicas", &a.max_replicas)],
        cx.env_seed.as_deref(),
    )?;
    let (trace, digest) = load_trace(&a.trace)?;
    let inputs = BTreeMap::from([("trace".to_string(), digest)]);
    let hash = config_hash("cluster", &cfg, &inputs);
    let off = experiment::offline(&cfg, &trace).map_err(runtime)?;
    let cs = experiment::cluster(&cfg, &trace, &off).map_err(runtime)?;
    let st = experiment::cluster_stats(&cs, &off);
    let dir = out_dir(&a.common, "cluster", &hash)?;
    let mut f = create(&dir.join("clusters.kvclust"))?;
    formats::write_clusters(&mut f, &cs, &[report::stamp(&hash)]).map_err(runtime)?;
    f.flush().map_err(runtime)?;
    let text = format!(
        "# {}\nclusters {{\n  profile_steps = {}\n  tau = {}\n  entries = {}\n  clusters = {}\n  \
         mean_size = {}\n  max_size = {}\n  replicated_entries = {}\n  max_replication = {}\n  \
         mean_medoid_distance = {}\n}}\n",
        report::stamp(&hash),
        off.profile_len,
        st.tau,
        st.entries,
        st.clusters,
        st.mean_size,
        st.max_size,
        st.replicated_entries,
        st.max_replication,
        st.mean_quality
    );
    fs::write(dir.join("summary.txt"), &text).map_err(runtime)?;
    write_config(&dir, &hash, "cluster", &cfg, &inputs)?;
    cx.say(format!("config {hash}"))?;
    cx.say(text.lines().skip(1).collect::<Vec<_>>().join("\n"))?;
    cx.say(format!("wrote {}", dir.display()))
}

fn cmd_place(a: &PlaceArgs, cx: &mut Ctx) -> Result<(), CliError> {
    let cfg = resolve(
        &a.common,
        &[("disks", &a.disks), ("cache_ratio", &a.cache_ratio)],
        cx.env_seed.as_deref(),
    )?;
    single_disk(&cfg)?;
    let (trace, td) = load_trace(&a.trace)?;
    let (cs, cd) = load_clusters(&a.clusters)?;
    let inputs = BTreeMap::from([("clusters".to_string(), cd), ("trace".to_string(), td)]);
    let hash = config_hash("place", &cfg, &inputs);
    if cs.n_entries() != trace.initial_entries() as usize {
        return Err(runtime(experiment::RunError::Mismatch {
            clusters: cs.n_entries(),
            trace: trace.initial_entries() as usize,
        }));
    }
    let off = experiment::offline(&cfg, &trace).map_err(runtime)?;
    let (pm, dram) = experiment::place(&cfg, &trace, &cs, &off).map_err(runtime)?;
    let dir = out_dir(&a.common, "place", &hash)?;
    let stamp = [report::stamp(&hash)];
    let mut f = create(&dir.join("placement.kvplace"))?;
    formats::write_placement(&mut f, &pm, &stamp).map_err(runtime)?;
    f.flush().map_err(runtime)?;
    let mut g = create(&dir.join("dram.kvdram"))?;
    formats::write_dram(&mut g, &dram, &stamp).map_err(runtime)?;
    g.flush().map_err(runtime)?;
    write_config(&dir, &hash, "place", &cfg, &inputs)?;
    let fill: Vec<String> = pm.device_fill().iter().map(|x| x.to_string()).collect();
    cx.say(format!("config {hash}"))?;
    cx.say(format!(
        "{} devices, entries per device [{}], {} hot clusters",
        pm.n_disk(),
        fill.join(","),
        dram.hot_cache.len()
    ))?;
    cx.say(format!("wrote {}", dir.display()))
}

fn cmd_simulate(a: &SimulateArgs, cx: &mut Ctx) -> Result<(), CliError> {
    let cfg = resolve(
        &a.common,
        &[
            ("modes", &a.modes),
            ("disks", &a.disks),
            ("sparsity", &a.sparsity),
            ("cache_ratio", &a.cache_ratio),
        ],
        cx.env_seed.as_deref(),
    )?;
    let mut inputs = BTreeMap::new();
    let workloads = match &a.trace {
        Some(path) => {
            if a.sparsity.is_some() || cfg.sparsity.0.len() > 1 {
                return Err(CliError::Usage(
                    "sparsity sweeps need a generated workload; drop --trace".into(),
                ));
            }
            let (trace, td) = load_trace(path)?;
            inputs.insert("trace".to_string(), td);
            let cs = match &a.clusters {
                Some(p) => {
                    let (cs, cd) = load_clusters(p)?;
                    inputs.insert("clusters".to_string(), cd);
                    Some(cs)
                }
                None => None,
            };
            vec![Workload::prepare(&cfg, None, trace, cs).map_err(runtime)?]
        }
        None => Workload::generated(&cfg).map_err(runtime)?,
    };
    let hash = config_hash("simulate", &cfg, &inputs);
    let points = experiment::run_all(&cfg, &workloads).map_err(runtime)?;
    let dir = out_dir(&a.common, "simulate", &hash)?;
    report::write_run(&dir, &hash, &points).map_err(runtime)?;
    write_config(&dir, &hash, "simulate", &cfg, &inputs)?;
    if a.emit_plots {
        report::emit_plots(&dir).map_err(runtime)?;
    }
    cx.say(format!("config {hash}"))?;
    for p in &points {
        let s = &p.output.summary;
        cx.say(format!(
            "sparsity={} disks={} mode={:<10} mean_io_time_us={:.2} volume_bytes={} bw_bytes_per_s={:.3e}",
            p.sparsity.map_or("-".into(), |s| s.to_string()),
            p.disks,
            p.mode.name(),
            s.mean_io_time_us,
            s.total_io_volume_bytes,
            s.effective_bandwidth
        ))?;
    }
    cx.say(format!("wrote {}", dir.display()))
}

fn cmd_report(a: &ReportArgs, cx: &mut Ctx) -> Result<(), CliError> {
    if !a.run.is_dir() {
        return Err(CliError::Usage(format!(
            "{} is not a directory",
            a.run.display()
        )));
    }
    let text = report::report_dir(&a.run).map_err(runtime)?;
    fs::write(a.run.join("report.txt"), &text).map_err(runtime)?;
    if a.emit_plots {
        report::emit_plots(&a.run).map_err(runtime)?;
    }
    cx.out.write_all(text.as_bytes()).map_err(runtime)
}

/// Runs a parsed command, writing progress to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write, env_seed: Option<String>) -> Result<(), CliError> {
    let mut cx = Ctx { out, env_seed };
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, &mut cx),
        Command::Cluster(a) => cmd_cluster(a, &mut cx),
        Command::Place(a) => cmd_place(a, &mut cx),
        Command::Simulate(a) => cmd_simulate(a, &mut cx),
        Command::Report(a) => cmd_report(a, &mut cx),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("kvswarm").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn seed_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let cfgfile = dir.path().join("c.txt");
        fs::write(&cfgfile, "seed = 1\n").unwrap();
        let c = cfgfile.to_str().unwrap();
        let Command::Gen(a) = parse(&["gen", "--config", c]).command else {
            panic!()
        };
        assert_eq!(resolve(&a.common, &[], None).unwrap().seed, 1);
        assert_eq!(resolve(&a.common, &[], Some("9")).unwrap().seed, 9);
        let Command::Gen(a) = parse(&["gen", "--config", c, "--seed", "4"]).command else {
            panic!()
        };
        assert_eq!(resolve(&a.common, &[], Some("9")).unwrap().seed, 4);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let Command::Cluster(a) = parse(&["cluster", "--trace", "t", "--tau", "1.5"]).command
        else {
            panic!()
        };
        let err = resolve(&a.common, &[("tau", &a.tau)], None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let Command::Gen(a) = parse(&["gen", "--set", "colour=red"]).command else {
            panic!()
        };
        assert_eq!(resolve(&a.common, &[], None).unwrap_err().exit_code(), 2);
    }
}
