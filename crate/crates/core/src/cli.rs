//! Command-line front end.
//!
//! Settings resolve as built-in defaults, then the `--config` TOML file, then
//! explicit flags. Every output file starts with the resolved settings.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::engine::{
    lagrangian_gap, run, write_trace, GammaSpec, LinkFailure, RunConfig, SaddleReference, Variant,
};
use crate::error::{Error, Result};
use crate::graph::ClusterGraph;
use crate::harness::{evaluate, sweep, write_sweep_files, SweepAxis, SweepSpec};
use crate::model::{generate_measurements, Scenario};
use crate::subsolver::BarrierSettings;

/// Default noise level of the built-in reference scenario.
pub const DEFAULT_SIGMA: f64 = 0.05;
/// Iterations of the Gauss-Seidel run that stands in for the saddle point.
pub const GAP_REFERENCE_ITERATIONS: usize = 2000;
pub const GAP_REFERENCE_RHO: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "clusterloc", version, about = "Distributed cluster-based range localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one variant on one noise draw and write the iteration trace.
    Run(RunArgs),
    /// Monte-Carlo sweep over rho, sigma or iteration count.
    Sweep(SweepArgs),
    /// Check a scenario file and report its topology.
    Validate(ScenarioArgs),
    /// Print alpha_max and the proximal coefficients for a scenario.
    Gamma(ScenarioArgs),
    /// Monte-Carlo accuracy summary of every variant.
    Report(ReportArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ScenarioArgs {
    /// Scenario TOML; the built-in reference scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Override every sensor's sigma.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Run-settings TOML.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// `auto`, a single value, or one value per cluster separated by commas.
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Noise seed (single run) or base seed (Monte-Carlo).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Link outages as `i-j@first:last`, comma separated.
    #[arg(long = "fail-edges", value_delimiter = ',')]
    pub fail_edges: Vec<String>,
    /// Solve independent subproblems and trials on the thread pool.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub variant: Option<String>,
    /// Trace file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fill the lagrangian_gap column against a long reference run.
    #[arg(long)]
    pub gap: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Comma-separated variants; all four when omitted.
    #[arg(long, value_delimiter = ',')]
    pub variant: Vec<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    pub variant: Vec<String>,
    #[arg(long)]
    pub trials: Option<usize>,
}

/// Contents of a `--config` file; all keys optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub variant: Option<Variant>,
    pub rho: Option<f64>,
    pub gamma: Option<GammaSpec>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub sigma: Option<f64>,
    pub parallel: Option<bool>,
    pub failures: Option<Vec<LinkFailure>>,
    pub barrier: Option<BarrierSettings>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub scenario_source: String,
    pub config: RunConfig,
    pub seed: u64,
    pub trials: usize,
}

impl Resolved {
    /// `(key, value)` pairs written at the top of every output.
    pub fn header(&self, gammas: Option<&[f64]>) -> Vec<(String, String)> {
        let c = &self.config;
        let b = &c.barrier;
        let failures: Vec<String> = c.failures.iter().map(|f| f.to_string()).collect();
        let mut h = vec![
            ("scenario", self.scenario_source.clone()),
            ("clusters", self.scenario.cluster_count().to_string()),
            ("dimension", self.scenario.dimension.to_string()),
            ("variant", c.variant.to_string()),
            ("rho", c.rho.to_string()),
            ("gamma", c.gamma.to_string()),
            ("iterations", c.iterations.to_string()),
            ("seed", self.seed.to_string()),
            ("trials", self.trials.to_string()),
            ("failures", failures.join(",")),
            ("barrier.mu0", b.mu0.to_string()),
            ("barrier.mu_shrink", b.mu_shrink.to_string()),
            ("barrier.mu_min", b.mu_min.to_string()),
            ("barrier.newton_tol", b.newton_tol.to_string()),
            ("barrier.max_newton", b.max_newton.to_string()),
            ("barrier.armijo", b.armijo.to_string()),
            ("barrier.backtrack", b.backtrack.to_string()),
        ];
        if let Some(g) = gammas {
            let parts: Vec<String> = g.iter().map(|v| v.to_string()).collect();
            h.push(("gamma_resolved", parts.join(",")));
        }
        h.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

fn load_scenario(args: &ScenarioArgs, file_sigma: Option<f64>) -> Result<(Scenario, String)> {
    let sigma = args.sigma.or(file_sigma);
    let (scenario, source) = match &args.scenario {
        Some(p) => (Scenario::load(p)?, p.display().to_string()),
        None => (Scenario::reference(sigma.unwrap_or(DEFAULT_SIGMA)), "reference".to_string()),
    };
    let scenario = match sigma {
        Some(s) => scenario.with_uniform_sigma(s),
        None => scenario,
    };
    scenario.validate()?;
    Ok((scenario, source))
}

fn parse_gamma(s: &str) -> Result<GammaSpec> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(GammaSpec::auto());
    }
    let vals = s
        .split([',', ';'])
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad gamma value '{v}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(match vals.as_slice() {
        [g] => GammaSpec::Uniform(*g),
        _ => GammaSpec::PerCluster(vals),
    })
}

fn resolve(common: &CommonArgs, variant: Option<&str>) -> Result<Resolved> {
    let file = match &common.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let (scenario, scenario_source) = load_scenario(&common.scenario, file.sigma)?;
    let defaults = RunConfig::default();
    let mut failures = file.failures.unwrap_or_default();
    for f in &common.fail_edges {
        failures.push(f.parse()?);
    }
    let gamma = match &common.gamma {
        Some(s) => parse_gamma(s)?,
        None => file.gamma.unwrap_or(defaults.gamma),
    };
    let config = RunConfig {
        variant: match variant {
            Some(v) => v.parse()?,
            None => file.variant.unwrap_or(defaults.variant),
        },
        rho: common.rho.or(file.rho).unwrap_or(defaults.rho),
        gamma,
        iterations: common.iterations.or(file.iterations).unwrap_or(defaults.iterations),
        barrier: file.barrier.unwrap_or(defaults.barrier),
        failures,
        parallel: common.parallel || file.parallel.unwrap_or(false),
    };
    config.validate()?;
    Ok(Resolved {
        seed: common.seed.or(file.seed).unwrap_or(scenario.seed),
        trials: file.trials.unwrap_or(100),
        scenario,
        scenario_source,
        config,
    })
}

fn parse_variants(list: &[String]) -> Result<Vec<Variant>> {
    if list.is_empty() {
        return Ok(Variant::ALL.to_vec());
    }
    list.iter().map(|v| v.parse()).collect()
}

/// Parse `args` (including the program name) and execute, writing
/// human-readable output to `out`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(cli, out)
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(args, out),
        Command::Sweep(args) => cmd_sweep(args, out),
        Command::Validate(args) => cmd_validate(args, out),
        Command::Gamma(args) => cmd_gamma(args, out),
        Command::Report(args) => cmd_report(args, out),
    }
}

fn cmd_run(args: RunArgs, out: &mut dyn Write) -> Result<()> {
    let resolved = resolve(&args.common, args.variant.as_deref())?;
    let meas = generate_measurements(&resolved.scenario, resolved.seed)?;
    let record = run(&resolved.scenario, &meas, &resolved.config)?;
    let gaps = if args.gap {
        let reference_cfg = RunConfig {
            variant: Variant::Gs,
            rho: GAP_REFERENCE_RHO,
            iterations: GAP_REFERENCE_ITERATIONS,
            failures: Vec::new(),
            ..resolved.config.clone()
        };
        let reference = run(&resolved.scenario, &meas, &reference_cfg)?;
        Some(lagrangian_gap(&record, &SaddleReference::from_record(&reference))?)
    } else {
        None
    };
    let header = resolved.header(Some(&record.gammas));
    match &args.out {
        Some(path) => {
            let file = std::io::BufWriter::new(std::fs::File::create(path)?);
            write_trace(file, &record, &header, gaps.as_ref())?;
            writeln!(out, "wrote {}", path.display())?;
        }
        None => write_trace(&mut *out, &record, &header, gaps.as_ref())?,
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let mut resolved = resolve(&args.common, None)?;
    if let Some(t) = args.trials {
        resolved.trials = t;
    }
    let spec = SweepSpec {
        axis: args.axis.parse::<SweepAxis>()?,
        values: args.values.clone(),
        variants: parse_variants(&args.variant)?,
        trials: resolved.trials,
        base_seed: resolved.seed,
        parallel: resolved.config.parallel,
    };
    let rows = sweep(&resolved.scenario, &resolved.config, &spec)?;
    std::fs::create_dir_all(&args.out)?;
    let mut settings = std::fs::File::create(args.out.join(format!("sweep_{}.settings", spec.axis)))?;
    for (k, v) in resolved.header(None) {
        writeln!(settings, "{k} = {v}")?;
    }
    for path in write_sweep_files(&args.out, &rows)? {
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}

fn cmd_validate(args: ScenarioArgs, out: &mut dyn Write) -> Result<()> {
    let (scenario, source) = load_scenario(&args, None)?;
    let graph = ClusterGraph::from_one_based(scenario.cluster_count(), &scenario.edges)?;
    let conn = graph.check_connected();
    writeln!(out, "scenario {source}: valid")?;
    writeln!(
        out,
        "dimension {}, {} clusters, {} sensors, {} links",
        scenario.dimension,
        scenario.cluster_count(),
        scenario.sensor_count(),
        graph.edges().len()
    )?;
    let comps: Vec<String> = conn
        .components
        .iter()
        .map(|c| {
            let ids: Vec<String> = c.iter().map(|i| (i + 1).to_string()).collect();
            format!("{{{}}}", ids.join(","))
        })
        .collect();
    writeln!(
        out,
        "connected: {} (components {})",
        if conn.connected { "yes" } else { "no" },
        comps.join(" ")
    )?;
    Ok(())
}

fn cmd_gamma(args: ScenarioArgs, out: &mut dyn Write) -> Result<()> {
    let (scenario, _) = load_scenario(&args, None)?;
    let graph = ClusterGraph::from_one_based(scenario.cluster_count(), &scenario.edges)?;
    writeln!(out, "alpha_max = {}", graph.alpha_max()?)?;
    for (i, g) in crate::engine::select_gamma(&graph)?.iter().enumerate() {
        writeln!(out, "cluster {}: degree {}, gamma {g}", i + 1, graph.degree(i))?;
    }
    Ok(())
}

fn cmd_report(args: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let mut resolved = resolve(&args.common, None)?;
    if let Some(t) = args.trials {
        resolved.trials = t;
    }
    for (k, v) in resolved.header(None) {
        writeln!(out, "# {k} = {v}")?;
    }
    writeln!(out, "variant,cluster,err_rmse,inc_rmse,trials,excluded")?;
    for variant in parse_variants(&args.variant)? {
        let mut cfg = resolved.config.clone();
        cfg.variant = variant;
        let r = evaluate(&resolved.scenario, &cfg, resolved.trials, resolved.seed, cfg.parallel)?;
        for (i, e) in r.err_rmse.iter().enumerate() {
            writeln!(out, "{variant},{},{e},{},{},{}", i + 1, r.inc_rmse, r.trials, r.excluded)?;
        }
    }
    Ok(())
}
