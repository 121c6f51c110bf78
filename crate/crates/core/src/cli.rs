//! Command-line pipeline: `simulate`, `margins`, `fit`, `evaluate`,
//! `bootstrap` and `export`. Every command writes its outputs plus a
//! `manifest.json` into `--out`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, DataMatrix};
use crate::dependence::{gamma_matrix, VariogramParams};
use crate::empirics::{
    cep_vs_distance, exceedance_cep, extract_exceedances, risks, ExceedanceOptions,
    ExceedanceSet, DEFAULT_MARGINAL_QUANTILE, DEFAULT_RISK_QUANTILE,
};
use crate::error::{Error, Result};
use crate::fit::{bootstrap, fit_exceedances, BootstrapConfig, BootstrapMode, FitConfig, FitResult, LossKind};
use crate::geometry::{unit_grid, LocationSet, Point};
use crate::loss::{write_loss_trace, GammaLoss, GsmLoss};
use crate::risk::RiskSpec;
use crate::simulate::{simulate, write_sidecar, SimConfig, DEFAULT_MAX_REJECTION_TRIES};
use crate::tailmargins::{SiteMargin, DEFAULT_THRESHOLD_QUANTILE};
use crate::warp::{injectivity_check, Architecture, WarpStack};

#[derive(Debug, Parser)]
#[command(name = "rpareto-warp", version, about = "Nonstationary spatial extremes with warped Brown–Resnick r-Pareto processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config file (or a preset name for `simulate`).
    #[arg(long, global = true)]
    pub config: Option<String>,
    /// Master seed; overrides any seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Gsm,
    Wls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    FixedWarping,
    ReestimatedWarping,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an r-Pareto process.
    Simulate,
    /// Fit GPD tails per site and transform to the standard Pareto scale.
    Margins {
        /// Long CSV `site_id,time,value`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Fit a warped Brown–Resnick model.
    Fit {
        /// Wide CSV on the Pareto scale, one column per site.
        #[arg(long)]
        data: PathBuf,
        /// Sites CSV `id,x,y`.
        #[arg(long)]
        sites: PathBuf,
        #[arg(long)]
        architecture: Option<String>,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
    },
    /// Score a fit on held-out sites.
    Evaluate {
        /// Output directory of `fit`.
        #[arg(long)]
        fit: PathBuf,
        /// Test data (defaults to the data used for fitting).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Bootstrap a fit over its exceedance events.
    Bootstrap {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long, default_value_t = 30)]
        replicates: usize,
        #[arg(long, value_enum, default_value = "fixed-warping")]
        mode: ModeArg,
    },
    /// Warped image of a regular grid with an injectivity report.
    Export {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Margins { .. } => "margins",
            Command::Fit { .. } => "fit",
            Command::Evaluate { .. } => "evaluate",
            Command::Bootstrap { .. } => "bootstrap",
            Command::Export { .. } => "export",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub inputs: Vec<InputDigest>,
    pub seed: u64,
    pub version: String,
    pub wall_clock_seconds: f64,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_file(path: &Path) -> Result<InputDigest> {
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&std::fs::read(path)?),
    })
}

/// Deserializes JSON, reporting the JSON pointer of the offending field.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        use serde_path_to_error::Segment;
        let pointer = e
            .path()
            .iter()
            .filter_map(|seg| match seg {
                Segment::Seq { index } => Some(format!("/{index}")),
                Segment::Map { key } => Some(format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
                Segment::Enum { variant } => Some(format!("/{variant}")),
                Segment::Unknown => None,
            })
            .collect();
        Error::Config {
            pointer,
            message: e.into_inner().to_string(),
        }
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Where simulated sites come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SiteSource {
    /// `n x n` regular grid on `[-0.5, 0.5]^2`.
    Grid(usize),
    /// `n` uniform sites on `[-0.5, 0.5]^2`.
    Random(usize),
    /// Sites CSV `id,x,y`.
    File(PathBuf),
}

fn default_psi() -> VariogramParams {
    VariogramParams {
        range: 0.2,
        smoothness: 1.0,
    }
}

fn default_n() -> usize {
    5000
}

fn default_tries() -> u64 {
    DEFAULT_MAX_REJECTION_TRIES
}

/// `simulate` config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub sites: SiteSource,
    #[serde(default = "default_psi")]
    pub psi: VariogramParams,
    /// Architecture of a randomly drawn truth.
    #[serde(default)]
    pub truth: Option<Architecture>,
    /// Explicit truth; takes precedence over `truth`.
    #[serde(default)]
    pub truth_stack: Option<WarpStack>,
    pub risk: RiskSpec,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tries")]
    pub max_rejection_tries: u64,
}

impl SimulateConfig {
    /// `table1-archK`: 200 random sites, `ψ = (0.2, 1)`, sum risk, 5000
    /// replicates, a random Architecture `K` truth.
    pub fn preset(name: &str) -> Result<Self> {
        let arch = Architecture::named(name)?;
        Ok(Self {
            sites: SiteSource::Random(200),
            psi: default_psi(),
            truth: (!arch.units.is_empty()).then_some(arch),
            truth_stack: None,
            risk: RiskSpec::Sum,
            n: default_n(),
            seed: 0,
            max_rejection_tries: DEFAULT_MAX_REJECTION_TRIES,
        })
    }
}

/// `margins` config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginsConfig {
    pub threshold_quantile: f64,
}

impl Default for MarginsConfig {
    fn default() -> Self {
        Self {
            threshold_quantile: DEFAULT_THRESHOLD_QUANTILE,
        }
    }
}

/// `fit` config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitFileConfig {
    pub architecture: Architecture,
    pub risk: RiskSpec,
    pub q_risk: f64,
    pub q_marginal: f64,
    /// Number of training sites drawn at random; `None` trains on all.
    pub n_train: Option<usize>,
    pub exceedances: ExceedanceOptions,
    pub fit: FitConfig,
}

impl Default for FitFileConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture { units: Vec::new() },
            risk: RiskSpec::Sum,
            q_risk: DEFAULT_RISK_QUANTILE,
            q_marginal: DEFAULT_MARGINAL_QUANTILE,
            n_train: None,
            exceedances: ExceedanceOptions::default(),
            fit: FitConfig::default(),
        }
    }
}

/// Everything `evaluate`, `bootstrap` and `export` need from a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRun {
    pub config: FitFileConfig,
    pub data: PathBuf,
    pub sites: PathBuf,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub result: FitResult,
}

pub const FIT_RUN_FILE: &str = "fit.json";

struct Ctx {
    out: PathBuf,
    seed: u64,
    config_text: String,
    inputs: Vec<InputDigest>,
    extra: serde_json::Map<String, serde_json::Value>,
}

impl Ctx {
    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // A second call in the same process keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    std::fs::create_dir_all(&cli.out)?;
    let start = Instant::now();
    let mut ctx = Ctx {
        out: cli.out.clone(),
        seed: cli.seed.unwrap_or(0),
        config_text: String::new(),
        inputs: Vec::new(),
        extra: serde_json::Map::new(),
    };
    if let Some(cfg) = &cli.config {
        let path = Path::new(cfg);
        if path.exists() {
            ctx.config_text = std::fs::read_to_string(path)?;
            ctx.input(path)?;
        } else if matches!(cli.command, Command::Simulate) {
            ctx.config_text = serde_json::to_string(&SimulateConfig::preset(cfg)?)?;
        } else {
            return Err(Error::invalid(format!("config file `{cfg}` not found")));
        }
    }
    match &cli.command {
        Command::Simulate => cmd_simulate(&mut ctx, cli.seed)?,
        Command::Margins { input } => cmd_margins(&mut ctx, input)?,
        Command::Fit {
            data,
            sites,
            architecture,
            loss,
        } => cmd_fit(&mut ctx, cli.seed, data, sites, architecture.as_deref(), *loss)?,
        Command::Evaluate { fit, data } => cmd_evaluate(&mut ctx, fit, data.as_deref())?,
        Command::Bootstrap { fit, replicates, mode } => cmd_bootstrap(&mut ctx, fit, *replicates, *mode)?,
        Command::Export { fit, grid } => cmd_export(&mut ctx, fit, *grid)?,
    }
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        config_sha256: sha256_hex(ctx.config_text.as_bytes()),
        inputs: ctx.inputs,
        seed: ctx.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        extra: ctx.extra,
    };
    write_json(&cli.out.join("manifest.json"), &manifest)
}

fn site_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

fn cmd_simulate(ctx: &mut Ctx, seed: Option<u64>) -> Result<()> {
    if ctx.config_text.is_empty() {
        return Err(Error::invalid("simulate needs --config (a file or a preset such as table1-arch3)"));
    }
    let mut cfg: SimulateConfig = parse_config(&ctx.config_text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    ctx.seed = cfg.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sites = match &cfg.sites {
        SiteSource::Grid(n) => LocationSet::new(unit_grid(*n))?,
        SiteSource::Random(n) => LocationSet::new(
            (0..*n)
                .map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
                .collect(),
        )?,
        SiteSource::File(p) => {
            ctx.input(p)?;
            data::read_sites_csv(p)?
        }
    };
    let sites = match sites.labels() {
        Some(_) => sites,
        None => {
            let n = sites.len();
            sites.with_labels(site_ids(n))?
        }
    };
    let truth = match (&cfg.truth_stack, &cfg.truth) {
        (Some(s), _) => Some(s.clone()),
        (None, Some(a)) => Some(a.random(&mut rng)?),
        (None, None) => None,
    };
    let sim = SimConfig {
        sites: sites.clone(),
        psi: cfg.psi,
        truth,
        risk: cfg.risk,
        n: cfg.n,
        seed: cfg.seed,
        max_rejection_tries: cfg.max_rejection_tries,
    };
    sim.validate().map_err(|e| Error::Config {
        pointer: String::new(),
        message: e.to_string(),
    })?;
    let out = simulate(&sim)?;
    let ids: Vec<String> = (0..sites.len()).map(|i| sites.label(i)).collect();
    data::write_wide_csv(ctx.path("data.csv"), &ids, &out.data)?;
    data::write_sites_csv(ctx.path("sites.csv"), &sites, Some(&sim.warped_sites()?))?;
    write_sidecar(ctx.path("simulation.json"), &sim, &out)?;
    ctx.extra.insert("acceptance_rate".into(), out.acceptance_rate.into());
    Ok(())
}

#[derive(Debug, Serialize)]
struct GpdRow {
    site_id: String,
    u: f64,
    tau: f64,
    xi: f64,
    ks_dist: f64,
    ks_p: f64,
}

#[derive(Debug, Serialize)]
struct MarginsSummary {
    n_sites: usize,
    failed: Vec<(String, String)>,
    ks_rejections_5pct: usize,
    /// Mean fitted shape, the `β` of the modified sum functional.
    beta: Option<f64>,
}

fn cmd_margins(ctx: &mut Ctx, input: &Path) -> Result<()> {
    ctx.input(input)?;
    let cfg: MarginsConfig = if ctx.config_text.is_empty() {
        MarginsConfig::default()
    } else {
        parse_config(&ctx.config_text)?
    };
    let groups = data::group_by_site(&data::read_long_csv(input)?);
    if groups.is_empty() {
        return Err(Error::invalid("no observations"));
    }
    let times: Vec<String> = groups[0].1.iter().map(|(t, _)| t.clone()).collect();
    for (site, series) in &groups {
        let ok = series.len() == times.len() && series.iter().zip(&times).all(|((t, _), u)| t == u);
        if !ok {
            return Err(Error::invalid(format!(
                "site `{site}` does not share the time index of `{}`",
                groups[0].0
            )));
        }
    }
    let fits: Vec<_> = groups
        .par_iter()
        .map(|(_, series)| {
            let values: Vec<f64> = series.iter().map(|(_, v)| *v).collect();
            SiteMargin::fit(&values, cfg.threshold_quantile)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let mut columns = Vec::new();
    for ((site, series), fit) in groups.iter().zip(fits) {
        let margin = match fit {
            Ok(m) => {
                let f = m.fit.as_ref().unwrap();
                rows.push(GpdRow {
                    site_id: site.clone(),
                    u: m.threshold,
                    tau: f.tau,
                    xi: f.xi,
                    ks_dist: f.ks_distance,
                    ks_p: f.ks_p_value,
                });
                m
            }
            Err((m, e)) => {
                failed.push((site.clone(), e.to_string()));
                m
            }
        };
        let values: Vec<f64> = series.iter().map(|(_, v)| *v).collect();
        columns.push(margin.to_pareto_scale(&values));
    }
    let mut w = csv::Writer::from_path(ctx.path("gpd.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let n = times.len();
    let mut flat = Vec::with_capacity(n * columns.len());
    for t in 0..n {
        flat.extend(columns.iter().map(|c| c[t]));
    }
    let ids: Vec<String> = groups.iter().map(|(s, _)| s.clone()).collect();
    data::write_wide_csv(ctx.path("pareto.csv"), &ids, &DataMatrix::new(ids.len(), flat)?)?;
    let summary = MarginsSummary {
        n_sites: groups.len(),
        ks_rejections_5pct: rows.iter().filter(|r| r.ks_p < 0.05).count(),
        beta: (!rows.is_empty()).then(|| rows.iter().map(|r| r.xi).sum::<f64>() / rows.len() as f64),
        failed,
    };
    for (site, e) in &summary.failed {
        eprintln!("warning: site `{site}` kept on the empirical scale: {e}");
    }
    write_json(&ctx.path("margins.json"), &summary)
}

/// Reads data and sites and aligns data columns to the site order.
fn load_aligned(data_path: &Path, sites_path: &Path) -> Result<(LocationSet, DataMatrix)> {
    let (header, x) = data::read_wide_csv(data_path)?;
    let sites = data::read_sites_csv(sites_path)?;
    if header.len() != sites.len() {
        return Err(Error::invalid(format!(
            "data has {} columns but there are {} sites",
            header.len(),
            sites.len()
        )));
    }
    let idx = (0..sites.len())
        .map(|i| {
            let id = sites.label(i);
            header
                .iter()
                .position(|h| *h == id)
                .ok_or_else(|| Error::invalid(format!("site `{id}` has no data column")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sites, x.select_columns(&idx)))
}

fn indices_of(sites: &LocationSet, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            (0..sites.len())
                .find(|&i| sites.label(i) == *id)
                .ok_or_else(|| Error::invalid(format!("unknown site `{id}`")))
        })
        .collect()
}

fn cmd_fit(
    ctx: &mut Ctx,
    seed: Option<u64>,
    data_path: &Path,
    sites_path: &Path,
    architecture: Option<&str>,
    loss: Option<LossArg>,
) -> Result<()> {
    ctx.input(data_path)?;
    ctx.input(sites_path)?;
    let mut cfg: FitFileConfig = if ctx.config_text.is_empty() {
        FitFileConfig::default()
    } else {
        parse_config(&ctx.config_text)?
    };
    if let Some(a) = architecture {
        cfg.architecture = Architecture::named(a)?;
    }
    if let Some(l) = loss {
        cfg.fit.loss = match l {
            LossArg::Gsm => LossKind::Gsm,
            LossArg::Wls => LossKind::Wls,
        };
    }
    if let Some(s) = seed {
        cfg.fit.seed = s;
    }
    ctx.seed = cfg.fit.seed;
    cfg.architecture.validate()?;
    let (sites, x) = load_aligned(data_path, sites_path)?;
    let d = sites.len();
    let mut order: Vec<usize> = (0..d).collect();
    let n_train = cfg.n_train.unwrap_or(d);
    if n_train < 2 || n_train > d {
        return Err(Error::Config {
            pointer: "/n_train".into(),
            message: format!("must lie in [2, {d}], got {n_train}"),
        });
    }
    if n_train < d {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.fit.seed ^ 0x5eed));
    }
    let (train_idx, test_idx) = order.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train_sites = sites.select(&train_idx)?;
    cfg.risk.validate(train_idx.len()).map_err(|e| Error::Config {
        pointer: "/risk".into(),
        message: e.to_string(),
    })?;
    let set = extract_exceedances(&x.select_columns(&train_idx), &cfg.risk, cfg.q_risk, cfg.q_marginal, &cfg.exceedances)?;
    let result = fit_exceedances(&train_sites, &set, &cfg.architecture, &cfg.fit)?;
    write_loss_trace(ctx.path("loss_trace.csv"), &result.trace)?;
    data::write_sites_csv(ctx.path("warped.csv"), &train_sites, Some(&result.warped))?;
    let label = |i: &usize| sites.label(*i);
    let run = FitRun {
        config: cfg,
        data: std::fs::canonicalize(data_path)?,
        sites: std::fs::canonicalize(sites_path)?,
        train: train_idx.iter().map(label).collect(),
        test: test_idx.iter().map(label).collect(),
        result,
    };
    write_json(&ctx.path(FIT_RUN_FILE), &run)
}

fn load_run(ctx: &mut Ctx, dir: &Path) -> Result<FitRun> {
    let path = dir.join(FIT_RUN_FILE);
    ctx.input(&path)?;
    let run: FitRun = read_json(&path)?;
    ctx.seed = run.config.fit.seed;
    Ok(run)
}

/// Training exceedances of a fit, recomputed from its inputs.
fn training_events(run: &FitRun) -> Result<(LocationSet, DataMatrix, ExceedanceSet)> {
    let (sites, x) = load_aligned(&run.data, &run.sites)?;
    let idx = indices_of(&sites, &run.train)?;
    let c = &run.config;
    let set = extract_exceedances(&x.select_columns(&idx), &c.risk, c.q_risk, c.q_marginal, &c.exceedances)?;
    Ok((sites, x, set))
}

#[derive(Debug, Serialize)]
struct Metrics {
    n_test_sites: usize,
    n_test_events: usize,
    /// Sum of squared CEP errors over test pairs.
    se: f64,
    /// Gradient-score loss on test events.
    gs: f64,
    concentration_original: Option<f64>,
    concentration_warped: Option<f64>,
}

fn cmd_evaluate(ctx: &mut Ctx, dir: &Path, data_path: Option<&Path>) -> Result<()> {
    let run = load_run(ctx, dir)?;
    if run.test.len() < 2 {
        return Err(Error::invalid("the fit has fewer than 2 held-out test sites"));
    }
    let (sites, mut x, train_set) = training_events(&run)?;
    if let Some(p) = data_path {
        ctx.input(p)?;
        x = load_aligned(p, &run.sites)?.1;
    }
    let train_idx = indices_of(&sites, &run.train)?;
    let test_idx = indices_of(&sites, &run.test)?;
    let test_sites = sites.select(&test_idx)?;
    let c = &run.config;
    // Test events are the rows whose training-site risk exceeds the
    // training threshold; both thresholds are reused unchanged.
    let r = risks(&x.select_columns(&train_idx), &c.risk)?;
    let keep: Vec<usize> = (0..r.len()).filter(|&t| r[t] >= train_set.u).collect();
    if keep.is_empty() {
        return Err(Error::invalid("no rows exceed the training risk threshold"));
    }
    let test_set = ExceedanceSet {
        z: x.select_columns(&test_idx).select_rows(&keep).scaled(1.0 / train_set.u),
        rows: keep.clone(),
        n_total: r.len(),
        ..train_set.clone()
    };
    let res = &run.result;
    let warped = res.warp(test_sites.coords())?;
    let model = res.model_cep(&warped);
    let cep = exceedance_cep(&test_set);
    let se: f64 = cep.pairs().map(|(i, j, p)| (p - model[(i, j)]).powi(2)).sum();
    let r_events: Vec<f64> = keep.iter().map(|&t| r[t] / train_set.u).collect();
    let gsm = GsmLoss::from_risks(&test_set.z, &r_events)?;
    let gs = gsm.value(&gamma_matrix(&warped, &res.psi))?;
    let original: Vec<Point> = test_sites.coords().iter().map(|&p| res.records[0].apply(p)).collect();
    let t_orig = cep_vs_distance(&cep, &original, Some(&res.psi))?;
    let t_warp = cep_vs_distance(&cep, &warped, Some(&res.psi))?;
    t_orig.write_csv(ctx.path("cep_original.csv"))?;
    t_warp.write_csv(ctx.path("cep_warped.csv"))?;
    write_json(
        &ctx.path("metrics.json"),
        &Metrics {
            n_test_sites: test_idx.len(),
            n_test_events: keep.len(),
            se,
            gs,
            concentration_original: t_orig.concentration,
            concentration_warped: t_warp.concentration,
        },
    )
}

fn cmd_bootstrap(ctx: &mut Ctx, dir: &Path, replicates: usize, mode: ModeArg) -> Result<()> {
    let run = load_run(ctx, dir)?;
    let (sites, _, set) = training_events(&run)?;
    let train = sites.select(&indices_of(&sites, &run.train)?)?;
    let mode = match mode {
        ModeArg::FixedWarping => BootstrapMode::FixedWarping,
        ModeArg::ReestimatedWarping => BootstrapMode::ReestimatedWarping,
    };
    let bcfg = BootstrapConfig {
        replicates,
        mode,
        seed: ctx.seed,
        identical_resamples: false,
    };
    let result = bootstrap(&train, &set, &run.result, &run.config.fit, &bcfg)?;
    ctx.extra.insert("mode".into(), serde_json::to_value(mode)?);
    ctx.extra.insert("replicates".into(), replicates.into());
    result.write_cep_sd_csv(ctx.path("cep_sd.csv"))?;
    write_json(&ctx.path("bootstrap.json"), &result)
}

#[derive(Debug, Serialize)]
struct GridRow {
    x: f64,
    y: f64,
    wx: f64,
    wy: f64,
    det: f64,
}

fn cmd_export(ctx: &mut Ctx, dir: &Path, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("the export grid needs at least 2 points per side"));
    }
    let run = load_run(ctx, dir)?;
    let res = &run.result;
    // The grid spans the training domain in original coordinates.
    let grid: Vec<Point> = unit_grid(n).iter().map(|&p| res.records[0].invert(p)).collect();
    let warped = res.warp(&grid)?;
    let (_, dets) = res.stack.forward_with_jacobians(&grid)?;
    let mut w = csv::Writer::from_path(ctx.path("warped_grid.csv"))?;
    for ((p, q), det) in grid.iter().zip(&warped).zip(&dets) {
        w.serialize(GridRow {
            x: p[0],
            y: p[1],
            wx: q[0],
            wy: q[1],
            det: *det,
        })?;
    }
    w.flush()?;
    let report = injectivity_check(&res.stack, &grid, 0.0);
    write_json(&ctx.path("injectivity.json"), &report)
}
