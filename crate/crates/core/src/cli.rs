//! Command-line front end: argument and config parsing, dispatch to the
//! analysis modules, and report/CSV emission.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::binomial::{self, TruncatedBetaPrior};
use crate::bma;
use crate::data::{self, Cells, FlipDataset, IngestOptions, Unit};
use crate::hier::{self, glmm, sites, HeterogeneityTransform, LocationPrior, ModelSpec, PriorSet, ScalePrior};
use crate::learning::{self, LearningPriors};
use crate::mcmc::{Estimate, PosteriorDraws, Settings, RHAT_LIMIT};
use crate::published;
use crate::sensitivity::{self, BffKind, FixedModes, HierTarget};
use crate::simulator::{self, GenerativeConfig, PopulationSpec};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 0.53;

#[derive(Debug, Parser)]
#[command(name = "coinflip", version, about = "Same-side bias analyses of coin-flip records")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Flip CSV file(s); repeat for several files.
    #[arg(long, global = true)]
    pub input: Vec<PathBuf>,
    /// Use the dataset rebuilt from the published per-person and per-coin tables.
    #[arg(long, global = true)]
    pub published: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Drop persons whose same-side proportion exceeds the threshold.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "0.53", value_name = "THRESHOLD")]
    pub exclude_outliers: Option<f64>,
    /// TOML file with prior overrides.
    #[arg(long, global = true)]
    pub priors: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Abort ingestion on the first protocol violation.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate flip files and report their structure.
    Ingest,
    /// Per-person or per-coin descriptive table.
    Describe {
        #[arg(long, value_enum, default_value = "person")]
        by: UnitArg,
    },
    /// Analytic binomial Bayes factors on pooled counts.
    TestBinomial {
        #[arg(long, value_enum, default_value = "both")]
        kind: KindArg,
    },
    /// Full hierarchical model under estimation priors.
    FitHier {
        #[arg(long, value_enum, default_value = "delta")]
        transform: TransformArg,
    },
    /// Sixteen-model comparison with inclusion Bayes factors.
    TestBma,
    /// Learning (toss-order) model.
    FitLearning {
        #[arg(long, default_value_t = learning::DEFAULT_BATCH_SIZE)]
        batch_size: usize,
        /// Value of t at the first flip of a person.
        #[arg(long, default_value_t = 0.0)]
        t_origin: f64,
    },
    /// Bayes factor function over normal-moment prior modes.
    Bff {
        #[arg(long, value_enum, default_value = "same-side")]
        target: TargetArg,
        /// Refit the hierarchical comparison at every grid point (slow).
        #[arg(long)]
        hier: bool,
        #[arg(long, default_value_t = 0.005)]
        grid_min: f64,
        #[arg(long, default_value_t = 0.08)]
        grid_max: f64,
        #[arg(long, default_value_t = sensitivity::DEFAULT_GRID_POINTS)]
        grid_points: usize,
    },
    /// Site contrasts on the same-side bias.
    Sites {
        #[arg(long, default_value_t = sites::DEFAULT_PRIOR_SD)]
        prior_sd: f64,
    },
    /// Exact binomial tests and the random-intercept logistic mixed model.
    Freq,
    /// Simulate a flip campaign from the `[simulate]` config section.
    Simulate,
    /// Parameter recovery over simulated replicates (`[recover]` section).
    Recover {
        #[arg(long)]
        replicates: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Describe { .. } => "describe",
            Command::TestBinomial { .. } => "test-binomial",
            Command::FitHier { .. } => "fit-hier",
            Command::TestBma => "test-bma",
            Command::FitLearning { .. } => "fit-learning",
            Command::Bff { .. } => "bff",
            Command::Sites { .. } => "sites",
            Command::Freq => "freq",
            Command::Simulate => "simulate",
            Command::Recover { .. } => "recover",
        }
    }

    fn stochastic(&self) -> bool {
        match self {
            Command::FitHier { .. }
            | Command::TestBma
            | Command::FitLearning { .. }
            | Command::Sites { .. }
            | Command::Simulate
            | Command::Recover { .. } => true,
            Command::Bff { hier, .. } => *hier,
            _ => false,
        }
    }

    fn needs_data(&self) -> bool {
        !matches!(self, Command::Simulate | Command::Recover { .. })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitArg {
    Person,
    Coin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    SameSide,
    HeadsTails,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformArg {
    Delta,
    Exact,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetArg {
    SameSide,
    HeadsTails,
    PersonHeterogeneity,
    CoinHeterogeneity,
}

/// Run configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub input: Vec<PathBuf>,
    #[serde(default)]
    pub published: bool,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub exclude_outliers: Option<f64>,
    pub priors: Option<PathBuf>,
    #[serde(default)]
    pub mcmc: McmcSection,
    pub simulate: Option<SimulateSection>,
    pub recover: Option<RecoverSection>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub iters: Option<usize>,
}

/// Either a population to draw units from or a fully specified campaign.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub population: Option<PopulationSpec>,
    pub campaign: Option<GenerativeConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoverModel {
    #[default]
    Hier,
    Learning,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverSection {
    pub population: PopulationSpec,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub model: RecoverModel,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_replicates() -> usize {
    20
}

fn default_batch_size() -> usize {
    learning::DEFAULT_BATCH_SIZE
}

/// Partial override of a hierarchical prior set.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorOverrides {
    pub alpha_mu: Option<LocationPrior>,
    pub beta_mu: Option<LocationPrior>,
    pub sigma_alpha: Option<ScalePrior>,
    pub sigma_beta: Option<ScalePrior>,
}

impl PriorOverrides {
    pub fn apply(&self, mut p: PriorSet) -> PriorSet {
        let base = p;
        p.alpha_mu = self.alpha_mu.unwrap_or(base.alpha_mu);
        p.beta_mu = self.beta_mu.unwrap_or(base.beta_mu);
        p.sigma_alpha = self.sigma_alpha.unwrap_or(base.sigma_alpha);
        p.sigma_beta = self.sigma_beta.unwrap_or(base.sigma_beta);
        if *self != PriorOverrides::default() {
            p.kind = hier::PriorKind::Custom;
        }
        p
    }
}

impl PartialEq for PriorOverrides {
    fn eq(&self, o: &Self) -> bool {
        self.alpha_mu == o.alpha_mu
            && self.beta_mu == o.beta_mu
            && self.sigma_alpha == o.sigma_alpha
            && self.sigma_beta == o.sigma_beta
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinomialPriors {
    #[serde(default = "default_same_side_prior")]
    pub same_side: TruncatedBetaPrior,
    #[serde(default = "default_heads_tails_shape")]
    pub heads_tails: [f64; 2],
}

fn default_same_side_prior() -> TruncatedBetaPrior {
    TruncatedBetaPrior::same_side()
}

fn default_heads_tails_shape() -> [f64; 2] {
    [5000.0, 5000.0]
}

impl Default for BinomialPriors {
    fn default() -> Self {
        BinomialPriors { same_side: default_same_side_prior(), heads_tails: default_heads_tails_shape() }
    }
}

/// Contents of a `--priors` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsFile {
    #[serde(default)]
    pub binomial: BinomialPriors,
    #[serde(default)]
    pub estimation: PriorOverrides,
    #[serde(default)]
    pub testing: PriorOverrides,
    #[serde(default)]
    pub learning: LearningPriors,
    #[serde(default)]
    pub fixed_modes: Option<FixedModesConfig>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedModesConfig {
    pub phi_beta: f64,
    pub phi_alpha: f64,
    pub phi_sigma_beta: f64,
    pub phi_sigma_alpha: f64,
}

/// Everything an analysis depends on after merging the config file and
/// the command line. Its JSON form is what the config hash covers.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub command: String,
    pub options: Value,
    pub input: Vec<PathBuf>,
    pub published: bool,
    pub seed: Option<u64>,
    pub settings: Settings,
    pub exclude_outliers: Option<f64>,
    pub threads: Option<usize>,
    pub priors: PriorsFile,
    pub simulate: Option<SimulateSection>,
    pub recover: Option<RecoverSection>,
    #[serde(skip)]
    pub out: PathBuf,
}

/// Failure with the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Estimation(_) => EXIT_CONVERGENCE,
            _ => EXIT_VALIDATION,
        };
        CliError { code, message: e.to_string() }
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::from(Error::Config(format!("{}: {e}", path.display()))))
}

fn command_options(cmd: &Command) -> Value {
    match cmd {
        Command::Describe { by } => json!({ "by": by }),
        Command::TestBinomial { kind } => json!({ "kind": kind }),
        Command::FitHier { transform } => json!({ "transform": transform }),
        Command::FitLearning { batch_size, t_origin } => json!({ "batch_size": batch_size, "t_origin": t_origin }),
        Command::Bff { target, hier, grid_min, grid_max, grid_points } => json!({
            "target": target, "hier": hier, "grid_min": grid_min, "grid_max": grid_max, "grid_points": grid_points
        }),
        Command::Sites { prior_sd } => json!({ "prior_sd": prior_sd }),
        Command::Recover { replicates } => json!({ "replicates": replicates }),
        _ => json!({}),
    }
}

pub fn resolve(cli: &Cli) -> Result<Resolved, CliError> {
    let c = &cli.common;
    let cfg: RunConfig = match &c.config {
        Some(p) => read_toml(p)?,
        None => RunConfig::default(),
    };
    let priors_path = c.priors.clone().or(cfg.priors.clone());
    let priors: PriorsFile = match &priors_path {
        Some(p) => read_toml(p)?,
        None => PriorsFile::default(),
    };
    let defaults = Settings::default();
    let seed = c.seed.or(cfg.seed);
    if cli.command.stochastic() && seed.is_none() {
        return Err(CliError::usage(format!("{} needs --seed", cli.command.name())));
    }
    let settings = Settings {
        chains: c.chains.or(cfg.mcmc.chains).unwrap_or(defaults.chains),
        warmup: c.warmup.or(cfg.mcmc.warmup).unwrap_or(defaults.warmup),
        iters: c.iters.or(cfg.mcmc.iters).unwrap_or(defaults.iters),
        seed: seed.unwrap_or(0),
    };
    let input = if c.input.is_empty() { cfg.input.clone() } else { c.input.clone() };
    let published = c.published || cfg.published;
    if cli.command.needs_data() {
        if input.is_empty() && !published {
            return Err(CliError::usage("no input: pass --input <file> or --published"));
        }
        if let Some(missing) = input.iter().find(|p| !p.is_file()) {
            return Err(CliError::usage(format!("input not found: {}", missing.display())));
        }
    }
    let exclude_outliers = c.exclude_outliers.or(cfg.exclude_outliers);
    if let Some(t) = exclude_outliers {
        if !(t > 0.5 && t < 1.0) {
            return Err(Error::InvalidArgument(format!("outlier threshold {t} outside (0.5, 1)")).into());
        }
    }
    let mut recover = cfg.recover.clone();
    if let (Some(r), Command::Recover { replicates: Some(n) }) = (&mut recover, &cli.command) {
        r.replicates = *n;
    }
    Ok(Resolved {
        command: cli.command.name().to_string(),
        options: command_options(&cli.command),
        input,
        published,
        seed,
        settings,
        exclude_outliers,
        threads: c.threads.or(cfg.threads),
        priors,
        simulate: cfg.simulate.clone(),
        recover,
        out: c.out.clone().or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
    })
}

pub fn config_hash(r: &Resolved) -> String {
    let bytes = serde_json::to_vec(r).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// The data an analysis runs on, after optional outlier exclusion.
pub struct LoadedData {
    pub dataset: FlipDataset,
    pub source: String,
    pub excluded: Vec<String>,
    pub violations: usize,
}

pub fn load_data(r: &Resolved, strict: bool) -> Result<LoadedData> {
    let (dataset, source, violations) = if r.published {
        (published::reconstruct(published::DEFAULT_SEED)?, "published-tables".to_string(), 0)
    } else {
        let opts = IngestOptions { strict, ..Default::default() };
        let mut records = Vec::new();
        let mut violations = 0;
        for p in &r.input {
            let (d, rep) = data::ingest_path(p, &opts)?;
            violations += rep.violations.len();
            records.extend(d.records());
        }
        let names: Vec<String> = r.input.iter().map(|p| p.display().to_string()).collect();
        (FlipDataset::from_records(records)?, names.join(","), violations)
    };
    match r.exclude_outliers {
        Some(t) => {
            let ex = data::exclude_outliers(&dataset, t)?;
            Ok(LoadedData { dataset: ex.dataset, source, excluded: ex.excluded, violations })
        }
        None => Ok(LoadedData { dataset, source, excluded: Vec::new(), violations }),
    }
}

struct Outcome {
    result: Value,
    warnings: Vec<String>,
    artifacts: Vec<String>,
    converged: bool,
}

impl Outcome {
    fn new(result: Value) -> Self {
        Outcome { result, warnings: Vec::new(), artifacts: Vec::new(), converged: true }
    }
}

fn csv_out(out: &Path, name: &str, artifacts: &mut Vec<String>) -> Result<BufWriter<File>> {
    artifacts.push(name.to_string());
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn write_rows<W: std::io::Write>(w: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn estimate_row(name: &str, e: &Estimate) -> Vec<String> {
    vec![name.to_string(), e.mean.to_string(), e.sd.to_string(), e.ci95[0].to_string(), e.ci95[1].to_string()]
}

fn draws_table(draws: &PosteriorDraws) -> Vec<Vec<String>> {
    let d = &draws.diagnostics;
    draws
        .natural
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut row = estimate_row(name, &crate::mcmc::estimate(&draws.natural.pooled(j)));
            row.push(d.rhat.get(j).map_or(String::new(), |v| v.to_string()));
            row.push(d.ess_bulk.get(j).map_or(String::new(), |v| v.to_string()));
            row
        })
        .collect()
}

const DRAW_HEADER: [&str; 7] = ["parameter", "mean", "sd", "ci_low", "ci_high", "rhat", "ess_bulk"];

fn data_info(d: &LoadedData) -> Value {
    let cells = data::aggregate(&d.dataset);
    json!({
        "source": d.source,
        "flips": d.dataset.len(),
        "persons": d.dataset.persons().len(),
        "coins": d.dataset.coins().len(),
        "same_side": cells.n_same(),
        "heads": cells.n_heads(),
        "excluded_persons": d.excluded,
        "protocol_violations": d.violations,
    })
}

fn convergence_warning(rhat: f64) -> Option<String> {
    (!(rhat < RHAT_LIMIT)).then(|| format!("max R-hat {rhat:.4} is not below {RHAT_LIMIT}"))
}

fn run_analysis(cmd: &Command, r: &Resolved, strict: bool) -> Result<(Option<Value>, Outcome)> {
    let out = r.out.as_path();
    let loaded = if cmd.needs_data() { Some(load_data(r, strict)?) } else { None };
    let info = loaded.as_ref().map(data_info);
    let cells = || -> Cells { data::aggregate(&loaded.as_ref().expect("data loaded").dataset) };
    let outcome = match cmd {
        Command::Ingest => {
            let d = &loaded.as_ref().expect("data loaded").dataset;
            let lengths = d.sequence_lengths();
            let mut o = Outcome::new(json!({
                "sequences": lengths.len(),
                "min_sequence_length": lengths.iter().map(|l| l.1).min().unwrap_or(0),
                "max_sequence_length": lengths.iter().map(|l| l.1).max().unwrap_or(0),
                "sites": d.sites(),
            }));
            let w = csv_out(out, "sequences.csv", &mut o.artifacts)?;
            write_rows(w, &["sequence_id", "flips"], lengths.into_iter().map(|(s, n)| vec![s, n.to_string()]))?;
            o
        }
        Command::Describe { by } => {
            let d = &loaded.as_ref().expect("data loaded").dataset;
            let unit = match by {
                UnitArg::Person => Unit::Person,
                UnitArg::Coin => Unit::Coin,
            };
            let mut rows = data::summarize_by(d, unit);
            let combined = data::combined_row(d, unit);
            let mut o = Outcome::new(json!({ "unit": unit, "rows": rows.len(), "combined": combined }));
            rows.push(combined);
            let name = match unit {
                Unit::Person => "describe_person.csv",
                Unit::Coin => "describe_coin.csv",
            };
            data::write_summary_csv(&rows, unit, csv_out(out, name, &mut o.artifacts)?)?;
            o
        }
        Command::TestBinomial { kind } => {
            let c = cells();
            let p = &r.priors.binomial;
            let mut results = Vec::new();
            if *kind != KindArg::HeadsTails {
                results.push(binomial::bf_informed_binomial(c.n_same(), c.n_trials(), &p.same_side)?);
            }
            if *kind != KindArg::SameSide {
                results.push(binomial::bf_symmetric_binomial(c.n_heads(), c.n_trials(), p.heads_tails[0], p.heads_tails[1])?);
            }
            let mut o = Outcome::new(json!({ "tests": results }));
            let w = csv_out(out, "binomial.csv", &mut o.artifacts)?;
            write_rows(
                w,
                &["test", "k", "n", "log10_bf10", "bf10", "mean", "ci_low", "ci_high"],
                results.iter().map(|t| {
                    vec![
                        t.test.clone(),
                        t.k.to_string(),
                        t.n.to_string(),
                        t.log10_bf10.to_string(),
                        t.bf10.to_string(),
                        t.mean.to_string(),
                        t.ci95[0].to_string(),
                        t.ci95[1].to_string(),
                    ]
                }),
            )?;
            o
        }
        Command::Freq => {
            let c = cells();
            let heads = binomial::exact_binomial_p(c.n_heads(), c.n_trials(), 0.5)?;
            let same = binomial::exact_binomial_p(c.n_same(), c.n_trials(), 0.5)?;
            let mixed = glmm::ml_fit_random_intercept(&c)?;
            Outcome::new(json!({
                "exact_heads": { "k": c.n_heads(), "n": c.n_trials(), "p_value": heads },
                "exact_same_side": { "k": c.n_same(), "n": c.n_trials(), "p_value": same },
                "glmm": mixed,
            }))
        }
        Command::FitHier { transform } => {
            let priors = r.priors.estimation.apply(PriorSet::estimation());
            let fit = hier::sample_posterior(ModelSpec::FULL, priors, &cells(), &r.settings)?;
            let t = match transform {
                TransformArg::Delta => HeterogeneityTransform::Delta,
                TransformArg::Exact => HeterogeneityTransform::Exact,
            };
            let prob = hier::summarize_probability_scale(&fit.draws, t)?;
            let mut o = Outcome::new(json!({ "probability_scale": prob, "diagnostics": fit.draws.diagnostics }));
            o.warnings.extend(fit.draws.warnings.iter().cloned());
            o.converged = fit.draws.converged(RHAT_LIMIT);
            write_rows(csv_out(out, "parameters.csv", &mut o.artifacts)?, &DRAW_HEADER, draws_table(&fit.draws))?;
            let units = |v: Vec<(String, Estimate)>| v.into_iter().map(|(n, e)| estimate_row(&n, &e)).collect::<Vec<_>>();
            let header = ["unit", "mean", "sd", "ci_low", "ci_high"];
            write_rows(csv_out(out, "persons.csv", &mut o.artifacts)?, &header, units(fit.person_probabilities()))?;
            write_rows(csv_out(out, "coins.csv", &mut o.artifacts)?, &header, units(fit.coin_probabilities()))?;
            o
        }
        Command::TestBma => {
            let priors = r.priors.testing.apply(PriorSet::testing());
            let cmp = bma::compare_models(&cells(), &priors, &r.settings, &bma::all_models())?;
            let rhat = cmp.max_rhat();
            let mut o = Outcome::new(json!({
                "inclusion_bfs": cmp.inclusion_bfs,
                "max_relative_error": cmp.max_relative_error(),
                "max_rhat": rhat,
            }));
            o.warnings.extend(convergence_warning(rhat));
            o.converged = rhat < RHAT_LIMIT;
            let w = csv_out(out, "models.csv", &mut o.artifacts)?;
            write_rows(
                w,
                &["model", "log_ml", "relative_mc_error", "posterior_probability", "max_rhat"],
                cmp.marginals.iter().zip(&cmp.posterior.posterior).map(|(m, p)| {
                    vec![
                        m.label.clone(),
                        m.log_ml.to_string(),
                        m.relative_mc_error.to_string(),
                        p.to_string(),
                        m.diagnostics.as_ref().map_or(String::new(), |d| d.max_rhat.to_string()),
                    ]
                }),
            )?;
            o
        }
        Command::FitLearning { batch_size, t_origin } => {
            let d = &loaded.as_ref().expect("data loaded").dataset;
            let batches = learning::make_batches_from(d, *batch_size, *t_origin)?;
            let fit = learning::fit_learning(&batches, r.priors.learning, &r.settings)?;
            let mut o = Outcome::new(json!({ "summary": fit.summary, "t_origin": t_origin }));
            o.warnings.extend(fit.draws.warnings.iter().cloned());
            o.converged = fit.draws.converged(RHAT_LIMIT);
            write_rows(csv_out(out, "parameters.csv", &mut o.artifacts)?, &DRAW_HEADER, draws_table(&fit.draws))?;
            let t_max = batches.batches.iter().map(|b| b.t).fold(1.0, f64::max);
            let grid: Vec<f64> = (0..=100).map(|i| (t_max * i as f64 / 100.0).max(learning::T_FLOOR)).collect();
            let curve = learning::learning_curve(&fit.draws, &grid)?;
            learning::write_curve_csv(&curve, csv_out(out, "curve.csv", &mut o.artifacts)?)?;
            o
        }
        Command::Bff { target, hier, grid_min, grid_max, grid_points } => {
            let grid = sensitivity::default_grid(*grid_min, *grid_max, *grid_points);
            let c = cells();
            let bff = if *hier {
                let t = match target {
                    TargetArg::SameSide => HierTarget::SameSide,
                    TargetArg::HeadsTails => HierTarget::HeadsTails,
                    TargetArg::PersonHeterogeneity => HierTarget::PersonHeterogeneity,
                    TargetArg::CoinHeterogeneity => HierTarget::CoinHeterogeneity,
                };
                let fixed = r.priors.fixed_modes.map_or_else(FixedModes::default, |f| FixedModes {
                    phi_beta: f.phi_beta,
                    phi_alpha: f.phi_alpha,
                    phi_sigma_beta: f.phi_sigma_beta,
                    phi_sigma_alpha: f.phi_sigma_alpha,
                });
                sensitivity::bff_hier(t, &grid, &fixed, &c, &r.settings)?
            } else {
                let (k, kind) = match target {
                    TargetArg::SameSide => (c.n_same(), BffKind::SameSide),
                    TargetArg::HeadsTails => (c.n_heads(), BffKind::HeadsTails),
                    _ => {
                        return Err(Error::InvalidArgument(
                            "heterogeneity targets need the hierarchical comparison (--hier)".into(),
                        ))
                    }
                };
                sensitivity::bff_nonhier(k, c.n_trials(), &grid, kind)?
            };
            let best = bff.maximum.clone().or_else(|| bff.best_point().cloned());
            let mut o = Outcome::new(json!({
                "label": bff.label,
                "maximum": best.as_ref().map(|p| json!({
                    "phi": p.phi, "mode_probability": p.mode_probability, "log10_bf": p.log_bf / std::f64::consts::LN_10
                })),
                "failures": bff.failures,
            }));
            o.warnings.extend(bff.failures.iter().map(|(phi, e)| format!("grid point {phi}: {e}")));
            sensitivity::write_bff_csv(&bff, csv_out(out, "bff.csv", &mut o.artifacts)?)?;
            o
        }
        Command::Sites { prior_sd } => {
            let priors = r.priors.estimation.apply(PriorSet::estimation());
            let fit = sites::fit_site_contrasts(&cells(), priors, *prior_sd, &r.settings)?;
            let mut o = Outcome::new(json!({
                "beta_mu": fit.beta_mu,
                "effects": fit.effects,
                "diagnostics": fit.diagnostics,
            }));
            o.warnings.extend(fit.warnings.iter().cloned());
            o.converged = fit.diagnostics.max_rhat < RHAT_LIMIT;
            let w = csv_out(out, "sites.csv", &mut o.artifacts)?;
            write_rows(
                w,
                &["site", "persons", "mean", "sd", "ci_low", "ci_high", "wide"],
                fit.effects.iter().map(|e| {
                    let mut row = estimate_row(&e.site, &e.delta);
                    row.insert(1, e.persons.to_string());
                    row.push(e.wide.to_string());
                    row
                }),
            )?;
            o
        }
        Command::Simulate => {
            let sim = r.simulate.as_ref().ok_or_else(|| Error::Config("simulate needs a [simulate] section".into()))?;
            let seed = r.seed.expect("seed checked");
            let cfg = match (&sim.population, &sim.campaign) {
                (Some(p), None) => p.draw(seed)?,
                (None, Some(c)) => GenerativeConfig { seed, ..c.clone() },
                _ => return Err(Error::Config("[simulate] needs exactly one of population or campaign".into())),
            };
            let d = simulator::simulate(&cfg)?;
            let c = data::aggregate(&d);
            let mut o = Outcome::new(json!({
                "flips": d.len(),
                "persons": d.persons().len(),
                "coins": d.coins().len(),
                "same_side": c.n_same(),
                "heads": c.n_heads(),
            }));
            data::write_csv(&d, csv_out(out, "flips.csv", &mut o.artifacts)?)?;
            o
        }
        Command::Recover { .. } => {
            let rec = r.recover.as_ref().ok_or_else(|| Error::Config("recover needs a [recover] section".into()))?;
            let seed = r.seed.expect("seed checked");
            let (rows, warnings) = recover(rec, seed, &r.settings, &r.priors)?;
            let cov = simulator::coverage(&rows)?;
            let mut o = Outcome::new(json!({ "replicates": rows.len(), "coverage": cov }));
            o.warnings = warnings;
            let w = csv_out(out, "recovery.csv", &mut o.artifacts)?;
            write_rows(
                w,
                &["replicate", "parameter", "truth", "mean", "ci_low", "ci_high", "covered"],
                rows.iter().enumerate().flat_map(|(i, rep)| {
                    rep.iter().map(move |x| {
                        vec![
                            i.to_string(),
                            x.parameter.clone(),
                            x.truth.to_string(),
                            x.mean.to_string(),
                            x.ci95[0].to_string(),
                            x.ci95[1].to_string(),
                            x.covered.to_string(),
                        ]
                    })
                }),
            )?;
            let w = csv_out(out, "coverage.csv", &mut o.artifacts)?;
            write_rows(
                w,
                &["parameter", "covered", "replicates"],
                cov.iter().map(|c| vec![c.parameter.clone(), c.covered.to_string(), c.replicates.to_string()]),
            )?;
            o
        }
    };
    Ok((info, outcome))
}

/// Fits every replicate drawn from the population; replicate `i` uses seed
/// `seed + i` for both simulation and sampling.
pub fn recover(
    rec: &RecoverSection,
    seed: u64,
    settings: &Settings,
    priors: &PriorsFile,
) -> Result<(Vec<Vec<simulator::RecoveryRow>>, Vec<String>)> {
    let truth = rec.population.truth();
    let mut reports = Vec::with_capacity(rec.replicates);
    let mut warnings = Vec::new();
    for i in 0..rec.replicates {
        let s = seed.wrapping_add(i as u64);
        let d = simulator::simulate(&rec.population.draw(s)?)?;
        let settings = Settings { seed: s, ..*settings };
        let (fitted, rhat) = match rec.model {
            RecoverModel::Hier => {
                let priors = priors.estimation.apply(PriorSet::estimation());
                let fit = hier::sample_posterior(ModelSpec::FULL, priors, &data::aggregate(&d), &settings)?;
                let names = ["alpha_mu", "beta_mu", "sigma_alpha", "sigma_beta"];
                (names.iter().map(|n| (n.to_string(), fit.draws.estimate(n).expect("column"))).collect::<Vec<_>>(), fit.draws.diagnostics.max_rhat)
            }
            RecoverModel::Learning => {
                let b = learning::make_batches_from(&d, rec.batch_size, rec.population.t_origin)?;
                let fit = learning::fit_learning(&b, priors.learning, &settings)?;
                let names = ["theta_mu", "lambda_mu", "rho_mu"];
                (names.iter().map(|n| (n.to_string(), fit.draws.estimate(n).expect("column"))).collect(), fit.summary.max_rhat)
            }
        };
        if let Some(w) = convergence_warning(rhat) {
            warnings.push(format!("replicate {i}: {w}"));
        }
        reports.push(simulator::recovery_report(&truth, &fitted)?);
    }
    Ok((reports, warnings))
}

pub fn versions() -> Value {
    json!({
        "coinflip": env!("CARGO_PKG_VERSION"),
        "report_schema": REPORT_SCHEMA_VERSION,
    })
}

/// Parses `args`, runs the analysis and writes `report.json` plus the CSV
/// artifacts. Returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    let r = resolve(cli)?;
    if let Some(n) = r.threads {
        // a global pool can be installed only once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    fs::create_dir_all(&r.out).map_err(Error::from)?;
    let (data, outcome) = run_analysis(&cli.command, &r, cli.common.strict)?;
    let report = json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": r.command,
        "seed": r.seed,
        "config_hash": config_hash(&r),
        "versions": versions(),
        "config": r,
        "data": data,
        "result": outcome.result,
        "converged": outcome.converged,
        "warnings": outcome.warnings,
        "artifacts": outcome.artifacts,
    });
    let mut text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    text.push('\n');
    fs::write(r.out.join("report.json"), text).map_err(Error::from)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if outcome.converged { EXIT_OK } else { EXIT_CONVERGENCE })
}
