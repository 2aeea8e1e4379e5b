//! Command-line front end: `fit`, `simulate`, `replicate`, `timegrid`,
//! and `censoring` subcommands wired into reproducible batch runs.
//!
//! Every run writes its resolved configuration next to its outputs, so a
//! rerun of the same config and seed reproduces the files byte for byte.
//! Exit codes: 0 success, 1 usage/IO/validation error, 2 numerical
//! non-convergence (partial outputs still written).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::biprobit::{
    fit, ComponentSet, FitOptions, FitResult, ModelSpec, WeightScheme,
};
use crate::censoring::{fit_km, fit_weibull_ph_named, CensoringModel, Strata, TieBreak};
use crate::data::{load_dataset, write_dataset_csv, ClassifyMode, ClassifyOptions, ColumnMapping, Dataset};
use crate::error::{Error, Result};
use crate::measures::{measures_from_fit, timegrid, write_curves_csv, MeasureSet, TimegridOptions};
use crate::polygenic::polygenic_estimate;
use crate::sim::{
    run_replication_study, simulate_cohort, CovariateScenario, EstimatorArm, ReplicationOptions,
    SimConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NONCONVERGENCE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "liabil",
    version,
    about = "Liability-threshold models for censored twin competing-risks data (IPCW)"
)]
pub struct Cli {
    /// Worker threads for replicate/timegrid (default 1; the
    /// LIABIL_THREADS environment variable is used when the flag is
    /// absent).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model at a horizon and write fit/measures/test outputs.
    Fit(FitArgs),
    /// Generate a synthetic twin cohort CSV.
    Simulate(SimulateArgs),
    /// Run a replication study and write the summary table.
    Replicate(ReplicateArgs),
    /// Independent fits over a tau grid; writes a long-format curve CSV.
    Timegrid(TimegridArgs),
    /// Fit a censoring model and write it as JSON.
    Censoring(CensoringArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct DataArgs {
    /// Input CSV (one row per individual).
    #[arg(long)]
    data: PathBuf,
    /// Outcome-model covariate columns (comma separated).
    #[arg(long, value_delimiter = ',')]
    x_cols: Vec<String>,
    /// Censoring-model covariate columns (comma separated).
    #[arg(long, value_delimiter = ',')]
    z_cols: Vec<String>,
}

impl DataArgs {
    fn mapping(&self) -> ColumnMapping {
        ColumnMapping { x_cols: self.x_cols.clone(), z_cols: self.z_cols.clone(), ..Default::default() }
    }

    fn load(&self) -> Result<Dataset> {
        let ds = load_dataset(&self.data, &self.mapping())?;
        if !ds.rejected_incomplete.is_empty() {
            eprintln!(
                "note: dropped {} pair(s) with a missing member: {}",
                ds.rejected_incomplete.len(),
                ds.rejected_incomplete.join(", ")
            );
        }
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum CensoringKind {
    /// Kaplan-Meier, single stratum.
    Km,
    /// Kaplan-Meier stratified by zygosity.
    KmZygosity,
    /// Parametric Weibull proportional hazards on the z columns.
    Weibull,
    /// No censoring model (weights 1 for fully observed pairs).
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
enum ModeArg {
    /// Members censored after tau count as known at tau.
    Cap,
    /// Only observed events count as known (raw-time weighting).
    Strict,
}

impl ModeArg {
    fn classify(self) -> ClassifyMode {
        match self {
            ModeArg::Cap => ClassifyMode::CapAtTau,
            ModeArg::Strict => ClassifyMode::StrictPaper,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Horizon the binary outcome is classified at.
    #[arg(long)]
    tau: f64,
    /// Model: biprobit | ace | ade | ae | ce | de | e.
    #[arg(long, default_value = "biprobit")]
    model: String,
    #[arg(long, value_enum, default_value_t = CensoringKind::Km)]
    censoring: CensoringKind,
    #[arg(long, value_enum, default_value_t = ModeArg::Cap)]
    mode: ModeArg,
    /// Ignore censoring entirely (the biased reference estimator).
    #[arg(long)]
    naive: bool,
    /// Optional cap on IPCW weights.
    #[arg(long)]
    weight_cap: Option<f64>,
    /// Reference covariate values for reported measures (default: sample
    /// mean).
    #[arg(long, value_delimiter = ',')]
    x_ref: Option<Vec<f64>>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 2000)]
    n_mz: usize,
    #[arg(long, default_value_t = 2000)]
    n_dz: usize,
    /// Additive, shared-environment and dominance variance shares.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    sigma_a2: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    sigma_c2: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_d2: f64,
    #[arg(long, default_value_t = 0.065)]
    p1: f64,
    #[arg(long, default_value_t = -4.5)]
    log_lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    log_nu: f64,
    /// Add the shared covariate affecting liability, death and censoring.
    #[arg(long)]
    covariate_scenario: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

impl SimulateArgs {
    fn config(&self) -> SimConfig {
        SimConfig {
            n_mz: self.n_mz,
            n_dz: self.n_dz,
            sigma_a2: self.sigma_a2,
            sigma_c2: self.sigma_c2,
            sigma_d2: self.sigma_d2,
            p1: self.p1,
            log_lambda: self.log_lambda,
            log_nu: self.log_nu,
            covariate: self.covariate_scenario.then(CovariateScenario::default),
            seed: self.seed,
            ..SimConfig::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ReplicateArgs {
    /// Named design: table1-row1..table1-row6 (baseline grid) or
    /// table2-row1..table2-row3 (covariate scenario).
    #[arg(long)]
    design: Option<String>,
    #[command(flatten)]
    generator: SimulateArgs,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 120.0)]
    tau: f64,
    /// Estimator arms (comma separated): naive, weibull1, weibull2, km.
    #[arg(long, value_delimiter = ',', default_values_t = ["naive".to_string(), "weibull1".to_string(), "weibull2".to_string(), "km".to_string()])]
    estimators: Vec<String>,
    /// Polygenic decomposition fitted per replicate.
    #[arg(long, default_value = "ace")]
    components: String,
}

#[derive(Debug, Args, Serialize)]
struct TimegridArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Grid as start:end:step (inclusive) or a comma list of values.
    #[arg(long)]
    taus: String,
    #[arg(long, value_enum, default_value_t = CensoringKind::Km)]
    censoring: CensoringKind,
    #[arg(long, value_enum, default_value_t = ModeArg::Cap)]
    mode: ModeArg,
    /// Minimum usable concordant pairs per zygosity per grid point.
    #[arg(long, default_value_t = 5)]
    min_concordant: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CensoringArgs {
    #[command(flatten)]
    data: DataArgs,
    /// km | km-zygosity | weibull.
    #[arg(long, value_enum, default_value_t = CensoringKind::Km)]
    kind: CensoringKind,
    #[arg(long, short)]
    out: PathBuf,
}

/// Parse argv and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with success exit codes.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_threads(cli.threads);
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn init_threads(flag: Option<usize>) {
    let n = flag
        .or_else(|| std::env::var("LIABIL_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(1);
    // Deterministic by default; ignore failure if a pool already exists
    // (repeated calls in tests).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Replicate(args) => cmd_replicate(args),
        Command::Timegrid(args) => cmd_timegrid(args),
        Command::Censoring(args) => cmd_censoring(args),
    }
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn write_json<P: AsRef<Path>>(path: P, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, format!("{:#}\n", value))?;
    Ok(())
}

fn write_resolved_config<T: Serialize>(out: &Path, command: &str, args: &T) -> Result<()> {
    let resolved = serde_json::json!({ "command": command, "options": args });
    write_json(out.join("config.json"), &resolved)
}

fn parse_model(name: &str, tau: f64) -> Result<ModelSpec> {
    match name.to_ascii_lowercase().as_str() {
        "biprobit" => Ok(ModelSpec::flexible(tau)),
        "biprobit-zyg" => Ok(ModelSpec::flexible_zygosity_beta(tau)),
        other => {
            let set = ComponentSet::parse(other).ok_or_else(|| {
                Error::Validation(format!(
                    "unknown model '{name}'; expected biprobit, biprobit-zyg, ace, ade, ae, ce, de or e"
                ))
            })?;
            let spec = ModelSpec::polygenic(set, tau);
            spec.validate()?;
            Ok(spec)
        }
    }
}

fn fit_censoring_model(
    kind: CensoringKind,
    dataset: &Dataset,
    z_names: &[String],
) -> Result<Option<CensoringModel>> {
    match kind {
        CensoringKind::None => Ok(None),
        CensoringKind::Km => Ok(Some(fit_km(&dataset.pairs, Strata::None, TieBreak::default())?)),
        CensoringKind::KmZygosity => {
            Ok(Some(fit_km(&dataset.pairs, Strata::ByZygosity, TieBreak::default())?))
        }
        CensoringKind::Weibull => {
            Ok(Some(fit_weibull_ph_named(&dataset.pairs, z_names)?))
        }
    }
}

fn measures_csv(measures: &MeasureSet, out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("measures.csv"))?;
    w.write_record(["tau", "estimate", "lower", "upper", "quantity", "zygosity"])?;
    let fmt = crate::fmt::sig6;
    let mut emit = |est: &crate::intervals::EstimateCi, quantity: &str, zyg: &str| -> Result<()> {
        w.write_record([
            fmt(measures.tau),
            fmt(est.estimate),
            fmt(est.lower),
            fmt(est.upper),
            quantity.to_string(),
            zyg.to_string(),
        ])?;
        Ok(())
    };
    emit(&measures.f1, "f1", "all")?;
    for zyg in [crate::data::Zygosity::Mz, crate::data::Zygosity::Dz] {
        for (name, est) in measures.by_zygosity(zyg) {
            emit(est, name, zyg.label())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fit_report(fit: &FitResult) -> serde_json::Value {
    let mut report = fit.to_json_value();
    if let Some(summary) = &fit.classify_summary {
        report["classification"] = serde_json::to_value(summary).unwrap_or_default();
        if summary.n_weight_above_100 > 0 {
            eprintln!(
                "warning: {} pair(s) carry IPCW weight above 100 (censoring survival below 0.01); \
                 weight positivity is borderline",
                summary.n_weight_above_100
            );
        }
        if summary.n_z_mismatch > 0 {
            eprintln!(
                "warning: {} pair(s) have member-specific censoring covariates; member 1's are \
                 used for the pair weight",
                summary.n_z_mismatch
            );
        }
    }
    report
}

fn cmd_fit(args: FitArgs) -> Result<i32> {
    ensure_out_dir(&args.out)?;
    write_resolved_config(&args.out, "fit", &args)?;
    let dataset = args.data.load()?;
    let censoring = if args.naive {
        None
    } else {
        fit_censoring_model(args.censoring, &dataset, &args.data.z_cols)?
    };
    let opts = FitOptions {
        classify: ClassifyOptions { mode: args.mode.classify(), weight_cap: args.weight_cap },
        weighting: if args.naive { WeightScheme::Naive } else { WeightScheme::Ipcw },
        x_names: (!args.data.x_cols.is_empty()).then(|| args.data.x_cols.clone()),
        max_iter: None,
    };

    let spec = parse_model(&args.model, args.tau)?;
    let mut exit = EXIT_OK;

    let primary = match fit(&spec, &dataset.pairs, censoring.as_ref(), &opts) {
        Ok(f) => f,
        Err(Error::NonConvergence { iterations, max_score }) => {
            // Still write the resolved config so the run is reproducible.
            eprintln!(
                "error: fit did not converge ({iterations} iterations, max |score| {max_score:.3e})"
            );
            return Ok(EXIT_NONCONVERGENCE);
        }
        Err(e) => return Err(e),
    };
    if !primary.converged {
        exit = EXIT_NONCONVERGENCE;
    }

    let mut report = fit_report(&primary);

    // Testing workflow for the flexible model: marginal homogeneity from
    // the zygosity-specific fit, then the genetic-effect test from the
    // shared fit the measures are reported from.
    if let ModelSpec { kind: crate::biprobit::ModelKind::FlexibleBiprobit { zygosity_beta: false }, .. } = spec {
        match fit(&ModelSpec::flexible_zygosity_beta(args.tau), &dataset.pairs, censoring.as_ref(), &opts)
            .and_then(|f| f.marginal_homogeneity_test())
        {
            Ok(t) => report["tests"]["marginal_homogeneity"] = serde_json::to_value(t).unwrap(),
            Err(e) => report["tests"]["marginal_homogeneity"] = serde_json::json!({"error": e.to_string()}),
        }
        match primary.genetic_effect_test() {
            Ok(t) => report["tests"]["genetic_effect"] = serde_json::to_value(t).unwrap(),
            Err(e) => report["tests"]["genetic_effect"] = serde_json::json!({"error": e.to_string()}),
        }
    }

    if let crate::biprobit::ModelKind::Polygenic { .. } = spec.kind {
        let estimate = polygenic_estimate(&primary)?;
        report["polygenic"] = serde_json::to_value(&estimate).unwrap_or_default();
    }

    match measures_from_fit(&primary, args.x_ref.as_deref()) {
        Ok(m) => {
            measures_csv(&m, &args.out)?;
            report["measures"] = serde_json::to_value(&m).unwrap_or_default();
        }
        Err(e) => {
            eprintln!("note: measures not written: {e}");
        }
    }
    if let Some(model) = &censoring {
        write_json(args.out.join("censoring.json"), &serde_json::to_value(model).unwrap())?;
    }
    write_json(args.out.join("fit.json"), &report)?;
    Ok(exit)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let out_dir = args.out.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(out_dir)?;
    let config = args.config();
    let cohort = simulate_cohort(&config)?;
    let z_names: Vec<String> =
        if config.covariate.is_some() { vec!["x".into()] } else { Vec::new() };
    let file = std::fs::File::create(&args.out)?;
    write_dataset_csv(&cohort.pairs, &[], &z_names, file)?;
    let config_path = args.out.with_extension("config.json");
    write_json(&config_path, &serde_json::json!({ "command": "simulate", "options": args }))?;
    if cohort.diagnostics.clamped_cause1_times + cohort.diagnostics.clamped_death_times > 0 {
        eprintln!("warning: event-time inversion guard triggered: {:?}", cohort.diagnostics);
    }
    Ok(EXIT_OK)
}

fn named_design(name: &str) -> Result<SimConfig> {
    let (components, log_nu, covariate): ((f64, f64), f64, bool) = match name {
        "table1-row1" => ((1.0 / 3.0, 1.0 / 3.0), 0.5, false),
        "table1-row2" => ((0.5, 0.25), 0.5, false),
        "table1-row3" => ((0.6, 0.2), 0.5, false),
        "table1-row4" => ((1.0 / 3.0, 1.0 / 3.0), 2.0, false),
        "table1-row5" => ((0.5, 0.25), 2.0, false),
        "table1-row6" => ((0.6, 0.2), 2.0, false),
        "table2-row1" => ((1.0 / 3.0, 1.0 / 3.0), 0.5, true),
        "table2-row2" => ((0.5, 0.25), 0.5, true),
        "table2-row3" => ((0.6, 0.2), 0.5, true),
        other => {
            return Err(Error::Validation(format!(
                "unknown design '{other}'; expected table1-row1..6 or table2-row1..3"
            )))
        }
    };
    Ok(SimConfig {
        sigma_a2: components.0,
        sigma_c2: components.1,
        log_nu,
        covariate: covariate.then(CovariateScenario::default),
        ..SimConfig::default()
    })
}

fn cmd_replicate(args: ReplicateArgs) -> Result<i32> {
    ensure_out_dir(&args.generator.out)?;
    let out = args.generator.out.clone();
    write_resolved_config(&out, "replicate", &args)?;

    let mut config = match &args.design {
        Some(name) => named_design(name)?,
        None => args.generator.config(),
    };
    if args.design.is_some() {
        // Cohort size and seed still come from the explicit flags.
        config.n_mz = args.generator.n_mz;
        config.n_dz = args.generator.n_dz;
        config.seed = args.generator.seed;
    }

    let estimators: Vec<EstimatorArm> = args
        .estimators
        .iter()
        .map(|s| {
            EstimatorArm::parse(s)
                .ok_or_else(|| Error::Validation(format!("unknown estimator arm '{s}'")))
        })
        .collect::<Result<_>>()?;
    let components = ComponentSet::parse(&args.components)
        .ok_or_else(|| Error::Validation(format!("unknown component set '{}'", args.components)))?;
    components.validate()?;

    let opts = ReplicationOptions {
        n_reps: args.reps,
        tau: args.tau,
        estimators,
        components,
        fit: FitOptions::default(),
    };
    let summary = run_replication_study(&config, &opts)?;
    let file = std::fs::File::create(out.join("summary.csv"))?;
    summary.write_csv(file)?;
    write_json(out.join("summary.json"), &serde_json::to_value(&summary).unwrap())?;
    for (arm, n_failed) in &summary.failures {
        if *n_failed > 0 {
            eprintln!("note: {} failed replicate(s) excluded from the {} arm", n_failed, arm.label());
        }
    }
    Ok(EXIT_OK)
}

/// Parse `start:end:step` (inclusive) or a comma-separated list.
fn parse_taus(spec: &str) -> Result<Vec<f64>> {
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Validation(format!("cannot parse tau value '{s}'")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let taus = if parts.len() == 3 {
        let (start, end, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if step <= 0.0 || end < start {
            return Err(Error::Validation(format!("invalid tau range '{spec}'")));
        }
        let mut taus = Vec::new();
        let mut i = 0;
        loop {
            let t = start + step * i as f64;
            if t > end + 1e-9 {
                break;
            }
            taus.push(t);
            i += 1;
        }
        taus
    } else {
        spec.split(',').map(parse).collect::<Result<_>>()?
    };
    if taus.is_empty() {
        return Err(Error::Validation("empty tau grid".into()));
    }
    Ok(taus)
}

fn cmd_timegrid(args: TimegridArgs) -> Result<i32> {
    ensure_out_dir(&args.out)?;
    write_resolved_config(&args.out, "timegrid", &args)?;
    let dataset = args.data.load()?;
    let censoring = fit_censoring_model(args.censoring, &dataset, &args.data.z_cols)?;
    let taus = parse_taus(&args.taus)?;
    let opts = TimegridOptions {
        min_concordant: args.min_concordant,
        x_ref: None,
        fit: FitOptions {
            classify: ClassifyOptions { mode: args.mode.classify(), weight_cap: None },
            x_names: (!args.data.x_cols.is_empty()).then(|| args.data.x_cols.clone()),
            ..Default::default()
        },
    };
    let rows = timegrid(&dataset.pairs, censoring.as_ref(), &taus, &opts)?;
    let file = std::fs::File::create(args.out.join("curves.csv"))?;
    write_curves_csv(&rows, file)?;
    let flagged: Vec<serde_json::Value> = rows
        .iter()
        .filter(|r| !r.flags.is_empty())
        .map(|r| serde_json::json!({"tau": r.tau, "flags": r.flags}))
        .collect();
    write_json(
        args.out.join("grid_report.json"),
        &serde_json::json!({"n_points": rows.len(), "flagged": flagged}),
    )?;
    Ok(EXIT_OK)
}

fn cmd_censoring(args: CensoringArgs) -> Result<i32> {
    ensure_out_dir(&args.out)?;
    write_resolved_config(&args.out, "censoring", &args)?;
    let dataset = args.data.load()?;
    if args.kind == CensoringKind::None {
        return Err(Error::Validation("censoring command needs km, km-zygosity or weibull".into()));
    }
    let model = fit_censoring_model(args.kind, &dataset, &args.data.z_cols)?
        .expect("kind validated above");
    write_json(args.out.join("censoring.json"), &serde_json::to_value(&model).unwrap())?;
    if let (Some(gamma), Some(vcov)) = (model.gamma(), model.gamma_vcov()) {
        let se: Vec<f64> = (0..gamma.len()).map(|i| vcov[(i, i)].max(0.0).sqrt()).collect();
        eprintln!("censoring model coefficients (log lambda, log nu, z...):");
        for (g, s) in gamma.iter().zip(&se) {
            eprintln!("  {g:.6} (se {s:.6})");
        }
    }
    Ok(EXIT_OK)
}
