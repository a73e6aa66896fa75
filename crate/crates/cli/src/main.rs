//! `ppcert`: certify score-based privacy (PP) guarantees from the command line.
//!
//! Exit status: 0 when the verdict holds, 3 when it fails or a checked
//! property is violated, 4 on a failed precondition or structural guard,
//! 2 on unparseable input.

mod inputs;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ppcert_core::battery::{run_suite, SuiteConfig, SuiteResult};
use ppcert_core::beliefs::{ClassSampler, GaussianClassSpec};
use ppcert_core::certify::average::AVERAGE_TOL;
use ppcert_core::certify::{
    certify_average_gaussian_with, certify_pdp, certify_pp_detailed, check_composition, check_pdp_pp_equivalence,
    check_receiver_postprocessing, search_sender_postprocessing_counterexample, SearchBounds, SearchOutcome,
};
use ppcert_core::mechanisms::StageKernelSpec;
use ppcert_core::{Error, FiniteMechanism, GuaranteeSpec, NeighborRelation, PriorClass, Score, WGrid};

use inputs::{finite_guarantee, load, load_gaussian_class, parse_list, ParseError};
use output::{num, opt_num, to_json, Envelope, Table};

#[derive(Parser, Debug)]
#[command(name = "ppcert", version, about = "Certify score-based privacy guarantees of release mechanisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    run: RunConfig,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Certify a guarantee (default: log score over neighbouring two-point priors).
    CertifyPp,
    /// Exact attained δ of (ε, δ)-probabilistic differential privacy.
    CertifyPdp,
    /// Check that the PDP and two-point log-score verdicts agree.
    Equivalence,
    /// Check the composition bound for a mechanism followed by a stage kernel.
    Compose,
    /// Check that a data-independent kernel leaves relative scores unchanged.
    Postprocess,
    /// Sample the Gaussian class and check the average-mechanism bound.
    Average,
    /// Search for a mechanism whose PDP level is destroyed by post-processing.
    SearchCe,
    /// Run the full property battery and print a summary table.
    Suite,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args, Debug, Clone, Serialize)]
struct RunConfig {
    /// Mechanism JSON, inline or a file path.
    #[arg(long, global = true)]
    mechanism: Option<String>,
    /// Guarantee JSON, inline or a file path.
    #[arg(long, global = true)]
    guarantee: Option<String>,
    /// Second-stage guarantee for `compose` (defaults to --guarantee).
    #[arg(long, global = true)]
    guarantee2: Option<String>,
    /// Neighbour pairs JSON (defaults to every pair of datasets).
    #[arg(long, global = true)]
    neighbors: Option<String>,
    /// Second-stage or post-processing kernel JSON.
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// Privacy level ε for `certify-pdp` and `equivalence`.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Failure probability δ (default 0).
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Score budget κ for the default log-score guarantee.
    #[arg(long, global = true)]
    kappa: Option<f64>,
    /// Seed for sampling commands; required by `average`, `search-ce` and `suite`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Class members sampled by `average` (default 10000).
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Candidate budget for `search-ce` and the suite's search.
    #[arg(long, global = true)]
    budget: Option<u64>,
    /// Number of two-point weights.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Slack on the average-mechanism bound.
    #[arg(long, global = true, value_parser = positive)]
    tolerance: Option<f64>,
    /// Gaussian class: bound on the standardized mean shift.
    #[arg(long, global = true)]
    r1: Option<f64>,
    /// Gaussian class: bound on the correlation conditioning (> 1).
    #[arg(long, global = true)]
    r2: Option<f64>,
    /// Comma-separated dataset for `average`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    x: Option<String>,
    /// Write the report atomically to this path instead of stdout.
    #[arg(long, global = true)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

enum Failure {
    Parse(ParseError),
    Usage(String),
    Core(Error),
    Output(String),
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Self {
        Failure::Parse(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Parse(_) | Failure::Usage(_) => 2,
            Failure::Core(Error::InvalidInput(_)) => 2,
            Failure::Core(Error::EquivalenceViolation(_) | Error::PropertyViolation(_)) => 3,
            Failure::Core(_) | Failure::Output(_) => 4,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Parse(e) => e.to_string(),
            Failure::Usage(m) | Failure::Output(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

/// A finished run: whether the verdict holds, plus what to emit.
struct Outcome {
    verdict: bool,
    json: Vec<u8>,
    table: Table,
    /// Printed to stdout even when the report goes to a file.
    summary: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = configure_threads() {
        eprintln!("error: {}", f.message());
        return ExitCode::from(f.exit_code());
    }
    match run(cli.command, &cli.run) {
        Ok(outcome) => match emit(&cli.run, &outcome) {
            Ok(()) => ExitCode::from(if outcome.verdict { 0 } else { 3 }),
            Err(f) => {
                eprintln!("error: {}", f.message());
                ExitCode::from(f.exit_code())
            }
        },
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("PP_CERT_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Failure::Usage(format!("PP_CERT_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Output(format!("cannot configure worker pool: {e}")))
}

fn emit(config: &RunConfig, outcome: &Outcome) -> Result<(), Failure> {
    if let Some(s) = &outcome.summary {
        print!("{s}");
    }
    let bytes = match config.format {
        Format::Json => outcome.json.clone(),
        Format::Csv => outcome.table.to_csv().map_err(|e| Failure::Output(format!("cannot write CSV: {e}")))?,
    };
    match &config.out {
        Some(path) => output::write_atomic(path, &bytes)
            .map_err(|e| Failure::Output(format!("cannot write `{}`: {e}", path.display()))),
        None if outcome.summary.is_some() => Ok(()),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes).map_err(|e| Failure::Output(format!("cannot write report: {e}")))
        }
    }
}

fn require<T: Copy>(value: Option<T>, flag: &str, command: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::Usage(format!("`{command}` requires --{flag}")))
}

fn require_str<'a>(value: &'a Option<String>, flag: &str, command: &str) -> Result<&'a str, Failure> {
    value.as_deref().ok_or_else(|| Failure::Usage(format!("`{command}` requires --{flag}")))
}

fn envelope<R: Serialize>(command: Command, config: &RunConfig, report: &R) -> Result<Vec<u8>, Failure> {
    let name = match command {
        Command::CertifyPp => "certify-pp",
        Command::CertifyPdp => "certify-pdp",
        Command::Equivalence => "equivalence",
        Command::Compose => "compose",
        Command::Postprocess => "postprocess",
        Command::Average => "average",
        Command::SearchCe => "search-ce",
        Command::Suite => "suite",
    };
    to_json(&Envelope { command: name, timestamp: output::now(), config, report })
        .map_err(|e| Failure::Output(format!("cannot serialize report: {e}")))
}

fn run(command: Command, c: &RunConfig) -> Result<Outcome, Failure> {
    match command {
        Command::CertifyPp => certify_pp_cmd(c),
        Command::CertifyPdp => certify_pdp_cmd(c),
        Command::Equivalence => equivalence_cmd(c),
        Command::Compose => compose_cmd(c),
        Command::Postprocess => postprocess_cmd(c),
        Command::Average => average_cmd(c),
        Command::SearchCe => search_cmd(c),
        Command::Suite => suite_cmd(c),
    }
}

fn mechanism(c: &RunConfig, command: &str) -> Result<FiniteMechanism, Failure> {
    Ok(load("mechanism", require_str(&c.mechanism, "mechanism", command)?)?)
}

fn neighbors(c: &RunConfig, mech: &FiniteMechanism) -> Result<NeighborRelation, Failure> {
    match &c.neighbors {
        Some(arg) => Ok(load("neighbour relation", arg)?),
        None => Ok(NeighborRelation::complete(mech.universe())),
    }
}

fn grid(c: &RunConfig) -> WGrid {
    c.grid.map(WGrid::with_points).unwrap_or_default()
}

/// `--guarantee` (with `--kappa`, `--delta` and `--grid` overriding its
/// fields), or the log score over two-point neighbour priors.
fn guarantee(
    c: &RunConfig,
    arg: Option<&str>,
    mech: &FiniteMechanism,
    command: &str,
) -> Result<GuaranteeSpec, Failure> {
    let mut spec = match arg {
        Some(a) => {
            let spec: GuaranteeSpec = finite_guarantee(load("guarantee", a)?, a)?;
            spec.with_budget(c.kappa.unwrap_or(spec.kappa), c.delta.unwrap_or(spec.delta))?
        }
        None => GuaranteeSpec::log_two_point(
            neighbors(c, mech)?,
            require(c.kappa, "kappa", command)?,
            c.delta.unwrap_or(0.0),
        )?,
    };
    if let (Some(points), PriorClass::NeighborTwoPoint { grid: g, .. }) = (c.grid, &mut spec.prior_class) {
        *g = WGrid::with_points(points);
    }
    spec.validate()?;
    Ok(spec)
}

fn certify_pp_cmd(c: &RunConfig) -> Result<Outcome, Failure> {
    let mech = mechanism(c, "certify-pp")?;
    let spec = guarantee(c, c.guarantee.as_deref(), &mech, "certify-pp")?;
    let (report, evaluations) = certify_pp_detailed(&mech, &spec)?;
    let mut table = Table::new(vec!["score", "dataset", "prior", "w", "tail", "max_delta_s", "violating_outputs"]);
    for e in &evaluations {
        let max = e.samples.iter().filter(|s| s.prob > 0.0).map(|s| s.delta_s).fold(None, |m, d| match m {
            Some(v) if v >= d => Some(v),
            _ => Some(d),
        });
        table.push(vec![
            spec.scores[e.score].name(),
            mech.universe()[e.dataset].to_string(),
            e.prior.clone(),
            opt_num(e.w),
            num(e.tail),
            max.map(|d| d.to_string()).unwrap_or_default(),
            e.violating(spec.kappa).len().to_string(),
        ]);
    }
    Ok(Outcome { verdict: report.verdict, json: envelope(Command::CertifyPp, c, &report)?, table, summary: None })
}

fn certify_pdp_cmd(c: &RunConfig) -> Result<Outcome, Failure> {
    let mech = mechanism(c, "certify-pdp")?;
    let nb = neighbors(c, &mech)?;
    let eps = require(c.eps, "eps", "certify-pdp")?;
    let report = certify_pdp(&mech, &nb, eps, Some(c.delta.unwrap_or(0.0)))?;
    let mut table = Table::new(vec!["eps", "delta", "attained_delta", "verdict", "x", "x_prime"]);
    let (x, xp) = report.witness.as_ref().map(|w| (w.x.to_string(), w.x_prime.to_string())).unwrap_or_default();
    let verdict = report.verdict == Some(true);
    table.push(vec![num(eps), opt_num(report.target_delta), num(report.attained_delta), verdict.to_string(), x, xp]);
    Ok(Outcome { verdict, json: envelope(Command::CertifyPdp, c, &report)?, table, summary: None })
}

fn equivalence_cmd(c: &RunConfig) -> Result<Outcome, Failure> {
    let mech = mechanism(c, "equivalence")?;
    let nb = neighbors(c, &mech)?;
    let eps = require(c.eps, "eps", "equivalence")?;
    let report = check_pdp_pp_equivalence(&mech, &nb, eps, c.delta.unwrap_or(0.0), &grid(c))?;
    let mut table = Table::new(vec!["w", "tail"]);
    table.push(vec![num(0.0), num(report.profile.limit)]);
    for (w, t) in report.profile.weights.iter().zip(&report.profile.tails) {
        table.push(vec![num(*w), num(*t)]);
    }
    Ok(Outcome { verdict: report.agree, json: envelope(Command::Equivalence, c, &report)?, table, summary: None })
}

fn compose_cmd(c: &RunConfig) -> Result<Outcome, Failure> {
    let m1 = mechanism(c, "compose")?;
    let kernel: StageKernelSpec = load("stage kernel", require_str(&c.kernel, "kernel", "compose")?)?;
    let m2 = kernel.resolve(&m1)?;
    let spec1 = guarantee(c, c.guarantee.as_deref(), &m1, "compose")?;
    let spec2 = match c.guarantee2.as_deref() {
        Some(a) => guarantee(c, Some(a), &m1, "compose")?,
        None => spec1.clone(),
    };
    let report = check_composition(&m1, &m2, &spec1, &spec2)?;
    let mut table = Table::new(vec!["stage", "kappa", "delta", "attained_delta", "verdict"]);
    for (name, r) in [("first", &report.first), ("worst_slice", &report.worst_slice), ("composed", &report.composed)] {
        table.push(vec![name.into(), num(r.kappa), num(r.delta), num(r.attained_delta), r.verdict.to_string()]);
    }
    Ok(Outcome { verdict: report.holds, json: envelope(Command::Compose, c, &report)?, table, summary: None })
}

fn postprocess_cmd(c: &RunConfig) -> Result<Outcome, Failure> {
    let m = mechanism(c, "postprocess")?;
    let kernel: StageKernelSpec = load("post-processing kernel", require_str(&c.kernel, "kernel", "postprocess")?)?;
    let k = kernel.resolve(&m)?;
    let spec = guarantee(c, c.guarantee.as_deref(), &m, "postprocess")?;
    let report = check_receiver_postprocessing(&m, &k, &spec)?;
    let mut table = Table::new(vec!["mechanism", "attained_delta", "verdict", "max_score_gap", "max_mass_gap"]);
    for (name, r) in [("original", &report.original), ("processed", &report.processed)] {
        table.push(vec![
            name.into(),
            num(r.attained_delta),
            r.verdict.to_string(),
            num(report.max_score_gap),
            num(report.max_mass_gap),
        ]);
    }
    Ok(Outcome { verdict: report.equal, json: envelope(Command::Postprocess, c, &report)?, table, summary: None })
}

fn average_cmd(c: &RunConfig) -> Result<Outcome, Failure> {
    let (r1, r2, x) = match c.guarantee.as_deref() {
        Some(a) => load_gaussian_class(a)?,
        None => (
            require(c.r1, "r1", "average")?,
            require(c.r2, "r2", "average")?,
            parse_list(require_str(&c.x, "x", "average")?)?,
        ),
    };
    let spec = GaussianClassSpec::new(r1, r2, x)?;
    let seed = require(c.seed, "seed", "average")?;
    let samples = c.samples.unwrap_or(10_000);
    let (report, _) = certify_average_gaussian_with(
        &ClassSampler::default(),
        &spec,
        samples,
        seed,
        c.tolerance.unwrap_or(AVERAGE_TOL),
    )?;
    let mut table = Table::new(vec!["slack_lo", "slack_hi", "count"]);
    for b in &report.slack_histogram {
        table.push(vec![num(b.lo), num(b.hi), b.count.to_string()]);
    }
    Ok(Outcome { verdict: report.verdict, json: envelope(Command::Average, c, &report)?, table, summary: None })
}

fn search_cmd(c: &RunConfig) -> Result<Outcome, Failure> {
    let seed = require(c.seed, "seed", "search-ce")?;
    let budget = c.budget.unwrap_or(1_000_000);
    let outcome = search_sender_postprocessing_counterexample(&SearchBounds::default(), seed, budget)?;
    let mut table = Table::new(vec!["outcome", "candidates", "ratio", "delta", "chained_delta"]);
    let found = match &outcome {
        SearchOutcome::Found(w) => {
            table.push(vec![
                "found".into(),
                w.candidates.to_string(),
                w.ratio.clone(),
                w.delta.exact.clone(),
                w.chained_delta.exact.clone(),
            ]);
            true
        }
        SearchOutcome::Exhausted { candidates } => {
            table.push(vec!["exhausted".into(), candidates.to_string(), String::new(), String::new(), String::new()]);
            false
        }
    };
    Ok(Outcome { verdict: found, json: envelope(Command::SearchCe, c, &outcome)?, table, summary: None })
}

fn suite_cmd(c: &RunConfig) -> Result<Outcome, Failure> {
    let defaults = SuiteConfig::default();
    let config = SuiteConfig {
        seed: require(c.seed, "seed", "suite")?,
        gaussian_samples: c.samples.unwrap_or(defaults.gaussian_samples),
        search_budget: c.budget.unwrap_or(defaults.search_budget),
        grid: grid(c),
        ..defaults
    };
    config.grid.validate()?;
    let result = run_suite(&config);
    let mut table = Table::new(vec!["check", "passed", "instances", "failures", "runtime_ms", "detail"]);
    for k in &result.checks {
        table.push(vec![
            k.name.clone(),
            k.passed.to_string(),
            k.instances.to_string(),
            k.failures.to_string(),
            k.runtime_ms.to_string(),
            k.detail.clone().unwrap_or_default(),
        ]);
    }
    Ok(Outcome {
        verdict: result.passed,
        json: envelope(Command::Suite, c, &result)?,
        table,
        summary: Some(summary_table(&result)),
    })
}

fn summary_table(result: &SuiteResult) -> String {
    let width = result.checks.iter().map(|k| k.name.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<width$}  {:<6}  {:>9}  {:>8}  {:>10}\n", "check", "result", "instances", "failures", "ms");
    for k in &result.checks {
        s += &format!(
            "{:<width$}  {:<6}  {:>9}  {:>8}  {:>10}\n",
            k.name,
            if k.passed { "pass" } else { "FAIL" },
            k.instances,
            k.failures,
            k.runtime_ms
        );
        if !k.passed {
            if let Some(d) = &k.detail {
                s += &format!("    {d}\n");
            }
        }
    }
    s += &format!("overall: {}\n", if result.passed { "pass" } else { "FAIL" });
    s
}
