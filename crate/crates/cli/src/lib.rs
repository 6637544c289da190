//! Command-line front end: enrollment, audits, power analysis, report
//! rendering and registry checks.

pub mod config;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use recall_audit::audit::{
    assemble_report, audit_once, audit_two_round, build_mismatch_table, estimate_pi_with_pool,
    estimate_pi_with_substitute, AuditError, AuditReport, PoolCandidate, ReportInputs, Verdict,
};
use recall_audit::domains::DomainRegistry;
use recall_audit::enroll::{build_fingerprint, discover, self_calibrate, EnrollError, Fingerprint};
use recall_audit::power::{
    default_mdr_grid, estimator_sweep, mdr_curve, power_csv, PairProfile, PowerOptions, ProfileSpec, DEFAULT_TRIALS,
};

use config::{CassetteMode, Config, Overrides};

/// Exit codes of every command.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DIFFERENT: i32 = 2;
    pub const ABORTED: i32 = 3;
}

#[derive(Debug, Parser)]
#[command(name = "recall-audit", version, about = "Audit LLM API endpoints by stable numerical recall")]
pub struct Cli {
    /// Audit configuration file (TOML).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: GlobalOverrides,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOverrides {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub cassette_mode: Option<CassetteMode>,
    #[arg(long, global = true)]
    pub cassette_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// `system` or an RFC 3339 timestamp stamped on every artifact.
    #[arg(long, global = true)]
    pub clock: Option<String>,
}

impl From<&GlobalOverrides> for Overrides {
    fn from(g: &GlobalOverrides) -> Self {
        Overrides {
            seed: g.seed,
            batch_size: g.batch_size,
            concurrency: g.concurrency,
            cassette_mode: g.cassette_mode,
            cassette_dir: g.cassette_dir.clone(),
            alpha: g.alpha,
            gamma: g.gamma,
            clock: g.clock.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a reference fingerprint.
    Enroll(EnrollArgs),
    /// Audit a suspect endpoint against a fingerprint.
    Audit(AuditArgs),
    /// Monte Carlo power and estimator study for a behavior profile.
    Power(PowerArgs),
    /// Render a stored audit report.
    Report(ReportArgs),
    /// Validate a domain registry.
    RegistryLint(LintArgs),
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    /// Endpoint name of the reference.
    #[arg(long)]
    pub reference: String,
    /// Endpoint used to screen out probes that are not model specific.
    #[arg(long)]
    pub contrast: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub suspect: String,
    #[arg(long)]
    pub fingerprint: PathBuf,
    #[arg(long)]
    pub two_round: bool,
    /// Estimate the routed fraction (implies --two-round).
    #[arg(long)]
    pub estimate_pi: bool,
    /// Known substitute endpoint for the estimate.
    #[arg(long, requires = "estimate_pi", conflicts_with = "pool")]
    pub substitute: Option<String>,
    /// Candidate substitute endpoints, comma separated.
    #[arg(long, requires = "estimate_pi", value_delimiter = ',')]
    pub pool: Option<Vec<String>>,
    /// Reference endpoint for the substitute table; defaults to the endpoint
    /// whose identity matches the fingerprint.
    #[arg(long)]
    pub reference: Option<String>,
    /// Structured report path; a Markdown rendering is written next to it.
    #[arg(long, default_value = "audit-report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Profile file (JSON or TOML): a table or a summary row.
    #[arg(long, conflicts_with = "from_table")]
    pub profile: Option<PathBuf>,
    /// Summary row `N n01 pS pR`.
    #[arg(long, num_args = 4, value_names = ["N", "N01", "PS", "PR"], allow_hyphen_values = true)]
    pub from_table: Option<Vec<String>>,
    /// Grid as `start:stop:step` or a comma-separated list.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
    /// Use the single-round test instead of the two-round test.
    #[arg(long)]
    pub single_round: bool,
    /// Candidate substitute rates for interval coverage; defaults to four
    /// rates around the profile's own.
    #[arg(long, value_delimiter = ',')]
    pub pool: Option<Vec<f64>>,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ReportFormat {
    Markdown,
    Json,
}

#[derive(Debug, Args)]
pub struct LintArgs {
    /// Registry file; defaults to the configured or built-in registry.
    pub registry: Option<PathBuf>,
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match run(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<AuditError>() {
                Some(AuditError::AuditAborted { .. }) => exit::ABORTED,
                _ => exit::USAGE,
            }
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> Result<i32> {
    let overrides = Overrides::from(&cli.overrides);
    let config = || -> Result<Config> {
        match &cli.config {
            Some(p) => Config::load(p, &overrides),
            None => Ok(Config::empty()),
        }
    };
    match &cli.command {
        Command::Enroll(a) => cmd_enroll(&config()?, a, out),
        Command::Audit(a) => cmd_audit(&config()?, a, out),
        Command::Power(a) => cmd_power(&config()?, a, out),
        Command::Report(a) => cmd_report(a, out),
        Command::RegistryLint(a) => cmd_registry_lint(&config()?, a, out),
    }
}

pub fn cmd_enroll(cfg: &Config, args: &EnrollArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let registry = cfg.registry()?;
    let audit_config = cfg.audit_config();
    let reference = cfg.handle(&args.reference, "enroll")?;
    let contrast = args.contrast.as_deref().map(|c| cfg.handle(c, "contrast")).transpose()?;
    let discovery = discover(&reference, contrast.as_ref(), &registry, &audit_config, &cfg.enroll)?;
    for d in &discovery.summary.domains {
        writeln!(out, "{:<26} yield {:?} (proposed {}, screened {})", d.domain_id, d.stable_count_history, d.proposed, d.screened_out)?;
    }
    if discovery.probes.is_empty() {
        return Err(EnrollError::EnrollmentFailed.into());
    }
    let self_test = cfg.handle(&args.reference, "selftest")?;
    let calibration = self_calibrate(
        &self_test,
        &discovery.probes,
        &discovery.domains,
        &audit_config,
        &cfg.calibration,
        cfg.enroll.batch_size,
    )?;
    let fp = build_fingerprint(
        reference.identity(),
        discovery,
        calibration,
        &cfg.calibration,
        &audit_config,
        cfg.enroll.batch_size,
        cfg.clock,
    )?;
    fp.save(&args.out)?;
    writeln!(out, "N = {}, k_self = {}, p0 = {}", fp.n(), fp.k_self, fp.p0)?;
    writeln!(out, "fingerprint {} -> {}", fp.content_hash(), args.out.display())?;
    Ok(exit::OK)
}

fn markdown_path(json: &Path) -> PathBuf {
    json.with_extension("md")
}

pub fn cmd_audit(cfg: &Config, args: &AuditArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let fp = Fingerprint::load(&args.fingerprint).with_context(|| format!("loading {}", args.fingerprint.display()))?;
    if args.estimate_pi && args.substitute.is_none() && args.pool.is_none() {
        bail!("--estimate-pi needs --substitute or --pool");
    }
    let suspect = cfg.handle(&args.suspect, "audit")?;
    let two_round = args.two_round || args.estimate_pi;
    let (single, two) = if two_round {
        (None, Some(audit_two_round(&suspect, &fp, &cfg.calibration)?))
    } else {
        (Some(audit_once(&suspect, &fp, &cfg.calibration)?), None)
    };
    let mut usage = suspect.usage();
    let pi = if let Some(t) = two.as_ref().filter(|_| args.estimate_pi) {
        if let Some(sub_name) = &args.substitute {
            let ref_name = match &args.reference {
                Some(r) => r.clone(),
                None => cfg
                    .endpoint_by_identity(&fp.reference_identity)
                    .map(|e| e.name.clone())
                    .ok_or_else(|| anyhow!("no endpoint has the fingerprint identity {:?}; pass --reference", fp.reference_identity))?,
            };
            let r = cfg.handle(&ref_name, "table-reference")?;
            let s = cfg.handle(sub_name, "table-substitute")?;
            let table = build_mismatch_table(&r, &s, &fp)?;
            for h in [&r, &s] {
                usage.prompt_tokens += h.usage().prompt_tokens;
                usage.completion_tokens += h.usage().completion_tokens;
            }
            Some(estimate_pi_with_substitute(s.identity(), table, t, cfg.file.seed)?)
        } else {
            let names = args.pool.as_deref().unwrap_or_default();
            let mut candidates = Vec::new();
            for name in names {
                let h = cfg.handle(name, "pool")?;
                let o = audit_once(&h, &fp, &cfg.calibration)?;
                usage.prompt_tokens += h.usage().prompt_tokens;
                usage.completion_tokens += h.usage().completion_tokens;
                candidates.push(PoolCandidate {
                    identity: h.identity().to_string(),
                    p_s: o.r_disc,
                });
            }
            Some(estimate_pi_with_pool(&fp, t.w1, candidates)?)
        }
    } else {
        None
    };
    let report = assemble_report(ReportInputs {
        fingerprint: &fp,
        suspect_identity: suspect.identity(),
        calibration: cfg.calibration,
        single_round: single,
        two_round: two,
        pi,
        usage,
        clock: cfg.clock,
    })?;
    write_report(&report, &args.out)?;
    let p = report
        .two_round
        .as_ref()
        .map(|t| t.p_value)
        .or(report.single_round.as_ref().map(|o| o.p_value))
        .unwrap_or(1.0);
    writeln!(out, "verdict {} (p = {p:e}) -> {}", report.verdict(), args.out.display())?;
    Ok(match report.verdict() {
        Verdict::Same => exit::OK,
        Verdict::Different => exit::DIFFERENT,
    })
}

fn write_report(report: &AuditReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
    let md = markdown_path(path);
    std::fs::write(&md, report.to_markdown()).with_context(|| format!("writing {}", md.display()))?;
    Ok(())
}

/// `start:stop:step` (inclusive) or `a,b,c`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("invalid grid {spec:?}"))?;
        let [start, stop, step] = parts[..] else {
            bail!("grid range must be start:stop:step, got {spec:?}");
        };
        if step <= 0.0 || stop < start {
            bail!("invalid grid range {spec:?}");
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect()
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("invalid grid {spec:?}"))?
    };
    recall_audit::power::validate_grid(&grid)?;
    Ok(grid)
}

fn load_profile(path: &Path) -> Result<PairProfile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: ProfileSpec = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(spec.into_profile()?)
}

pub fn cmd_power(cfg: &Config, args: &PowerArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let profile = match (&args.profile, &args.from_table) {
        (Some(p), None) => load_profile(p)?,
        (None, Some(row)) => {
            let bad = || anyhow!("--from-table expects N n01 pS pR, got {row:?}");
            let n: u64 = row[0].parse().map_err(|_| bad())?;
            let n01: u64 = row[1].parse().map_err(|_| bad())?;
            let ps: f64 = row[2].parse().map_err(|_| bad())?;
            let pr: f64 = row[3].parse().map_err(|_| bad())?;
            PairProfile::from_row(format!("N={n} n01={n01} pS={ps} pR={pr}"), n, n01, ps, pr)?
        }
        _ => bail!("power needs --profile or --from-table"),
    };
    let grid = match &args.grid {
        Some(g) => parse_grid(g)?,
        None => default_mdr_grid(),
    };
    let opts = PowerOptions {
        trials: args.trials,
        seed: cfg.file.seed,
        alpha: cfg.calibration.alpha,
        two_round: !args.single_round,
    };
    let p0 = profile.simulation_p0();
    let power = mdr_curve(&profile, p0, &grid, &opts)?;
    let pool = args.pool.clone().unwrap_or_else(|| profile.default_pool());
    let estimates = estimator_sweep(&profile, &grid, Some(&pool), args.trials, cfg.file.seed)?;
    let csv = power_csv(&power, &estimates);
    let t = &profile.table;
    let fmt = |m: Option<f64>| m.map_or("none".to_string(), |v| format!("{v:.2}"));
    let summary = format!(
        "profile n00={} n01={} n10={} n11={} p0={p0:.6}\nMDR_65 = {}\nMDR_80 = {}\nMDR_95 = {}\n",
        t.n00,
        t.n01,
        t.n10,
        t.n11,
        fmt(power.mdr_65),
        fmt(power.mdr_80),
        fmt(power.mdr_95)
    );
    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
            write!(out, "{summary}")?;
        }
        None => {
            write!(out, "{csv}")?;
            eprint!("{summary}");
        }
    }
    Ok(exit::OK)
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let text = std::fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let report = AuditReport::from_json(&text).with_context(|| format!("parsing {}", args.input.display()))?;
    match args.format {
        ReportFormat::Markdown => write!(out, "{}", report.to_markdown())?,
        ReportFormat::Json => write!(out, "{}", report.to_json())?,
    }
    Ok(exit::OK)
}

pub fn cmd_registry_lint(cfg: &Config, args: &LintArgs, out: &mut dyn std::io::Write) -> Result<i32> {
    let registry = match &args.registry {
        Some(p) => DomainRegistry::load(p)?,
        None => cfg.registry()?,
    };
    for d in registry.domains() {
        let sample = d.render("sample subject")?;
        let value = (d.valid_range.lo + d.valid_range.hi.min(d.valid_range.lo.abs() + 1000.0)) / 2.0;
        let value = if matches!(d.match_rule, recall_audit::domains::MatchRule::ExactInteger) { value.round() } else { value };
        let answer = format!("(1) {}", sample.replacen(recall_audit::domains::VALUE_SLOT, &value.to_string(), 1));
        let slots = recall_audit::parse::parse_batch(&answer, 1, d)?;
        if slots[0].value.is_none_or(|v| !d.matches(value, v)) {
            bail!("domain {}: a rendered answer does not parse back ({answer:?})", d.id);
        }
        writeln!(out, "{:<26} {:<42} {}", d.id, d.match_rule.describe(), d.template)?;
    }
    writeln!(out, "{} domains OK", registry.len())?;
    Ok(exit::OK)
}
