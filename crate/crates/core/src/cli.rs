//! Command-line front end.
//!
//! Every option can also come from a TOML file given with `--config`; keys
//! are the long flag names with dashes replaced by underscores. Flags on the
//! command line win over the file.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::{PaError, Result};
use crate::estimate::{empirical_fit, fit_mle, fit_pmle, FitResult};
use crate::experiment::{
    emit_qq, qq_correlation, qq_csv, run_bootstrap_coverage, run_mc, run_projected_bootstrap_qq, run_wald_experiment,
    BootstrapCoverageConfig, Centering, Estimator, McConfig, ProjectionConfig, WaldConfig,
};
use crate::inference::{asymptotic_info, bootstrap_variance};
use crate::limits::{limit_law, DEFAULT_TAIL_TOL};
use crate::model::{default_family, parse_theta, FamilyKind, PaFamily};
use crate::tree::{
    grow_with, read_history, snapshot_of, write_history, DegreeSnapshot, GrowOptions, GrowthHistory, HistoryMeta,
};
use crate::urn::{build_affine_urn, build_cutoff_urn, tail_covariance, UrnSystem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONVERGENCE: i32 = 2;
pub const EXIT_INVALID_CONFIG: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "patree",
    version,
    about = "Preferential-attachment tree simulation and inference"
)]
pub struct Cli {
    /// TOML file with default values for any option.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Log progress at info level.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow one tree and write its history or degree snapshot.
    Simulate(Opts),
    /// Fit a history or snapshot file.
    Estimate(Opts),
    /// Monte Carlo study of one or more estimators.
    Mc(Opts),
    /// Repeated affinity test on simulated trees.
    Wald(Opts),
    /// Bootstrap variance for one snapshot, or a coverage study without --input.
    Bootstrap(Opts),
    /// Urn construction, Perron pair and limit covariance.
    Urn(Opts),
    /// Malthusian parameter, limit law and asymptotic covariance.
    Limits(Opts),
    /// QQ data for an estimator, or for normalized bootstrap projections.
    Qq(Opts),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UrnKind {
    Affine,
    Cutoff,
}

/// Options shared by all subcommands; each uses the ones it needs.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Opts {
    /// power-offset | affine | log-power[:shift] | eventually-constant:K
    #[arg(long)]
    pub family: Option<String>,
    /// Comma-separated parameters; fractions like 2/3 are accepted.
    #[arg(long)]
    pub theta: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Input history or snapshot file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Estimator for `estimate` and `qq`: mle | pmle | ee.
    #[arg(long)]
    pub method: Option<String>,
    /// Comma-separated estimators for `mc`.
    #[arg(long)]
    pub estimators: Option<String>,
    /// Bootstrap tree size.
    #[arg(long)]
    pub m: Option<usize>,
    /// Bootstrap replicates.
    #[arg(long)]
    pub s: Option<usize>,
    /// Nominal test size.
    #[arg(long)]
    pub size: Option<f64>,
    /// `simulate`: write the degree snapshot instead of the history.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub snapshot: Option<bool>,
    #[arg(long, value_enum)]
    pub urn: Option<UrnKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Quadrature tolerance for the urn covariance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// `qq`: use normalized bootstrap projections.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub projected: Option<bool>,
    /// Centering of the projections: theta0 | literal.
    #[arg(long)]
    pub center: Option<String>,
    /// Largest degree printed by `limits`.
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Coordinate used by `qq` for estimator output.
    #[arg(long)]
    pub coordinate: Option<usize>,
}

macro_rules! merge_fields {
    ($cli:expr, $file:expr, $($f:ident),*) => {
        Opts { $($f: $cli.$f.or($file.$f)),* }
    };
}

impl Opts {
    /// Fills unset options from `file`.
    pub fn merged(self, file: Opts) -> Opts {
        merge_fields!(
            self, file, family, theta, n, reps, seed, out, format, input, method, estimators, m, s, size, snapshot,
            urn, alpha, kappa, tol, projected, center, kmax, coordinate
        )
    }

    fn require<T: Clone>(value: &Option<T>, name: &str) -> Result<T> {
        value
            .clone()
            .ok_or_else(|| PaError::domain(format!("missing --{name}")))
    }

    fn family(&self) -> Result<PaFamily> {
        let kind: FamilyKind = self.family.as_deref().unwrap_or("power-offset").parse()?;
        default_family(&kind)
    }

    fn theta(&self, family: &PaFamily) -> Result<Vec<f64>> {
        let theta = parse_theta(&Self::require(&self.theta, "theta")?)?;
        family.check_theta(&theta)?;
        Ok(theta)
    }

    fn format(&self) -> Format {
        self.format.unwrap_or(Format::Report)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    fn method(&self) -> Result<Estimator> {
        self.method.as_deref().unwrap_or("mle").parse()
    }
}

/// Reads a TOML options file.
pub fn load_config(path: &Path) -> Result<Opts> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| PaError::parse(format!("{}: {e}", path.display())))
}

/// Process exit code for an error.
pub fn exit_code(err: &PaError) -> i32 {
    match err {
        PaError::Convergence { .. } => EXIT_CONVERGENCE,
        PaError::Domain(_) | PaError::Parse(_) => EXIT_INVALID_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Runs a parsed command line and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(PaError::domain("--workers must be positive"));
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => Opts::default(),
    };
    let (opts, handler): (Opts, fn(&Opts) -> Result<Output>) = match cli.command {
        Command::Simulate(o) => (o, cmd_simulate),
        Command::Estimate(o) => (o, cmd_estimate),
        Command::Mc(o) => (o, cmd_mc),
        Command::Wald(o) => (o, cmd_wald),
        Command::Bootstrap(o) => (o, cmd_bootstrap),
        Command::Urn(o) => (o, cmd_urn),
        Command::Limits(o) => (o, cmd_limits),
        Command::Qq(o) => (o, cmd_qq),
    };
    let opts = opts.merged(file);
    let out = handler(&opts)?;
    write_output(opts.out.as_deref(), &out.text)?;
    Ok(out.code)
}

struct Output {
    text: String,
    code: i32,
}

impl Output {
    fn ok(text: String) -> Self {
        Output { text, code: EXIT_OK }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_simulate(o: &Opts) -> Result<Output> {
    let family = o.family()?;
    let theta = o.theta(&family)?;
    let n = Opts::require(&o.n, "n")?;
    let mut rng = crate::rng::rng_from_seed(o.seed());
    let tree = grow_with(&family, &theta, n, &mut rng, GrowOptions::default())?;
    let mut buf = Vec::new();
    if o.snapshot.unwrap_or(false) {
        tree.snapshot.write_csv(&mut buf)?;
    } else {
        let meta = HistoryMeta {
            family: Some(family.kind().to_string()),
            theta: Some(theta),
            seed: Some(o.seed()),
        };
        write_history(&tree.history, &meta, &mut buf)?;
    }
    Ok(Output::ok(String::from_utf8(buf).expect("ascii output")))
}

enum Data {
    History(GrowthHistory),
    Snapshot(DegreeSnapshot),
}

fn read_data(path: &Path) -> Result<Data> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut head = String::new();
    let mut probe = Vec::new();
    // Snapshot files carry a `k,count` header; histories do not.
    while reader.read_line(&mut head)? > 0 {
        probe.push(head.clone());
        let t = head.trim();
        let data_line = !t.is_empty() && !t.starts_with('#');
        head.clear();
        if data_line {
            break;
        }
    }
    let is_snapshot = probe
        .iter()
        .map(|l| l.trim())
        .any(|l| !l.is_empty() && !l.starts_with('#') && l.contains(','));
    let text = probe.concat() + &io::read_to_string(reader)?;
    if is_snapshot {
        Ok(Data::Snapshot(DegreeSnapshot::read_csv(text.as_bytes())?))
    } else {
        Ok(Data::History(read_history(text.as_bytes())?.0))
    }
}

fn fit_text(o: &Opts, fit: &FitResult) -> String {
    match o.format() {
        Format::Csv => format!("{}\n{}\n", FitResult::csv_header(fit.theta_hat.len()), fit.csv_row()),
        Format::Report => fit.report(),
    }
}

fn cmd_estimate(o: &Opts) -> Result<Output> {
    let family = o.family()?;
    let data = read_data(&Opts::require(&o.input, "input")?)?;
    let snapshot = match &data {
        Data::History(h) => snapshot_of(h)?,
        Data::Snapshot(s) => s.clone(),
    };
    let init = o.theta.as_deref().map(parse_theta).transpose()?;
    let text = match o.method()? {
        Estimator::Mle => {
            let Data::History(h) = &data else {
                return Err(PaError::domain("the likelihood estimator needs a history file"));
            };
            fit_text(o, &fit_mle(&family, h, init.as_deref())?)
        }
        Estimator::Pmle => fit_text(o, &fit_pmle(&family, &snapshot, init.as_deref())?),
        Estimator::Ee => {
            let theta = empirical_fit(&family, &snapshot)?;
            let parts: Vec<String> = theta.iter().map(|t| format!("{t:?}")).collect();
            match o.format() {
                Format::Csv => {
                    let header: Vec<String> = (0..theta.len()).map(|i| format!("theta{i}")).collect();
                    format!("{}\n{}\n", header.join(","), parts.join(","))
                }
                Format::Report => format!("theta_hat   = [{}]\n", parts.join(", ")),
            }
        }
    };
    Ok(Output::ok(text))
}

fn cmd_mc(o: &Opts) -> Result<Output> {
    let family = o.family()?;
    let estimators = o
        .estimators
        .as_deref()
        .or(o.method.as_deref())
        .unwrap_or("mle")
        .split(',')
        .map(str::parse)
        .collect::<Result<Vec<Estimator>>>()?;
    let cfg = McConfig {
        theta0: o.theta(&family)?,
        family,
        n: Opts::require(&o.n, "n")?,
        reps: Opts::require(&o.reps, "reps")?,
        seed: o.seed(),
        estimators,
        with_reference: true,
    };
    let reports = run_mc(&cfg)?;
    let mut text = String::new();
    match o.format() {
        Format::Report => {
            for r in &reports {
                text.push_str(&r.report());
                text.push('\n');
            }
        }
        Format::Csv => {
            text.push_str("estimator,statistic,i,j,value\n");
            for r in &reports {
                text.push_str(&r.summary_csv());
            }
        }
    }
    let failed = reports.iter().any(|r| r.failed);
    Ok(Output {
        text,
        code: if failed { EXIT_CONVERGENCE } else { EXIT_OK },
    })
}

fn cmd_wald(o: &Opts) -> Result<Output> {
    let family = PaFamily::power_offset();
    let cfg = WaldConfig {
        theta0: o.theta(&family)?,
        n: Opts::require(&o.n, "n")?,
        reps: o.reps.unwrap_or(1),
        seed: o.seed(),
        size: o.size.unwrap_or(0.05),
    };
    let res = run_wald_experiment(&cfg)?;
    let text = match o.format() {
        Format::Report => res.report(),
        Format::Csv => res.csv(),
    };
    Ok(Output::ok(text))
}

fn cmd_bootstrap(o: &Opts) -> Result<Output> {
    let family = o.family()?;
    let m = o.m.unwrap_or(10_000);
    let s = o.s.unwrap_or(200);
    if let Some(path) = &o.input {
        let snapshot = match read_data(path)? {
            Data::History(h) => snapshot_of(&h)?,
            Data::Snapshot(s) => s,
        };
        let tilde = fit_pmle(&family, &snapshot, None)?;
        let boot = bootstrap_variance(&family, &tilde.theta_hat, m, s, o.seed())?;
        let mut text = fit_text(o, &tilde);
        match o.format() {
            Format::Report => text.push_str(&boot.report()),
            Format::Csv => {
                text.push_str("i,j,sigma\n");
                for i in 0..boot.sigma_tilde.nrows() {
                    for j in 0..boot.sigma_tilde.ncols() {
                        text.push_str(&format!("{i},{j},{:?}\n", boot.sigma_tilde[(i, j)]));
                    }
                }
            }
        }
        return Ok(Output::ok(text));
    }
    let cfg = BootstrapCoverageConfig {
        theta0: o.theta(&family)?,
        family,
        n: Opts::require(&o.n, "n")?,
        m,
        s,
        reps: o.reps.unwrap_or(1),
        seed: o.seed(),
        size: o.size.unwrap_or(0.05),
    };
    let per_coord = run_bootstrap_coverage(&cfg)?;
    let mut text = String::new();
    for (c, res) in per_coord.iter().enumerate() {
        match o.format() {
            Format::Report => text.push_str(&format!("[coordinate {c}, null {}]\n{}", cfg.theta0[c], res.report())),
            Format::Csv => {
                let csv = res.csv();
                let mut lines = csv.lines();
                let header = lines.next().unwrap_or_default();
                if c == 0 {
                    text.push_str(&format!("coordinate,{header}\n"));
                }
                for line in lines {
                    text.push_str(&format!("{c},{line}\n"));
                }
            }
        }
    }
    Ok(Output::ok(text))
}

fn cmd_urn(o: &Opts) -> Result<Output> {
    let tol = o.tol.unwrap_or(1e-10);
    let urn: UrnSystem = match o.urn.unwrap_or(UrnKind::Affine) {
        UrnKind::Affine => build_affine_urn(o.alpha.unwrap_or(0.0), Opts::require(&o.kappa, "kappa")?)?,
        UrnKind::Cutoff => {
            let family = o.family()?;
            let theta = o.theta(&family)?;
            let kappa = match (o.kappa, family.kind()) {
                (Some(k), _) => k,
                (None, FamilyKind::EventuallyConstant { cutoff }) => *cutoff,
                (None, _) => return Err(PaError::domain("missing --kappa")),
            };
            build_cutoff_urn(&family, &theta, kappa)?
        }
    };
    let cond = urn.eigen_condition();
    let urn = if cond.satisfied { urn.with_covariance(tol)? } else { urn };
    let text = match o.format() {
        Format::Csv => urn.to_bundle(),
        Format::Report => {
            let mut t = format!(
                "q            = {}\nlambda1      = {:.12}\nlambda2_real = {:.12}\ncondition    = {}\n",
                urn.q(),
                cond.lambda1,
                cond.lambda2_real,
                cond.satisfied
            );
            let mean: Vec<String> = urn.mean_limit().iter().map(|v| format!("{v:.10}")).collect();
            t.push_str(&format!("mean_limit   = [{}]\n", mean.join(", ")));
            if let Some(s) = urn.sigma() {
                t.push_str(&format!("sigma        = {s:.8}"));
                t.push_str(&format!("tail_cov     = {:.8}", tail_covariance(s)));
            }
            t
        }
    };
    Ok(Output::ok(text))
}

fn cmd_limits(o: &Opts) -> Result<Output> {
    let family = o.family()?;
    let theta = o.theta(&family)?;
    let law = limit_law(&family, &theta, DEFAULT_TAIL_TOL)?;
    let kmax = o.kmax.unwrap_or(20).min(law.k_trunc());
    let mut text = String::new();
    match o.format() {
        Format::Csv => {
            let mut buf = Vec::new();
            law.write_csv(&mut buf)?;
            text.push_str(&String::from_utf8(buf).expect("ascii output"));
        }
        Format::Report => {
            text.push_str(&format!("lambda_star = {:.15}\n", law.lambda_star));
            text.push_str("k,p_k,p_>k\n");
            for k in 1..=kmax {
                text.push_str(&format!("{k},{:.12e},{:.12e}\n", law.p(k), law.p_tail(k)));
            }
            match asymptotic_info(&family, &theta) {
                Ok(info) => text.push_str(&format!("V0_inverse = {:.6}", info.v0_inv)),
                Err(e) => text.push_str(&format!("V0_inverse unavailable: {e}\n")),
            }
        }
    }
    Ok(Output::ok(text))
}

fn cmd_qq(o: &Opts) -> Result<Output> {
    let family = o.family()?;
    let theta0 = o.theta(&family)?;
    let n = Opts::require(&o.n, "n")?;
    let reps = Opts::require(&o.reps, "reps")?;
    let table = if o.projected.unwrap_or(false) {
        let cfg = ProjectionConfig {
            family,
            theta0,
            n,
            m: o.m.unwrap_or(n),
            s: o.s.unwrap_or(200),
            reps,
            seed: o.seed(),
            centering: o.center.as_deref().unwrap_or("theta0").parse::<Centering>()?,
        };
        run_projected_bootstrap_qq(&cfg)?.1
    } else {
        let est = o.method()?;
        let coord = o.coordinate.unwrap_or(0);
        if coord >= family.dim() {
            return Err(PaError::domain("--coordinate out of range"));
        }
        let cfg = McConfig {
            family: family.clone(),
            theta0: theta0.clone(),
            n,
            reps,
            seed: o.seed(),
            estimators: vec![est],
            with_reference: est == Estimator::Mle,
        };
        let report = run_mc(&cfg)?.remove(0);
        let values: Vec<f64> = report
            .successes()
            .iter()
            .map(|e| (n as f64).sqrt() * (e[coord] - theta0[coord]))
            .collect();
        // Standardize by V0^{-1} when known, else by the sample spread.
        let sd = match &report.reference {
            Some(r) => r[(coord, coord)].sqrt(),
            None => report.rescaled_cov[(coord, coord)].sqrt(),
        };
        emit_qq(&values, 0.0, sd)?
    };
    let text = match o.format() {
        Format::Csv => qq_csv(&table),
        Format::Report => format!(
            "points      = {}\ncorrelation = {:.6}\n",
            table.len(),
            qq_correlation(&table)?
        ),
    };
    Ok(Output::ok(text))
}
