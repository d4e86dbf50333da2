use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mmh_core::models::{feller_report, solvability_report};
use mmh_core::regime_expectation::{separable_integrand, xi_mc, xi_mc_table, xi_ode, McEstimate};
use mmh_core::simulate::{
    expected_utility_mc, martingale_diagnostic, simulate_paths, terminal_wealth_histogram,
    write_martingale_csv, write_path_dump, ConstantStrategy, Strategy,
};
use mmh_core::value_strategy::{
    optimal_strategy, separable_value, solve_table, value_mmh_general, write_solve_csv,
    OptimalStrategy, SolveRow,
};
use mmh_core::{SimConfig, ValueQuery, Variant, XiTable};
use sha2::{Digest, Sha256};

use crate::config::{parse_config, RunConfig};
use crate::XiArg;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input, bad flags.
    Usage(String),
    /// The model fails a check, or the request is outside what it supports.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<mmh_core::Error> for CliError {
    fn from(e: mmh_core::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Failure(format!("I/O error: {e}"))
    }
}

type CliResult = Result<(), CliError>;

struct Loaded {
    config: RunConfig,
    hash: String,
}

impl Loaded {
    fn comment(&self, seed: u64) -> String {
        format!("config_sha256={} seed={seed}", self.hash)
    }
}

fn load(path: &Path) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Usage(format!("{} is not UTF-8", path.display())))?;
    let config = parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let hash = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    Ok(Loaded { config, hash })
}

/// Feller and solvability checks; the error names the first failure.
fn require_valid(c: &RunConfig) -> CliResult {
    let failing: Vec<String> = feller_report(&c.model)
        .iter()
        .filter(|f| !f.passed)
        .map(|f| (f.state + 1).to_string())
        .collect();
    if !failing.is_empty() {
        return Err(CliError::Failure(format!(
            "FellerViolated: 2 kappa theta < chi^2 in state(s) {}",
            failing.join(", ")
        )));
    }
    if let Some(f) = solvability_report(&c.model).first_failure() {
        return Err(CliError::Failure(format!(
            "AssumptionViolated: {} ({} vs {})",
            f.name, f.lhs, f.rhs
        )));
    }
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            CliError::Failure(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn parse_strategy(arg: &str, c: &RunConfig) -> Result<Box<dyn Strategy>, CliError> {
    if arg == "optimal" {
        return Ok(Box::new(OptimalStrategy::new(&c.model)?));
    }
    match arg.strip_prefix("const:").map(str::parse::<f64>) {
        Some(Ok(w)) if w.is_finite() => Ok(Box::new(ConstantStrategy(w))),
        _ => Err(CliError::Usage(format!(
            "strategy must be 'optimal' or 'const:<weight>', got '{arg}'"
        ))),
    }
}

fn sim_config(c: &RunConfig, paths: Option<usize>, steps: Option<usize>) -> Result<SimConfig, CliError> {
    let mut cfg = SimConfig::new(
        paths.unwrap_or(c.sim.n_paths),
        steps.unwrap_or(c.sim.steps_per_year),
        c.model.horizon(),
        c.solver.seed,
    );
    cfg.v0 = c.initial.v0;
    cfg.x0 = c.initial.x0;
    cfg.state0 = c.initial.state;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn xi_table(c: &RunConfig, method: XiArg, times: &[f64]) -> Result<XiTable, CliError> {
    let ups = separable_integrand(&c.model)?;
    Ok(match method {
        XiArg::Ode => xi_ode(&c.chain, &ups, c.solver.grid_step)?,
        XiArg::Mc => xi_mc_table(&c.chain, &ups, times, c.solver.n_paths_xi, c.solver.seed)?,
    })
}

fn separable_only(c: &RunConfig, what: &str) -> CliResult {
    if c.model.variant().is_separable() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("{what} needs a separable variant (smmh or smmh_rho)")))
    }
}

pub fn validate(path: &Path) -> CliResult {
    let loaded = load(path)?;
    let p = &loaded.config.model;
    let mut ok = true;
    println!("# {}", loaded.comment(loaded.config.solver.seed));
    for f in feller_report(p) {
        ok &= f.passed;
        println!(
            "{} feller state {}: 2 kappa theta = {:.16e} >= chi^2 = {:.16e}{}",
            if f.passed { "PASS" } else { "FAIL" },
            f.state + 1,
            f.two_kappa_theta,
            f.chi_squared,
            if f.passed { "" } else { " (FellerViolated)" }
        );
    }
    let report = solvability_report(p);
    println!("vartheta = {:.16e}", report.vartheta);
    for check in &report.checks {
        ok &= check.passed;
        println!(
            "{} {}: {:.16e} vs {:.16e}{}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.lhs,
            check.rhs,
            if check.passed { "" } else { " (AssumptionViolated)" }
        );
    }
    if ok {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::Failure("validation failed".into()))
    }
}

pub fn solve(path: &Path, t_grid: usize, method: XiArg, out: Option<&Path>) -> CliResult {
    let loaded = load(path)?;
    let c = &loaded.config;
    require_valid(c)?;
    let p = &c.model;
    let n_t = t_grid.max(1);
    let times: Vec<f64> = (0..=n_t)
        .map(|k| if k == n_t { p.horizon() } else { p.horizon() * k as f64 / n_t as f64 })
        .collect();
    let mut comments = vec![loaded.comment(c.solver.seed)];
    let rows = if p.variant().is_separable() {
        let xi = xi_table(c, method, &times)?;
        comments.push(format!("xi_method={}", xi.method().label()));
        solve_table(p, &xi, c.initial.v0, c.initial.x0, n_t)?
    } else {
        if p.rho() != 0.0 {
            return Err(CliError::Failure(
                "the general model with rho != 0 has no regime-feedback solution; use a separable variant".into(),
            ));
        }
        comments.push(format!("xi_method=MC paths={} (path-averaged value)", c.solver.n_paths_xi));
        let mut rows = Vec::with_capacity(times.len() * p.n_states());
        for &t in &times {
            for e in 0..p.n_states() {
                let q = ValueQuery::new(t, c.initial.v0, c.initial.x0, e)?;
                let est = value_mmh_general(p, &c.chain, &q, c.solver.n_paths_xi, c.solver.seed)?;
                rows.push(SolveRow {
                    t,
                    state: e,
                    phi: est.mean,
                    xi: f64::NAN,
                    coefficient: f64::NAN,
                    strategy: optimal_strategy(p, t, e)?,
                });
            }
        }
        rows
    };
    let mut w = output(out)?;
    write_solve_csv(&mut w, &rows, &comments)?;
    w.flush()?;
    Ok(())
}

pub struct SimulateArgs {
    pub config: PathBuf,
    pub paths: Option<usize>,
    pub steps_per_year: Option<usize>,
    pub strategy: String,
    pub out: Option<PathBuf>,
    pub hist_out: Option<PathBuf>,
    pub bins: usize,
    pub overflow_at: Option<f64>,
    pub dump: Option<PathBuf>,
}

fn hist_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    out.with_file_name(format!("{stem}_hist{ext}"))
}

fn estimate_fields(est: &McEstimate) -> (String, String) {
    let se = if est.std_err.is_nan() { String::new() } else { format!("{:.16e}", est.std_err) };
    (format!("{:.16e}", est.mean), se)
}

pub fn simulate(args: &SimulateArgs) -> CliResult {
    let loaded = load(&args.config)?;
    let c = &loaded.config;
    require_valid(c)?;
    if args.bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let overflow_at = args.overflow_at.unwrap_or(10.0 * c.initial.v0);
    if !(overflow_at > 0.0) {
        return Err(CliError::Usage("--overflow-at must be positive".into()));
    }
    let strategy = parse_strategy(&args.strategy, c)?;
    let cfg = sim_config(c, args.paths, args.steps_per_year)?;
    let start = Instant::now();
    let bundle = simulate_paths(&c.model, &c.chain, strategy.as_ref(), &cfg)?;
    let est = expected_utility_mc(&bundle, c.model.delta());
    let runtime = start.elapsed().as_secs_f64();
    let comments = vec![loaded.comment(cfg.seed), format!("strategy={}", args.strategy)];

    let mut w = output(args.out.as_deref())?;
    for line in &comments {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "n_paths,steps_per_year,mean,std_err,runtime_s")?;
    let (mean, se) = estimate_fields(&est);
    writeln!(w, "{},{},{mean},{se},{runtime:.16e}", cfg.n_paths, cfg.steps_per_year)?;
    w.flush()?;

    let hist_target = args.hist_out.clone().or_else(|| args.out.as_deref().map(hist_path));
    if let Some(target) = hist_target {
        let edges: Vec<f64> = (0..=args.bins)
            .map(|k| overflow_at * k as f64 / args.bins as f64)
            .collect();
        let hist = terminal_wealth_histogram(&bundle, &edges)?;
        let mut h = output(Some(&target))?;
        hist.write_csv(&mut h, &comments)?;
        h.flush()?;
    }
    if let Some(dump) = &args.dump {
        let mut d = output(Some(dump))?;
        write_path_dump(&bundle, &mut d)?;
        d.flush()?;
    }
    Ok(())
}

pub fn compare(path: &Path, paths: Option<usize>, steps: Option<usize>, out: Option<&Path>) -> CliResult {
    let loaded = load(path)?;
    let c = &loaded.config;
    require_valid(c)?;
    let p = &c.model;
    let q = ValueQuery::new(0.0, c.initial.v0, c.initial.x0, c.initial.state)?;
    let mut rows: Vec<(String, McEstimate)> = Vec::new();
    let exact = if p.variant().is_separable() {
        let ups = separable_integrand(p)?;
        let xi = xi_ode(&c.chain, &ups, c.solver.grid_step)?;
        let ode = separable_value(p, &q, xi.value(0.0, q.state))?;
        rows.push(("formula_ode".into(), McEstimate { mean: ode, std_err: 0.0, n: 1 }));
        let est = xi_mc(&c.chain, &ups, 0.0, q.state, c.solver.n_paths_xi, c.solver.seed)?;
        let scale = separable_value(p, &q, 1.0)?;
        rows.push((
            "formula_mc_xi".into(),
            McEstimate {
                mean: scale * est.mean,
                std_err: scale.abs() * est.std_err,
                n: est.n,
            },
        ));
        ode
    } else if p.variant() == Variant::Mmh && p.rho() == 0.0 {
        let est = value_mmh_general(p, &c.chain, &q, c.solver.n_paths_xi, c.solver.seed)?;
        rows.push(("formula_path_average".into(), est));
        est.mean
    } else {
        return Err(CliError::Failure(
            "the general model with rho != 0 has no closed-form value to compare".into(),
        ));
    };
    let cfg = sim_config(c, paths, steps)?;
    let bundle = simulate_paths(p, &c.chain, &OptimalStrategy::new(p)?, &cfg)?;
    rows.push(("simulation".into(), expected_utility_mc(&bundle, p.delta())));

    let mut w = output(out)?;
    writeln!(w, "# {}", loaded.comment(cfg.seed))?;
    writeln!(w, "# simulation: {} paths, {} steps per year", cfg.n_paths, cfg.steps_per_year)?;
    writeln!(w, "method,value,std_err,z_vs_formula")?;
    for (name, est) in &rows {
        let (mean, se) = estimate_fields(est);
        let z = if est.std_err > 0.0 {
            format!("{:.16e}", est.z_score(exact))
        } else {
            String::new()
        };
        writeln!(w, "{name},{mean},{se},{z}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn diagnose(
    path: &Path,
    checkpoints: Option<Vec<f64>>,
    strategy: &str,
    paths: Option<usize>,
    steps: Option<usize>,
    out: Option<&Path>,
) -> CliResult {
    let loaded = load(path)?;
    let c = &loaded.config;
    require_valid(c)?;
    separable_only(c, "diagnose")?;
    let horizon = c.model.horizon();
    let checkpoints =
        checkpoints.unwrap_or_else(|| (0..=horizon.floor() as usize).map(|k| k as f64).collect());
    if checkpoints.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
        return Err(CliError::Usage(format!("checkpoints must lie in [0, {horizon}]")));
    }
    let rule = parse_strategy(strategy, c)?;
    let cfg = sim_config(c, paths, steps)?;
    let xi = xi_ode(&c.chain, &separable_integrand(&c.model)?, c.solver.grid_step)?;
    let points = martingale_diagnostic(&c.model, &c.chain, rule.as_ref(), &xi, &cfg, &checkpoints)?;
    let mut w = output(out)?;
    write_martingale_csv(&mut w, &points, &[loaded.comment(cfg.seed), format!("strategy={strategy}")])?;
    w.flush()?;
    Ok(())
}
