use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;

use cavity_leak::composite::{
    cavity_rate_closed_form, derived_system, moments_of, regime_check, CompositeParams, RegimeDiagnostics,
    MOMENT_NAMES,
};
use cavity_leak::master::{
    build_composite_generator, integrate_sampled, CompositeLadders, DensityMatrix, IntegrationOptions,
};
use cavity_leak::operators::{FockSpace, DEFAULT_MAX_DIM};
use cavity_leak::single::{stationary_moments, stationary_rate_closed_form};
use cavity_leak::validation::run_suite;

use crate::config::{IntegrateSettings, RunConfig, SweepSpec, Task};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

pub const SWEEP_HEADER: &str =
    "N,omega_c,omega_0,kappa,Gamma,g_c,I_kappa_closed,I_kappa_moment,rel_dev,regime_ratio,regime_pass";

#[derive(Debug)]
pub enum RunError {
    Numerical(cavity_leak::Error),
    Validation { failed: usize },
    Io(io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Numerical(_) => EXIT_NUMERICAL,
            RunError::Validation { .. } => EXIT_VALIDATION,
            RunError::Io(_) => EXIT_USAGE,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Numerical(e) => write!(f, "{e}"),
            RunError::Validation { failed } => write!(f, "{failed} validation check(s) failed"),
            RunError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<cavity_leak::Error> for RunError {
    fn from(e: cavity_leak::Error) -> Self {
        RunError::Numerical(e)
    }
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Twelve significant digits; negative zero prints as zero.
fn sci(x: f64) -> String {
    format!("{:.11e}", x + 0.0)
}

/// `|closed − moment| / |moment|`, zero when both vanish.
fn relative_deviation(closed: f64, moment: f64) -> f64 {
    if closed == moment {
        0.0
    } else {
        (closed - moment).abs() / moment.abs()
    }
}

fn regime_warning(err: &mut dyn Write, p: &CompositeParams, d: &RegimeDiagnostics) -> io::Result<()> {
    writeln!(
        err,
        "warning: outside the small-rate regime at N={} g_c={}: max(N*Gamma, sqrt(N)*g_c, kappa)/min(omega) = {:.3e} > {:.1e}",
        p.n,
        p.g_c,
        d.worst(),
        d.threshold
    )
}

/// Executes `cfg`, writing results to `out` and warnings to `err`.
pub fn run(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), RunError> {
    match &cfg.task {
        Task::Single(p) => {
            let rate = stationary_rate_closed_form(p)?;
            let m = stationary_moments(p)?;
            writeln!(out, "I_gamma = {}", sci(rate))?;
            writeln!(out, "mu1 = {}", sci(m.mu1))?;
            writeln!(out, "xi1 = {}", sci(m.xi1))?;
            writeln!(out, "xi2 = {}", sci(m.xi2))?;
            if rate < 0.0 {
                writeln!(err, "warning: I_gamma is negative; squeezing rate gamma_c dominates at this frequency")?;
            }
        }
        Task::Composite(p) => {
            let closed = cavity_rate_closed_form(p)?;
            let moment = p.kappa * derived_system(p)?.stationary()?.mu1;
            let regime = regime_check(p, cfg.regime_threshold);
            writeln!(out, "I_kappa_closed = {}", sci(closed))?;
            writeln!(out, "I_kappa_moment = {}", sci(moment))?;
            writeln!(out, "rel_dev = {}", sci(relative_deviation(closed, moment)))?;
            writeln!(
                out,
                "regime_ratios = {} {} {}",
                sci(regime.ratios[0]),
                sci(regime.ratios[1]),
                sci(regime.ratios[2])
            )?;
            writeln!(out, "regime_pass = {}", regime.pass)?;
            if !regime.pass {
                regime_warning(err, p, &regime)?;
            }
        }
        Task::Validate => {
            let checks = run_suite();
            let failed = checks.iter().filter(|c| !c.pass).count();
            for c in &checks {
                writeln!(out, "{c}")?;
            }
            writeln!(out, "{} of {} checks passed", checks.len() - failed, checks.len())?;
            if failed > 0 {
                return Err(RunError::Validation { failed });
            }
        }
        Task::Sweep(base, spec) => sweep(base, spec, cfg.regime_threshold, out, err)?,
        Task::Integrate(p, settings) => integrate(p, settings, out, err)?,
    }
    Ok(())
}

struct SweepRow {
    params: CompositeParams,
    closed: f64,
    moment: f64,
    regime: RegimeDiagnostics,
}

fn sweep_point(p: CompositeParams, threshold: f64) -> cavity_leak::Result<SweepRow> {
    let closed = cavity_rate_closed_form(&p)?;
    let moment = p.kappa * derived_system(&p)?.stationary()?.mu1;
    Ok(SweepRow { params: p, closed, moment, regime: regime_check(&p, threshold) })
}

/// One CSV row per sweep point, in input order, evaluated on the current
/// rayon pool.
pub fn sweep(
    base: &CompositeParams,
    spec: &SweepSpec,
    threshold: f64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), RunError> {
    let points: Vec<CompositeParams> = spec.values().into_iter().map(|v| spec.variable.apply(base, v)).collect();
    let rows: Vec<cavity_leak::Result<SweepRow>> = points.into_par_iter().map(|p| sweep_point(p, threshold)).collect();
    writeln!(out, "{SWEEP_HEADER}")?;
    let mut outside = 0;
    for row in rows {
        let row = row?;
        let p = &row.params;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.n,
            sci(p.omega_c),
            sci(p.omega_0),
            sci(p.kappa),
            sci(p.gamma),
            sci(p.g_c),
            sci(row.closed),
            sci(row.moment),
            sci(relative_deviation(row.closed, row.moment)),
            sci(row.regime.worst()),
            row.regime.pass
        )?;
        if !row.regime.pass {
            outside += 1;
        }
    }
    if outside > 0 {
        writeln!(err, "warning: {outside} sweep point(s) outside the small-rate regime (threshold {threshold:.1e})")?;
    }
    Ok(())
}

/// Density-matrix moment time series from the joint vacuum.
pub fn integrate(
    p: &CompositeParams,
    s: &IntegrateSettings,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), RunError> {
    let cavity = FockSpace::new(s.cutoff_cavity)?;
    let atom = FockSpace::new(s.cutoff_atom)?;
    let gen = build_composite_generator(p, &cavity, &atom)?;
    let ladders = CompositeLadders::new(&cavity, &atom, DEFAULT_MAX_DIM)?;
    let rho0 = DensityMatrix::vacuum(gen.dim());
    let times: Vec<f64> = (0..=s.samples).map(|k| s.t_final * k as f64 / s.samples as f64).collect();
    let opts = IntegrationOptions { trace_drift_tol: s.trace_tol, cutoff_tol: s.cutoff_tol, ..Default::default() };
    let evo = integrate_sampled(&gen, &rho0, &times, s.dt, &opts)?;
    writeln!(out, "t,{}", MOMENT_NAMES.join(","))?;
    for (t, rho) in &evo.samples {
        let m = moments_of(rho, &ladders).to_vector();
        let cols: Vec<String> = m.iter().map(|&x| sci(x)).collect();
        writeln!(out, "{},{}", sci(*t), cols.join(","))?;
    }
    for w in &evo.warnings {
        writeln!(err, "warning: {w}")?;
    }
    Ok(())
}
