//! Self-checks run on the built-in fixtures.
//!
//! Each check compares two independent routes to the same quantity and
//! reports the measured deviation next to its tolerance.

use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::composite::{
    cavity_rate_closed_form, derived_system, moments_of, printed_vs_derived, regime_check, CompositeParams,
    DEFAULT_REGIME_THRESHOLD,
};
use crate::error::Result;
use crate::master::{
    build_composite_generator, build_composite_generator_with, build_single_generator, emission_rate, integrate,
    integrate_sampled, steady_state, CompositeLadders, DensityMatrix, IntegrationOptions, RecyclingOrder,
    SingleParams,
};
use crate::operators::{annihilation, contraction_error, creation, FockSpace, C64, DEFAULT_MAX_DIM};
use crate::single::{emission_functional, moments_of as single_moments_of, stationary_moments, stationary_rate_closed_form};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn within(name: &'static str, measured: f64, tol: f64, what: &str) -> Self {
        Self { name, pass: measured <= tol, detail: format!("{what} = {measured:.3e} (tolerance {tol:.1e})") }
    }

    fn failed(name: &'static str, err: impl fmt::Display) -> Self {
        Self { name, pass: false, detail: format!("error: {err}") }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn guard(name: &'static str, f: impl FnOnce() -> Result<Check>) -> Check {
    f().unwrap_or_else(|e| Check::failed(name, e))
}

/// Closed-form single-system rate against the emission functional at the
/// stationary moments, over random parameter draws.
pub fn single_closed_form(draws: usize, seed: u64) -> Check {
    const NAME: &str = "single closed form vs moment functional";
    guard(NAME, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let mut done = 0;
        while done < draws {
            let ga = rng.gen_range(0.0..10.0);
            let gb = rng.gen_range(0.0..10.0);
            if !(gb < ga) {
                continue;
            }
            let p = SingleParams::new(ga, gb, rng.gen_range(-5.0..5.0), rng.gen_range(0.0..100.0))?;
            let closed = stationary_rate_closed_form(&p)?;
            let functional = emission_functional(&stationary_moments(&p)?, &p);
            worst = worst.max((closed - functional).abs() / closed.abs().max(f64::MIN_POSITIVE));
            done += 1;
        }
        Ok(Check::within(NAME, worst, 1e-10, &format!("max relative deviation over {draws} draws")))
    })
}

/// Master-equation steady state of a thermal-like single system against the
/// moment solution (`<s⁺s⁻> = 1/9`, `I_γ = 2/9`).
pub fn single_steady_state() -> Check {
    const NAME: &str = "single master steady state";
    guard(NAME, || {
        let p = SingleParams::new(1.0, 0.1, 0.0, 1.0)?;
        let space = FockSpace::new(12)?;
        let gen = build_single_generator(&p, &space);
        let rho = steady_state(&gen)?;
        let mu1 = single_moments_of(&rho, &space).mu1;
        let rate = emission_functional(&crate::single::SingleMoments { mu1, xi1: 0.0, xi2: 0.0 }, &p);
        let closed = stationary_rate_closed_form(&p)?;
        let dev_mu = (mu1 - 1.0 / 9.0).abs();
        let dev_rate = (rate - closed).abs().max((closed - 2.0 / 9.0).abs());
        Ok(Check {
            name: NAME,
            pass: dev_mu <= 1e-7 && dev_rate <= 1e-6,
            detail: format!("|mu1 - 1/9| = {dev_mu:.3e} (1e-7), |I - 2/9| = {dev_rate:.3e} (1e-6)"),
        })
    })
}

/// Closed-form cavity rate, moment linear solve, and density-matrix steady
/// state at the resonant fixture.
pub fn composite_three_way(cutoff: usize) -> Check {
    const NAME: &str = "composite three-way agreement";
    guard(NAME, || {
        let p = CompositeParams::resonant_fixture();
        let closed = cavity_rate_closed_form(&p)?;
        let moment = p.kappa * derived_system(&p)?.stationary()?.mu1;
        let space = FockSpace::new(cutoff)?;
        let gen = build_composite_generator(&p, &space, &space)?;
        let rho = steady_state(&gen)?;
        let dm = emission_rate(&rho, &gen)?.cavity.unwrap_or(0.0);
        let saturated = rho.top_level_populations(gen.factors()).iter().any(|&x| x > 1e-6);
        let dev_closed = relative(closed, moment);
        let dev_dm = relative(dm, moment);
        Ok(Check {
            name: NAME,
            pass: (closed - 5.0e-6).abs() <= 0.005 * 5.0e-6 && dev_closed <= 1e-2 && dev_dm <= 1e-5 && !saturated,
            detail: format!(
                "closed {closed:.6e}, moment {moment:.6e} (rel {dev_closed:.2e}, 1e-2), density matrix {dm:.6e} (rel {dev_dm:.2e}, 1e-5)"
            ),
        })
    })
}

/// The recycling order `S⁻ρS⁺` preserves the trace; the order `S⁺ρS⁻`
/// gains exactly `NΓ Tr ρ` when `ρ` has no weight on the top atomic level.
pub fn recycling_order(seed: u64) -> Check {
    const NAME: &str = "recycling order trace test";
    guard(NAME, || {
        let p = CompositeParams::new(1.0, 1.2, 0.3, 0.05, 10, 0.2)?;
        let space = FockSpace::new(4)?;
        let dim = space.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = DVector::from_fn(dim * dim, |i, _| {
            if i % dim < space.cutoff() {
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let psi = &psi / C64::new(psi.norm(), 0.0);
        let rho = DensityMatrix::pure(&psi)?;
        let fixed = build_composite_generator(&p, &space, &space)?;
        let printed = build_composite_generator_with(&p, &space, &space, RecyclingOrder::AsPrinted, DEFAULT_MAX_DIM)?;
        let fixed_drift = fixed.trace_derivative(rho.matrix()).norm();
        let printed_drift = printed.trace_derivative(rho.matrix());
        let expected = p.collective_decay();
        let dev = (printed_drift - C64::new(expected, 0.0)).norm() / expected.abs();
        Ok(Check {
            name: NAME,
            pass: fixed_drift <= 1e-12 && dev <= 1e-12,
            detail: format!(
                "corrected d(Tr)/dt = {fixed_drift:.2e} (1e-12), printed d(Tr)/dt = {:.6e} vs N*Gamma = {expected:.6e}",
                printed_drift.re
            ),
        })
    })
}

/// Density-matrix moment trajectories against the exact solution of the
/// derived moment system, on the resonant fixture.
pub fn moment_closure(cutoff: usize, samples: usize, horizon: f64, dt: f64) -> Check {
    const NAME: &str = "moment closure trajectories";
    guard(NAME, || {
        let p = CompositeParams::resonant_fixture();
        let space = FockSpace::new(cutoff)?;
        let ladders = CompositeLadders::new(&space, &space, DEFAULT_MAX_DIM)?;
        let gen = build_composite_generator(&p, &space, &space)?;
        let dim = space.dim();
        // cavity (|0> + |1>)/√2, atoms in the vacuum
        let mut psi = DVector::zeros(dim * dim);
        psi[0] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        psi[dim] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let rho0 = DensityMatrix::pure(&psi)?;
        let times: Vec<f64> = (1..=samples).map(|k| horizon * k as f64 / samples as f64).collect();
        let evo = integrate_sampled(&gen, &rho0, &times, dt, &IntegrationOptions::default())?;
        let sys = derived_system(&p)?;
        let x0 = moments_of(&rho0, &ladders);
        let mut worst: f64 = 0.0;
        for (t, rho) in &evo.samples {
            let dm = moments_of(rho, &ladders).to_vector();
            let ode = sys.propagate(&x0, *t).to_vector();
            worst = worst.max((dm - ode).norm() / ode.norm());
        }
        let mut check = Check::within(NAME, worst, 1e-7, &format!("max relative deviation over {samples} samples"));
        if !evo.warnings.is_empty() {
            check.pass = false;
            check.detail.push_str(&format!("; warnings: {:?}", evo.warnings));
        }
        Ok(check)
    })
}

/// Coefficient-level comparison of the hand-derived moment equations with the
/// generator-derived ones.
pub fn printed_equations() -> Check {
    const NAME: &str = "printed vs derived moment equations";
    guard(NAME, || {
        let report = printed_vs_derived(&CompositeParams::resonant_fixture(), 1000, 1)?;
        let worst = report.max_rhs_deviation.iter().cloned().fold(0.0, f64::max);
        Ok(Check {
            name: NAME,
            pass: report.entries.is_empty(),
            detail: format!("{} differing coefficients, max rhs deviation {worst:.2e}", report.entries.len()),
        })
    })
}

/// Closed-form and moment rates agree inside the regime and drift apart past
/// its boundary.
pub fn regime_sweep() -> Check {
    const NAME: &str = "regime sweep";
    guard(NAME, || {
        let mut devs = Vec::new();
        let mut inside = true;
        for g in [0.01, 0.03, 0.1, 0.3, 1.0, 3.0] {
            let p = CompositeParams::new(100.0, 100.0, 0.1, 1e-3, 100, g)?;
            let moment = p.kappa * derived_system(&p)?.stationary()?.mu1;
            let dev = relative(cavity_rate_closed_form(&p)?, moment);
            if regime_check(&p, DEFAULT_REGIME_THRESHOLD).pass {
                inside &= dev <= 1e-2;
            }
            devs.push(dev);
        }
        let monotone = devs.windows(2).all(|w| w[1] > w[0]);
        let listed: Vec<String> = devs.iter().map(|d| format!("{d:.1e}")).collect();
        Ok(Check {
            name: NAME,
            pass: monotone && inside,
            detail: format!("relative deviation for g_c = 0.01..3: {}", listed.join(", ")),
        })
    })
}

/// Relative error of the e(2) contraction at `N = 100`, `l = 1` and the
/// commutator `[S⁻, S⁺]` on the truncated interior.
pub fn contraction() -> Check {
    const NAME: &str = "Dicke contraction";
    guard(NAME, || {
        let err = contraction_error(100, 1)?;
        let space = FockSpace::new(10)?;
        let comm = annihilation(&space).commutator(&creation(&space));
        let mut worst: f64 = 0.0;
        for k in 0..space.cutoff() {
            for j in 0..space.cutoff() {
                let expected = if k == j { 1.0 } else { 0.0 };
                worst = worst.max((comm.get(k, j) - C64::new(expected, 0.0)).norm());
            }
        }
        Ok(Check {
            name: NAME,
            pass: (err - 0.005013).abs() <= 1e-6 && worst <= 1e-14,
            detail: format!("contraction_error(100, 1) = {err:.7}, commutator interior deviation {worst:.1e}"),
        })
    })
}

/// Step-halving error ratio of the fourth-order integrator.
pub fn integrator_order() -> Check {
    const NAME: &str = "integrator order";
    guard(NAME, || {
        let space = FockSpace::new(6)?;
        let gen = build_single_generator(&SingleParams::new(1.0, 0.1, 0.3, 2.0)?, &space);
        let rho0 = DensityMatrix::basis(space.dim(), 1)?;
        let run = |dt: f64| integrate(&gen, &rho0, 1.0, dt).map(|e| e.state);
        let (a, b, c) = (run(0.04)?, run(0.02)?, run(0.01)?);
        let ratio = a.max_abs_diff(&b) / b.max_abs_diff(&c);
        Ok(Check { name: NAME, pass: (ratio - 16.0).abs() <= 2.0, detail: format!("error ratio {ratio:.3} (16 ± 2)") })
    })
}

/// All checks on the default fixtures.
pub fn run_suite() -> Vec<Check> {
    vec![
        single_closed_form(1000, 1),
        single_steady_state(),
        composite_three_way(6),
        recycling_order(2),
        moment_closure(5, 20, 1.0, 1e-4),
        printed_equations(),
        regime_sweep(),
        contraction(),
        integrator_order(),
    ]
}
