//! Stationary emission of a single bosonic system.
//!
//! Three expectation values close under the single-system generator:
//! `μ1 = <s⁺s⁻>`, `ξ1 = i<s⁻² − s⁺²>` and `ξ2 = <s⁻² + s⁺²>`, with
//!
//! ```text
//! μ̇1 = −(γ_A − γ_B) μ1 + γ_B
//! ξ̇1 = −(γ_A − γ_B) ξ1 + 2ω̃ ξ2
//! ξ̇2 = −(γ_A − γ_B) ξ2 − 2ω̃ ξ1 − 2γ_C
//! ```

use nalgebra::{Matrix2, Matrix3, Vector2};

use crate::error::{Error, Result};
use crate::master::{DensityMatrix, SingleParams};
use crate::operators::{annihilation, FockSpace, LinearOperator, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleMoments {
    pub mu1: f64,
    pub xi1: f64,
    pub xi2: f64,
}

impl SingleMoments {
    pub fn as_array(&self) -> [f64; 3] {
        [self.mu1, self.xi1, self.xi2]
    }
}

/// Right-hand sides of the three moment equations.
pub fn moment_derivatives(m: &SingleMoments, p: &SingleParams) -> SingleMoments {
    let damping = p.gamma_a - p.gamma_b;
    SingleMoments {
        mu1: -damping * m.mu1 + p.gamma_b,
        xi1: -damping * m.xi1 + 2.0 * p.omega * m.xi2,
        xi2: -damping * m.xi2 - 2.0 * p.omega * m.xi1 - 2.0 * p.gamma_c,
    }
}

/// Jacobian of [`moment_derivatives`], ordered `(μ1, ξ1, ξ2)`.
pub fn jacobian(p: &SingleParams) -> Matrix3<f64> {
    let d = p.gamma_a - p.gamma_b;
    let w = 2.0 * p.omega;
    Matrix3::new(-d, 0.0, 0.0, 0.0, -d, w, 0.0, -w, -d)
}

fn require_stable(p: &SingleParams) -> Result<()> {
    if p.gamma_a > p.gamma_b {
        Ok(())
    } else {
        Err(Error::NoStationaryState(format!(
            "gamma_a = {} must exceed gamma_b = {}",
            p.gamma_a, p.gamma_b
        )))
    }
}

/// Fixed point of the moment equations.
pub fn stationary_moments(p: &SingleParams) -> Result<SingleMoments> {
    require_stable(p)?;
    let d = p.gamma_a - p.gamma_b;
    let mu1 = p.gamma_b / d;
    let rotation = Matrix2::new(-d, 2.0 * p.omega, -2.0 * p.omega, -d);
    let rhs = Vector2::new(0.0, 2.0 * p.gamma_c);
    let xi = rotation
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoStationaryState("singular squeezing block".into()))?;
    Ok(SingleMoments { mu1, xi1: xi[0], xi2: xi[1] })
}

/// `I_γ = <γ_A s⁺s⁻ + γ_B s⁻s⁺ + γ_C (s⁺² + s⁻²)>` for bosonic `s`, where
/// `<s⁻s⁺> = μ1 + 1`.
pub fn emission_functional(m: &SingleMoments, p: &SingleParams) -> f64 {
    p.gamma_a * m.mu1 + p.gamma_b * (m.mu1 + 1.0) + p.gamma_c * m.xi2
}

/// `I_γ = 2γ_Aγ_B/(γ_A − γ_B) − 2γ_C²(γ_A − γ_B)/(4ω̃² + (γ_A − γ_B)²)`.
///
/// The value is signed: large `γ_C` at small `ω̃` makes it negative.
pub fn stationary_rate_closed_form(p: &SingleParams) -> Result<f64> {
    require_stable(p)?;
    let d = p.gamma_a - p.gamma_b;
    Ok(2.0 * p.gamma_a * p.gamma_b / d
        - 2.0 * p.gamma_c * p.gamma_c * d / (4.0 * p.omega * p.omega + d * d))
}

/// The observables `(s⁺s⁻, i(s⁻² − s⁺²), s⁻² + s⁺²)` on a truncated mode.
pub fn moment_observables(space: &FockSpace) -> [LinearOperator; 3] {
    let sm = annihilation(space);
    let sp = sm.adjoint();
    let sm2 = &sm * &sm;
    let sp2 = &sp * &sp;
    [
        &sp * &sm,
        (&sm2 - &sp2).scale(C64::new(0.0, 1.0)),
        &sm2 + &sp2,
    ]
}

pub fn moments_of(rho: &DensityMatrix, space: &FockSpace) -> SingleMoments {
    let [n, x1, x2] = moment_observables(space);
    SingleMoments {
        mu1: rho.expectation(&n).re,
        xi1: rho.expectation(&x1).re,
        xi2: rho.expectation(&x2).re,
    }
}
