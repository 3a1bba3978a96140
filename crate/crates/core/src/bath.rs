//! Second-order environment coefficients for a discretised set of free-field
//! modes.
//!
//! For a system of frequency `ω` coupled to modes `{ω_k, g_k, g̃_k}` over a
//! window `Δt` the no-emission kernel carries four coefficients, each a mode
//! sum of a double time integral `∫₀^Δt dt ∫₀^t dt' exp(i a t + i b t')`:
//!
//! | coefficient | weight      | `a`           | `b`           |
//! |-------------|-------------|---------------|---------------|
//! | `A`         | `g g̃*`      | `ω − ω_k`     | `−(ω − ω_k)`  |
//! | `B`         | `g* g̃`      | `−(ω + ω_k)`  | `ω + ω_k`     |
//! | `C`         | `g g̃`       | `ω − ω_k`     | `ω + ω_k`     |
//! | `D`         | `g* g̃*`     | `−(ω + ω_k)`  | `−(ω − ω_k)`  |
//!
//! All integrals are evaluated in closed form. Near-coincident exponents fall
//! back to Taylor series so that nothing cancels catastrophically.

use num_complex::Complex64 as C64;

use crate::error::{ensure_finite, Error, Result};

/// Below this value of `|ν·Δt|` closed forms switch to their Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-4;

/// Relative tolerance on `|g̃| = |g|`.
const COUPLING_MODULUS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub omega: f64,
    pub g: C64,
    pub g_tilde: C64,
}

/// Discretised environment: frequencies and co-/counter-rotating couplings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModeSet {
    modes: Vec<Mode>,
}

impl ModeSet {
    pub fn new(modes: Vec<Mode>) -> Result<Self> {
        for (i, m) in modes.iter().enumerate() {
            ensure_finite(
                &format!("mode {i}"),
                &[m.omega, m.g.re, m.g.im, m.g_tilde.re, m.g_tilde.im],
            )?;
            if m.omega <= 0.0 {
                return Err(Error::InvalidModeSet(format!(
                    "mode {i}: frequency {} must be positive",
                    m.omega
                )));
            }
            let (mg, mt) = (m.g.norm(), m.g_tilde.norm());
            if (mg - mt).abs() > COUPLING_MODULUS_TOL * mg.max(mt).max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidModeSet(format!(
                    "mode {i}: |g̃| = {mt} differs from |g| = {mg}"
                )));
            }
        }
        Ok(Self { modes })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Parses a whitespace-separated table with columns
    /// `ω  Re g  Im g  Re g̃  Im g̃`. Blank lines and `#` comments are skipped.
    pub fn from_table(text: &str) -> Result<Self> {
        let mut modes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(|tok| tok.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| {
                    Error::InvalidModeSet(format!("line {}: {e}", lineno + 1))
                })?;
            if cols.len() != 5 {
                return Err(Error::InvalidModeSet(format!(
                    "line {}: expected 5 columns, found {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            modes.push(Mode {
                omega: cols[0],
                g: C64::new(cols[1], cols[2]),
                g_tilde: C64::new(cols[3], cols[4]),
            });
        }
        Self::new(modes)
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Multiplies every coupling by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            modes: self
                .modes
                .iter()
                .map(|m| Mode { omega: m.omega, g: m.g * factor, g_tilde: m.g_tilde * factor })
                .collect(),
        }
    }
}

/// The four no-emission coefficients for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathCoefficients {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
    pub dt: f64,
    pub omega: f64,
}

impl BathCoefficients {
    /// Coefficients whose squeezing pair is tied to a real rate `γ_C` through
    /// `C = D* = f·γ_C / 2`.
    pub fn with_gamma_c(a: C64, b: C64, gamma_c: f64, omega: f64, dt: f64) -> Result<Self> {
        check_window(omega, dt)?;
        ensure_finite("gamma_c", &[gamma_c])?;
        let c = 0.5 * f_function(omega, dt) * gamma_c;
        Ok(Self { a, b, c, d: c.conj(), dt, omega })
    }
}

fn check_window(omega: f64, dt: f64) -> Result<()> {
    ensure_finite("system frequency / window", &[omega, dt])?;
    if dt <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("window length {dt} must be positive"),
        });
    }
    Ok(())
}

/// `exp(z) − 1` without cancellation for small `|z|`.
fn exp_m1(z: C64) -> C64 {
    let (s, c) = z.im.sin_cos();
    let em1 = z.re.exp_m1();
    let half_sin = (0.5 * z.im).sin();
    C64::new(em1 * c - 2.0 * half_sin * half_sin, (em1 + 1.0) * s)
}

/// `(exp(z) − 1)/z`.
fn psi1(z: C64) -> C64 {
    if z.norm() < SERIES_THRESHOLD {
        1.0 + z * (0.5 + z / 6.0)
    } else {
        exp_m1(z) / z
    }
}

/// `(exp(z) − 1 − z)/z²`.
fn psi2(z: C64) -> C64 {
    if z.norm() < SERIES_THRESHOLD {
        0.5 + z * (1.0 / 6.0 + z / 24.0)
    } else {
        (exp_m1(z) - z) / (z * z)
    }
}

/// `∫₀¹ s^k exp(p s) ds` for k = 1, 2, 3.
fn power_moments(p: C64) -> [C64; 3] {
    if p.norm() <= 1.0 {
        let mut out = [C64::new(0.0, 0.0); 3];
        for (idx, slot) in out.iter_mut().enumerate() {
            let k = (idx + 1) as f64;
            let mut term = C64::new(1.0, 0.0);
            let mut sum = term / (k + 1.0);
            for j in 1..40 {
                term *= p / j as f64;
                let contrib = term / (k + j as f64 + 1.0);
                sum += contrib;
                if contrib.norm() < 1e-18 * sum.norm() {
                    break;
                }
            }
            *slot = sum;
        }
        out
    } else {
        let ep = p.exp();
        let m0 = psi1(p);
        let m1 = (ep - m0) / p;
        let m2 = (ep - 2.0 * m1) / p;
        let m3 = (ep - 3.0 * m2) / p;
        [m1, m2, m3]
    }
}

/// `∫₀^Δt dt ∫₀^t dt' exp(i a t + i b t')`.
pub fn ordered_double_integral(a: f64, b: f64, dt: f64) -> C64 {
    let p = C64::new(0.0, a * dt);
    let q = C64::new(0.0, b * dt);
    let phi = if q.norm() >= SERIES_THRESHOLD {
        (psi1(p + q) - psi1(p)) / q
    } else {
        let [m1, m2, m3] = power_moments(p);
        m1 + q * (m2 / 2.0 + q * m3 / 6.0)
    };
    phi * dt * dt
}

/// `∫₀^Δt dt ∫₀^t dt' exp(i ν (t − t'))`, equal to
/// `(exp(iνΔt) − 1 − iνΔt)/(−ν²)`.
pub fn stationary_double_integral(nu: f64, dt: f64) -> C64 {
    psi2(C64::new(0.0, nu * dt)) * dt * dt
}

/// Mode sums of the four ordered double integrals.
pub fn coefficients_abcd(modes: &ModeSet, omega: f64, dt: f64) -> Result<BathCoefficients> {
    check_window(omega, dt)?;
    let zero = C64::new(0.0, 0.0);
    let (mut a, mut b, mut c, mut d) = (zero, zero, zero, zero);
    for m in modes.modes() {
        let detuning = omega - m.omega;
        let sum = omega + m.omega;
        a += m.g * m.g_tilde.conj() * stationary_double_integral(detuning, dt);
        b += m.g.conj() * m.g_tilde * stationary_double_integral(-sum, dt);
        c += m.g * m.g_tilde * ordered_double_integral(detuning, sum, dt);
        d += m.g.conj() * m.g_tilde.conj() * ordered_double_integral(-sum, -detuning, dt);
    }
    ensure_finite("bath coefficients", &[a.re, a.im, b.re, b.im, c.re, c.im, d.re, d.im])?;
    Ok(BathCoefficients { a, b, c, d, dt, omega })
}

/// `(γ_A, γ_B) = (2 Re A/Δt, 2 Re B/Δt)`.
pub fn rates_from_coefficients(coef: &BathCoefficients) -> (f64, f64) {
    (2.0 * coef.a.re / coef.dt, 2.0 * coef.b.re / coef.dt)
}

/// `f = exp(iωΔt)·sin(ωΔt)/ω`, which tends to `Δt` as `ω → 0`.
pub fn f_function(omega: f64, dt: f64) -> C64 {
    let x = omega * dt;
    let sinc = if x.abs() < SERIES_THRESHOLD {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    };
    C64::from_polar(dt * sinc, x)
}

/// Coefficients of the emission kernel `Ã s⁻ρs⁺ + B̃ s⁺ρs⁻ + C̃ s⁻ρs⁻ + D̃ s⁺ρs⁺`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeCoefficients {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

pub fn tilde_coefficients(coef: &BathCoefficients) -> TildeCoefficients {
    let phase = C64::from_polar(1.0, 2.0 * coef.omega * coef.dt);
    TildeCoefficients {
        a: C64::new(2.0 * coef.a.re, 0.0),
        b: C64::new(2.0 * coef.b.re, 0.0),
        c: coef.c.conj() + phase.conj() * coef.c,
        d: coef.d.conj() + phase * coef.d,
    }
}
