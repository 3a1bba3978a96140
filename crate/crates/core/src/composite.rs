//! Collective atomic mode coupled to a lossy cavity without the rotating-wave
//! approximation.
//!
//! Ten second moments close under the composite generator (its Hamiltonian is
//! bilinear and its jump operators are linear). The authoritative equations
//! of motion `ẋ = M x + b` are extracted numerically from the generator; the
//! hand-written ten-equation list is kept alongside for comparison, together
//! with the closed-form cavity emission rate valid when all rates are small
//! compared to the two frequencies.

use nalgebra::{DMatrix, SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_finite, Error, Result};
use crate::master::{build_composite_generator_with, CompositeLadders, DensityMatrix, RecyclingOrder};
use crate::operators::{FockSpace, LinearOperator, C64, DEFAULT_MAX_DIM};

pub type MomentMatrix = SMatrix<f64, 10, 10>;
pub type MomentVector = SVector<f64, 10>;

/// Cavity and collective-atom parameters. `ζ = κ + NΓ` is always derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeParams {
    /// Shifted cavity frequency `ω̃_c`.
    pub omega_c: f64,
    /// Shifted atomic frequency `ω̃_0`.
    pub omega_0: f64,
    /// Cavity decay rate `κ`.
    pub kappa: f64,
    /// Single-atom decay rate `Γ`.
    pub gamma: f64,
    /// Atom number `N`.
    pub n: u64,
    /// Real atom-cavity coupling `g_c`.
    pub g_c: f64,
}

impl CompositeParams {
    pub fn new(omega_c: f64, omega_0: f64, kappa: f64, gamma: f64, n: u64, g_c: f64) -> Result<Self> {
        ensure_finite("composite parameters", &[omega_c, omega_0, kappa, gamma, g_c])?;
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, reason: format!("{v} must be positive") })
            }
        };
        positive("omega_c", omega_c)?;
        positive("omega_0", omega_0)?;
        if kappa < 0.0 {
            return Err(Error::InvalidParameter { name: "kappa", reason: format!("{kappa} < 0") });
        }
        if gamma < 0.0 {
            return Err(Error::InvalidParameter { name: "Gamma", reason: format!("{gamma} < 0") });
        }
        if n < 1 {
            return Err(Error::InvalidParameter { name: "N", reason: "at least one atom".into() });
        }
        Ok(Self { omega_c, omega_0, kappa, gamma, n, g_c })
    }

    /// `ω̃_0 = ω̃_c = 100`, `κ = 0.1`, `Γ = 10⁻³`, `N = 100`, `g_c = 0.1`.
    pub fn resonant_fixture() -> Self {
        Self { omega_c: 100.0, omega_0: 100.0, kappa: 0.1, gamma: 1e-3, n: 100, g_c: 0.1 }
    }

    pub fn collective_decay(&self) -> f64 {
        self.n as f64 * self.gamma
    }

    /// `ζ = κ + NΓ`.
    pub fn zeta(&self) -> f64 {
        self.kappa + self.collective_decay()
    }

    /// `√N g_c`.
    pub fn collective_coupling(&self) -> f64 {
        (self.n as f64).sqrt() * self.g_c
    }
}

pub const MOMENT_NAMES: [&str; 10] =
    ["mu1", "mu2", "eta1", "eta2", "eta3", "eta4", "xi1", "xi2", "xi3", "xi4"];

/// `μ1 = <c†c>`, `μ2 = <S⁺S⁻>`,
/// `η1,2 = i<(S⁻ ± S⁺)(c ∓ c†)>`, `η3,4 = <(S⁻ ∓ S⁺)(c ∓ c†)>`,
/// `ξ1 = i<c² − c†²>`, `ξ2 = <c² + c†²>`, `ξ3 = i<S⁻² − S⁺²>`, `ξ4 = <S⁻² + S⁺²>`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompositeMoments {
    pub mu1: f64,
    pub mu2: f64,
    pub eta: [f64; 4],
    pub xi: [f64; 4],
}

impl CompositeMoments {
    pub fn from_vector(v: &MomentVector) -> Self {
        Self {
            mu1: v[0],
            mu2: v[1],
            eta: [v[2], v[3], v[4], v[5]],
            xi: [v[6], v[7], v[8], v[9]],
        }
    }

    pub fn to_vector(&self) -> MomentVector {
        MomentVector::from_column_slice(&[
            self.mu1, self.mu2, self.eta[0], self.eta[1], self.eta[2], self.eta[3], self.xi[0],
            self.xi[1], self.xi[2], self.xi[3],
        ])
    }
}

/// The ten right-hand sides in their hand-derived form.
pub fn moment_derivatives_printed(m: &CompositeMoments, p: &CompositeParams) -> CompositeMoments {
    let sys = printed_system(p);
    CompositeMoments::from_vector(&(sys.matrix * m.to_vector() + sys.offset))
}

/// Hand-derived system as `(M, b)`.
pub fn printed_system(p: &CompositeParams) -> LinearMomentSystem {
    let g = p.collective_coupling();
    let (w0, wc, k, ng) = (p.omega_0, p.omega_c, p.kappa, p.collective_decay());
    let hz = 0.5 * p.zeta();
    let mut m = MomentMatrix::zeros();
    let mut b = MomentVector::zeros();
    const MU1: usize = 0;
    const MU2: usize = 1;
    const E1: usize = 2;
    const E2: usize = 3;
    const E3: usize = 4;
    const E4: usize = 5;
    const X1: usize = 6;
    const X2: usize = 7;
    const X3: usize = 8;
    const X4: usize = 9;

    m[(MU1, E1)] = g;
    m[(MU1, MU1)] = -k;

    m[(MU2, E2)] = g;
    m[(MU2, MU2)] = -ng;

    b[E1] = 2.0 * g;
    m[(E1, MU2)] = 4.0 * g;
    m[(E1, X4)] = 2.0 * g;
    m[(E1, E3)] = w0;
    m[(E1, E4)] = wc;
    m[(E1, E1)] = -hz;

    b[E2] = 2.0 * g;
    m[(E2, MU1)] = 4.0 * g;
    m[(E2, X2)] = 2.0 * g;
    m[(E2, E4)] = w0;
    m[(E2, E3)] = wc;
    m[(E2, E2)] = -hz;

    m[(E3, X1)] = -2.0 * g;
    m[(E3, X3)] = -2.0 * g;
    m[(E3, E1)] = -w0;
    m[(E3, E2)] = -wc;
    m[(E3, E3)] = -hz;

    m[(E4, E2)] = -w0;
    m[(E4, E1)] = -wc;
    m[(E4, E4)] = -hz;

    m[(X1, E4)] = 2.0 * g;
    m[(X1, X2)] = 2.0 * wc;
    m[(X1, X1)] = -k;

    m[(X2, E1)] = -2.0 * g;
    m[(X2, X1)] = -2.0 * wc;
    m[(X2, X2)] = -k;

    m[(X3, E4)] = 2.0 * g;
    m[(X3, X4)] = 2.0 * w0;
    m[(X3, X3)] = -ng;

    m[(X4, E2)] = -2.0 * g;
    m[(X4, X3)] = -2.0 * w0;
    m[(X4, X4)] = -ng;

    LinearMomentSystem { matrix: m, offset: b }
}

/// Linear moment dynamics `ẋ = M x + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearMomentSystem {
    pub matrix: MomentMatrix,
    pub offset: MomentVector,
}

impl LinearMomentSystem {
    pub fn derivatives(&self, m: &CompositeMoments) -> CompositeMoments {
        CompositeMoments::from_vector(&(self.matrix * m.to_vector() + self.offset))
    }

    /// `x* = −M⁻¹ b`.
    pub fn stationary(&self) -> Result<CompositeMoments> {
        let lu = self.matrix.lu();
        let u = lu.u();
        let pivots = u.diagonal().map(f64::abs);
        if !(pivots.min() > 1e-14 * pivots.max()) {
            return Err(Error::NoStationaryState("moment matrix is singular".into()));
        }
        let x = lu
            .solve(&(-self.offset))
            .ok_or_else(|| Error::NoStationaryState("moment matrix is singular".into()))?;
        let residual = (self.matrix * x + self.offset).norm();
        if residual > 1e-10 * self.offset.norm() {
            return Err(Error::NoStationaryState(format!("ill-conditioned moment solve (residual {residual:e})")));
        }
        Ok(CompositeMoments::from_vector(&x))
    }

    /// Exact solution at time `t` from `x0`, via the exponential of the
    /// augmented matrix `[[M, b], [0, 0]]`.
    pub fn propagate(&self, x0: &CompositeMoments, t: f64) -> CompositeMoments {
        let mut aug = DMatrix::<f64>::zeros(11, 11);
        for r in 0..10 {
            for c in 0..10 {
                aug[(r, c)] = self.matrix[(r, c)] * t;
            }
            aug[(r, 10)] = self.offset[r] * t;
        }
        let prop = aug.exp();
        let x = x0.to_vector();
        let mut out = MomentVector::zeros();
        for r in 0..10 {
            let mut acc = prop[(r, 10)];
            for c in 0..10 {
                acc += prop[(r, c)] * x[c];
            }
            out[r] = acc;
        }
        CompositeMoments::from_vector(&out)
    }
}

/// The ten moment observables on the cavity ⊗ atom space.
pub fn moment_observables(ladders: &CompositeLadders) -> [LinearOperator; 10] {
    let i = C64::new(0.0, 1.0);
    let (c, s) = (&ladders.c, &ladders.s);
    let (cd, sd) = (c.adjoint(), s.adjoint());
    let c2 = c * c;
    let cd2 = &cd * &cd;
    let s2 = s * s;
    let sd2 = &sd * &sd;
    let s_plus_sum = s + &sd;
    let s_minus_diff = s - &sd;
    let c_diff = c - &cd;
    let c_sum = c + &cd;
    [
        &cd * c,
        &sd * s,
        (&s_plus_sum * &c_diff).scale(i),
        (&s_minus_diff * &c_sum).scale(i),
        &s_minus_diff * &c_diff,
        &s_plus_sum * &c_sum,
        (&c2 - &cd2).scale(i),
        &c2 + &cd2,
        (&s2 - &sd2).scale(i),
        &s2 + &sd2,
    ]
}

pub fn moments_of(rho: &DensityMatrix, ladders: &CompositeLadders) -> CompositeMoments {
    let obs = moment_observables(ladders);
    let mut v = MomentVector::zeros();
    for (k, o) in obs.iter().enumerate() {
        v[k] = rho.expectation(o).re;
    }
    CompositeMoments::from_vector(&v)
}

/// Extracts `(M, b)` from the generator's Heisenberg action on probe
/// operators supported strictly below the Fock cutoffs, where the truncated
/// generator coincides with the untruncated one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentExtractor {
    /// Fock cutoff of each mode; probes live on levels `0..cutoff`.
    pub cutoff: usize,
    pub probes: usize,
    pub seed: u64,
    /// Largest admissible least-squares residual, relative.
    pub closure_tol: f64,
}

impl Default for MomentExtractor {
    fn default() -> Self {
        Self { cutoff: 3, probes: 24, seed: 0x5eed, closure_tol: 1e-9 }
    }
}

impl MomentExtractor {
    pub fn extract(&self, p: &CompositeParams) -> Result<LinearMomentSystem> {
        let space = FockSpace::new(self.cutoff)?;
        let gen = build_composite_generator_with(p, &space, &space, RecyclingOrder::Corrected, DEFAULT_MAX_DIM)?;
        let ladders = CompositeLadders::new(&space, &space, DEFAULT_MAX_DIM)?;
        let heisenberg: Vec<DMatrix<C64>> = moment_observables(&ladders)
            .iter()
            .map(|o| gen.adjoint_apply(o.matrix()))
            .collect();
        let observables = moment_observables(&ladders);

        let dim = space.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let rows = self.probes.max(11);
        let mut design = DMatrix::<f64>::zeros(rows, 11);
        let mut target = DMatrix::<f64>::zeros(rows, 10);
        for r in 0..rows {
            let probe = DMatrix::from_fn(dim * dim, dim * dim, |a, b| {
                let below = |idx: usize| idx / dim < self.cutoff && idx % dim < self.cutoff;
                if below(a) && below(b) {
                    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            let probe = (&probe + probe.adjoint()) * C64::new(0.5, 0.0);
            let probe = DensityMatrix::from_matrix_unchecked(probe);
            for (k, o) in observables.iter().enumerate() {
                design[(r, k)] = probe.expectation(o).re;
            }
            design[(r, 10)] = probe.trace().re;
            for (k, h) in heisenberg.iter().enumerate() {
                let lifted = LinearOperator::from_matrix(h.clone())?;
                target[(r, k)] = probe.expectation(&lifted).re;
            }
        }

        let svd = design.clone().svd(true, true);
        let solution = svd
            .solve(&target, 1e-12)
            .map_err(|_| Error::ClosureResidual { residual: f64::NAN })?;
        let residual = (&design * &solution - &target).norm() / target.norm().max(1e-300);
        if !(residual <= self.closure_tol) {
            return Err(Error::ClosureResidual { residual });
        }
        // entries this far below the largest coefficient are least-squares noise
        let floor = 1e-13 * solution.amax();
        let snap = |x: f64| if x.abs() <= floor { 0.0 } else { x };
        let mut matrix = MomentMatrix::zeros();
        let mut offset = MomentVector::zeros();
        for k in 0..10 {
            for j in 0..10 {
                matrix[(k, j)] = snap(solution[(j, k)]);
            }
            offset[k] = snap(solution[(10, k)]);
        }
        Ok(LinearMomentSystem { matrix, offset })
    }
}

/// Moment system extracted from the trace-preserving generator.
pub fn derived_system(p: &CompositeParams) -> Result<LinearMomentSystem> {
    MomentExtractor::default().extract(p)
}

/// The ten right-hand sides from the generator's Heisenberg action.
pub fn moment_derivatives_derived(m: &CompositeMoments, p: &CompositeParams) -> Result<CompositeMoments> {
    Ok(derived_system(p)?.derivatives(m))
}

/// Stationary moments of the derived system.
pub fn stationary_moments(p: &CompositeParams) -> Result<CompositeMoments> {
    derived_system(p)?.stationary()
}

/// Stationary cavity emission rate `κ μ1*` from the moment equations.
pub fn cavity_rate_from_moments(p: &CompositeParams) -> Result<f64> {
    Ok(p.kappa * stationary_moments(p)?.mu1)
}

/// Closed-form stationary cavity emission rate
///
/// ```text
///            N ζ κ g² [8ζg² + ζ²Γ + 4Γ(ω̃_0 − ω̃_c)²]
/// I_κ = ───────────────────────────────────────────────────────────────────
///       16ζ²g²ω̃_0ω̃_c + 2ζ²κΓ(ω̃_0² + ω̃_c²) + 4κΓ(ω̃_0² − ω̃_c²)²
/// ```
pub fn cavity_rate_closed_form(p: &CompositeParams) -> Result<f64> {
    let n = p.n as f64;
    let (g2, z, k, gm) = (p.g_c * p.g_c, p.zeta(), p.kappa, p.gamma);
    let (w0, wc) = (p.omega_0, p.omega_c);
    let numerator = n * z * k * g2 * (8.0 * z * g2 + z * z * gm + 4.0 * gm * (w0 - wc).powi(2));
    let denominator = 16.0 * z * z * g2 * w0 * wc
        + 2.0 * z * z * k * gm * (w0 * w0 + wc * wc)
        + 4.0 * k * gm * (w0 * w0 - wc * wc).powi(2);
    if denominator == 0.0 {
        return Err(Error::DegenerateParameters("closed-form denominator vanishes".into()));
    }
    Ok(numerator / denominator)
}

/// Default threshold of [`regime_check`].
pub const DEFAULT_REGIME_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeDiagnostics {
    /// `(NΓ, √N g_c, κ) / min(ω̃_0, ω̃_c)`.
    pub ratios: [f64; 3],
    pub threshold: f64,
    pub pass: bool,
}

impl RegimeDiagnostics {
    pub fn worst(&self) -> f64 {
        self.ratios.iter().cloned().fold(0.0, f64::max)
    }
}

/// Checks `NΓ, √N g_c, κ ≪ ω̃_0, ω̃_c` at the given threshold (inclusive).
pub fn regime_check(p: &CompositeParams, threshold: f64) -> RegimeDiagnostics {
    let w = p.omega_0.min(p.omega_c);
    let ratios = [p.collective_decay() / w, p.collective_coupling().abs() / w, p.kappa / w];
    let pass = ratios.iter().all(|&r| r <= threshold);
    RegimeDiagnostics { ratios, threshold, pass }
}

/// One coefficient where the hand-derived and generator-derived systems
/// disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub equation: &'static str,
    /// A moment name, or `"1"` for the constant term.
    pub term: &'static str,
    pub printed: f64,
    pub derived: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyReport {
    pub params: CompositeParams,
    pub entries: Vec<Discrepancy>,
    /// Largest `|ẋ_printed − ẋ_derived|` over the random sample points.
    pub max_rhs_deviation: [f64; 10],
    pub samples: usize,
}

impl DiscrepancyReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let p = &self.params;
        out.push_str(&format!(
            "# printed vs derived moment equations\n# omega_c={} omega_0={} kappa={} Gamma={} N={} g_c={}\n",
            p.omega_c, p.omega_0, p.kappa, p.gamma, p.n, p.g_c
        ));
        if self.entries.is_empty() {
            out.push_str("no coefficient discrepancies\n");
        }
        for d in &self.entries {
            out.push_str(&format!(
                "d{}/dt  term {:<5} printed {:>+.6e}  derived {:>+.6e}\n",
                d.equation, d.term, d.printed, d.derived
            ));
        }
        out.push_str(&format!("# max |rhs deviation| over {} random points\n", self.samples));
        for (name, dev) in MOMENT_NAMES.iter().zip(self.max_rhs_deviation) {
            out.push_str(&format!("{name:<5} {dev:.6e}\n"));
        }
        out
    }
}

/// Compares the hand-derived equations with the generator-derived ones,
/// coefficient by coefficient and on `samples` random moment vectors.
pub fn printed_vs_derived(p: &CompositeParams, samples: usize, seed: u64) -> Result<DiscrepancyReport> {
    let printed = printed_system(p);
    let derived = derived_system(p)?;
    let scale = derived.matrix.amax().max(derived.offset.amax()).max(1.0);
    let tol = 1e-9 * scale;
    let mut entries = Vec::new();
    for (r, equation) in MOMENT_NAMES.iter().enumerate() {
        for (c, term) in MOMENT_NAMES.iter().enumerate() {
            let (a, b) = (printed.matrix[(r, c)], derived.matrix[(r, c)]);
            if (a - b).abs() > tol {
                entries.push(Discrepancy { equation, term, printed: a, derived: b });
            }
        }
        let (a, b) = (printed.offset[r], derived.offset[r]);
        if (a - b).abs() > tol {
            entries.push(Discrepancy { equation: MOMENT_NAMES[r], term: "1", printed: a, derived: b });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rhs_deviation = [0.0; 10];
    for _ in 0..samples {
        let x = MomentVector::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let m = CompositeMoments::from_vector(&x);
        let dev = printed.derivatives(&m).to_vector() - derived.derivatives(&m).to_vector();
        for k in 0..10 {
            max_rhs_deviation[k] = f64::max(max_rhs_deviation[k], dev[k].abs());
        }
    }
    Ok(DiscrepancyReport { params: *p, entries, max_rhs_deviation, samples })
}
