//! Master-equation generators beyond the rotating-wave approximation, the
//! one-window subensemble kernels, a fixed-step integrator and a direct
//! steady-state solver.
//!
//! Units: ħ = 1, every frequency and rate in the same angular unit.
//!
//! A [`Generator`] stores the conditional Hamiltonian `H_cond` (non-Hermitian)
//! and the recycling terms, and acts as
//!
//! ```text
//! L(ρ) = −i (H_cond ρ − ρ H_cond†) + Σ_k rate_k · left_k ρ right_k†
//! ```

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::bath::{f_function, tilde_coefficients, BathCoefficients, TildeCoefficients};
use crate::composite::CompositeParams;
use crate::error::{ensure_finite, Error, Result};
use crate::operators::{
    annihilation, max_abs_diff, tensor_product_bounded, DickeBasis, FockSpace, LinearOperator,
    C64, DEFAULT_MAX_DIM,
};

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Hermitian, unit-trace, positive (within tolerance) matrix.
///
/// The invariants are checked by [`DensityMatrix::new`]. States produced by
/// the integrator or the steady-state solver are not re-validated for
/// positivity, since some generators here are not of Lindblad form; use
/// [`DensityMatrix::min_eigenvalue`] to monitor them.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    pub const HERMITICITY_TOL: f64 = 1e-12;
    pub const TRACE_TOL: f64 = 1e-10;
    pub const PSD_TOL: f64 = 1e-8;

    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("density matrix".into()));
        }
        let herm = max_abs_diff(&matrix, &matrix.adjoint());
        if herm > Self::HERMITICITY_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (residual {herm:e})")));
        }
        let tr = matrix.trace();
        if (tr - ONE).norm() > Self::TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let state = Self { matrix };
        let min = state.min_eigenvalue();
        if min < -Self::PSD_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        Ok(state)
    }

    pub(crate) fn from_matrix_unchecked(matrix: DMatrix<C64>) -> Self {
        Self { matrix }
    }

    /// `|ψ><ψ|` for a normalised `ψ`.
    pub fn pure(psi: &DVector<C64>) -> Result<Self> {
        let norm = psi.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!("state vector norm {norm} is not 1")));
        }
        Self::new(psi * psi.adjoint())
    }

    /// Projector on basis state `index`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::DimensionMismatch { expected: dim, found: index + 1 });
        }
        let mut m = DMatrix::zeros(dim, dim);
        m[(index, index)] = ONE;
        Ok(Self { matrix: m })
    }

    /// Vacuum (or vacuum ⊗ ground) projector.
    pub fn vacuum(dim: usize) -> Self {
        Self::basis(dim, 0).expect("dim > 0")
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// `Tr(O ρ)`.
    pub fn expectation(&self, op: &LinearOperator) -> C64 {
        trace_of_product(op.matrix(), &self.matrix)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_abs_diff(&self.matrix, &other.matrix)
    }

    /// Population of the highest level of each tensor factor.
    pub fn top_level_populations(&self, factors: &[usize]) -> Vec<f64> {
        let dim = self.dim();
        let mut out = vec![0.0; factors.len()];
        for idx in 0..dim {
            let pop = self.matrix[(idx, idx)].re;
            let mut rem = idx;
            for f in (0..factors.len()).rev() {
                let level = rem % factors[f];
                rem /= factors[f];
                if level + 1 == factors[f] {
                    out[f] += pop;
                }
            }
        }
        out
    }
}

fn trace_of_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    // Tr(AB) = Σ_ij A_ij B_ji
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Rates and shifted frequency of the single-system master equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleParams {
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub gamma_c: f64,
    pub omega: f64,
}

impl SingleParams {
    pub fn new(gamma_a: f64, gamma_b: f64, gamma_c: f64, omega: f64) -> Result<Self> {
        ensure_finite("single-system parameters", &[gamma_a, gamma_b, gamma_c, omega])?;
        if gamma_a < 0.0 {
            return Err(Error::InvalidParameter { name: "gamma_a", reason: format!("{gamma_a} < 0") });
        }
        if gamma_b < 0.0 {
            return Err(Error::InvalidParameter { name: "gamma_b", reason: format!("{gamma_b} < 0") });
        }
        Ok(Self { gamma_a, gamma_b, gamma_c, omega })
    }
}

/// Which physical emission channel a recycling term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    System,
    Cavity,
    Atom,
}

/// `rate · left ρ right†`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpTerm {
    pub rate: f64,
    pub left: LinearOperator,
    pub right: LinearOperator,
    pub channel: Channel,
}

/// Ordering of the atomic recycling term in the composite generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecyclingOrder {
    /// `NΓ S⁻ρS⁺`, trace preserving.
    #[default]
    Corrected,
    /// `NΓ S⁺ρS⁻` as typeset in the source derivation. Not trace
    /// preserving; kept only to document the discrepancy.
    AsPrinted,
}

#[derive(Debug, Clone)]
struct JumpCache {
    rate: C64,
    left: DMatrix<C64>,
    right_dag: DMatrix<C64>,
    left_nz: Entries,
    right_dag_nz: Entries,
}

/// Nonzero entries `(row, col, value)` of a square matrix; the ladder
/// operators and the Hamiltonians built from them are banded.
#[derive(Debug, Clone)]
struct Entries(Vec<(usize, usize, C64)>);

impl Entries {
    fn of(m: &DMatrix<C64>) -> Self {
        let mut nz = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let v = m[(r, c)];
                if v != ZERO {
                    nz.push((r, c, v));
                }
            }
        }
        Self(nz)
    }

    /// `out += α·A·x`.
    fn left_mul_acc(&self, alpha: C64, x: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let n = x.nrows();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for &(r, c, v) in &self.0 {
            let w = alpha * v;
            for j in 0..x.ncols() {
                os[r + j * n] += w * xs[c + j * n];
            }
        }
    }

    /// `out += α·x·A`.
    fn right_mul_acc(&self, alpha: C64, x: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let n = x.nrows();
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for &(r, c, v) in &self.0 {
            let w = alpha * v;
            let (src, dst) = (&xs[r * n..(r + 1) * n], &mut os[c * n..(c + 1) * n]);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
}

/// Conditional Hamiltonian plus recycling terms on a (possibly tensor
/// product) truncated space.
#[derive(Debug, Clone)]
pub struct Generator {
    h_cond: LinearOperator,
    jumps: Vec<JumpTerm>,
    factors: Vec<usize>,
    minus_i_h_nz: Entries,
    i_h_dag_nz: Entries,
    cache: Vec<JumpCache>,
}

impl Generator {
    /// `factors` lists the dimensions of the tensor factors (one entry for a
    /// single mode); their product must equal the operator dimension.
    pub fn new(h_cond: LinearOperator, jumps: Vec<JumpTerm>, factors: Vec<usize>) -> Result<Self> {
        let dim = h_cond.dim();
        let prod: usize = factors.iter().product();
        if prod != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: prod });
        }
        for j in &jumps {
            for op in [&j.left, &j.right] {
                if op.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: op.dim() });
                }
            }
            ensure_finite("jump rate", &[j.rate])?;
        }
        let minus_i_h = h_cond.matrix() * (-I);
        let i_h_dag = h_cond.matrix().adjoint() * I;
        let cache = jumps
            .iter()
            .filter(|j| j.rate != 0.0)
            .map(|j| JumpCache {
                rate: C64::new(j.rate, 0.0),
                left: j.left.matrix().clone(),
                right_dag: j.right.matrix().adjoint(),
                left_nz: Entries::of(j.left.matrix()),
                right_dag_nz: Entries::of(&j.right.matrix().adjoint()),
            })
            .collect();
        let minus_i_h_nz = Entries::of(&minus_i_h);
        let i_h_dag_nz = Entries::of(&i_h_dag);
        Ok(Self { h_cond, jumps, factors, minus_i_h_nz, i_h_dag_nz, cache })
    }

    pub fn dim(&self) -> usize {
        self.h_cond.dim()
    }

    pub fn h_cond(&self) -> &LinearOperator {
        &self.h_cond
    }

    pub fn jumps(&self) -> &[JumpTerm] {
        &self.jumps
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    /// `L(ρ)` for an arbitrary square matrix.
    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut scratch = DMatrix::zeros(n, n);
        self.apply_into(rho, &mut out, &mut scratch);
        out
    }

    fn apply_into(&self, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, scratch: &mut DMatrix<C64>) {
        out.fill(ZERO);
        self.minus_i_h_nz.left_mul_acc(ONE, rho, out);
        self.i_h_dag_nz.right_mul_acc(ONE, rho, out);
        for j in &self.cache {
            scratch.fill(ZERO);
            j.left_nz.left_mul_acc(ONE, rho, scratch);
            j.right_dag_nz.right_mul_acc(j.rate, scratch, out);
        }
    }

    /// `R(ρ)`, the recycling part alone.
    pub fn recycling(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for j in &self.cache {
            out += (&j.left * rho * &j.right_dag) * j.rate;
        }
        out
    }

    /// Heisenberg-picture action `L†(O)`, defined by `Tr(O L(ρ)) = Tr(L†(O) ρ)`.
    pub fn adjoint_apply(&self, obs: &DMatrix<C64>) -> DMatrix<C64> {
        let h = self.h_cond.matrix();
        let mut out = (h.adjoint() * obs - obs * h) * I;
        for j in &self.cache {
            out += (&j.right_dag * obs * &j.left) * j.rate;
        }
        out
    }

    /// `d Tr ρ / dt` under the full action.
    pub fn trace_derivative(&self, rho: &DMatrix<C64>) -> C64 {
        self.apply(rho).trace()
    }

    /// Dense superoperator on column-stacked `vec(ρ)`, index `i + j·dim` for
    /// entry `ρ_ij`.
    pub fn superoperator(&self) -> DMatrix<C64> {
        let n = self.dim();
        let pairs: Vec<(usize, usize)> = (0..n * n).map(|v| (v % n, v / n)).collect();
        self.superoperator_block(&pairs)
    }

    /// Rows and columns of the superoperator restricted to `pairs`.
    fn superoperator_block(&self, pairs: &[(usize, usize)]) -> DMatrix<C64> {
        let h = self.h_cond.matrix();
        let m = pairs.len();
        let mut out = DMatrix::zeros(m, m);
        for (col, &(k, l)) in pairs.iter().enumerate() {
            for (row, &(i, j)) in pairs.iter().enumerate() {
                let mut s = ZERO;
                if l == j {
                    s += -I * h[(i, k)];
                }
                if i == k {
                    s += I * h[(j, l)].conj();
                }
                for jc in &self.cache {
                    let lik = jc.left[(i, k)];
                    if lik != ZERO {
                        // (R†)_lj
                        s += jc.rate * lik * jc.right_dag[(l, j)];
                    }
                }
                out[(row, col)] = s;
            }
        }
        out
    }

    /// Vectorised entries `(i, j)` coupled, directly or indirectly, to the
    /// populations. Entries outside this set evolve independently of the trace.
    fn population_block(&self) -> Vec<(usize, usize)> {
        let n = self.dim();
        let pattern = |m: &DMatrix<C64>| -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
            let mut by_row = vec![Vec::new(); n];
            let mut by_col = vec![Vec::new(); n];
            for r in 0..n {
                for c in 0..n {
                    if m[(r, c)] != ZERO {
                        by_row[r].push(c);
                        by_col[c].push(r);
                    }
                }
            }
            (by_row, by_col)
        };
        let h = pattern(self.h_cond.matrix());
        // (left, right) where the term is left ρ right
        let terms: Vec<_> = self.cache.iter().map(|j| (pattern(&j.left), pattern(&j.right_dag))).collect();

        let mut seen = vec![false; n * n];
        let mut queue = VecDeque::new();
        for d in 0..n {
            seen[d + d * n] = true;
            queue.push_back((d, d));
        }
        let visit = |i: usize, j: usize, seen: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
            if !seen[i + j * n] {
                seen[i + j * n] = true;
                queue.push_back((i, j));
            }
        };
        while let Some((k, l)) = queue.pop_front() {
            // H ρ couples (i,l) <-> (k,l) when H_ik != 0; ρ H† couples (k,j) <-> (k,l) when H_jl != 0
            for &i in h.1[k].iter().chain(h.0[k].iter()) {
                visit(i, l, &mut seen, &mut queue);
            }
            for &j in h.1[l].iter().chain(h.0[l].iter()) {
                visit(k, j, &mut seen, &mut queue);
            }
            for (left, right) in &terms {
                // forward: (i,j) with left_ik and right_lj
                for &i in &left.1[k] {
                    for &j in &right.0[l] {
                        visit(i, j, &mut seen, &mut queue);
                    }
                }
                // backward: (i,j) with left_ki and right_jl
                for &i in &left.0[k] {
                    for &j in &right.1[l] {
                        visit(i, j, &mut seen, &mut queue);
                    }
                }
            }
        }
        (0..n * n).filter(|&v| seen[v]).map(|v| (v % n, v / n)).collect()
    }
}

/// `s⁺`, `s⁻` for the single-system kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemOperators {
    pub raise: LinearOperator,
    pub lower: LinearOperator,
}

impl SystemOperators {
    pub fn bosonic(space: &FockSpace) -> Self {
        let lower = annihilation(space);
        Self { raise: lower.adjoint(), lower }
    }

    /// Collective `σ±` of the Dicke ladder.
    pub fn dicke(basis: &DickeBasis) -> Self {
        let (raise, lower) = crate::operators::hp_sigma_operators(basis);
        Self { raise, lower }
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }
}

/// `[1 − A s⁺s⁻ − B s⁻s⁺ − C s⁺² − D s⁻²] φ`, with `C = D* = f γ_C / 2`.
pub fn no_jump_state(
    phi: &DVector<C64>,
    coef: &BathCoefficients,
    gamma_c: f64,
    ops: &SystemOperators,
) -> Result<DVector<C64>> {
    let dim = ops.dim();
    if phi.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: phi.len() });
    }
    let kernel = no_jump_kernel(coef, gamma_c, ops);
    Ok(phi - kernel * phi)
}

/// `A s⁺s⁻ + B s⁻s⁺ + C s⁺² + D s⁻²` with `C = D* = f γ_C / 2`.
fn no_jump_kernel(coef: &BathCoefficients, gamma_c: f64, ops: &SystemOperators) -> DMatrix<C64> {
    let (sp, sm) = (ops.raise.matrix(), ops.lower.matrix());
    let c = 0.5 * f_function(coef.omega, coef.dt) * gamma_c;
    let d = c.conj();
    (sp * sm) * coef.a + (sm * sp) * coef.b + (sp * sp) * c + (sm * sm) * d
}

/// `Ã s⁻ρs⁺ + B̃ s⁺ρs⁻ + C̃ s⁻ρs⁻ + D̃ s⁺ρs⁺`.
pub fn emission_density(
    rho: &DMatrix<C64>,
    tilde: &TildeCoefficients,
    ops: &SystemOperators,
) -> Result<DMatrix<C64>> {
    let dim = ops.dim();
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: rho.nrows() });
    }
    let (sp, sm) = (ops.raise.matrix(), ops.lower.matrix());
    Ok((sm * rho * sp) * tilde.a
        + (sp * rho * sm) * tilde.b
        + (sm * rho * sm) * tilde.c
        + (sp * rho * sp) * tilde.d)
}

/// Average over the emission and no-emission subensembles after one window:
///
/// ```text
/// ρ(Δt) = ρ − [(A s⁺s⁻ + B s⁻s⁺)ρ + h.c.] − ½γ_C [(f s⁺² + h.c.)ρ + h.c.]
///           + 2Re A s⁻ρs⁺ + 2Re B s⁺ρs⁻ + γ_C [f s⁺ρs⁺ + h.c.]
/// ```
pub fn combine_subensembles(
    rho: &DMatrix<C64>,
    coef: &BathCoefficients,
    gamma_c: f64,
    ops: &SystemOperators,
) -> Result<DMatrix<C64>> {
    let dim = ops.dim();
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: rho.nrows() });
    }
    let kernel = no_jump_kernel(coef, gamma_c, ops);
    let no_jump = rho - (&kernel * rho + rho * kernel.adjoint());
    let squeezed = BathCoefficients::with_gamma_c(coef.a, coef.b, gamma_c, coef.omega, coef.dt)?;
    let tilde = tilde_coefficients(&squeezed);
    Ok(no_jump + emission_density(rho, &tilde, ops)?)
}

/// Single-system generator on a truncated bosonic mode:
///
/// ```text
/// H_cond = −(i/2)[γ_A s⁺s⁻ + γ_B s⁻s⁺ + γ_C (s⁺² + s⁻²)] + ω̃ s⁺s⁻
/// R(ρ)   = γ_A s⁻ρs⁺ + γ_B s⁺ρs⁻ + γ_C (s⁻ρs⁻ + s⁺ρs⁺)
/// ```
pub fn build_single_generator(params: &SingleParams, space: &FockSpace) -> Generator {
    let ops = SystemOperators::bosonic(space);
    build_single_generator_on(params, &ops)
}

/// As [`build_single_generator`] for arbitrary `s±` (e.g. a Dicke ladder).
pub fn build_single_generator_on(params: &SingleParams, ops: &SystemOperators) -> Generator {
    let (sp, sm) = (&ops.raise, &ops.lower);
    let n_op = sp * sm;
    let anti_n = sm * sp;
    let squeeze = &(sp * sp) + &(sm * sm);
    let decay = &(&n_op.scale_real(params.gamma_a) + &anti_n.scale_real(params.gamma_b))
        + &squeeze.scale_real(params.gamma_c);
    let h_cond = &decay.scale(C64::new(0.0, -0.5)) + &n_op.scale_real(params.omega);
    let jump = |rate: f64, left: &LinearOperator, right: &LinearOperator| JumpTerm {
        rate,
        left: left.clone(),
        right: right.clone(),
        channel: Channel::System,
    };
    let jumps = vec![
        jump(params.gamma_a, sm, sm),
        jump(params.gamma_b, sp, sp),
        jump(params.gamma_c, sm, sp),
        jump(params.gamma_c, sp, sm),
    ];
    Generator::new(h_cond, jumps, vec![ops.dim()]).expect("consistent single-system operators")
}

/// Cavity annihilation `c = a ⊗ 1` and collective lowering `S⁻ = 1 ⊗ b` on
/// the cavity ⊗ atom space.
#[derive(Debug, Clone)]
pub struct CompositeLadders {
    pub c: LinearOperator,
    pub s: LinearOperator,
    pub factors: Vec<usize>,
}

impl CompositeLadders {
    pub fn new(cavity: &FockSpace, atom: &FockSpace, max_dim: usize) -> Result<Self> {
        let id_cav = LinearOperator::identity(cavity.dim());
        let id_atom = LinearOperator::identity(atom.dim());
        let c = tensor_product_bounded(&annihilation(cavity), &id_atom, max_dim)?;
        let s = tensor_product_bounded(&id_cav, &annihilation(atom), max_dim)?;
        Ok(Self { c, s, factors: vec![cavity.dim(), atom.dim()] })
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }
}

/// Composite atom-cavity generator with the trace-preserving recycling order:
///
/// ```text
/// H_cond = (ω̃_c − iκ/2) c†c + (ω̃_0 − iNΓ/2) S⁺S⁻ + √N g_c (c + c†)(S⁺ + S⁻)
/// R(ρ)   = κ cρc† + NΓ S⁻ρS⁺
/// ```
pub fn build_composite_generator(
    params: &CompositeParams,
    cavity: &FockSpace,
    atom: &FockSpace,
) -> Result<Generator> {
    build_composite_generator_with(params, cavity, atom, RecyclingOrder::Corrected, DEFAULT_MAX_DIM)
}

pub fn build_composite_generator_with(
    params: &CompositeParams,
    cavity: &FockSpace,
    atom: &FockSpace,
    order: RecyclingOrder,
    max_dim: usize,
) -> Result<Generator> {
    let ladders = CompositeLadders::new(cavity, atom, max_dim)?;
    let (c, s) = (&ladders.c, &ladders.s);
    let (c_dag, s_dag) = (c.adjoint(), s.adjoint());
    let n_gamma = params.collective_decay();
    let sqrt_n_g = (params.n as f64).sqrt() * params.g_c;

    let cav = (&c_dag * c).scale(C64::new(params.omega_c, -0.5 * params.kappa));
    let atom_term = (&s_dag * s).scale(C64::new(params.omega_0, -0.5 * n_gamma));
    let coupling = (&(c + &c_dag) * &(s + &s_dag)).scale_real(sqrt_n_g);
    let h_cond = &(&cav + &atom_term) + &coupling;

    let atom_jump = match order {
        RecyclingOrder::Corrected => s.clone(),
        RecyclingOrder::AsPrinted => s_dag.clone(),
    };
    let jumps = vec![
        JumpTerm { rate: params.kappa, left: c.clone(), right: c.clone(), channel: Channel::Cavity },
        JumpTerm { rate: n_gamma, left: atom_jump.clone(), right: atom_jump, channel: Channel::Atom },
    ];
    Generator::new(h_cond, jumps, ladders.factors)
}

/// Tolerances monitored during integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationOptions {
    /// Largest admissible change of `Tr ρ` in one step.
    pub trace_drift_tol: f64,
    /// Top-level population above which a cutoff warning is raised.
    pub cutoff_tol: f64,
    /// Eigenvalues below `−psd_tol` are reported.
    pub psd_tol: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self { trace_drift_tol: 1e-10, cutoff_tol: 1e-6, psd_tol: DensityMatrix::PSD_TOL }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// The highest kept level of tensor factor `factor` is populated.
    CutoffSaturation { factor: usize, population: f64 },
    /// The state left the positive cone.
    NegativeEigenvalue { time: f64, eigenvalue: f64 },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::CutoffSaturation { factor, population } => write!(
                f,
                "cutoff saturation: top level of factor {factor} holds population {population:e}"
            ),
            Warning::NegativeEigenvalue { time, eigenvalue } => {
                write!(f, "positivity violated at t = {time}: eigenvalue {eigenvalue:e}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub state: DensityMatrix,
    /// Snapshots at the requested sample times, in order.
    pub samples: Vec<(f64, DensityMatrix)>,
    pub steps: usize,
    pub warnings: Vec<Warning>,
}

/// Classical fourth-order Runge-Kutta stepping of `ρ̇ = L(ρ)`.
///
/// Stability note: the scheme is stable for `dt·|λ| ≲ 2.8` over the
/// generator's eigenvalues; on a truncated space the largest frequencies are
/// roughly the cutoff times the mode frequencies.
pub fn integrate(gen: &Generator, rho0: &DensityMatrix, t_final: f64, dt: f64) -> Result<Evolution> {
    integrate_sampled(gen, rho0, &[t_final], dt, &IntegrationOptions::default())
}

/// Integrates through the increasing `sample_times`, recording a snapshot at
/// each. Each interval is split into equal steps no longer than `dt`.
pub fn integrate_sampled(
    gen: &Generator,
    rho0: &DensityMatrix,
    sample_times: &[f64],
    dt: f64,
    opts: &IntegrationOptions,
) -> Result<Evolution> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter { name: "dt", reason: format!("{dt} must be positive") });
    }
    if rho0.dim() != gen.dim() {
        return Err(Error::DimensionMismatch { expected: gen.dim(), found: rho0.dim() });
    }
    let mut prev = 0.0;
    for &t in sample_times {
        if !(t >= prev && t.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sample_times",
                reason: "must be finite, non-negative and increasing".into(),
            });
        }
        prev = t;
    }

    let n = gen.dim();
    let mut rk = Rk4 {
        gen,
        rho: rho0.matrix().clone(),
        k: DMatrix::zeros(n, n),
        acc: DMatrix::zeros(n, n),
        stage: DMatrix::zeros(n, n),
        scratch: DMatrix::zeros(n, n),
    };
    let mut time = 0.0;
    let mut steps = 0usize;
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut warnings = Vec::new();
    let mut worst_top = vec![0.0f64; gen.factors().len()];
    let mut worst_eig: Option<(f64, f64)> = None;

    for &target in sample_times {
        let span = target - time;
        let count = (span / dt).ceil() as usize;
        if count > 0 {
            let h = span / count as f64;
            for _ in 0..count {
                let before = rk.rho.trace();
                rk.step(h);
                steps += 1;
                let after = rk.rho.trace();
                let drift = (after - before).norm();
                if !(drift <= opts.trace_drift_tol) {
                    return Err(Error::IntegrationDiverged {
                        step: steps,
                        time: time + h,
                        reason: format!("trace changed by {drift:e} in one step"),
                    });
                }
                time += h;
            }
        }
        time = target;
        let snap = DensityMatrix::from_matrix_unchecked(rk.rho.clone());
        for (w, p) in worst_top.iter_mut().zip(snap.top_level_populations(gen.factors())) {
            *w = w.max(p);
        }
        let eig = snap.min_eigenvalue();
        if eig < -opts.psd_tol && worst_eig.is_none_or(|(_, e)| eig < e) {
            worst_eig = Some((time, eig));
        }
        samples.push((time, snap));
    }
    for (factor, &population) in worst_top.iter().enumerate() {
        if population > opts.cutoff_tol {
            warnings.push(Warning::CutoffSaturation { factor, population });
        }
    }
    if let Some((time, eigenvalue)) = worst_eig {
        warnings.push(Warning::NegativeEigenvalue { time, eigenvalue });
    }
    let state = samples
        .last()
        .map(|(_, s)| s.clone())
        .unwrap_or_else(|| DensityMatrix::from_matrix_unchecked(rk.rho.clone()));
    Ok(Evolution { state, samples, steps, warnings })
}

struct Rk4<'g> {
    gen: &'g Generator,
    rho: DMatrix<C64>,
    k: DMatrix<C64>,
    acc: DMatrix<C64>,
    stage: DMatrix<C64>,
    scratch: DMatrix<C64>,
}

impl Rk4<'_> {
    fn step(&mut self, h: f64) {
        let weights = [1.0, 2.0, 2.0, 1.0];
        let offsets = [0.5, 0.5, 1.0];
        self.acc.fill(ZERO);
        self.stage.copy_from(&self.rho);
        for s in 0..4 {
            self.gen.apply_into(&self.stage, &mut self.k, &mut self.scratch);
            self.acc.zip_apply(&self.k, |a, k| *a += k * (weights[s] * h / 6.0));
            if s < 3 {
                self.stage.copy_from(&self.rho);
                self.stage.zip_apply(&self.k, |x, k| *x += k * (offsets[s] * h));
            }
        }
        self.rho += &self.acc;
    }
}

/// Steady-state solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    /// Largest coupled block solved directly; larger problems are integrated.
    pub max_direct_unknowns: usize,
    /// Pivots below this fraction of the largest pivot count as singular.
    pub pivot_tol: f64,
    /// Convergence threshold `max |L(ρ)|` for the integration fallback.
    pub fallback_tol: f64,
    pub fallback_max_time: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self { max_direct_unknowns: 2500, pivot_tol: 1e-13, fallback_tol: 1e-11, fallback_max_time: 1e4 }
    }
}

/// Stationary state `L(ρ) = 0`, `Tr ρ = 1`.
pub fn steady_state(gen: &Generator) -> Result<DensityMatrix> {
    steady_state_with(gen, &SteadyStateOptions::default())
}

pub fn steady_state_with(gen: &Generator, opts: &SteadyStateOptions) -> Result<DensityMatrix> {
    let block = gen.population_block();
    if block.len() > opts.max_direct_unknowns {
        return steady_state_by_integration(gen, opts);
    }
    let n = gen.dim();
    let mut system = gen.superoperator_block(&block);
    let scale = system.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let anchor = block.iter().position(|&(i, j)| i == 0 && j == 0).expect("block holds populations");
    let mut rhs = DVector::zeros(block.len());
    for (col, &(i, j)) in block.iter().enumerate() {
        system[(anchor, col)] = if i == j { C64::new(scale, 0.0) } else { ZERO };
    }
    rhs[anchor] = C64::new(scale, 0.0);

    let lu = system.lu();
    let u = lu.u();
    let pivots: Vec<f64> = u.diagonal().iter().map(|z| z.norm()).collect();
    let max_pivot = pivots.iter().cloned().fold(0.0, f64::max);
    let min_pivot = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_pivot > opts.pivot_tol * max_pivot) {
        return Err(Error::NonUniqueSteadyState(format!(
            "generator is rank deficient beyond the trace constraint (pivot ratio {:e})",
            min_pivot / max_pivot
        )));
    }
    let x = lu.solve(&rhs).ok_or_else(|| Error::NonUniqueSteadyState("singular system".into()))?;
    let mut rho = DMatrix::zeros(n, n);
    for (&(i, j), v) in block.iter().zip(x.iter()) {
        rho[(i, j)] = *v;
    }
    let rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let residual = gen.apply(&rho).iter().map(|z| z.norm()).fold(0.0, f64::max);
    ensure_finite("steady state", &[residual])?;
    Ok(DensityMatrix::from_matrix_unchecked(rho))
}

/// Long-time integration from the vacuum until `max |L(ρ)|` falls below the
/// fallback tolerance.
pub fn steady_state_by_integration(gen: &Generator, opts: &SteadyStateOptions) -> Result<DensityMatrix> {
    let h = gen.h_cond().matrix();
    let mut bound: f64 = h.iter().map(|z| z.norm()).sum::<f64>().sqrt();
    bound = bound.max(h.row_iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max));
    for j in gen.jumps() {
        bound += j.rate.abs() * j.left.matrix().norm() * j.right.matrix().norm();
    }
    let dt = 0.5 / bound.max(1e-12);
    let chunk = (200.0 * dt).max(1.0 / bound.max(1e-12));
    let mut rho = DensityMatrix::vacuum(gen.dim());
    let mut t = 0.0;
    while t < opts.fallback_max_time {
        rho = integrate(gen, &rho, chunk, dt)?.state;
        t += chunk;
        let res = gen.apply(rho.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if res < opts.fallback_tol {
            return Ok(rho);
        }
    }
    Err(Error::NoStationaryState(format!(
        "integration did not converge within t = {}",
        opts.fallback_max_time
    )))
}

/// Stationary emission rate `Tr R(ρ)` and its split by channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionRate {
    pub total: f64,
    /// `κ <c†c>` for composite generators.
    pub cavity: Option<f64>,
    /// `NΓ <S⁺S⁻>` for composite generators.
    pub atomic: Option<f64>,
}

pub fn emission_rate(rho: &DensityMatrix, gen: &Generator) -> Result<EmissionRate> {
    if rho.dim() != gen.dim() {
        return Err(Error::DimensionMismatch { expected: gen.dim(), found: rho.dim() });
    }
    let mut total = 0.0;
    let mut cavity = None;
    let mut atomic = None;
    for j in gen.jumps() {
        // Tr(rate · L ρ R†) = rate · Tr(R† L ρ)
        let op = j.right.matrix().adjoint() * j.left.matrix();
        let r = j.rate * trace_of_product(&op, rho.matrix()).re;
        total += r;
        match j.channel {
            Channel::Cavity => *cavity.get_or_insert(0.0) += r,
            Channel::Atom => *atomic.get_or_insert(0.0) += r,
            Channel::System => {}
        }
    }
    Ok(EmissionRate { total, cavity, atomic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::BathCoefficients;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(dim: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(dim, dim, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        (&m + m.adjoint()) * C64::new(0.5, 0.0)
    }

    fn random_state(dim: usize, seed: u64) -> DensityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(dim, dim, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let p = &m * m.adjoint();
        let tr = p.trace();
        DensityMatrix::new(p / tr).unwrap()
    }

    fn number_expectation(rho: &DensityMatrix, space: &FockSpace) -> f64 {
        rho.expectation(&crate::operators::number(space)).re
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(DMatrix::identity(2, 2)).is_err());
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = C64::new(1.5, 0.0);
        m[(1, 1)] = C64::new(-0.5, 0.0);
        assert!(matches!(DensityMatrix::new(m), Err(Error::InvalidState(_))));
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = ONE;
        m[(0, 1)] = C64::new(0.1, 0.0);
        assert!(DensityMatrix::new(m).is_err());
        assert!(DensityMatrix::basis(3, 3).is_err());
        assert_eq!(DensityMatrix::vacuum(3).trace(), ONE);
    }

    #[test]
    fn no_jump_identity_and_vacuum() {
        let space = FockSpace::new(4).unwrap();
        let ops = SystemOperators::bosonic(&space);
        let zero = BathCoefficients { a: ZERO, b: ZERO, c: ZERO, d: ZERO, dt: 0.3, omega: 2.0 };
        let phi = DVector::from_fn(5, |i, _| C64::new(1.0 / (i as f64 + 1.0), 0.2));
        assert_eq!(no_jump_state(&phi, &zero, 0.0, &ops).unwrap(), phi);

        let b = C64::new(0.02, 0.01);
        let coef = BathCoefficients { a: C64::new(0.03, 0.1), b, c: ZERO, d: ZERO, dt: 0.3, omega: 2.0 };
        let mut vac = DVector::zeros(5);
        vac[0] = ONE;
        let out = no_jump_state(&vac, &coef, 0.0, &ops).unwrap();
        assert!((out[0] - (ONE - b)).norm() < 1e-15);
        assert!(out.iter().skip(1).all(|z| z.norm() == 0.0));

        // with γ_C the vacuum also acquires a two-photon component −C√2|2>
        let gamma_c = 0.05;
        let out = no_jump_state(&vac, &coef, gamma_c, &ops).unwrap();
        let c = 0.5 * f_function(2.0, 0.3) * gamma_c;
        assert!((out[2] + c * 2f64.sqrt()).norm() < 1e-15);

        assert!(no_jump_state(&DVector::zeros(3), &coef, 0.0, &ops).is_err());
    }

    #[test]
    fn no_jump_norm_is_perturbatively_bounded() {
        let space = FockSpace::new(6).unwrap();
        let ops = SystemOperators::bosonic(&space);
        let eps = 1e-3;
        let coef = BathCoefficients {
            a: C64::new(eps, 0.4 * eps),
            b: C64::new(0.3 * eps, -0.2 * eps),
            c: ZERO,
            d: ZERO,
            dt: 0.01,
            omega: 1.0,
        };
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut phi = DVector::from_fn(7, |i, _| {
                if i < 4 { C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) } else { ZERO }
            });
            phi /= C64::new(phi.norm(), 0.0);
            let out = no_jump_state(&phi, &coef, 0.1, &ops).unwrap();
            assert!(out.norm_squared() <= 1.0 + 100.0 * eps * eps);
        }
    }

    #[test]
    fn emission_density_examples() {
        let space = FockSpace::new(4).unwrap();
        let ops = SystemOperators::bosonic(&space);
        let rho = DensityMatrix::vacuum(5);
        let zero_t = TildeCoefficients { a: ZERO, b: ZERO, c: ZERO, d: ZERO };
        let out = emission_density(rho.matrix(), &zero_t, &ops).unwrap();
        assert!(out.iter().all(|z| z.norm() == 0.0));

        let t = TildeCoefficients { a: ZERO, b: ONE, c: ZERO, d: ZERO };
        let out = emission_density(rho.matrix(), &t, &ops).unwrap();
        assert_eq!(out, DensityMatrix::basis(5, 1).unwrap().matrix().clone());
    }

    #[test]
    fn emission_density_hermitian_for_conjugate_pair() {
        let space = FockSpace::new(5).unwrap();
        let ops = SystemOperators::bosonic(&space);
        for seed in 0..20 {
            let rho = random_state(6, seed);
            let c = f_function(1.3, 0.4).conj() * 0.7;
            let t = TildeCoefficients { a: C64::new(0.3, 0.0), b: C64::new(0.1, 0.0), c, d: c.conj() };
            let out = emission_density(rho.matrix(), &t, &ops).unwrap();
            assert!(max_abs_diff(&out, &out.adjoint()) < 1e-12);
        }
    }

    fn euler_coefficients(params: &SingleParams, dt: f64, omega: f64) -> BathCoefficients {
        BathCoefficients {
            a: C64::new(0.5 * params.gamma_a * dt, params.omega * dt),
            b: C64::new(0.5 * params.gamma_b * dt, 0.0),
            c: ZERO,
            d: ZERO,
            dt,
            omega,
        }
    }

    #[test]
    fn subensemble_average_matches_euler_step_to_second_order() {
        let space = FockSpace::new(8).unwrap();
        let ops = SystemOperators::bosonic(&space);
        let params = SingleParams::new(1.0, 0.2, 0.3, 1.7).unwrap();
        let gen = build_single_generator(&params, &space);
        let rho = random_state(9, 7);
        let diff = |dt: f64| {
            let coef = euler_coefficients(&params, dt, 2.0);
            let kernel = combine_subensembles(rho.matrix(), &coef, params.gamma_c, &ops).unwrap();
            let euler = rho.matrix() + gen.apply(rho.matrix()) * C64::new(dt, 0.0);
            max_abs_diff(&kernel, &euler)
        };
        let (d1, d2, d3) = (diff(1e-3), diff(5e-4), diff(2.5e-4));
        assert!(d1 > 0.0);
        assert!((d1 / d2 - 4.0).abs() < 0.05, "ratio {}", d1 / d2);
        assert!((d2 / d3 - 4.0).abs() < 0.05, "ratio {}", d2 / d3);

        let zero = BathCoefficients { a: ZERO, b: ZERO, c: ZERO, d: ZERO, dt: 0.1, omega: 1.0 };
        let same = combine_subensembles(rho.matrix(), &zero, 0.0, &ops).unwrap();
        assert!(max_abs_diff(&same, rho.matrix()) < 1e-15);
    }

    #[test]
    fn subensemble_average_populates_through_gamma_b() {
        let space = FockSpace::new(4).unwrap();
        let ops = SystemOperators::bosonic(&space);
        let params = SingleParams::new(1.0, 0.3, 0.0, 0.5).unwrap();
        let dt = 1e-3;
        let coef = euler_coefficients(&params, dt, 1.0);
        let out = combine_subensembles(DensityMatrix::vacuum(5).matrix(), &coef, 0.0, &ops).unwrap();
        let n = trace_of_product(crate::operators::number(&space).matrix(), &out).re;
        assert!((n - params.gamma_b * dt).abs() < 1e-15);
    }

    #[test]
    fn single_generator_limits() {
        let space = FockSpace::new(5).unwrap();
        let params = SingleParams::new(0.0, 0.0, 0.0, 2.5).unwrap();
        let gen = build_single_generator(&params, &space);
        let expected = crate::operators::number(&space).scale_real(2.5);
        assert!(gen.h_cond().max_abs_diff(&expected) < 1e-13);
        assert!(gen.h_cond().hermiticity_residual() < 1e-15);

        let decay = SingleParams::new(0.7, 0.0, 0.0, 1.0).unwrap();
        let gen = build_single_generator(&decay, &space);
        let lv = gen.apply(DensityMatrix::vacuum(6).matrix());
        assert!(lv.iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn generator_trace_and_hermiticity_preservation() {
        let space = FockSpace::new(6).unwrap();
        let cav = FockSpace::new(3).unwrap();
        let atom = FockSpace::new(4).unwrap();
        let single = build_single_generator(&SingleParams::new(1.1, 0.4, 2.3, 0.9).unwrap(), &space);
        let dicke = build_single_generator_on(
            &SingleParams::new(1.1, 0.4, 0.6, 0.9).unwrap(),
            &SystemOperators::dicke(&DickeBasis::new(9, 6).unwrap()),
        );
        let comp = build_composite_generator(&CompositeParams::resonant_fixture(), &cav, &atom).unwrap();
        for gen in [single, dicke, comp] {
            for seed in 0..10 {
                let rho = random_hermitian(gen.dim(), seed);
                let lr = gen.apply(&rho);
                assert!(lr.trace().norm() < 1e-12, "trace derivative {}", lr.trace());
                assert!(max_abs_diff(&lr, &lr.adjoint()) < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_action_is_dual() {
        let space = FockSpace::new(5).unwrap();
        let gen = build_single_generator(&SingleParams::new(1.0, 0.3, 0.2, 1.4).unwrap(), &space);
        let rho = random_hermitian(6, 1);
        let obs = random_hermitian(6, 2);
        let lhs = trace_of_product(&obs, &gen.apply(&rho));
        let rhs = trace_of_product(&gen.adjoint_apply(&obs), &rho);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn superoperator_matches_direct_action() {
        let cav = FockSpace::new(2).unwrap();
        let gen = build_composite_generator(
            &CompositeParams::new(1.0, 1.3, 0.2, 0.01, 7, 0.3).unwrap(),
            &cav,
            &cav,
        )
        .unwrap();
        let n = gen.dim();
        let rho = random_hermitian(n, 5);
        let sup = gen.superoperator();
        let vec = DVector::from_iterator(n * n, rho.iter().cloned());
        let out = sup * vec;
        let direct = gen.apply(&rho);
        let direct_vec = DVector::from_iterator(n * n, direct.iter().cloned());
        assert!((out - direct_vec).camax() < 1e-12);
    }

    #[test]
    fn exponential_decay_oracle() {
        let space = FockSpace::new(4).unwrap();
        let gen = build_single_generator(&SingleParams::new(1.0, 0.0, 0.0, 3.0).unwrap(), &space);
        let rho0 = DensityMatrix::basis(5, 1).unwrap();
        let out = integrate(&gen, &rho0, 5.0, 1e-3).unwrap();
        let n = number_expectation(&out.state, &space);
        assert!((n - (-5.0f64).exp()).abs() < 1e-8, "{n}");
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn zero_generator_leaves_state_unchanged() {
        let space = FockSpace::new(3).unwrap();
        let gen = build_single_generator(&SingleParams::new(0.0, 0.0, 0.0, 0.0).unwrap(), &space);
        let rho0 = random_state(4, 3);
        let out = integrate(&gen, &rho0, 2.0, 0.1).unwrap();
        assert_eq!(out.state.matrix(), rho0.matrix());
    }

    #[test]
    fn integration_reports_cutoff_saturation() {
        let space = FockSpace::new(3).unwrap();
        let gen = build_single_generator(&SingleParams::new(1.0, 0.8, 0.0, 1.0).unwrap(), &space);
        let out = integrate(&gen, &DensityMatrix::vacuum(4), 2.0, 0.01).unwrap();
        assert!(out.warnings.iter().any(|w| matches!(w, Warning::CutoffSaturation { factor: 0, .. })));
    }

    #[test]
    fn integration_rejects_trace_drift() {
        let cav = FockSpace::new(2).unwrap();
        let gen = build_composite_generator_with(
            &CompositeParams::new(1.0, 1.0, 0.1, 0.05, 10, 0.2).unwrap(),
            &cav,
            &cav,
            RecyclingOrder::AsPrinted,
            DEFAULT_MAX_DIM,
        )
        .unwrap();
        let err = integrate(&gen, &DensityMatrix::vacuum(9), 1.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::IntegrationDiverged { step: 1, .. }));
        assert!(integrate(&gen, &DensityMatrix::vacuum(9), 1.0, -0.1).is_err());
    }

    #[test]
    fn thermal_steady_state() {
        let space = FockSpace::new(12).unwrap();
        let gen = build_single_generator(&SingleParams::new(1.0, 0.1, 0.0, 1.0).unwrap(), &space);
        let ss = steady_state(&gen).unwrap();
        assert!((number_expectation(&ss, &space) - 1.0 / 9.0).abs() < 1e-7);
        let rate = emission_rate(&ss, &gen).unwrap();
        assert!((rate.total - 2.0 / 9.0).abs() < 1e-6);
        assert_eq!(rate.cavity, None);

        let long = integrate(&gen, &DensityMatrix::vacuum(13), 40.0, 0.01).unwrap();
        assert!(ss.max_abs_diff(&long.state) < 1e-7);
    }

    #[test]
    fn decaying_cavity_relaxes_to_vacuum() {
        let space = FockSpace::new(6).unwrap();
        let gen = build_single_generator(&SingleParams::new(0.5, 0.0, 0.0, 2.0).unwrap(), &space);
        let ss = steady_state(&gen).unwrap();
        assert!(ss.max_abs_diff(&DensityMatrix::vacuum(7)) < 1e-12);
        assert_eq!(emission_rate(&ss, &gen).unwrap().total, 0.0);
        let excited = DensityMatrix::basis(7, 1).unwrap();
        let gen2 = build_single_generator(&SingleParams::new(2.0, 0.0, 0.0, 2.0).unwrap(), &space);
        assert!((emission_rate(&excited, &gen2).unwrap().total - 2.0).abs() < 1e-15);
    }

    #[test]
    fn squeezing_channel_steady_state_matches_integration() {
        let space = FockSpace::new(14).unwrap();
        let gen = build_single_generator(&SingleParams::new(1.0, 0.05, 0.1, 2.0).unwrap(), &space);
        let ss = steady_state(&gen).unwrap();
        let long = integrate(&gen, &DensityMatrix::vacuum(15), 45.0, 0.005).unwrap();
        assert!(ss.max_abs_diff(&long.state) < 1e-7);
    }

    #[test]
    fn closed_system_has_no_unique_steady_state() {
        let space = FockSpace::new(4).unwrap();
        let gen = build_single_generator(&SingleParams::new(0.0, 0.0, 0.0, 1.0).unwrap(), &space);
        assert!(matches!(steady_state(&gen), Err(Error::NonUniqueSteadyState(_))));
    }

    #[test]
    fn integration_fallback_agrees_with_direct_solve() {
        let space = FockSpace::new(8).unwrap();
        let gen = build_single_generator(&SingleParams::new(1.0, 0.2, 0.05, 0.7).unwrap(), &space);
        let direct = steady_state(&gen).unwrap();
        let opts = SteadyStateOptions { max_direct_unknowns: 0, ..Default::default() };
        let fallback = steady_state_with(&gen, &opts).unwrap();
        assert!(direct.max_abs_diff(&fallback) < 1e-8);
    }

    #[test]
    fn composite_uncoupled_limits() {
        let cav = FockSpace::new(3).unwrap();
        let p = CompositeParams::new(2.0, 3.0, 0.5, 0.01, 20, 0.0).unwrap();
        let gen = build_composite_generator(&p, &cav, &cav).unwrap();
        let ss = steady_state(&gen).unwrap();
        assert!(ss.max_abs_diff(&DensityMatrix::vacuum(16)) < 1e-12);
        let rate = emission_rate(&ss, &gen).unwrap();
        assert_eq!(rate.cavity, Some(0.0));
        assert_eq!(rate.atomic, Some(0.0));

        let closed = CompositeParams::new(2.0, 3.0, 0.0, 0.0, 20, 0.1).unwrap();
        let gen = build_composite_generator(&closed, &cav, &cav).unwrap();
        assert!(gen.h_cond().hermiticity_residual() < 1e-15);
        let rho0 = random_state(16, 11);
        let out = integrate(&gen, &rho0, 1.0, 1e-3).unwrap();
        let purity = |m: &DMatrix<C64>| trace_of_product(m, m).re;
        assert!((out.state.trace() - ONE).norm() < 1e-12);
        assert!((purity(out.state.matrix()) - purity(rho0.matrix())).abs() < 1e-9);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let space = FockSpace::new(6).unwrap();
        let gen = build_single_generator(&SingleParams::new(1.0, 0.1, 0.3, 2.0).unwrap(), &space);
        let rho0 = DensityMatrix::basis(7, 1).unwrap();
        let run = |dt: f64| integrate(&gen, &rho0, 1.0, dt).unwrap().state;
        let (a, b, c) = (run(0.04), run(0.02), run(0.01));
        let ratio = a.max_abs_diff(&b) / b.max_abs_diff(&c);
        assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn single_generator_preserves_trace(
            ga in 0.0f64..5.0, gb in 0.0f64..5.0, gc in -3.0f64..3.0, w in -10.0f64..10.0, seed in 0u64..1000
        ) {
            let space = FockSpace::new(5).unwrap();
            let gen = build_single_generator(&SingleParams::new(ga, gb, gc, w).unwrap(), &space);
            let rho = random_hermitian(6, seed);
            prop_assert!(gen.trace_derivative(&rho).norm() < 1e-12);
        }
    }
}
