//! The Dirichlet distribution: density, log-likelihood, maximum likelihood
//! estimation by Newton's method, and sampling.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01};

use crate::composition::{self, CompositionMatrix, ROW_SUM_TOL};
use crate::error::{Error, Result};
use crate::special::{inverse_digamma, lgamma, psi};

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::Dimension {
                expected: 2,
                found: alpha.len(),
            });
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "Dirichlet parameters must be positive and finite, got {a}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn into_alpha(self) -> Vec<f64> {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Precision φ = Σ α_j.
    pub fn phi(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// E(X) = α / φ.
    pub fn mean(&self) -> Vec<f64> {
        let phi = self.phi();
        self.alpha.iter().map(|a| a / phi).collect()
    }

    /// ln of the normalizing constant, ln Γ(φ) − Σ ln Γ(α_j).
    pub fn log_norm(&self) -> f64 {
        lgamma(self.phi()) - self.alpha.iter().map(|&a| lgamma(a)).sum::<f64>()
    }
}

/// Per-column sample statistics sufficient for the Dirichlet likelihood, plus
/// the first two raw moments used to initialize the MLE.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    n: usize,
    mean_log: Vec<f64>,
    mean: Vec<f64>,
    mean_sq: Vec<f64>,
}

impl SufficientStats {
    /// Statistics of the rows of `x`, each of which must lie strictly inside
    /// (0, 1) componentwise.
    pub fn from_rows(x: ArrayView2<'_, f64>) -> Result<Self> {
        composition::check_interior(x)?;
        let n = x.nrows();
        let d = x.ncols();
        let mut sum_log = vec![0.0; d];
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        for row in x.rows() {
            accumulate(row, 1.0, &mut sum_log, &mut sum, &mut sum_sq);
        }
        Ok(Self::from_sums(n, &sum_log, &sum, &sum_sq))
    }

    pub fn from_matrix(x: &CompositionMatrix) -> Result<Self> {
        Self::from_rows(x.values())
    }

    pub(crate) fn from_sums(n: usize, sum_log: &[f64], sum: &[f64], sum_sq: &[f64]) -> Self {
        let inv = 1.0 / n as f64;
        Self {
            n,
            mean_log: sum_log.iter().map(|s| s * inv).collect(),
            mean: sum.iter().map(|s| s * inv).collect(),
            mean_sq: sum_sq.iter().map(|s| s * inv).collect(),
        }
    }

    /// Statistics with the observation `row` removed.
    pub fn without_row(&self, row: ArrayView1<'_, f64>) -> Self {
        let n = self.n as f64;
        let mut sum_log: Vec<f64> = self.mean_log.iter().map(|m| m * n).collect();
        let mut sum: Vec<f64> = self.mean.iter().map(|m| m * n).collect();
        let mut sum_sq: Vec<f64> = self.mean_sq.iter().map(|m| m * n).collect();
        accumulate(row, -1.0, &mut sum_log, &mut sum, &mut sum_sq);
        Self::from_sums(self.n - 1, &sum_log, &sum, &sum_sq)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mean_log.len()
    }

    /// (1/n) Σ_i ln x_ij per column.
    pub fn mean_log(&self) -> &[f64] {
        &self.mean_log
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

fn accumulate(row: ArrayView1<'_, f64>, sign: f64, sum_log: &mut [f64], sum: &mut [f64], sum_sq: &mut [f64]) {
    for (j, &v) in row.iter().enumerate() {
        sum_log[j] += sign * v.ln();
        sum[j] += sign * v;
        sum_sq[j] += sign * v * v;
    }
}

fn check_dim(params: &DirichletParams, d: usize) -> Result<()> {
    if params.len() != d {
        return Err(Error::Dimension {
            expected: params.len(),
            found: d,
        });
    }
    Ok(())
}

/// ln f(x | α) for a single composition.
pub fn dd_log_density(params: &DirichletParams, x: &[f64]) -> Result<f64> {
    check_dim(params, x.len())?;
    for (component, &value) in x.iter().enumerate() {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::Boundary {
                row: 0,
                component,
                value,
            });
        }
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::RowSum { row: 0, sum });
    }
    let kernel: f64 = params.alpha.iter().zip(x).map(|(a, v)| (a - 1.0) * v.ln()).sum();
    Ok(params.log_norm() + kernel)
}

pub(crate) fn adjusted_loglik(alpha: &[f64], stats: &SufficientStats) -> f64 {
    let phi: f64 = alpha.iter().sum();
    let mut acc = lgamma(phi);
    for (a, m) in alpha.iter().zip(&stats.mean_log) {
        acc += a * m - lgamma(*a);
    }
    stats.n as f64 * acc
}

/// n·ln Γ(φ) − n·Σ ln Γ(α_j) + n·Σ α_j·m_j, with m_j the mean log of column j.
pub fn dd_adjusted_loglik(params: &DirichletParams, stats: &SufficientStats) -> Result<f64> {
    check_dim(params, stats.dim())?;
    Ok(adjusted_loglik(&params.alpha, stats))
}

/// Full Dirichlet log-likelihood: the adjusted form minus n·Σ m_j.
pub fn dd_loglik(params: &DirichletParams, stats: &SufficientStats) -> Result<f64> {
    Ok(dd_adjusted_loglik(params, stats)? - loglik_constant(stats))
}

/// n·Σ_j m_j, the α-free part removed from the adjusted log-likelihood.
pub(crate) fn loglik_constant(stats: &SufficientStats) -> f64 {
    stats.n as f64 * stats.mean_log.iter().sum::<f64>()
}

/// ∂ℓ/∂α_j = n(ψ(φ) − ψ(α_j) + m_j).
pub fn dd_gradient(params: &DirichletParams, stats: &SufficientStats) -> Result<Vec<f64>> {
    check_dim(params, stats.dim())?;
    Ok(gradient(&params.alpha, stats))
}

fn gradient(alpha: &[f64], stats: &SufficientStats) -> Vec<f64> {
    let n = stats.n as f64;
    let psi_phi = psi(0, alpha.iter().sum());
    alpha
        .iter()
        .zip(&stats.mean_log)
        .map(|(&a, m)| n * (psi_phi - psi(0, a) + m))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOptions {
    /// Convergence threshold on the max-norm of the gradient.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Starting point; moment matching plus fixed-point refinement when absent.
    pub init: Option<Vec<f64>>,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-9,
            max_iter: 500,
            init: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub iterations: usize,
    /// Max-norm of the gradient at the returned point.
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletFit {
    pub params: DirichletParams,
    pub report: ConvergenceReport,
    pub loglik: f64,
    pub adjusted_loglik: f64,
    pub n: usize,
}

impl DirichletFit {
    /// Asymptotic standard errors from the inverse Fisher information.
    pub fn standard_errors(&self) -> Vec<f64> {
        dd_standard_errors(&self.params, self.n)
    }
}

/// Square roots of the diagonal of I(α)⁻¹ where
/// I(α) = n·diag(ψ′(α_j)) − n·ψ′(φ)·11ᵀ.
pub fn dd_standard_errors(params: &DirichletParams, n: usize) -> Vec<f64> {
    let n = n as f64;
    let c = n * psi(1, params.phi());
    let d: Vec<f64> = params.alpha.iter().map(|&a| n * psi(1, a)).collect();
    let denom = 1.0 - c * d.iter().map(|v| 1.0 / v).sum::<f64>();
    d.iter().map(|&dj| (1.0 / dj + c / (dj * dj * denom)).sqrt()).collect()
}

const FIXED_POINT_STEPS: usize = 5;
const MAX_HALVINGS: usize = 60;

/// Maximum likelihood estimate of α.
///
/// On non-convergence the best iterate is returned inside
/// [`Error::NotConverged`].
pub fn dd_mle(stats: &SufficientStats, opts: &MleOptions) -> Result<DirichletFit> {
    let d = stats.dim();
    if stats.n < 2 {
        return Err(Error::TooFewObservations {
            required: 2,
            found: stats.n,
        });
    }
    if d < 2 {
        return Err(Error::Dimension { expected: 2, found: d });
    }
    if let Some(j) = stats.mean_log.iter().position(|m| !m.is_finite()) {
        return Err(Error::InvalidParameter(format!("mean log of column {j} is not finite")));
    }
    // ln(mean) ≥ mean(ln) with equality only for a constant column.
    for j in 0..d {
        let gap = stats.mean[j].ln() - stats.mean_log[j];
        if gap <= 1e-13 * stats.mean_log[j].abs().max(1.0) {
            return Err(Error::DegenerateData(j));
        }
    }

    let mut alpha = match &opts.init {
        Some(init) => {
            let p = DirichletParams::new(init.clone())?;
            check_dim(&p, d)?;
            p.alpha
        }
        None => initial_alpha(stats),
    };
    let n = stats.n as f64;
    let mut ll = adjusted_loglik(&alpha, stats);
    let mut grad = gradient(&alpha, stats);
    let mut iterations = 0;
    let converged = loop {
        let tol = effective_tol(opts.grad_tol, &alpha, stats);
        let grad_norm = max_abs(&grad);
        if grad_norm <= tol {
            break true;
        }
        if iterations >= opts.max_iter {
            break false;
        }
        iterations += 1;

        let step = newton_step(&alpha, &grad, n);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = alpha.iter().zip(&step).map(|(a, s)| a - scale * s).collect();
            if trial.iter().all(|&a| a > 0.0 && a.is_finite()) {
                let trial_ll = adjusted_loglik(&trial, stats);
                if trial_ll >= ll - loglik_noise(&trial, stats) {
                    alpha = trial;
                    ll = trial_ll;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        grad = gradient(&alpha, stats);
        if !accepted {
            // No representable ascent left along the Newton direction.
            break max_abs(&grad) <= tol;
        }
    };
    let report = ConvergenceReport {
        iterations,
        grad_norm: max_abs(&grad),
        converged,
    };
    let fit = DirichletFit {
        params: DirichletParams { alpha },
        report,
        loglik: ll - loglik_constant(stats),
        adjusted_loglik: ll,
        n: stats.n,
    };
    if converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged(Box::new(fit)))
    }
}

/// Rounding error in [`adjusted_loglik`], below which changes are not
/// meaningful.
fn loglik_noise(alpha: &[f64], stats: &SufficientStats) -> f64 {
    let phi: f64 = alpha.iter().sum();
    let magnitude = alpha
        .iter()
        .zip(&stats.mean_log)
        .map(|(&a, m)| lgamma(a).abs() + (a * m).abs())
        .sum::<f64>()
        + lgamma(phi).abs();
    16.0 * f64::EPSILON * stats.n as f64 * magnitude
}

/// The gradient cannot be resolved below the rounding error of its terms,
/// which grows linearly with n.
fn effective_tol(grad_tol: f64, alpha: &[f64], stats: &SufficientStats) -> f64 {
    let phi: f64 = alpha.iter().sum();
    let scale = alpha
        .iter()
        .zip(&stats.mean_log)
        .map(|(&a, m)| psi(0, a).abs() + m.abs())
        .fold(psi(0, phi).abs(), f64::max)
        .max(1.0);
    grad_tol.max(stats.n as f64 * 64.0 * f64::EPSILON * scale)
}

/// H⁻¹g for H = diag(q) + z·11ᵀ with q_j = −n ψ′(α_j) and z = n ψ′(φ).
fn newton_step(alpha: &[f64], grad: &[f64], n: f64) -> Vec<f64> {
    let phi: f64 = alpha.iter().sum();
    let z = n * psi(1, phi);
    let q: Vec<f64> = alpha.iter().map(|&a| -n * psi(1, a)).collect();
    let num: f64 = grad.iter().zip(&q).map(|(g, q)| g / q).sum();
    let den: f64 = 1.0 / z + q.iter().map(|q| 1.0 / q).sum::<f64>();
    let b = num / den;
    grad.iter().zip(&q).map(|(g, q)| (g - b) / q).collect()
}

/// Moment-matched precision from the first column, refined by a few
/// fixed-point steps α_j ← ψ⁻¹(ψ(φ) + m_j).
fn initial_alpha(stats: &SufficientStats) -> Vec<f64> {
    let m1 = stats.mean[0];
    let s1 = stats.mean_sq[0];
    let mut phi = (m1 - s1) / (s1 - m1 * m1);
    if !(phi.is_finite() && phi > 0.0) {
        phi = 1.0;
    }
    let total: f64 = stats.mean.iter().sum();
    let mut alpha: Vec<f64> = stats.mean.iter().map(|m| phi * m / total).collect();
    for _ in 0..FIXED_POINT_STEPS {
        let psi_phi = psi(0, alpha.iter().sum());
        let next: Option<Vec<f64>> = stats
            .mean_log
            .iter()
            .map(|m| inverse_digamma(psi_phi + m).ok().filter(|a| a.is_finite() && *a > 0.0))
            .collect();
        match next {
            Some(next) => alpha = next,
            None => break,
        }
    }
    alpha
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Gamma variates in log space. Shapes below one use
/// Γ(a) =d Γ(a + 1)·U^(1/a) so tiny draws stay representable.
#[derive(Debug, Clone)]
pub(crate) struct LogGammaSampler {
    gamma: Gamma<f64>,
    inv_shape: Option<f64>,
}

impl LogGammaSampler {
    pub(crate) fn new(shape: f64) -> Self {
        let boosted = shape < 1.0;
        let gamma = Gamma::new(if boosted { shape + 1.0 } else { shape }, 1.0).expect("shape validated positive");
        Self {
            gamma,
            inv_shape: boosted.then(|| 1.0 / shape),
        }
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = self.gamma.sample(rng).ln();
        match self.inv_shape {
            Some(inv) => {
                let u: f64 = Open01.sample(rng);
                g + u.ln() * inv
            }
            None => g,
        }
    }
}

/// Draws one Dirichlet vector as log proportions into `out`.
pub(crate) fn sample_log_dirichlet<R: Rng + ?Sized>(samplers: &[LogGammaSampler], rng: &mut R, out: &mut [f64]) {
    for (o, s) in out.iter_mut().zip(samplers) {
        *o = s.sample(rng);
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + out.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    for o in out.iter_mut() {
        *o -= lse;
    }
}

/// `n` independent Dirichlet draws with columns named `X1..Xd`. Rows with a
/// component that underflows to zero are redrawn.
pub fn dd_sample<R: Rng + ?Sized>(params: &DirichletParams, n: usize, rng: &mut R) -> CompositionMatrix {
    let d = params.len();
    let samplers: Vec<LogGammaSampler> = params.alpha.iter().map(|&a| LogGammaSampler::new(a)).collect();
    let mut values = Array2::zeros((n, d));
    let mut logs = vec![0.0; d];
    for mut row in values.rows_mut() {
        loop {
            sample_log_dirichlet(&samplers, rng, &mut logs);
            let sum: f64 = logs.iter().map(|l| l.exp()).sum();
            for (v, l) in row.iter_mut().zip(&logs) {
                *v = l.exp() / sum;
            }
            if row.iter().all(|&v| v > 0.0 && v < 1.0) {
                break;
            }
        }
    }
    let names = (1..=d).map(|j| format!("X{j}")).collect();
    CompositionMatrix::new(names, values).expect("names match columns")
}
