//! Saddlepoint approximations to the density and distribution function of a
//! product of independent beta variables, the marginal law of an NDD
//! component.
//!
//! With Z = ln X = Σ ln Y_i and Y_i ~ Beta(a_i, b_i), the cumulant generating
//! function of Z is
//! K(t) = Σ [ln Γ(a_i + b_i) + ln Γ(t + a_i) − ln Γ(t + a_i + b_i) − ln Γ(a_i)]
//! for t > −min a_i. Internally K is evaluated at u = t + min a_i so that
//! arguments close to the pole keep full relative precision.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::ndd::NddModel;
use crate::quadrature::integrate;
use crate::special::{ln_gamma_ratio, normal_cdf, normal_pdf, psi_diff};

const MAX_ITER: usize = 200;
/// CDF values are kept inside [CDF_FLOOR, 1 − CDF_FLOOR].
pub const CDF_FLOOR: f64 = 1e-15;
/// Half-width of the window around E(Z), in standard deviations of Z, inside
/// which the CDF is interpolated linearly between the window edges.
const NEAR_MEAN_WINDOW: f64 = 2e-2;
/// Normalization integrates over (NORM_EPS, 1 − NORM_EPS).
const NORM_EPS: f64 = 1e-9;
const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BetaProductSpec {
    a: Vec<f64>,
    b: Vec<f64>,
    a_min: f64,
}

impl BetaProductSpec {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::Dimension {
                expected: a.len().max(1),
                found: b.len(),
            });
        }
        if let Some(v) = a.iter().chain(&b).find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "beta shape parameters must be positive and finite, got {v}"
            )));
        }
        let a_min = a.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { a, b, a_min })
    }

    /// The beta factors along the path to component `j`: at each node k on
    /// the path, Beta(α_C, φ_k − α_C) for the child C on the path.
    pub fn for_component(model: &NddModel, j: usize) -> Result<Self> {
        let tree = model.tree();
        if j >= tree.num_components() {
            return Err(Error::UnknownNode(format!("component {j}")));
        }
        let path = tree.path_to(tree.terminal(j))?;
        let mut a = Vec::with_capacity(path.len());
        let mut b = Vec::with_capacity(path.len());
        for step in path {
            a.push(model.alpha(step.child));
            b.push(
                tree.children(step.node)
                    .iter()
                    .filter(|&&c| c != step.child)
                    .map(|&c| model.alpha(c))
                    .sum(),
            );
        }
        Self::new(a, b)
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// K^(order) at u = t + min a_i.
    fn eval(&self, u: f64, order: u32) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| {
                let x = (a - self.a_min) + u;
                match order {
                    0 => ln_gamma_ratio(x, b) - ln_gamma_ratio(a, b),
                    m => psi_diff(m - 1, x, b),
                }
            })
            .sum()
    }

    /// E(Z) = K′(0).
    pub fn mean_log(&self) -> f64 {
        self.eval(self.a_min, 1)
    }

    /// Var(Z) = K″(0).
    pub fn var_log(&self) -> f64 {
        self.eval(self.a_min, 2)
    }
}

/// K^(order)(t) for order 0..=3.
pub fn cgf(spec: &BetaProductSpec, t: f64, order: u32) -> Result<f64> {
    if order > 3 {
        return Err(Error::UnsupportedOrder(order));
    }
    let u = t + spec.a_min;
    if !(u > 0.0) || !t.is_finite() {
        return Err(Error::domain("cgf", t));
    }
    if t == 0.0 && order == 0 {
        return Ok(0.0);
    }
    Ok(spec.eval(u, order))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddlepointSolution {
    pub t_hat: f64,
    pub k: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

/// Solves K′(t) = z for z = ln x < 0.
///
/// K′ is increasing and concave, so Newton's method started to the left of
/// the root climbs monotonically towards it; bisection takes over if a step
/// ever leaves the bracket.
pub fn solve_saddlepoint(spec: &BetaProductSpec, z: f64) -> Result<SaddlepointSolution> {
    if !(z < 0.0) || !z.is_finite() {
        return Err(Error::domain("solve_saddlepoint", z));
    }
    let f = |u: f64| spec.eval(u, 1) - z;
    let tol = 1e-12 * z.abs().max(1.0);
    let u0 = spec.a_min;
    let f0 = f(u0);
    // Bracket [lo, hi] in u with f(lo) < 0 < f(hi).
    let (mut lo, mut hi) = if f0 <= 0.0 {
        let mut lo = u0;
        let mut step = 1.0;
        loop {
            let hi = u0 + step;
            if f(hi) > 0.0 {
                break (lo, hi);
            }
            lo = hi;
            step *= 2.0;
            if !step.is_finite() {
                return Err(Error::SaddlepointNotConverged {
                    z,
                    lo: lo - u0,
                    hi: f64::INFINITY,
                    residual: f(lo),
                });
            }
        }
    } else {
        let mut hi = u0;
        loop {
            let lo = 0.5 * hi;
            if f(lo) < 0.0 {
                break (lo, hi);
            }
            hi = lo;
            if lo < f64::MIN_POSITIVE {
                return Err(Error::SaddlepointNotConverged {
                    z,
                    lo: -u0,
                    hi: hi - u0,
                    residual: f(hi),
                });
            }
        }
    };

    let mut u = lo;
    let mut residual = f(u);
    for _ in 0..MAX_ITER {
        if residual.abs() <= tol {
            return Ok(solution(spec, u));
        }
        if residual < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let newton = u - residual / spec.eval(u, 2);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == u || hi - lo <= 2.0 * f64::EPSILON * hi {
            // No representable progress left: the best attainable root.
            return Ok(solution(spec, u));
        }
        u = next;
        residual = f(u);
    }
    Err(Error::SaddlepointNotConverged {
        z,
        lo: lo - u0,
        hi: hi - u0,
        residual,
    })
}

fn solution(spec: &BetaProductSpec, u: f64) -> SaddlepointSolution {
    SaddlepointSolution {
        t_hat: u - spec.a_min,
        k: spec.eval(u, 0),
        k1: spec.eval(u, 1),
        k2: spec.eval(u, 2),
        k3: spec.eval(u, 3),
        k4: spec.eval(u, 4),
    }
}

/// Saddlepoint density of Z = ln X at z, including the second-order factor
/// 1 + λ₄/8 − 5λ₃²/24 (dropped if it is not positive).
fn density_z(spec: &BetaProductSpec, z: f64) -> Result<f64> {
    let s = solve_saddlepoint(spec, z)?;
    let l3 = s.k3 / s.k2.powf(1.5);
    let l4 = s.k4 / (s.k2 * s.k2);
    let correction = 1.0 + l4 / 8.0 - 5.0 * l3 * l3 / 24.0;
    let correction = if correction > 0.0 { correction } else { 1.0 };
    Ok(correction * (s.k - s.t_hat * z).exp() / (2.0 * PI * s.k2).sqrt())
}

/// Saddlepoint density of X at x; divided by its integral over (0, 1) when
/// `normalize` is set.
pub fn marginal_pdf(spec: &BetaProductSpec, x: f64, normalize: bool) -> Result<f64> {
    let m = SaddlepointMarginal::new(spec.clone())?;
    if normalize {
        m.pdf(x)
    } else {
        m.raw_pdf(x)
    }
}

/// Lugannani–Rice approximation to P(X ≤ x).
pub fn marginal_cdf(spec: &BetaProductSpec, x: f64) -> Result<f64> {
    SaddlepointMarginal::new(spec.clone())?.cdf(x)
}

/// A beta-product marginal with the quantities shared by every evaluation
/// precomputed: the interpolation window around the mean with its edge values,
/// and (lazily) the density normalizer.
#[derive(Debug)]
pub struct SaddlepointMarginal {
    spec: BetaProductSpec,
    mean_z: f64,
    window: f64,
    cdf_below: f64,
    cdf_above: f64,
    norm: OnceLock<f64>,
}

impl SaddlepointMarginal {
    pub fn new(spec: BetaProductSpec) -> Result<Self> {
        let u0 = spec.a_min;
        let mean_z = spec.eval(u0, 1);
        let k2 = spec.eval(u0, 2);
        let window = (NEAR_MEAN_WINDOW * k2.sqrt()).min(-0.5 * mean_z);
        let cdf_below = lugannani_rice(&spec, mean_z - window)?;
        let cdf_above = lugannani_rice(&spec, mean_z + window)?;
        Ok(Self {
            spec,
            mean_z,
            window,
            cdf_below,
            cdf_above,
            norm: OnceLock::new(),
        })
    }

    pub fn spec(&self) -> &BetaProductSpec {
        &self.spec
    }

    /// Unnormalized saddlepoint density of X.
    pub fn raw_pdf(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        Ok(density_z(&self.spec, x.ln())? / x)
    }

    /// ∫ raw_pdf over (1e-9, 1 − 1e-9), computed in the logit scale.
    pub fn normalizer(&self) -> Result<f64> {
        if let Some(&n) = self.norm.get() {
            return Ok(n);
        }
        let edge = (NORM_EPS / (1.0 - NORM_EPS)).ln();
        let mut failure = None;
        let value = integrate(
            |s| {
                // x = 1/(1 + e^−s): ln x = −ln(1 + e^−s), 1 − x = 1/(1 + e^s).
                let z = -(-s).exp().ln_1p();
                let one_minus_x = 1.0 / (1.0 + s.exp());
                match density_z(&self.spec, z) {
                    Ok(d) => d * one_minus_x,
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                }
            },
            edge,
            -edge,
            NORM_TOL,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(*self.norm.get_or_init(|| value))
    }

    /// Normalized saddlepoint density of X.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        Ok(self.raw_pdf(x)? / self.normalizer()?)
    }

    /// Lugannani–Rice CDF of X, clamped to [1e-15, 1 − 1e-15].
    pub fn cdf(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        let z = x.ln();
        let offset = z - self.mean_z;
        let f = if offset.abs() < self.window {
            let frac = (offset + self.window) / (2.0 * self.window);
            self.cdf_below + (self.cdf_above - self.cdf_below) * frac
        } else {
            lugannani_rice(&self.spec, z)?
        };
        Ok(f.clamp(CDF_FLOOR, 1.0 - CDF_FLOOR))
    }
}

fn check_unit(x: f64) -> Result<()> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::domain("marginal", x));
    }
    Ok(())
}

/// Lugannani–Rice tail approximation with the second-order correction
/// −φ(ŵ)[(λ₄/8 − 5λ₃²/24)/û − 1/û³ − λ₃/(2û²) + 1/ŵ³], where
/// λ₃ = K‴/K″^{3/2} and λ₄ = K⁗/K″². Singular at the mean.
fn lugannani_rice(spec: &BetaProductSpec, z: f64) -> Result<f64> {
    let s = solve_saddlepoint(spec, z)?;
    let w = s.t_hat.signum() * (2.0 * (s.t_hat * z - s.k)).max(0.0).sqrt();
    let u = s.t_hat * s.k2.sqrt();
    let l3 = s.k3 / s.k2.powf(1.5);
    let l4 = s.k4 / (s.k2 * s.k2);
    let first = 1.0 / w - 1.0 / u;
    let second = (l4 / 8.0 - 5.0 * l3 * l3 / 24.0) / u - 1.0 / u.powi(3) - l3 / (2.0 * u * u) + 1.0 / w.powi(3);
    Ok(normal_cdf(w) + normal_pdf(w) * (first - second))
}
