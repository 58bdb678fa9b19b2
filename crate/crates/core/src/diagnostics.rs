//! Fit diagnostics: probability-integral-transform residuals, leave-one-out
//! likelihood displacement, Aitchison distances and plot-ready marginal
//! tables.

use ndarray::Array2;
use rayon::prelude::*;

use crate::composition::CompositionMatrix;
use crate::dirichlet::MleOptions;
use crate::error::{Error, Result};
use crate::ndd::{ndd_mle_from_stats, ndd_moments, FitResult, NddModel, NodeStats};
use crate::saddlepoint::{BetaProductSpec, SaddlepointMarginal};
use crate::special::{beta_cdf, normal_cdf, normal_quantile};
use crate::tree::Tree;

/// CDF values are clamped to [RESIDUAL_CDF_FLOOR, 1 − RESIDUAL_CDF_FLOOR]
/// before the normal quantile is taken.
pub const RESIDUAL_CDF_FLOOR: f64 = 1e-12;

/// Marginal CDF of one component: exact for a single beta factor, the
/// saddlepoint approximation for longer paths.
#[derive(Debug)]
pub enum MarginalCdf {
    Beta { a: f64, b: f64 },
    Saddlepoint(SaddlepointMarginal),
}

impl MarginalCdf {
    pub fn for_component(model: &NddModel, j: usize) -> Result<Self> {
        let spec = BetaProductSpec::for_component(model, j)?;
        Ok(if spec.len() == 1 {
            MarginalCdf::Beta {
                a: spec.a()[0],
                b: spec.b()[0],
            }
        } else {
            MarginalCdf::Saddlepoint(SaddlepointMarginal::new(spec)?)
        })
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        match self {
            MarginalCdf::Beta { a, b } => Ok(beta_cdf(x, *a, *b)),
            MarginalCdf::Saddlepoint(m) => m.cdf(x),
        }
    }
}

/// Pseudo-residuals r_ij = Φ⁻¹(F̂_j(x_ij)), columns in data order.
#[derive(Debug, Clone)]
pub struct ResidualMatrix {
    pub names: Vec<String>,
    pub r: Array2<f64>,
    /// Cells whose CDF value had to be clamped.
    pub clamped: Array2<bool>,
}

impl ResidualMatrix {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.r.column(j).to_vec())
    }

    pub fn num_clamped(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }
}

pub fn pseudo_residuals(model: &NddModel, x: &CompositionMatrix) -> Result<ResidualMatrix> {
    let tree = model.tree();
    let columns = tree.align(x.names())?;
    x.check_interior()?;
    let n = x.nrows();
    let per_component = (0..tree.num_components())
        .into_par_iter()
        .map(|j| {
            let marginal = MarginalCdf::for_component(model, j)?;
            let col = x.values().column(columns[j]).to_vec();
            col.par_iter()
                .map(|&v| {
                    let f = marginal.cdf(v)?;
                    let clamped = f.clamp(RESIDUAL_CDF_FLOOR, 1.0 - RESIDUAL_CDF_FLOOR);
                    Ok((normal_quantile(clamped), clamped != f))
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::NodeFit {
                    node: tree.component_names()[j].clone(),
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r = Array2::zeros((n, x.ncols()));
    let mut clamped = Array2::from_elem((n, x.ncols()), false);
    for (j, values) in per_component.into_iter().enumerate() {
        for (i, (v, c)) in values.into_iter().enumerate() {
            r[[i, columns[j]]] = v;
            clamped[[i, columns[j]]] = c;
        }
    }
    Ok(ResidualMatrix {
        names: x.names().to_vec(),
        r,
        clamped,
    })
}

/// Outcome of the leave-one-out refit for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct Refit {
    pub converged: bool,
    pub iterations: usize,
    /// Set when the refit failed; the row's displacement is then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Displacement {
    /// The full-data fit.
    pub fit: FitResult,
    pub ld: Vec<f64>,
    pub refits: Vec<Refit>,
}

/// LD_i = 2(ℓ(α̂ | x) − ℓ(α̂₍ᵢ₎ | x)), with α̂₍ᵢ₎ the MLE without row i and
/// both log-likelihoods taken over the full data on the fixed tree.
pub fn likelihood_displacement(tree: &Tree, x: &CompositionMatrix, opts: &MleOptions) -> Result<Displacement> {
    if x.nrows() < 3 {
        return Err(Error::TooFewObservations {
            required: 3,
            found: x.nrows(),
        });
    }
    let stats = NodeStats::new(tree, x)?;
    let fit = ndd_mle_from_stats(tree, &stats, opts, None)?;
    let full = stats.loglik(&fit.model);
    let columns = tree.align(x.names())?;
    let (ld, refits): (Vec<f64>, Vec<Refit>) = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = columns.iter().map(|&c| x.values()[[i, c]]).collect();
            let reduced = stats.without_row(tree, &row);
            match ndd_mle_from_stats(tree, &reduced, opts, Some(fit.model.params())) {
                Ok(f) => (
                    2.0 * (full - stats.loglik(&f.model)),
                    Refit {
                        converged: f.converged,
                        iterations: f.iterations,
                        error: None,
                    },
                ),
                Err(e) => (
                    f64::NAN,
                    Refit {
                        converged: false,
                        iterations: 0,
                        error: Some(e.to_string()),
                    },
                ),
            }
        })
        .unzip();
    Ok(Displacement { fit, ld, refits })
}

/// Centred log-ratio transform; all entries must be positive.
fn clr(x: &[f64]) -> Result<Vec<f64>> {
    if let Some((j, &v)) = x.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Boundary {
            row: 0,
            component: j,
            value: v,
        });
    }
    let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let centre = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(logs.into_iter().map(|l| l - centre).collect())
}

/// Aitchison distance between two positive vectors of equal length; neither
/// needs to be closed.
pub fn aitchison(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (ca, cb) = (clr(a)?, clr(b)?);
    Ok(ca.iter().zip(&cb).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt())
}

/// Aitchison distance of every row from the model mean.
pub fn aitchison_distance(model: &NddModel, x: &CompositionMatrix) -> Result<Vec<f64>> {
    let tree = model.tree();
    let columns = tree.align(x.names())?;
    let tree_mean = ndd_moments(model).mean;
    let mut mean = vec![0.0; x.ncols()];
    for (j, &c) in columns.iter().enumerate() {
        mean[c] = tree_mean[j];
    }
    x.values()
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            aitchison(&row.to_vec(), &mean).map_err(|e| match e {
                Error::Boundary { component, value, .. } => Error::Boundary {
                    row: i,
                    component,
                    value,
                },
                e => e,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct InfluenceReport {
    pub fit: FitResult,
    pub ld: Vec<f64>,
    pub aitchison: Vec<f64>,
    pub refits: Vec<Refit>,
}

/// Likelihood displacement plus the Aitchison distance of every row from the
/// full-data fitted mean.
pub fn influence(tree: &Tree, x: &CompositionMatrix, opts: &MleOptions) -> Result<InfluenceReport> {
    let d = likelihood_displacement(tree, x, opts)?;
    let aitchison = aitchison_distance(&d.fit.model, x)?;
    Ok(InfluenceReport {
        fit: d.fit,
        ld: d.ld,
        aitchison,
        refits: d.refits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalPoint {
    pub x: f64,
    pub pdf: f64,
    pub cdf: f64,
}

/// Normalized saddlepoint density and CDF of `component` at each grid point.
pub fn marginal_fit_table(model: &NddModel, component: &str, grid: &[f64]) -> Result<Vec<MarginalPoint>> {
    let tree = model.tree();
    let j = tree
        .component_names()
        .iter()
        .position(|c| c == component)
        .ok_or_else(|| Error::UnknownNode(component.to_string()))?;
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("grid must be strictly increasing".into()));
    }
    let m = SaddlepointMarginal::new(BetaProductSpec::for_component(model, j)?)?;
    grid.iter()
        .map(|&x| {
            Ok(MarginalPoint {
                x,
                pdf: m.pdf(x)?,
                cdf: m.cdf(x)?,
            })
        })
        .collect()
}

/// Evenly spaced interior grid of `k` points on (0, 1).
pub fn unit_grid(k: usize) -> Vec<f64> {
    (1..=k).map(|i| i as f64 / (k + 1) as f64).collect()
}

/// (theoretical, sample) quantile pairs: sorted residuals against
/// Φ⁻¹((i − 1/2)/n).
pub fn qq_table(residuals: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| (normal_quantile((i as f64 + 0.5) / n), r))
        .collect()
}

/// Kolmogorov–Smirnov distance between the sample and N(0, 1).
pub fn ks_statistic(sample: &[f64]) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal_cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}
