//! The nested Dirichlet distribution on a fixed tree: density, likelihood,
//! maximum likelihood fitting, sampling and analytic moments.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::{CompositionMatrix, ROW_SUM_TOL};
use crate::dirichlet::{self, dd_mle, DirichletFit, DirichletParams, LogGammaSampler, MleOptions, SufficientStats};
use crate::error::{Error, Result};
use crate::special::lgamma;
use crate::tree::{self, NodeId, ParamVector, Tree};

#[derive(Debug, Clone, PartialEq)]
pub struct NddModel {
    tree: Tree,
    params: ParamVector,
}

impl NddModel {
    pub fn new(tree: Tree, params: ParamVector) -> Result<Self> {
        for id in tree.non_root_nodes() {
            if params.get(id).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "no alpha for node `{}`",
                    tree.name(id)
                )));
            }
        }
        if params.iter().count() != tree.len() - 1 {
            return Err(Error::Dimension {
                expected: tree.len() - 1,
                found: params.iter().count(),
            });
        }
        Ok(Self { tree, params })
    }

    /// Parses a fully annotated tree such as `((X1:1,X2:2):3,X3:4)`.
    pub fn parse(text: &str) -> Result<Self> {
        let (tree, params) = tree::parse_model(text)?;
        let params = params.ok_or_else(|| Error::InvalidParameter("the tree carries no parameters".into()))?;
        Self::new(tree, params)
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn alpha(&self, id: NodeId) -> f64 {
        self.params.alpha(id)
    }

    /// Dirichlet parameters of the branch vector at nonterminal `k`.
    pub fn node_params(&self, k: NodeId) -> DirichletParams {
        DirichletParams::new(self.params.child_alphas(&self.tree, k)).expect("validated at construction")
    }

    /// Serialized tree with `:α` annotations.
    pub fn to_text(&self) -> String {
        tree::serialize_tree(&self.tree, Some(&self.params))
    }

    /// ln β(k) = ln Γ(φ_k) − Σ_{c ∈ C(k)} ln Γ(α_c).
    fn log_beta(&self, k: NodeId) -> f64 {
        let children = self.tree.children(k);
        lgamma(self.params.phi(&self.tree, k)) - children.iter().map(|&c| lgamma(self.alpha(c))).sum::<f64>()
    }

    /// ln f(x) for one composition given in tree component order.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let p = self.tree.num_components();
        if x.len() != p {
            return Err(Error::Dimension {
                expected: p,
                found: x.len(),
            });
        }
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
        Ok(self.log_density_unchecked(x))
    }

    fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let tree = &self.tree;
        let mut total: f64 = tree.nonterminals().map(|k| self.log_beta(k)).sum();
        for (j, &v) in x.iter().enumerate() {
            total += (self.alpha(tree.terminal(j)) - 1.0) * v.ln();
        }
        let interior: Vec<NodeId> = tree.interior_nodes().collect();
        if !interior.is_empty() {
            let sums = tree::subtree_sums(tree, |j| x[j]);
            for s in interior {
                let delta = self.alpha(s) - self.params.phi(tree, s);
                total += delta * sums[s.index()].ln();
            }
        }
        total
    }
}

/// ln f(x) for one composition in tree component order.
pub fn ndd_log_density(model: &NddModel, x: &[f64]) -> Result<f64> {
    model.log_density(x)
}

/// Log-density of every row of `x`, evaluated directly from the density.
pub fn ndd_log_densities(model: &NddModel, x: &CompositionMatrix) -> Result<Vec<f64>> {
    let columns = model.tree.align(x.names())?;
    x.check_interior()?;
    let mut row = vec![0.0; columns.len()];
    (0..x.nrows())
        .map(|i| {
            let r = x.row(i);
            for (v, &c) in row.iter_mut().zip(&columns) {
                *v = r[c];
            }
            model.log_density(&row).map_err(|e| match e {
                Error::RowSum { sum, .. } => Error::RowSum { row: i, sum },
                other => other,
            })
        })
        .collect()
}

/// Per-node sufficient statistics of the branch proportions together with
/// the constant −n·Σ_j mean(ln x_j) of the NDD log-likelihood.
#[derive(Debug, Clone)]
pub struct NodeStats {
    pub nodes: Vec<(NodeId, SufficientStats)>,
    pub constant: f64,
    pub n: usize,
}

impl NodeStats {
    pub fn new(tree: &Tree, x: &CompositionMatrix) -> Result<Self> {
        let branches = tree::to_branches(tree, x)?;
        let nodes = branches
            .iter()
            .map(|(k, b)| Ok((k, SufficientStats::from_rows(b.view())?)))
            .collect::<Result<Vec<_>>>()?;
        let n = x.nrows();
        let stats = SufficientStats::from_matrix(x)?;
        Ok(Self {
            nodes,
            constant: -dirichlet::loglik_constant(&stats),
            n,
        })
    }

    /// Statistics with observation `row` (tree component order) removed.
    pub fn without_row(&self, tree: &Tree, row: &[f64]) -> Self {
        let sums = tree::subtree_sums(tree, |j| row[j]);
        let nodes = self
            .nodes
            .iter()
            .map(|(k, s)| {
                let b: Vec<f64> = tree
                    .children(*k)
                    .iter()
                    .map(|c| sums[c.index()] / sums[k.index()])
                    .collect();
                (*k, s.without_row(ndarray::ArrayView1::from(&b)))
            })
            .collect();
        // The constant is −Σ_i Σ_j ln x_ij.
        let removed: f64 = row.iter().map(|v| v.ln()).sum();
        Self {
            nodes,
            constant: self.constant + removed,
            n: self.n - 1,
        }
    }

    /// Σ_k adjusted ℓ(α_k | b_k) + constant.
    pub fn loglik(&self, model: &NddModel) -> f64 {
        self.nodes
            .iter()
            .map(|(k, s)| dirichlet::adjusted_loglik(&model.params.child_alphas(&model.tree, *k), s))
            .sum::<f64>()
            + self.constant
    }
}

/// Log-likelihood via the decomposition into adjusted Dirichlet
/// log-likelihoods of the branch proportions.
pub fn ndd_loglik(model: &NddModel, x: &CompositionMatrix) -> Result<f64> {
    Ok(NodeStats::new(&model.tree, x)?.loglik(model))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Loglik,
    Aic,
    Bic,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Loglik => "loglik",
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
        }
    }

    /// Value to minimize: −2ℓ plus the penalty for `q` parameters.
    pub fn score(self, loglik: f64, q: usize, n: usize) -> f64 {
        let q = q as f64;
        match self {
            Criterion::Loglik => -2.0 * loglik,
            Criterion::Aic => -2.0 * loglik + 2.0 * q,
            Criterion::Bic => -2.0 * loglik + q * (n as f64).ln(),
        }
    }

    /// Reported value: ℓ itself for `loglik`, the information criterion
    /// otherwise.
    pub fn report(self, loglik: f64, q: usize, n: usize) -> f64 {
        match self {
            Criterion::Loglik => loglik,
            _ => self.score(loglik, q, n),
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loglik" => Ok(Criterion::Loglik),
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            _ => Err(Error::InvalidParameter(format!(
                "unknown criterion `{s}` (expected loglik, aic or bic)"
            ))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: NddModel,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    /// Number of free parameters, one per non-root node.
    pub q: usize,
    pub n: usize,
    pub converged: bool,
    /// Newton iterations summed over all node fits.
    pub iterations: usize,
    pub node_fits: Vec<(NodeId, DirichletFit)>,
}

impl FitResult {
    pub(crate) fn assemble(model: NddModel, node_fits: Vec<(NodeId, DirichletFit)>, constant: f64, n: usize) -> Self {
        let loglik = node_fits.iter().map(|(_, f)| f.adjusted_loglik).sum::<f64>() + constant;
        let q = model.tree.len() - 1;
        Self {
            loglik,
            aic: Criterion::Aic.score(loglik, q, n),
            bic: Criterion::Bic.score(loglik, q, n),
            q,
            n,
            converged: node_fits.iter().all(|(_, f)| f.report.converged),
            iterations: node_fits.iter().map(|(_, f)| f.report.iterations).sum(),
            node_fits,
            model,
        }
    }

    pub fn criterion(&self, c: Criterion) -> f64 {
        c.report(self.loglik, self.q, self.n)
    }

    /// Asymptotic standard error of every non-root α from the per-node
    /// Fisher information.
    pub fn standard_errors(&self) -> Vec<(NodeId, f64)> {
        let tree = self.model.tree();
        let mut out = Vec::with_capacity(self.q);
        for (k, fit) in &self.node_fits {
            out.extend(tree.children(*k).iter().copied().zip(fit.standard_errors()));
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// Fits every nonterminal's Dirichlet independently from precomputed
/// statistics. `init` optionally warm-starts every node.
pub fn ndd_mle_from_stats(
    tree: &Tree,
    stats: &NodeStats,
    opts: &MleOptions,
    init: Option<&ParamVector>,
) -> Result<FitResult> {
    let fits = stats
        .nodes
        .par_iter()
        .map(|(k, s)| {
            let mut node_opts = opts.clone();
            if let Some(init) = init {
                node_opts.init = Some(init.child_alphas(tree, *k));
            }
            dd_mle(s, &node_opts).map(|f| (*k, f)).map_err(|e| Error::NodeFit {
                node: tree.name(*k).to_string(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut params = ParamVector::unset(tree);
    for (k, fit) in &fits {
        for (&c, &a) in tree.children(*k).iter().zip(fit.params.alpha()) {
            params.set(c, a);
        }
    }
    let model = NddModel::new(tree.clone(), params)?;
    Ok(FitResult::assemble(model, fits, stats.constant, stats.n))
}

/// Maximum likelihood fit of the NDD on a fixed tree.
pub fn ndd_mle(tree: &Tree, x: &CompositionMatrix, opts: &MleOptions) -> Result<FitResult> {
    if x.nrows() < 2 {
        return Err(Error::TooFewObservations {
            required: 2,
            found: x.nrows(),
        });
    }
    let stats = NodeStats::new(tree, x)?;
    ndd_mle_from_stats(tree, &stats, opts, None)
}

/// Draws `n` compositions by sampling every branch vector independently and
/// multiplying down the tree. Columns are in tree component order; rows with
/// a component that underflows to zero are redrawn.
pub fn ndd_sample<R: Rng + ?Sized>(model: &NddModel, n: usize, rng: &mut R) -> CompositionMatrix {
    let tree = &model.tree;
    let p = tree.num_components();
    let nodes: Vec<(NodeId, Vec<LogGammaSampler>)> = tree
        .nonterminals()
        .map(|k| {
            let samplers = tree
                .children(k)
                .iter()
                .map(|&c| LogGammaSampler::new(model.alpha(c)))
                .collect();
            (k, samplers)
        })
        .collect();
    let mut values = Array2::zeros((n, p));
    let mut log_prod = vec![0.0; tree.len()];
    let mut branch = Vec::new();
    let mut x = vec![0.0; p];
    for mut row in values.rows_mut() {
        loop {
            for (k, samplers) in &nodes {
                branch.resize(samplers.len(), 0.0);
                dirichlet::sample_log_dirichlet(samplers, rng, &mut branch);
                for (&c, &lb) in tree.children(*k).iter().zip(&branch) {
                    log_prod[c.index()] = log_prod[k.index()] + lb;
                }
            }
            for (j, v) in x.iter_mut().enumerate() {
                *v = log_prod[tree.terminal(j).index()].exp();
            }
            let sum: f64 = x.iter().sum();
            if x.iter().all(|&v| v > 0.0 && v / sum < 1.0) {
                for (r, v) in row.iter_mut().zip(&x) {
                    *r = v / sum;
                }
                break;
            }
        }
    }
    CompositionMatrix::new(tree.component_names().to_vec(), values).expect("names match columns")
}

/// Analytic first and second moments of the components.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub cov: Array2<f64>,
    pub corr: Array2<f64>,
}

/// Mean, standard deviation, covariance and correlation of every component.
///
/// Products along root-to-leaf paths are accumulated as sums of logs.
pub fn ndd_moments(model: &NddModel) -> MomentSummary {
    let tree = &model.tree;
    let params = &model.params;
    let p = tree.num_components();
    let paths: Vec<_> = (0..p)
        .map(|j| tree.path_to(tree.terminal(j)).expect("terminal"))
        .collect();
    // ln[(α_C + 1)/α_C · φ_k/(φ_k + 1)], the per-node factor shared by
    // second moments and cross moments.
    let ratio = |k: NodeId, c: NodeId| {
        let a = params.alpha(c);
        let phi = params.phi(tree, k);
        let r = (1.0 / a).ln_1p() - (1.0 / phi).ln_1p();
        assert!(r > 0.0, "second-moment factor must exceed one");
        r
    };
    let log_mean: Vec<f64> = paths
        .iter()
        .map(|path| {
            path.iter()
                .map(|s| params.alpha(s.child).ln() - params.phi(tree, s.node).ln())
                .sum()
        })
        .collect();
    let mean: Vec<f64> = log_mean.iter().map(|l| l.exp()).collect();
    let mut cov = Array2::zeros((p, p));
    for j in 0..p {
        let log_second: f64 = paths[j].iter().map(|s| ratio(s.node, s.child)).sum();
        cov[[j, j]] = mean[j] * mean[j] * log_second.exp_m1();
        for k in (j + 1)..p {
            let shared = paths[j]
                .iter()
                .zip(&paths[k])
                .take_while(|(a, b)| a.node == b.node)
                .count();
            let last = paths[j][shared - 1].node;
            let phi_last = params.phi(tree, last);
            let mut log_k = -(1.0 / phi_last).ln_1p();
            for (a, b) in paths[j][..shared - 1].iter().zip(&paths[k][..shared - 1]) {
                assert_eq!(a.child, b.child, "paths diverge above their last common node");
                log_k += ratio(a.node, a.child);
            }
            let c = mean[j] * mean[k] * log_k.exp_m1();
            cov[[j, k]] = c;
            cov[[k, j]] = c;
        }
    }
    let sd: Vec<f64> = (0..p).map(|j| cov[[j, j]].sqrt()).collect();
    let mut corr = Array2::eye(p);
    for j in 0..p {
        for k in 0..p {
            if j != k {
                corr[[j, k]] = (cov[[j, k]] / (sd[j] * sd[k])).clamp(-1.0, 1.0);
            }
        }
    }
    MomentSummary {
        names: tree.component_names().to_vec(),
        mean,
        sd,
        cov,
        corr,
    }
}
