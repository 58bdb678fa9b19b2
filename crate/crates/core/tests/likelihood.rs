//! NDD densities and log-likelihoods against an independent evaluation: the
//! product of the Dirichlet densities of the branch proportions times the
//! Jacobian Π_s S(s)^{−(|C_s| − 1)} over interior nodes.

use nested_dirichlet::tree::NodeKind;
use nested_dirichlet::{
    dd_log_density, ndd_log_densities, ndd_log_density, ndd_loglik, ndd_sample, seeded_rng, CompositionMatrix,
    DirichletParams, NddModel,
};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

/// Random tree text with α on every non-root node. Labels are X1.. in leaf
/// order.
fn random_tree<R: Rng>(rng: &mut R, p: usize, balanced_delta: bool) -> String {
    fn build<R: Rng>(rng: &mut R, labels: &[String], top: bool, balanced: bool) -> (String, f64) {
        if labels.len() == 1 {
            let a = rng.random_range(0.3..12.0);
            return (format!("{}:{a}", labels[0]), a);
        }
        // Split into 2..=min(4, len) consecutive groups, or a flat node.
        let k = if labels.len() == 2 {
            2
        } else {
            rng.random_range(2..=labels.len().min(4))
        };
        let mut cuts: Vec<usize> = (1..labels.len()).collect();
        while cuts.len() > k - 1 {
            let i = rng.random_range(0..cuts.len());
            cuts.remove(i);
        }
        let mut parts = Vec::new();
        let mut start = 0;
        for &c in cuts.iter().chain(std::iter::once(&labels.len())) {
            parts.push(&labels[start..c]);
            start = c;
        }
        let children: Vec<(String, f64)> = parts.iter().map(|p| build(rng, p, false, balanced)).collect();
        let body = children.iter().map(|c| c.0.as_str()).collect::<Vec<_>>().join(",");
        if top {
            return (format!("({body})"), f64::NAN);
        }
        let phi: f64 = children.iter().map(|c| c.1).sum();
        let a = if balanced { phi } else { rng.random_range(0.3..15.0) };
        (format!("({body}):{a}"), a)
    }
    let labels: Vec<String> = (1..=p).map(|j| format!("X{j}")).collect();
    build(rng, &labels, true, balanced_delta).0
}

fn oracle_log_density(model: &NddModel, x: &[f64]) -> f64 {
    let tree = model.tree();
    let sums: Vec<f64> = tree
        .ids()
        .map(|k| tree.terminal_set(k).iter().map(|&j| x[j]).sum())
        .collect();
    let mut total = 0.0;
    for k in tree.nonterminals() {
        let children = tree.children(k);
        let alpha: Vec<f64> = children.iter().map(|&c| model.alpha(c)).collect();
        let phi: f64 = alpha.iter().sum();
        total += ln_gamma(phi) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
        for (&c, &a) in children.iter().zip(&alpha) {
            total += (a - 1.0) * (sums[c.index()] / sums[k.index()]).ln();
        }
        if tree.kind(k) == NodeKind::Interior {
            total -= (children.len() as f64 - 1.0) * sums[k.index()].ln();
        }
    }
    total
}

#[test]
fn density_matches_branch_product() {
    let mut rng = seeded_rng(101);
    for _ in 0..60 {
        let p = rng.random_range(2..=7);
        let model = NddModel::parse(&random_tree(&mut rng, p, false)).unwrap();
        let x = ndd_sample(&model, 20, &mut rng);
        for row in x.values().rows() {
            let row = row.to_vec();
            let got = ndd_log_density(&model, &row).unwrap();
            let want = oracle_log_density(&model, &row);
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                "{}: {got} vs {want}",
                model.to_text()
            );
        }
    }
}

#[test]
fn decomposed_loglik_equals_summed_densities() {
    let mut rng = seeded_rng(202);
    for _ in 0..50 {
        let p = rng.random_range(2..=6);
        let n = rng.random_range(1..=50);
        let model = NddModel::parse(&random_tree(&mut rng, p, false)).unwrap();
        let x = ndd_sample(&model, n, &mut rng);
        let direct: f64 = ndd_log_densities(&model, &x).unwrap().iter().sum();
        let decomposed = ndd_loglik(&model, &x).unwrap();
        assert!(
            (direct - decomposed).abs() <= 1e-8 * direct.abs().max(1.0),
            "{direct} vs {decomposed}"
        );
    }
}

#[test]
fn zero_deltas_reduce_to_the_dirichlet() {
    let mut rng = seeded_rng(303);
    for _ in 0..20 {
        let p = rng.random_range(3..=7);
        let model = NddModel::parse(&random_tree(&mut rng, p, true)).unwrap();
        let tree = model.tree();
        let alpha: Vec<f64> = (0..p).map(|j| model.alpha(tree.terminal(j))).collect();
        let dd = DirichletParams::new(alpha.clone()).unwrap();
        let x = nested_dirichlet::dd_sample(&dd, 50, &mut rng);
        for row in x.values().rows() {
            let row = row.to_vec();
            let a = ndd_log_density(&model, &row).unwrap();
            let b = dd_log_density(&dd, &row).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn columns_are_matched_by_name() {
    let model = NddModel::parse("((B:2,A:3):4,C:5)").unwrap();
    let x = CompositionMatrix::new(
        vec!["A".into(), "B".into(), "C".into()],
        ndarray::arr2(&[[0.3, 0.2, 0.5], [0.1, 0.6, 0.3]]),
    )
    .unwrap();
    let by_name = ndd_log_densities(&model, &x).unwrap();
    // Tree component order is B, A, C.
    assert_eq!(by_name[0], ndd_log_density(&model, &[0.2, 0.3, 0.5]).unwrap());
    assert_eq!(by_name[1], ndd_log_density(&model, &[0.6, 0.1, 0.3]).unwrap());
}
