//! Greedy top-down search for the tree structure of an NDD.
//!
//! Starting from the Dirichlet over all components, every decision point
//! compares the Dirichlet over the current subcomposition with each model
//! that adds a single binary split: two groups of at least two components,
//! or one component against the rest. The best split is adopted only if it
//! strictly improves the criterion, and the search then recurses into every
//! new block of three or more components.
//!
//! All likelihoods are assembled from adjusted per-node Dirichlet
//! log-likelihoods plus the constant of the subcomposition, so node fits are
//! shared between candidates through a cache.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::Array2;
use rayon::prelude::*;

use crate::composition::CompositionMatrix;
use crate::dirichlet::{dd_mle, DirichletFit, MleOptions, SufficientStats};
use crate::error::{Error, Result};
use crate::ndd::{Criterion, FitResult, NddModel};
use crate::tree::{serialize_shape, NodeId, ParamVector, Tree, TreeShape};

/// Largest number of components accepted by [`exhaustive_search`].
pub const EXHAUSTIVE_MAX_COMPONENTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitKind {
    /// Two blocks of at least two components each.
    TwoGroup,
    /// One component against all others; `blocks[0]` holds the singleton.
    Singleton,
}

/// A single binary split of `p` children, given by positions `0..p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SplitCandidate {
    pub kind: SplitKind,
    pub blocks: [Vec<usize>; 2],
}

impl SplitCandidate {
    fn map(&self, set: &[usize]) -> Self {
        let m = |b: &Vec<usize>| b.iter().map(|&i| set[i]).collect();
        Self {
            kind: self.kind,
            blocks: [m(&self.blocks[0]), m(&self.blocks[1])],
        }
    }
}

/// All single-binary-split candidates for `p` children: every unordered
/// bipartition into blocks of size ≥ 2 (p ≥ 4), then the `p` singleton
/// splits (p ≥ 3). Two-group blocks are listed with position 0 in the first
/// block.
pub fn enumerate_splits(p: usize) -> Vec<SplitCandidate> {
    let mut out = Vec::new();
    if p >= 4 {
        // Subsets containing position 0, excluding those that leave fewer
        // than two positions on either side.
        for mask in 0u64..(1u64 << (p - 1)) {
            let first: Vec<usize> = std::iter::once(0)
                .chain((1..p).filter(|i| mask & (1 << (i - 1)) != 0))
                .collect();
            if first.len() < 2 || p - first.len() < 2 {
                continue;
            }
            let second = (0..p).filter(|i| !first.contains(i)).collect();
            out.push(SplitCandidate {
                kind: SplitKind::TwoGroup,
                blocks: [first, second],
            });
        }
    }
    if p >= 3 {
        for j in 0..p {
            out.push(SplitCandidate {
                kind: SplitKind::Singleton,
                blocks: [vec![j], (0..p).filter(|&i| i != j).collect()],
            });
        }
    }
    out
}

/// Children of one Dirichlet node, each a sorted set of data columns. Groups
/// are ordered by their smallest column.
type NodeKey = Vec<Vec<usize>>;

fn node_key(mut groups: Vec<Vec<usize>>) -> NodeKey {
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_unstable_by_key(|g| g[0]);
    groups
}

fn singletons(set: &[usize]) -> NodeKey {
    set.iter().map(|&j| vec![j]).collect()
}

/// Log-likelihood of a local model over one subcomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFit {
    pub loglik: f64,
    /// Free parameters of the local model.
    pub q: usize,
    pub n: usize,
}

impl LocalFit {
    /// The value to minimize.
    pub fn score(&self, c: Criterion) -> f64 {
        c.score(self.loglik, self.q, self.n)
    }

    /// The value reported in traces: ℓ for `loglik`, AIC or BIC otherwise.
    pub fn report(&self, c: Criterion) -> f64 {
        c.report(self.loglik, self.q, self.n)
    }
}

/// Dirichlet fits of branch proportions keyed by the child groups of the
/// node, shared by every candidate and decision point over one data set.
#[derive(Debug)]
pub struct FitCache<'a> {
    x: &'a CompositionMatrix,
    opts: MleOptions,
    fits: Mutex<HashMap<NodeKey, DirichletFit>>,
    fits_performed: AtomicUsize,
    iterations: AtomicUsize,
}

impl<'a> FitCache<'a> {
    pub fn new(x: &'a CompositionMatrix, opts: MleOptions) -> Self {
        Self {
            x,
            opts,
            fits: Mutex::new(HashMap::new()),
            fits_performed: AtomicUsize::new(0),
            iterations: AtomicUsize::new(0),
        }
    }

    pub fn data(&self) -> &CompositionMatrix {
        self.x
    }

    /// Number of Dirichlet fits actually computed (cache misses).
    pub fn fits_performed(&self) -> usize {
        self.fits_performed.load(Ordering::Relaxed)
    }

    /// Newton iterations summed over all computed fits.
    pub fn newton_iterations(&self) -> usize {
        self.iterations.load(Ordering::Relaxed)
    }

    fn node_fit(&self, key: &NodeKey) -> Result<DirichletFit> {
        if let Some(f) = self.fits.lock().expect("cache lock").get(key) {
            return Ok(f.clone());
        }
        let fit = dd_mle(&self.branch_stats(key)?, &self.opts)?;
        self.fits_performed.fetch_add(1, Ordering::Relaxed);
        self.iterations.fetch_add(fit.report.iterations, Ordering::Relaxed);
        let mut fits = self.fits.lock().expect("cache lock");
        Ok(fits.entry(key.clone()).or_insert(fit).clone())
    }

    fn branch_stats(&self, key: &NodeKey) -> Result<SufficientStats> {
        let x = self.x.values();
        let n = x.nrows();
        let mut b = Array2::zeros((n, key.len()));
        for (i, row) in x.rows().into_iter().enumerate() {
            let sums: Vec<f64> = key.iter().map(|g| g.iter().map(|&j| row[j]).sum()).collect();
            let total: f64 = sums.iter().sum();
            for (k, s) in sums.iter().enumerate() {
                b[[i, k]] = s / total;
            }
        }
        SufficientStats::from_rows(b.view())
    }

    /// −Σ_i Σ_{j∈S} ln(x_ij / Σ_{l∈S} x_il), the constant of the
    /// subcomposition over `set`.
    fn constant(&self, set: &[usize]) -> f64 {
        let d = set.len() as f64;
        self.x
            .values()
            .rows()
            .into_iter()
            .map(|row| {
                let s: f64 = set.iter().map(|&j| row[j]).sum();
                d * s.ln() - set.iter().map(|&j| row[j].ln()).sum::<f64>()
            })
            .sum()
    }

    /// Fits the local model over the subcomposition `set` (data columns):
    /// the Dirichlet when `cand` is `None`, otherwise the split `cand`, whose
    /// blocks are given as data columns.
    pub fn fit_candidate(&self, set: &[usize], cand: Option<&SplitCandidate>) -> Result<LocalFit> {
        let keys = local_nodes(set, cand);
        let mut loglik = self.constant(set);
        let mut q = 0;
        for key in &keys {
            loglik += self.node_fit(key)?.adjusted_loglik;
            q += key.len();
        }
        Ok(LocalFit {
            loglik,
            q,
            n: self.x.nrows(),
        })
    }
}

/// Dirichlet nodes of a local model: the root first, then each block with
/// at least two components.
fn local_nodes(set: &[usize], cand: Option<&SplitCandidate>) -> Vec<NodeKey> {
    match cand {
        None => vec![singletons(set)],
        Some(c) => {
            let mut keys = vec![node_key(c.blocks.to_vec())];
            keys.extend(
                c.blocks
                    .iter()
                    .filter(|b| b.len() >= 2)
                    .map(|b| node_key(singletons(b))),
            );
            keys
        }
    }
}

/// Tree structure over data columns.
#[derive(Debug, Clone, PartialEq)]
enum Layout {
    Leaf(usize),
    Group(Vec<Layout>),
}

impl Layout {
    fn flat(set: &[usize]) -> Self {
        let mut set = set.to_vec();
        set.sort_unstable();
        Layout::Group(set.into_iter().map(Layout::Leaf).collect())
    }

    fn block(b: &[usize]) -> Self {
        if b.len() == 1 {
            Layout::Leaf(b[0])
        } else {
            Layout::flat(b)
        }
    }

    fn split(set: &[usize], cand: Option<&SplitCandidate>) -> Self {
        match cand {
            None => Layout::flat(set),
            Some(c) => Layout::Group(node_key(c.blocks.to_vec()).iter().map(|b| Layout::block(b)).collect()),
        }
    }

    fn min_column(&self) -> usize {
        match self {
            Layout::Leaf(j) => *j,
            Layout::Group(ch) => ch.iter().map(Layout::min_column).min().expect("non-empty group"),
        }
    }

    fn columns(&self, out: &mut Vec<usize>) {
        match self {
            Layout::Leaf(j) => out.push(*j),
            Layout::Group(ch) => ch.iter().for_each(|c| c.columns(out)),
        }
    }

    fn shape(&self, names: &[String]) -> TreeShape {
        match self {
            Layout::Leaf(j) => TreeShape::leaf(names[*j].clone()),
            Layout::Group(ch) => TreeShape::group(ch.iter().map(|c| c.shape(names)).collect()),
        }
    }

    /// Child groups of every Dirichlet node, in preorder.
    fn node_keys(&self, out: &mut Vec<NodeKey>) {
        if let Layout::Group(ch) = self {
            out.push(
                ch.iter()
                    .map(|c| {
                        let mut v = Vec::new();
                        c.columns(&mut v);
                        v
                    })
                    .collect(),
            );
            ch.iter().for_each(|c| c.node_keys(out));
        }
    }
}

fn describe_set(names: &[String], set: &[usize]) -> String {
    let labels: Vec<&str> = set.iter().map(|&j| names[j].as_str()).collect();
    format!("{{{}}}", labels.join(","))
}

/// Tie-break key: blocks as sorted label lists, in sorted order.
fn tie_key(names: &[String], cand: &SplitCandidate) -> Vec<Vec<String>> {
    let mut blocks: Vec<Vec<String>> = cand
        .blocks
        .iter()
        .map(|b| {
            let mut l: Vec<String> = b.iter().map(|&j| names[j].clone()).collect();
            l.sort();
            l
        })
        .collect();
    blocks.sort();
    blocks
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Decide {
        node: String,
        candidate: String,
        criterion: Criterion,
        value: f64,
    },
    Adopt {
        node: String,
        choice: String,
    },
    Stop {
        node: String,
        choice: String,
    },
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Decide {
                node,
                candidate,
                criterion,
                value,
            } => write!(f, "DECIDE {node} {candidate} {criterion} {value}"),
            TraceEvent::Adopt { node, choice } => write!(f, "ADOPT {node} {choice}"),
            TraceEvent::Stop { node, choice } => write!(f, "STOP {node} {choice}"),
        }
    }
}

/// Every comparison made by the search, in decision order. Nodes carry the
/// names they have in the final tree; candidates are written in the tree
/// text format over the labels of the subcomposition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchTrace {
    pub events: Vec<TraceEvent>,
}

impl fmt::Display for SearchTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.events {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SearchOptions {
    pub criterion: Criterion,
    pub mle: MleOptions,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub fit: FitResult,
    pub trace: SearchTrace,
    /// The Dirichlet over all components, the starting point of the search.
    pub initial: LocalFit,
    pub fits_performed: usize,
}

/// Events recorded against column sets until node names are known.
enum PendingEvent {
    Decide(Vec<usize>, String, f64),
    Adopt(Vec<usize>, String),
    Stop(Vec<usize>, String),
}

struct Searcher<'c, 'a> {
    cache: &'c FitCache<'a>,
    criterion: Criterion,
    events: Vec<PendingEvent>,
}

impl Searcher<'_, '_> {
    fn names(&self) -> &[String] {
        self.cache.x.names()
    }

    fn describe(&self, set: &[usize], cand: Option<&SplitCandidate>) -> String {
        serialize_shape(&Layout::split(set, cand).shape(self.names()))
    }

    fn context(&self, set: &[usize], e: Error) -> Error {
        match e {
            e @ Error::Search { .. } => e,
            e => Error::Search {
                context: describe_set(self.names(), set),
                source: Box::new(e),
            },
        }
    }

    fn decide(&mut self, set: &[usize]) -> Result<Layout> {
        let c = self.criterion;
        let base = self.cache.fit_candidate(set, None).map_err(|e| self.context(set, e))?;
        self.events.push(PendingEvent::Decide(
            set.to_vec(),
            self.describe(set, None),
            base.report(c),
        ));
        let candidates: Vec<SplitCandidate> = enumerate_splits(set.len()).iter().map(|s| s.map(set)).collect();
        let cache = self.cache;
        let fits = candidates
            .par_iter()
            .map(|cand| cache.fit_candidate(set, Some(cand)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| self.context(set, e))?;

        let mut best: Option<(usize, f64)> = None;
        for (i, (cand, fit)) in candidates.iter().zip(&fits).enumerate() {
            self.events.push(PendingEvent::Decide(
                set.to_vec(),
                self.describe(set, Some(cand)),
                fit.report(c),
            ));
            let score = fit.score(c);
            let better = match best {
                None => true,
                Some((b, s)) => {
                    score < s || (score == s && tie_key(self.names(), cand) < tie_key(self.names(), &candidates[b]))
                }
            };
            if better {
                best = Some((i, score));
            }
        }

        match best {
            Some((i, score)) if score < base.score(c) => {
                let cand = &candidates[i];
                self.events
                    .push(PendingEvent::Adopt(set.to_vec(), self.describe(set, Some(cand))));
                let mut children = Vec::new();
                for block in node_key(cand.blocks.to_vec()) {
                    children.push(if block.len() >= 3 {
                        self.decide(&block)?
                    } else {
                        Layout::block(&block)
                    });
                }
                children.sort_by_key(Layout::min_column);
                Ok(Layout::Group(children))
            }
            _ => {
                self.events
                    .push(PendingEvent::Stop(set.to_vec(), self.describe(set, None)));
                Ok(Layout::flat(set))
            }
        }
    }
}

fn check_input(x: &CompositionMatrix) -> Result<()> {
    if x.nrows() < 2 {
        return Err(Error::TooFewObservations {
            required: 2,
            found: x.nrows(),
        });
    }
    if x.ncols() < 2 {
        return Err(Error::Dimension {
            expected: 2,
            found: x.ncols(),
        });
    }
    x.check_interior()
}

/// Builds the fitted model for `layout` from cached node fits.
fn assemble(cache: &FitCache<'_>, layout: &Layout) -> Result<FitResult> {
    let x = cache.x;
    let tree = Tree::from_shape(&layout.shape(x.names()))?;
    let columns = tree.align(x.names())?;
    let mut params = ParamVector::unset(&tree);
    let mut node_fits: Vec<(NodeId, DirichletFit)> = Vec::new();
    let mut keys = Vec::new();
    layout.node_keys(&mut keys);
    let nonterminals: Vec<NodeId> = tree.nonterminals().collect();
    debug_assert_eq!(keys.len(), nonterminals.len());
    for k in nonterminals {
        let groups: Vec<Vec<usize>> = tree
            .children(k)
            .iter()
            .map(|&c| tree.terminal_set(c).iter().map(|&j| columns[j]).collect())
            .collect();
        let key = node_key(groups.clone());
        let fit = cache.node_fit(&key)?;
        // Map the cached child order back onto the tree's child order.
        for (&c, g) in tree.children(k).iter().zip(&groups) {
            let mut g = g.clone();
            g.sort_unstable();
            let pos = key.iter().position(|kg| *kg == g).expect("group present in key");
            params.set(c, fit.params.alpha()[pos]);
        }
        node_fits.push((k, fit));
    }
    let model = NddModel::new(tree, params)?;
    let constant = cache.constant(&(0..x.ncols()).collect::<Vec<_>>());
    Ok(FitResult::assemble(model, node_fits, constant, x.nrows()))
}

/// Column set of every nonterminal of the fitted tree, with its name.
fn node_names(tree: &Tree, columns: &[usize]) -> HashMap<Vec<usize>, String> {
    tree.nonterminals()
        .map(|k| {
            let mut set: Vec<usize> = tree.terminal_set(k).iter().map(|&j| columns[j]).collect();
            set.sort_unstable();
            (set, tree.name(k).to_string())
        })
        .collect()
}

/// Greedy top-down tree search.
pub fn search(x: &CompositionMatrix, opts: &SearchOptions) -> Result<SearchResult> {
    check_input(x)?;
    let cache = FitCache::new(x, opts.mle.clone());
    let all: Vec<usize> = (0..x.ncols()).collect();
    let mut searcher = Searcher {
        cache: &cache,
        criterion: opts.criterion,
        events: Vec::new(),
    };
    let layout = searcher.decide(&all)?;
    let initial = cache.fit_candidate(&all, None)?;
    let fit = assemble(&cache, &layout)?;

    let tree = fit.model.tree();
    let names = node_names(tree, &tree.align(x.names())?);
    let name = |set: &Vec<usize>| names.get(set).cloned().unwrap_or_else(|| describe_set(x.names(), set));
    let events = searcher
        .events
        .iter()
        .map(|e| match e {
            PendingEvent::Decide(set, candidate, value) => TraceEvent::Decide {
                node: name(set),
                candidate: candidate.clone(),
                criterion: opts.criterion,
                value: *value,
            },
            PendingEvent::Adopt(set, choice) => TraceEvent::Adopt {
                node: name(set),
                choice: choice.clone(),
            },
            PendingEvent::Stop(set, choice) => TraceEvent::Stop {
                node: name(set),
                choice: choice.clone(),
            },
        })
        .collect();
    Ok(SearchResult {
        fit,
        trace: SearchTrace { events },
        initial,
        fits_performed: cache.fits_performed(),
    })
}

/// Every tree with labelled leaves `set` in which each interior node has at
/// least two children.
fn all_layouts(set: &[usize]) -> Vec<Layout> {
    if set.len() == 1 {
        return vec![Layout::Leaf(set[0])];
    }
    let mut out = Vec::new();
    for partition in set_partitions(set) {
        if partition.len() < 2 {
            continue;
        }
        let options: Vec<Vec<Layout>> = partition.iter().map(|b| all_layouts(b)).collect();
        let mut combos: Vec<Vec<Layout>> = vec![Vec::new()];
        for opts in &options {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    opts.iter().map(move |o| {
                        let mut v = prefix.clone();
                        v.push(o.clone());
                        v
                    })
                })
                .collect();
        }
        out.extend(combos.into_iter().map(Layout::Group));
    }
    out
}

/// All set partitions, blocks ordered by their first element.
fn set_partitions(set: &[usize]) -> Vec<Vec<Vec<usize>>> {
    let Some((&first, rest)) = set.split_first() else {
        return vec![Vec::new()];
    };
    let mut out = Vec::new();
    for p in set_partitions(rest) {
        // `first` alone, or joined to an existing block.
        let mut alone = vec![vec![first]];
        alone.extend(p.iter().cloned());
        out.push(alone);
        for i in 0..p.len() {
            let mut joined = p.clone();
            joined[i].insert(0, first);
            joined.sort_by_key(|b| b[0]);
            out.push(joined);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub fit: FitResult,
    /// Every tree with its criterion value (as reported), best first.
    pub ranking: Vec<(String, f64)>,
}

impl ExhaustiveResult {
    pub fn trees_evaluated(&self) -> usize {
        self.ranking.len()
    }
}

/// Fits every tree over the components and returns the best under the
/// criterion, ties broken by the smaller tree text.
pub fn exhaustive_search(x: &CompositionMatrix, opts: &SearchOptions) -> Result<ExhaustiveResult> {
    check_input(x)?;
    if x.ncols() > EXHAUSTIVE_MAX_COMPONENTS {
        return Err(Error::InvalidParameter(format!(
            "exhaustive search supports at most {EXHAUSTIVE_MAX_COMPONENTS} components, data has {}",
            x.ncols()
        )));
    }
    let cache = FitCache::new(x, opts.mle.clone());
    let all: Vec<usize> = (0..x.ncols()).collect();
    let constant = cache.constant(&all);
    let c = opts.criterion;
    let mut scored = all_layouts(&all)
        .into_par_iter()
        .map(|layout| {
            let mut keys = Vec::new();
            layout.node_keys(&mut keys);
            let mut local = LocalFit {
                loglik: constant,
                q: 0,
                n: x.nrows(),
            };
            for key in keys {
                local.loglik += cache.node_fit(&node_key(key.clone()))?.adjusted_loglik;
                local.q += key.len();
            }
            let text = serialize_shape(&layout.shape(x.names()));
            Ok((local.score(c), text, local, layout))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let fit = assemble(&cache, &scored[0].3)?;
    let ranking = scored.into_iter().map(|(_, t, l, _)| (t, l.report(c))).collect();
    Ok(ExhaustiveResult { fit, ranking })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndd::{ndd_mle, ndd_sample, tests::synthetic};
    use crate::tree::parse_model;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    /// Unordered bipartitions with both blocks ≥ 2, counted from all subsets.
    fn brute_two_group(p: usize) -> usize {
        let mut seen = HashSet::new();
        for mask in 1u32..(1 << p) - 1 {
            let a: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
            let b: Vec<usize> = (0..p).filter(|i| mask & (1 << i) == 0).collect();
            if a.len() >= 2 && b.len() >= 2 {
                seen.insert(if a < b { (a, b) } else { (b, a) });
            }
        }
        seen.len()
    }

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn split_counts() {
        assert!(enumerate_splits(2).is_empty());
        let three = enumerate_splits(3);
        assert_eq!(three.len(), 3);
        assert!(three.iter().all(|c| c.kind == SplitKind::Singleton));
        assert_eq!(enumerate_splits(4).len(), 7);
        assert_eq!(enumerate_splits(5).len(), 15);
        // The closed forms for block sizes {2, p − 2} and balanced splits.
        assert_eq!(brute_two_group(4), binomial(4, 2) / 2);
        assert_eq!(brute_two_group(5), binomial(5, 2));
        for p in 2..=7 {
            let cands = enumerate_splits(p);
            let two = cands.iter().filter(|c| c.kind == SplitKind::TwoGroup).count();
            let single = cands.len() - two;
            assert_eq!(two, brute_two_group(p), "p={p}");
            assert_eq!(single, if p >= 3 { p } else { 0 });
            for c in &cands {
                let mut all: Vec<usize> = c.blocks.concat();
                all.sort_unstable();
                assert_eq!(all, (0..p).collect::<Vec<_>>());
            }
            let distinct: HashSet<_> = cands.iter().map(|c| node_key(c.blocks.to_vec())).collect();
            assert_eq!(distinct.len(), cands.len());
        }
        assert_eq!(enumerate_splits(6).len(), 25 + 6);
    }

    #[test]
    fn tree_counts() {
        let counts: Vec<usize> = (1..=5)
            .map(|p| all_layouts(&(0..p).collect::<Vec<_>>()).len())
            .collect();
        assert_eq!(counts, vec![1, 1, 4, 26, 236]);
        let distinct: HashSet<String> = all_layouts(&[0, 1, 2, 3]).iter().map(|l| format!("{l:?}")).collect();
        assert_eq!(distinct.len(), 26);
    }

    fn synthetic_data(n: usize, seed: u64) -> CompositionMatrix {
        ndd_sample(&synthetic(), n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn four_part(n: usize, seed: u64) -> CompositionMatrix {
        let (tree, params) = parse_model("((A:3,B:5):2,(C:2,D:4):3)").unwrap();
        let model = NddModel::new(tree, params.unwrap()).unwrap();
        ndd_sample(&model, n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn cache_counts_fits() {
        let x = four_part(200, 1);
        let cache = FitCache::new(&x, MleOptions::default());
        let cand = SplitCandidate {
            kind: SplitKind::TwoGroup,
            blocks: [vec![0, 1], vec![2, 3]],
        };
        let set = [0, 1, 2, 3];
        let first = cache.fit_candidate(&set, Some(&cand)).unwrap();
        assert_eq!(cache.fits_performed(), 3);
        let iterations = cache.newton_iterations();
        let second = cache.fit_candidate(&set, Some(&cand)).unwrap();
        assert_eq!(cache.fits_performed(), 3);
        assert_eq!(cache.newton_iterations(), iterations);
        assert_eq!(first, second);
        assert_eq!(first.q, 6);
    }

    #[test]
    fn local_fit_matches_full_refit() {
        let x = four_part(300, 2);
        let cache = FitCache::new(&x, MleOptions::default());
        let set = [0, 1, 2, 3];
        for (cand, text) in [
            (None, "(A,B,C,D)"),
            (
                Some(SplitCandidate {
                    kind: SplitKind::TwoGroup,
                    blocks: [vec![0, 2], vec![1, 3]],
                }),
                "((A,C),(B,D))",
            ),
            (
                Some(SplitCandidate {
                    kind: SplitKind::Singleton,
                    blocks: [vec![2], vec![0, 1, 3]],
                }),
                "(C,(A,B,D))",
            ),
        ] {
            let local = cache.fit_candidate(&set, cand.as_ref()).unwrap();
            let full = ndd_mle(&crate::tree::parse_tree(text).unwrap(), &x, &MleOptions::default()).unwrap();
            assert!(
                (local.loglik - full.loglik).abs() < 1e-8 * full.loglik.abs().max(1.0),
                "{text}"
            );
            assert_eq!(local.q, full.q);
        }
    }

    #[test]
    fn synthetic_search_separates_the_two_groups() {
        let x = synthetic_data(1000, 7);
        let result = search(&x, &SearchOptions::default()).unwrap();
        let tree = result.fit.model.tree();
        let columns = tree.align(x.names()).unwrap();
        let sets: Vec<Vec<String>> = tree
            .nonterminals()
            .map(|k| {
                let mut v: Vec<String> = tree
                    .terminal_set(k)
                    .iter()
                    .map(|&j| x.names()[columns[j]].clone())
                    .collect();
                v.sort();
                v
            })
            .collect();
        assert!(sets.contains(&vec!["X1".into(), "X2".into(), "X3".into()]), "{sets:?}");
        assert!(sets.contains(&vec!["X4".into(), "X5".into()]), "{sets:?}");
        assert!(result.fit.loglik >= result.initial.loglik);
        assert!(tree.num_interior() < x.ncols());

        // Same data, same answer.
        let again = search(&x, &SearchOptions::default()).unwrap();
        assert_eq!(again.trace, result.trace);
        assert_eq!(again.fit.model, result.fit.model);
    }

    #[test]
    fn assembled_fit_matches_full_refit() {
        let x = synthetic_data(500, 3);
        let result = search(&x, &SearchOptions::default()).unwrap();
        let refit = ndd_mle(result.fit.model.tree(), &x, &MleOptions::default()).unwrap();
        assert!((refit.loglik - result.fit.loglik).abs() < 1e-8 * refit.loglik.abs());
        for (id, a) in refit.model.params().iter() {
            let b = result.fit.model.params().get(id).unwrap();
            assert!((a - b).abs() < 1e-8 * a, "{id:?}: {a} vs {b}");
        }
    }

    #[test]
    fn trace_values_are_reproducible() {
        let x = four_part(300, 4);
        for criterion in [Criterion::Loglik, Criterion::Aic, Criterion::Bic] {
            let result = search(
                &x,
                &SearchOptions {
                    criterion,
                    ..Default::default()
                },
            )
            .unwrap();
            let root = result.fit.model.tree().name(result.fit.model.tree().root()).to_string();
            let mut checked = 0;
            for e in &result.trace.events {
                if let TraceEvent::Decide {
                    node, candidate, value, ..
                } = e
                {
                    if *node != root {
                        continue;
                    }
                    let refit =
                        ndd_mle(&crate::tree::parse_tree(candidate).unwrap(), &x, &MleOptions::default()).unwrap();
                    let want = refit.criterion(criterion);
                    assert!(
                        (value - want).abs() < 1e-8 * want.abs(),
                        "{candidate}: {value} vs {want}"
                    );
                    checked += 1;
                }
            }
            assert_eq!(checked, 8);
            let first = result.trace.events[0].to_string();
            assert!(
                first.starts_with(&format!("DECIDE {root} (A,B,C,D) {criterion} ")),
                "{first}"
            );
        }
    }

    #[test]
    fn recovers_four_part_tree_and_matches_exhaustive() {
        let x = four_part(1000, 5);
        let greedy = search(&x, &SearchOptions::default()).unwrap();
        assert_eq!(
            crate::tree::serialize_tree(greedy.fit.model.tree(), None),
            "((A,B),(C,D))"
        );
        for criterion in [Criterion::Aic, Criterion::Bic] {
            let opts = SearchOptions {
                criterion,
                ..Default::default()
            };
            let ex = exhaustive_search(&x, &opts).unwrap();
            assert_eq!(ex.trees_evaluated(), 26);
            let g = search(&x, &opts).unwrap();
            assert_eq!(ex.fit.model.tree(), g.fit.model.tree());
        }
        let last = greedy.trace.events.last().unwrap().to_string();
        assert!(last.starts_with("ADOPT Root ") || last.starts_with("STOP "), "{last}");
    }

    #[test]
    fn dirichlet_data_stops_under_bic() {
        let x = crate::dirichlet::dd_sample(
            &crate::dirichlet::DirichletParams::new(vec![2.0, 3.0, 4.0, 5.0]).unwrap(),
            300,
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        let r = search(
            &x,
            &SearchOptions {
                criterion: Criterion::Bic,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.fit.model.tree().num_interior(), 0);
        assert_eq!(r.trace.events.last().unwrap().to_string(), "STOP Root (X1,X2,X3,X4)");
        assert!((r.fit.loglik - r.initial.loglik).abs() < 1e-9 * r.initial.loglik.abs());
    }

    #[test]
    fn two_components_and_bad_input() {
        let x = CompositionMatrix::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
        let r = search(&x, &SearchOptions::default()).unwrap();
        assert_eq!(r.trace.events.len(), 2);
        let one = CompositionMatrix::from_rows(&[vec![0.3, 0.7]]).unwrap();
        assert!(matches!(
            search(&one, &SearchOptions::default()),
            Err(Error::TooFewObservations { .. })
        ));
        let six = CompositionMatrix::from_rows(&[vec![1.0 / 6.0; 6], vec![1.0 / 6.0; 6]]).unwrap();
        assert!(exhaustive_search(&six, &SearchOptions::default()).is_err());
    }

    #[test]
    fn fit_failures_name_the_subcomposition() {
        // X3 and X4 are a constant 1:1 split, so their node cannot be fitted.
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let a = 0.2 + 0.01 * i as f64;
                let b = 0.3 - 0.005 * i as f64;
                let rest = (1.0 - a - b) / 2.0;
                vec![a, b, rest, rest]
            })
            .collect();
        let x = CompositionMatrix::from_rows(&rows).unwrap();
        let err = search(&x, &SearchOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Search { .. }), "{err}");
        assert!(err.is_numeric());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn greedy_never_worse_than_dirichlet(seed in 0u64..1000, p in 3usize..=6, n in 20usize..=200) {
            let alpha: Vec<f64> = (0..p).map(|j| 1.0 + (seed as usize * 7 + j * 3) as f64 % 5.0).collect();
            let x = crate::dirichlet::dd_sample(
                &crate::dirichlet::DirichletParams::new(alpha).unwrap(),
                n,
                &mut ChaCha8Rng::seed_from_u64(seed),
            );
            for criterion in [Criterion::Loglik, Criterion::Aic] {
                let r = search(&x, &SearchOptions { criterion, ..Default::default() }).unwrap();
                let final_score = criterion.score(r.fit.loglik, r.fit.q, r.fit.n);
                prop_assert!(final_score <= r.initial.score(criterion) + 1e-9 * final_score.abs());
                prop_assert!(r.fit.model.tree().num_interior() < p);
                let refit = ndd_mle(r.fit.model.tree(), &x, &MleOptions::default()).unwrap();
                prop_assert!((refit.loglik - r.fit.loglik).abs() < 1e-8 * refit.loglik.abs().max(1.0));
            }
        }
    }
}
