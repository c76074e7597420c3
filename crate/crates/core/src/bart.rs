//! BART probit classification with latent-Gaussian data augmentation.
//!
//! `P(C = 1 | x) = Φ(Σ_j g(x; T_j, M_j))`. Each iteration draws the latent
//! utilities from truncated normals, then updates every tree against its
//! partial residual with a grow / prune / change Metropolis–Hastings move
//! (leaf values integrated out) followed by a Gibbs draw of its leaves.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::stats::{norm_cdf, truncated_unit_normal};

#[derive(Debug, Clone)]
pub struct BartConfig {
    pub n_trees: usize,
    /// Split prior `α_split (1 + depth)^(−β_depth)`.
    pub alpha_split: f64,
    pub beta_depth: f64,
    /// Leaf prior scale `σ_μ = 3 / (k √m)`.
    pub k: f64,
    pub n_burn: usize,
    /// Post burn-in iterations.
    pub n_post: usize,
    /// Forests retained, evenly spaced over the post burn-in iterations.
    pub n_keep: usize,
    pub grid_size: usize,
    pub p_grow: f64,
    pub p_prune: f64,
    pub allow_grow: bool,
    pub seed: u64,
}

impl Default for BartConfig {
    fn default() -> Self {
        BartConfig {
            n_trees: 200,
            alpha_split: 0.95,
            beta_depth: 2.0,
            k: 2.0,
            n_burn: 500,
            n_post: 500,
            n_keep: 50,
            grid_size: 100,
            p_grow: 0.4,
            p_prune: 0.4,
            allow_grow: true,
            seed: 1,
        }
    }
}

impl BartConfig {
    pub fn leaf_sd(&self) -> f64 {
        3.0 / (self.k * (self.n_trees as f64).sqrt())
    }

    pub fn split_prior_probability(&self, depth: usize) -> f64 {
        split_prior_probability(depth, self.alpha_split, self.beta_depth)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("BART needs at least one tree"));
        }
        if !(self.k > 0.0) {
            return Err(Error::invalid("k must be > 0"));
        }
        if self.n_keep == 0 || self.n_keep > self.n_post {
            return Err(Error::invalid("n_keep must be in 1..=n_post"));
        }
        if !(self.p_grow > 0.0 && self.p_prune > 0.0 && self.p_grow + self.p_prune <= 1.0) {
            return Err(Error::invalid("move probabilities must be positive and sum to <= 1"));
        }
        Ok(())
    }
}

/// Prior probability that a node at `depth` splits.
pub fn split_prior_probability(depth: usize, alpha_split: f64, beta_depth: f64) -> f64 {
    alpha_split * (1.0 + depth as f64).powf(-beta_depth)
}

/// A design matrix with named columns; rows share the column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Design {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != columns.len() {
                return Err(Error::invalid(format!(
                    "row {i} has {} cells, expected {}",
                    r.len(),
                    columns.len()
                )));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("row {i} has a missing or non-finite cell")));
            }
        }
        Ok(Design { columns, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum NodeKind {
    Leaf { mu: f64 },
    Split { var: usize, cut: usize, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    kind: NodeKind,
    parent: Option<usize>,
    depth: usize,
    alive: bool,
}

/// One regression tree. Splits send `x[var] <= cutpoints[var][cut]` left.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

/// Preorder flattening: `var = -1` marks a leaf whose `value` is its μ;
/// otherwise `value` is the split threshold and `cut` its grid index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub var: Vec<i64>,
    pub cut: Vec<i64>,
    pub value: Vec<f64>,
}

impl Tree {
    pub fn stump(mu: f64) -> Self {
        Tree {
            nodes: vec![Node {
                kind: NodeKind::Leaf { mu },
                parent: None,
                depth: 0,
                alive: true,
            }],
        }
    }

    fn alloc(&mut self, node: Node) -> usize {
        if let Some(i) = self.nodes.iter().position(|n| !n.alive) {
            self.nodes[i] = node;
            i
        } else {
            self.nodes.push(node);
            self.nodes.len() - 1
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].alive && matches!(self.nodes[i].kind, NodeKind::Leaf { .. }))
            .collect()
    }

    /// Internal nodes whose children are both leaves.
    pub fn nogs(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| {
                self.nodes[i].alive
                    && match self.nodes[i].kind {
                        NodeKind::Split { left, right, .. } => {
                            self.is_leaf(left) && self.is_leaf(right)
                        }
                        NodeKind::Leaf { .. } => false,
                    }
            })
            .collect()
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        matches!(self.nodes[i].kind, NodeKind::Leaf { .. })
    }

    pub fn depth(&self, i: usize) -> usize {
        self.nodes[i].depth
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn leaf_value(&self, i: usize) -> Option<f64> {
        match self.nodes[i].kind {
            NodeKind::Leaf { mu } => Some(mu),
            NodeKind::Split { .. } => None,
        }
    }

    fn set_leaf(&mut self, i: usize, value: f64) {
        if let NodeKind::Leaf { mu } = &mut self.nodes[i].kind {
            *mu = value;
        }
    }

    /// Splits leaf `leaf` on `(var, cut)`; returns the new `(left, right)` leaves.
    pub fn grow(&mut self, leaf: usize, var: usize, cut: usize, mu_left: f64, mu_right: f64) -> (usize, usize) {
        assert!(self.is_leaf(leaf), "grow on an internal node");
        let depth = self.nodes[leaf].depth + 1;
        let mk = |mu| Node {
            kind: NodeKind::Leaf { mu },
            parent: Some(leaf),
            depth,
            alive: true,
        };
        let left = self.alloc(mk(mu_left));
        let right = self.alloc(mk(mu_right));
        self.nodes[leaf].kind = NodeKind::Split { var, cut, left, right };
        (left, right)
    }

    /// Collapses a node whose children are both leaves back into a leaf.
    pub fn prune(&mut self, node: usize, mu: f64) {
        let NodeKind::Split { left, right, .. } = self.nodes[node].kind else {
            panic!("prune on a leaf");
        };
        assert!(self.is_leaf(left) && self.is_leaf(right), "prune needs two leaf children");
        self.nodes[left].alive = false;
        self.nodes[right].alive = false;
        self.nodes[node].kind = NodeKind::Leaf { mu };
        // Trim trailing dead slots so grow/prune pairs restore the arena too.
        while self.nodes.len() > 1 && !self.nodes.last().is_some_and(|n| n.alive) {
            self.nodes.pop();
        }
    }

    fn leaf_for(&self, x: &[f64], cutpoints: &[Vec<f64>]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i].kind {
                NodeKind::Leaf { .. } => return i,
                NodeKind::Split { var, cut, left, right } => {
                    i = if x[var] <= cutpoints[var][cut] { left } else { right };
                }
            }
        }
    }

    /// Half-open ranges of admissible cut indices per variable for node `i`.
    fn cell_ranges(&self, i: usize, cutpoints: &[Vec<f64>]) -> Vec<(usize, usize)> {
        let mut ranges: Vec<(usize, usize)> = cutpoints.iter().map(|c| (0, c.len())).collect();
        let mut child = i;
        while let Some(p) = self.nodes[child].parent {
            if let NodeKind::Split { var, cut, left, .. } = self.nodes[p].kind {
                let r = &mut ranges[var];
                if child == left {
                    r.1 = r.1.min(cut);
                } else {
                    r.0 = r.0.max(cut + 1);
                }
            }
            child = p;
        }
        ranges
    }

    pub fn to_record(&self, cutpoints: &[Vec<f64>]) -> TreeRecord {
        let mut rec = TreeRecord {
            var: Vec::new(),
            cut: Vec::new(),
            value: Vec::new(),
        };
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            match self.nodes[i].kind {
                NodeKind::Leaf { mu } => {
                    rec.var.push(-1);
                    rec.cut.push(-1);
                    rec.value.push(mu);
                }
                NodeKind::Split { var, cut, left, right } => {
                    rec.var.push(var as i64);
                    rec.cut.push(cut as i64);
                    rec.value.push(cutpoints[var][cut]);
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        rec
    }
}

/// One posterior draw of the sum-of-trees function.
#[derive(Debug, Clone)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub columns: Vec<String>,
    pub cutpoints: Vec<Vec<f64>>,
    pub iteration: usize,
    pub alpha_split: f64,
    pub beta_depth: f64,
    pub leaf_sd: f64,
}

impl Forest {
    pub fn sum(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .map(|t| {
                let leaf = t.leaf_for(x, &self.cutpoints);
                t.leaf_value(leaf).expect("leaf_for returns a leaf")
            })
            .sum()
    }

    pub fn to_json_line(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Line<'a> {
            iteration: usize,
            columns: &'a [String],
            trees: Vec<TreeRecord>,
        }
        Ok(serde_json::to_string(&Line {
            iteration: self.iteration,
            columns: &self.columns,
            trees: self.trees.iter().map(|t| t.to_record(&self.cutpoints)).collect(),
        })?)
    }
}

/// `Φ` of the forest sum, kept strictly inside `(0, 1)`.
pub fn predict_probability(forest: &Forest, columns: &[String], row: &[f64]) -> Result<f64> {
    if forest.columns != columns || row.len() != columns.len() {
        return Err(Error::ColumnMismatch);
    }
    Ok(probit(forest.sum(row)))
}

pub(crate) fn probit(s: f64) -> f64 {
    norm_cdf(s).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone)]
pub struct BartFit {
    pub forests: Vec<Forest>,
}

impl BartFit {
    /// Probability under each retained forest, `out[k][i]`.
    pub fn predict_draws(&self, design: &Design) -> Result<Vec<Vec<f64>>> {
        self.forests
            .iter()
            .map(|f| {
                design
                    .rows
                    .iter()
                    .map(|r| predict_probability(f, &design.columns, r))
                    .collect()
            })
            .collect()
    }

    /// Posterior mean probability per row.
    pub fn predict_mean(&self, design: &Design) -> Result<Vec<f64>> {
        let draws = self.predict_draws(design)?;
        let k = draws.len() as f64;
        Ok((0..design.n_rows())
            .map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / k)
            .collect())
    }

    pub fn write_forests(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for forest in &self.forests {
            writeln!(f, "{}", forest.to_json_line()?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn cutpoint_grid(values: &[f64], grid: usize) -> Vec<f64> {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    match distinct.len() {
        0 | 1 => Vec::new(),
        2 => vec![0.5 * (distinct[0] + distinct[1])],
        _ => {
            let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
            let n = grid.min(distinct.len() - 1).max(1);
            (1..=n)
                .map(|j| lo + (hi - lo) * j as f64 / (n + 1) as f64)
                .collect()
        }
    }
}

/// Log marginal likelihood of a leaf (unit noise, `μ ~ N(0, τ²)`) up to
/// terms that cancel in move ratios.
fn leaf_log_ml(n: f64, sum: f64, tau2: f64) -> f64 {
    let a = 1.0 + n * tau2;
    -0.5 * a.ln() + 0.5 * tau2 * sum * sum / a
}

struct Sampler<'a> {
    cols: Vec<Vec<f64>>,
    cutpoints: Vec<Vec<f64>>,
    labels: &'a [u8],
    config: &'a BartConfig,
    tau2: f64,
}

impl Sampler<'_> {
    fn goes_left(&self, i: usize, var: usize, cut: usize) -> bool {
        self.cols[var][i] <= self.cutpoints[var][cut]
    }

    fn stats(&self, leaf_of: &[usize], node: usize, resid: &[f64]) -> (f64, f64) {
        let mut n = 0.0;
        let mut s = 0.0;
        for (i, &l) in leaf_of.iter().enumerate() {
            if l == node {
                n += 1.0;
                s += resid[i];
            }
        }
        (n, s)
    }

    fn split_stats(
        &self,
        leaf_of: &[usize],
        nodes: &[usize],
        var: usize,
        cut: usize,
        resid: &[f64],
    ) -> [(f64, f64); 2] {
        let mut out = [(0.0, 0.0); 2];
        for (i, l) in leaf_of.iter().enumerate() {
            if nodes.contains(l) {
                let side = usize::from(!self.goes_left(i, var, cut));
                out[side].0 += 1.0;
                out[side].1 += resid[i];
            }
        }
        out
    }

    fn draw_rule<R: Rng>(&self, tree: &Tree, node: usize, rng: &mut R) -> Option<(usize, usize)> {
        let ranges = tree.cell_ranges(node, &self.cutpoints);
        let vars: Vec<usize> = (0..ranges.len()).filter(|&v| ranges[v].1 > ranges[v].0).collect();
        if vars.is_empty() {
            return None;
        }
        let var = vars[rng.random_range(0..vars.len())];
        let (lo, hi) = ranges[var];
        Some((var, rng.random_range(lo..hi)))
    }

    fn update_tree<R: Rng>(&self, tree: &mut Tree, leaf_of: &mut [usize], resid: &[f64], rng: &mut R) {
        let cfg = self.config;
        let stump = tree.nodes.iter().filter(|n| n.alive).count() == 1;
        let (pg, pp) = if stump {
            (if cfg.allow_grow { 1.0 } else { 0.0 }, 0.0)
        } else {
            (if cfg.allow_grow { cfg.p_grow } else { 0.0 }, cfg.p_prune)
        };
        let u: f64 = rng.random();
        let split_p = |d: usize| cfg.split_prior_probability(d);
        if u < pg {
            let leaves = tree.leaves();
            let leaf = leaves[rng.random_range(0..leaves.len())];
            let Some((var, cut)) = self.draw_rule(tree, leaf, rng) else {
                return;
            };
            let [l, r] = self.split_stats(leaf_of, &[leaf], var, cut, resid);
            if l.0 == 0.0 || r.0 == 0.0 {
                return;
            }
            let parent = (l.0 + r.0, l.1 + r.1);
            let d = tree.depth(leaf);
            // nogs after the grow: the grown node becomes one, its parent may stop being one
            let mut nogs_after = tree.nogs().len() + 1;
            if let Some(p) = tree.nodes[leaf].parent {
                if tree.nogs().contains(&p) {
                    nogs_after -= 1;
                }
            }
            let p_prune_after = if cfg.allow_grow { cfg.p_prune } else { 0.0 };
            let log_r = p_prune_after.ln() - (nogs_after as f64).ln() - pg.ln()
                + (leaves.len() as f64).ln()
                + split_p(d).ln()
                + 2.0 * (1.0 - split_p(d + 1)).ln()
                - (1.0 - split_p(d)).ln()
                + leaf_log_ml(l.0, l.1, self.tau2)
                + leaf_log_ml(r.0, r.1, self.tau2)
                - leaf_log_ml(parent.0, parent.1, self.tau2);
            if rng.random::<f64>().ln() < log_r {
                let (left, right) = tree.grow(leaf, var, cut, 0.0, 0.0);
                for (i, lo) in leaf_of.iter_mut().enumerate() {
                    if *lo == leaf {
                        *lo = if self.goes_left(i, var, cut) { left } else { right };
                    }
                }
            }
        } else if u < pg + pp {
            let nogs = tree.nogs();
            let node = nogs[rng.random_range(0..nogs.len())];
            let NodeKind::Split { left, right, .. } = tree.nodes[node].kind else {
                unreachable!()
            };
            let l = self.stats(leaf_of, left, resid);
            let r = self.stats(leaf_of, right, resid);
            let merged = (l.0 + r.0, l.1 + r.1);
            let d = tree.depth(node);
            let n_leaves = tree.n_leaves();
            let becomes_stump = tree.nodes[node].parent.is_none();
            let pg_after = if becomes_stump { 1.0 } else { cfg.p_grow };
            let log_r = pg_after.ln() + (nogs.len() as f64).ln() - pp.ln()
                - ((n_leaves - 1) as f64).ln()
                + (1.0 - split_p(d)).ln()
                - split_p(d).ln()
                - 2.0 * (1.0 - split_p(d + 1)).ln()
                + leaf_log_ml(merged.0, merged.1, self.tau2)
                - leaf_log_ml(l.0, l.1, self.tau2)
                - leaf_log_ml(r.0, r.1, self.tau2);
            if rng.random::<f64>().ln() < log_r {
                tree.prune(node, 0.0);
                for lo in leaf_of.iter_mut() {
                    if *lo == left || *lo == right {
                        *lo = node;
                    }
                }
            }
        } else {
            let nogs = tree.nogs();
            if nogs.is_empty() {
                return;
            }
            let node = nogs[rng.random_range(0..nogs.len())];
            let NodeKind::Split { left, right, .. } = tree.nodes[node].kind else {
                unreachable!()
            };
            let Some((var, cut)) = self.draw_rule(tree, node, rng) else {
                return;
            };
            let ol = self.stats(leaf_of, left, resid);
            let or = self.stats(leaf_of, right, resid);
            let [nl2, nr2] = self.split_stats(leaf_of, &[left, right], var, cut, resid);
            if nl2.0 == 0.0 || nr2.0 == 0.0 {
                return;
            }
            let log_r = leaf_log_ml(nl2.0, nl2.1, self.tau2) + leaf_log_ml(nr2.0, nr2.1, self.tau2)
                - leaf_log_ml(ol.0, ol.1, self.tau2)
                - leaf_log_ml(or.0, or.1, self.tau2);
            if rng.random::<f64>().ln() < log_r {
                tree.nodes[node].kind = NodeKind::Split { var, cut, left, right };
                for (i, lo) in leaf_of.iter_mut().enumerate() {
                    if *lo == left || *lo == right {
                        *lo = if self.goes_left(i, var, cut) { left } else { right };
                    }
                }
            }
        }
    }
}

/// Fits a BART probit model; rows of `design` pair with `labels` (0/1).
pub fn fit_bart_probit(design: &Design, labels: &[u8], config: &BartConfig) -> Result<BartFit> {
    config.validate()?;
    let n = design.n_rows();
    if labels.len() != n {
        return Err(Error::invalid("labels and design rows differ in length"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0/1"));
    }
    let first = labels.first().copied().unwrap_or(0);
    if labels.iter().all(|&l| l == first) {
        return Err(Error::SingleClass(first));
    }
    let p = design.columns.len();
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|j| design.rows.iter().map(|r| r[j]).collect())
        .collect();
    let cutpoints: Vec<Vec<f64>> = cols.iter().map(|c| cutpoint_grid(c, config.grid_size)).collect();
    let sampler = Sampler {
        cols,
        cutpoints,
        labels,
        config,
        tau2: config.leaf_sd().powi(2),
    };
    let mut rng = seed::rng_for(config.seed, &[seed::stage::BART]);

    let m = config.n_trees;
    let base = labels.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
    let init_mu = crate::stats::norm_quantile(base) / m as f64;
    let mut trees: Vec<Tree> = (0..m).map(|_| Tree::stump(init_mu)).collect();
    let mut leaf_of: Vec<Vec<usize>> = vec![vec![0; n]; m];
    let mut fit = vec![init_mu * m as f64; n];
    let mut latent = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let mut acc: Vec<(f64, f64)> = Vec::new();

    let total = config.n_burn + config.n_post;
    let keep_at: Vec<usize> = crate::dpm::select_draws(config.n_post, config.n_keep)?
        .into_iter()
        .map(|j| config.n_burn + j)
        .collect();
    let mut forests = Vec::with_capacity(config.n_keep);
    let leaf_sd = config.leaf_sd();

    for iter in 0..total {
        for i in 0..n {
            latent[i] = truncated_unit_normal(fit[i], sampler.labels[i] == 1, &mut rng);
        }
        for t in 0..m {
            let tree = &mut trees[t];
            let lo = &mut leaf_of[t];
            for i in 0..n {
                let own = tree.leaf_value(lo[i]).expect("leaf index");
                resid[i] = latent[i] - fit[i] + own;
                fit[i] -= own;
            }
            sampler.update_tree(tree, lo, &resid, &mut rng);
            // Gibbs draw of every leaf
            acc.clear();
            acc.resize(tree.nodes.len(), (0.0, 0.0));
            for i in 0..n {
                let e = &mut acc[lo[i]];
                e.0 += 1.0;
                e.1 += resid[i];
            }
            for leaf in tree.leaves() {
                let (cnt, sum) = acc[leaf];
                let prec = cnt + 1.0 / sampler.tau2;
                let z: f64 = StandardNormal.sample(&mut rng);
                tree.set_leaf(leaf, sum / prec + z / prec.sqrt());
            }
            for i in 0..n {
                fit[i] += tree.leaf_value(lo[i]).expect("leaf index");
            }
        }
        if keep_at.binary_search(&iter).is_ok() {
            forests.push(Forest {
                trees: trees.clone(),
                columns: design.columns.clone(),
                cutpoints: sampler.cutpoints.clone(),
                iteration: iter,
                alpha_split: config.alpha_split,
                beta_depth: config.beta_depth,
                leaf_sd,
            });
        }
    }
    Ok(BartFit { forests })
}
