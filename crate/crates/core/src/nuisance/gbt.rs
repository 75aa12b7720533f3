//! Least-squares gradient boosting with depth-limited regression trees.
//!
//! Trees are grown level by level. For every feature the training rows are
//! visited once per level in presorted order, which accumulates the left
//! partial sums of all open nodes in a single pass. Split candidates are the
//! midpoints between consecutive distinct feature values; a candidate only
//! replaces the incumbent on strictly larger gain, so ties resolve to the
//! lowest feature index and then the lowest threshold.

use serde::{Deserialize, Serialize};

use super::Design;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedTrees {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl BoostedTrees {
    /// Raw (unclipped) prediction.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let boost: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base + self.learning_rate * boost
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

const MIN_GAIN: f64 = 1e-12;

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Copy)]
struct Scan {
    sum: f64,
    count: usize,
    last: f64,
}

/// Grows one tree on `residual`; returns the tree and the leaf node of every
/// training row.
fn grow_tree(design: &Design, residual: &[f64], params: &GbtParams) -> (Tree, Vec<usize>) {
    let m = design.rows();
    let sorted = design.sorted();
    let total: f64 = residual.iter().sum();
    let mut nodes = vec![Node::Leaf(total / m as f64)];
    let mut stats = vec![(total, m)];
    let mut node_of = vec![0usize; m];
    let mut open: Vec<usize> = if m >= 2 * params.min_leaf.max(1) { vec![0] } else { vec![] };

    for _depth in 0..params.max_depth {
        if open.is_empty() {
            break;
        }
        let mut slot_of = vec![usize::MAX; nodes.len()];
        for (slot, &node) in open.iter().enumerate() {
            slot_of[node] = slot;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        for (feature, order) in sorted.iter().enumerate() {
            let mut scan = vec![
                Scan {
                    sum: 0.0,
                    count: 0,
                    last: f64::NAN,
                };
                open.len()
            ];
            for &(row, x) in order {
                let row = row as usize;
                let slot = slot_of[node_of[row]];
                if slot == usize::MAX {
                    continue;
                }
                let st = &mut scan[slot];
                if st.count > 0 && x > st.last {
                    let (node_sum, node_count) = stats[open[slot]];
                    let right_count = node_count - st.count;
                    if st.count >= params.min_leaf && right_count >= params.min_leaf {
                        let right_sum = node_sum - st.sum;
                        let gain = st.sum * st.sum / st.count as f64
                            + right_sum * right_sum / right_count as f64
                            - node_sum * node_sum / node_count as f64;
                        if gain > best[slot].map_or(MIN_GAIN, |c| c.gain) {
                            let mut threshold = 0.5 * (st.last + x);
                            if threshold >= x {
                                threshold = st.last;
                            }
                            best[slot] = Some(Candidate {
                                gain,
                                feature,
                                threshold,
                            });
                        }
                    }
                }
                st.sum += residual[row];
                st.count += 1;
                st.last = x;
            }
        }

        let mut children = Vec::new();
        let mut split_of = vec![None; nodes.len()];
        for (slot, cand) in best.iter().enumerate() {
            if let Some(c) = cand {
                let node = open[slot];
                let left = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                stats.push((0.0, 0));
                stats.push((0.0, 0));
                nodes[node] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right: left + 1,
                };
                split_of[node] = Some((c.feature, c.threshold, left));
                children.push(left);
                children.push(left + 1);
            }
        }
        if children.is_empty() {
            break;
        }
        for row in 0..m {
            if let Some((feature, threshold, left)) = split_of[node_of[row]] {
                let child = if design.value(row, feature) <= threshold { left } else { left + 1 };
                node_of[row] = child;
                stats[child].0 += residual[row];
                stats[child].1 += 1;
            }
        }
        for &child in &children {
            let (sum, count) = stats[child];
            nodes[child] = Node::Leaf(sum / count as f64);
        }
        open = children
            .into_iter()
            .filter(|&c| stats[c].1 >= 2 * params.min_leaf.max(1))
            .collect();
    }
    (Tree { nodes }, node_of)
}

pub fn fit(design: &Design, target: &[f64], params: &GbtParams) -> BoostedTrees {
    let m = design.rows();
    let base = target.iter().sum::<f64>() / m as f64;
    let mut fitted = vec![base; m];
    let mut residual = vec![0.0; m];
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for ((r, &y), &f) in residual.iter_mut().zip(target).zip(&fitted) {
            *r = y - f;
        }
        let (tree, leaf_of) = grow_tree(design, &residual, params);
        if tree.nodes.len() == 1 {
            // a root that cannot split leaves the residuals unchanged
            break;
        }
        for (f, &leaf) in fitted.iter_mut().zip(&leaf_of) {
            if let Node::Leaf(v) = tree.nodes[leaf] {
                *f += params.learning_rate * v;
            }
        }
        trees.push(tree);
    }
    BoostedTrees {
        base,
        learning_rate: params.learning_rate,
        trees,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(x: Vec<f64>, dim: usize) -> Design {
        Design::new(x, dim)
    }

    #[test]
    fn constant_target_yields_constant_model() {
        let d = design((0..40).map(f64::from).collect(), 1);
        let model = fit(&d, &[1.0; 40], &GbtParams::default());
        assert_eq!(model.n_trees(), 0);
        assert_eq!(model.predict(&[3.0]), 1.0);
    }

    #[test]
    fn learns_a_step_function() {
        let x: Vec<f64> = (0..100).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|&v| f64::from(u8::from(v >= 50.0))).collect();
        let params = GbtParams {
            n_trees: 200,
            max_depth: 1,
            learning_rate: 0.3,
            min_leaf: 5,
        };
        let model = fit(&design(x, 1), &y, &params);
        assert!(model.predict(&[10.0]) < 0.01);
        assert!(model.predict(&[90.0]) > 0.99);
        // the first stump splits at the midpoint between 49 and 50
        match model.trees[0].nodes[0] {
            Node::Split { threshold, feature, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 49.5);
            }
            _ => panic!("root did not split"),
        }
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // two identical features: the split must use feature 0
        let rows: Vec<f64> = (0..30).flat_map(|k| [f64::from(k), f64::from(k)]).collect();
        let y: Vec<f64> = (0..30).map(|k| f64::from(u8::from(k >= 15))).collect();
        let model = fit(&design(rows, 2), &y, &GbtParams { min_leaf: 3, ..GbtParams::default() });
        match model.trees[0].nodes[0] {
            Node::Split { feature, .. } => assert_eq!(feature, 0),
            _ => panic!("root did not split"),
        }
    }

    #[test]
    fn respects_min_leaf() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let mut y = vec![0.0; 12];
        y[0] = 1.0;
        let model = fit(&design(x, 1), &y, &GbtParams { min_leaf: 6, max_depth: 3, ..GbtParams::default() });
        for t in &model.trees {
            // only one admissible split: 6 | 6
            assert_eq!(t.nodes.len(), 3);
        }
    }

    #[test]
    fn fitting_is_deterministic() {
        let x: Vec<f64> = (0..300).map(|k| ((k * 37) % 101) as f64 / 7.0).collect();
        let y: Vec<f64> = x.chunks(3).map(|r| f64::from(u8::from(r[0] + r[1] > r[2] * 1.3))).collect();
        let d = design(x, 3);
        let a = fit(&d, &y, &GbtParams::default());
        let b = fit(&d, &y, &GbtParams::default());
        assert_eq!(a, b);
        // least-squares boosting preserves the training mean
        let mean_fit = (0..100).map(|i| a.predict(d.row(i))).sum::<f64>() / 100.0;
        let mean_y = y.iter().sum::<f64>() / 100.0;
        assert!((mean_fit - mean_y).abs() < 1e-12);
    }
}
