//! Fixed-order Gauss–Legendre rules and the (r0, θ) expectation used by the
//! update-interval analysis.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// Nodes and weights of an n-point rule mapped to an interval on demand.
#[derive(Debug, Clone)]
pub struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    pub fn new(n: usize) -> Self {
        let n = NonZeroUsize::new(n.max(1)).unwrap();
        let gl = GaussLegendre::new(n);
        let (nodes, weights) = gl.as_node_weight_pairs().iter().copied().unzip();
        Rule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Abscissae and weights on `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Tensor-product rule for E[f(r0, θ)] with r0 ~ 2r0/r_c² on [0, r_c] and
/// θ ~ 1/π on [0, π].
#[derive(Debug, Clone)]
pub struct PolarExpectation {
    points: Vec<(f64, f64, f64)>,
}

impl PolarExpectation {
    pub fn new(cell_radius: f64, n_r: usize, n_theta: usize) -> Self {
        let rr = Rule::new(n_r);
        let rt = Rule::new(n_theta);
        let mut points = Vec::with_capacity(rr.len() * rt.len());
        for (r, wr) in rr.mapped(0.0, cell_radius) {
            let pr = 2.0 * r / (cell_radius * cell_radius);
            for (t, wt) in rt.mapped(0.0, std::f64::consts::PI) {
                points.push((r, t, wr * pr * wt / std::f64::consts::PI));
            }
        }
        PolarExpectation { points }
    }

    /// `(r0, θ, weight)` triples; weights sum to one.
    pub fn points(&self) -> &[(f64, f64, f64)] {
        &self.points
    }

    pub fn expect<F: FnMut(f64, f64) -> f64>(&self, mut f: F) -> f64 {
        let mut acc = crate::stats::NeumaierSum::default();
        for &(r, t, w) in &self.points {
            acc.add(w * f(r, t));
        }
        acc.total()
    }

    pub fn try_expect<F: FnMut(f64, f64) -> crate::Result<f64>>(&self, mut f: F) -> crate::Result<f64> {
        let mut acc = crate::stats::NeumaierSum::default();
        for &(r, t, w) in &self.points {
            acc.add(w * f(r, t)?);
        }
        Ok(acc.total())
    }
}
