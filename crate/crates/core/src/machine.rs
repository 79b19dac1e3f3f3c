//! Machine architecture, pairwise feature catalog, and the symmetric weight matrix.

use rand::Rng;

use crate::error::{LmeError, Result};

/// Largest machine (in nodes) that exact enumeration accepts unless a caller
/// raises the cap explicitly.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Bound on the magnitude of any single weight.
pub const DEFAULT_WEIGHT_CLAMP: f64 = 30.0;

/// Which node families a pairwise feature couples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    VisibleVisible,
    VisibleHidden,
    HiddenHidden,
}

/// A pairwise feature `f(x) = x_a * x_b` with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feature {
    pub a: usize,
    pub b: usize,
    pub kind: FeatureKind,
}

impl Feature {
    /// Bit mask selecting both endpoints in the state encoding.
    #[inline]
    pub fn mask(&self) -> u64 {
        (1u64 << self.a) | (1u64 << self.b)
    }

    #[inline]
    pub fn is_active(&self, state: u64) -> bool {
        let m = self.mask();
        state & m == m
    }
}

/// Architecture of a Boltzmann machine: `visible` observed nodes occupying
/// state bits `0..visible`, followed by `hidden` latent nodes.
///
/// The feature catalog lists every unordered node pair once, row-major over the
/// strict upper triangle: `(0,1), (0,2), .., (0,M-1), (1,2), ..`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineSpec {
    visible: usize,
    hidden: usize,
    cap: usize,
    features: Vec<Feature>,
}

impl MachineSpec {
    pub fn new(visible: usize, hidden: usize) -> Result<Self> {
        Self::with_cap(visible, hidden, DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_cap(visible: usize, hidden: usize, cap: usize) -> Result<Self> {
        if visible == 0 {
            return Err(LmeError::InvalidSpec(
                "a machine needs at least one visible node".into(),
            ));
        }
        let nodes = visible + hidden;
        // State indices are u64 and tables are indexed by usize.
        if cap > 30 {
            return Err(LmeError::InvalidSpec(format!(
                "enumeration cap {cap} exceeds the supported maximum of 30"
            )));
        }
        if nodes > cap {
            return Err(LmeError::Capacity { nodes, cap });
        }
        let mut features = Vec::with_capacity(nodes * nodes.saturating_sub(1) / 2);
        for a in 0..nodes {
            for b in (a + 1)..nodes {
                let kind = match (a < visible, b < visible) {
                    (true, true) => FeatureKind::VisibleVisible,
                    (true, false) => FeatureKind::VisibleHidden,
                    _ => FeatureKind::HiddenHidden,
                };
                features.push(Feature { a, b, kind });
            }
        }
        Ok(Self {
            visible,
            hidden,
            cap,
            features,
        })
    }

    #[inline]
    pub fn visible(&self) -> usize {
        self.visible
    }

    #[inline]
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Total node count `M = J + L`.
    #[inline]
    pub fn nodes(&self) -> usize {
        self.visible + self.hidden
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Number of pairwise features, `M(M-1)/2`.
    #[inline]
    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> Result<&Feature> {
        self.features.get(index).ok_or(LmeError::FeatureIndex {
            index,
            count: self.features.len(),
        })
    }

    /// Catalog index of the pair `{a, b}` (order-insensitive), `None` on the diagonal.
    pub fn feature_index(&self, a: usize, b: usize) -> Option<usize> {
        let m = self.nodes();
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        if a == b || b >= m {
            return None;
        }
        Some(a * (2 * m - a - 1) / 2 + (b - a - 1))
    }

    #[inline]
    pub fn state_count(&self) -> usize {
        1usize << self.nodes()
    }

    /// Mask selecting the visible bits of a state.
    #[inline]
    pub fn visible_mask(&self) -> u64 {
        (1u64 << self.visible) - 1
    }

    /// Joint state index from a visible pattern and a hidden pattern.
    #[inline]
    pub fn join(&self, visible: u64, hidden: u64) -> u64 {
        visible | (hidden << self.visible)
    }
}

/// Symmetric, zero-diagonal weight matrix stored as its strict upper triangle in
/// feature-catalog order. Entry `i` is the multiplier of feature `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    nodes: usize,
    values: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(nodes: usize) -> Self {
        Self {
            nodes,
            values: vec![0.0; nodes * nodes.saturating_sub(1) / 2],
        }
    }

    /// Builds a matrix from per-feature values in catalog order.
    pub fn from_values(nodes: usize, values: Vec<f64>) -> Result<Self> {
        let expected = nodes * nodes.saturating_sub(1) / 2;
        if values.len() != expected {
            return Err(LmeError::InvalidWeights(format!(
                "{} values supplied for {nodes} nodes (expected {expected})",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LmeError::InvalidWeights(format!(
                "feature {i} has non-finite weight {}",
                values[i]
            )));
        }
        Ok(Self { nodes, values })
    }

    /// Draws every upper-triangle weight i.i.d. uniform on `[-width, width]`.
    pub fn random_uniform<R: Rng + ?Sized>(nodes: usize, width: f64, rng: &mut R) -> Self {
        let n = nodes * nodes.saturating_sub(1) / 2;
        let values = (0..n)
            .map(|_| {
                if width > 0.0 {
                    rng.random_range(-width..=width)
                } else {
                    0.0
                }
            })
            .collect();
        Self { nodes, values }
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Per-feature weights in catalog order.
    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    fn index(&self, a: usize, b: usize) -> usize {
        let m = self.nodes;
        a * (2 * m - a - 1) / 2 + (b - a - 1)
    }

    /// Matrix entry `Λ[a][b]`; zero on the diagonal.
    pub fn get(&self, a: usize, b: usize) -> f64 {
        assert!(a < self.nodes && b < self.nodes, "node index out of range");
        match a.cmp(&b) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.values[self.index(a, b)],
            std::cmp::Ordering::Greater => self.values[self.index(b, a)],
        }
    }

    /// Sets the pair `{a, b}`; both `Λ[a][b]` and `Λ[b][a]` change.
    pub fn set(&mut self, a: usize, b: usize, value: f64) -> Result<()> {
        if a == b {
            return Err(LmeError::InvalidWeights(format!(
                "diagonal entry ({a}, {a}) is fixed at zero"
            )));
        }
        if a >= self.nodes || b >= self.nodes {
            return Err(LmeError::InvalidWeights(format!(
                "pair ({a}, {b}) out of range for {} nodes",
                self.nodes
            )));
        }
        if !value.is_finite() {
            return Err(LmeError::InvalidWeights(format!(
                "non-finite weight {value} for pair ({a}, {b})"
            )));
        }
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let i = self.index(a, b);
        self.values[i] = value;
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Checks that every weight respects `clamp`.
    pub fn check_clamp(&self, clamp: f64) -> Result<()> {
        match self.values.iter().position(|v| v.abs() > clamp) {
            Some(i) => Err(LmeError::InvalidWeights(format!(
                "feature {i} has weight {} beyond clamp {clamp}",
                self.values[i]
            ))),
            None => Ok(()),
        }
    }

    /// Checks the matrix matches `spec` in size.
    pub fn check_spec(&self, spec: &MachineSpec) -> Result<()> {
        if self.nodes != spec.nodes() {
            return Err(LmeError::Shape(format!(
                "weights cover {} nodes but the machine has {}",
                self.nodes,
                spec.nodes()
            )));
        }
        Ok(())
    }

    /// Relabels nodes: node `a` of `self` becomes node `perm[a]` of the result.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let m = self.nodes;
        let mut seen = vec![false; m];
        if perm.len() != m || perm.iter().any(|&p| p >= m || std::mem::replace(&mut seen[p], true)) {
            return Err(LmeError::InvalidWeights(format!(
                "{perm:?} is not a permutation of {m} nodes"
            )));
        }
        let mut out = Self::zeros(m);
        for a in 0..m {
            for b in (a + 1)..m {
                out.set(perm[a], perm[b], self.get(a, b))?;
            }
        }
        Ok(out)
    }

    /// Largest elementwise difference to `other`.
    pub fn max_abs_diff(&self, other: &WeightMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}
