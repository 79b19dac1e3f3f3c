//! Exact inference by enumerating all `2^M` joint states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{pack_bits, Dataset};
use crate::error::{LmeError, Result};
use crate::machine::{MachineSpec, WeightMatrix};
use crate::numeric::{log_sum_exp, log_sum_exp_iter, x_ln_x};

/// The Boltzmann-Gibbs distribution `p(x) = exp(½ xᵀΛx) / Φ` tabulated over
/// every joint state. State `x` is the integer whose bit `a` is node `a`.
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    spec: MachineSpec,
    weights: WeightMatrix,
    log_phi: f64,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
    log_marginals: Vec<f64>,
}

/// Unnormalized log weights `½ xᵀΛx` for every state.
///
/// Each pair contributes its weight once; the energy of a state is built from
/// the state with its highest bit cleared.
pub(crate) fn energies(spec: &MachineSpec, weights: &WeightMatrix) -> Vec<f64> {
    let m = spec.nodes();
    let n_states = spec.state_count();
    let mut energy = vec![0.0; n_states];
    // Column `h` of the upper triangle: weights of pairs (a, h) for a < h.
    let columns: Vec<Vec<f64>> = (0..m)
        .map(|h| (0..h).map(|a| weights.get(a, h)).collect())
        .collect();
    for h in 0..m {
        let base = 1usize << h;
        let col = &columns[h];
        for rest in 0..base {
            let mut e = energy[rest];
            let mut bits = rest;
            while bits != 0 {
                let a = bits.trailing_zeros() as usize;
                e += col[a];
                bits &= bits - 1;
            }
            energy[base | rest] = e;
        }
    }
    energy
}

impl ExactDistribution {
    /// Tabulates the distribution for `weights` on `spec`.
    pub fn enumerate(spec: &MachineSpec, weights: &WeightMatrix) -> Result<Self> {
        if spec.nodes() > spec.cap() {
            return Err(LmeError::Capacity {
                nodes: spec.nodes(),
                cap: spec.cap(),
            });
        }
        weights.check_spec(spec)?;
        if let Some(v) = weights.values().iter().find(|v| !v.is_finite()) {
            return Err(LmeError::InvalidWeights(format!("non-finite weight {v}")));
        }
        let mut log_probs = energies(spec, weights);
        let log_phi = log_sum_exp(&log_probs);
        for lp in &mut log_probs {
            *lp -= log_phi;
        }
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();

        let j = spec.visible();
        let hidden_states = 1usize << spec.hidden();
        let log_marginals = (0..1usize << j)
            .map(|y| log_sum_exp_iter((0..hidden_states).map(|z| log_probs[y | (z << j)])))
            .collect();

        Ok(Self {
            spec: spec.clone(),
            weights: weights.clone(),
            log_phi,
            log_probs,
            probs,
            log_marginals,
        })
    }

    pub fn spec(&self) -> &MachineSpec {
        &self.spec
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    /// `ln Φ`.
    pub fn log_partition(&self) -> f64 {
        self.log_phi
    }

    /// Joint probabilities indexed by state.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn prob(&self, state: u64) -> f64 {
        self.probs[state as usize]
    }

    fn check_visible(&self, y: &[u8]) -> Result<u64> {
        if y.len() != self.spec.visible() {
            return Err(LmeError::Shape(format!(
                "observation has {} components, machine has {} visible nodes",
                y.len(),
                self.spec.visible()
            )));
        }
        pack_bits(y).ok_or_else(|| LmeError::Shape("observation contains a non-binary value".into()))
    }

    /// `p(y) = Σ_z p(y, z)`.
    pub fn observed_marginal(&self, y: &[u8]) -> Result<f64> {
        let pattern = self.check_visible(y)?;
        Ok(self.log_marginals[pattern as usize].exp())
    }

    /// `ln p(y)` for a bit-packed visible pattern.
    #[inline]
    pub fn log_observed_marginal(&self, pattern: u64) -> f64 {
        self.log_marginals[pattern as usize]
    }

    /// `ln p(y)` for every visible pattern.
    pub fn log_marginal_table(&self) -> &[f64] {
        &self.log_marginals
    }

    /// `p(y)` for every visible pattern.
    pub fn marginal_table(&self) -> Vec<f64> {
        self.log_marginals.iter().map(|l| l.exp()).collect()
    }

    /// `p(z | y)` indexed by hidden pattern.
    pub fn hidden_conditional(&self, y: &[u8]) -> Result<Vec<f64>> {
        let pattern = self.check_visible(y)?;
        Ok(self.hidden_conditional_pattern(pattern))
    }

    pub fn hidden_conditional_pattern(&self, pattern: u64) -> Vec<f64> {
        let j = self.spec.visible();
        let y = pattern as usize;
        let log_py = self.log_marginals[y];
        (0..1usize << self.spec.hidden())
            .map(|z| (self.log_probs[y | (z << j)] - log_py).exp())
            .collect()
    }

    /// Joint entropy `-Σ p ln p` in nats.
    pub fn entropy(&self) -> f64 {
        let h = -self.probs.iter().map(|&p| x_ln_x(p)).sum::<f64>();
        h.max(0.0)
    }

    /// `Σ_y p̃(y) ln p(y)` in nats.
    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        self.check_dataset(data)?;
        Ok(data
            .observations()
            .iter()
            .zip(data.weights())
            .map(|(&y, &w)| if w > 0.0 { w * self.log_marginals[y as usize] } else { 0.0 })
            .sum())
    }

    pub(crate) fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.width() != self.spec.visible() {
            return Err(LmeError::Shape(format!(
                "dataset width {} does not match {} visible nodes",
                data.width(),
                self.spec.visible()
            )));
        }
        Ok(())
    }

    /// `E[f_i] = Σ_x x_a x_b p(x)` for feature `index`.
    pub fn feature_expectation(&self, index: usize) -> Result<f64> {
        let mask = self.spec.feature(index)?.mask() as usize;
        Ok(self
            .probs
            .iter()
            .enumerate()
            .filter(|(x, _)| x & mask == mask)
            .map(|(_, p)| p)
            .sum())
    }

    /// Expectations of every feature, in catalog order.
    pub fn feature_expectations(&self) -> Vec<f64> {
        let m = self.spec.nodes();
        let mut second = vec![0.0; m * m];
        for (x, &p) in self.probs.iter().enumerate() {
            if x.count_ones() < 2 || p == 0.0 {
                continue;
            }
            let mut outer = x;
            while outer != 0 {
                let a = outer.trailing_zeros() as usize;
                outer &= outer - 1;
                let mut inner = outer;
                while inner != 0 {
                    let b = inner.trailing_zeros() as usize;
                    inner &= inner - 1;
                    second[a * m + b] += p;
                }
            }
        }
        self.spec
            .features()
            .iter()
            .map(|f| second[f.a * m + f.b])
            .collect()
    }

    /// Single-node means `E[x_a]`.
    pub fn node_means(&self) -> Vec<f64> {
        let m = self.spec.nodes();
        let mut means = vec![0.0; m];
        for (x, &p) in self.probs.iter().enumerate() {
            let mut bits = x;
            while bits != 0 {
                means[bits.trailing_zeros() as usize] += p;
                bits &= bits - 1;
            }
        }
        means
    }

    /// Draws `count` i.i.d. visible vectors from `p(y)` by inverse CDF over the
    /// marginal table. Deterministic given `seed`.
    pub fn sample_observed(&self, count: usize, seed: u64) -> Result<Dataset> {
        if count == 0 {
            return Err(LmeError::Shape("sample count must be at least 1".into()));
        }
        let mut cdf = Vec::with_capacity(self.log_marginals.len());
        let mut acc = 0.0;
        for l in &self.log_marginals {
            acc += l.exp();
            cdf.push(acc);
        }
        let total = acc;
        // Last pattern with positive mass absorbs rounding at the top of the CDF.
        let last_positive = self
            .log_marginals
            .iter()
            .rposition(|l| *l > f64::NEG_INFINITY)
            .unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patterns = (0..count)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * total;
                let idx = cdf.partition_point(|&c| c <= u);
                idx.min(last_positive) as u64
            })
            .collect();
        Dataset::from_patterns(self.spec.visible(), patterns)
    }
}
