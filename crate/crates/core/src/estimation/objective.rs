//! The EM auxiliary function `Q`, its matrix gradient, and the
//! conditional-entropy remainder `H(λ, λ') = L(λ) - Q(λ, λ')`.

use crate::dataset::Dataset;
use crate::distribution::ExactDistribution;
use crate::error::Result;
use crate::estimation::scaling::q_from;
use crate::estimation::targets::{completed_moments, e_step_with};
use crate::machine::{MachineSpec, WeightMatrix};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    size: usize,
    data: Vec<f64>,
}

impl PairMatrix {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.size + b]
    }

    fn set(&mut self, a: usize, b: usize, v: f64) {
        self.data[a * self.size + b] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude among off-diagonal entries (the free parameters).
    pub fn max_abs_off_diagonal(&self) -> f64 {
        let mut m = 0.0f64;
        for a in 0..self.size {
            for b in 0..self.size {
                if a != b {
                    m = m.max(self.get(a, b).abs());
                }
            }
        }
        m
    }
}

/// `Q(λ, λ') = -ln Φ_λ + Σ_i λ_i η_i(λ')`.
pub fn q_value(
    spec: &MachineSpec,
    weights: &WeightMatrix,
    snapshot: &WeightMatrix,
    data: &Dataset,
) -> Result<f64> {
    let dist = ExactDistribution::enumerate(spec, weights)?;
    let snap = ExactDistribution::enumerate(spec, snapshot)?;
    let targets = e_step_with(&snap, data)?;
    Ok(q_from(&dist, &targets))
}

/// `H(λ, λ') = -Σ_y p̃(y) Σ_z p_λ'(z|y) ln p_λ(z|y)`.
pub fn conditional_entropy_term(
    spec: &MachineSpec,
    weights: &WeightMatrix,
    snapshot: &WeightMatrix,
    data: &Dataset,
) -> Result<f64> {
    let dist = ExactDistribution::enumerate(spec, weights)?;
    let snap = ExactDistribution::enumerate(spec, snapshot)?;
    conditional_entropy_with(&dist, &snap, data)
}

pub(crate) fn conditional_entropy_with(
    dist: &ExactDistribution,
    snap: &ExactDistribution,
    data: &Dataset,
) -> Result<f64> {
    dist.check_dataset(data)?;
    let j = dist.spec().visible();
    let mut h = 0.0;
    for (y, w) in data.pattern_weights() {
        let log_py = dist.log_observed_marginal(y);
        let cond = snap.hidden_conditional_pattern(y);
        for (z, &q) in cond.iter().enumerate() {
            if q > 0.0 {
                let x = y as usize | (z << j);
                h -= w * q * (dist.log_probs()[x] - log_py);
            }
        }
    }
    Ok(h)
}

/// Gradient of `Q(Λ, Λ')` with respect to the entries of `Λ`:
/// `½ (Σ_y p̃(y) Σ_z x xᵀ p_Λ'(z|y) - E_{p_Λ}[x xᵀ])`.
///
/// The diagonal is included; its entries are not free parameters.
pub fn q_gradient(
    spec: &MachineSpec,
    weights: &WeightMatrix,
    snapshot: &WeightMatrix,
    data: &Dataset,
) -> Result<PairMatrix> {
    let dist = ExactDistribution::enumerate(spec, weights)?;
    let snap = ExactDistribution::enumerate(spec, snapshot)?;
    q_gradient_with(&dist, &snap, data)
}

pub(crate) fn q_gradient_with(
    dist: &ExactDistribution,
    snap: &ExactDistribution,
    data: &Dataset,
) -> Result<PairMatrix> {
    let spec = dist.spec();
    let completed = completed_moments(snap, data)?;
    let model_pairs = dist.feature_expectations();
    let model_nodes = dist.node_means();
    let mut g = PairMatrix::zeros(spec.nodes());
    for a in 0..spec.nodes() {
        g.set(a, a, 0.5 * (completed.node_means[a] - model_nodes[a]));
    }
    for (i, f) in spec.features().iter().enumerate() {
        let v = 0.5 * (completed.pair_means[i] - model_pairs[i]);
        g.set(f.a, f.b, v);
        g.set(f.b, f.a, v);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_at_zero_weights() {
        let spec = MachineSpec::new(2, 1).unwrap();
        let data = Dataset::from_rows(&[vec![1, 0], vec![1, 1]]).unwrap();
        let z = WeightMatrix::zeros(3);
        let q = q_value(&spec, &z, &z, &data).unwrap();
        assert!((q + 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn likelihood_splits_into_q_and_h() {
        let spec = MachineSpec::new(3, 2).unwrap();
        let data = Dataset::from_rows(&[vec![1, 0, 1], vec![1, 1, 0], vec![0, 0, 1]]).unwrap();
        let w = WeightMatrix::from_values(5, (0..10).map(|i| (i as f64).cos()).collect()).unwrap();
        let s = WeightMatrix::from_values(5, (0..10).map(|i| (i as f64 * 0.5).sin()).collect()).unwrap();
        let ll = ExactDistribution::enumerate(&spec, &w).unwrap().log_likelihood(&data).unwrap();
        let q = q_value(&spec, &w, &s, &data).unwrap();
        let h = conditional_entropy_term(&spec, &w, &s, &data).unwrap();
        assert!((ll - q - h).abs() < 1e-12);
        // Gibbs: H(λ', λ') ≤ H(λ, λ').
        let h_self = conditional_entropy_term(&spec, &s, &s, &data).unwrap();
        assert!(h_self <= h + 1e-12);
    }

    #[test]
    fn gradient_is_symmetric() {
        let spec = MachineSpec::new(2, 2).unwrap();
        let data = Dataset::from_rows(&[vec![1, 0], vec![1, 1]]).unwrap();
        let w = WeightMatrix::from_values(4, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        let g = q_gradient(&spec, &w, &w, &data).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(g.get(a, b), g.get(b, a));
            }
        }
    }
}
