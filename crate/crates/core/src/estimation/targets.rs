//! E-step: feature targets from data completed by the hidden conditionals.

use crate::dataset::Dataset;
use crate::distribution::ExactDistribution;
use crate::error::Result;
use crate::machine::{MachineSpec, WeightMatrix};

/// Per-feature targets `η_i`, in catalog order, computed at one parameter snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintTargets {
    values: Vec<f64>,
}

impl ConstraintTargets {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `max_i |expectations_i - η_i|`.
    pub fn max_residual(&self, expectations: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(expectations)
            .fold(0.0f64, |m, (t, e)| m.max((t - e).abs()))
    }
}

/// First and second moments of the data completed by `p(z | y)`:
/// `Σ_y p̃(y) Σ_z x xᵀ p(z|y)`, as node means and per-feature pair means.
#[derive(Debug, Clone)]
pub(crate) struct CompletedMoments {
    pub node_means: Vec<f64>,
    pub pair_means: Vec<f64>,
}

pub(crate) fn completed_moments(dist: &ExactDistribution, data: &Dataset) -> Result<CompletedMoments> {
    dist.check_dataset(data)?;
    let spec = dist.spec();
    let j = spec.visible();
    let l = spec.hidden();
    let m = spec.nodes();

    let mut node_means = vec![0.0; m];
    // Hidden second moments, conditional-mean mixture over data.
    let mut hidden_pair = vec![0.0; l * l];
    // Visible-hidden cross moments.
    let mut vis_hidden = vec![0.0; j * l];
    let mut vis_pair = vec![0.0; j * j];

    let mut z_mean = vec![0.0; l];
    let mut zz_mean = vec![0.0; l * l];
    for (y, w) in data.pattern_weights() {
        let cond = dist.hidden_conditional_pattern(y);
        z_mean.iter_mut().for_each(|v| *v = 0.0);
        zz_mean.iter_mut().for_each(|v| *v = 0.0);
        for (z, &pz) in cond.iter().enumerate() {
            if pz == 0.0 || z == 0 {
                continue;
            }
            let mut outer = z;
            while outer != 0 {
                let a = outer.trailing_zeros() as usize;
                outer &= outer - 1;
                z_mean[a] += pz;
                let mut inner = outer;
                while inner != 0 {
                    let b = inner.trailing_zeros() as usize;
                    inner &= inner - 1;
                    zz_mean[a * l + b] += pz;
                }
            }
        }
        for k in 0..j {
            if y >> k & 1 == 0 {
                continue;
            }
            node_means[k] += w;
            for k2 in (k + 1)..j {
                if y >> k2 & 1 == 1 {
                    vis_pair[k * j + k2] += w;
                }
            }
            for h in 0..l {
                vis_hidden[k * l + h] += w * z_mean[h];
            }
        }
        for h in 0..l {
            node_means[j + h] += w * z_mean[h];
            for h2 in (h + 1)..l {
                hidden_pair[h * l + h2] += w * zz_mean[h * l + h2];
            }
        }
    }

    let pair_means = spec
        .features()
        .iter()
        .map(|f| {
            if f.b < j {
                vis_pair[f.a * j + f.b]
            } else if f.a < j {
                vis_hidden[f.a * l + (f.b - j)]
            } else {
                hidden_pair[(f.a - j) * l + (f.b - j)]
            }
        })
        .collect();
    Ok(CompletedMoments {
        node_means,
        pair_means,
    })
}

/// E-step against an already tabulated snapshot distribution.
pub fn e_step_with(dist: &ExactDistribution, data: &Dataset) -> Result<ConstraintTargets> {
    Ok(ConstraintTargets::new(completed_moments(dist, data)?.pair_means))
}

/// Computes the targets `η_i = Σ_y p̃(y) Σ_z f_i(y, z) p(z | y)` at `weights`.
///
/// Visible-visible targets are plain data co-occurrence frequencies;
/// visible-hidden targets weight each visible bit by the conditional hidden
/// mean; hidden-hidden targets average the conditional pair means over data.
pub fn e_step(spec: &MachineSpec, weights: &WeightMatrix, data: &Dataset) -> Result<ConstraintTargets> {
    let dist = ExactDistribution::enumerate(spec, weights)?;
    e_step_with(&dist, data)
}
