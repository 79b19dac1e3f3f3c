//! Brute-force reference implementations used as test oracles.
//!
//! Everything here works on explicit 0/1 vectors and a dense symmetric weight
//! matrix, sums over states one at a time, and shares no code with the
//! library beyond reading weights out of a `WeightMatrix` by value.

#![allow(dead_code, clippy::needless_range_loop)]

use lme_core::{Dataset, MachineSpec, WeightMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All `2^m` binary vectors in integer order (element 0 is the lowest bit).
pub fn all_states(m: usize) -> Vec<Vec<u8>> {
    (0..1u64 << m)
        .map(|s| (0..m).map(|k| ((s >> k) & 1) as u8).collect())
        .collect()
}

/// Dense symmetric matrix with zero diagonal.
pub fn dense(w: &WeightMatrix) -> Vec<Vec<f64>> {
    let m = w.nodes();
    let mut d = vec![vec![0.0; m]; m];
    let mut idx = 0;
    for a in 0..m {
        for b in (a + 1)..m {
            d[a][b] = w.values()[idx];
            d[b][a] = w.values()[idx];
            idx += 1;
        }
    }
    d
}

/// `½ xᵀ Λ x` for an arbitrary (not necessarily symmetric) square matrix.
pub fn half_quadratic(lambda: &[Vec<f64>], x: &[u8]) -> f64 {
    let mut s = 0.0;
    for (a, row) in lambda.iter().enumerate() {
        for (b, &l) in row.iter().enumerate() {
            s += l * x[a] as f64 * x[b] as f64;
        }
    }
    0.5 * s
}

pub struct Brute {
    pub visible: usize,
    pub states: Vec<Vec<u8>>,
    pub probs: Vec<f64>,
    pub log_z: f64,
}

impl Brute {
    pub fn from_dense(visible: usize, lambda: &[Vec<f64>]) -> Self {
        let states = all_states(lambda.len());
        let energies: Vec<f64> = states.iter().map(|x| half_quadratic(lambda, x)).collect();
        let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = energies.iter().map(|e| (e - max).exp()).sum();
        let log_z = max + z.ln();
        let probs = energies.iter().map(|e| (e - log_z).exp()).collect();
        Self {
            visible,
            states,
            probs,
            log_z,
        }
    }

    pub fn new(spec: &MachineSpec, w: &WeightMatrix) -> Self {
        Self::from_dense(spec.visible(), &dense(w))
    }

    pub fn nodes(&self) -> usize {
        self.states[0].len()
    }

    fn visible_matches(&self, x: &[u8], y: &[u8]) -> bool {
        x[..self.visible] == *y
    }

    pub fn observed_marginal(&self, y: &[u8]) -> f64 {
        self.states
            .iter()
            .zip(&self.probs)
            .filter(|(x, _)| self.visible_matches(x, y))
            .map(|(_, p)| p)
            .sum()
    }

    /// `p(z | y)`, hidden configurations in integer order.
    pub fn hidden_conditional(&self, y: &[u8]) -> Vec<f64> {
        let py = self.observed_marginal(y);
        let hidden = self.nodes() - self.visible;
        let mut out = vec![0.0; 1 << hidden];
        for (x, p) in self.states.iter().zip(&self.probs) {
            if self.visible_matches(x, y) {
                let z: usize = x[self.visible..]
                    .iter()
                    .enumerate()
                    .map(|(k, &b)| (b as usize) << k)
                    .sum();
                out[z] += p / py;
            }
        }
        out
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    pub fn log_likelihood(&self, rows: &[Vec<u8>], weights: &[f64]) -> f64 {
        rows.iter()
            .zip(weights)
            .map(|(y, w)| w * self.observed_marginal(y).ln())
            .sum()
    }

    pub fn pair_expectation(&self, a: usize, b: usize) -> f64 {
        self.states
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| p * (x[a] * x[b]) as f64)
            .sum()
    }

    /// `E[x xᵀ]` including the diagonal.
    pub fn second_moments(&self) -> Vec<Vec<f64>> {
        let m = self.nodes();
        let mut out = vec![vec![0.0; m]; m];
        for (x, p) in self.states.iter().zip(&self.probs) {
            for a in 0..m {
                for b in 0..m {
                    out[a][b] += p * (x[a] * x[b]) as f64;
                }
            }
        }
        out
    }

    /// `Σ_t w_t Σ_z x xᵀ p(z | y_t)`: data completed with this model's conditionals.
    pub fn completed_moments(&self, rows: &[Vec<u8>], weights: &[f64]) -> Vec<Vec<f64>> {
        let m = self.nodes();
        let mut out = vec![vec![0.0; m]; m];
        for (y, w) in rows.iter().zip(weights) {
            let py = self.observed_marginal(y);
            for (x, p) in self.states.iter().zip(&self.probs) {
                if !self.visible_matches(x, y) {
                    continue;
                }
                for a in 0..m {
                    for b in 0..m {
                        out[a][b] += w * p / py * (x[a] * x[b]) as f64;
                    }
                }
            }
        }
        out
    }

    /// Feature targets in catalog order (strict upper triangle, row-major).
    pub fn targets(&self, rows: &[Vec<u8>], weights: &[f64]) -> Vec<f64> {
        let c = self.completed_moments(rows, weights);
        upper(&c)
    }

    pub fn expectations(&self) -> Vec<f64> {
        upper(&self.second_moments())
    }

    /// `-Σ_t w_t Σ_z p_snap(z|y_t) ln p_self(z|y_t)`.
    pub fn conditional_entropy(&self, snapshot: &Brute, rows: &[Vec<u8>], weights: &[f64]) -> f64 {
        let mut h = 0.0;
        for (y, w) in rows.iter().zip(weights) {
            let q = snapshot.hidden_conditional(y);
            let p = self.hidden_conditional(y);
            for (qz, pz) in q.iter().zip(&p) {
                if *qz > 0.0 {
                    h -= w * qz * pz.ln();
                }
            }
        }
        h
    }
}

pub fn upper(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            out.push(m[a][b]);
        }
    }
    out
}

/// `Q(Λ, Λ') = -ln Z_Λ + Σ_t w_t Σ_z p_Λ'(z|y_t) ½ xᵀ Λ x` for a full matrix `Λ`.
pub fn q_dense(lambda: &[Vec<f64>], snapshot: &Brute, rows: &[Vec<u8>], weights: &[f64]) -> f64 {
    let model = Brute::from_dense(snapshot.visible, lambda);
    let mut expected = 0.0;
    for (y, w) in rows.iter().zip(weights) {
        let py = snapshot.observed_marginal(y);
        for (x, p) in snapshot.states.iter().zip(&snapshot.probs) {
            if x[..snapshot.visible] == **y {
                expected += w * p / py * half_quadratic(lambda, x);
            }
        }
    }
    -model.log_z + expected
}

/// `Σ_y p*(y) ln(p*(y)/p(y))` by explicit double summation over the joints.
pub fn kl_observed(truth: &Brute, estimate: &Brute) -> f64 {
    let j = truth.visible;
    let mut total = 0.0;
    for y in all_states(j) {
        let mut pt = 0.0;
        for (x, p) in truth.states.iter().zip(&truth.probs) {
            if x[..j] == *y {
                pt += p;
            }
        }
        let mut pe = 0.0;
        for (x, p) in estimate.states.iter().zip(&estimate.probs) {
            if x[..j] == *y {
                pe += p;
            }
        }
        if pt > 0.0 {
            total += pt * (pt / pe).ln();
        }
    }
    total
}

/// Unpacks a dataset into rows and weights.
pub fn rows_of(data: &Dataset) -> (Vec<Vec<u8>>, Vec<f64>) {
    ((0..data.len()).map(|t| data.row(t)).collect(), data.weights().to_vec())
}

pub fn random_machine(rng: &mut ChaCha8Rng, max_nodes: usize, width: f64) -> (MachineSpec, WeightMatrix) {
    let m = rng.random_range(2..=max_nodes);
    let j = rng.random_range(1..=m);
    let spec = MachineSpec::new(j, m - j).unwrap();
    let w = WeightMatrix::random_uniform(m, width, rng);
    (spec, w)
}

pub fn random_dataset(rng: &mut ChaCha8Rng, width: usize, count: usize) -> Dataset {
    let rows: Vec<Vec<u8>> = (0..count)
        .map(|_| (0..width).map(|_| rng.random_range(0..2u8)).collect())
        .collect();
    Dataset::from_rows(&rows).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Solves `Σ_x f(x) e^{γ f#(x)} p(x) = target` by plain bisection on a wide
/// fixed bracket, summing over states directly.
pub fn iis_root_bisection(model: &Brute, a: usize, b: usize, target: f64) -> f64 {
    let g = |gamma: f64| -> f64 {
        model
            .states
            .iter()
            .zip(&model.probs)
            .filter(|(x, _)| x[a] == 1 && x[b] == 1)
            .map(|(x, p)| {
                let k = x.iter().filter(|&&v| v == 1).count() as f64;
                p * (gamma * k * (k - 1.0) / 2.0).exp()
            })
            .sum()
    };
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest disagreement between the library and the oracles, per operation,
/// over `machines` random machines with at most 8 nodes.
pub fn distribution_oracle_errors(machines: usize, seed: u64) -> Vec<(&'static str, f64)> {
    use lme_core::experiment::cross_entropy_observed;
    use lme_core::ExactDistribution;

    let mut rng = rng(seed);
    let mut worst = [
        ("enumerate_distribution", 0.0f64),
        ("observed_marginal", 0.0),
        ("hidden_conditional", 0.0),
        ("entropy", 0.0),
        ("log_likelihood", 0.0),
        ("feature_expectation", 0.0),
        ("cross_entropy_observed", 0.0),
    ];
    let mut bump = |slot: usize, err: f64| worst[slot].1 = worst[slot].1.max(err);
    for _ in 0..machines {
        let (spec, w) = random_machine(&mut rng, 8, 2.0);
        let lib = ExactDistribution::enumerate(&spec, &w).unwrap();
        let brute = Brute::new(&spec, &w);

        for (x, p) in brute.probs.iter().enumerate() {
            bump(0, (lib.prob(x as u64) - p).abs());
        }
        bump(0, (lib.log_partition() - brute.log_z).abs());
        for y in all_states(spec.visible()) {
            bump(1, (lib.observed_marginal(&y).unwrap() - brute.observed_marginal(&y)).abs());
            for (a, b) in lib.hidden_conditional(&y).unwrap().iter().zip(brute.hidden_conditional(&y)) {
                bump(2, (a - b).abs());
            }
        }
        bump(3, (lib.entropy() - brute.entropy()).abs());
        let count = rng.random_range(1..=20);
        let data = random_dataset(&mut rng, spec.visible(), count);
        let (rows, weights) = rows_of(&data);
        bump(4, (lib.log_likelihood(&data).unwrap() - brute.log_likelihood(&rows, &weights)).abs());
        for (i, f) in spec.features().iter().enumerate() {
            bump(5, (lib.feature_expectation(i).unwrap() - brute.pair_expectation(f.a, f.b)).abs());
        }

        // A second machine with the same visible count and a random hidden count.
        let hidden = rng.random_range(0..=(8 - spec.visible()));
        let other_spec = MachineSpec::new(spec.visible(), hidden).unwrap();
        let other_w = WeightMatrix::random_uniform(other_spec.nodes(), 2.0, &mut rng);
        let other = ExactDistribution::enumerate(&other_spec, &other_w).unwrap();
        let got = cross_entropy_observed(&lib, &other).unwrap();
        bump(6, (got - kl_observed(&brute, &Brute::new(&other_spec, &other_w))).abs());
    }
    worst.to_vec()
}
