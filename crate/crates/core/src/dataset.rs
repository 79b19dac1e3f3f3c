//! Observed binary data and its line-oriented text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{LmeError, Result};

/// `T` observed visible vectors of width `J`, each bit-packed with bit `k`
/// holding `y_k`, together with empirical weights `p̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    width: usize,
    observations: Vec<u64>,
    weights: Vec<f64>,
}

impl Dataset {
    /// Uniformly weighted dataset from bit-packed observations.
    pub fn from_patterns(width: usize, observations: Vec<u64>) -> Result<Self> {
        let t = observations.len();
        if t == 0 {
            return Err(LmeError::Shape("a dataset needs at least one observation".into()));
        }
        let w = 1.0 / t as f64;
        Self::with_weights(width, observations, vec![w; t])
    }

    pub fn with_weights(width: usize, observations: Vec<u64>, weights: Vec<f64>) -> Result<Self> {
        if width == 0 || width > 63 {
            return Err(LmeError::Shape(format!("unsupported observation width {width}")));
        }
        if observations.is_empty() {
            return Err(LmeError::Shape("a dataset needs at least one observation".into()));
        }
        if weights.len() != observations.len() {
            return Err(LmeError::Shape(format!(
                "{} weights for {} observations",
                weights.len(),
                observations.len()
            )));
        }
        let limit = 1u64 << width;
        if let Some(t) = observations.iter().position(|&o| o >= limit) {
            return Err(LmeError::Shape(format!(
                "observation {t} has bits beyond width {width}"
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LmeError::Shape("empirical weights must be finite and non-negative".into()));
        }
        let total = compensated_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(LmeError::Shape(format!("empirical weights sum to {total}, not 1")));
        }
        Ok(Self {
            width,
            observations,
            weights,
        })
    }

    /// Uniformly weighted dataset from rows of 0/1 values.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        let mut patterns = Vec::with_capacity(rows.len());
        for (t, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(LmeError::Shape(format!(
                    "row {t} has {} components, expected {width}",
                    row.len()
                )));
            }
            patterns.push(pack_bits(row).ok_or_else(|| {
                LmeError::Shape(format!("row {t} contains a value other than 0 or 1"))
            })?);
        }
        Self::from_patterns(width, patterns)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of observations `T`.
    #[inline]
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[u64] {
        &self.observations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Empirical distribution over distinct patterns, sorted by pattern.
    pub fn pattern_weights(&self) -> Vec<(u64, f64)> {
        let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
        for (&o, &w) in self.observations.iter().zip(&self.weights) {
            *acc.entry(o).or_insert(0.0) += w;
        }
        acc.into_iter().collect()
    }

    /// Row `t` unpacked into 0/1 values.
    pub fn row(&self, t: usize) -> Vec<u8> {
        unpack_bits(self.observations[t], self.width)
    }

    /// Weighted mean of each visible bit.
    pub fn bit_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.width];
        for (&o, &w) in self.observations.iter().zip(&self.weights) {
            for (k, m) in means.iter_mut().enumerate() {
                if o >> k & 1 == 1 {
                    *m += w;
                }
            }
        }
        means
    }

    /// Parses the text format: one observation per line, `0`/`1` values
    /// separated by whitespace (a run of digits without spaces is also
    /// accepted); blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut width: Option<usize> = None;
        let mut patterns = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| LmeError::Parse {
                path: source.to_string(),
                line: lineno,
                message,
            };
            let mut bits = Vec::new();
            for token in trimmed.split_whitespace() {
                for c in token.chars() {
                    match c {
                        '0' => bits.push(0u8),
                        '1' => bits.push(1u8),
                        other => {
                            return Err(err(format!(
                                "unexpected character {other:?} in {token:?}; expected 0 or 1"
                            )))
                        }
                    }
                }
            }
            let expected = *width.get_or_insert(bits.len());
            if bits.len() != expected {
                return Err(err(format!(
                    "observation has {} components, expected {expected}",
                    bits.len()
                )));
            }
            if expected > 63 {
                return Err(err(format!("observation width {expected} exceeds 63")));
            }
            patterns.push(pack_bits(&bits).expect("validated bits"));
        }
        let width = width.ok_or_else(|| LmeError::Parse {
            path: source.to_string(),
            line: 0,
            message: "no observations found".into(),
        })?;
        Self::from_patterns(width, patterns)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Renders the text format. Only the observations are written; weights are
    /// implied uniform on re-read.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.len() * self.width * 2);
        for &o in &self.observations {
            for k in 0..self.width {
                if k > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{}", o >> k & 1);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Neumaier summation; plain summation of 10^5 equal weights drifts past 1e-12.
fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub(crate) fn pack_bits(bits: &[u8]) -> Option<u64> {
    let mut p = 0u64;
    for (k, &b) in bits.iter().enumerate() {
        match b {
            0 => {}
            1 => p |= 1 << k,
            _ => return None,
        }
    }
    Some(p)
}

pub(crate) fn unpack_bits(pattern: u64, width: usize) -> Vec<u8> {
    (0..width).map(|k| (pattern >> k & 1) as u8).collect()
}
