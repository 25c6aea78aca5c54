//! Alpha and beta diversity over posterior abundance draws, and
//! frequency-of-frequencies (FoF) comparisons of count tables.

use crate::error::{Error, Result};
use crate::io::CountMatrix;
use crate::posterior::PosteriorAbundanceDraw;
use crate::predict::shannon_entropy;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Shannon entropy (natural log) of the normalized rates of group j over all
/// observed species, including those with a zero count in j.
pub fn shannon_alpha(draw: &PosteriorAbundanceDraw, j: usize) -> f64 {
    shannon_entropy(&draw.sigma_tilde(j)).unwrap_or(0.0)
}

/// Bray–Curtis dissimilarity of two rate vectors.
pub fn bray_curtis_rates(a: &[f64], b: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        num += (x - y).abs();
        den += x + y;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Bray–Curtis dissimilarity between groups j and v in one draw.
pub fn bray_curtis(draw: &PosteriorAbundanceDraw, j: usize, v: usize) -> f64 {
    bray_curtis_rates(&draw.sigma_tilde(j), &draw.sigma_tilde(v))
}

/// Pairwise Bray–Curtis matrix of one draw.
pub fn beta_matrix(draw: &PosteriorAbundanceDraw) -> Vec<Vec<f64>> {
    let jn = draw.n_groups();
    let rates: Vec<Vec<f64>> = (0..jn).map(|j| draw.sigma_tilde(j)).collect();
    (0..jn)
        .map(|j| (0..jn).map(|v| if j == v { 0.0 } else { bray_curtis_rates(&rates[j], &rates[v]) }).collect())
        .collect()
}

/// Fraction of species with each positive count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoF {
    pub support: Vec<u64>,
    pub mass: Vec<f64>,
}

impl FoF {
    /// FoF of any list of counts; zeros are ignored.
    pub fn from_counts(counts: impl IntoIterator<Item = u64>) -> FoF {
        let mut tally: BTreeMap<u64, u64> = BTreeMap::new();
        let mut total = 0u64;
        for c in counts.into_iter().filter(|&c| c > 0) {
            *tally.entry(c).or_default() += 1;
            total += 1;
        }
        FoF {
            support: tally.keys().copied().collect(),
            mass: tally.values().map(|&v| v as f64 / total as f64).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// CDF at k.
    pub fn cdf(&self, k: u64) -> f64 {
        self.support.iter().zip(&self.mass).take_while(|(&s, _)| s <= k).map(|(_, &p)| p).sum()
    }
}

/// FoF of group j.
pub fn fof(counts: &CountMatrix, j: usize) -> FoF {
    FoF::from_counts(counts.values[j].iter().copied())
}

/// Kolmogorov–Smirnov distance between two FoFs.
pub fn ks_statistic(a: &FoF, b: &FoF) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("KS distance needs two nonempty FoFs".into()));
    }
    let (mut i, mut k) = (0, 0);
    let (mut fa, mut fb, mut d) = (0.0f64, 0.0f64, 0.0f64);
    while i < a.support.len() || k < b.support.len() {
        let next = match (a.support.get(i), b.support.get(k)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.support.len() && a.support[i] == next {
            fa += a.mass[i];
            i += 1;
        }
        while k < b.support.len() && b.support[k] == next {
            fb += b.mass[k];
            k += 1;
        }
        d = d.max((fa - fb).abs());
    }
    Ok(d.min(1.0))
}

/// Mean and central 95% interval of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Summary of `v`; `None` for an empty slice. NaNs are skipped.
pub fn summarize(v: &[f64]) -> Option<Summary> {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
    if s.is_empty() {
        return None;
    }
    s.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    Some(Summary { mean: s.iter().sum::<f64>() / s.len() as f64, lower: q(0.025), upper: q(0.975) })
}
