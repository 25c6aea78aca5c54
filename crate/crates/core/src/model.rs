//! Exact forward simulation of grouped count matrices.
//!
//! The marginal of the hierarchy is finite dimensional: a Poisson number of
//! species, a mixed truncated Poisson (MtP) number of blocks per species split
//! multinomially over groups, and an MtP count per block. No truncation of the
//! underlying random measures is needed.

use crate::error::{Error, Result};
use crate::io::CountMatrix;
use crate::rand_dist::{multinomial_unnormalized, poisson, MtpSampler, RngHandle};
use crate::special_fn::LevyParams;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Base Lévy density, one density per group, and per-sample weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub base: LevyParams,
    pub groups: Vec<LevyParams>,
    /// `gamma_weights[j][i]` for sample i of group j.
    pub gamma_weights: Vec<Vec<f64>>,
}

impl ModelParams {
    pub fn new(base: LevyParams, groups: Vec<LevyParams>, gamma_weights: Vec<Vec<f64>>) -> Result<Self> {
        let p = ModelParams { base, groups, gamma_weights };
        p.validate()?;
        Ok(p)
    }

    /// All sample weights equal to one, with `samples[j]` samples in group j.
    pub fn with_unit_samples(base: LevyParams, groups: Vec<LevyParams>, samples: &[usize]) -> Result<Self> {
        let w = samples.iter().map(|&m| vec![1.0; m]).collect();
        Self::new(base, groups, w)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.groups.is_empty() {
            return Err(Error::Config("model needs at least one group".into()));
        }
        if self.gamma_weights.len() != self.groups.len() {
            return Err(Error::Config("one weight list per group is required".into()));
        }
        for (j, g) in self.groups.iter().enumerate() {
            g.validate()?;
            let w = &self.gamma_weights[j];
            if w.is_empty() || w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::Config(format!("group {j} needs positive sample weights")));
            }
        }
        Ok(())
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Total weight Σ_i gamma_{i,j} per group.
    pub fn exposures(&self) -> Vec<f64> {
        self.gamma_weights.iter().map(|w| w.iter().sum()).collect()
    }

    /// kappa_j = psi_j(Σ_i gamma_{i,j}).
    pub fn kappas(&self) -> Vec<f64> {
        self.groups
            .iter()
            .zip(self.exposures())
            .map(|(g, m)| g.psi(m))
            .collect()
    }
}

/// Expected number of distinct species, Psi_0(Σ_j kappa_j).
pub fn expected_phi(params: &ModelParams) -> f64 {
    params.base.psi(params.kappas().iter().sum())
}

/// Species-level block allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDraw {
    pub phi: usize,
    /// Total blocks per species.
    pub x_total: Vec<u64>,
    /// `blocks[l][j]`, blocks of species l in group j.
    pub blocks: Vec<Vec<u64>>,
}

/// A simulated data set with all latent structure kept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub counts: CountMatrix,
    /// `per_sample[j][l][i]`.
    pub per_sample: Vec<Vec<Vec<u64>>>,
    /// `otu_counts[j][l]`: block counts of species l in group j.
    pub otu_counts: Vec<Vec<Vec<u64>>>,
    pub allocation: AllocationDraw,
    pub truth: ModelParams,
}

impl SyntheticDataset {
    /// Aggregated counts only, as real data would arrive.
    pub fn public_view(&self) -> CountMatrix {
        self.counts.clone()
    }

    /// Checks the conservation identities of the simulation.
    pub fn check(&self) -> Result<()> {
        for (l, x) in self.allocation.blocks.iter().enumerate() {
            if x.iter().sum::<u64>() != self.allocation.x_total[l] || self.allocation.x_total[l] == 0 {
                return Err(Error::Config(format!("species {l}: block totals inconsistent")));
            }
            for (j, &xj) in x.iter().enumerate() {
                let otus = &self.otu_counts[j][l];
                let n = self.counts.values[j][l];
                if otus.len() as u64 != xj || otus.iter().any(|&c| c == 0) || otus.iter().sum::<u64>() != n {
                    return Err(Error::Config(format!("cell ({j},{l}): blocks inconsistent with count")));
                }
                if self.per_sample[j][l].iter().sum::<u64>() != n {
                    return Err(Error::Config(format!("cell ({j},{l}): sample split inconsistent")));
                }
            }
        }
        Ok(())
    }
}

/// Draws phi, the block totals and their split across groups.
pub fn sample_allocation<R: Rng + ?Sized>(rng: &mut R, params: &ModelParams) -> Result<AllocationDraw> {
    params.validate()?;
    let kappas = params.kappas();
    let k_dot: f64 = kappas.iter().sum();
    let phi = poisson(rng, params.base.psi(k_dot)) as usize;
    let mut sampler = MtpSampler::new(&params.base, k_dot)?;
    let mut x_total = Vec::with_capacity(phi);
    let mut blocks = Vec::with_capacity(phi);
    for _ in 0..phi {
        let x = sampler.sample(rng);
        x_total.push(x);
        blocks.push(multinomial_unnormalized(rng, x, &kappas));
    }
    Ok(AllocationDraw { phi, x_total, blocks })
}

/// Counts of group j given the allocation: per-species total, block counts and
/// per-sample split.
pub fn simulate_group_counts<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ModelParams,
    j: usize,
    allocation: &AllocationDraw,
) -> Result<(Vec<u64>, Vec<Vec<u64>>, Vec<Vec<u64>>)> {
    let g = &params.groups[j];
    let w = &params.gamma_weights[j];
    let m: f64 = w.iter().sum();
    let mut sampler = MtpSampler::new(g, m)?;
    let mut totals = Vec::with_capacity(allocation.phi);
    let mut otus = Vec::with_capacity(allocation.phi);
    let mut split = Vec::with_capacity(allocation.phi);
    for l in 0..allocation.phi {
        let x = allocation.blocks[l][j];
        let c: Vec<u64> = (0..x).map(|_| sampler.sample(rng)).collect();
        let n: u64 = c.iter().sum();
        split.push(multinomial_unnormalized(rng, n, w));
        totals.push(n);
        otus.push(c);
    }
    Ok((totals, otus, split))
}

/// Full simulation. Group j's counts use child stream j of a handle forked
/// from `rng` after the allocation draw, so groups do not share draws and
/// repeated calls on one handle give independent data sets.
pub fn simulate_dataset(rng: &mut RngHandle, params: &ModelParams) -> Result<SyntheticDataset> {
    let allocation = sample_allocation(rng, params)?;
    let jn = params.n_groups();
    let groups_rng = rng.fork();
    let mut values = Vec::with_capacity(jn);
    let mut otu_counts = Vec::with_capacity(jn);
    let mut per_sample = Vec::with_capacity(jn);
    for j in 0..jn {
        let mut rj = groups_rng.substream(j as u64);
        let (n, c, s) = simulate_group_counts(&mut rj, params, j, &allocation)?;
        values.push(n);
        otu_counts.push(c);
        per_sample.push(s);
    }
    let counts = CountMatrix::new(
        (1..=jn).map(|j| format!("g{j}")).collect(),
        (1..=allocation.phi).map(|l| format!("s{l}")).collect(),
        values,
        params.exposures(),
    )?;
    let ds = SyntheticDataset {
        counts,
        per_sample,
        otu_counts,
        allocation,
        truth: params.clone(),
    };
    debug_assert!(ds.check().is_ok());
    Ok(ds)
}
