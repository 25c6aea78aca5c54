//! Posterior species rates and abundances given hyperparameters.
//!
//! Given the block total x_l of species l, its global rate is
//! `H_l ~ Gamma(x_l - alpha_0, zeta_0 + kappa_dot)`. Given `H_l = h` the groups
//! decouple: block counts follow `P(x) ∝ h^x Xi_x`, blocks are an exchangeable
//! composition of the count, and each group rate splits as
//! `sigma_tilde = sigma_hat + Σ_k S_k` with
//!
//! * gamma case: `sigma_hat ~ Gamma(theta h, R)`, `S_k ~ Gamma(C_k, R)`;
//! * GG case: `R sigma_hat ~ T_alpha((theta/alpha) R^alpha h)` (simple-form
//!   tilted stable, see [`crate::rand_dist`]), `S_k ~ Gamma(C_k - alpha, R)`;
//!
//! where `R = zeta_j + M_j`.

use crate::error::{domain, Error, Result};
use crate::inference::{sample_log_weights, HyperParams};
use crate::io::CountMatrix;
use crate::rand_dist::{gamma, ln_gamma_variate, sample_tilted_stable, uniform_open, RngHandle};
use crate::special_fn::{build_stirling_table, ln_block_weight, ln_factorial, ln_gamma, log_sum_exp, LevyParams, StirlingTable};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Rates of one (group, species) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbundanceEntry {
    pub sigma_tilde: f64,
    pub sigma_hat: f64,
    /// ln sigma_hat, kept because tiny gamma shapes can underflow sigma_hat.
    pub ln_sigma_hat: f64,
    pub otu_rates: Vec<f64>,
    pub otu_counts: Vec<u64>,
}

/// One joint draw of species rates and per-group abundances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorAbundanceDraw {
    pub h: Vec<f64>,
    /// `entries[j][l]`.
    pub entries: Vec<Vec<AbundanceEntry>>,
}

impl PosteriorAbundanceDraw {
    pub fn n_groups(&self) -> usize {
        self.entries.len()
    }

    pub fn n_species(&self) -> usize {
        self.h.len()
    }

    /// sigma_tilde of every species in group j.
    pub fn sigma_tilde(&self, j: usize) -> Vec<f64> {
        self.entries[j].iter().map(|e| e.sigma_tilde).collect()
    }

    /// Block counts X_{j,l}.
    pub fn blocks(&self, j: usize, l: usize) -> u64 {
        self.entries[j][l].otu_counts.len() as u64
    }

    /// Checks the decomposition and conservation identities against `counts`.
    pub fn check(&self, counts: &CountMatrix) -> Result<()> {
        for (j, row) in self.entries.iter().enumerate() {
            for (l, e) in row.iter().enumerate() {
                let s = e.sigma_hat + e.otu_rates.iter().sum::<f64>();
                if s != e.sigma_tilde {
                    return Err(Error::Domain(format!("cell ({j},{l}): sigma_tilde is not the stored sum")));
                }
                if e.otu_counts.iter().sum::<u64>() != counts.values[j][l] || e.otu_counts.len() != e.otu_rates.len() {
                    return Err(Error::Domain(format!("cell ({j},{l}): OTU counts do not add up")));
                }
                if !(e.ln_sigma_hat.is_finite()) || e.otu_rates.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::Domain(format!("cell ({j},{l}): nonpositive rate")));
                }
            }
        }
        if self.h.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("nonpositive species rate".into()));
        }
        Ok(())
    }
}

/// H ~ Gamma(x_l - alpha_0, zeta_0 + kappa_dot).
pub fn sample_h<R: Rng + ?Sized>(rng: &mut R, x_l: u64, base: &LevyParams, kappa_dot: f64) -> Result<f64> {
    if x_l < 1 {
        return domain("species rate needs at least one block");
    }
    let shape = x_l as f64 - base.alpha;
    let ln_h = ln_gamma_variate(rng, shape) - (base.zeta + kappa_dot).ln();
    Ok(ln_h.exp())
}

/// Ordered composition of n into x positive parts by first-part sampling:
/// P(c_1 = c) = W(c) T(n - c, x - 1) / T(n, x) with T(n, x) = x! S(n, x) / n!.
pub fn sample_composition<R: Rng + ?Sized>(rng: &mut R, table: &StirlingTable, n: u64, x: u64) -> Result<Vec<u64>> {
    if x > n || (x == 0) != (n == 0) {
        return domain(format!("no composition of {n} into {x} parts"));
    }
    let alpha = table.alpha();
    let ln_t = |m: u64, k: u64| ln_factorial(k) + table.ln_s(m as usize, k as usize) - ln_factorial(m);
    let mut parts = Vec::with_capacity(x as usize);
    let (mut left, mut k) = (n, x);
    let mut w = Vec::new();
    while k > 1 {
        w.clear();
        for c in 1..=left - k + 1 {
            w.push(ln_block_weight(alpha, c) + ln_t(left - c, k - 1));
        }
        let c = sample_log_weights(rng, &w) as u64 + 1;
        parts.push(c);
        left -= c;
        k -= 1;
    }
    if k == 1 {
        parts.push(left);
    }
    Ok(parts)
}

/// Block count and composition of every group of one species given H = h.
pub fn sample_latent_given_counts<R: Rng + ?Sized>(
    rng: &mut R,
    n_col: &[u64],
    params: &HyperParams,
    samples: &[f64],
    tables: &[StirlingTable],
    h: f64,
) -> Result<(Vec<u64>, Vec<Vec<u64>>)> {
    if !(h > 0.0) {
        return domain("species rate must be positive");
    }
    let mut xs = Vec::with_capacity(n_col.len());
    let mut comps = Vec::with_capacity(n_col.len());
    let mut w = Vec::new();
    for (j, &n) in n_col.iter().enumerate() {
        if n == 0 {
            xs.push(0);
            comps.push(Vec::new());
            continue;
        }
        let g = &params.groups[j];
        let slope = (h * g.theta).ln() + g.alpha * (g.zeta + samples[j]).ln();
        let row = tables[j].row(n as usize);
        w.clear();
        w.extend(row.iter().enumerate().map(|(k, &s)| (k + 1) as f64 * slope + s));
        let x = sample_log_weights(rng, &w) as u64 + 1;
        comps.push(sample_composition(rng, &tables[j], n, x)?);
        xs.push(x);
    }
    Ok((xs, comps))
}

/// Rates of one cell given its composition and H = h. `m` is M_j.
pub fn sample_abundance<R: Rng + ?Sized>(
    rng: &mut R,
    n: u64,
    comps: &[u64],
    h: f64,
    g: &LevyParams,
    m: f64,
) -> Result<AbundanceEntry> {
    if comps.iter().sum::<u64>() != n || comps.iter().any(|&c| c == 0) {
        return domain("composition does not match the count");
    }
    let rate = g.zeta + m;
    if g.is_gamma() {
        // total drawn directly, then split by the gamma-Dirichlet identity
        let shape_hat = g.theta * h;
        let ln_total = ln_gamma_variate(rng, shape_hat + n as f64) - rate.ln();
        let mut lw = Vec::with_capacity(comps.len() + 1);
        lw.push(ln_gamma_variate(rng, shape_hat));
        lw.extend(comps.iter().map(|&c| ln_gamma_variate(rng, c as f64)));
        let z = log_sum_exp(&lw);
        let ln_hat = ln_total + lw[0] - z;
        let otu_rates: Vec<f64> = lw[1..].iter().map(|&v| (ln_total + v - z).exp()).collect();
        let sigma_hat = ln_hat.exp();
        Ok(AbundanceEntry {
            sigma_tilde: sigma_hat + otu_rates.iter().sum::<f64>(),
            sigma_hat,
            ln_sigma_hat: ln_hat,
            otu_rates,
            otu_counts: comps.to_vec(),
        })
    } else {
        sample_abundance_assembled(rng, comps, h, g, m)
    }
}

/// Rates with every component drawn independently and summed. In the
/// gamma case this is the assembled counterpart of the direct total draw.
pub fn sample_abundance_assembled<R: Rng + ?Sized>(
    rng: &mut R,
    comps: &[u64],
    h: f64,
    g: &LevyParams,
    m: f64,
) -> Result<AbundanceEntry> {
    let rate = g.zeta + m;
    let ln_hat = if g.is_gamma() {
        ln_gamma_variate(rng, g.theta * h) - rate.ln()
    } else {
        sample_tilted_stable(rng, g.alpha, g.theta / g.alpha * h, rate)?.ln()
    };
    let otu_rates: Vec<f64> = comps
        .iter()
        .map(|&c| (ln_gamma_variate(rng, c as f64 - g.alpha) - rate.ln()).exp())
        .collect();
    let sigma_hat = ln_hat.exp();
    Ok(AbundanceEntry {
        sigma_tilde: sigma_hat + otu_rates.iter().sum::<f64>(),
        sigma_hat,
        ln_sigma_hat: ln_hat,
        otu_rates,
        otu_counts: comps.to_vec(),
    })
}

/// Stirling tables for each group at the given alphas, covering the largest counts.
pub fn stirling_tables(counts: &CountMatrix, params: &HyperParams) -> Result<Vec<StirlingTable>> {
    (0..counts.n_groups())
        .map(|j| {
            let n_max = counts.values[j].iter().copied().max().unwrap_or(0).max(1) as usize;
            build_stirling_table(params.groups[j].alpha, n_max)
        })
        .collect()
}

/// One posterior abundance draw from a chain record.
///
/// Starting from the record's block table `x`, alternates H | X and
/// X | counts, H for `sweeps` rounds, then draws H, the compositions and the
/// rates. Species use independent child streams of `rng`.
pub fn sample_posterior_abundance(
    rng: &RngHandle,
    counts: &CountMatrix,
    params: &HyperParams,
    x: &[Vec<u32>],
    sweeps: usize,
) -> Result<PosteriorAbundanceDraw> {
    let jn = counts.n_groups();
    if let Some(l) = (0..counts.n_species()).find(|&l| counts.species_total(l) == 0) {
        return Err(Error::InsufficientData(format!(
            "species {} has no counts; drop empty columns before drawing abundances",
            counts.species[l]
        )));
    }
    let tables = stirling_tables(counts, params)?;
    let kappa_dot: f64 = params.kappas(&counts.samples).iter().sum();
    let per_species: Vec<Result<(f64, Vec<AbundanceEntry>)>> = (0..counts.n_species())
        .into_par_iter()
        .map(|l| {
            let mut r = rng.substream(l as u64);
            let col = counts.column(l);
            let mut xl: u64 = (0..jn).map(|j| x[j][l] as u64).sum();
            let mut comps: Option<Vec<Vec<u64>>> = None;
            for _ in 0..sweeps {
                let h = sample_h(&mut r, xl, &params.base, kappa_dot)?;
                let (xs, cs) = sample_latent_given_counts(&mut r, &col, params, &counts.samples, &tables, h)?;
                xl = xs.iter().sum();
                comps = Some(cs);
            }
            let h = sample_h(&mut r, xl, &params.base, kappa_dot)?;
            let comps = match comps {
                Some(c) => c,
                None => (0..jn)
                    .map(|j| sample_composition(&mut r, &tables[j], col[j], x[j][l] as u64))
                    .collect::<Result<Vec<_>>>()?,
            };
            let entries = (0..jn)
                .map(|j| sample_abundance(&mut r, col[j], &comps[j], h, &params.groups[j], counts.samples[j]))
                .collect::<Result<Vec<_>>>()?;
            Ok((h, entries))
        })
        .collect();
    let mut h = Vec::with_capacity(counts.n_species());
    let mut entries: Vec<Vec<AbundanceEntry>> = vec![Vec::with_capacity(counts.n_species()); jn];
    for res in per_species {
        let (hl, el) = res?;
        h.push(hl);
        for (j, e) in el.into_iter().enumerate() {
            entries[j].push(e);
        }
    }
    Ok(PosteriorAbundanceDraw { h, entries })
}

/// Posterior draw given the full latent structure: block compositions
/// `otu_counts[j][l]` (as kept by a simulation). H_l and the rates are drawn
/// from their exact conditionals.
pub fn sample_abundance_given_latent<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &CountMatrix,
    params: &HyperParams,
    otu_counts: &[Vec<Vec<u64>>],
) -> Result<PosteriorAbundanceDraw> {
    let jn = counts.n_groups();
    let kappa_dot: f64 = params.kappas(&counts.samples).iter().sum();
    let mut h = Vec::with_capacity(counts.n_species());
    let mut entries: Vec<Vec<AbundanceEntry>> = vec![Vec::with_capacity(counts.n_species()); jn];
    for l in 0..counts.n_species() {
        let xl: u64 = (0..jn).map(|j| otu_counts[j][l].len() as u64).sum();
        let hl = sample_h(rng, xl, &params.base, kappa_dot)?;
        for j in 0..jn {
            let e = sample_abundance(rng, counts.values[j][l], &otu_counts[j][l], hl, &params.groups[j], counts.samples[j])?;
            entries[j].push(e);
        }
        h.push(hl);
    }
    Ok(PosteriorAbundanceDraw { h, entries })
}

/// An atom of the unobserved part of the base measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenAtom {
    pub lambda: f64,
    /// Rate of this species in each group.
    pub rates: Vec<f64>,
}

/// Largest jumps of the unobserved base measure, whose Lévy density is
/// `exp(-kappa_dot lambda) tau_0(lambda)`, up to `budget` atoms.
///
/// Proposals are the decreasing jumps of a dominating measure with a closed
/// tail inverse, thinned to the target: for alpha_0 > 0 the untilted stable
/// density, for the gamma case `theta_0 / (lambda (1 + c lambda))`.
pub fn sample_unseen_base<R: Rng + ?Sized>(
    rng: &mut R,
    params: &HyperParams,
    samples: &[f64],
    budget: usize,
) -> Result<Vec<UnseenAtom>> {
    let base = params.base;
    let kappa_dot: f64 = params.kappas(samples).iter().sum();
    let c = base.zeta + kappa_dot;
    let mut atoms = Vec::new();
    let mut arrival = 0.0f64;
    let stable_scale = base.theta / (base.alpha * ln_gamma(1.0 - base.alpha).exp());
    while atoms.len() < budget {
        arrival += crate::rand_dist::exp1(rng);
        let (lambda, keep) = if base.is_gamma() {
            let lam = 1.0 / (c * (arrival / base.theta).exp_m1());
            (lam, (-c * lam).exp() * (1.0 + c * lam))
        } else {
            let lam = (stable_scale / arrival).powf(1.0 / base.alpha);
            (lam, (-c * lam).exp())
        };
        if !(lambda > 0.0) {
            break;
        }
        if uniform_open(rng) > keep {
            continue;
        }
        let mut rates = Vec::with_capacity(params.groups.len());
        for (g, &m) in params.groups.iter().zip(samples) {
            let rate = g.zeta + m;
            rates.push(if g.is_gamma() {
                gamma(rng, g.theta * lambda, rate)
            } else {
                sample_tilted_stable(rng, g.alpha, g.theta / g.alpha * lambda, rate)?
            });
        }
        atoms.push(UnseenAtom { lambda, rates });
    }
    Ok(atoms)
}

/// Per-sample split of every OTU count across the samples of its group
/// (equal weights), returned as `[j][l][k][i]`.
pub fn split_otus_by_sample<R: Rng + ?Sized>(
    rng: &mut R,
    draw: &PosteriorAbundanceDraw,
    weights: &[Vec<f64>],
) -> Vec<Vec<Vec<Vec<u64>>>> {
    draw.entries
        .iter()
        .zip(weights)
        .map(|(row, w)| {
            row.iter()
                .map(|e| {
                    e.otu_counts
                        .iter()
                        .map(|&c| crate::rand_dist::multinomial_unnormalized(rng, c, w))
                        .collect()
                })
                .collect()
        })
        .collect()
}
