//! Prediction of new samples and the test-set predictive likelihood.
//!
//! With training exposures M_j and new exposures m_j the increments are
//! `kappa*_j = psi_j(M_j + m_j) - psi_j(M_j)`. A draw of the next batch has
//! three parts: species never seen before, new OTU blocks of seen species, and
//! extra counts on OTUs already observed.

use crate::error::{domain, Error, Result};
use crate::inference::{expand_latent, HyperParams, Record};
use crate::io::CountMatrix;
use crate::posterior::{sample_abundance, AbundanceEntry, PosteriorAbundanceDraw};
use crate::rand_dist::{ln_gamma_variate, multinomial_unnormalized, poisson, MtpSampler};
use crate::special_fn::{build_stirling_table, ln_factorial, ln_gamma, log_sum_exp, GaussLaguerre, LevyParams, StirlingTable};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A species that appears for the first time in the predicted batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSpecies {
    pub label: String,
    pub h: f64,
    /// Blocks per group.
    pub x: Vec<u64>,
    /// Counts per group.
    pub counts: Vec<u64>,
    /// Block counts per group.
    pub otu_counts: Vec<Vec<u64>>,
    /// Rates per group given the enlarged exposure.
    pub rates: Vec<AbundanceEntry>,
}

/// One draw of the next batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDraw {
    pub new_species: Vec<NewSpecies>,
    /// `new_otus_existing[j][l]`: counts of the new blocks of seen species l.
    pub new_otus_existing: Vec<Vec<Vec<u64>>>,
    /// `extra_counts_existing[j][l][k]`: increments on observed OTU k.
    pub extra_counts_existing: Vec<Vec<Vec<u64>>>,
}

impl PredictiveDraw {
    pub fn n_groups(&self) -> usize {
        self.new_otus_existing.len()
    }

    /// Predicted count of seen species l in group j.
    pub fn existing_count(&self, j: usize, l: usize) -> u64 {
        self.new_otus_existing[j][l].iter().sum::<u64>() + self.extra_counts_existing[j][l].iter().sum::<u64>()
    }

    /// Predicted count matrix: seen species in their original order followed by
    /// the new species.
    pub fn to_counts(&self, groups: &[String], species: &[String], samples: Vec<f64>) -> Result<CountMatrix> {
        let jn = self.n_groups();
        let mut labels = species.to_vec();
        labels.extend(self.new_species.iter().map(|s| s.label.clone()));
        let values = (0..jn)
            .map(|j| {
                let mut row: Vec<u64> = (0..species.len()).map(|l| self.existing_count(j, l)).collect();
                row.extend(self.new_species.iter().map(|s| s.counts[j]));
                row
            })
            .collect();
        CountMatrix::new(groups.to_vec(), labels, values, samples)
    }

    /// Checks the structural invariants of the draw.
    pub fn check(&self) -> Result<()> {
        for s in &self.new_species {
            if s.x.iter().sum::<u64>() == 0 {
                return Err(Error::Domain(format!("{}: new species without blocks", s.label)));
            }
            for (j, c) in s.otu_counts.iter().enumerate() {
                if c.len() as u64 != s.x[j] || c.iter().sum::<u64>() != s.counts[j] || c.iter().any(|&v| v == 0) {
                    return Err(Error::Domain(format!("{}: block counts do not add up", s.label)));
                }
            }
        }
        Ok(())
    }
}

/// A group receiving new exposure: its Lévy density already tilted by the
/// training exposure, the new weight, and the rate increment.
#[derive(Debug, Clone, Copy)]
struct Target {
    levy: LevyParams,
    weight: f64,
    kstar: f64,
}

fn targets(params: &HyperParams, samples: &[f64], m: &[f64]) -> Result<Vec<Target>> {
    if m.len() != params.groups.len() || samples.len() != params.groups.len() {
        return Err(Error::Alignment("one new exposure per group is required".into()));
    }
    if m.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return domain("new exposures must be nonnegative");
    }
    Ok(params
        .groups
        .iter()
        .zip(samples)
        .zip(m)
        .map(|((g, &big), &small)| {
            let levy = g.tilted(big);
            Target { levy, weight: small, kstar: levy.psi(small) }
        })
        .collect())
}

fn block_samplers(t: &[Target]) -> Result<Vec<Option<MtpSampler>>> {
    t.iter()
        .map(|t| if t.weight > 0.0 { MtpSampler::new(&t.levy, t.weight).map(Some) } else { Ok(None) })
        .collect()
}

/// Species never seen in training that appear under the new exposure.
fn sample_novel<R: Rng + ?Sized>(
    rng: &mut R,
    base: &LevyParams,
    kappa_dot: f64,
    t: &[Target],
    samplers: &mut [Option<MtpSampler>],
) -> Result<Vec<NewSpecies>> {
    let kstar_dot: f64 = t.iter().map(|t| t.kstar).sum();
    if !(kstar_dot > 0.0) {
        return Ok(Vec::new());
    }
    let tilted = base.tilted(kappa_dot);
    let phi = poisson(rng, tilted.psi(kstar_dot));
    let mut x_sampler = MtpSampler::new(&tilted, kstar_dot)?;
    let q: Vec<f64> = t.iter().map(|t| t.kstar).collect();
    let rate = base.zeta + kappa_dot + kstar_dot;
    let mut out = Vec::with_capacity(phi as usize);
    for v in 0..phi {
        let xv = x_sampler.sample(rng);
        let h = (ln_gamma_variate(rng, xv as f64 - base.alpha) - rate.ln()).exp();
        let x = multinomial_unnormalized(rng, xv, &q);
        let mut otu_counts = Vec::with_capacity(t.len());
        let mut rates = Vec::with_capacity(t.len());
        for (j, &xj) in x.iter().enumerate() {
            let c: Vec<u64> = match samplers[j].as_mut() {
                Some(s) => (0..xj).map(|_| s.sample(rng)).collect(),
                None => Vec::new(),
            };
            let n = c.iter().sum();
            rates.push(sample_abundance(rng, n, &c, h, &t[j].levy, t[j].weight)?);
            otu_counts.push(c);
        }
        out.push(NewSpecies {
            label: format!("new{}", v + 1),
            h,
            counts: otu_counts.iter().map(|c| c.iter().sum()).collect(),
            x,
            otu_counts,
            rates,
        });
    }
    Ok(out)
}

/// One draw of the next batch with new exposures `m` given a posterior draw.
/// `samples` are the training exposures M_j.
pub fn sample_predictive<R: Rng + ?Sized>(
    rng: &mut R,
    draw: &PosteriorAbundanceDraw,
    params: &HyperParams,
    samples: &[f64],
    m: &[f64],
) -> Result<PredictiveDraw> {
    let t = targets(params, samples, m)?;
    let mut samplers = block_samplers(&t)?;
    let kappa_dot: f64 = params.kappas(samples).iter().sum();
    let new_species = sample_novel(rng, &params.base, kappa_dot, &t, &mut samplers)?;
    let jn = t.len();
    let mut new_otus = Vec::with_capacity(jn);
    let mut extra = Vec::with_capacity(jn);
    for j in 0..jn {
        let mut blocks_j = Vec::with_capacity(draw.n_species());
        let mut extra_j = Vec::with_capacity(draw.n_species());
        for (l, &h) in draw.h.iter().enumerate() {
            let p = poisson(rng, h * t[j].kstar);
            let blocks: Vec<u64> = match samplers[j].as_mut() {
                Some(s) => (0..p).map(|_| s.sample(rng)).collect(),
                None => Vec::new(),
            };
            blocks_j.push(blocks);
            let inc: Vec<u64> = draw.entries[j][l].otu_rates.iter().map(|&s| poisson(rng, t[j].weight * s)).collect();
            extra_j.push(inc);
        }
        new_otus.push(blocks_j);
        extra.push(extra_j);
    }
    Ok(PredictiveDraw { new_species, new_otus_existing: new_otus, extra_counts_existing: extra })
}

/// A draw for an additional group with Lévy density `new_group` and exposure
/// `gamma_new`. The result has a single group and no third component.
pub fn sample_new_group<R: Rng + ?Sized>(
    rng: &mut R,
    draw: &PosteriorAbundanceDraw,
    params: &HyperParams,
    samples: &[f64],
    new_group: &LevyParams,
    gamma_new: f64,
) -> Result<PredictiveDraw> {
    new_group.validate()?;
    if !(gamma_new >= 0.0) {
        return domain("new group exposure must be nonnegative");
    }
    let t = [Target { levy: *new_group, weight: gamma_new, kstar: new_group.psi(gamma_new) }];
    let mut samplers = block_samplers(&t)?;
    let kappa_dot: f64 = params.kappas(samples).iter().sum();
    let new_species = sample_novel(rng, &params.base, kappa_dot, &t, &mut samplers)?;
    let mut blocks_j = Vec::with_capacity(draw.n_species());
    for &h in &draw.h {
        let p = poisson(rng, h * t[0].kstar);
        blocks_j.push(match samplers[0].as_mut() {
            Some(s) => (0..p).map(|_| s.sample(rng)).collect(),
            None => Vec::new(),
        });
    }
    Ok(PredictiveDraw {
        new_species,
        extra_counts_existing: vec![vec![Vec::new(); draw.n_species()]],
        new_otus_existing: vec![blocks_j],
    })
}

/// Natural-log Shannon entropy of `w` normalized to one. `None` when empty.
pub fn shannon_entropy(w: &[f64]) -> Option<f64> {
    if w.is_empty() {
        return None;
    }
    let total: f64 = w.iter().sum();
    Some(-w.iter().filter(|&&v| v > 0.0).map(|&v| v / total * (v / total).ln()).sum::<f64>())
}

/// One draw of the Shannon entropy in group j among the species that are new
/// in the predicted batch, from their rates under the enlarged exposure.
/// `None` when the batch has no new species.
pub fn unseen_entropy<R: Rng + ?Sized>(
    rng: &mut R,
    params: &HyperParams,
    samples: &[f64],
    m: &[f64],
    j: usize,
) -> Result<Option<f64>> {
    if j >= params.groups.len() || !(m[j] >= 1.0) {
        return domain("group needs a new exposure of at least one");
    }
    let t = targets(params, samples, m)?;
    let mut samplers = block_samplers(&t)?;
    let kappa_dot: f64 = params.kappas(samples).iter().sum();
    let novel = sample_novel(rng, &params.base, kappa_dot, &t, &mut samplers)?;
    let w: Vec<f64> = novel.iter().map(|s| s.rates[j].sigma_tilde).collect();
    Ok(shannon_entropy(&w))
}

/// How the integral over the species rate is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    /// Generalized Gauss–Laguerre with this many nodes.
    GaussLaguerre(usize),
    /// Exact: expand the integrand as a polynomial and use gamma moments.
    Moments,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature::GaussLaguerre(64)
    }
}

/// Test log-likelihood split by species block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveLogLik {
    pub existing: f64,
    pub novel: f64,
}

impl PredictiveLogLik {
    pub fn total(&self) -> f64 {
        self.existing + self.novel
    }
}

/// ln E[λ^{-shift} Π_j P_j(λ)] for λ ~ Gamma(shape, rate), where `polys[j][d]`
/// is the ln coefficient of λ^d in P_j.
fn ln_expect_poly(polys: &[Vec<f64>], shift: usize, shape: f64, rate: f64, quad: Quadrature) -> Result<f64> {
    match quad {
        Quadrature::GaussLaguerre(k) => {
            let gl = GaussLaguerre::new(shape - 1.0, k)?;
            let mut buf = Vec::new();
            Ok(gl.ln_expect(|u| {
                let ln_lam = u.ln() - rate.ln();
                let mut s = -(shift as f64) * ln_lam;
                for p in polys {
                    buf.clear();
                    buf.extend(p.iter().enumerate().map(|(d, &c)| c + d as f64 * ln_lam));
                    s += log_sum_exp(&buf);
                }
                s
            }))
        }
        Quadrature::Moments => {
            let mut acc = vec![0.0f64];
            for p in polys {
                let mut next = vec![f64::NEG_INFINITY; acc.len() + p.len() - 1];
                for (a, &ca) in acc.iter().enumerate() {
                    if ca == f64::NEG_INFINITY {
                        continue;
                    }
                    for (b, &cb) in p.iter().enumerate() {
                        next[a + b] = crate::special_fn::log_add_exp(next[a + b], ca + cb);
                    }
                }
                acc = next;
            }
            let lg = ln_gamma(shape);
            let terms: Vec<f64> = acc
                .iter()
                .enumerate()
                .filter(|(d, c)| **c > f64::NEG_INFINITY && *d >= shift)
                .map(|(d, &c)| {
                    let s = (d - shift) as f64;
                    c + ln_gamma(shape + s) - lg - s * rate.ln()
                })
                .collect();
            if acc.iter().take(shift).any(|&c| c > f64::NEG_INFINITY) {
                return domain("polynomial has terms below the shift");
            }
            Ok(log_sum_exp(&terms))
        }
    }
}

/// ln of m^n R'^{αx - n} S(n, x) / n!, the weight of x new blocks carrying n
/// counts, without the theta^x λ^x factor.
#[inline]
fn ln_new_blocks(table: &StirlingTable, n: u64, x: u64, ln_m: f64, ln_rp: f64) -> f64 {
    let a = table.alpha();
    n as f64 * ln_m + (a * x as f64 - n as f64) * ln_rp + table.ln_s(n as usize, x as usize) - ln_factorial(n)
}

/// ln of the Poisson–gamma mixture probability of t extra counts on OTUs
/// whose rates are Gamma(shape, R), with exposure m and R' = R + m.
#[inline]
fn ln_nb(t: u64, shape: f64, ln_r: f64, ln_m: f64, ln_rp: f64) -> f64 {
    if shape <= 0.0 {
        return if t == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_gamma(t as f64 + shape) - ln_factorial(t) - ln_gamma(shape) + shape * (ln_r - ln_rp) + t as f64 * (ln_m - ln_rp)
}

/// Test species matched to training columns by label.
struct Aligned {
    /// test column of each training species, if present
    existing: Vec<Option<usize>>,
    /// test columns that are novel (absent or all zero in training) with positive counts
    novel: Vec<usize>,
}

fn align(train: &CountMatrix, test: &CountMatrix) -> Result<Aligned> {
    if train.groups != test.groups {
        return Err(Error::Alignment("train and test groups differ".into()));
    }
    let idx = test.species_index();
    let existing: Vec<Option<usize>> = (0..train.n_species())
        .map(|l| if train.species_total(l) > 0 { idx.get(train.species[l].as_str()).copied() } else { None })
        .collect();
    let seen: std::collections::HashSet<usize> = existing.iter().flatten().copied().collect();
    let novel = (0..test.n_species())
        .filter(|v| !seen.contains(v) && test.species_total(*v) > 0)
        .collect();
    Ok(Aligned { existing, novel })
}

/// Test-set log-likelihood given one set of hyperparameters and the training
/// block table `x` (`x[j][l]`, aligned with `train`).
///
/// Test exposures are `test.samples`. Species are matched by label; test
/// columns absent from training, or all zero there, form the novel block.
pub fn predictive_loglik(
    train: &CountMatrix,
    test: &CountMatrix,
    params: &HyperParams,
    x: &[Vec<u32>],
    quad: Quadrature,
) -> Result<PredictiveLogLik> {
    let al = align(train, test)?;
    let jn = train.n_groups();
    let m = &test.samples;
    if m.iter().any(|&v| !(v > 0.0)) {
        return domain("test exposures must be positive");
    }
    let t = targets(params, &train.samples, m)?;
    let kappa_dot: f64 = params.kappas(&train.samples).iter().sum();
    let kstar_dot: f64 = t.iter().map(|t| t.kstar).sum();
    let base = params.base;
    let max_test = test.max_count().max(1) as usize;
    let tables: Vec<StirlingTable> = params
        .groups
        .iter()
        .map(|g| build_stirling_table(g.alpha, max_test))
        .collect::<Result<_>>()?;
    let ln_m: Vec<f64> = m.iter().map(|v| v.ln()).collect();
    let ln_r: Vec<f64> = t.iter().map(|t| t.levy.zeta.ln()).collect();
    let ln_rp: Vec<f64> = t.iter().map(|t| (t.levy.zeta + t.weight).ln()).collect();
    let ln_theta: Vec<f64> = params.groups.iter().map(|g| g.theta.ln()).collect();

    // species seen in training
    let existing: Vec<Result<f64>> = (0..train.n_species())
        .into_par_iter()
        .filter(|&l| train.species_total(l) > 0)
        .map(|l| {
            let xl: u64 = (0..jn).map(|j| x[j][l] as u64).sum();
            if xl == 0 {
                return domain("seen species without blocks");
            }
            let a = xl as f64 - base.alpha;
            let b = kappa_dot + base.zeta;
            let mut p0 = 0usize;
            let mut polys = Vec::with_capacity(jn);
            for j in 0..jn {
                let n4 = al.existing[l].map(|v| test.values[j][v]).unwrap_or(0);
                let (n, xj) = (train.values[j][l], x[j][l] as u64);
                let shape_old = n as f64 - params.groups[j].alpha * xj as f64;
                let mut poly = vec![f64::NEG_INFINITY; n4 as usize + 1];
                for x2 in 0..=n4 {
                    let mut terms = Vec::with_capacity((n4 - x2 + 1) as usize);
                    for n2 in x2..=n4 {
                        let w = if x2 == 0 {
                            if n2 == 0 { 0.0 } else { f64::NEG_INFINITY }
                        } else {
                            ln_new_blocks(&tables[j], n2, x2, ln_m[j], ln_rp[j])
                        };
                        terms.push(w + ln_nb(n4 - n2, shape_old, ln_r[j], ln_m[j], ln_rp[j]));
                    }
                    poly[x2 as usize] = x2 as f64 * ln_theta[j] + log_sum_exp(&terms);
                }
                if xj == 0 && n4 > 0 {
                    p0 += 1;
                }
                polys.push(poly);
            }
            let shape = a + p0 as f64;
            let rate = b + kstar_dot;
            let head = a * b.ln() - ln_gamma(a) + ln_gamma(shape) - shape * rate.ln();
            Ok(head + ln_expect_poly(&polys, p0, shape, rate, quad)?)
        })
        .collect();
    let mut ex = 0.0;
    for v in existing {
        ex += v?;
    }

    // species new in the test set
    let c = base.zeta + kappa_dot + kstar_dot;
    let lam0 = base.psi(kappa_dot + kstar_dot) - base.psi(kappa_dot);
    let novel: Vec<Result<f64>> = al
        .novel
        .par_iter()
        .map(|&v| {
            let mut polys = Vec::with_capacity(jn);
            let mut g = 0usize;
            for j in 0..jn {
                let n = test.values[j][v];
                if n == 0 {
                    continue;
                }
                g += 1;
                let poly: Vec<f64> = (0..=n)
                    .map(|xx| {
                        if xx == 0 {
                            f64::NEG_INFINITY
                        } else {
                            xx as f64 * ln_theta[j] + ln_new_blocks(&tables[j], n, xx, ln_m[j], ln_rp[j])
                        }
                    })
                    .collect();
                polys.push(poly);
            }
            let shape = g as f64 - base.alpha;
            let head = base.theta.ln() - ln_gamma(1.0 - base.alpha) + ln_gamma(shape) - shape * c.ln();
            Ok(head + ln_expect_poly(&polys, g, shape, c, quad)?)
        })
        .collect();
    let mut nv = -lam0 - ln_factorial(al.novel.len() as u64);
    for v in novel {
        nv += v?;
    }
    Ok(PredictiveLogLik { existing: ex, novel: nv })
}

/// [`predictive_loglik`] for every record that carries its block table.
pub fn predictive_loglik_records(
    train: &CountMatrix,
    test: &CountMatrix,
    records: &[&Record],
    quad: Quadrature,
) -> Result<Vec<PredictiveLogLik>> {
    records
        .par_iter()
        .map(|r| {
            let flat = r
                .x
                .as_ref()
                .ok_or_else(|| Error::Config("chain records do not carry block tables".into()))?;
            let x = expand_latent(train, flat);
            predictive_loglik(train, test, &r.params, &x, quad)
        })
        .collect()
}
