//! MCMC over hyperparameters and latent block counts.
//!
//! One step is a systematic Gibbs scan over every cell with a positive count,
//! followed by single-site Metropolis–Hastings updates of alpha_0, theta_0 and
//! each (alpha_j, theta_j). Alphas move on the logit scale and thetas on the
//! log scale. Under the standard logit-normal and log-normal priors the prior
//! times the Jacobian of either transform is a standard normal density in the
//! transformed coordinate, which is what the acceptance ratio uses.
//! Block moves with group block counts summed out, and a joint move of all
//! group thetas with a proposed block-count table, complete the step.

use crate::error::{Error, Result};
use crate::io::CountMatrix;
use crate::rand_dist::{uniform_open, RngHandle};
use crate::special_fn::{ln_factorial, ln_gamma, log_sum_exp, sum_ln_stirling, LevyParams, StirlingRows};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const ALPHA_CEIL: f64 = 1.0 - 1e-9;

/// Which Lévy family is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    /// Generalized gamma at both levels; all alphas are sampled.
    Gg,
    /// Gamma at both levels; alphas stay at zero.
    Gamma,
}

impl std::str::FromStr for PriorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gg" => Ok(PriorKind::Gg),
            "gamma" => Ok(PriorKind::Gamma),
            other => Err(Error::Config(format!("unknown prior '{other}', expected gg or gamma"))),
        }
    }
}

/// Hyperparameters of the base and group densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub base: LevyParams,
    pub groups: Vec<LevyParams>,
}

impl HyperParams {
    pub fn kappas(&self, samples: &[f64]) -> Vec<f64> {
        self.groups.iter().zip(samples).map(|(g, &m)| g.psi(m)).collect()
    }
}

/// The MCMC state: block counts `x[j][l]`, parameters and derived caches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub kind: PriorKind,
    pub x: Vec<Vec<u32>>,
    pub params: HyperParams,
    pub kappa: Vec<f64>,
    pub kappa_dot: f64,
    pub psi0: f64,
    pub x_species: Vec<u64>,
    pub x_dot: u64,
}

impl LatentState {
    pub fn new(counts: &CountMatrix, kind: PriorKind, params: HyperParams, x: Vec<Vec<u32>>) -> Result<Self> {
        if params.groups.len() != counts.n_groups() || x.len() != counts.n_groups() {
            return Err(Error::Config("state dimensions do not match the count matrix".into()));
        }
        if x.iter().any(|row| row.len() != counts.n_species()) {
            return Err(Error::Config("state dimensions do not match the count matrix".into()));
        }
        let mut s = LatentState {
            kind,
            x,
            params,
            kappa: Vec::new(),
            kappa_dot: 0.0,
            psi0: 0.0,
            x_species: Vec::new(),
            x_dot: 0,
        };
        s.refresh_caches(counts);
        Ok(s)
    }

    /// Smallest admissible table: one block per positive cell.
    pub fn minimal(counts: &CountMatrix, kind: PriorKind, params: HyperParams) -> Result<Self> {
        let x = counts
            .values
            .iter()
            .map(|row| row.iter().map(|&n| u32::from(n > 0)).collect())
            .collect();
        Self::new(counts, kind, params, x)
    }

    pub fn refresh_caches(&mut self, counts: &CountMatrix) {
        self.kappa = self.params.kappas(&counts.samples);
        self.kappa_dot = self.kappa.iter().sum();
        self.psi0 = self.params.base.psi(self.kappa_dot);
        let r = counts.n_species();
        self.x_species = (0..r).map(|l| self.x.iter().map(|row| row[l] as u64).sum()).collect();
        self.x_dot = self.x_species.iter().sum();
    }

    /// Checks support constraints and that caches match a fresh recomputation.
    pub fn check(&self, counts: &CountMatrix) -> Result<()> {
        for (j, row) in self.x.iter().enumerate() {
            for (l, &x) in row.iter().enumerate() {
                let n = counts.values[j][l];
                if (n == 0) != (x == 0) || x as u64 > n {
                    return Err(Error::Domain(format!("cell ({j},{l}): X={x} with n={n}")));
                }
            }
        }
        let mut fresh = self.clone();
        fresh.refresh_caches(counts);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * a.abs().max(1.0);
        if fresh.x_species != self.x_species || fresh.x_dot != self.x_dot {
            return Err(Error::Domain("block-count caches are stale".into()));
        }
        if !close(fresh.kappa_dot, self.kappa_dot) || !close(fresh.psi0, self.psi0) {
            return Err(Error::Domain("kappa caches are stale".into()));
        }
        if fresh.kappa.iter().zip(&self.kappa).any(|(&a, &b)| !close(a, b)) {
            return Err(Error::Domain("kappa caches are stale".into()));
        }
        Ok(())
    }
}

#[inline]
fn logit(a: f64) -> f64 {
    (a / (1.0 - a)).ln()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// ln of the standard logit-normal density at alpha.
pub fn ln_prior_alpha(a: f64) -> f64 {
    if !(a > 0.0 && a < 1.0) {
        return f64::NEG_INFINITY;
    }
    let z = logit(a);
    -0.5 * z * z - LN_SQRT_2PI - a.ln() - (1.0 - a).ln()
}

/// ln of the standard log-normal density at theta.
pub fn ln_prior_theta(t: f64) -> f64 {
    if !(t > 0.0) {
        return f64::NEG_INFINITY;
    }
    let z = t.ln();
    -0.5 * z * z - LN_SQRT_2PI - z
}

fn ln_prior(state: &LatentState) -> f64 {
    let p = &state.params;
    let mut lp = ln_prior_theta(p.base.theta) + p.groups.iter().map(|g| ln_prior_theta(g.theta)).sum::<f64>();
    if state.kind == PriorKind::Gg {
        lp += ln_prior_alpha(p.base.alpha) + p.groups.iter().map(|g| ln_prior_alpha(g.alpha)).sum::<f64>();
    }
    lp
}

/// Constant dropped by [`log_likelihood`]: Σ_{j,l} n_{j,l} ln M_j.
pub fn data_log_constant(counts: &CountMatrix) -> f64 {
    (0..counts.n_groups())
        .map(|j| counts.group_total(j) as f64 * counts.samples[j].ln())
        .sum()
}

/// Base-level terms of the joint that depend on (alpha_0, theta_0, kappa_dot).
fn base_part(base: &LevyParams, kappa_dot: f64, r: usize, x_dot: u64, x_species: &[u64]) -> f64 {
    let rf = r as f64;
    let a0 = base.alpha;
    let lg: f64 = x_species.iter().filter(|&&x| x > 0).map(|&x| ln_gamma(x as f64 - a0)).sum();
    rf * base.theta.ln() - base.psi(kappa_dot) - (x_dot as f64 - a0 * rf) * (base.zeta + kappa_dot).ln() + lg
        - rf * ln_gamma(1.0 - a0)
}

/// Group-level terms given the cell sums and Σ ln S.
#[inline]
fn group_part(g: &LevyParams, m: f64, n_plus: u64, x_plus: u64, sum_ln_s: f64) -> f64 {
    x_plus as f64 * g.theta.ln() - (n_plus as f64 - g.alpha * x_plus as f64) * (g.zeta + m).ln() + sum_ln_s
}

/// ln P(counts, X | parameters) without Σ n ln M_j (see [`data_log_constant`]).
/// Gives -inf for a state outside the support.
pub fn log_likelihood(counts: &CountMatrix, state: &LatentState) -> f64 {
    let jn = counts.n_groups();
    let mut r = 0usize;
    for l in 0..counts.n_species() {
        if counts.species_total(l) == 0 {
            continue;
        }
        r += 1;
        for j in 0..jn {
            let (n, x) = (counts.values[j][l], state.x[j][l] as u64);
            if (n == 0) != (x == 0) || x > n {
                return f64::NEG_INFINITY;
            }
        }
    }
    let p = &state.params;
    let kappa = p.kappas(&counts.samples);
    let kappa_dot: f64 = kappa.iter().sum();
    let x_species: Vec<u64> = (0..counts.n_species())
        .map(|l| (0..jn).map(|j| state.x[j][l] as u64).sum())
        .collect();
    let x_dot = x_species.iter().sum();
    let mut lj = base_part(&p.base, kappa_dot, r, x_dot, &x_species) - ln_factorial(r as u64);
    for j in 0..jn {
        let mut cells = Vec::new();
        let (mut n_plus, mut x_plus, mut ln_nf) = (0u64, 0u64, 0.0);
        for l in 0..counts.n_species() {
            let n = counts.values[j][l];
            if n > 0 {
                let x = state.x[j][l] as u64;
                cells.push((n as usize, x as usize));
                n_plus += n;
                x_plus += x;
                ln_nf += ln_factorial(n);
            }
        }
        let s = sum_ln_stirling(p.groups[j].alpha, &cells);
        lj += group_part(&p.groups[j], counts.samples[j], n_plus, x_plus, s) - ln_nf;
    }
    lj
}

/// [`log_likelihood`] plus the log hyperprior.
pub fn log_joint(counts: &CountMatrix, state: &LatentState) -> f64 {
    let ll = log_likelihood(counts, state);
    if ll == f64::NEG_INFINITY {
        return ll;
    }
    ll + ln_prior(state)
}

/// Static summaries of the count matrix used by the sampler.
#[derive(Debug, Clone)]
struct Prepared {
    jn: usize,
    r: usize,
    /// per group: (species, count) for positive cells
    cells: Vec<Vec<(usize, u64)>>,
    n_plus: Vec<u64>,
    distinct_n: Vec<Vec<usize>>,
    ln_nfact: f64,
    samples: Vec<f64>,
}

impl Prepared {
    fn new(counts: &CountMatrix) -> Self {
        let jn = counts.n_groups();
        let r = (0..counts.n_species()).filter(|&l| counts.species_total(l) > 0).count();
        let mut cells = Vec::with_capacity(jn);
        let mut distinct_n = Vec::with_capacity(jn);
        let mut ln_nfact = 0.0;
        for j in 0..jn {
            let c: Vec<(usize, u64)> = counts.values[j]
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(l, &n)| (l, n))
                .collect();
            ln_nfact += c.iter().map(|&(_, n)| ln_factorial(n)).sum::<f64>();
            let mut d: Vec<usize> = c.iter().map(|&(_, n)| n as usize).collect();
            d.sort_unstable();
            d.dedup();
            distinct_n.push(d);
            cells.push(c);
        }
        let n_plus = (0..jn).map(|j| counts.group_total(j)).collect();
        Prepared { jn, r, cells, n_plus, distinct_n, ln_nfact, samples: counts.samples.clone() }
    }
}

/// Sampler working state for one chain.
struct Sampler<'a> {
    data: &'a Prepared,
    state: LatentState,
    rows: Vec<Option<StirlingRows>>,
    x_plus: Vec<u64>,
    sum_ln_s: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn new(data: &'a Prepared, state: LatentState) -> Self {
        let x_plus = (0..data.jn)
            .map(|j| data.cells[j].iter().map(|&(l, _)| state.x[j][l] as u64).sum())
            .collect();
        let mut s = Sampler { data, state, rows: vec![None; data.jn], x_plus, sum_ln_s: vec![0.0; data.jn] };
        for j in 0..data.jn {
            s.sum_ln_s[j] = s.stirling_sum_at(j, s.state.params.groups[j].alpha);
        }
        s
    }

    /// Rebuilds the Stirling rows of group j if alpha_j moved since the last build.
    fn ensure_rows(&mut self, j: usize) {
        let alpha = self.state.params.groups[j].alpha;
        let stale = match &self.rows[j] {
            Some(r) => r.alpha() != alpha,
            None => true,
        };
        if stale {
            self.rows[j] = Some(StirlingRows::build(alpha, &self.data.distinct_n[j]));
        }
    }

    fn stirling_sum_at(&self, j: usize, alpha: f64) -> f64 {
        let cells: Vec<(usize, usize)> = self.data.cells[j]
            .iter()
            .map(|&(l, n)| (n as usize, self.state.x[j][l] as usize))
            .collect();
        sum_ln_stirling(alpha, &cells)
    }

    /// ln Gibbs weights of X_{j,l} = 1..=n.
    fn cell_weights(&mut self, j: usize, l: usize, n: u64, out: &mut Vec<f64>) {
        let st = &self.state;
        let a0 = st.params.base.alpha;
        let g = st.params.groups[j];
        let others = st.x_species[l] - st.x[j][l] as u64;
        let slope = g.theta.ln() + g.alpha * (g.zeta + self.data.samples[j]).ln()
            - (st.params.base.zeta + st.kappa_dot).ln();
        self.ensure_rows(j);
        let row = self.rows[j].as_ref().unwrap().row(n as usize);
        out.clear();
        let mut lg = ln_gamma(1.0 + others as f64 - a0);
        for x in 1..=n {
            if x > 1 {
                lg += (x as f64 - 1.0 + others as f64 - a0).ln();
            }
            out.push(lg + x as f64 * slope + row[x as usize - 1]);
        }
    }

    fn gibbs_sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for j in 0..self.data.jn {
            self.gibbs_group(rng, j);
        }
    }

    fn gibbs_group<R: Rng + ?Sized>(&mut self, rng: &mut R, j: usize) {
        let mut w = Vec::new();
        {
            for ci in 0..self.data.cells[j].len() {
                let (l, n) = self.data.cells[j][ci];
                if n == 1 {
                    continue;
                }
                self.cell_weights(j, l, n, &mut w);
                let x_new = sample_log_weights(rng, &w) as u32 + 1;
                let x_old = self.state.x[j][l];
                if x_new != x_old {
                    let d = x_new as i64 - x_old as i64;
                    self.state.x[j][l] = x_new;
                    self.state.x_species[l] = (self.state.x_species[l] as i64 + d) as u64;
                    self.state.x_dot = (self.state.x_dot as i64 + d) as u64;
                    self.x_plus[j] = (self.x_plus[j] as i64 + d) as u64;
                }
            }
            self.ensure_rows(j);
            let rows = self.rows[j].as_ref().unwrap();
            let s: f64 = self.data.cells[j]
                .iter()
                .map(|&(l, n)| rows.ln_s(n as usize, self.state.x[j][l] as usize))
                .sum();
            self.sum_ln_s[j] = s;
        }
    }

    /// ln of the target with the block counts of group j summed out, as a
    /// function of group j's parameters `g` and the base `base` (terms constant
    /// in both dropped). Includes the standard normal prior of ln theta_0.
    fn collapsed_group(&self, j: usize, g: &LevyParams, base: &LevyParams, rows: &StirlingRows) -> f64 {
        let st = &self.state;
        let m = self.data.samples[j];
        let kd = st.kappa_dot - st.kappa[j] + g.psi(m);
        let c0 = (base.zeta + kd).ln();
        let rf = self.data.r as f64;
        let ln_r = (g.zeta + m).ln();
        let w0 = base.theta.ln();
        let mut v = rf * w0 - 0.5 * w0 * w0 - base.psi(kd) + base.alpha * rf * c0
            - (st.x_dot - self.x_plus[j]) as f64 * c0
            - self.data.n_plus[j] as f64 * ln_r;
        let slope = g.theta.ln() + g.alpha * ln_r - c0;
        let a0 = base.alpha;
        let mut w = Vec::new();
        for &(l, n) in &self.data.cells[j] {
            let others = (st.x_species[l] - st.x[j][l] as u64) as f64;
            let row = rows.row(n as usize);
            w.clear();
            let mut lg = ln_gamma(1.0 + others - a0);
            for x in 1..=n {
                if x > 1 {
                    lg += (x as f64 - 1.0 + others - a0).ln();
                }
                w.push(lg + x as f64 * slope + row[x as usize - 1]);
            }
            v += log_sum_exp(&w);
        }
        v
    }

    /// theta_0 that keeps Psi_0 at `kd_new` equal to its current value at
    /// `kd`, for base shape `alpha`.
    fn compensating_base(&self, alpha: f64, kd: f64, kd_new: f64) -> LevyParams {
        let cur = self.state.params.base;
        let unit = |a: f64, k: f64| LevyParams { alpha: a, theta: 1.0, zeta: cur.zeta }.psi(k);
        let theta = cur.theta * unit(cur.alpha, kd) / unit(alpha, kd_new);
        LevyParams { alpha, theta, zeta: cur.zeta }
    }

    /// Block moves along the ridges of the posterior.
    ///
    /// For each group, (alpha_j, X_j) and (theta_j, X_j) are updated by MH on
    /// the parameter with X_j summed out, followed by a draw of X_j from its
    /// conditional. Each proposal also moves theta_0 so that Psi_0(kappa_dot)
    /// is unchanged, and in the GG case a last move shifts alpha_0 with the
    /// same compensation. All maps are shears in the (logit, log) coordinates,
    /// so no Jacobian enters. `scales` and `accepted` have at least 2J + 1
    /// entries.
    fn collapsed_sweep<R: Rng + ?Sized>(&mut self, rng: &mut R, scales: &[f64], accepted: &mut [bool]) {
        let gg = self.state.kind == PriorKind::Gg;
        accepted.iter_mut().for_each(|a| *a = false);
        for j in 0..self.data.jn {
            let m = self.data.samples[j];
            self.ensure_rows(j);
            for which in 0..2 {
                if which == 0 && !gg {
                    continue;
                }
                let cur = self.state.params.groups[j];
                let (prop, dz) = if which == 0 {
                    let z = logit(cur.alpha);
                    let z_new = z + scales[2 * j] * rng.sample::<f64, _>(StandardNormal);
                    let a_new = sigmoid(z_new);
                    if !(a_new > 0.0 && a_new < ALPHA_CEIL) {
                        continue;
                    }
                    (LevyParams { alpha: a_new, ..cur }, 0.5 * (z_new * z_new - z * z))
                } else {
                    let z = cur.theta.ln();
                    let z_new = z + scales[2 * j + 1] * rng.sample::<f64, _>(StandardNormal);
                    let t_new = z_new.exp();
                    if !(t_new > 0.0 && t_new.is_finite()) {
                        continue;
                    }
                    (LevyParams { theta: t_new, ..cur }, 0.5 * (z_new * z_new - z * z))
                };
                let kd = self.state.kappa_dot;
                let kd_new = kd - self.state.kappa[j] + prop.psi(m);
                let base_cur = self.state.params.base;
                let base_new = self.compensating_base(base_cur.alpha, kd, kd_new);
                if !(base_new.theta > 0.0 && base_new.theta.is_finite()) {
                    continue;
                }
                let rows_new = (which == 0).then(|| StirlingRows::build(prop.alpha, &self.data.distinct_n[j]));
                let rows_cur = self.rows[j].as_ref().unwrap();
                let ln_r = self.collapsed_group(j, &prop, &base_new, rows_new.as_ref().unwrap_or(rows_cur))
                    - self.collapsed_group(j, &cur, &base_cur, rows_cur)
                    - dz;
                if metropolis(rng, ln_r) {
                    self.state.params.base = base_new;
                    self.set_group(j, prop, m);
                    if let Some(r) = rows_new {
                        self.rows[j] = Some(r);
                    }
                    accepted[2 * j + which] = true;
                }
            }
            self.gibbs_group(rng, j);
        }
        if gg {
            let cur = self.state.params.base;
            let z = logit(cur.alpha);
            let z_new = z + scales[2 * self.data.jn] * rng.sample::<f64, _>(StandardNormal);
            let a_new = sigmoid(z_new);
            if a_new > 0.0 && a_new < ALPHA_CEIL {
                let kd = self.state.kappa_dot;
                let prop = self.compensating_base(a_new, kd, kd);
                if prop.theta > 0.0 && prop.theta.is_finite() {
                    let (w, w_new) = (cur.theta.ln(), prop.theta.ln());
                    let ln_r = self.base_value(&prop, kd) - self.base_value(&cur, kd)
                        - 0.5 * (z_new * z_new - z * z)
                        - 0.5 * (w_new * w_new - w * w);
                    if metropolis(rng, ln_r) {
                        self.state.params.base = prop;
                        self.state.psi0 = prop.psi(kd);
                        accepted[2 * self.data.jn] = true;
                    }
                }
            }
        }
    }

    /// Joint move along the common theta direction: every ln theta_j shifts
    /// by the same step, theta_0 compensates as in the block moves, and the
    /// whole block-count table is proposed by one Gibbs scan under the new
    /// parameters, in a random cell order. The scan in the opposite order
    /// under the old parameters, from the proposed table back to the current
    /// one, enters the ratio; at a zero step the ratio is exactly one.
    /// Running the reverse scan also restores the old state on rejection.
    fn theta_scale_move<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) -> bool {
        let old_params = self.state.params.clone();
        let kd = self.state.kappa_dot;
        let eps = scale * rng.sample::<f64, _>(StandardNormal);
        let groups: Vec<LevyParams> =
            old_params.groups.iter().map(|g| LevyParams { theta: g.theta * eps.exp(), ..*g }).collect();
        let kd_new: f64 = groups.iter().zip(&self.data.samples).map(|(g, &m)| g.psi(m)).sum();
        let base_new = self.compensating_base(old_params.base.alpha, kd, kd_new);
        if !(base_new.theta > 0.0 && base_new.theta.is_finite() && groups.iter().all(|g| g.theta.is_finite())) {
            return false;
        }
        // log_joint is a density in theta; the walk runs on ln theta
        let ln_target = |s: &Self| {
            let p = &s.state.params;
            s.log_joint() + p.base.theta.ln() + p.groups.iter().map(|g| g.theta.ln()).sum::<f64>()
        };
        let new_params = HyperParams { base: base_new, groups };
        let old_x = self.state.x.clone();
        let before = ln_target(self);
        self.install(new_params.clone());
        let backward: bool = rng.random();
        let forward = self.guided_scan(rng, None, backward);
        let after = ln_target(self);
        let new_x = self.state.x.clone();
        self.install(old_params);
        let reverse = self.guided_scan(rng, Some(&old_x), !backward);
        if !metropolis(rng, after - before + reverse - forward) {
            return false;
        }
        self.state.x = new_x;
        self.refresh_counts();
        self.install(new_params);
        true
    }

    /// Sets the hyperparameters and the caches that depend on them alone.
    fn install(&mut self, params: HyperParams) {
        self.state.kappa = params.groups.iter().zip(&self.data.samples).map(|(g, &m)| g.psi(m)).collect();
        self.state.kappa_dot = self.state.kappa.iter().sum();
        self.state.psi0 = params.base.psi(self.state.kappa_dot);
        self.state.params = params;
    }

    /// Recomputes the block-count totals from `state.x`.
    fn refresh_counts(&mut self) {
        let st = &mut self.state;
        st.x_species.iter_mut().for_each(|v| *v = 0);
        for j in 0..self.data.jn {
            self.x_plus[j] = 0;
            for &(l, _) in &self.data.cells[j] {
                st.x_species[l] += st.x[j][l] as u64;
                self.x_plus[j] += st.x[j][l] as u64;
            }
        }
        st.x_dot = self.x_plus.iter().sum();
        for j in 0..self.data.jn {
            self.sum_ln_s[j] = self.stirling_sum_at(j, self.state.params.groups[j].alpha);
        }
    }

    /// One Gibbs scan that either samples each cell (`target` None) or moves
    /// it to the value in `target`, visiting cells in group-major order or
    /// its reverse. Returns the ln probability of the values taken under the
    /// successive conditionals.
    fn guided_scan<R: Rng + ?Sized>(&mut self, rng: &mut R, target: Option<&[Vec<u32>]>, backward: bool) -> f64 {
        let mut w = Vec::new();
        let mut lq = 0.0;
        let jn = self.data.jn;
        for jj in 0..jn {
            let j = if backward { jn - 1 - jj } else { jj };
            let len = self.data.cells[j].len();
            for cc in 0..len {
                let ci = if backward { len - 1 - cc } else { cc };
                let (l, n) = self.data.cells[j][ci];
                if n == 1 {
                    continue;
                }
                self.cell_weights(j, l, n, &mut w);
                let x_new = match target {
                    Some(t) => t[j][l],
                    None => sample_log_weights(rng, &w) as u32 + 1,
                };
                lq += w[x_new as usize - 1] - log_sum_exp(&w);
                let d = x_new as i64 - self.state.x[j][l] as i64;
                self.state.x[j][l] = x_new;
                self.state.x_species[l] = (self.state.x_species[l] as i64 + d) as u64;
                self.state.x_dot = (self.state.x_dot as i64 + d) as u64;
                self.x_plus[j] = (self.x_plus[j] as i64 + d) as u64;
            }
            self.sum_ln_s[j] = self.stirling_sum_at(j, self.state.params.groups[j].alpha);
        }
        lq
    }

    fn set_group(&mut self, j: usize, g: LevyParams, m: f64) {
        self.state.params.groups[j] = g;
        self.state.kappa[j] = g.psi(m);
        self.state.kappa_dot = self.state.kappa.iter().sum();
        self.state.psi0 = self.state.params.base.psi(self.state.kappa_dot);
    }

    fn base_value(&self, base: &LevyParams, kappa_dot: f64) -> f64 {
        base_part(base, kappa_dot, self.data.r, self.state.x_dot, &self.state.x_species)
    }

    /// One MH sweep. `scales` has one entry per parameter in the order
    /// alpha_0, theta_0, alpha_1, theta_1, ..., alpha_J, theta_J.
    /// Returns acceptance indicators in the same order.
    fn mh_sweep<R: Rng + ?Sized>(&mut self, rng: &mut R, scales: &[f64], accepted: &mut [bool]) {
        let gg = self.state.kind == PriorKind::Gg;
        accepted.iter_mut().for_each(|a| *a = false);
        // alpha_0
        if gg {
            let cur = self.state.params.base;
            let z = logit(cur.alpha);
            let z_new = z + scales[0] * rng.sample::<f64, _>(StandardNormal);
            let a_new = sigmoid(z_new);
            if a_new > 0.0 && a_new < ALPHA_CEIL {
                let prop = LevyParams { alpha: a_new, ..cur };
                let kd = self.state.kappa_dot;
                let ln_r = self.base_value(&prop, kd) - self.base_value(&cur, kd) - 0.5 * (z_new * z_new - z * z);
                if metropolis(rng, ln_r) {
                    self.state.params.base = prop;
                    self.state.psi0 = prop.psi(kd);
                    accepted[0] = true;
                }
            }
        }
        // theta_0
        {
            let cur = self.state.params.base;
            let z = cur.theta.ln();
            let z_new = z + scales[1] * rng.sample::<f64, _>(StandardNormal);
            let prop = LevyParams { theta: z_new.exp(), ..cur };
            let kd = self.state.kappa_dot;
            let ln_r = self.base_value(&prop, kd) - self.base_value(&cur, kd) - 0.5 * (z_new * z_new - z * z);
            if prop.theta > 0.0 && prop.theta.is_finite() && metropolis(rng, ln_r) {
                self.state.params.base = prop;
                self.state.psi0 = prop.psi(kd);
                accepted[1] = true;
            }
        }
        for j in 0..self.data.jn {
            let m = self.data.samples[j];
            if gg {
                let cur = self.state.params.groups[j];
                let z = logit(cur.alpha);
                let z_new = z + scales[2 + 2 * j] * rng.sample::<f64, _>(StandardNormal);
                let a_new = sigmoid(z_new);
                if a_new > 0.0 && a_new < ALPHA_CEIL {
                    let prop = LevyParams { alpha: a_new, ..cur };
                    let s_new = self.stirling_sum_at(j, a_new);
                    accepted[2 + 2 * j] = self.try_group(rng, j, prop, s_new, z, z_new, m);
                }
            }
            let cur = self.state.params.groups[j];
            let z = cur.theta.ln();
            let z_new = z + scales[3 + 2 * j] * rng.sample::<f64, _>(StandardNormal);
            let prop = LevyParams { theta: z_new.exp(), ..cur };
            if prop.theta > 0.0 && prop.theta.is_finite() {
                let s = self.sum_ln_s[j];
                accepted[3 + 2 * j] = self.try_group(rng, j, prop, s, z, z_new, m);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn try_group<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        j: usize,
        prop: LevyParams,
        s_new: f64,
        z: f64,
        z_new: f64,
        m: f64,
    ) -> bool {
        let cur = self.state.params.groups[j];
        let base = self.state.params.base;
        let k_new = prop.psi(m);
        let kd_new = self.state.kappa_dot - self.state.kappa[j] + k_new;
        let (np, xp) = (self.data.n_plus[j], self.x_plus[j]);
        let ln_r = self.base_value(&base, kd_new) - self.base_value(&base, self.state.kappa_dot)
            + group_part(&prop, m, np, xp, s_new)
            - group_part(&cur, m, np, xp, self.sum_ln_s[j])
            - 0.5 * (z_new * z_new - z * z);
        if !metropolis(rng, ln_r) {
            return false;
        }
        self.state.params.groups[j] = prop;
        self.state.kappa[j] = k_new;
        // re-sum to keep the cache equal to a fresh recomputation
        self.state.kappa_dot = self.state.kappa.iter().sum();
        self.state.psi0 = base.psi(self.state.kappa_dot);
        self.sum_ln_s[j] = s_new;
        true
    }

    fn log_joint(&self) -> f64 {
        let p = &self.state.params;
        let mut lj = self.base_value(&p.base, self.state.kappa_dot) - ln_factorial(self.data.r as u64) - self.data.ln_nfact;
        for j in 0..self.data.jn {
            lj += group_part(&p.groups[j], self.data.samples[j], self.data.n_plus[j], self.x_plus[j], self.sum_ln_s[j]);
        }
        lj + ln_prior(&self.state)
    }
}

#[inline]
fn metropolis<R: Rng + ?Sized>(rng: &mut R, ln_ratio: f64) -> bool {
    if ln_ratio.is_nan() {
        return false;
    }
    ln_ratio >= 0.0 || uniform_open(rng).ln() < ln_ratio
}

/// Index drawn with probabilities proportional to exp(w).
pub fn sample_log_weights<R: Rng + ?Sized>(rng: &mut R, w: &[f64]) -> usize {
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = w.iter().map(|&v| (v - m).exp()).sum();
    let u = uniform_open(rng) * total;
    let mut acc = 0.0;
    for (i, &v) in w.iter().enumerate() {
        acc += (v - m).exp();
        if u < acc {
            return i;
        }
    }
    w.len() - 1
}

/// ln Gibbs weights of X_{j,l} over x = 1..=n_{j,l}, for a frozen state.
pub fn gibbs_weights(counts: &CountMatrix, state: &LatentState, j: usize, l: usize) -> Vec<f64> {
    let data = Prepared::new(counts);
    let n = counts.values[j][l];
    let mut s = Sampler::new(&data, state.clone());
    let mut w = Vec::new();
    if n > 0 {
        s.cell_weights(j, l, n, &mut w);
    }
    w
}

/// One full Gibbs scan over every cell with a positive count.
pub fn gibbs_update_x<R: Rng + ?Sized>(rng: &mut R, counts: &CountMatrix, state: &LatentState) -> LatentState {
    let data = Prepared::new(counts);
    let mut s = Sampler::new(&data, state.clone());
    s.gibbs_sweep(rng);
    s.state
}

/// One MH sweep over all hyperparameters with common scale `step_delta`.
pub fn mh_update_params<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &CountMatrix,
    state: &LatentState,
    step_delta: f64,
) -> Result<LatentState> {
    if !(step_delta > 0.0) {
        return Err(Error::Config("proposal scale must be positive".into()));
    }
    let data = Prepared::new(counts);
    let mut s = Sampler::new(&data, state.clone());
    let k = 2 + 2 * data.jn;
    let mut acc = vec![false; k];
    s.mh_sweep(rng, &vec![step_delta; k], &mut acc);
    Ok(s.state)
}

/// Run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub chains: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Initial random-walk scale on the logit/log scale.
    pub delta: f64,
    pub seed: u64,
    pub prior: PriorKind,
    /// Robbins–Monro scale adaptation toward 0.44 acceptance, burn-in only.
    pub adapt: bool,
    /// Store the block-count table with every record.
    pub keep_latent: bool,
    /// Fixed zeta for the base and every group.
    pub zeta: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            chains: 3,
            steps: 1000,
            burn_in: 500,
            thin: 10,
            delta: 0.1,
            seed: 1,
            prior: PriorKind::Gg,
            adapt: true,
            keep_latent: true,
            zeta: 1.0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 1 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        if self.steps <= self.burn_in {
            return Err(Error::Config("steps must exceed burn-in".into()));
        }
        if self.thin < 1 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if !(self.zeta > 0.0) {
            return Err(Error::Config("zeta must be positive".into()));
        }
        Ok(())
    }

    pub fn records_per_chain(&self) -> usize {
        (self.steps - self.burn_in) / self.thin
    }
}

/// One thinned post-burn-in draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: usize,
    pub chain: usize,
    pub params: HyperParams,
    pub log_joint: f64,
    /// Block counts over positive cells in group-major order, when kept.
    pub x: Option<Vec<u32>>,
}

/// Output of [`run_chain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub records: Vec<Record>,
    pub acceptance: Vec<f64>,
    pub block_acceptance: Vec<f64>,
    pub scales: Vec<f64>,
}

/// Output of [`run_chains`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSet {
    pub config: ChainConfig,
    pub n_groups: usize,
    pub chains: Vec<Vec<Record>>,
    /// Post burn-in acceptance rate per chain and parameter.
    pub acceptance: Vec<Vec<f64>>,
    /// Post burn-in acceptance of the block moves per chain: (alpha_j, theta_j)
    /// pairs, the alpha_0 shear, then the common theta move.
    pub block_acceptance: Vec<Vec<f64>>,
    /// Final proposal scales per chain and parameter.
    pub scales: Vec<Vec<f64>>,
}

/// Parameter picked out of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Alpha0,
    Theta0,
    Alpha(usize),
    Theta(usize),
    LogJoint,
}

impl Param {
    pub fn get(&self, r: &Record) -> f64 {
        match *self {
            Param::Alpha0 => r.params.base.alpha,
            Param::Theta0 => r.params.base.theta,
            Param::Alpha(j) => r.params.groups[j].alpha,
            Param::Theta(j) => r.params.groups[j].theta,
            Param::LogJoint => r.log_joint,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Param::Alpha0 => "alpha_0".into(),
            Param::Theta0 => "theta_0".into(),
            Param::Alpha(j) => format!("alpha_{}", j + 1),
            Param::Theta(j) => format!("theta_{}", j + 1),
            Param::LogJoint => "log_joint".into(),
        }
    }

    /// Sampled parameters in proposal order.
    pub fn all(n_groups: usize, kind: PriorKind) -> Vec<Param> {
        let gg = kind == PriorKind::Gg;
        let mut v = Vec::new();
        if gg {
            v.push(Param::Alpha0);
        }
        v.push(Param::Theta0);
        for j in 0..n_groups {
            if gg {
                v.push(Param::Alpha(j));
            }
            v.push(Param::Theta(j));
        }
        v
    }

    fn slot(&self) -> usize {
        match *self {
            Param::Alpha0 => 0,
            Param::Theta0 => 1,
            Param::Alpha(j) => 2 + 2 * j,
            Param::Theta(j) => 3 + 2 * j,
            Param::LogJoint => usize::MAX,
        }
    }
}

impl ChainSet {
    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.chains.iter().flatten()
    }

    pub fn acceptance_of(&self, p: Param) -> f64 {
        let s = p.slot();
        self.acceptance.iter().map(|a| a[s]).sum::<f64>() / self.acceptance.len() as f64
    }

    /// Block-count table of a record, expanded to `[j][l]`.
    pub fn latent_table(counts: &CountMatrix, record: &Record) -> Option<Vec<Vec<u32>>> {
        let flat = record.x.as_ref()?;
        Some(expand_latent(counts, flat))
    }
}

/// Flattens `x[j][l]` over positive cells in group-major order.
pub fn flatten_latent(counts: &CountMatrix, x: &[Vec<u32>]) -> Vec<u32> {
    let mut out = Vec::new();
    for (j, row) in counts.values.iter().enumerate() {
        for (l, &n) in row.iter().enumerate() {
            if n > 0 {
                out.push(x[j][l]);
            }
        }
    }
    out
}

pub fn expand_latent(counts: &CountMatrix, flat: &[u32]) -> Vec<Vec<u32>> {
    let mut it = flat.iter();
    counts
        .values
        .iter()
        .map(|row| row.iter().map(|&n| if n > 0 { *it.next().unwrap() } else { 0 }).collect())
        .collect()
}

fn initial_state(counts: &CountMatrix, config: &ChainConfig, rng: &mut RngHandle) -> Result<LatentState> {
    let gg = config.prior == PriorKind::Gg;
    let z = config.zeta;
    let draw_alpha = |rng: &mut RngHandle| if gg { 0.1 + 0.8 * uniform_open(rng) } else { 0.0 };
    let base = LevyParams::new(draw_alpha(rng), (3.0 * uniform_open(rng) - 1.0).exp(), z)?;
    let mut groups = Vec::new();
    for _ in 0..counts.n_groups() {
        let a = draw_alpha(rng);
        groups.push(LevyParams::new(a, (2.0 * uniform_open(rng) - 1.0).exp(), z)?);
    }
    // block counts from the prior-free guess sqrt(n), clipped to the support
    let x = counts
        .values
        .iter()
        .map(|row| {
            row.iter()
                .map(|&n| if n == 0 { 0 } else { ((n as f64).sqrt().round() as u32).clamp(1, n as u32) })
                .collect()
        })
        .collect();
    LatentState::new(counts, config.prior, HyperParams { base, groups }, x)
}

/// Runs one chain from `init` (or a random start when `None`).
pub fn run_chain(counts: &CountMatrix, config: &ChainConfig, chain: usize, init: Option<LatentState>) -> Result<ChainOutput> {
    config.validate()?;
    let mut rng = RngHandle::new(config.seed, chain as u64);
    let init = match init {
        Some(s) => s,
        None => initial_state(counts, config, &mut rng)?,
    };
    init.check(counts)?;
    let data = Prepared::new(counts);
    let mut s = Sampler::new(&data, init);
    let k = 2 + 2 * data.jn;
    let mut ln_scale = vec![config.delta.ln(); k];
    let mut acc = vec![false; k];
    let mut ln_cscale = vec![config.delta.ln(); 2 * data.jn + 2];
    let mut cacc = vec![false; 2 * data.jn + 2];
    let mut acc_count = vec![0usize; k];
    let mut cacc_count = vec![0usize; cacc.len()];
    let mut records = Vec::with_capacity(config.records_per_chain());
    for step in 1..=config.steps {
        s.gibbs_sweep(&mut rng);
        let scales: Vec<f64> = ln_scale.iter().map(|v| v.exp()).collect();
        s.mh_sweep(&mut rng, &scales, &mut acc);
        let cscales: Vec<f64> = ln_cscale.iter().map(|v| v.exp()).collect();
        s.collapsed_sweep(&mut rng, &cscales, &mut cacc);
        cacc[2 * data.jn + 1] = s.theta_scale_move(&mut rng, cscales[2 * data.jn + 1]);
        if step <= config.burn_in {
            if config.adapt {
                let gain = (step as f64).powf(-0.6);
                for i in 0..k {
                    ln_scale[i] += gain * (acc[i] as u8 as f64 - 0.44);
                }
                for i in 0..cacc.len() {
                    ln_cscale[i] += gain * (cacc[i] as u8 as f64 - 0.44);
                }
            }
        } else {
            for i in 0..k {
                acc_count[i] += acc[i] as usize;
            }
            for i in 0..cacc.len() {
                cacc_count[i] += cacc[i] as usize;
            }
            if (step - config.burn_in) % config.thin == 0 {
                records.push(Record {
                    step,
                    chain,
                    params: s.state.params.clone(),
                    log_joint: s.log_joint(),
                    x: config.keep_latent.then(|| flatten_latent(counts, &s.state.x)),
                });
            }
        }
    }
    let post = (config.steps - config.burn_in) as f64;
    Ok(ChainOutput {
        records,
        acceptance: acc_count.iter().map(|&c| c as f64 / post).collect(),
        block_acceptance: cacc_count.iter().map(|&c| c as f64 / post).collect(),
        scales: ln_scale.iter().map(|v| v.exp()).collect(),
    })
}

/// Worker count: `PHIBP_THREADS` if set, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("PHIBP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Independent chains on streams (seed, chain index), run in parallel.
pub fn run_chains(counts: &CountMatrix, config: &ChainConfig) -> Result<ChainSet> {
    config.validate()?;
    if counts.n_species() == 0 {
        return Err(Error::InsufficientData("count matrix has no observed species".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count().min(config.chains))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let out: Vec<Result<ChainOutput>> =
        pool.install(|| (0..config.chains).into_par_iter().map(|c| run_chain(counts, config, c, None)).collect());
    let mut chains = Vec::new();
    let mut acceptance = Vec::new();
    let mut block_acceptance = Vec::new();
    let mut scales = Vec::new();
    for r in out {
        let o = r?;
        chains.push(o.records);
        acceptance.push(o.acceptance);
        block_acceptance.push(o.block_acceptance);
        scales.push(o.scales);
    }
    Ok(ChainSet { config: config.clone(), n_groups: counts.n_groups(), chains, acceptance, block_acceptance, scales })
}

/// Split R-hat of one parameter: each chain is halved, then
/// sqrt(((n-1)/n W + B/n) / W).
pub fn rhat_values(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InsufficientData("R-hat needs at least two chains".into()));
    }
    let len = chains.iter().map(Vec::len).min().unwrap();
    if len < 4 {
        return Err(Error::InsufficientData("R-hat needs at least four draws per chain".into()));
    }
    let n = len / 2;
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        halves.push(&c[..n]);
        halves.push(&c[len - n..len]);
    }
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / nf).collect();
    let vars: Vec<f64> = halves
        .iter()
        .zip(&means)
        .map(|(h, &m)| h.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / (nf - 1.0))
        .collect();
    let mf = halves.len() as f64;
    let w = vars.iter().sum::<f64>() / mf;
    let grand = means.iter().sum::<f64>() / mf;
    let b = nf * means.iter().map(|&m| (m - grand) * (m - grand)).sum::<f64>() / (mf - 1.0);
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((((nf - 1.0) / nf * w + b / nf) / w).sqrt())
}

pub fn rhat(chainset: &ChainSet, param: Param) -> Result<f64> {
    let v: Vec<Vec<f64>> = chainset.chains.iter().map(|c| c.iter().map(|r| param.get(r)).collect()).collect();
    rhat_values(&v)
}
