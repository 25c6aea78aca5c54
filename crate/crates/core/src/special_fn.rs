//! Closed forms for the generalized gamma (GG) Lévy density
//!
//! ```text
//! tau(s) = theta / Gamma(1 - alpha) * s^(-alpha - 1) * exp(-zeta * s),   s > 0
//! ```
//!
//! together with log-space generalized Stirling numbers of the first kind.
//! `alpha == 0` is the gamma process and takes its own branch everywhere.

use crate::error::{domain, Result};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma as statrs_ln_gamma;

/// ln Γ(x) for x > 0.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    statrs_ln_gamma(x)
}

/// ln n!
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    statrs::function::factorial::ln_factorial(n)
}

/// ln(e^a + e^b) without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// ln Σ exp(v_i). Empty input gives -inf.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Parameters (alpha, theta, zeta) of a GG Lévy density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevyParams {
    pub alpha: f64,
    pub theta: f64,
    pub zeta: f64,
}

impl LevyParams {
    pub fn new(alpha: f64, theta: f64, zeta: f64) -> Result<Self> {
        let p = LevyParams { alpha, theta, zeta };
        p.validate()?;
        Ok(p)
    }

    /// Gamma process with shape measure `theta` and rate `zeta`.
    pub fn gamma(theta: f64, zeta: f64) -> Result<Self> {
        Self::new(0.0, theta, zeta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return domain(format!("alpha must lie in [0,1), got {}", self.alpha));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return domain(format!("theta must be positive, got {}", self.theta));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return domain(format!("zeta must be positive, got {}", self.zeta));
        }
        Ok(())
    }

    #[inline]
    pub fn is_gamma(&self) -> bool {
        self.alpha == 0.0
    }

    /// The density exponentially tilted by `e^{-t s}`: zeta becomes zeta + t.
    pub fn tilted(&self, t: f64) -> LevyParams {
        LevyParams {
            zeta: self.zeta + t,
            ..*self
        }
    }

    /// Laplace exponent psi(t) = ∫ (1 - e^{-ts}) tau(s) ds, t ≥ 0.
    #[inline]
    pub fn psi(&self, t: f64) -> f64 {
        let u = (t / self.zeta).ln_1p();
        if self.is_gamma() {
            self.theta * u
        } else {
            // (theta/alpha) zeta^alpha ((1 + t/zeta)^alpha - 1)
            self.theta / self.alpha * self.zeta.powf(self.alpha) * (self.alpha * u).exp_m1()
        }
    }

    /// ln of psi^{(c)}(t) = ∫ s^c e^{-ts} tau(s) ds.
    #[inline]
    pub fn ln_moment(&self, c: u64, t: f64) -> f64 {
        let c = c as f64;
        if self.is_gamma() {
            self.theta.ln() + ln_gamma(c) - c * (t + self.zeta).ln()
        } else {
            self.theta.ln() + ln_gamma(c - self.alpha) - ln_gamma(1.0 - self.alpha)
                + (self.alpha - c) * (t + self.zeta).ln()
        }
    }
}

/// psi(t) for the density `p`; errors on negative or non-finite t.
pub fn laplace_exponent(p: &LevyParams, t: f64) -> Result<f64> {
    p.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return domain(format!("laplace exponent needs t >= 0, got {t}"));
    }
    Ok(p.psi(t))
}

/// The c-th tilted moment psi^{(c)}(t) of the Lévy density.
pub fn laplace_moment(p: &LevyParams, c: u64, t: f64) -> Result<f64> {
    p.validate()?;
    if c < 1 {
        return domain("moment order must be at least 1");
    }
    if !(t >= 0.0) || !t.is_finite() {
        return domain(format!("laplace moment needs t >= 0, got {t}"));
    }
    Ok(p.ln_moment(c, t).exp())
}

/// ln of W(c) = Gamma(c - alpha) / (Gamma(1 - alpha) c!), the weight of a block of size c.
#[inline]
pub fn ln_block_weight(alpha: f64, c: u64) -> f64 {
    ln_gamma(c as f64 - alpha) - ln_gamma(1.0 - alpha) - ln_factorial(c)
}

/// Triangular table of ln S_alpha(n, k), 1 ≤ k ≤ n ≤ max_n.
#[derive(Debug, Clone)]
pub struct StirlingTable {
    alpha: f64,
    max_n: usize,
    entries: Vec<f64>,
}

#[inline]
fn tri_index(n: usize, k: usize) -> usize {
    n * (n - 1) / 2 + (k - 1)
}

impl StirlingTable {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    /// ln S_alpha(n, k); `-inf` outside 1 ≤ k ≤ n, and ln S(0, 0) = 0.
    #[inline]
    pub fn ln_s(&self, n: usize, k: usize) -> f64 {
        if n == 0 && k == 0 {
            return 0.0;
        }
        if k == 0 || k > n {
            return f64::NEG_INFINITY;
        }
        assert!(n <= self.max_n, "Stirling table covers n <= {}, asked {n}", self.max_n);
        self.entries[tri_index(n, k)]
    }

    /// Row n as a slice indexed by k - 1.
    pub fn row(&self, n: usize) -> &[f64] {
        assert!(n >= 1 && n <= self.max_n);
        let start = tri_index(n, 1);
        &self.entries[start..start + n]
    }

    /// Extends the table in place so that it covers `max_n`.
    pub fn grow_to(&mut self, max_n: usize) {
        if max_n <= self.max_n {
            return;
        }
        let a = self.alpha;
        self.entries.reserve(max_n * (max_n + 1) / 2 - self.entries.len());
        for n in self.max_n..max_n {
            // row n + 1 from row n
            let prev = tri_index(n, 1);
            let nf = n as f64;
            for k in 1..=n + 1 {
                let stay = if k <= n {
                    (nf - k as f64 * a).ln() + self.entries[prev + k - 1]
                } else {
                    f64::NEG_INFINITY
                };
                let fresh = if k >= 2 {
                    self.entries[prev + k - 2]
                } else {
                    f64::NEG_INFINITY
                };
                self.entries.push(log_add_exp(stay, fresh));
            }
        }
        self.max_n = max_n;
    }
}

/// Builds ln S_alpha(n, k) for n ≤ max_n with the triangular recurrence
/// S(n+1, k) = (n - k alpha) S(n, k) + S(n, k-1), combined by log-sum-exp.
pub fn build_stirling_table(alpha: f64, max_n: usize) -> Result<StirlingTable> {
    if !(alpha >= 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in [0,1), got {alpha}"));
    }
    if max_n < 1 {
        return domain("max_n must be at least 1");
    }
    let mut t = StirlingTable {
        alpha,
        max_n: 1,
        entries: vec![0.0],
    };
    t.grow_to(max_n);
    Ok(t)
}

/// Walks the Stirling triangle up to `n_max` in ratio form, keeping only
/// columns k ≤ `kcap`. Calls `visit(n, ln S(n,1), r)` for every row where
/// `r[k] = S(n,k) / S(n,k-1)` for 2 ≤ k ≤ min(n, kcap).
///
/// Lower columns never depend on higher ones, so the truncation is exact.
/// Each step is a handful of flops with no logarithms, which is what the
/// sampler needs when alpha moves.
fn ratio_sweep(alpha: f64, n_max: usize, kcap: usize, mut visit: impl FnMut(usize, f64, &[f64])) {
    if n_max == 0 {
        return;
    }
    let kcap = kcap.max(1);
    let mut r = vec![0.0f64; kcap + 2];
    let mut g = vec![0.0f64; kcap + 2];
    let mut ln_s1 = 0.0f64;
    visit(1, 0.0, &r[..2]);
    for n in 1..n_max {
        let nf = n as f64;
        let top = (n + 1).min(kcap);
        // g_k = (n - k alpha) r(n,k) + 1, with r(n, n+1) = 0
        for k in 2..=top {
            let rk = if k <= n { r[k] } else { 0.0 };
            g[k] = (nf - k as f64 * alpha) * rk + 1.0;
        }
        // r(n+1,k) = g_k r(n,k-1) / g_{k-1}; at k = 2, r(n+1,2) = g_2 / (n - alpha)
        for k in (3..=top).rev() {
            r[k] = g[k] * r[k - 1] / g[k - 1];
        }
        if top >= 2 {
            r[2] = g[2] / (nf - alpha);
        }
        ln_s1 += (nf - alpha).ln();
        visit(n + 1, ln_s1, &r[..=top]);
    }
}

/// Full rows ln S_alpha(n, ·) for a chosen set of n values.
#[derive(Debug, Clone)]
pub struct StirlingRows {
    alpha: f64,
    index: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

const NO_ROW: usize = usize::MAX;

impl StirlingRows {
    /// Rows for every n in `ns` (zeros ignored), via the ratio recurrence.
    pub fn build(alpha: f64, ns: &[usize]) -> Self {
        let n_max = ns.iter().copied().max().unwrap_or(0);
        let mut index = vec![NO_ROW; n_max + 1];
        for &n in ns {
            if n > 0 {
                index[n] = 0;
            }
        }
        let mut rows = Vec::new();
        ratio_sweep(alpha, n_max, n_max, |n, ln_s1, r| {
            if index[n] == NO_ROW {
                return;
            }
            let mut row = Vec::with_capacity(n);
            let mut acc = ln_s1;
            row.push(acc);
            for &rk in &r[2..=n] {
                acc += rk.ln();
                row.push(acc);
            }
            index[n] = rows.len();
            rows.push(row);
        });
        StirlingRows { alpha, index, rows }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Row n indexed by k - 1. Panics if n was not requested.
    #[inline]
    pub fn row(&self, n: usize) -> &[f64] {
        &self.rows[self.index[n]]
    }

    #[inline]
    pub fn ln_s(&self, n: usize, k: usize) -> f64 {
        if n == 0 {
            return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        if k == 0 || k > n {
            return f64::NEG_INFINITY;
        }
        self.row(n)[k - 1]
    }
}

/// Sum of ln S_alpha(n, x) over `cells` of (n, x) with 1 ≤ x ≤ n.
///
/// Only columns up to the largest x are walked, so this is cheap when the
/// block counts are small compared with the counts.
pub fn sum_ln_stirling(alpha: f64, cells: &[(usize, usize)]) -> f64 {
    let mut n_max = 0;
    let mut k_max = 1;
    for &(n, x) in cells {
        debug_assert!(x >= 1 && x <= n);
        n_max = n_max.max(n);
        k_max = k_max.max(x);
    }
    // bucket cells by n so the sweep can settle each row as it passes
    let mut by_n: Vec<Vec<usize>> = vec![Vec::new(); n_max + 1];
    for &(n, x) in cells {
        by_n[n].push(x);
    }
    let mut total = 0.0;
    ratio_sweep(alpha, n_max, k_max, |n, ln_s1, r| {
        for &x in &by_n[n] {
            let mut prod = 1.0f64;
            let mut acc = ln_s1;
            for &rk in &r[2..=x] {
                prod *= rk;
                if !(1e-250..=1e250).contains(&prod) {
                    acc += prod.ln();
                    prod = 1.0;
                }
            }
            total += acc + prod.ln();
        }
    });
    total
}

/// ln Xi_x^{[n]}(tau, gamma) = x ln theta + ln S_alpha(n, x) + (alpha x - n) ln(gamma + zeta).
pub fn xi_partition_weight(
    p: &LevyParams,
    table: &StirlingTable,
    n: usize,
    x: usize,
    gamma_total: f64,
) -> Result<f64> {
    if x > n {
        return domain(format!("block count {x} exceeds count {n}"));
    }
    if n == 0 {
        return Ok(0.0);
    }
    if x == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    if !(gamma_total > 0.0) {
        return domain("gamma_total must be positive");
    }
    if table.alpha() != p.alpha {
        return domain("Stirling table built for a different alpha");
    }
    let xf = x as f64;
    Ok(xf * p.theta.ln() + table.ln_s(n, x)
        + (p.alpha * xf - n as f64) * (gamma_total + p.zeta).ln())
}

/// Generalized Gauss–Laguerre rule for the probability weight
/// u^a e^{-u} / Gamma(a + 1) on (0, inf), a > -1.
///
/// Nodes come from the eigenvalues of the Jacobi matrix; weights from the
/// Christoffel function of the orthonormal polynomials, kept in log form.
#[derive(Debug, Clone)]
pub struct GaussLaguerre {
    pub nodes: Vec<f64>,
    pub ln_weights: Vec<f64>,
}

impl GaussLaguerre {
    pub fn new(a: f64, k: usize) -> Result<Self> {
        if !(a > -1.0) || k == 0 {
            return domain(format!("Gauss-Laguerre needs a > -1 and k >= 1 (a = {a}, k = {k})"));
        }
        let diag: Vec<f64> = (0..k).map(|i| 2.0 * i as f64 + a + 1.0).collect();
        let off: Vec<f64> = (1..k)
            .map(|i| ((i as f64) * (i as f64 + a)).sqrt())
            .collect();
        let mut jm = nalgebra::DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            jm[(i, i)] = diag[i];
            if i + 1 < k {
                jm[(i, i + 1)] = off[i];
                jm[(i + 1, i)] = off[i];
            }
        }
        let mut nodes: Vec<f64> = jm.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(|x, y| x.partial_cmp(y).unwrap());
        // Christoffel: w_i = 1 / Σ_j p_j(u_i)^2 with orthonormal p_j,
        // p_{j+1} = ((u - d_j) p_j - b_j p_{j-1}) / b_{j+1}; rescaled on the fly
        let ln_weights = nodes
            .iter()
            .map(|&u| {
                let mut p_prev = 0.0f64;
                let mut p = 1.0f64;
                let mut sum = 1.0f64;
                let mut ln_scale = 0.0f64;
                for j in 0..k - 1 {
                    let b_prev = if j == 0 { 0.0 } else { off[j - 1] };
                    let p_next = ((u - diag[j]) * p - b_prev * p_prev) / off[j];
                    p_prev = p;
                    p = p_next;
                    sum += p * p;
                    if sum > 1e200 {
                        let s = sum.sqrt();
                        p /= s;
                        p_prev /= s;
                        sum = 1.0;
                        ln_scale += 2.0 * s.ln();
                    }
                }
                -(sum.ln() + ln_scale)
            })
            .collect();
        Ok(GaussLaguerre { nodes, ln_weights })
    }

    /// ln E[f(U)] for U ~ Gamma(a + 1, 1), given `ln_f`.
    pub fn ln_expect(&self, mut ln_f: impl FnMut(f64) -> f64) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.ln_weights)
            .map(|(&u, &w)| w + ln_f(u))
            .collect();
        log_sum_exp(&terms)
    }
}
