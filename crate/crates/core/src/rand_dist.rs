//! Samplers for the primitive laws of the model.
//!
//! Tilted stable convention: [`sample_tilted_stable`] with tilt `c` returns
//! `T` with `E exp(-sT) = exp(-y((c + s)^alpha - c^alpha))`. The simple form
//! `T_alpha(y)` is `c = 1`, so that `E exp(-s T_alpha(y)) = exp(-y((1+s)^alpha - 1))`
//! and `E T_alpha(y) = y alpha`. Tilt `c > 0` is a rescaling of the simple
//! form, `T = T_alpha(y c^alpha) / c`; tilt `0` is the positive stable law.

use crate::error::{domain, Result};
use crate::special_fn::LevyParams;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, Gamma, Poisson, StandardNormal};
use std::f64::consts::PI;

/// Seeded random stream. Identical (seed, stream) pairs replay identical draws.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngHandle {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngHandle { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream keyed by `tag`, a pure function of (seed, stream, tag).
    pub fn substream(&self, tag: u64) -> RngHandle {
        RngHandle::new(self.seed, splitmix(splitmix(self.stream) ^ tag.wrapping_add(1)))
    }

    /// Fresh handle keyed by the next draw of this one. Advances `self`, so
    /// repeated forks from one handle differ.
    pub fn fork(&mut self) -> RngHandle {
        let key = self.inner.next_u64();
        RngHandle::new(self.seed, splitmix(self.stream ^ splitmix(key)))
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Uniform on the open interval (0, 1).
#[inline]
pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[inline]
pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    Poisson::new(mean).expect("finite poisson mean").sample(rng) as u64
}

pub fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Gamma(shape, rate).
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng)
}

/// ln of a Gamma(shape, 1) draw, accurate for tiny shapes where the draw
/// itself underflows: G_a = G_{a+1} U^{1/a}.
pub fn ln_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        gamma(rng, shape, 1.0).ln()
    } else {
        gamma(rng, shape + 1.0, 1.0).ln() + uniform_open(rng).ln() / shape
    }
}

/// Zero-truncated Poisson(s).
pub fn sample_zt_poisson<R: Rng + ?Sized>(rng: &mut R, s: f64) -> Result<u64> {
    if !(s > 0.0) || !s.is_finite() {
        return domain(format!("zero-truncated Poisson needs s > 0, got {s}"));
    }
    if s >= 1.0 {
        // P(0) = e^{-s} <= 1/e, so plain rejection is cheap
        loop {
            let x = poisson(rng, s);
            if x > 0 {
                return Ok(x);
            }
        }
    }
    let u = uniform_open(rng);
    let mut x = 1u64;
    let mut p = s / s.exp_m1();
    let mut cdf = p;
    while cdf < u {
        x += 1;
        p *= s / x as f64;
        if p == 0.0 || cdf + p == cdf {
            // u fell within rounding of one
            return sample_zt_poisson(rng, s);
        }
        cdf += p;
    }
    Ok(x)
}

/// ln P(C = c) for C ~ MtP(tau, gamma): proportional to gamma^c psi^{(c)}(gamma) / c!.
pub fn mtp_ln_pmf(p: &LevyParams, gamma_total: f64, c: u64) -> f64 {
    if c == 0 {
        return f64::NEG_INFINITY;
    }
    c as f64 * gamma_total.ln() + p.ln_moment(c, gamma_total)
        - crate::special_fn::ln_factorial(c)
        - p.psi(gamma_total).ln()
}

/// Mean of MtP(tau, gamma): gamma ∫ s tau(s) ds / psi(gamma).
pub fn mtp_mean(p: &LevyParams, gamma_total: f64) -> f64 {
    gamma_total * p.theta * p.zeta.powf(p.alpha - 1.0) / p.psi(gamma_total)
}

/// Inverse-CDF sampler for MtP(tau, gamma) over a cached, lazily extended pmf table.
///
/// With q = gamma / (gamma + zeta), P(c+1)/P(c) = q (c - alpha)/(c + 1).
#[derive(Debug, Clone)]
pub struct MtpSampler {
    alpha: f64,
    q: f64,
    cdf: Vec<f64>,
    last: f64,
}

impl MtpSampler {
    pub fn new(p: &LevyParams, gamma_total: f64) -> Result<Self> {
        p.validate()?;
        if !(gamma_total > 0.0) || !gamma_total.is_finite() {
            return domain(format!("MtP needs gamma_total > 0, got {gamma_total}"));
        }
        let q = gamma_total / (gamma_total + p.zeta);
        let u = (gamma_total / p.zeta).ln_1p();
        let p1 = if p.is_gamma() {
            q / u
        } else {
            q * p.alpha * (p.alpha * u).exp() / (p.alpha * u).exp_m1()
        };
        Ok(MtpSampler {
            alpha: p.alpha,
            q,
            cdf: vec![p1],
            last: p1,
        })
    }

    /// P(C = 1).
    pub fn p1(&self) -> f64 {
        self.cdf[0]
    }

    fn extend(&mut self) -> bool {
        let c = self.cdf.len() as f64;
        let next = self.last * self.q * (c - self.alpha) / (c + 1.0);
        let top = *self.cdf.last().unwrap();
        if next == 0.0 || top + next == top {
            return false;
        }
        self.last = next;
        self.cdf.push(top + next);
        true
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> u64 {
        loop {
            let u = uniform_open(rng);
            let mut exhausted = false;
            while *self.cdf.last().unwrap() < u {
                if !self.extend() {
                    exhausted = true;
                    break;
                }
            }
            if exhausted {
                // remaining tail is below rounding; redraw
                continue;
            }
            let idx = self.cdf.partition_point(|&v| v < u);
            return idx as u64 + 1;
        }
    }
}

/// One draw from MtP(tau, gamma). Repeated draws should reuse an [`MtpSampler`].
pub fn sample_mtp<R: Rng + ?Sized>(rng: &mut R, p: &LevyParams, gamma_total: f64) -> Result<u64> {
    Ok(MtpSampler::new(p, gamma_total)?.sample(rng))
}

/// ln B(u) with B(u) = (sin(alpha u)/alpha)^alpha (sin((1-alpha)u)/(1-alpha))^(1-alpha) / sin u.
fn ln_zolotarev_b(alpha: f64, u: f64) -> f64 {
    let beta = 1.0 - alpha;
    alpha * ((alpha * u).sin() / alpha).ln() + beta * ((beta * u).sin() / beta).ln() - u.sin().ln()
}

/// Positive stable variate with E exp(-sX) = exp(-s^alpha) (Kanter's representation).
pub fn sample_positive_stable<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> f64 {
    let u = PI * uniform_open(rng);
    let e = exp1(rng);
    let beta = 1.0 - alpha;
    // ln A(u) = [alpha ln sin(alpha u) + beta ln sin(beta u) - ln sin u] / beta
    let ln_a = (alpha * (alpha * u).sin().ln() + beta * (beta * u).sin().ln() - u.sin().ln()) / beta;
    ((ln_a - e.ln()) * beta / alpha).exp()
}

/// Envelope for the t-stage of the double rejection sampler, for given K.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TEnvelope {
    alpha: f64,
    k: f64,
    lo: f64,
    hi: f64,
    /// right tangent slope K omega'(hi) and log height
    r_slope: f64,
    r_ln_h: f64,
    /// left tangent |slope| K |omega'(lo)| and log height (unused when lo = 0)
    l_slope: f64,
    l_ln_h: f64,
    mass_flat: f64,
    mass_right: f64,
    mass_left: f64,
}

#[inline]
pub(crate) fn omega(alpha: f64, t: f64) -> f64 {
    let b = (1.0 - alpha) / alpha;
    t + t.powf(-b) / b - 1.0 / (1.0 - alpha)
}

#[inline]
fn omega_prime(alpha: f64, t: f64) -> f64 {
    1.0 - t.powf(-1.0 / alpha)
}

impl TEnvelope {
    pub(crate) fn new(alpha: f64, k: f64) -> Self {
        let d = (alpha / k).sqrt();
        let hi = 1.0 + d;
        let lo = (1.0 - d).max(0.0);
        let r_slope = k * omega_prime(alpha, hi);
        let r_ln_h = -k * omega(alpha, hi);
        let mass_right = r_ln_h.exp() / r_slope;
        let (l_slope, l_ln_h, mass_left) = if lo > 0.0 {
            let s = -k * omega_prime(alpha, lo);
            let h = -k * omega(alpha, lo);
            (s, h, h.exp() * (-(-s * lo).exp_m1()) / s)
        } else {
            (0.0, 0.0, 0.0)
        };
        TEnvelope {
            alpha,
            k,
            lo,
            hi,
            r_slope,
            r_ln_h,
            l_slope,
            l_ln_h,
            mass_flat: hi - lo,
            mass_right,
            mass_left,
        }
    }

    pub(crate) fn mass(&self) -> f64 {
        self.mass_flat + self.mass_right + self.mass_left
    }

    /// ln of the envelope height at t.
    pub(crate) fn ln_height(&self, t: f64) -> f64 {
        if t > self.hi {
            self.r_ln_h - self.r_slope * (t - self.hi)
        } else if t < self.lo {
            self.l_ln_h - self.l_slope * (self.lo - t)
        } else {
            0.0
        }
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = uniform_open(rng) * self.mass();
        if v < self.mass_flat {
            self.lo + uniform_open(rng) * self.mass_flat
        } else if v < self.mass_flat + self.mass_right {
            self.hi + exp1(rng) / self.r_slope
        } else {
            // exponential leftwards from lo, truncated at 0
            loop {
                let t = self.lo - exp1(rng) / self.l_slope;
                if t > 0.0 {
                    return t;
                }
            }
        }
    }

    /// Accepts t with probability exp(-K omega(t)) / envelope(t).
    fn accept<R: Rng + ?Sized>(&self, rng: &mut R, t: f64) -> bool {
        uniform_open(rng).ln() + self.ln_height(t) <= -self.k * omega(self.alpha, t)
    }
}

/// Simple-form T_alpha(y): E exp(-s T) = exp(-y((1+s)^alpha - 1)).
fn sample_gg_simple<R: Rng + ?Sized>(rng: &mut R, alpha: f64, y: f64) -> f64 {
    let lambda = y.powf(1.0 / alpha);
    if y <= 1.0 {
        // tilt the stable scale-lambda variate; accepts with prob e^{-y} >= 1/e
        loop {
            let v = lambda * sample_positive_stable(rng, alpha);
            if uniform_open(rng) <= (-v).exp() {
                return v;
            }
        }
    }
    // double rejection over (U, t); see TEnvelope
    let beta = 1.0 - alpha;
    let b = beta / alpha;
    let c = (alpha * beta * y).sqrt();
    let sd = 1.0 / ((y - 0.5) * alpha * beta).sqrt();
    let ln_top = (1.0 + 4.0 * c).ln();
    loop {
        let u = (sd * rng.sample::<f64, _>(StandardNormal)).abs();
        if u >= PI || u == 0.0 {
            continue;
        }
        let ln_b = ln_zolotarev_b(alpha, u);
        let bu = ln_b.exp();
        let k = y * beta * bu;
        let env = TEnvelope::new(alpha, k);
        // q(u) = e^{-y(B-1)} K Z_env  vs  G(u) = (1+4c) exp(-(y-1/2) alpha beta u^2 / 2)
        let ln_q = -y * (bu - 1.0) + (k * env.mass()).ln();
        let ln_g = ln_top - (y - 0.5) * alpha * beta * u * u / 2.0;
        if uniform_open(rng).ln() > ln_q - ln_g {
            continue;
        }
        let t = env.sample(rng);
        if !env.accept(rng, t) {
            continue;
        }
        return k * t.powf(-b) / b;
    }
}

/// Tilted stable variate: E exp(-sT) = exp(-y((tilt + s)^alpha - tilt^alpha)).
pub fn sample_tilted_stable<R: Rng + ?Sized>(rng: &mut R, alpha: f64, y: f64, tilt: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("tilted stable needs alpha in (0,1), got {alpha}"));
    }
    if !(y > 0.0) || !y.is_finite() {
        return domain(format!("tilted stable needs y > 0, got {y}"));
    }
    if !(tilt >= 0.0) || !tilt.is_finite() {
        return domain(format!("tilt must be nonnegative, got {tilt}"));
    }
    if tilt == 0.0 {
        return Ok(y.powf(1.0 / alpha) * sample_positive_stable(rng, alpha));
    }
    Ok(sample_gg_simple(rng, alpha, y * tilt.powf(alpha)) / tilt)
}

/// Simple-form T_alpha(y) with tilt 1.
pub fn sample_t_alpha<R: Rng + ?Sized>(rng: &mut R, alpha: f64, y: f64) -> Result<f64> {
    sample_tilted_stable(rng, alpha, y, 1.0)
}

/// Multinomial(n; weights) by sequential conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, weights: &[f64]) -> Result<Vec<u64>> {
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return domain("multinomial weights must be nonnegative");
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return domain(format!("multinomial weights sum to {total}, expected 1"));
    }
    Ok(multinomial_unnormalized(rng, n, weights))
}

/// Multinomial with weights proportional to `weights` (no normalization check).
pub(crate) fn multinomial_unnormalized<R: Rng + ?Sized>(rng: &mut R, n: u64, weights: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; weights.len()];
    let mut left = n;
    let mut mass: f64 = weights.iter().sum();
    let last = weights.iter().rposition(|&w| w > 0.0);
    for (i, &w) in weights.iter().enumerate() {
        if left == 0 {
            break;
        }
        if Some(i) == last {
            out[i] = left;
            break;
        }
        if w <= 0.0 {
            continue;
        }
        let k = binomial(rng, left, (w / mass).min(1.0));
        out[i] = k;
        left -= k;
        mass -= w;
    }
    out
}

/// Dirichlet(concentrations) through log-gamma variates, normalized in log space.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, concentrations: &[f64]) -> Result<Vec<f64>> {
    if concentrations.is_empty() {
        return domain("Dirichlet needs at least one component");
    }
    if concentrations.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return domain("Dirichlet concentrations must be positive");
    }
    let lg: Vec<f64> = concentrations.iter().map(|&a| ln_gamma_variate(rng, a)).collect();
    let z = crate::special_fn::log_sum_exp(&lg);
    let mut w: Vec<f64> = lg.iter().map(|&v| (v - z).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_streams() {
        let mut a = RngHandle::new(11, 3);
        let mut b = RngHandle::new(11, 3);
        let mut c = RngHandle::new(11, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn mtp_first_mass() {
        let g = LevyParams::gamma(1.0, 1.0).unwrap();
        assert!((MtpSampler::new(&g, 1.0).unwrap().p1() - 0.5 / 2f64.ln()).abs() < 1e-12);
        let p = LevyParams::new(0.3, 1.0, 1.0).unwrap();
        let want = 2f64.powf(-0.7) / ((2f64.powf(0.3) - 1.0) / 0.3);
        assert!((MtpSampler::new(&p, 1.0).unwrap().p1() - want).abs() < 1e-12);
        assert!((mtp_ln_pmf(&p, 1.0, 1).exp() - want).abs() < 1e-12);
    }

    #[test]
    fn envelope_dominates() {
        for &alpha in &[0.05, 0.3, 0.5, 0.8, 0.97] {
            for &k in &[0.01, 0.5, 2.0, 30.0, 1e4] {
                let env = TEnvelope::new(alpha, k);
                assert!(k * env.mass() <= 1.0 + 4.0 * (alpha * k).sqrt() + 1e-9);
                for i in 1..4000 {
                    let t = i as f64 * 1e-3;
                    assert!(env.ln_height(t) >= -k * omega(alpha, t) - 1e-9, "alpha={alpha} k={k} t={t}");
                }
            }
        }
    }

    #[test]
    fn u_envelope_dominates() {
        for &alpha in &[0.05f64, 0.3, 0.5, 0.8, 0.97] {
            for &y in &[1.0001f64, 1.5, 4.0, 50.0, 1e5] {
                let beta: f64 = 1.0 - alpha;
                let c = (alpha * beta * y).sqrt();
                for i in 1..3141 {
                    let u = i as f64 * 1e-3;
                    let bu = ln_zolotarev_b(alpha, u).exp();
                    let k = y * beta * bu;
                    let ln_q = -y * (bu - 1.0) + (k * TEnvelope::new(alpha, k).mass()).ln();
                    let ln_g = (1.0 + 4.0 * c).ln() - (y - 0.5) * alpha * beta * u * u / 2.0;
                    assert!(ln_q <= ln_g + 1e-9, "alpha={alpha} y={y} u={u}");
                }
            }
        }
    }
}
