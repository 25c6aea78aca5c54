//! Brute-force oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use phibp::inference::HyperParams;
use phibp::io::CountMatrix;
use phibp::rand_dist::mtp_ln_pmf;
use phibp::special_fn::{ln_gamma, LevyParams};

/// All ordered compositions of n into k positive parts.
pub fn compositions(n: u64, k: u64) -> Vec<Vec<u64>> {
    if k == 0 {
        return if n == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for c in 1..=n.saturating_sub(k - 1) {
        for mut rest in compositions(n - c, k - 1) {
            rest.insert(0, c);
            out.push(rest);
        }
    }
    out
}

/// Generalized Stirling number by summing over ordered compositions:
/// S(n,k) = n!/k! Σ Π (1-α)_{c-1}/c!.
pub fn brute_stirling(alpha: f64, n: u64, k: u64) -> f64 {
    let mut s = 0.0;
    for c in compositions(n, k) {
        let mut p = 1.0;
        for &ci in &c {
            let mut rising = 1.0;
            for i in 0..ci - 1 {
                rising *= i as f64 + 1.0 - alpha;
            }
            p *= rising / factorial(ci);
        }
        s += p;
    }
    s * factorial(n) / factorial(k)
}

pub fn factorial(n: u64) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// pmf of the sum of `p` iid MtP variables, values 0..=max.
pub fn mtp_convolution(levy: &LevyParams, weight: f64, p: u64, max: u64) -> Vec<f64> {
    let single: Vec<f64> = (0..=max)
        .map(|c| if c == 0 { 0.0 } else { mtp_ln_pmf(levy, weight, c).exp() })
        .collect();
    let mut acc = vec![0.0; max as usize + 1];
    acc[0] = 1.0;
    for _ in 0..p {
        acc = convolve(&acc, &single, max);
    }
    acc
}

pub fn convolve(a: &[f64], b: &[f64], max: u64) -> Vec<f64> {
    let mut out = vec![0.0; max as usize + 1];
    for (i, &x) in a.iter().enumerate() {
        for (k, &y) in b.iter().enumerate() {
            if i + k <= max as usize {
                out[i + k] += x * y;
            }
        }
    }
    out
}

/// Poisson–gamma mixture pmf of counts on one OTU whose rate is Gamma(shape, rate).
pub fn nb_pmf(shape: f64, rate: f64, m: f64, max: u64) -> Vec<f64> {
    (0..=max)
        .map(|t| {
            (ln_gamma(t as f64 + shape) - ln_gamma(t as f64 + 1.0) - ln_gamma(shape)
                + shape * (rate / (rate + m)).ln()
                + t as f64 * (m / (rate + m)).ln())
            .exp()
        })
        .collect()
}

/// All vectors v with 0 ≤ v_j ≤ bound_j.
pub fn grid(bounds: &[u64]) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for &b in bounds {
        let mut next = Vec::new();
        for v in &out {
            for x in 0..=b {
                let mut w = v.clone();
                w.push(x);
                next.push(w);
            }
        }
        out = next;
    }
    out
}

/// Test-set likelihood by enumeration of every latent configuration under the
/// generative description of the next batch: compound-Poisson new blocks with
/// MtP counts and Poisson–gamma extra counts on observed OTUs for seen
/// species; a Poisson number of new species, each with an MtP block total,
/// a multinomial split over groups and MtP counts per block. The species rate
/// integral is done with exact gamma moments.
/// Returns (existing, novel) log-likelihoods.
pub fn enumerate_predictive(train: &CountMatrix, test: &CountMatrix, params: &HyperParams, x: &[Vec<u32>]) -> (f64, f64) {
    let jn = train.n_groups();
    let big: Vec<f64> = train.samples.clone();
    let m: Vec<f64> = test.samples.clone();
    let tilted: Vec<LevyParams> = params.groups.iter().zip(&big).map(|(g, &mm)| g.tilted(mm)).collect();
    let kstar: Vec<f64> = tilted.iter().zip(&m).map(|(t, &w)| t.psi(w)).collect();
    let kstar_dot: f64 = kstar.iter().sum();
    let kappa_dot: f64 = params.groups.iter().zip(&big).map(|(g, &mm)| g.psi(mm)).sum();
    let base = params.base;
    let idx = test.species_index();

    let mut existing = 0.0;
    let mut seen = std::collections::HashSet::new();
    for l in 0..train.n_species() {
        if train.species_total(l) == 0 {
            continue;
        }
        let tv = idx.get(train.species[l].as_str()).copied();
        if let Some(v) = tv {
            seen.insert(v);
        }
        let n4: Vec<u64> = (0..jn).map(|j| tv.map(|v| test.values[j][v]).unwrap_or(0)).collect();
        let xl: u64 = (0..jn).map(|j| x[j][l] as u64).sum();
        let a = xl as f64 - base.alpha;
        let b = base.zeta + kappa_dot;
        // A_j(p): probability of the test count given p new blocks
        let amat: Vec<Vec<f64>> = (0..jn)
            .map(|j| {
                let n = train.values[j][l];
                let xj = x[j][l] as u64;
                let g = params.groups[j];
                let mut old = vec![0.0; n4[j] as usize + 1];
                old[0] = 1.0;
                if xj > 0 {
                    let mut comp = vec![1u64; xj as usize];
                    comp[0] = n - xj + 1;
                    for c in comp {
                        old = convolve(&old, &nb_pmf(c as f64 - g.alpha, tilted[j].zeta, m[j], n4[j]), n4[j]);
                    }
                }
                (0..=n4[j])
                    .map(|p| {
                        let new = mtp_convolution(&tilted[j], m[j], p, n4[j]);
                        (0..=n4[j] as usize).map(|n2| new[n2] * old[n4[j] as usize - n2]).sum()
                    })
                    .collect()
            })
            .collect();
        let mut total = 0.0;
        for p in grid(&n4) {
            let s: u64 = p.iter().sum();
            let mut w = 1.0;
            for j in 0..jn {
                w *= kstar[j].powi(p[j] as i32) / factorial(p[j]) * amat[j][p[j] as usize];
            }
            let moment = (a * b.ln() + ln_gamma(a + s as f64) - ln_gamma(a) - (a + s as f64) * (b + kstar_dot).ln()).exp();
            total += w * moment;
        }
        existing += total.ln();
    }

    let novel: Vec<usize> = (0..test.n_species()).filter(|v| !seen.contains(v) && test.species_total(*v) > 0).collect();
    let tb = base.tilted(kappa_dot);
    let lam0 = tb.psi(kstar_dot);
    let mut nv = -lam0 + novel.len() as f64 * lam0.ln() - ln_gamma(novel.len() as f64 + 1.0);
    for &v in &novel {
        let n: Vec<u64> = (0..jn).map(|j| test.values[j][v]).collect();
        let mut p = 0.0;
        for xv in grid(&n) {
            if (0..jn).any(|j| (xv[j] == 0) != (n[j] == 0)) {
                continue;
            }
            let xt: u64 = xv.iter().sum();
            let mut w = mtp_ln_pmf(&tb, kstar_dot, xt).exp() * factorial(xt);
            for j in 0..jn {
                w *= (kstar[j] / kstar_dot).powi(xv[j] as i32) / factorial(xv[j]);
                w *= mtp_convolution(&tilted[j], m[j], xv[j], n[j])[n[j] as usize];
            }
            p += w;
        }
        nv += p.ln();
    }
    (existing, nv)
}

/// ∫ f(s) τ(s) ds for the Lévy density τ(s) = θ/Γ(1-α) s^{-1-α} e^{-ζ s},
/// by the trapezoid rule in u = ln s. `f` receives (s, ln s) and returns
/// ln f(s) so tiny factors survive.
pub fn levy_quad(p: &LevyParams, ln_f: impl Fn(f64, f64) -> f64) -> f64 {
    let (a, z) = (p.alpha, p.zeta);
    let lo = -40.0 / (1.0 - a).max(0.05) - 40.0;
    let hi = (60.0 / z).ln();
    let h = 2e-3;
    let n = ((hi - lo) / h).ceil() as usize;
    let c = p.theta.ln() - ln_gamma(1.0 - a);
    let mut sum = 0.0;
    for i in 0..=n {
        let u = lo + i as f64 * h;
        let s = u.exp();
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        // s τ(s) ds/du
        let v = c - a * u - z * s + ln_f(s, u);
        sum += w * v.exp();
    }
    sum * h
}

/// psi(t) by quadrature.
pub fn quad_psi(p: &LevyParams, t: f64) -> f64 {
    levy_quad(p, |s, _| (-(-t * s).exp_m1()).ln())
}

/// psi^{(c)}(t) = ∫ s^c e^{-ts} τ(s) ds by quadrature.
pub fn quad_moment(p: &LevyParams, c: u64, t: f64) -> f64 {
    levy_quad(p, |s, u| c as f64 * u - t * s)
}
pub mod checks;
