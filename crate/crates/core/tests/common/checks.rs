//! Criterion checks shared by the module tests and the acceptance run. Each
//! returns a one-line detail on success and a description of the first
//! violation on failure.

use super::*;
use phibp::diversity::{bray_curtis_rates, shannon_alpha};
use phibp::inference::{data_log_constant, gibbs_weights, log_joint, log_likelihood, LatentState, PriorKind};
use phibp::model::{simulate_dataset, ModelParams};
use phibp::posterior::{sample_abundance, sample_abundance_assembled, sample_abundance_given_latent, AbundanceEntry, PosteriorAbundanceDraw};
use phibp::predict::{predictive_loglik, sample_predictive, shannon_entropy, Quadrature};
use phibp::rand_dist::*;
use phibp::special_fn::{build_stirling_table, laplace_exponent, laplace_moment};
use phibp::stats::{empirical_pmf, ks_two_sample, mean_se, total_variation};
use rand::{Rng, SeedableRng};

pub type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// |mean - expected| within k standard errors.
pub fn within_sigma(draws: &[f64], expected: f64, k: f64) -> std::result::Result<(), String> {
    let (m, se) = mean_se(draws);
    ensure((m - expected).abs() <= k * se.max(1e-300), || format!("mean {m} vs {expected} (se {se})"))
}

pub fn stirling_oracle() -> Check {
    let mut worst = 0.0f64;
    for &alpha in &[0.0, 0.3, 0.5, 0.9] {
        let t = build_stirling_table(alpha, 8).map_err(|e| e.to_string())?;
        for n in 1..=8u64 {
            for k in 1..=n {
                let brute = brute_stirling(alpha, n, k);
                let rel = ((t.ln_s(n as usize, k as usize).exp() - brute) / brute).abs();
                worst = worst.max(rel);
            }
        }
    }
    ensure(worst < 1e-10, || format!("max rel err {worst:.3e}"))?;
    Ok(format!("max rel err {worst:.2e}"))
}

pub fn laplace_quadrature() -> Check {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let alpha = if i % 4 == 0 { 0.0 } else { rng.random_range(0.01..0.95) };
        let p = LevyParams::new(alpha, rng.random_range(0.1..8.0), rng.random_range(0.2..4.0)).unwrap();
        let t = rng.random_range(0.01..100.0);
        let c = rng.random_range(1..8u64);
        let a = laplace_exponent(&p, t).map_err(|e| e.to_string())?;
        let b = laplace_moment(&p, c, t).map_err(|e| e.to_string())?;
        worst = worst.max(((a - quad_psi(&p, t)) / a).abs());
        worst = worst.max(((b - quad_moment(&p, c, t)) / b).abs());
    }
    ensure(worst < 1e-6, || format!("max rel err {worst:.3e}"))?;
    Ok(format!("200 values, max rel err {worst:.2e}"))
}

/// MtP pmf from quadrature of the Lévy moments.
fn mtp_oracle(p: &LevyParams, gamma: f64, max: u64) -> Vec<f64> {
    let psi = quad_psi(p, gamma);
    (0..=max)
        .map(|c| {
            if c == 0 {
                0.0
            } else {
                (c as f64 * gamma.ln() - ln_gamma(c as f64 + 1.0)).exp() * quad_moment(p, c, gamma) / psi
            }
        })
        .collect()
}

pub fn sampler_exactness() -> Check {
    let mut rng = RngHandle::new(77, 0);
    let n = 100_000;
    let mut notes = Vec::new();
    // zero-truncated Poisson
    for &s in &[0.3, 2.5] {
        let d: Vec<u64> = (0..n).map(|_| sample_zt_poisson(&mut rng, s).unwrap()).collect();
        let oracle: Vec<f64> = (0..40u64)
            .map(|k| if k == 0 { 0.0 } else { (k as f64 * (s as f64).ln() - ln_gamma(k as f64 + 1.0)).exp() / s.exp_m1() })
            .collect();
        let tv = total_variation(&empirical_pmf(&d, 40), &oracle);
        ensure(tv < 0.01, || format!("zt-Poisson({s}) TV {tv}"))?;
        notes.push(format!("ztp {tv:.4}"));
    }
    // MtP, gamma and GG
    for (p, g) in [
        (LevyParams::gamma(1.5, 1.0).unwrap(), 5.0),
        (LevyParams::new(0.5, 2.0, 1.0).unwrap(), 20.0),
        (LevyParams::new(0.3, 1.0, 2.0).unwrap(), 3.0),
    ] {
        let max = 120u64;
        let oracle = mtp_oracle(&p, g, max);
        let mut s = MtpSampler::new(&p, g).unwrap();
        let d: Vec<u64> = (0..n).map(|_| s.sample(&mut rng)).collect();
        let mut emp = empirical_pmf(&d, max as usize + 1);
        let tail_emp = d.iter().filter(|&&v| v > max).count() as f64 / n as f64;
        let tail_or = 1.0 - oracle.iter().sum::<f64>();
        emp.push(tail_emp);
        let mut or = oracle.clone();
        or.push(tail_or.max(0.0));
        let tv = total_variation(&emp, &or);
        ensure(tv < 0.01, || format!("MtP({p:?}, {g}) TV {tv}"))?;
        notes.push(format!("mtp {tv:.4}"));
    }
    // multinomial over every outcome
    let w = [0.2, 0.5, 0.3];
    let trials = 6u64;
    let mut freq = std::collections::HashMap::new();
    for _ in 0..n {
        let v = sample_multinomial(&mut rng, trials, &w).unwrap();
        *freq.entry(v).or_insert(0usize) += 1;
    }
    let mut tv = 0.0;
    for a in 0..=trials {
        for b in 0..=trials - a {
            let c = trials - a - b;
            let pr = factorial(trials) / (factorial(a) * factorial(b) * factorial(c))
                * w[0].powi(a as i32)
                * w[1].powi(b as i32)
                * w[2].powi(c as i32);
            let e = *freq.get(&vec![a, b, c]).unwrap_or(&0) as f64 / n as f64;
            tv += 0.5 * (pr - e).abs();
        }
    }
    ensure(tv < 0.01, || format!("multinomial TV {tv}"))?;
    notes.push(format!("mult {tv:.4}"));
    // Dirichlet moments
    let conc = [0.5, 2.0, 3.5];
    let a0: f64 = conc.iter().sum();
    let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_dirichlet(&mut rng, &conc).unwrap()).collect();
    for (k, &a) in conc.iter().enumerate() {
        let v: Vec<f64> = draws.iter().map(|d| d[k]).collect();
        within_sigma(&v, a / a0, 3.0).map_err(|e| format!("Dirichlet mean {k}: {e}"))?;
        let m2: Vec<f64> = v.iter().map(|x| x * x).collect();
        within_sigma(&m2, a * (a + 1.0) / (a0 * (a0 + 1.0)), 3.0).map_err(|e| format!("Dirichlet 2nd moment {k}: {e}"))?;
    }
    notes.push("dir ok".into());
    // tilted stable Laplace transforms
    for &(alpha, y, tilt) in &[(0.3, 0.5, 1.0), (0.7, 5.0, 1.0), (0.5, 50.0, 2.0), (0.5, 2.0, 0.0), (0.9, 0.2, 3.0)] {
        let d: Vec<f64> = (0..n).map(|_| sample_tilted_stable(&mut rng, alpha, y, tilt).unwrap()).collect();
        for &s in &[0.5, 1.0, 2.0] {
            let v: Vec<f64> = d.iter().map(|t| (-s * t).exp()).collect();
            let f: f64 = alpha;
            let exact = (-y * ((tilt + s).powf(f) - tilt.powf(f))).exp();
            within_sigma(&v, exact, 3.0).map_err(|e| format!("tilted stable ({alpha},{y},{tilt}) s={s}: {e}"))?;
        }
    }
    notes.push("tilted stable ok".into());
    Ok(notes.join(", "))
}

fn tiny_counts() -> CountMatrix {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    CountMatrix::new(s(&["g1", "g2"]), s(&["a", "b"]), vec![vec![2, 0], vec![3, 1]], vec![2.0, 3.0]).unwrap()
}

/// P(counts) by enumeration under the generative description: Poisson number
/// of species, MtP block totals split multinomially, MtP counts per block.
pub fn generative_marginal(counts: &CountMatrix, params: &HyperParams) -> f64 {
    let jn = counts.n_groups();
    let kappa: Vec<f64> = params.kappas(&counts.samples);
    let kd: f64 = kappa.iter().sum();
    let r = counts.n_species();
    let psi0 = params.base.psi(kd);
    let mut p = (-psi0 + r as f64 * psi0.ln() - ln_gamma(r as f64 + 1.0)).exp() / psi0.powi(r as i32);
    for l in 0..r {
        let n = counts.column(l);
        let mut s = 0.0;
        for xv in grid(&n) {
            if (0..jn).any(|j| (xv[j] == 0) != (n[j] == 0)) {
                continue;
            }
            let xt: u64 = xv.iter().sum();
            // Poisson-process intensity of a species with xt blocks
            let mut w = psi0 * mtp_ln_pmf(&params.base, kd, xt).exp() * factorial(xt);
            for j in 0..jn {
                w *= (kappa[j] / kd).powi(xv[j] as i32) / factorial(xv[j]);
                w *= mtp_convolution(&params.groups[j], counts.samples[j], xv[j], n[j])[n[j] as usize];
            }
            s += w;
        }
        p *= s;
    }
    p
}

pub fn joint_coherence() -> Check {
    let counts = tiny_counts();
    let mut notes = Vec::new();
    for (kind, params) in [
        (
            PriorKind::Gg,
            HyperParams {
                base: LevyParams::new(0.6, 2.5, 1.0).unwrap(),
                groups: vec![LevyParams::new(0.3, 1.2, 1.0).unwrap(), LevyParams::new(0.7, 0.6, 1.0).unwrap()],
            },
        ),
        (
            PriorKind::Gamma,
            HyperParams {
                base: LevyParams::gamma(2.5, 1.0).unwrap(),
                groups: vec![LevyParams::gamma(1.2, 1.0).unwrap(), LevyParams::gamma(0.6, 1.0).unwrap()],
            },
        ),
    ] {
        let mut total = 0.0;
        let ranges: Vec<(usize, usize, u64)> = (0..2)
            .flat_map(|j| (0..2).map(move |l| (j, l)))
            .map(|(j, l)| (j, l, counts.values[j][l]))
            .filter(|c| c.2 > 0)
            .collect();
        let bounds: Vec<u64> = ranges.iter().map(|c| c.2 - 1).collect();
        for off in grid(&bounds) {
            let mut x = vec![vec![0u32; 2]; 2];
            for (c, &o) in ranges.iter().zip(&off) {
                x[c.0][c.1] = (o + 1) as u32;
            }
            let st = LatentState::new(&counts, kind, params.clone(), x).map_err(|e| e.to_string())?;
            total += (log_likelihood(&counts, &st) + data_log_constant(&counts)).exp();
        }
        let oracle = generative_marginal(&counts, &params);
        let rel = ((total - oracle) / oracle).abs();
        ensure(rel < 1e-8, || format!("{kind:?}: Σ exp(log_joint) {total} vs marginal {oracle}"))?;
        // Gibbs weights against log_joint differences
        let mut st = LatentState::minimal(&counts, kind, params.clone()).map_err(|e| e.to_string())?;
        let w = gibbs_weights(&counts, &st, 1, 0);
        let mut lj = Vec::new();
        for x in 1..=3u32 {
            st.x[1][0] = x;
            st.refresh_caches(&counts);
            lj.push(log_joint(&counts, &st));
        }
        for k in 1..3 {
            let d = (w[k] - w[0]) - (lj[k] - lj[0]);
            ensure(d.abs() < 1e-10, || format!("{kind:?}: Gibbs weight {k} off by {d}"))?;
        }
        notes.push(format!("{kind:?} rel err {rel:.1e}"));
    }
    Ok(notes.join(", "))
}

/// Route A: simulate M and m together. Route B: simulate M, draw the exact
/// posterior given the latent structure, then predict m. Compares, per
/// group, the number of species present in the new sample and its total.
pub fn prediction_chain_rule(replicates: usize) -> Check {
    let base = LevyParams::new(0.5, 3.0, 1.0).unwrap();
    let groups = vec![LevyParams::new(0.4, 1.0, 1.0).unwrap(), LevyParams::new(0.6, 1.5, 1.0).unwrap()];
    let big = [5.0, 3.0];
    let small = [2.0, 4.0];
    let a_params = ModelParams::new(base, groups.clone(), vec![vec![big[0], small[0]], vec![big[1], small[1]]]).unwrap();
    let b_params = ModelParams::new(base, groups.clone(), vec![vec![big[0]], vec![big[1]]]).unwrap();
    let hyper = HyperParams { base, groups };
    let mut stats_a = vec![(Vec::new(), Vec::new()); 2];
    let mut stats_b = vec![(Vec::new(), Vec::new()); 2];
    for rep in 0..replicates {
        let mut ra = RngHandle::new(1000 + rep as u64, 0);
        let ds = simulate_dataset(&mut ra, &a_params).map_err(|e| e.to_string())?;
        for j in 0..2 {
            let new: Vec<u64> = ds.per_sample[j].iter().map(|v| v[1]).collect();
            stats_a[j].0.push(new.iter().filter(|&&v| v > 0).count() as f64);
            stats_a[j].1.push(new.iter().sum::<u64>() as f64);
        }
        let mut rb = RngHandle::new(5000 + rep as u64, 0);
        let ds = simulate_dataset(&mut rb, &b_params).map_err(|e| e.to_string())?;
        let mut rr = rb.substream(77);
        let draw = sample_abundance_given_latent(&mut rr, &ds.counts, &hyper, &ds.otu_counts).map_err(|e| e.to_string())?;
        let p = sample_predictive(&mut rr, &draw, &hyper, &ds.counts.samples, &small).map_err(|e| e.to_string())?;
        for j in 0..2 {
            let mut present = 0usize;
            let mut total = 0u64;
            for l in 0..ds.counts.n_species() {
                let c = p.existing_count(j, l);
                present += (c > 0) as usize;
                total += c;
            }
            for s in &p.new_species {
                present += (s.counts[j] > 0) as usize;
                total += s.counts[j];
            }
            stats_b[j].0.push(present as f64);
            stats_b[j].1.push(total as f64);
        }
    }
    let mut notes = Vec::new();
    for j in 0..2 {
        let (_, p1) = ks_two_sample(&stats_a[j].0, &stats_b[j].0).map_err(|e| e.to_string())?;
        let (_, p2) = ks_two_sample(&stats_a[j].1, &stats_b[j].1).map_err(|e| e.to_string())?;
        ensure(p1 > 0.01 && p2 > 0.01, || format!("group {j}: species p={p1:.4}, total p={p2:.4}"))?;
        notes.push(format!("g{} p=({p1:.3},{p2:.3})", j + 1));
    }
    Ok(notes.join(", "))
}

pub fn tiny_predictive_instance(gg: bool) -> (CountMatrix, CountMatrix, HyperParams, Vec<Vec<u32>>) {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let train = CountMatrix::new(s(&["g1", "g2"]), s(&["a", "b"]), vec![vec![2, 0], vec![1, 1]], vec![2.0, 1.0]).unwrap();
    let test = CountMatrix::new(s(&["g1", "g2"]), s(&["b", "a", "c", "d"]), vec![vec![2, 1, 1, 0], vec![0, 2, 1, 3]], vec![1.0, 2.0])
        .unwrap();
    let params = if gg {
        HyperParams {
            base: LevyParams::new(0.4, 2.0, 1.0).unwrap(),
            groups: vec![LevyParams::new(0.3, 1.5, 1.0).unwrap(), LevyParams::new(0.6, 0.8, 1.0).unwrap()],
        }
    } else {
        HyperParams {
            base: LevyParams::gamma(2.0, 1.0).unwrap(),
            groups: vec![LevyParams::gamma(1.5, 1.0).unwrap(), LevyParams::gamma(0.8, 1.0).unwrap()],
        }
    };
    (train, test, params, vec![vec![2, 0], vec![1, 1]])
}

pub fn predictive_oracle() -> Check {
    let mut worst = 0.0f64;
    let mut worst_doubling = 0.0f64;
    for gg in [true, false] {
        let (train, test, params, x) = tiny_predictive_instance(gg);
        let (ex, nv) = enumerate_predictive(&train, &test, &params, &x);
        let q64 = predictive_loglik(&train, &test, &params, &x, Quadrature::GaussLaguerre(64)).map_err(|e| e.to_string())?;
        let q128 = predictive_loglik(&train, &test, &params, &x, Quadrature::GaussLaguerre(128)).map_err(|e| e.to_string())?;
        let oracle = ex + nv;
        worst = worst.max(((q64.total() - oracle) / oracle).abs());
        worst_doubling = worst_doubling.max((q64.total() - q128.total()).abs());
    }
    ensure(worst < 1e-4, || format!("rel err {worst:.3e}"))?;
    ensure(worst_doubling < 1e-6, || format!("node doubling changes result by {worst_doubling:.3e}"))?;
    Ok(format!("rel err {worst:.2e}, doubling {worst_doubling:.2e}"))
}

/// Gamma case: the total drawn directly against the sum of independent parts.
pub fn gamma_split_equivalence() -> Check {
    let configs: [(f64, f64, Vec<u64>, f64); 5] = [
        (1.0, 0.5, vec![3], 2.0),
        (2.5, 0.05, vec![1, 1, 4], 11.0),
        (0.3, 1.7, vec![10, 2], 101.0),
        (5.0, 0.01, vec![], 4.0),
        (0.8, 3.0, vec![1, 1, 1, 1, 1, 7], 31.0),
    ];
    let mut notes = Vec::new();
    for (i, (theta, h, comps, m)) in configs.iter().enumerate() {
        let mut rng = RngHandle::new(10, i as u64);
        let g = LevyParams::gamma(*theta, 1.0).unwrap();
        let n: u64 = comps.iter().sum();
        let a: Vec<f64> = (0..10_000).map(|_| sample_abundance(&mut rng, n, comps, *h, &g, *m).unwrap().sigma_tilde).collect();
        let b: Vec<f64> = (0..10_000).map(|_| sample_abundance_assembled(&mut rng, comps, *h, &g, *m).unwrap().sigma_tilde).collect();
        let (_, p) = ks_two_sample(&a, &b).map_err(|e| e.to_string())?;
        ensure(p > 0.01, || format!("config {i}: KS p = {p}"))?;
        notes.push(format!("{p:.3}"));
    }
    Ok(format!("KS p-values {}", notes.join(", ")))
}

/// Gamma case alpha diversity against direct Dirichlet entropy draws, and
/// the Bray–Curtis identities.
pub fn diversity_identities() -> Check {
    let mut rng = RngHandle::new(9, 0);
    let g = LevyParams::gamma(1.3, 1.0).unwrap();
    let h = [0.4, 1.2, 0.05, 2.0, 0.7];
    let n = [3u64, 0, 1, 12, 5];
    let m = 20.0;
    let draws = 20_000;
    let mut ent = Vec::with_capacity(draws);
    let mut oracle = Vec::with_capacity(draws);
    let conc: Vec<f64> = h.iter().zip(&n).map(|(&h, &n)| g.theta * h + n as f64).collect();
    for _ in 0..draws {
        let entries: Vec<AbundanceEntry> = (0..h.len())
            .map(|l| {
                let comps: Vec<u64> = if n[l] == 0 { vec![] } else { vec![n[l]] };
                sample_abundance(&mut rng, n[l], &comps, h[l], &g, m).unwrap()
            })
            .collect();
        let d = PosteriorAbundanceDraw { h: h.to_vec(), entries: vec![entries] };
        ent.push(shannon_alpha(&d, 0));
        oracle.push(shannon_entropy(&sample_dirichlet(&mut rng, &conc).unwrap()).unwrap());
    }
    let (ma, sa) = mean_se(&ent);
    let (mb, sb) = mean_se(&oracle);
    let z = (ma - mb) / (sa * sa + sb * sb).sqrt();
    ensure(z.abs() < 3.0, || format!("alpha diversity mean {ma} vs Dirichlet {mb}, z = {z:.2}"))?;
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let a: Vec<f64> = (0..8).map(|_| r.random_range(0.0..3.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| r.random_range(0.0..3.0)).collect();
        let d = bray_curtis_rates(&a, &b);
        ensure((0.0..=1.0).contains(&d), || format!("beta {d} outside [0,1]"))?;
        ensure(d == bray_curtis_rates(&b, &a), || "beta not symmetric".into())?;
        ensure(bray_curtis_rates(&a, &a) == 0.0, || "beta of identical vectors not zero".into())?;
    }
    Ok(format!("entropy z = {z:.2}; beta symmetric, bounded, zero on identity"))
}
