mod common;

use common::checks::within_sigma;
use phibp::inference::HyperParams;
use phibp::io::CountMatrix;
use phibp::posterior::*;
use phibp::rand_dist::{sample_tilted_stable, RngHandle};
use phibp::special_fn::{build_stirling_table, ln_block_weight, LevyParams};
use phibp::stats::total_variation;
use std::collections::HashMap;

#[test]
fn compositions_follow_block_weights() {
    let alpha = 0.4;
    let (n, x) = (6u64, 3u64);
    let table = build_stirling_table(alpha, 6).unwrap();
    let all = common::compositions(n, x);
    let w: Vec<f64> = all.iter().map(|c| c.iter().map(|&v| ln_block_weight(alpha, v)).sum::<f64>().exp()).collect();
    let z: f64 = w.iter().sum();
    let mut rng = RngHandle::new(1, 0);
    let mut freq: HashMap<Vec<u64>, usize> = HashMap::new();
    let draws = 100_000;
    for _ in 0..draws {
        *freq.entry(sample_composition(&mut rng, &table, n, x).unwrap()).or_default() += 1;
    }
    let emp: Vec<f64> = all.iter().map(|c| *freq.get(c).unwrap_or(&0) as f64 / draws as f64).collect();
    let exact: Vec<f64> = w.iter().map(|v| v / z).collect();
    assert_eq!(freq.len(), all.len());
    assert!(total_variation(&emp, &exact) < 0.01);
    assert!(sample_composition(&mut rng, &table, 2, 3).is_err());
}

#[test]
fn species_rate_has_gamma_mean() {
    let base = LevyParams::new(0.3, 2.0, 1.5).unwrap();
    let mut rng = RngHandle::new(2, 0);
    let v: Vec<f64> = (0..50_000).map(|_| sample_h(&mut rng, 4, &base, 2.5).unwrap()).collect();
    within_sigma(&v, 3.7 / 4.0, 3.0).unwrap();
    assert!(sample_h(&mut rng, 0, &base, 2.5).is_err());
}

/// X | counts, H = h against the generative conditional: x blocks ~
/// Poisson(h kappa_j), each with an MtP count.
#[test]
fn block_count_conditional_matches_generative() {
    for g in [LevyParams::new(0.5, 1.3, 1.0).unwrap(), LevyParams::gamma(0.7, 1.0).unwrap()] {
        let params = HyperParams { base: LevyParams::gamma(1.0, 1.0).unwrap(), groups: vec![g] };
        let (n, m, h) = (5u64, 2.0, 0.8);
        let kappa = g.psi(m);
        let mut exact: Vec<f64> = (0..=n)
            .map(|x| {
                let pois = (x as f64 * (h * kappa).ln() - phibp::special_fn::ln_factorial(x)).exp();
                pois * common::mtp_convolution(&g, m, x, n)[n as usize]
            })
            .collect();
        let z: f64 = exact.iter().sum();
        exact.iter_mut().for_each(|v| *v /= z);
        let tables = vec![build_stirling_table(g.alpha, n as usize).unwrap()];
        let mut rng = RngHandle::new(3, 0);
        let mut emp = vec![0.0; n as usize + 1];
        let draws = 100_000;
        for _ in 0..draws {
            let (xs, comps) = sample_latent_given_counts(&mut rng, &[n], &params, &[m], &tables, h).unwrap();
            assert_eq!(comps[0].iter().sum::<u64>(), n);
            emp[xs[0] as usize] += 1.0 / draws as f64;
        }
        let tv = total_variation(&emp, &exact);
        assert!(tv < 0.01, "{g:?}: TV {tv}");
    }
}

#[test]
fn gamma_direct_and_assembled_agree() {
    common::checks::gamma_split_equivalence().unwrap();
}

#[test]
fn gamma_total_has_posterior_mean() {
    let g = LevyParams::gamma(1.7, 1.0).unwrap();
    let mut rng = RngHandle::new(4, 0);
    let (h, m) = (0.6, 3.0);
    let comps = [2u64, 5];
    let v: Vec<f64> = (0..50_000).map(|_| sample_abundance(&mut rng, 7, &comps, h, &g, m).unwrap().sigma_tilde).collect();
    within_sigma(&v, (1.7 * h + 7.0) / 4.0, 3.0).unwrap();
}

#[test]
fn gg_unseen_part_has_tilted_laplace_transform() {
    let g = LevyParams::new(0.6, 1.4, 1.0).unwrap();
    let (h, m) = (0.9, 2.0);
    let rate = g.zeta + m;
    let mut rng = RngHandle::new(5, 0);
    let d: Vec<AbundanceEntry> = (0..50_000).map(|_| sample_abundance(&mut rng, 3, &[3], h, &g, m).unwrap()).collect();
    for s in [0.5, 2.0] {
        let v: Vec<f64> = d.iter().map(|e| (-s * e.sigma_hat).exp()).collect();
        let exact = (-h * g.theta / g.alpha * ((rate + s).powf(g.alpha) - rate.powf(g.alpha))).exp();
        within_sigma(&v, exact, 3.0).unwrap();
    }
    // block rates are Gamma(c - alpha, zeta + M)
    let v: Vec<f64> = d.iter().map(|e| e.otu_rates[0]).collect();
    within_sigma(&v, (3.0 - g.alpha) / rate, 3.0).unwrap();
    // sanity: the sampler used above agrees with the direct tilted stable draw
    let t: Vec<f64> = (0..50_000).map(|_| sample_tilted_stable(&mut rng, g.alpha, g.theta / g.alpha * h, rate).unwrap()).collect();
    let mean_hat = d.iter().map(|e| e.sigma_hat).sum::<f64>() / d.len() as f64;
    within_sigma(&t, mean_hat, 4.0).unwrap();
}

#[test]
fn unseen_base_mass_matches_first_moment() {
    for base in [LevyParams::new(0.5, 2.0, 1.0).unwrap(), LevyParams::gamma(2.0, 1.0).unwrap()] {
        let params = HyperParams { base, groups: vec![LevyParams::gamma(1.0, 1.0).unwrap()] };
        let samples = [3.0];
        let c = base.zeta + params.kappas(&samples)[0];
        let mut rng = RngHandle::new(6, 0);
        let v: Vec<f64> = (0..5_000)
            .map(|_| sample_unseen_base(&mut rng, &params, &samples, 400).unwrap().iter().map(|a| a.lambda).sum())
            .collect();
        // ∫ lambda e^{-c lambda} tau_0 = theta_0 c^{alpha_0 - 1}
        within_sigma(&v, base.theta * c.powf(base.alpha - 1.0), 3.0).unwrap();
        assert!(sample_unseen_base(&mut rng, &params, &samples, 0).unwrap().is_empty());
    }
}

#[test]
fn posterior_draw_is_consistent() {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let counts = CountMatrix::new(s(&["g1", "g2"]), s(&["a", "b", "c"]), vec![vec![5, 0, 2], vec![1, 3, 9]], vec![2.0, 1.0]).unwrap();
    for params in [
        HyperParams {
            base: LevyParams::new(0.4, 2.0, 1.0).unwrap(),
            groups: vec![LevyParams::new(0.3, 1.5, 1.0).unwrap(), LevyParams::new(0.6, 0.8, 1.0).unwrap()],
        },
        HyperParams {
            base: LevyParams::gamma(2.0, 1.0).unwrap(),
            groups: vec![LevyParams::gamma(1.5, 1.0).unwrap(), LevyParams::gamma(1e-3, 1.0).unwrap()],
        },
    ] {
        let x = vec![vec![2, 0, 1], vec![1, 2, 3]];
        let rng = RngHandle::new(7, 0);
        let a = sample_posterior_abundance(&rng, &counts, &params, &x, 3).unwrap();
        a.check(&counts).unwrap();
        let b = sample_posterior_abundance(&rng, &counts, &params, &x, 3).unwrap();
        assert_eq!(a, b);
        let zero = sample_posterior_abundance(&rng, &counts, &params, &x, 0).unwrap();
        for j in 0..2 {
            for l in 0..3 {
                assert_eq!(zero.blocks(j, l), x[j][l] as u64);
            }
        }
    }
    let mut empty = counts.clone();
    empty.values[0][1] = 0;
    empty.values[1][1] = 0;
    let params = HyperParams { base: LevyParams::gamma(1.0, 1.0).unwrap(), groups: vec![LevyParams::gamma(1.0, 1.0).unwrap(); 2] };
    let x = vec![vec![1, 0, 1], vec![1, 0, 1]];
    assert!(sample_posterior_abundance(&RngHandle::new(1, 0), &empty, &params, &x, 1).is_err());
}
