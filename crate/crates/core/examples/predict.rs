//! Predicting a further batch: new species, counts on seen species, and the
//! test-set log-likelihood on a binomial split.
//!
//! Run with `cargo run --release --example predict`.

use phibp::inference::{expand_latent, run_chains, ChainConfig};
use phibp::io::binomial_split;
use phibp::model::{simulate_dataset, ModelParams};
use phibp::posterior::sample_posterior_abundance;
use phibp::predict::{predictive_loglik_records, sample_predictive, Quadrature};
use phibp::rand_dist::RngHandle;
use phibp::special_fn::LevyParams;

fn main() -> anyhow::Result<()> {
    let base = LevyParams::new(0.7, 5.0, 1.0)?;
    let g = LevyParams::new(0.5, 1.5, 1.0)?;
    let params = ModelParams::with_unit_samples(base, vec![g, g], &[50, 50])?;
    let ds = simulate_dataset(&mut RngHandle::new(11, 0), &params)?;
    let (mut train, test) = binomial_split(&mut RngHandle::new(12, 0), &ds.counts, &[40, 40], &[10, 10])?;
    train.drop_empty_species();

    let config = ChainConfig { chains: 2, steps: 2_000, burn_in: 1_000, thin: 20, ..ChainConfig::default() };
    let set = run_chains(&train, &config)?;
    let records: Vec<_> = set.records().collect();
    let ll = predictive_loglik_records(&train, &test, &records, Quadrature::default())?;
    let mean = ll.iter().map(|v| v.total()).sum::<f64>() / ll.len() as f64;
    println!("mean test log-likelihood over {} records: {mean:.2}", ll.len());

    let r = records.last().unwrap();
    let x = expand_latent(&train, r.x.as_ref().unwrap());
    let stream = RngHandle::new(13, 0);
    let draw = sample_posterior_abundance(&stream, &train, &r.params, &x, 1)?;
    let pred = sample_predictive(&mut stream.substream(1), &draw, &r.params, &train.samples, &test.samples)?;
    pred.check()?;
    for j in 0..2 {
        let seen: u64 = (0..train.n_species()).map(|l| pred.existing_count(j, l)).sum();
        let novel: u64 = pred.new_species.iter().map(|s| s.counts[j]).sum();
        println!(
            "{}: predicted {seen} reads on seen species and {novel} on new ones (test has {})",
            train.groups[j],
            test.group_total(j)
        );
    }
    println!("{} species new to the training set in this draw", pred.new_species.len());
    Ok(())
}
