//! Exact forward simulation of a grouped count matrix.
//!
//! Run with `cargo run --release --example simulate`.

use phibp::diversity::fof;
use phibp::model::{expected_phi, simulate_dataset, ModelParams};
use phibp::rand_dist::RngHandle;
use phibp::special_fn::LevyParams;

fn main() -> anyhow::Result<()> {
    let base = LevyParams::new(0.7, 5.0, 1.0)?;
    let a = LevyParams::new(0.3, 1.0, 1.0)?;
    let b = LevyParams::new(0.6, 2.0, 1.0)?;
    let params = ModelParams::with_unit_samples(base, vec![a, b, a, b], &[100, 100, 100, 100])?;
    println!("expected number of species: {:.1}", expected_phi(&params));

    let mut rng = RngHandle::new(42, 0);
    let ds = simulate_dataset(&mut rng, &params)?;
    ds.check()?;
    println!("simulated {} species", ds.counts.n_species());
    for j in 0..ds.counts.n_groups() {
        let f = fof(&ds.counts, j);
        let present = ds.counts.values[j].iter().filter(|&&n| n > 0).count();
        println!(
            "{}: total {:>6}, species present {:>4}, singletons {:.2}, blocks {:>5}",
            ds.counts.groups[j],
            ds.counts.group_total(j),
            present,
            f.cdf(1),
            ds.otu_counts[j].iter().map(|c| c.len()).sum::<usize>()
        );
    }
    Ok(())
}
