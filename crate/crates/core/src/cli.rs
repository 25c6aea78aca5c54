//! Command line pipeline: simulate, split, fit, diagnose, posterior, predict,
//! ppc and diversity.
//!
//! Every stage writes into `--out` and records its effective configuration in
//! `manifest.json`. All randomness derives from `--seed`, so repeating a
//! command reproduces its outputs byte for byte.

use crate::diversity::{beta_matrix, fof, ks_statistic, shannon_alpha, summarize, Summary};
use crate::error::{read_file, Error, Result};
use crate::inference::{expand_latent, rhat, run_chains, ChainConfig, ChainSet, Param, PriorKind, Record};
use crate::io::{binomial_split, load_count_matrix, save_count_matrix, save_samples, CountMatrix, LoadOptions};
use crate::model::{simulate_dataset, ModelParams};
use crate::posterior::sample_posterior_abundance;
use crate::predict::{predictive_loglik_records, sample_predictive, unseen_entropy, Quadrature};
use crate::rand_dist::{poisson, RngHandle};
use crate::special_fn::LevyParams;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "phibp", version, about = "Grouped species counts under a Poisson hierarchical IBP")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a count matrix and its latent structure.
    Simulate(SimulateArgs),
    /// Split counts binomially into train and test sets.
    Split(SplitArgs),
    /// Run the MCMC sampler.
    Fit(FitArgs),
    /// Convergence diagnostics of a fit.
    Diagnose(DiagnoseArgs),
    /// Posterior abundance draws.
    Posterior(DrawArgs),
    /// Predictive draws and test-set log-likelihood.
    Predict(PredictArgs),
    /// Posterior predictive check of FoF tables against test counts.
    Ppc(PredictArgs),
    /// Alpha and beta diversity draws.
    Diversity(DrawArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct CountsArgs {
    /// Count matrix (comma or tab delimited, groups as rows).
    #[arg(long)]
    pub counts: PathBuf,
    /// Sidecar of per-group exposures ("group,samples").
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: CountsArgs,
    /// Training samples per group (comma separated, one value for all groups).
    #[arg(long = "big-m", value_delimiter = ',')]
    pub big_m: Option<Vec<u64>>,
    /// Test samples per group.
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: CountsArgs,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub prior: Option<PriorKind>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: Common,
    /// `fit.json` written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
}

#[derive(Args, Debug)]
pub struct DrawArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: CountsArgs,
    #[arg(long)]
    pub fit: PathBuf,
    /// Number of chain records used (evenly spaced).
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub draws: DrawArgs,
    /// Test counts; when given, the test log-likelihood is evaluated.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long = "test-samples")]
    pub test_samples: Option<PathBuf>,
    /// New exposure per group (comma separated, one value for all groups).
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<f64>>,
    #[arg(long = "quad-nodes")]
    pub quad_nodes: Option<usize>,
}

/// Simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub base: LevyParams,
    pub groups: Vec<LevyParams>,
    /// Samples per group; drawn from Poisson(mean_samples) when absent.
    #[serde(default)]
    pub samples: Option<Vec<usize>>,
    #[serde(default)]
    pub mean_samples: Option<f64>,
}

/// Everything a JSON config may set. Missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub steps: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub delta: Option<f64>,
    pub prior: Option<PriorKind>,
    pub adapt: Option<bool>,
    pub zeta: Option<f64>,
    pub big_m: Option<Vec<u64>>,
    pub m: Option<Vec<f64>>,
    pub quad_nodes: Option<usize>,
    pub draws: Option<usize>,
    pub sweeps: Option<usize>,
    pub simulation: Option<SimulationConfig>,
}

fn read_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = read_file(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(c: &Common) -> Result<&Path> {
    fs::create_dir_all(&c.out)?;
    Ok(&c.out)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn write_manifest(dir: &Path, command: &str, seed: u64, config: Value, inputs: &[&Path], outputs: &[&str]) -> Result<()> {
    let m = json!({
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "outputs": outputs,
        "versions": { "phibp": env!("CARGO_PKG_VERSION") },
    });
    write_json(&dir.join("manifest.json"), &m)
}

fn load_counts(d: &CountsArgs) -> Result<CountMatrix> {
    let opts = LoadOptions { delimiter: None, samples_path: d.samples.clone(), keep_empty: false };
    load_count_matrix(&d.counts, &opts)
}

/// Per-group values from a list of one value (broadcast) or one per group.
fn per_group<T: Copy>(v: &[T], jn: usize, what: &str) -> Result<Vec<T>> {
    match v.len() {
        1 => Ok(vec![v[0]; jn]),
        n if n == jn => Ok(v.to_vec()),
        n => Err(Error::Config(format!("{what}: expected 1 or {jn} values, got {n}"))),
    }
}

fn load_fit(path: &Path) -> Result<ChainSet> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// `k` records spread evenly over all chains (all of them when `k` is absent).
fn pick_records(fit: &ChainSet, k: Option<usize>) -> Vec<&Record> {
    let all: Vec<&Record> = fit.records().collect();
    match k {
        Some(k) if k > 0 && k < all.len() => (0..k).map(|i| all[i * all.len() / k]).collect(),
        _ => all,
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = read_config(&a.common.config)?;
    let seed = a.common.seed.or(cfg.seed).unwrap_or(1);
    let sim = cfg.simulation.clone().ok_or_else(|| Error::Config("config needs a \"simulation\" section".into()))?;
    let mut rng = RngHandle::new(seed, 0);
    let samples = match (&sim.samples, sim.mean_samples) {
        (Some(s), _) => per_group(s, sim.groups.len(), "samples")?,
        (None, Some(mean)) => (0..sim.groups.len()).map(|_| (poisson(&mut rng, mean) as usize).max(1)).collect(),
        (None, None) => vec![1; sim.groups.len()],
    };
    let params = ModelParams::with_unit_samples(sim.base, sim.groups.clone(), &samples)?;
    let ds = simulate_dataset(&mut rng, &params)?;
    let dir = out_dir(&a.common)?;
    save_count_matrix(&dir.join("counts.csv"), &ds.counts)?;
    save_samples(&dir.join("samples.csv"), &ds.counts)?;
    write_json(&dir.join("truth.json"), &ds)?;
    let mut c = cfg;
    c.seed = Some(seed);
    write_manifest(dir, "simulate", seed, serde_json::to_value(&c)?, &[], &["counts.csv", "samples.csv", "truth.json"])?;
    log::info!("simulated {} species over {} groups", ds.counts.n_species(), ds.counts.n_groups());
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let cfg = read_config(&a.common.config)?;
    let seed = a.common.seed.or(cfg.seed).unwrap_or(1);
    let counts = load_counts(&a.data)?;
    let jn = counts.n_groups();
    let big = per_group(a.big_m.as_deref().or(cfg.big_m.as_deref()).unwrap_or(&[1]), jn, "--big-m")?;
    let small: Vec<u64> = match (&a.m, &cfg.m) {
        (Some(v), _) => per_group(v, jn, "--m")?,
        (None, Some(v)) => per_group(v, jn, "m")?.iter().map(|&x| x.round() as u64).collect(),
        (None, None) => vec![1; jn],
    };
    let mut rng = RngHandle::new(seed, 0);
    let (train, test) = binomial_split(&mut rng, &counts, &big, &small)?;
    let dir = out_dir(&a.common)?;
    save_count_matrix(&dir.join("train.csv"), &train)?;
    save_samples(&dir.join("train_samples.csv"), &train)?;
    save_count_matrix(&dir.join("test.csv"), &test)?;
    save_samples(&dir.join("test_samples.csv"), &test)?;
    let conf = json!({ "big_m": big, "m": small });
    write_manifest(
        dir,
        "split",
        seed,
        conf,
        &[&a.data.counts],
        &["train.csv", "train_samples.csv", "test.csv", "test_samples.csv"],
    )
}

fn chains_csv(fit: &ChainSet) -> String {
    let kind = fit.config.prior;
    let params = Param::all(fit.n_groups, kind);
    let mut s = String::from("step,chain");
    for p in &params {
        let _ = write!(s, ",{}", p.name());
    }
    s.push_str(",log_joint\n");
    for r in fit.records() {
        let _ = write!(s, "{},{}", r.step, r.chain);
        for p in &params {
            let _ = write!(s, ",{}", p.get(r));
        }
        let _ = writeln!(s, ",{}", r.log_joint);
    }
    s
}

fn latent_csv(counts: &CountMatrix, fit: &ChainSet) -> String {
    let mut s = String::from("step,chain,group,species,n,x\n");
    for r in fit.records() {
        if let Some(flat) = &r.x {
            let x = expand_latent(counts, flat);
            for (j, row) in x.iter().enumerate() {
                for (l, &v) in row.iter().enumerate() {
                    if counts.values[j][l] > 0 {
                        let _ = writeln!(s, "{},{},{},{},{},{}", r.step, r.chain, counts.groups[j], counts.species[l], counts.values[j][l], v);
                    }
                }
            }
        }
    }
    s
}

/// R̂ and acceptance per parameter, plus posterior summaries.
pub fn diagnostics(fit: &ChainSet) -> Result<Value> {
    let mut per = serde_json::Map::new();
    for p in Param::all(fit.n_groups, fit.config.prior) {
        let v: Vec<f64> = fit.records().map(|r| p.get(r)).collect();
        let s = summarize(&v);
        per.insert(
            p.name(),
            json!({
                "rhat": rhat(fit, p)?,
                "acceptance": fit.acceptance_of(p),
                "mean": s.map(|s| s.mean),
                "q025": s.map(|s| s.lower),
                "q975": s.map(|s| s.upper),
            }),
        );
    }
    Ok(json!({
        "records": fit.records().count(),
        "chains": fit.chains.len(),
        "parameters": per,
        "block_acceptance": fit.block_acceptance,
        "final_scales": fit.scales,
    }))
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let cfg = read_config(&a.common.config)?;
    let counts = load_counts(&a.data)?;
    let d = ChainConfig::default();
    let config = ChainConfig {
        chains: a.chains.or(cfg.chains).unwrap_or(d.chains),
        steps: a.steps.or(cfg.steps).unwrap_or(d.steps),
        burn_in: a.burnin.or(cfg.burn_in).unwrap_or(d.burn_in),
        thin: a.thin.or(cfg.thin).unwrap_or(d.thin),
        delta: a.delta.or(cfg.delta).unwrap_or(d.delta),
        seed: a.common.seed.or(cfg.seed).unwrap_or(d.seed),
        prior: a.prior.or(cfg.prior).unwrap_or(d.prior),
        adapt: cfg.adapt.unwrap_or(d.adapt),
        keep_latent: true,
        zeta: cfg.zeta.unwrap_or(d.zeta),
    };
    let fit = run_chains(&counts, &config)?;
    let dir = out_dir(&a.common)?;
    fs::write(dir.join("chains.csv"), chains_csv(&fit))?;
    fs::write(dir.join("latent.csv"), latent_csv(&counts, &fit))?;
    write_json(&dir.join("diagnostics.json"), &diagnostics(&fit)?)?;
    fs::write(dir.join("fit.json"), serde_json::to_string(&fit)?)?;
    write_manifest(
        dir,
        "fit",
        config.seed,
        serde_json::to_value(&config)?,
        &[&a.data.counts],
        &["chains.csv", "latent.csv", "diagnostics.json", "fit.json"],
    )
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<()> {
    let fit = load_fit(&a.fit)?;
    let d = diagnostics(&fit)?;
    let dir = out_dir(&a.common)?;
    write_json(&dir.join("diagnostics.json"), &d)?;
    println!("{:<10} {:>8} {:>8} {:>10} {:>10}", "param", "rhat", "accept", "q025", "q975");
    for p in Param::all(fit.n_groups, fit.config.prior) {
        let e = &d["parameters"][p.name()];
        println!(
            "{:<10} {:>8.4} {:>8.3} {:>10.4} {:>10.4}",
            p.name(),
            e["rhat"].as_f64().unwrap_or(f64::NAN),
            e["acceptance"].as_f64().unwrap_or(f64::NAN),
            e["q025"].as_f64().unwrap_or(f64::NAN),
            e["q975"].as_f64().unwrap_or(f64::NAN)
        );
    }
    write_manifest(dir, "diagnose", fit.config.seed, json!({}), &[&a.fit], &["diagnostics.json"])
}

struct DrawContext {
    counts: CountMatrix,
    fit: ChainSet,
    seed: u64,
    draws: Option<usize>,
    sweeps: usize,
    cfg: RunConfig,
}

fn draw_context(a: &DrawArgs) -> Result<DrawContext> {
    let cfg = read_config(&a.common.config)?;
    let counts = load_counts(&a.data)?;
    let fit = load_fit(&a.fit)?;
    if fit.n_groups != counts.n_groups() {
        return Err(Error::Alignment("fit and counts have different numbers of groups".into()));
    }
    Ok(DrawContext {
        seed: a.common.seed.or(cfg.seed).unwrap_or(1),
        draws: a.draws.or(cfg.draws),
        sweeps: cfg.sweeps.unwrap_or(1),
        counts,
        fit,
        cfg,
    })
}

fn record_latent(counts: &CountMatrix, r: &Record) -> Result<Vec<Vec<u32>>> {
    let flat = r.x.as_ref().ok_or_else(|| Error::Config("chain records do not carry block tables".into()))?;
    Ok(expand_latent(counts, flat))
}

fn cmd_posterior(a: &DrawArgs) -> Result<()> {
    let c = draw_context(a)?;
    let root = RngHandle::new(c.seed, 0);
    let mut s = String::from("draw,group,species,H,sigma_tilde,X,n\n");
    for (d, r) in pick_records(&c.fit, c.draws).into_iter().enumerate() {
        let x = record_latent(&c.counts, r)?;
        let draw = sample_posterior_abundance(&root.substream(d as u64), &c.counts, &r.params, &x, c.sweeps)?;
        for j in 0..draw.n_groups() {
            for l in 0..draw.n_species() {
                let e = &draw.entries[j][l];
                let _ = writeln!(
                    s,
                    "{d},{},{},{},{},{},{}",
                    c.counts.groups[j],
                    c.counts.species[l],
                    draw.h[l],
                    e.sigma_tilde,
                    e.otu_counts.len(),
                    c.counts.values[j][l]
                );
            }
        }
    }
    let dir = out_dir(&a.common)?;
    fs::write(dir.join("abundance.csv"), s)?;
    write_manifest(dir, "posterior", c.seed, json!({"draws": c.draws, "sweeps": c.sweeps}), &[&a.data.counts, &a.fit], &["abundance.csv"])
}

fn new_exposure(a: &PredictArgs, cfg: &RunConfig, jn: usize, test: Option<&CountMatrix>) -> Result<Vec<f64>> {
    if let Some(t) = test {
        return Ok(t.samples.clone());
    }
    per_group(a.m.as_deref().or(cfg.m.as_deref()).unwrap_or(&[1.0]), jn, "--m")
}

fn load_test(a: &PredictArgs) -> Result<Option<CountMatrix>> {
    match &a.test {
        Some(p) => {
            let opts = LoadOptions { delimiter: None, samples_path: a.test_samples.clone(), keep_empty: false };
            Ok(Some(load_count_matrix(p, &opts)?))
        }
        None => Ok(None),
    }
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let c = draw_context(&a.draws)?;
    let test = load_test(a)?;
    let m = new_exposure(a, &c.cfg, c.counts.n_groups(), test.as_ref())?;
    let root = RngHandle::new(c.seed, 0);
    let records = pick_records(&c.fit, c.draws);
    let mut pred = String::from("draw,group,species,count,novel\n");
    let mut ent = String::from("draw,group,entropy\n");
    for (d, r) in records.iter().enumerate() {
        let x = record_latent(&c.counts, r)?;
        let stream = root.substream(d as u64);
        let draw = sample_posterior_abundance(&stream, &c.counts, &r.params, &x, c.sweeps)?;
        let mut rng = stream.substream(u64::MAX);
        let p = sample_predictive(&mut rng, &draw, &r.params, &c.counts.samples, &m)?;
        for j in 0..p.n_groups() {
            for l in 0..draw.n_species() {
                let n = p.existing_count(j, l);
                if n > 0 {
                    let _ = writeln!(pred, "{d},{},{},{n},0", c.counts.groups[j], c.counts.species[l]);
                }
            }
            for s in &p.new_species {
                if s.counts[j] > 0 {
                    let _ = writeln!(pred, "{d},{},{},{},1", c.counts.groups[j], s.label, s.counts[j]);
                }
            }
            if m[j] >= 1.0 {
                let e = unseen_entropy(&mut rng, &r.params, &c.counts.samples, &m, j)?;
                let _ = writeln!(ent, "{d},{},{}", c.counts.groups[j], e.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()));
            }
        }
    }
    let dir = out_dir(&a.draws.common)?;
    fs::write(dir.join("predictive.csv"), pred)?;
    fs::write(dir.join("unseen_entropy.csv"), ent)?;
    let mut outputs = vec!["predictive.csv", "unseen_entropy.csv"];
    let nodes = a.quad_nodes.or(c.cfg.quad_nodes).unwrap_or(64);
    if let Some(t) = &test {
        let ll = predictive_loglik_records(&c.counts, t, &records, Quadrature::GaussLaguerre(nodes))?;
        let mut s = String::from("step,chain,existing,novel,total\n");
        for (r, v) in records.iter().zip(&ll) {
            let _ = writeln!(s, "{},{},{},{},{}", r.step, r.chain, v.existing, v.novel, v.total());
        }
        fs::write(dir.join("test_loglik.csv"), s)?;
        let tot: Vec<f64> = ll.iter().map(|v| v.total()).collect();
        let mean = tot.iter().sum::<f64>() / tot.len().max(1) as f64;
        write_json(&dir.join("test_loglik.json"), &json!({ "mean": mean, "records": tot.len(), "quad_nodes": nodes }))?;
        println!("mean test log-likelihood {mean}");
        outputs.extend(["test_loglik.csv", "test_loglik.json"]);
    }
    write_manifest(
        dir,
        "predict",
        c.seed,
        json!({"draws": c.draws, "sweeps": c.sweeps, "m": m, "quad_nodes": nodes}),
        &[&a.draws.data.counts, &a.draws.fit],
        &outputs,
    )
}

fn cmd_ppc(a: &PredictArgs) -> Result<()> {
    let c = draw_context(&a.draws)?;
    let test = load_test(a)?.ok_or_else(|| Error::Config("ppc needs --test".into()))?;
    if test.groups != c.counts.groups {
        return Err(Error::Alignment("train and test groups differ".into()));
    }
    let m = test.samples.clone();
    let root = RngHandle::new(c.seed, 0);
    let mut s = String::from("draw,group,ks\n");
    let mut per_group: Vec<Vec<f64>> = vec![Vec::new(); test.n_groups()];
    for (d, r) in pick_records(&c.fit, c.draws).into_iter().enumerate() {
        let x = record_latent(&c.counts, r)?;
        let stream = root.substream(d as u64);
        let draw = sample_posterior_abundance(&stream, &c.counts, &r.params, &x, c.sweeps)?;
        let mut rng = stream.substream(u64::MAX);
        let p = sample_predictive(&mut rng, &draw, &r.params, &c.counts.samples, &m)?;
        let sim = p.to_counts(&c.counts.groups, &c.counts.species, m.clone())?;
        for j in 0..test.n_groups() {
            let (fs_, ft) = (fof(&sim, j), fof(&test, j));
            if fs_.is_empty() || ft.is_empty() {
                continue;
            }
            let k = ks_statistic(&fs_, &ft)?;
            per_group[j].push(k);
            let _ = writeln!(s, "{d},{},{k}", test.groups[j]);
        }
    }
    let dir = out_dir(&a.draws.common)?;
    fs::write(dir.join("ppc.csv"), s)?;
    let summary: Vec<Value> = per_group
        .iter()
        .enumerate()
        .map(|(j, v)| json!({"group": test.groups[j], "ks": summarize(v)}))
        .collect();
    write_json(&dir.join("ppc.json"), &summary)?;
    write_manifest(dir, "ppc", c.seed, json!({"draws": c.draws, "sweeps": c.sweeps}), &[&a.draws.data.counts, &a.draws.fit], &["ppc.csv", "ppc.json"])
}

fn cmd_diversity(a: &DrawArgs) -> Result<()> {
    let c = draw_context(a)?;
    let root = RngHandle::new(c.seed, 0);
    let mut alpha = String::from("draw,group,shannon\n");
    let mut beta = String::from("draw,group_a,group_b,bray_curtis\n");
    let jn = c.counts.n_groups();
    let mut alphas: Vec<Vec<f64>> = vec![Vec::new(); jn];
    let mut betas: Vec<f64> = Vec::new();
    let counts = &c.counts;
    for (d, r) in pick_records(&c.fit, c.draws).into_iter().enumerate() {
        let x = record_latent(&c.counts, r)?;
        let draw = sample_posterior_abundance(&root.substream(d as u64), &c.counts, &r.params, &x, c.sweeps)?;
        for j in 0..jn {
            let v = shannon_alpha(&draw, j);
            alphas[j].push(v);
            let _ = writeln!(alpha, "{d},{},{v}", counts.groups[j]);
        }
        let b = beta_matrix(&draw);
        for j in 0..jn {
            for v in j + 1..jn {
                betas.push(b[j][v]);
                let _ = writeln!(beta, "{d},{},{},{}", counts.groups[j], counts.groups[v], b[j][v]);
            }
        }
    }
    let dir = out_dir(&a.common)?;
    fs::write(dir.join("alpha.csv"), alpha)?;
    fs::write(dir.join("beta.csv"), beta)?;
    let sa: Vec<Option<Summary>> = alphas.iter().map(|v| summarize(v)).collect();
    write_json(&dir.join("diversity.json"), &json!({"alpha": sa, "groups": counts.groups, "mean_beta": summarize(&betas)}))?;
    write_manifest(dir, "diversity", c.seed, json!({"draws": c.draws, "sweeps": c.sweeps}), &[&a.data.counts, &a.fit], &["alpha.csv", "beta.csv", "diversity.json"])
}

/// Runs one parsed command.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Split(a) => cmd_split(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Posterior(a) => cmd_posterior(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Ppc(a) => cmd_ppc(a),
        Command::Diversity(a) => cmd_diversity(a),
    }
}

/// Entry point: 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
