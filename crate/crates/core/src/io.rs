//! Count matrices on disk and train/test splitting.
//!
//! A count file is delimited text (comma or tab, detected from the header):
//!
//! ```text
//! group,otu_a,otu_b,otu_c
//! site1,4,0,1
//! site2,0,2,7
//! ```
//!
//! The optional sample sidecar lists the number of pooled samples behind each
//! group row (`group,samples`). Without it every group counts as one sample.

use crate::error::{read_file, Error, Result};
use crate::rand_dist::binomial;
use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Aggregated counts `values[j][l]` of species l in group j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub groups: Vec<String>,
    pub species: Vec<String>,
    pub values: Vec<Vec<u64>>,
    /// Total sample weight per group (M_j).
    pub samples: Vec<f64>,
}

impl CountMatrix {
    pub fn new(groups: Vec<String>, species: Vec<String>, values: Vec<Vec<u64>>, samples: Vec<f64>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Config("count matrix needs at least one group".into()));
        }
        if values.len() != groups.len() || samples.len() != groups.len() {
            return Err(Error::Config("row count does not match group labels".into()));
        }
        if values.iter().any(|row| row.len() != species.len()) {
            return Err(Error::Config("row length does not match species labels".into()));
        }
        if samples.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::Config("sample totals must be positive".into()));
        }
        Ok(CountMatrix { groups, species, values, samples })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    #[inline]
    pub fn get(&self, j: usize, l: usize) -> u64 {
        self.values[j][l]
    }

    pub fn column(&self, l: usize) -> Vec<u64> {
        self.values.iter().map(|row| row[l]).collect()
    }

    pub fn species_total(&self, l: usize) -> u64 {
        self.values.iter().map(|row| row[l]).sum()
    }

    pub fn group_total(&self, j: usize) -> u64 {
        self.values[j].iter().sum()
    }

    pub fn max_count(&self) -> u64 {
        self.values.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Removes species whose counts are zero in every group; returns how many went.
    pub fn drop_empty_species(&mut self) -> usize {
        let keep: Vec<bool> = (0..self.n_species()).map(|l| self.species_total(l) > 0).collect();
        let dropped = keep.iter().filter(|&&k| !k).count();
        if dropped == 0 {
            return 0;
        }
        let filter = |v: &Vec<u64>| v.iter().zip(&keep).filter(|(_, &k)| k).map(|(&x, _)| x).collect::<Vec<u64>>();
        self.values = self.values.iter().map(filter).collect();
        self.species = self
            .species
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect();
        dropped
    }

    pub fn species_index(&self) -> HashMap<&str, usize> {
        self.species.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

/// Options for [`load_count_matrix`].
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Field delimiter; detected from the header when `None`.
    pub delimiter: Option<u8>,
    /// Sidecar with per-group sample totals.
    pub samples_path: Option<std::path::PathBuf>,
    /// Keep all-zero columns instead of dropping them.
    pub keep_empty: bool,
}

fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

/// Reads a count matrix; first row holds species ids, first column group ids.
pub fn load_count_matrix(path: &Path, opts: &LoadOptions) -> Result<CountMatrix> {
    let text = read_file(path)?;
    let mut cm = parse_count_matrix(&text, opts.delimiter)?;
    if let Some(sp) = &opts.samples_path {
        cm.samples = load_samples(sp, &cm.groups)?;
    }
    if !opts.keep_empty {
        let dropped = cm.drop_empty_species();
        if dropped > 0 {
            warn!("{}: dropped {dropped} species with no counts", path.display());
        }
    }
    Ok(cm)
}

pub fn parse_count_matrix(text: &str, delimiter: Option<u8>) -> Result<CountMatrix> {
    let delim = delimiter.unwrap_or_else(|| detect_delimiter(text));
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
    };
    if header.len() < 2 {
        return Err(Error::Parse { line: 1, msg: "header needs a group column and at least one species".into() });
    }
    let species: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut groups = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        groups.push(rec.get(0).unwrap().to_string());
        let mut row = Vec::with_capacity(species.len());
        for (col, field) in rec.iter().enumerate().skip(1) {
            let v: u64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {}: '{field}' is not a nonnegative integer", col + 1),
            })?;
            row.push(v);
        }
        values.push(row);
    }
    if groups.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no group rows".into() });
    }
    let samples = vec![1.0; groups.len()];
    CountMatrix::new(groups, species, values, samples)
}

fn fmt_real(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Writes the canonical comma-separated form.
pub fn save_count_matrix(path: &Path, cm: &CountMatrix) -> Result<()> {
    let mut out = String::new();
    out.push_str("group");
    for s in &cm.species {
        out.push(',');
        out.push_str(s);
    }
    out.push('\n');
    for (g, row) in cm.groups.iter().zip(&cm.values) {
        out.push_str(g);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn save_samples(path: &Path, cm: &CountMatrix) -> Result<()> {
    let mut out = String::from("group,samples\n");
    for (g, m) in cm.groups.iter().zip(&cm.samples) {
        out.push_str(&format!("{g},{}\n", fmt_real(*m)));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads `group,samples` rows and orders them by `groups`.
pub fn load_samples(path: &Path, groups: &[String]) -> Result<Vec<f64>> {
    let text = read_file(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut map = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 2 {
            return Err(Error::Parse { line, msg: "expected group,samples".into() });
        }
        let m: f64 = rec[1].parse().map_err(|_| Error::Parse { line, msg: format!("bad sample total '{}'", &rec[1]) })?;
        if !(m > 0.0) {
            return Err(Error::Parse { line, msg: "sample total must be positive".into() });
        }
        map.insert(rec[0].to_string(), m);
    }
    groups
        .iter()
        .map(|g| map.get(g).copied().ok_or_else(|| Error::Config(format!("no sample total for group '{g}'"))))
        .collect()
}

/// Splits each cell by N_train ~ Binomial(N, M_j / (M_j + m_j)); the test part is the rest.
///
/// Both outputs keep the full species list; the train matrix has sample
/// totals `big_m`, the test matrix `small_m`.
pub fn binomial_split<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &CountMatrix,
    big_m: &[u64],
    small_m: &[u64],
) -> Result<(CountMatrix, CountMatrix)> {
    let jn = counts.n_groups();
    if big_m.len() != jn || small_m.len() != jn {
        return Err(Error::Config(format!("need {jn} per-group sample counts for the split")));
    }
    if big_m.iter().chain(small_m).any(|&v| v == 0) {
        return Err(Error::Config("split sample counts must be at least 1".into()));
    }
    let mut train = counts.values.clone();
    let mut test = counts.values.clone();
    for j in 0..jn {
        let p = big_m[j] as f64 / (big_m[j] + small_m[j]) as f64;
        for l in 0..counts.n_species() {
            let n = counts.values[j][l];
            let k = binomial(rng, n, p);
            train[j][l] = k;
            test[j][l] = n - k;
        }
    }
    let tr = CountMatrix::new(
        counts.groups.clone(),
        counts.species.clone(),
        train,
        big_m.iter().map(|&v| v as f64).collect(),
    )?;
    let te = CountMatrix::new(
        counts.groups.clone(),
        counts.species.clone(),
        test,
        small_m.iter().map(|&v| v as f64).collect(),
    )?;
    Ok((tr, te))
}
