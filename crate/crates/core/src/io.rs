//! File formats: site CSVs, estimates, truth, results and draw files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! value read back is bit-identical to the value written.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BinarySiteTable, SiteSummary, TrialDataset};
use crate::error::{Error, Result};
use crate::mcmc::PosteriorDraws;
use crate::summaries::{Method, Model, SiteEstimates};

/// Header of the binary draw format: 12 ASCII bytes padded to 16.
pub const DRAWS_MAGIC: &[u8; 16] = b"MSTDRAWS0001\0\0\0\0";

/// Column names that trail the site columns in a draw file.
pub const EXTRA_COLUMNS: [&str; 4] = ["tau", "sigma", "alpha", "K"];

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?)
}

/// Reads `site_id,tau_hat,se2` and validates it.
pub fn read_dataset(path: &Path) -> Result<TrialDataset> {
    let mut rdr = csv_reader(path)?;
    let sites = rdr.deserialize().collect::<std::result::Result<Vec<SiteSummary>, _>>()?;
    TrialDataset::new(sites)
}

pub fn write_dataset(path: &Path, d: &TrialDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "site_id,tau_hat,se2")?;
    for s in d.sites() {
        writeln!(w, "{},{},{}", s.site_id, s.tau_hat, s.se2)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `site_id,t_succ,t_tot,c_succ,c_tot`.
pub fn read_binary_tables(path: &Path) -> Result<Vec<BinarySiteTable>> {
    let mut rdr = csv_reader(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    site_id: String,
    tau: f64,
}

/// True effects as `site_id,tau`.
pub fn write_truth(path: &Path, site_ids: &[String], tau: &[f64]) -> Result<()> {
    if site_ids.len() != tau.len() {
        return Err(Error::LengthMismatch(site_ids.len(), tau.len()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "site_id,tau")?;
    for (id, t) in site_ids.iter().zip(tau) {
        writeln!(w, "{id},{t}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let mut rdr = csv_reader(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<TruthRow>, _>>()?;
    Ok(rows.into_iter().map(|r| (r.site_id, r.tau)).unzip())
}

#[derive(Debug, Serialize, Deserialize)]
struct EstimateRow {
    site_id: String,
    estimate: f64,
    method: String,
    #[serde(default)]
    model: String,
}

/// Estimates as `site_id,estimate,method,model`.
pub fn write_estimates(path: &Path, est: &SiteEstimates) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "site_id,estimate,method,model")?;
    let model = est.model.map(Model::label).unwrap_or("");
    for (id, e) in est.site_ids.iter().zip(&est.estimates) {
        writeln!(w, "{id},{e},{},{model}", est.method)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates(path: &Path) -> Result<SiteEstimates> {
    let mut rdr = csv_reader(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<EstimateRow>, _>>()?;
    let first = rows
        .first()
        .ok_or_else(|| Error::Format(format!("{} has no estimates", path.display())))?;
    let method: Method = first.method.parse()?;
    let model = if first.model.is_empty() { None } else { Some(first.model.parse::<Model>()?) };
    if rows.iter().any(|r| r.method != first.method || r.model != first.model) {
        return Err(Error::Format("estimates file mixes methods or models".into()));
    }
    let (ids, vals) = rows.into_iter().map(|r| (r.site_id, r.estimate)).unzip();
    SiteEstimates::new(ids, vals, method, model)
}

/// Aligns `values` (keyed by `ids`) to the order of `target_ids`.
pub fn align_by_site(target_ids: &[String], ids: &[String], values: &[f64]) -> Result<Vec<f64>> {
    if ids.len() != target_ids.len() {
        return Err(Error::LengthMismatch(target_ids.len(), ids.len()));
    }
    let index: std::collections::HashMap<&str, f64> = ids.iter().map(String::as_str).zip(values.iter().copied()).collect();
    target_ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Format(format!("site {id} missing")))
        })
        .collect()
}

/// One line of the long-format results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario_id: String,
    pub rep: u32,
    pub model: Model,
    pub method: Method,
    pub rmse: f64,
    pub isel: f64,
    pub mselp: f64,
    pub mse_p90: f64,
    #[serde(rename = "I")]
    pub informativeness: f64,
}

pub const RESULTS_HEADER: &str = "scenario_id,rep,model,method,rmse,isel,mselp,mse_p90,I";

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.scenario_id,
            self.rep,
            self.model,
            self.method,
            self.rmse,
            self.isel,
            self.mselp,
            self.mse_p90,
            self.informativeness
        )
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv_reader(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv_line())?;
    }
    w.flush()?;
    Ok(())
}

/// Site draws plus per-iteration scalars (`tau`, `sigma`, and for DP fits
/// `alpha`, `K`).
#[derive(Clone, Debug, PartialEq)]
pub struct DrawFile {
    pub draws: PosteriorDraws,
    pub extras: Vec<(String, Vec<f64>)>,
}

impl DrawFile {
    pub fn new(draws: PosteriorDraws, extras: Vec<(String, Vec<f64>)>) -> Result<Self> {
        for (name, col) in &extras {
            if col.len() != draws.n_draws() {
                return Err(Error::Format(format!("column {name} has {} values, expected {}", col.len(), draws.n_draws())));
            }
        }
        Ok(Self { draws, extras })
    }

    pub fn extra(&self, name: &str) -> Option<&[f64]> {
        self.extras.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    fn column_names(&self) -> Vec<String> {
        self.draws
            .site_ids()
            .iter()
            .cloned()
            .chain(self.extras.iter().map(|(n, _)| n.clone()))
            .collect()
    }

    fn row_values(&self, s: usize) -> impl Iterator<Item = f64> + '_ {
        self.draws.row(s).iter().copied().chain(self.extras.iter().map(move |(_, v)| v[s]))
    }

    fn from_table(names: Vec<String>, n_rows: usize, values: Vec<f64>) -> Result<Self> {
        let n_cols = names.len();
        let n_extra = names
            .iter()
            .rev()
            .take_while(|n| EXTRA_COLUMNS.contains(&n.as_str()))
            .count();
        let n_sites = n_cols - n_extra;
        if n_sites == 0 {
            return Err(Error::Format("draw file has no site columns".into()));
        }
        let mut site_vals = Vec::with_capacity(n_rows * n_sites);
        let mut extras: Vec<(String, Vec<f64>)> = names[n_sites..].iter().map(|n| (n.clone(), Vec::with_capacity(n_rows))).collect();
        for row in values.chunks_exact(n_cols) {
            site_vals.extend_from_slice(&row[..n_sites]);
            for (e, v) in extras.iter_mut().zip(&row[n_sites..]) {
                e.1.push(*v);
            }
        }
        let draws = PosteriorDraws::new(names[..n_sites].to_vec(), site_vals)?;
        Self::new(draws, extras)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", self.column_names().join(","))?;
        for s in 0..self.draws.n_draws() {
            let line: Vec<String> = self.row_values(s).map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let names = self.column_names();
        w.write_all(DRAWS_MAGIC)?;
        w.write_all(&(self.draws.n_draws() as u64).to_le_bytes())?;
        w.write_all(&(names.len() as u64).to_le_bytes())?;
        for n in &names {
            w.write_all(&(n.len() as u32).to_le_bytes())?;
            w.write_all(n.as_bytes())?;
        }
        for s in 0..self.draws.n_draws() {
            for v in self.row_values(s) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Binary when the path ends in `.bin`, CSV otherwise.
    pub fn write(&self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e == "bin") {
            self.write_binary(path)
        } else {
            self.write_csv(path)
        }
    }

    /// Reads either format, sniffing the magic header.
    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.starts_with(&DRAWS_MAGIC[..12]) {
            Self::parse_binary(&bytes)
        } else {
            Self::parse_csv(&bytes)
        }
    }

    fn parse_binary(bytes: &[u8]) -> Result<Self> {
        let mut pos = 16;
        let mut take = |n: usize| -> Result<&[u8]> {
            let out = bytes
                .get(pos..pos + n)
                .ok_or_else(|| Error::Format("truncated binary draw file".into()))?;
            pos += n;
            Ok(out)
        };
        let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        let n_rows = u64_at(take(8)?) as usize;
        let n_cols = u64_at(take(8)?) as usize;
        let mut names = Vec::with_capacity(n_cols);
        for _ in 0..n_cols {
            let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let name = std::str::from_utf8(take(len)?).map_err(|e| Error::Format(e.to_string()))?;
            names.push(name.to_string());
        }
        let body = take(n_rows * n_cols * 8)?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_table(names, n_rows, values)
    }

    fn parse_csv(bytes: &[u8]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut values = Vec::new();
        let mut n_rows = 0;
        for rec in rdr.records() {
            let rec = rec?;
            for field in rec.iter() {
                values.push(field.parse::<f64>().map_err(|e| Error::Format(format!("bad draw value {field:?}: {e}")))?);
            }
            n_rows += 1;
        }
        Self::from_table(names, n_rows, values)
    }
}
