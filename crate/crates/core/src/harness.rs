//! Simulation campaigns: scenario grid x replications x three analysis
//! models x three summary methods, written to a long-format results file.
//!
//! Every `(scenario, rep)` item draws its random numbers from streams keyed
//! on `(master_seed, scenario_id, rep, stage)`, so results do not depend on
//! scheduling, thread count or which items ran before an interruption.
//! Completed items are appended to `checkpoint.jsonl`; a rerun skips them.
//! `results.csv` is written, sorted by key, once every item is done.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_inform, diffuse_hyper, Calibration, GammaHyper};
use crate::data::informativeness;
use crate::datagen::{generate, AlSpec, GShape, MixtureSpec, Scenario, ShapeKind};
use crate::dp::{fit_dp_with_rng, DpConfig};
use crate::error::{Error, Result};
use crate::gaussian::{fit_gaussian_with_rng, GaussianConfig};
use crate::io::{DrawFile, ResultRow, RESULTS_HEADER};
use crate::losses::LossReport;
use crate::mcmc::{McmcConfig, PosteriorDraws};
use crate::rng::seed_for;
use crate::summaries::{summarize, Method, Model};

pub const CHECKPOINT_FILE: &str = "checkpoint.jsonl";
pub const RESULTS_FILE: &str = "results.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const RUNS_FILE: &str = "runs.jsonl";

/// Factorial grid; every combination becomes a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "J")]
    pub j: Vec<usize>,
    pub n_bar: Vec<f64>,
    pub cv: Vec<f64>,
    pub sigma: Vec<f64>,
    pub g_shape: Vec<ShapeKind>,
}

/// `campaign.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub mixture: MixtureSpec,
    #[serde(default)]
    pub al: AlSpec,
    #[serde(default = "default_reps")]
    pub reps: u32,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Per-J chi-square degrees of freedom for the informative DP prior.
    #[serde(default)]
    pub inform_df: BTreeMap<usize, u32>,
    #[serde(default)]
    pub keep_draws: bool,
}

fn default_reps() -> u32 {
    100
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("campaign_out")
}

impl CampaignConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn campaign(&self) -> Result<Campaign> {
        let g = &self.grid;
        let mut scenarios = Vec::new();
        for &j in &g.j {
            for &n_bar in &g.n_bar {
                for &cv in &g.cv {
                    for &sigma in &g.sigma {
                        for &shape in &g.g_shape {
                            let shape = GShape::from_parts(shape, self.mixture, self.al);
                            scenarios.push(Scenario::new(j, n_bar, cv, sigma, shape)?);
                        }
                    }
                }
            }
        }
        Campaign::new(scenarios, self.reps, self.mcmc, self.master_seed, self.output_dir.clone())
            .map(|c| Campaign {
                inform_df: self.inform_df.clone(),
                keep_draws: self.keep_draws,
                ..c
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Campaign {
    pub scenarios: Vec<Scenario>,
    pub reps: u32,
    pub mcmc: McmcConfig,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub inform_df: BTreeMap<usize, u32>,
    pub keep_draws: bool,
}

impl Campaign {
    pub fn new(scenarios: Vec<Scenario>, reps: u32, mcmc: McmcConfig, master_seed: u64, output_dir: PathBuf) -> Result<Self> {
        if reps == 0 {
            return Err(Error::InvalidParameter("reps must be at least 1".into()));
        }
        mcmc.validate()?;
        let mut seen = BTreeSet::new();
        for s in &scenarios {
            s.validate()?;
            if !seen.insert(s.id()) {
                return Err(Error::InvalidParameter(format!("duplicate scenario {}", s.id())));
            }
        }
        Ok(Self {
            scenarios,
            reps,
            mcmc,
            master_seed,
            output_dir,
            inform_df: BTreeMap::new(),
            keep_draws: false,
        })
    }

    /// Degrees of freedom of the chi-square target for `j` sites:
    /// the configured override, else `max(1, round(J / 10))`.
    pub fn inform_df_for(&self, j: usize) -> u32 {
        self.inform_df
            .get(&j)
            .copied()
            .unwrap_or_else(|| ((j as f64 / 10.0).round() as u32).max(1))
    }
}

/// Knobs that do not affect results.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Stop after this many new items (simulates an interruption).
    pub max_items: Option<usize>,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

/// An estimator that produced no row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub model: Model,
    /// `None` when the fit itself failed (all three methods are lost).
    pub method: Option<Method>,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RowRecord {
    model: Model,
    method: Method,
    line: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ItemRecord {
    scenario_id: String,
    rep: u32,
    rows: Vec<RowRecord>,
    failures: Vec<Failure>,
}

#[derive(Clone, Debug, Serialize)]
struct FitDiagnostics {
    model: Model,
    seconds: f64,
    mean_sigma: f64,
    mean_alpha: Option<f64>,
    mean_k: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
struct RunRecord<'a> {
    scenario_id: &'a str,
    rep: u32,
    informativeness: f64,
    seconds: f64,
    fits: Vec<FitDiagnostics>,
}

/// What a call to [`run_campaign`] achieved.
#[derive(Clone, Debug, PartialEq)]
pub struct CampaignOutcome {
    pub total_items: usize,
    pub completed_items: usize,
    pub newly_run: usize,
    /// `true` once every item is done and `results.csv` is written.
    pub finished: bool,
    pub rows: usize,
    pub failures: usize,
    pub results_path: PathBuf,
}

/// Reads the checkpoint, dropping a torn final line, and rewrites it so
/// later appends start on a clean line.
fn load_checkpoint(path: &Path) -> Result<Vec<ItemRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.split('\n').filter(|l| !l.trim().is_empty()).collect();
    let mut records = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<ItemRecord>(line) {
            Ok(r) => records.push(r),
            Err(_) if i + 1 == lines.len() => {}
            Err(e) => return Err(Error::Format(format!("corrupt checkpoint line {}: {e}", i + 1))),
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in &records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    w.flush()?;
    Ok(records)
}

/// Informative DP hyperparameters for every `J` in the campaign, computed
/// once per `J`.
pub fn calibrations(c: &Campaign) -> Result<BTreeMap<usize, Calibration>> {
    let js: BTreeSet<usize> = c.scenarios.iter().map(|s| s.j).collect();
    js.into_iter()
        .map(|j| Ok((j, calibrate_inform(j, c.inform_df_for(j))?)))
        .collect()
}

fn fit_model(
    model: Model,
    data: &crate::data::TrialDataset,
    mcmc: McmcConfig,
    inform: GammaHyper,
    stream: &mut crate::rng::SimRng,
) -> Result<(PosteriorDraws, Vec<(String, Vec<f64>)>, FitDiagnostics)> {
    let start = Instant::now();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    match model {
        Model::Gaussian => {
            let post = fit_gaussian_with_rng(data, &GaussianConfig::new(mcmc), stream)?;
            let diag = FitDiagnostics {
                model,
                seconds: start.elapsed().as_secs_f64(),
                mean_sigma: mean(&post.sigma_draws),
                mean_alpha: None,
                mean_k: None,
            };
            let extras = vec![("tau".into(), post.tau_draws), ("sigma".into(), post.sigma_draws)];
            Ok((post.draws, extras, diag))
        }
        Model::DpDiffuse | Model::DpInform => {
            let h = if model == Model::DpDiffuse { diffuse_hyper(data.len())? } else { inform };
            let post = fit_dp_with_rng(data, &DpConfig::gamma(h.a, h.b, mcmc), stream)?;
            let k: Vec<f64> = post.k_draws.iter().map(|&k| k as f64).collect();
            let diag = FitDiagnostics {
                model,
                seconds: start.elapsed().as_secs_f64(),
                mean_sigma: mean(&post.base_sigma_draws),
                mean_alpha: Some(mean(&post.alpha_draws)),
                mean_k: Some(mean(&k)),
            };
            let extras = vec![
                ("tau".into(), post.base_tau_draws),
                ("sigma".into(), post.base_sigma_draws),
                ("alpha".into(), post.alpha_draws),
                ("K".into(), k),
            ];
            Ok((post.draws, extras, diag))
        }
    }
}

fn stage(model: Model) -> &'static str {
    match model {
        Model::Gaussian => "gaussian",
        Model::DpDiffuse => "dp-diffuse",
        Model::DpInform => "dp-inform",
    }
}

/// Runs one `(scenario, rep)` item. Estimator failures are recorded, not
/// propagated; only data generation errors abort the item.
fn run_item(c: &Campaign, scenario: &Scenario, rep: u32, inform: GammaHyper, draws_dir: Option<&Path>) -> Result<(ItemRecord, f64, Vec<FitDiagnostics>)> {
    let id = scenario.id();
    let mut data_rng = seed_for(c.master_seed, &id, rep as u64, "data").rng();
    let generated = generate(scenario, &mut data_rng)?;
    let info = informativeness(&generated.data, scenario.sigma * scenario.sigma)?.value();
    let mut rows = Vec::with_capacity(9);
    let mut failures = Vec::new();
    let mut diags = Vec::with_capacity(3);
    for model in Model::ALL {
        let mut stream = seed_for(c.master_seed, &id, rep as u64, stage(model)).rng();
        let (draws, extras, diag) = match fit_model(model, &generated.data, c.mcmc, inform, &mut stream) {
            Ok(x) => x,
            Err(e) => {
                failures.push(Failure { model, method: None, error: e.to_string() });
                continue;
            }
        };
        diags.push(diag);
        for method in Method::ALL {
            let outcome = summarize(&draws, method).and_then(|est| LossReport::compute(&est.estimates, &generated.tau_true));
            match outcome {
                Ok(loss) => {
                    let row = ResultRow {
                        scenario_id: id.clone(),
                        rep,
                        model,
                        method,
                        rmse: loss.rmse,
                        isel: loss.isel,
                        mselp: loss.mselp,
                        mse_p90: loss.mse_p90,
                        informativeness: info,
                    };
                    rows.push(RowRecord { model, method, line: row.to_csv_line() });
                }
                Err(e) => failures.push(Failure { model, method: Some(method), error: e.to_string() }),
            }
        }
        if let Some(dir) = draws_dir {
            DrawFile::new(draws, extras)?.write_binary(&dir.join(format!("{id}_r{rep}_{model}.bin")))?;
        }
    }
    Ok((
        ItemRecord {
            scenario_id: id,
            rep,
            rows,
            failures,
        },
        info,
        diags,
    ))
}

/// Runs (or resumes) a campaign. See the module docs for the file layout.
pub fn run_campaign(c: &Campaign, opts: &RunOptions) -> Result<CampaignOutcome> {
    match opts.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            pool.install(|| run_campaign_inner(c, opts))
        }
        None => run_campaign_inner(c, opts),
    }
}

fn run_campaign_inner(c: &Campaign, opts: &RunOptions) -> Result<CampaignOutcome> {
    fs::create_dir_all(&c.output_dir)?;
    let draws_dir = if c.keep_draws {
        let d = c.output_dir.join("draws");
        fs::create_dir_all(&d)?;
        Some(d)
    } else {
        None
    };
    let checkpoint_path = c.output_dir.join(CHECKPOINT_FILE);
    let mut records = load_checkpoint(&checkpoint_path)?;
    let done: BTreeSet<(String, u32)> = records.iter().map(|r| (r.scenario_id.clone(), r.rep)).collect();

    let all_items: Vec<(usize, u32)> = (0..c.scenarios.len())
        .flat_map(|s| (0..c.reps).map(move |r| (s, r)))
        .collect();
    let mut pending: Vec<(usize, u32)> = all_items
        .iter()
        .copied()
        .filter(|&(s, r)| !done.contains(&(c.scenarios[s].id(), r)))
        .collect();
    if let Some(m) = opts.max_items {
        pending.truncate(m);
    }

    let cal = if pending.is_empty() { BTreeMap::new() } else { calibrations(c)? };
    let sink = Mutex::new(OpenOptions::new().create(true).append(true).open(&checkpoint_path)?);
    let runs = Mutex::new(OpenOptions::new().create(true).append(true).open(c.output_dir.join(RUNS_FILE))?);

    let fresh = pending
        .par_iter()
        .map(|&(s, rep)| {
            let scenario = &c.scenarios[s];
            let start = Instant::now();
            let (record, info, fits) = run_item(c, scenario, rep, cal[&scenario.j].hyper, draws_dir.as_deref())?;
            let line = serde_json::to_string(&record)?;
            {
                let mut f = sink.lock().expect("checkpoint sink");
                writeln!(f, "{line}")?;
                f.flush()?;
            }
            let run = RunRecord {
                scenario_id: &record.scenario_id,
                rep,
                informativeness: info,
                seconds: start.elapsed().as_secs_f64(),
                fits,
            };
            let run_line = serde_json::to_string(&run)?;
            writeln!(runs.lock().expect("runs sink"), "{run_line}")?;
            Ok(record)
        })
        .collect::<Result<Vec<ItemRecord>>>()?;
    let newly_run = fresh.len();
    records.extend(fresh);

    let results_path = c.output_dir.join(RESULTS_FILE);
    let finished = records.len() >= all_items.len();
    let rows: usize = records.iter().map(|r| r.rows.len()).sum();
    let failures: usize = records.iter().map(|r| r.failures.len()).sum();
    if finished {
        write_final(c, &records)?;
    }
    Ok(CampaignOutcome {
        total_items: all_items.len(),
        completed_items: records.len(),
        newly_run,
        finished,
        rows,
        failures,
        results_path,
    })
}

fn write_final(c: &Campaign, records: &[ItemRecord]) -> Result<()> {
    let mut keyed: Vec<((&str, u32, Model, Method), &str)> = records
        .iter()
        .flat_map(|r| {
            r.rows
                .iter()
                .map(move |row| ((r.scenario_id.as_str(), r.rep, row.model, row.method), row.line.as_str()))
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    let mut w = BufWriter::new(File::create(c.output_dir.join(RESULTS_FILE))?);
    writeln!(w, "{RESULTS_HEADER}")?;
    for (_, line) in keyed {
        writeln!(w, "{line}")?;
    }
    w.flush()?;

    let mut fails: Vec<(&str, u32, &Failure)> = records
        .iter()
        .flat_map(|r| r.failures.iter().map(move |f| (r.scenario_id.as_str(), r.rep, f)))
        .collect();
    fails.sort_by(|a, b| (a.0, a.1, a.2.model, a.2.method).cmp(&(b.0, b.1, b.2.model, b.2.method)));
    let mut w = BufWriter::new(File::create(c.output_dir.join(FAILURES_FILE))?);
    writeln!(w, "scenario_id,rep,model,method,error")?;
    for (id, rep, f) in fails {
        let method = f.method.map(Method::label).unwrap_or("all");
        let err = f.error.replace(['\n', ','], " ");
        writeln!(w, "{id},{rep},{},{method},{err}", f.model)?;
    }
    w.flush()?;
    Ok(())
}

/// Groups result rows by scenario id.
pub fn rows_by_scenario(rows: &[ResultRow]) -> HashMap<&str, Vec<&ResultRow>> {
    let mut out: HashMap<&str, Vec<&ResultRow>> = HashMap::new();
    for r in rows {
        out.entry(r.scenario_id.as_str()).or_default().push(r);
    }
    out
}
