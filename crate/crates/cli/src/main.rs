//! `mst`: simulate, fit, summarize and evaluate multisite-trial estimators.
//!
//! Exit codes: 0 ok, 2 input error, 3 numerical or chain failure, 4 internal.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use multisite::calibration::{calibrate_inform, cluster_prior, diffuse_hyper};
use multisite::data::{informativeness, ingest_binary_sites, TrialDataset};
use multisite::datagen::{generate, ScenarioConfig, ShapeKind};
use multisite::dp::{fit_dp_with_rng, DpConfig};
use multisite::gaussian::{fit_gaussian_with_rng, GaussianConfig};
use multisite::harness::{run_campaign, CampaignConfig, RunOptions};
use multisite::io::{self, DrawFile};
use multisite::losses::LossReport;
use multisite::mcmc::McmcConfig;
use multisite::metamodel::{self, Outcome};
use multisite::plotdata;
use multisite::rng::{rng_from_seed, seed_for};
use multisite::summaries::{posterior_stats, summarize, Method, Model};
use multisite::Error;

#[derive(Parser)]
#[command(name = "mst", version, about = "Site-specific effects in multisite trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Gaussian,
    DpDiffuse,
    DpInform,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Gaussian => Model::Gaussian,
            ModelArg::DpDiffuse => Model::DpDiffuse,
            ModelArg::DpInform => Model::DpInform,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pm,
    Cb,
    Gr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pm => Method::Pm,
            MethodArg::Cb => Method::Cb,
            MethodArg::Gr => Method::Gr,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign, or generate datasets for one scenario.
    Simulate {
        /// campaign.json
        #[arg(long, conflicts_with = "scenario")]
        config: Option<PathBuf>,
        /// scenario.json: write observed and true effects per replication
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Output directory (overrides the campaign's output_dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after this many (scenario, rep) items; rerun to resume
        #[arg(long)]
        max_items: Option<usize>,
    },
    /// Fit one model and write its posterior draws.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long, default_value_t = 4000)]
        draws: usize,
        #[arg(long, default_value_t = 1000)]
        burnin: usize,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Chi-square df for dp-inform; defaults to max(1, round(J/10))
        #[arg(long)]
        df: Option<u32>,
        /// Draw file; `.bin` selects the binary format
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize posterior draws into site estimates.
    Summarize {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Model label to record in the estimates file
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Losses of estimates against true effects.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Informative Gamma hyperprior for the DP concentration.
    Calibrate {
        #[arg(long = "J")]
        j: usize,
        #[arg(long)]
        df: u32,
        /// Also write {J, df, a, b, kl, pmf_target, pmf_induced} as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Meta-model regression of log losses on the design factors.
    Metamodel {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "log_isel")]
        outcome: String,
        /// Restrict to one true-effect shape
        #[arg(long)]
        shape: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert binary-outcome site tables to effect-size summaries.
    Ingest {
        #[arg(long)]
        binary: PathBuf,
        #[arg(long, default_value_t = 8)]
        min_cell: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tidy tables (and SVGs) for figures.
    Plotdata {
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// `J,a,b` triples for cluster-prior; repeatable
        #[arg(long = "prior")]
        priors: Vec<String>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn default_df(j: usize) -> u32 {
    ((j as f64 / 10.0).round() as u32).max(1)
}

fn cmd_simulate(config: Option<PathBuf>, scenario: Option<PathBuf>, out: Option<PathBuf>, max_items: Option<usize>) -> CmdResult {
    if let Some(path) = scenario {
        let cfg: ScenarioConfig = serde_json::from_str(&fs::read_to_string(&path)?).map_err(Error::from)?;
        let sc = cfg.scenario()?;
        let out = out.ok_or_else(|| Failure::Input("--out is required with --scenario".into()))?;
        fs::create_dir_all(&out)?;
        for rep in 0..cfg.reps {
            let mut rng = seed_for(cfg.seed, &sc.id(), rep as u64, "data").rng();
            let g = generate(&sc, &mut rng)?;
            io::write_dataset(&out.join(format!("sites_rep{rep}.csv")), &g.data)?;
            io::write_truth(&out.join(format!("truth_rep{rep}.csv")), &g.data.site_ids(), &g.tau_true)?;
        }
        println!("scenario={} reps={}", sc.id(), cfg.reps);
        return Ok(());
    }
    let path = config.ok_or_else(|| Failure::Input("one of --config or --scenario is required".into()))?;
    let mut cfg = CampaignConfig::from_json_file(&path)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let campaign = cfg.campaign()?;
    let outcome = run_campaign(&campaign, &RunOptions { max_items, threads: None })?;
    println!(
        "items={}/{} new={} rows={} failures={} finished={}",
        outcome.completed_items, outcome.total_items, outcome.newly_run, outcome.rows, outcome.failures, outcome.finished
    );
    if outcome.finished {
        println!("results={}", outcome.results_path.display());
    }
    if outcome.failures > 0 {
        return Err(Failure::Numerical(format!("{} estimator runs failed; see failures.csv", outcome.failures)));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(data: &Path, model: Model, draws: usize, burnin: usize, thin: usize, seed: u64, df: Option<u32>, out: &Path) -> CmdResult {
    let d: TrialDataset = io::read_dataset(data)?;
    let mcmc = McmcConfig {
        draws_kept: draws,
        burn_in: burnin,
        thin,
        seed,
    };
    mcmc.validate()?;
    let mut rng = rng_from_seed(seed);
    let (file, sigma_hat) = match model {
        Model::Gaussian => {
            let post = fit_gaussian_with_rng(&d, &GaussianConfig::new(mcmc), &mut rng)?;
            let s = median(&post.sigma_draws);
            let extras = vec![("tau".to_string(), post.tau_draws), ("sigma".to_string(), post.sigma_draws)];
            (DrawFile::new(post.draws, extras)?, s)
        }
        Model::DpDiffuse | Model::DpInform => {
            let h = if model == Model::DpDiffuse {
                diffuse_hyper(d.len())?
            } else {
                let df = df.unwrap_or_else(|| default_df(d.len()));
                let cal = calibrate_inform(d.len(), df)?;
                eprintln!("dp-inform prior: a={:.2} b={:.2} (df={df})", cal.hyper.a, cal.hyper.b);
                cal.hyper
            };
            let post = fit_dp_with_rng(&d, &DpConfig::gamma(h.a, h.b, mcmc), &mut rng)?;
            // the DP prior has no single spread parameter; use the
            // cross-site SD of each joint draw
            let sds: Vec<f64> = post.draws.rows().map(sample_sd).collect();
            let k: Vec<f64> = post.k_draws.iter().map(|&k| k as f64).collect();
            let extras = vec![
                ("tau".to_string(), post.base_tau_draws),
                ("sigma".to_string(), post.base_sigma_draws),
                ("alpha".to_string(), post.alpha_draws),
                ("K".to_string(), k),
            ];
            (DrawFile::new(post.draws, extras)?, median(&sds))
        }
    };
    file.write(out)?;
    let info = informativeness(&d, sigma_hat * sigma_hat)?;
    println!("sigma_hat={sigma_hat:.6}");
    println!("I={:.6}", info.value());
    Ok(())
}

fn cmd_summarize(draws: &Path, method: Method, model: Option<Model>, out: &Path) -> CmdResult {
    let file = DrawFile::read(draws)?;
    let mut est = summarize(&file.draws, method)?;
    est.model = model;
    io::write_estimates(out, &est)?;
    if method == Method::Cb {
        let st = posterior_stats(&file.draws)?;
        let n = est.estimates.len() as f64;
        let mean = est.estimates.iter().sum::<f64>() / n;
        let var = est.estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
        println!("cb_variance={var:.12} sigma_hat2={:.12}", st.sigma_hat * st.sigma_hat);
    }
    println!("sites={}", est.len());
    Ok(())
}

fn cmd_evaluate(est_path: &Path, truth_path: &Path, out: &Path) -> CmdResult {
    let est = io::read_estimates(est_path)?;
    let (ids, tau) = io::read_truth(truth_path)?;
    let aligned = io::align_by_site(&est.site_ids, &ids, &tau)?;
    let r = LossReport::compute(&est.estimates, &aligned)?;
    let model = est.model.map(Model::label).unwrap_or("");
    let body = format!(
        "model,method,rmse,isel,mselp,mse_p90\n{model},{},{},{},{},{}\n",
        est.method, r.rmse, r.isel, r.mselp, r.mse_p90
    );
    fs::write(out, body)?;
    println!("rmse={} isel={} mselp={} mse_p90={}", r.rmse, r.isel, r.mselp, r.mse_p90);
    Ok(())
}

fn cmd_calibrate(j: usize, df: u32, out: Option<PathBuf>) -> CmdResult {
    let cal = calibrate_inform(j, df)?;
    println!("a={:.2} b={:.2} kl={:.6}", cal.hyper.a, cal.hyper.b, cal.kl);
    if let Some(path) = out {
        let json = serde_json::json!({
            "J": j,
            "df": df,
            "a": cal.hyper.a,
            "b": cal.hyper.b,
            "kl": cal.kl,
            "pmf_target": cal.target.pmf(),
            "pmf_induced": cal.induced.pmf(),
        });
        fs::write(path, serde_json::to_string_pretty(&json).map_err(Error::from)? + "\n")?;
    }
    Ok(())
}

fn cmd_metamodel(results: &Path, outcome: &str, shape: Option<String>, out: &Path) -> CmdResult {
    let outcome: Outcome = outcome.parse()?;
    let shape: Option<ShapeKind> = shape.map(|s| s.parse()).transpose()?;
    let rows = io::read_results(results)?;
    let (meta_rows, dropped) = metamodel::rows_from_results(&rows, outcome, shape)?;
    let design = metamodel::build_design(&metamodel::FACTORS, &meta_rows, &metamodel::reference_map())?;
    let fit = metamodel::fit_ols_crse(&design)?;
    fs::create_dir_all(out)?;

    let mut coef = String::from("term,estimate,std_error\n");
    for ((name, b), se) in fit.names.iter().zip(fit.coefficients.iter()).zip(fit.std_errors()) {
        coef.push_str(&format!("{name},{b},{se}\n"));
    }
    fs::write(out.join("coefficients.csv"), coef)?;

    let mut pred = format!("{},log_pred,lower,upper,change\n", metamodel::FACTORS.join(","));
    for (levels, p) in metamodel::predict_observed(&fit, &meta_rows)? {
        pred.push_str(&format!("{},{},{},{},{}\n", levels.join(","), p.point, p.lower, p.upper, p.change));
    }
    fs::write(out.join("predictions.csv"), pred)?;

    let reference: Vec<&str> = fit.factors.iter().map(|f| f.levels[0].as_str()).collect();
    let rp = metamodel::predict(&fit, &reference)?;
    println!(
        "outcome={outcome} rows={} clusters={} columns={} dropped={dropped}",
        fit.n_obs,
        fit.n_clusters,
        fit.names.len()
    );
    println!("reference_change={}", rp.change);
    Ok(())
}

fn cmd_ingest(binary: &Path, min_cell: u64, out: &Path) -> CmdResult {
    let tables = io::read_binary_tables(binary)?;
    let ing = ingest_binary_sites(&tables, min_cell)?;
    io::write_dataset(out, &ing.dataset)?;
    println!("kept={} dropped={}", ing.dataset.len(), ing.dropped.len());
    for id in &ing.dropped {
        println!("dropped {id}");
    }
    Ok(())
}

fn parse_prior(s: &str) -> Result<(usize, f64, f64), Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Failure::Input(format!("--prior expects J,a,b; got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok((
        parts[0].parse().map_err(|_| bad())?,
        parts[1].parse().map_err(|_| bad())?,
        parts[2].parse().map_err(|_| bad())?,
    ))
}

fn cmd_plotdata(results: Option<PathBuf>, kind: &str, estimates: Option<PathBuf>, priors: &[String], bins: usize, out: &Path) -> CmdResult {
    let need_results = || -> Result<Vec<io::ResultRow>, Failure> {
        let p = results.as_ref().ok_or_else(|| Failure::Input(format!("--results is required for {kind}")))?;
        Ok(io::read_results(p)?)
    };
    match kind {
        "factor-effects" => {
            let rows = need_results()?;
            fs::create_dir_all(out)?;
            let mut all = String::new();
            for outcome in [Outcome::LogRmse, Outcome::LogIsel, Outcome::LogMselp] {
                let (fit, _) = metamodel::fit_campaign(&rows, outcome, None)?;
                let csv = plotdata::factor_effects_csv(outcome, &plotdata::factor_effects(&fit));
                if all.is_empty() {
                    all.push_str(&csv);
                } else {
                    all.push_str(csv.split_once('\n').map_or("", |x| x.1));
                }
            }
            fs::write(out.join("factor_effects.csv"), all)?;
        }
        "best-combo" => {
            let rows = need_results()?;
            fs::create_dir_all(out)?;
            fs::write(out.join("best_combo.csv"), plotdata::best_combos_csv(&plotdata::best_combos(&rows)))?;
        }
        "edf-hist" => {
            let p = estimates.ok_or_else(|| Failure::Input("--estimates is required for edf-hist".into()))?;
            let est = io::read_estimates(&p)?;
            let h = plotdata::histogram(&est.estimates, bins)?;
            fs::create_dir_all(out)?;
            fs::write(out.join("edf_hist.csv"), plotdata::histogram_csv(&h))?;
            let title = format!("Estimates ({})", est.method);
            fs::write(out.join("edf_hist.svg"), plotdata::histogram_svg(&h, &title))?;
        }
        "cluster-prior" => {
            let specs = if priors.is_empty() {
                vec![(50, 2.5, 0.1), (50, 1.60, 1.22)]
            } else {
                priors.iter().map(|s| parse_prior(s)).collect::<Result<Vec<_>, _>>()?
            };
            let curves = plotdata::cluster_prior_curves(&specs)?;
            fs::create_dir_all(out)?;
            fs::write(out.join("cluster_prior.csv"), plotdata::cluster_prior_csv(&curves))?;
            fs::write(out.join("cluster_prior.svg"), plotdata::cluster_prior_svg(&curves))?;
            for c in &curves {
                let p = cluster_prior(c.j, c.a, c.b)?;
                println!("J={} a={} b={} mode={} mean={:.3}", c.j, c.a, c.b, p.mode(), p.mean());
            }
        }
        other => return Err(Error::UnknownKind(other.to_string()).into()),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Simulate { config, scenario, out, max_items } => cmd_simulate(config, scenario, out, max_items),
        Command::Fit {
            data,
            model,
            draws,
            burnin,
            thin,
            seed,
            df,
            out,
        } => cmd_fit(&data, model.into(), draws, burnin, thin, seed, df, &out),
        Command::Summarize { draws, method, model, out } => cmd_summarize(&draws, method.into(), model.map(Into::into), &out),
        Command::Evaluate { est, truth, out } => cmd_evaluate(&est, &truth, &out),
        Command::Calibrate { j, df, out } => cmd_calibrate(j, df, out),
        Command::Metamodel { results, outcome, shape, out } => cmd_metamodel(&results, &outcome, shape, &out),
        Command::Ingest { binary, min_cell, out } => cmd_ingest(&binary, min_cell, &out),
        Command::Plotdata {
            results,
            kind,
            estimates,
            priors,
            bins,
            out,
        } => cmd_plotdata(results, &kind, estimates, &priors, bins, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = std::env::var("MST_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon_pool(n);
    }
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Input(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Ok(Err(Failure::Numerical(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(_) => ExitCode::from(4),
    }
}

fn rayon_pool(n: usize) -> Result<(), String> {
    multisite::set_global_threads(n).map_err(|e| e.to_string())
}
