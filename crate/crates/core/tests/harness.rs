use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use multisite::datagen::{GShape, Scenario};
use multisite::harness::{run_campaign, Campaign, CampaignConfig, RunOptions, CHECKPOINT_FILE, RESULTS_FILE};
use multisite::io::{read_results, ResultRow};
use multisite::mcmc::McmcConfig;
use multisite::plotdata::best_combos;
use multisite::rng::seed_for;
use multisite::summaries::{Method, Model};
use rand::Rng;

fn tiny(dir: &Path, reps: u32) -> Campaign {
    let scenarios = vec![
        Scenario::new(10, 20.0, 0.5, 0.2, GShape::Gaussian).unwrap(),
        Scenario::new(10, 40.0, 0.0, 0.1, GShape::with_defaults(multisite::datagen::ShapeKind::GaussianMixture)).unwrap(),
    ];
    Campaign::new(scenarios, reps, McmcConfig::new(200, 100, 0), 99, dir.to_path_buf()).unwrap()
}

fn results_bytes(dir: &Path) -> Vec<u8> {
    fs::read(dir.join(RESULTS_FILE)).unwrap()
}

#[test]
fn one_scenario_two_reps_gives_eighteen_rows() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::new(10, 20.0, 0.0, 0.15, GShape::Gaussian).unwrap();
    let c = Campaign::new(vec![sc.clone()], 2, McmcConfig::new(200, 100, 0), 5, dir.path().to_path_buf()).unwrap();
    let out = run_campaign(&c, &RunOptions::default()).unwrap();
    assert!(out.finished);
    assert_eq!((out.total_items, out.rows, out.failures), (2, 18, 0));
    let rows = read_results(&out.results_path).unwrap();
    assert_eq!(rows.len(), 18);
    let combos: HashSet<(u32, Model, Method)> = rows.iter().map(|r| (r.rep, r.model, r.method)).collect();
    assert_eq!(combos.len(), 18);
    assert!(rows.iter().all(|r| r.scenario_id == sc.id()));
    for r in &rows {
        assert!(r.rmse.is_finite() && r.isel >= 0.0 && r.mselp >= 0.0 && r.mse_p90 >= 0.0);
    }
}

#[test]
fn informativeness_is_shared_within_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_campaign(&tiny(dir.path(), 2), &RunOptions::default()).unwrap();
    let rows = read_results(&out.results_path).unwrap();
    let mut by_item: HashMap<(String, u32), Vec<f64>> = HashMap::new();
    for r in rows {
        by_item.entry((r.scenario_id, r.rep)).or_default().push(r.informativeness);
    }
    assert_eq!(by_item.len(), 4);
    for v in by_item.values() {
        assert_eq!(v.len(), 9);
        assert!(v.iter().all(|i| *i == v[0] && *i > 0.0 && *i < 1.0));
    }
}

#[test]
fn streams_are_keyed() {
    let a = seed_for(1, "J25_n10_cv0_s0.05_gaussian", 0, "data");
    assert_eq!(a.id64(), seed_for(1, "J25_n10_cv0_s0.05_gaussian", 0, "data").id64());
    let mut r1 = a.rng();
    let mut r2 = seed_for(1, "J25_n10_cv0_s0.05_gaussian", 0, "data").rng();
    assert_eq!(r1.random::<u64>(), r2.random::<u64>());
    let others = [
        seed_for(2, "J25_n10_cv0_s0.05_gaussian", 0, "data"),
        seed_for(1, "J25_n10_cv0_s0.10_gaussian", 0, "data"),
        seed_for(1, "J25_n10_cv0_s0.05_gaussian", 1, "data"),
        seed_for(1, "J25_n10_cv0_s0.05_gaussian", 0, "fit:gaussian"),
    ];
    for o in &others {
        assert_ne!(o.id64(), a.id64());
    }
}

#[test]
fn a_million_streams_do_not_collide() {
    let mut seen = HashSet::with_capacity(1_000_000);
    for s in 0..100u64 {
        let id = format!("scenario{s}");
        for rep in 0..10_000u64 {
            assert!(seen.insert(seed_for(7, &id, rep, "data").id64()));
        }
    }
    assert_eq!(seen.len(), 1_000_000);
}

#[test]
fn reruns_are_byte_identical() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_campaign(&tiny(d1.path(), 2), &RunOptions::default()).unwrap();
    let opts = RunOptions {
        threads: Some(2),
        ..RunOptions::default()
    };
    run_campaign(&tiny(d2.path(), 2), &opts).unwrap();
    assert_eq!(results_bytes(d1.path()), results_bytes(d2.path()));
}

#[test]
fn interrupted_campaign_resumes_to_the_same_results() {
    let (full, cut) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_campaign(&tiny(full.path(), 2), &RunOptions::default()).unwrap();

    let c = tiny(cut.path(), 2);
    let first = run_campaign(
        &c,
        &RunOptions {
            max_items: Some(1),
            threads: Some(1),
        },
    )
    .unwrap();
    assert!(!first.finished);
    assert_eq!((first.newly_run, first.completed_items), (1, 1));
    assert!(!cut.path().join(RESULTS_FILE).exists());

    // a write torn mid-line is dropped on resume
    let mut f = fs::OpenOptions::new().append(true).open(cut.path().join(CHECKPOINT_FILE)).unwrap();
    f.write_all(b"{\"scenario_id\":\"J10_n2").unwrap();
    drop(f);

    let second = run_campaign(&c, &RunOptions::default()).unwrap();
    assert!(second.finished);
    assert_eq!(second.newly_run, 3);
    assert_eq!(results_bytes(full.path()), results_bytes(cut.path()));

    // nothing left to do
    let third = run_campaign(&c, &RunOptions::default()).unwrap();
    assert_eq!(third.newly_run, 0);
    assert_eq!(results_bytes(full.path()), results_bytes(cut.path()));
}

#[test]
fn campaign_validation() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::new(10, 20.0, 0.0, 0.1, GShape::Gaussian).unwrap();
    assert!(Campaign::new(vec![sc.clone()], 0, McmcConfig::new(10, 10, 0), 0, dir.path().into()).is_err());
    assert!(Campaign::new(vec![sc.clone(), sc], 1, McmcConfig::new(10, 10, 0), 0, dir.path().into()).is_err());
}

#[test]
fn config_defaults_and_inform_df() {
    let json = r#"{"grid":{"J":[25,100],"n_bar":[10],"cv":[0],"sigma":[0.1],"g_shape":["gaussian","mixture"]},"inform_df":{"25":3}}"#;
    let cfg: CampaignConfig = serde_json::from_str(json).unwrap();
    assert_eq!(cfg.reps, 100);
    let c = cfg.campaign().unwrap();
    assert_eq!(c.scenarios.len(), 4);
    assert_eq!(c.inform_df_for(25), 3);
    assert_eq!(c.inform_df_for(100), 10);
    assert_eq!(c.inform_df_for(50), 5);
}

fn row(sid: &str, rep: u32, model: Model, method: Method, loss: f64) -> ResultRow {
    ResultRow {
        scenario_id: sid.into(),
        rep,
        model,
        method,
        rmse: loss,
        isel: loss,
        mselp: loss,
        mse_p90: loss,
        informativeness: 0.3,
    }
}

#[test]
fn best_combo_finds_the_dominating_estimator() {
    let mut rows = Vec::new();
    for rep in 0..5 {
        for model in Model::ALL {
            for method in Method::ALL {
                let loss = if (model, method) == (Model::DpInform, Method::Cb) { 0.1 } else { 1.0 + rep as f64 };
                rows.push(row("A", rep, model, method, loss));
                let loss_b = if (model, method) == (Model::Gaussian, Method::Gr) { 0.2 } else { 0.9 };
                rows.push(row("B", rep, model, method, loss_b));
            }
        }
    }
    let best = best_combos(&rows);
    assert_eq!(best.len(), 8);
    for b in best {
        let want = if b.scenario_id == "A" { (Model::DpInform, Method::Cb) } else { (Model::Gaussian, Method::Gr) };
        assert_eq!((b.model, b.method), want, "{} {}", b.scenario_id, b.loss);
    }
}
