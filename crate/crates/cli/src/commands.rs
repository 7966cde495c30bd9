use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde_json::json;
use vix_signals::backtest::{
    fit_fold_model, fixed_action_backtest, prepare, reference_series_metrics, run_all_folds,
    test_rows, write_metrics, write_paths, FoldResult,
};
use vix_signals::curve::{build_curves, estimate_mode, state_vectors, write_curves};
use vix_signals::dynamics::{center_states, fit_var, simulate_index_paths, CurveReturns, VarModel};
use vix_signals::ingest::{parse_panel, validate_panel, FuturesPanel, ParsedPanel};
use vix_signals::network::{build_training_set, train, InputNorm, OutputNorm, QNetwork};
use vix_signals::signal::{contracts_from_action, policy, PortfolioPath};
use vix_signals::synthetic::{write_fixture, FixtureKind, FixtureSpec};
use vix_signals::utility::{Action, ACTIONS};

use crate::config::RunConfig;
use crate::error::CliError;

/// What a command wrote, for the manifest.
type Outputs = Vec<PathBuf>;

fn comment(hash: &str) -> String {
    format!("config_hash={hash}")
}

fn ensure_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    Ok(out)
}

fn check_hash(artifact: &Path, found: Option<String>, expected: &str) -> Result<(), CliError> {
    let found = found.unwrap_or_else(|| "<none>".into());
    if found != expected {
        return Err(CliError::HashMismatch {
            artifact: artifact.display().to_string(),
            expected: expected.to_string(),
            found,
        });
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// `<out>/<command>.manifest.json`: config, seed, data fingerprints and
/// outputs. No timestamps, so reruns are byte-identical.
pub fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    hash: &str,
    outputs: &[PathBuf],
) -> Result<PathBuf, CliError> {
    let out = ensure_out(cfg)?;
    let files: Vec<String> = outputs
        .iter()
        .map(|p| {
            p.file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();
    let effective = cfg.effective();
    let config: serde_json::Map<String, serde_json::Value> = effective
        .iter()
        .filter(|(k, _)| !matches!(**k, "out" | "jobs"))
        .filter(|(k, _)| {
            !crate::config::SETTINGS
                .iter()
                .any(|s| s.key == **k && s.path)
        })
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    let doc = json!({
        "command": command,
        "config_hash": hash,
        "seed": cfg.get("seed"),
        "config": config,
        "data": cfg.data_fingerprints()?,
        "outputs": files,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let path = out.join(format!("{command}.manifest.json"));
    write_text(&path, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    Ok(path)
}

fn parse_inputs(cfg: &RunConfig) -> Result<ParsedPanel, CliError> {
    let futures = cfg.require_path("futures")?;
    let vix = cfg.require_path("vix")?;
    let calendar = match cfg.path("calendar") {
        Some(_) => Some(cfg.require_path("calendar")?),
        None => None,
    };
    Ok(parse_panel(&futures, &vix, calendar.as_deref())?)
}

fn load_panel(cfg: &RunConfig) -> Result<FuturesPanel, CliError> {
    Ok(parse_inputs(cfg)?.panel)
}

pub fn ingest(cfg: &RunConfig, hash: &str) -> Result<Outputs, CliError> {
    let parsed = parse_inputs(cfg)?;
    let report = validate_panel(&parsed.panel);
    let out = ensure_out(cfg)?.join("panel.json");
    let doc = json!({
        "config_hash": hash,
        "panel": parsed.panel,
        "dropped": parsed.dropped,
        "validation": report,
    });
    write_text(&out, &serde_json::to_string(&doc)?)?;
    println!(
        "ingest dates={} dropped={} clean={}",
        parsed.panel.len(),
        parsed.dropped.len(),
        report.is_clean()
    );
    Ok(vec![out])
}

pub fn curves(cfg: &RunConfig, hash: &str) -> Result<Outputs, CliError> {
    let panel = load_panel(cfg)?;
    let curves = build_curves(&panel, cfg.econ()?.dt)?;
    let out = ensure_out(cfg)?.join("curves.csv");
    write_curves(&curves, &out, Some(&comment(hash)))?;
    println!("curves dates={}", curves.len());
    Ok(vec![out])
}

fn fit_model(cfg: &RunConfig) -> Result<VarModel, CliError> {
    let panel = load_panel(cfg)?;
    let bt = cfg.backtest_config()?;
    let prep = prepare(&panel, bt.k, &bt.econ)?;
    if let Some(test) = cfg.parse::<usize>("test_fold")? {
        if test >= bt.k {
            return Err(CliError::Config(format!(
                "test_fold {test} must be below folds {}",
                bt.k
            )));
        }
        return Ok(fit_fold_model(&prep, test, &bt)?);
    }
    let rows = &prep.states.rows;
    let breaks: BTreeSet<usize> = (1..rows.len())
        .filter(|&i| rows[i] != rows[i - 1] + 1)
        .map(|i| i - 1)
        .collect();
    let mode = estimate_mode(&prep.states.states, bt.mode_min_samples)?;
    let psi = center_states(&prep.states.states, &mode)?;
    Ok(VarModel::from_fit(mode, fit_var(&psi, &breaks)?)?)
}

pub fn fit(cfg: &RunConfig, hash: &str) -> Result<Outputs, CliError> {
    let model = fit_model(cfg)?;
    let out = cfg.artifact("model", "model.json");
    ensure_out(cfg)?;
    model.save(&out, Some(hash))?;
    println!(
        "fit dim={} spectral_radius={:.6}",
        model.dim(),
        vix_signals::dynamics::spectral_radius(&model.a_matrix)
    );
    Ok(vec![out])
}

fn load_model(cfg: &RunConfig, hash: &str) -> Result<VarModel, CliError> {
    let path = cfg.artifact("model", "model.json");
    if !path.exists() {
        return Err(CliError::Config(format!(
            "model {} does not exist; run fit first",
            path.display()
        )));
    }
    let (model, found) = VarModel::load(&path)?;
    check_hash(&path, found, hash)?;
    Ok(model)
}

pub fn train_cmd(cfg: &RunConfig, hash: &str) -> Result<Outputs, CliError> {
    let model = load_model(cfg, hash)?;
    let econ = cfg.econ()?;
    let utility = cfg.utility()?;
    let tc = cfg.train_config()?;
    let set = build_training_set(&model, &CurveReturns(econ), &econ, &utility, &tc)?;
    let net = QNetwork::new(tc.architecture.clone(), tc.seed)?
        .with_input_norm(InputNorm::fit(&set.inputs))?
        .with_output_norm(OutputNorm::fit(&set.targets))?;
    let outcome = train(&net, &set, &tc)?;
    ensure_out(cfg)?;
    let net_path = cfg.artifact("network", "network.json");
    outcome.net.save(&net_path, Some(hash))?;

    let log_path = cfg.out_dir().join("train_log.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "batch", "loss"])?;
    for e in &outcome.log {
        w.write_record([e.epoch.to_string(), e.batch.to_string(), e.loss.to_string()])?;
    }
    let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    let mut text = format!("# {}\n", comment(hash)).into_bytes();
    text.extend(body);
    std::fs::write(&log_path, text).map_err(|e| CliError::io(&log_path, e))?;
    println!(
        "train states={} final_loss={:.6e}",
        set.len(),
        outcome.final_loss
    );
    Ok(vec![net_path, log_path])
}

pub fn backtest(cfg: &RunConfig, hash: &str) -> Result<Outputs, CliError> {
    let panel = load_panel(cfg)?;
    let bt = cfg.backtest_config()?;
    let prep = prepare(&panel, bt.k, &bt.econ)?;
    let results = run_all_folds(&prep, &bt)?;
    let out = ensure_out(cfg)?;
    let metrics = out.join("metrics.csv");
    let paths = out.join("path.csv");
    write_metrics(&results, &metrics, Some(&comment(hash)))?;
    write_paths(&results, &paths, Some(&comment(hash)))?;
    for r in &results {
        println!(
            "fold={} start={} end={} profit_pct={:.4} sharpe={:.4}",
            r.fold, r.start, r.end, r.metrics.profit_pct, r.metrics.sharpe
        );
    }
    Ok(vec![metrics, paths])
}

pub fn bench(cfg: &RunConfig, hash: &str) -> Result<Outputs, CliError> {
    let panel = load_panel(cfg)?;
    let bt = cfg.backtest_config()?;
    let prep = prepare(&panel, bt.k, &bt.econ)?;
    let reference = match cfg.path("benchmark") {
        Some(_) => Some(cfg.require_path("benchmark")?),
        None => None,
    };
    let mut results = Vec::new();
    for fold in 0..prep.plan.k {
        for action in ACTIONS {
            results.push(fixed_action_backtest(&prep, fold, action, &bt)?);
        }
        if let Some(file) = &reference {
            let rows = test_rows(&prep, fold);
            let dates = &prep.panel.dates[rows];
            let metrics = reference_series_metrics(file, &dates[1..], &bt.econ)?;
            let (start, end) = prep.plan.bounds[fold];
            results.push(FoldResult {
                fold,
                strategy: "reference".into(),
                start,
                end,
                metrics,
                path: PortfolioPath {
                    dates: Vec::new(),
                    p: Vec::new(),
                    actions: Vec::new(),
                    positions: Vec::new(),
                    costs: Vec::new(),
                    traded: Vec::new(),
                },
            });
        }
    }
    let out = ensure_out(cfg)?.join("bench_metrics.csv");
    write_metrics(&results, &out, Some(&comment(hash)))?;
    println!("bench rows={}", results.len());
    Ok(vec![out])
}

pub fn signal(cfg: &RunConfig, hash: &str) -> Result<Outputs, CliError> {
    let panel = load_panel(cfg)?;
    let econ = cfg.econ()?;
    let curves = build_curves(&panel, econ.dt)?;
    let states = state_vectors(&curves)?;
    let i = match cfg.parse::<NaiveDate>("date")? {
        Some(d) => states
            .dates
            .iter()
            .position(|x| *x == d)
            .ok_or_else(|| CliError::Config(format!("no curve state on {d}")))?,
        None => states
            .len()
            .checked_sub(1)
            .ok_or_else(|| CliError::Config("no usable dates".into()))?,
    };
    let row = states.rows[i];
    let action = match cfg.parse::<Action>("action")? {
        Some(a) => a,
        None => {
            let path = cfg.artifact("network", "network.json");
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "network {} does not exist; run train first or set action",
                    path.display()
                )));
            }
            let (net, found) = QNetwork::load(&path)?;
            check_hash(&path, found, hash)?;
            policy(&net, &states.states[i])?
        }
    };
    let p: f64 = cfg.require("value")?;
    let omega = curves.omega[row];
    let v1 = curves.cmf[row][1];
    let v5 = curves.cmf[row][5];
    let pos = contracts_from_action(p, omega, action, v1, v5, cfg.require("integer_contracts")?);
    // Adding zero turns a negative zero into a plain one.
    let legs = pos.legs().map(|n| n + 0.0);
    let header = "date,p,omega,a1,a5,v1,v5,n1,n2,n5,n6,net";
    let line = format!(
        "{},{},{:.5},{},{},{:.4},{:.4},{},{},{},{},{}",
        states.dates[i],
        p,
        omega,
        action.a1,
        action.a5,
        v1,
        v5,
        legs[0],
        legs[1],
        legs[2],
        legs[3],
        pos.net() + 0.0
    );
    let out = ensure_out(cfg)?.join("signal.csv");
    write_text(&out, &format!("# {}\n{header}\n{line}\n", comment(hash)))?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{header}\n{line}").map_err(|e| CliError::Io(e.to_string()))?;
    Ok(vec![out])
}

pub fn simulate(cfg: &RunConfig, hash: &str) -> Result<Outputs, CliError> {
    let model = load_model(cfg, hash)?;
    let paths = simulate_index_paths(
        &model,
        &cfg.econ()?,
        cfg.require("horizon")?,
        cfg.require("paths")?,
        cfg.seed()?,
    )?;
    let out = ensure_out(cfg)?.join("simulate.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["path", "day", "one_month", "five_month"])?;
    for (p, (one, five)) in paths.one_month.iter().zip(&paths.five_month).enumerate() {
        for (d, (a, b)) in one.iter().zip(five).enumerate() {
            w.write_record([p.to_string(), d.to_string(), a.to_string(), b.to_string()])?;
        }
    }
    let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    let mut text = format!("# {}\n", comment(hash)).into_bytes();
    text.extend(body);
    std::fs::write(&out, text).map_err(|e| CliError::io(&out, e))?;
    println!("simulate paths={}", paths.one_month.len());
    Ok(vec![out])
}

pub fn fixture_spec(cfg: &RunConfig) -> Result<FixtureSpec, CliError> {
    let kind = match cfg
        .get("fixture_kind")
        .unwrap_or("standard")
        .replace('-', "_")
        .as_str()
    {
        "standard" => FixtureKind::Standard,
        "front_contango" => FixtureKind::FrontContango,
        other => return Err(CliError::Config(format!("unknown fixture kind {other:?}"))),
    };
    Ok(FixtureSpec {
        start: cfg.require("fixture_start")?,
        days: cfg.require("fixture_days")?,
        seed: cfg.require("fixture_seed")?,
        kind,
    })
}

/// Fixture files carry no config hash: they are inputs, fingerprinted by
/// content when used.
pub fn fixture(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let spec = fixture_spec(cfg)?;
    let out = ensure_out(cfg)?;
    let panel = write_fixture(&spec, &out)?;
    println!(
        "fixture dates={} first={} last={}",
        panel.len(),
        panel.dates[0],
        panel.dates[panel.len() - 1]
    );
    Ok(["futures.csv", "vix.csv", "calendar.csv"]
        .iter()
        .map(|f| out.join(f))
        .collect())
}
