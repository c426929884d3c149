use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clot::cost::{structure_matrices_with_radius, CostBundle};
use clot::eval::{band_svg, compute_metrics, match_labels, MatchLevel};
use clot::io::{self, Dataset, SyntheticSpec};
use clot::model::Fault;
use clot::ot::{solve_fused, Marginals, OtConfig};
use clot::pipeline::{self, DecodeSource, TrainConfig, TrainMode, TrainedModel};
use clot::{ClotError, Result};
use serde_json::{json, Value};

/// Worker cap from `CLOT_THREADS`; unset or 0 means every core.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("CLOT_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| ClotError::Config(format!("CLOT_THREADS must be a nonnegative integer, got {v:?}"))),
        _ => Ok(0),
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn synth(spec_path: &Path, out: &Path) -> Result<ExitCode> {
    let text = fs::read_to_string(spec_path).map_err(|e| io::with_path(e.into(), spec_path))?;
    let spec = SyntheticSpec::parse(&text)?;
    let ds = io::generate_synthetic(&spec)?;
    io::write_dataset(out, &ds)?;
    println!(
        "wrote {} videos × {} frames (dim {}, {} labels, {:?} ordering) to {}",
        ds.videos.len(),
        spec.frames_per_video,
        spec.feature_dim,
        spec.label_count(),
        spec.ordering,
        out.display()
    );
    for v in &ds.videos {
        let order: Vec<String> = v.segments.iter().map(|s| s.label.to_string()).collect();
        println!("  {}: {}", v.name, order.join(" "));
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io::with_path(e.into(), p))?;
            io::parse_run_config(&text).map_err(|e| match e {
                ClotError::Config(m) => ClotError::Config(format!("{}: {m}", p.display())),
                other => other,
            })
        }
        None => Ok(TrainConfig::default()),
    }
}

fn action_count(cfg: &TrainConfig, ds: &Dataset) -> Result<usize> {
    if cfg.num_actions > 0 {
        return Ok(cfg.num_actions);
    }
    ds.label_count()
        .ok_or_else(|| ClotError::Config("num_actions is not set and the dataset has no labels or manifest to infer it".into()))
}

pub fn train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
    seed: Option<u64>,
    force: bool,
    threads: usize,
) -> Result<ExitCode> {
    if out.exists() && !force {
        return Err(ClotError::State(format!("{} already exists; pass --force to overwrite", out.display())));
    }
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.threads = threads;
    cfg.validate()?;
    let ds = io::load_dataset(data)?;
    let k = action_count(&cfg, &ds)?;
    let mut log_file = match log {
        Some(p) => Some(BufWriter::new(fs::File::create(p)?)),
        None => None,
    };
    let mut log_err = None;
    let mut record = |video: Option<&str>, step: &pipeline::StepLog| {
        if step.unconverged > 0 {
            eprintln!(
                "warning: epoch {} step {}: {} transport solve(s) hit the iteration limit",
                step.epoch, step.step, step.unconverged
            );
        }
        let Some(f) = log_file.as_mut() else { return };
        let mut v = serde_json::to_value(step).expect("step logs serialize");
        if let (Some(name), Value::Object(map)) = (video, &mut v) {
            map.insert("video".into(), Value::String(name.to_string()));
        }
        if let Err(e) = writeln!(f, "{v}") {
            log_err.get_or_insert(e);
        }
    };

    let models: Vec<(String, TrainedModel)> = match cfg.mode {
        TrainMode::Activity => {
            let m = pipeline::train(&ds.features(), k, &cfg, |s| record(None, s))?;
            vec![(String::new(), m)]
        }
        TrainMode::Video => {
            let mut out = Vec::with_capacity(ds.videos.len());
            for v in &ds.videos {
                let m = pipeline::train(std::slice::from_ref(&v.features), k, &cfg, |s| record(Some(&v.name), s))?;
                out.push((format!("{}/", v.name), m));
            }
            out
        }
    };
    if let Some(e) = log_err {
        return Err(e.into());
    }
    if let Some(mut f) = log_file {
        f.flush()?;
    }
    pipeline::save_models(out, &models)?;
    println!("trained {} model(s) with K={k} on {} videos; checkpoint {}", models.len(), ds.videos.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn model_for<'a>(models: &'a [(String, TrainedModel)], video: &str) -> Result<&'a TrainedModel> {
    if let [(prefix, m)] = models {
        if prefix.is_empty() {
            return Ok(m);
        }
    }
    let want = format!("{video}/");
    models
        .iter()
        .find(|(p, _)| *p == want)
        .map(|(_, m)| m)
        .ok_or_else(|| ClotError::Input(format!("checkpoint has no per-video model for {video}")))
}

pub fn segment(data: &Path, ckpt: &Path, out: &Path, source: DecodeSource, threads: usize) -> Result<ExitCode> {
    let models = pipeline::load_models(ckpt)?;
    let ds = io::load_dataset(data)?;
    let dim = models[0].1.params.config.input_dim;
    if let Some(v) = ds.videos.iter().find(|v| v.features.cols() != dim) {
        return Err(ClotError::Input(format!("{} has feature dimension {}, the model expects {dim}", v.name, v.features.cols())));
    }
    let results = pipeline::parallel_map(ds.videos.len(), threads, |i| {
        let v = &ds.videos[i];
        pipeline::infer(&v.features, model_for(&models, &v.name)?, source)
    })?;
    fs::create_dir_all(out)?;
    let mut summary = Vec::with_capacity(results.len());
    for (v, r) in ds.videos.iter().zip(&results) {
        if !r.converged {
            eprintln!("warning: {}: transport solve hit the iteration limit", v.name);
        }
        io::write_labels(&out.join(format!("{}.txt", v.name)), &r.labels)?;
        let mut rows: Vec<(&str, &[usize])> = Vec::new();
        if let Some(gt) = &v.labels {
            rows.push(("ground truth", gt));
        }
        let pred_title = format!("prediction ({source:?})");
        rows.push((&pred_title, &r.labels));
        fs::write(out.join(format!("{}.svg", v.name)), band_svg(&v.name, &rows))?;
        summary.push(json!({
            "video": v.name,
            "frames": r.labels.len(),
            "source_stage": r.source_stage,
            "converged": r.converged,
            "segments": r.segments,
        }));
    }
    write_json(&out.join("segments.json"), &Value::Array(summary))?;
    println!("segmented {} videos from {:?} into {}", results.len(), source, out.display());
    Ok(ExitCode::SUCCESS)
}

fn label_dir(gt: &Path) -> PathBuf {
    let nested = gt.join("labels");
    if nested.is_dir() {
        nested
    } else {
        gt.to_path_buf()
    }
}

fn read_label_dir(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(ClotError::Input(format!("{} is not a directory", dir.display())));
    }
    io::list_stems(dir, io::LABEL_EXT)
}

pub fn eval(pred_dir: &Path, gt: &Path, level: MatchLevel, out: Option<&Path>, ignore: Option<usize>) -> Result<ExitCode> {
    let gt_dir = label_dir(gt);
    let gt_names = read_label_dir(&gt_dir)?;
    let pred_names = read_label_dir(pred_dir)?;
    if gt_names.is_empty() {
        return Err(ClotError::Input(format!("no ground-truth label files in {}", gt_dir.display())));
    }
    for name in &gt_names {
        if pred_names.binary_search(name).is_err() {
            let missing = pred_dir.join(format!("{name}.{}", io::LABEL_EXT));
            return Err(ClotError::Input(format!("missing prediction {}", missing.display())));
        }
    }
    for name in &pred_names {
        if gt_names.binary_search(name).is_err() {
            let missing = gt_dir.join(format!("{name}.{}", io::LABEL_EXT));
            return Err(ClotError::Input(format!("missing ground truth {}", missing.display())));
        }
    }
    let mut preds = Vec::with_capacity(gt_names.len());
    let mut gts = Vec::with_capacity(gt_names.len());
    for name in &gt_names {
        let file = |dir: &Path| dir.join(format!("{name}.{}", io::LABEL_EXT));
        let (pp, gp) = (file(pred_dir), file(&gt_dir));
        let p = io::read_labels(&pp).map_err(|e| io::with_path(e, &pp))?;
        let g = io::read_labels(&gp).map_err(|e| io::with_path(e, &gp))?;
        if p.len() != g.len() {
            return Err(ClotError::Input(format!("{} has {} frames but {} has {}", pp.display(), p.len(), gp.display(), g.len())));
        }
        preds.push(p);
        gts.push(g);
    }
    let matched = match_labels(&preds, &gts, level, ignore)?;
    let report = compute_metrics(&matched, &gts, ignore)?;
    let mut value = serde_json::to_value(&report)?;
    if let Value::Object(map) = &mut value {
        map.insert("level".into(), serde_json::to_value(level)?);
        map.insert("videos".into(), json!(gt_names.len()));
    }
    if let Some(o) = out {
        write_json(o, &value)?;
    }
    println!(
        "{} videos, {:?} level: MoF {:.4}  F1 {:.4}  mIoU {:.4}",
        gt_names.len(),
        level,
        report.mof,
        report.f1,
        report.miou
    );
    Ok(ExitCode::SUCCESS)
}

pub fn solve(cost_path: &Path, ot: &OtConfig, radius: usize, out: &Path) -> Result<ExitCode> {
    let cost = io::read_features(cost_path).map_err(|e| io::with_path(e, cost_path))?;
    let (n, k) = cost.shape();
    if n == 0 || k == 0 {
        return Err(ClotError::Input(format!("{} holds an empty {n}×{k} cost", cost_path.display())));
    }
    let (rows, cols) = structure_matrices_with_radius(n, k, radius);
    let bundle = CostBundle::new(cost, rows, cols)?;
    let coupling = solve_fused(&bundle, &Marginals::uniform(n, k), ot)?;
    io::write_features(out, &coupling.t)?;
    let sidecar = out.with_extension("json");
    write_json(
        &sidecar,
        &json!({
            "converged": coupling.converged,
            "iterations_used": coupling.iterations_used,
            "objective": coupling.objective,
            "objective_history": coupling.objective_history,
            "rows": n,
            "cols": k,
            "radius": radius,
            "config": ot,
            "row_marginal": coupling.row_marginal,
            "col_marginal": coupling.col_marginal,
        }),
    )?;
    if !coupling.converged {
        eprintln!("warning: solver hit its iteration limit; see {}", sidecar.display());
    }
    println!("coupling {n}×{k} written to {} (converged: {})", out.display(), coupling.converged);
    Ok(ExitCode::SUCCESS)
}

pub fn check_grad(seed: u64, json_out: Option<&Path>, fault: Option<Fault>) -> Result<ExitCode> {
    let report = clot::model::gradcheck::run_suite(seed, fault)?;
    for c in &report.components {
        println!("{:<16} max rel error {:.3e}  {}", c.component, c.max_rel_error, if c.passed { "ok" } else { "FAIL" });
    }
    println!(
        "tolerance {:.0e}, step {:.0e}: {}",
        report.tolerance,
        report.step,
        if report.passed { "all components pass" } else { "gradient check FAILED" }
    );
    if let Some(p) = json_out {
        write_json(p, &serde_json::to_value(&report)?)?;
    }
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(4) })
}
