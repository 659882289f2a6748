//! Subcommand implementations. Every command writes its outputs under the
//! declared `--out`/`--report` path and a manifest beside each output;
//! diagnostics go to stderr.

use std::path::{Path, PathBuf};
use std::time::Instant;

use geofuse_core::dataset::{
    bytes_digest, dataset_digest, input_channel_count, scene_tile, scenes_to_tiles, select,
    split_indices,
};
use geofuse_core::fcn::{build_fcn, load_model, predict, save_model, FcnModel};
use geofuse_core::fusion::{check_alignment, denoise, fuse};
use geofuse_core::label::LabelMap;
use geofuse_core::metrics::{
    gradient_norm, ConfusionMatrix, EvalReport, ReportSummary, SegMetrics,
};
use geofuse_core::pso;
use geofuse_core::raster::{Modality, Raster};
use geofuse_core::synthgen::{generate_dataset, read_scene_dir, write_scene_dir, SceneSample, SceneSpec};
use geofuse_core::tensor::{MacCounter, Tensor};
use geofuse_core::train::{mean_loss, train, BudgetTracker};
use geofuse_core::tune::{
    evaluate_fcn_fitness, protocol_fitness, search_space_from_names, FitnessProtocol,
};
use geofuse_core::{Error, Result};

use crate::config::{EvalSplit, RunConfig};
use crate::manifest::{manifest_path, RunManifest};

/// Scene directories `scene_<k>` under `data`, ordered by index.
fn list_scene_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(data)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(idx) = name.strip_prefix("scene_") {
            if let Ok(k) = idx.parse::<usize>() {
                if entry.path().is_dir() {
                    found.push((k, entry.path()));
                }
            }
        }
    }
    if found.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no scene_<k> directories under {}",
            data.display()
        )));
    }
    found.sort_by_key(|(k, _)| *k);
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn load_scenes(data: &Path) -> Result<Vec<SceneSample>> {
    list_scene_dirs(data)?
        .iter()
        .map(|dir| read_scene_dir(dir))
        .collect()
}

pub fn cmd_gen(
    argv: &str,
    seed: u64,
    count: usize,
    width: usize,
    height: usize,
    out: &Path,
) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidArgument("--count must be at least 1".into()));
    }
    let started = Instant::now();
    let template = SceneSpec {
        width,
        height,
        ..SceneSpec::default()
    };
    let scenes = generate_dataset(seed, count, &template)?;
    std::fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new("gen", argv, seed);
    for (k, scene) in scenes.iter().enumerate() {
        let dir = out.join(format!("scene_{k}"));
        write_scene_dir(scene, &dir)?;
        manifest.add_output_digest(
            &format!("scene_{k}"),
            &geofuse_core::dataset::scene_digest(scene),
        );
    }
    manifest.note("count", count.to_string());
    manifest.note("size", format!("{width}x{height}"));
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.write_beside(&out.join("gen"))?;
    eprintln!("generated {count} scenes under {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_fuse(
    argv: &str,
    lidar_path: &Path,
    sar_path: &Path,
    optical_path: &Path,
    clean: bool,
    out: &Path,
) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("fuse", argv, 0);
    manifest.add_input_file(lidar_path)?;
    manifest.add_input_file(sar_path)?;
    manifest.add_input_file(optical_path)?;

    let mut lidar = Raster::read_file(lidar_path)?;
    let mut sar = Raster::read_file(sar_path)?;
    let mut optical = Raster::read_file(optical_path)?;
    if clean {
        lidar = denoise(&lidar)?;
        sar = denoise(&sar)?;
        optical = denoise(&optical)?;
    }
    let report = check_alignment(&lidar, &sar, &optical, f64::INFINITY);
    let fused = fuse(&lidar, &sar, &optical)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    fused.write_file(out)?;
    manifest.add_output_file(out)?;
    manifest.note("denoised", clean.to_string());
    manifest.note("alignment", report.to_string());
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.write_beside(out)?;
    eprintln!("fused {} channels -> {}", fused.channels(), out.display());
    Ok(())
}

/// Model input raster for one scene under the configured modality.
fn scene_model_input(scene: &SceneSample, modality: Modality, clean: bool) -> Result<Raster> {
    let raster = match modality {
        Modality::Lidar => scene.lidar.clone(),
        Modality::Sar => scene.sar.clone(),
        Modality::Optical => scene.optical.clone(),
        Modality::Fused => {
            if clean {
                fuse(
                    &denoise(&scene.lidar)?,
                    &denoise(&scene.sar)?,
                    &denoise(&scene.optical)?,
                )?
            } else {
                fuse(&scene.lidar, &scene.sar, &scene.optical)?
            }
        }
    };
    if clean && modality != Modality::Fused {
        return denoise(&raster);
    }
    Ok(raster)
}

fn check_num_classes(config: &RunConfig, scenes: &[SceneSample]) -> Result<()> {
    let data_classes = scenes[0].labels.num_classes();
    if data_classes != config.num_classes {
        return Err(Error::InvalidConfig(format!(
            "config num_classes {} does not match the dataset's {data_classes}",
            config.num_classes
        )));
    }
    Ok(())
}

pub fn cmd_train(
    argv: &str,
    data: &Path,
    config_path: &Path,
    budget_seconds: Option<f64>,
    budget_macs: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut config = RunConfig::load(config_path)?;
    if budget_seconds.is_some() {
        config.budget_seconds = budget_seconds;
    }
    if budget_macs.is_some() {
        config.budget_macs = budget_macs;
    }

    let scenes = load_scenes(data)?;
    check_num_classes(&config, &scenes)?;
    let tiles = scenes_to_tiles(&scenes, config.input, config.denoise)?;
    let split = split_indices(tiles.len(), config.train_frac, config.val_frac, config.seed)?;
    let train_tiles = select(&tiles, &split.train);
    let val_tiles = select(&tiles, &split.val);
    if train_tiles.is_empty() {
        return Err(Error::EmptyInput("train split"));
    }

    let in_channels = input_channel_count(&scenes[0], config.input);
    let fcn_config = config.to_fcn_config(in_channels);
    let model = build_fcn(&fcn_config)?;
    let mut budget = BudgetTracker::new(config.budget_seconds, config.budget_macs);
    let (best, history) = train(&model, &train_tiles, &val_tiles, &mut budget)?;
    for e in &history.epochs {
        eprintln!(
            "epoch {}: train {:.4} val {:.4} ({:.1}s, {} MACs)",
            e.epoch, e.train_loss, e.val_loss, e.elapsed_seconds, e.cumulative_macs
        );
    }
    if history.incomplete {
        eprintln!("budget exhausted before the first epoch; saving the initial snapshot");
    }

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_model(&best, out)?;

    let mut manifest = RunManifest::new("train", argv, config.seed);
    manifest.config = config.to_kv();
    manifest.add_input_digest("dataset", &dataset_digest(&scenes));
    manifest.add_output_file(out)?;
    manifest.wall_seconds = budget.elapsed_seconds();
    manifest.mac_count = budget.mac_total();
    manifest.note("split_train", split.train.len().to_string());
    manifest.note("split_val", split.val.len().to_string());
    manifest.note("split_test", split.test.len().to_string());
    manifest.note("epochs_completed", history.epochs.len().to_string());
    manifest.note("incomplete", history.incomplete.to_string());
    if let Some(e) = history.epochs.last() {
        manifest.note("final_train_loss", format!("{}", e.train_loss));
    }
    if let Some(best_val) = history
        .epochs
        .iter()
        .map(|e| e.val_loss)
        .min_by(|a, b| a.partial_cmp(b).unwrap())
    {
        manifest.note("best_val_loss", format!("{best_val}"));
    }
    manifest.write_beside(out)?;
    eprintln!("model written to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_tune(
    argv: &str,
    data: &Path,
    config_path: &Path,
    swarm: usize,
    iters: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let started = Instant::now();
    let mut config = RunConfig::load(config_path)?;
    config.swarm_particles = swarm;
    config.swarm_iters = iters;
    config.seed = seed;
    config.validate()?;

    let scenes = load_scenes(data)?;
    check_num_classes(&config, &scenes)?;
    let tiles = scenes_to_tiles(&scenes, config.input, config.denoise)?;
    let split = split_indices(tiles.len(), config.train_frac, config.val_frac, config.seed)?;
    if split.train.len() < config.tune_train_tiles || split.val.len() < config.tune_val_tiles {
        return Err(Error::InvalidConfig(format!(
            "tune needs {} train and {} val tiles but the split provides {} and {}",
            config.tune_train_tiles,
            config.tune_val_tiles,
            split.train.len(),
            split.val.len()
        )));
    }
    let tune_train = select(&tiles, &split.train[..config.tune_train_tiles]);
    let tune_val = select(&tiles, &split.val[..config.tune_val_tiles]);

    let names: Vec<&str> = config.tune_space.iter().map(|s| s.as_str()).collect();
    let space = search_space_from_names(&names)?;
    let in_channels = input_channel_count(&scenes[0], config.input);
    let protocol = FitnessProtocol {
        base: config.to_fcn_config(in_channels),
        epochs: config.tune_epochs,
        cost_penalty: config.lambda_p,
    };
    let swarm_config = config.to_swarm_config();

    let fitness = |values: &[f64]| -> f64 {
        evaluate_fcn_fitness(values, &space, &protocol, &tune_train, &tune_val)
            .unwrap_or(f64::NAN)
    };
    let result = pso::run(&space, &swarm_config, fitness)?;
    let default_fitness = protocol_fitness(&protocol.base, &protocol, &tune_train, &tune_val)?;

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, pso::position_to_config_fragment(&space, &result.best_position))?;
    let trace_path = {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".trace.csv");
        out.with_file_name(name)
    };
    std::fs::write(&trace_path, pso::trace_to_csv(&result.trace))?;

    let mut manifest = RunManifest::new("tune", argv, seed);
    manifest.config = config.to_kv();
    manifest.add_input_digest("dataset", &dataset_digest(&scenes));
    manifest.add_output_file(out)?;
    manifest.add_output_file(&trace_path)?;
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.note("best_fitness", format!("{}", result.best_fitness));
    manifest.note("default_fitness", format!("{default_fitness}"));
    manifest.note("iterations", (result.trace.len() - 1).to_string());
    manifest.note("converged", result.converged.to_string());
    manifest.write_beside(out)?;
    eprintln!(
        "best fitness {} (default config: {default_fitness}) after {} iterations -> {}",
        result.best_fitness,
        result.trace.len() - 1,
        out.display()
    );
    Ok(())
}

/// Modality an evaluation should feed the model, reconciling the config
/// with the model's channel count.
fn eval_modality(config: &RunConfig, model: &FcnModel) -> Modality {
    if config.input_channels_hint() == model.config.in_channels {
        return config.input;
    }
    match model.config.in_channels {
        3 => Modality::Optical,
        5 => Modality::Fused,
        _ => Modality::Lidar,
    }
}

fn split_selection(config: &RunConfig, n: usize) -> Result<Vec<usize>> {
    Ok(match config.eval_split {
        EvalSplit::All => (0..n).collect(),
        EvalSplit::Train => {
            split_indices(n, config.train_frac, config.val_frac, config.seed)?.train
        }
        EvalSplit::Val => split_indices(n, config.train_frac, config.val_frac, config.seed)?.val,
        EvalSplit::Test => split_indices(n, config.train_frac, config.val_frac, config.seed)?.test,
    })
}

pub fn cmd_eval(
    argv: &str,
    model_path: &Path,
    data: &Path,
    thresholds_path: &Path,
    report_path: &Path,
) -> Result<()> {
    let started = Instant::now();
    let config = RunConfig::load(thresholds_path)?;
    let model = load_model(model_path)?;
    let scenes = load_scenes(data)?;
    let selection = split_selection(&config, scenes.len())?;
    if selection.is_empty() {
        return Err(Error::EmptyInput("evaluation selection"));
    }
    let selected: Vec<SceneSample> = select(&scenes, &selection);
    let modality = eval_modality(&config, &model);

    let mut cm = ConfusionMatrix::new(config.num_classes);
    let mut tiles: Vec<(Tensor, LabelMap)> = Vec::with_capacity(selected.len());
    for scene in &selected {
        let input = scene_model_input(scene, modality, config.denoise)?;
        let pred = predict(&model, &input)?;
        cm.merge(&ConfusionMatrix::from_pair(&pred, &scene.labels)?)?;
        tiles.push(scene_tile(scene, modality, config.denoise)?);
    }
    let metrics = SegMetrics::from_confusion(&cm);
    let mut macs = MacCounter::new();
    let loss = mean_loss(&model, &tiles, &mut macs)?;
    let grad_norm = gradient_norm(&model, &tiles[0].0, &tiles[0].1)?;

    let mut report = EvalReport::new(
        config.dataset_label.clone(),
        metrics,
        loss,
        grad_norm,
        &config.thresholds,
    );
    report.test_set_digest = dataset_digest(&selected);
    let model_bytes = std::fs::read(model_path)?;
    report.model_digest = bytes_digest(&model_bytes);
    // training cost, when the model's manifest is available
    if let Ok(m) = RunManifest::load(manifest_path(model_path)) {
        report.train_macs = m.mac_count;
    }

    if let Some(parent) = report_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(report_path, report.to_kv())?;
    let text_path = {
        let mut name = report_path.file_name().unwrap_or_default().to_os_string();
        name.push(".txt");
        report_path.with_file_name(name)
    };
    std::fs::write(&text_path, report.to_text())?;

    let mut manifest = RunManifest::new("eval", argv, config.seed);
    manifest.config = config.to_kv();
    manifest.add_input_digest("model", &report.model_digest);
    manifest.add_input_digest("dataset", &report.test_set_digest);
    manifest.add_output_file(report_path)?;
    manifest.add_output_file(&text_path)?;
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.mac_count = macs.total();
    manifest.note("eval_split", config.eval_split.name().into());
    manifest.note("modality", modality.name().into());
    manifest.note("scenes", selected.len().to_string());
    manifest.write_beside(report_path)?;

    eprintln!(
        "evaluated {} scenes: accuracy {:.4}, mean IoU {:.4} -> {}",
        selected.len(),
        report.metrics.pixel_accuracy,
        report.metrics.mean_iou,
        report_path.display()
    );
    Ok(())
}

pub fn cmd_predict(argv: &str, model_path: &Path, input: &Path, out: &Path) -> Result<()> {
    let started = Instant::now();
    let model = load_model(model_path)?;
    let raster = Raster::read_file(input)?;
    let labels = predict(&model, &raster)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    labels.write_file(out)?;

    let mut manifest = RunManifest::new("predict", argv, model.config.seed);
    manifest.add_input_file(model_path)?;
    manifest.add_input_file(input)?;
    manifest.add_output_file(out)?;
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.write_beside(out)?;
    eprintln!("labels written to {}", out.display());
    Ok(())
}

struct CompareRow {
    label: String,
    summary: ReportSummary,
    train_seconds: f64,
    mac_count: u64,
}

/// Training cost from a `command=train` manifest in the run directory whose
/// output digest matches the evaluated model.
fn find_train_cost(dir: &Path, model_digest: &str) -> (f64, u64) {
    let mut fallback = None;
    if let Ok(entries) = std::fs::read_dir(dir) {
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().map_or(true, |e| e != "manifest") {
                continue;
            }
            if let Ok(m) = RunManifest::load(&path) {
                if m.command != "train" {
                    continue;
                }
                if m.outputs.iter().any(|(_, d)| d == model_digest) {
                    return (m.wall_seconds, m.mac_count);
                }
                fallback = Some((m.wall_seconds, m.mac_count));
            }
        }
    }
    fallback.unwrap_or((0.0, 0))
}

pub fn cmd_compare(argv: &str, runs: &[PathBuf], out: &Path) -> Result<()> {
    if runs.len() < 2 {
        return Err(Error::InvalidArgument(
            "compare needs at least two run directories".into(),
        ));
    }
    let mut rows = Vec::new();
    for dir in runs {
        let report_file = dir.join("report.kv");
        let text = std::fs::read_to_string(&report_file).map_err(|e| {
            Error::InvalidArgument(format!(
                "run directory {} has no readable report.kv: {e}",
                dir.display()
            ))
        })?;
        let summary = ReportSummary::from_kv(&text)?;
        let (mut train_seconds, mut mac_count) = find_train_cost(dir, &summary.model_digest);
        if mac_count == 0 {
            mac_count = summary.train_macs;
        }
        if train_seconds < 0.0 {
            train_seconds = 0.0;
        }
        rows.push(CompareRow {
            label: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string()),
            summary,
            train_seconds,
            mac_count,
        });
    }

    let digest = &rows[0].summary.test_set_digest;
    for row in &rows[1..] {
        if &row.summary.test_set_digest != digest {
            return Err(Error::InvalidArgument(format!(
                "test-set digests differ: '{}' evaluates {} but '{}' evaluates {}",
                rows[0].label, digest, row.label, row.summary.test_set_digest
            )));
        }
    }

    let mut csv = String::from(
        "model,pixel_accuracy,mean_iou,macro_f1,macro_recall,macro_precision,train_seconds,mac_count\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.label,
            r.summary.pixel_accuracy,
            r.summary.mean_iou,
            r.summary.macro_f1,
            r.summary.macro_recall,
            r.summary.macro_precision,
            r.train_seconds,
            r.mac_count
        ));
    }

    let mut table = format!(
        "{:<24} {:>9} {:>9} {:>9} {:>9} {:>10} {:>10} {:>14}\n",
        "model", "accuracy", "mean_iou", "macro_f1", "recall", "precision", "train_s", "macs"
    );
    for r in &rows {
        table.push_str(&format!(
            "{:<24} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>10.4} {:>10.1} {:>14}\n",
            r.label,
            r.summary.pixel_accuracy,
            r.summary.mean_iou,
            r.summary.macro_f1,
            r.summary.macro_recall,
            r.summary.macro_precision,
            r.train_seconds,
            r.mac_count
        ));
    }

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, &csv)?;
    let text_path = {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".txt");
        out.with_file_name(name)
    };
    std::fs::write(&text_path, &table)?;
    print!("{table}");

    let mut manifest = RunManifest::new("compare", argv, 0);
    for (dir, row) in runs.iter().zip(&rows) {
        manifest.add_input_digest(
            &dir.display().to_string(),
            &row.summary.model_digest,
        );
    }
    manifest.add_output_file(out)?;
    manifest.add_output_file(&text_path)?;
    manifest.write_beside(out)?;
    Ok(())
}
