use std::fs;
use std::path::{Path, PathBuf};

use aggronet::datapipe::{
    decode_ppm, load_dataset, rescale, resize_bilinear, synth_dataset, write_dataset, Dataset, ImageSource,
};
use aggronet::evalreport::{
    confusion, curves_svg, emit, format_report_table, report_from_confusion, roc_one_vs_rest, EmitInput,
};
use aggronet::layers::Mode;
use aggronet::model::{build, load_checkpoint, save_checkpoint, Model, ModelError};
use aggronet::rng::seeded;
use aggronet::train::{evaluate, split, train_loop, History, Partition, SplitAssignment, TrainError};
use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::hash::{blob_id, tree_id};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const RUN_MANIFEST: &str = "run.json";

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn spec_error(e: ModelError) -> anyhow::Error {
    match e {
        ModelError::InvalidSpec { field, msg } => config_error(format!("model.{field}: {msg}")),
        other => config_error(format!("model: {other}")),
    }
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate(true)?;
    match (&cfg.data, &cfg.synth) {
        (Some(root), _) => Ok(load_dataset(root)?),
        (None, Some(s)) => Ok(synth_dataset(s.per_class, s.classes, s.size, cfg.seed)?),
        (None, None) => unreachable!("validated"),
    }
}

fn split_for(cfg: &RunConfig, n: usize) -> Result<SplitAssignment> {
    let counts = cfg.split.resolve(n)?;
    split(n, counts, cfg.seed).map_err(|e| config_error(format!("split: {e}")))
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let Some(s) = cfg.synth else {
        return Err(config_error("synth: the synth command needs a `[synth]` table"));
    };
    cfg.validate(false)?;
    let ds = synth_dataset(s.per_class, s.classes, s.size, cfg.seed)?;
    write_dataset(&ds, &cfg.out)?;
    println!(
        "wrote {} classes x {} images ({} files) to {}",
        ds.class_names.len(),
        s.per_class,
        ds.len(),
        cfg.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config: &'a RunConfig,
    class_names: &'a [String],
    split: [usize; 3],
    parameters: usize,
    /// Hash over the resolved config (minus the output path) and every
    /// dataset file.
    input_hash: String,
}

fn input_hash(cfg: &RunConfig, ds: &Dataset) -> Result<String> {
    let mut echo = cfg.clone();
    echo.out = PathBuf::new();
    echo.data = None;
    let mut entries = vec![(
        "config.json".to_string(),
        blob_id(serde_json::to_string(&echo)?.as_bytes()),
    )];
    for ex in &ds.examples {
        if let ImageSource::File(path) = &ex.source {
            let rel = cfg
                .data
                .as_deref()
                .and_then(|root| path.strip_prefix(root).ok())
                .unwrap_or(path);
            let bytes = fs::read(path).with_context(|| path.display().to_string())?;
            entries.push((format!("data/{}", rel.display()), blob_id(&bytes)));
        }
    }
    Ok(tree_id(&mut entries))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let ds = load_data(cfg)?;
    let k = ds.class_names.len();
    if k < 2 {
        return Err(config_error(format!("data: need at least 2 classes, found {k}")));
    }
    let spec = cfg.model.spec(k);
    spec.validate().map_err(spec_error)?;
    let prepared = ds.prepare(spec.input_size)?;
    let assignment = split_for(cfg, prepared.len())?;
    let mut model = build(&spec, cfg.seed).map_err(spec_error)?;
    model.set_class_names(ds.class_names.clone())?;
    log::info!("{} parameters, {} examples", model.param_count(), prepared.len());

    let history = train_loop(&mut model, &prepared, &assignment, &cfg.train_config())?;

    fs::create_dir_all(&cfg.out).with_context(|| cfg.out.display().to_string())?;
    save_checkpoint(&model, cfg.out.join(CHECKPOINT_DIR))?;
    fs::write(cfg.out.join("history.csv"), history.to_csv())?;
    fs::write(
        cfg.out.join("history.json"),
        serde_json::to_string_pretty(&history)? + "\n",
    )?;
    let manifest = RunManifest {
        config: cfg,
        class_names: &ds.class_names,
        split: Partition::ALL.map(|p| assignment.count(p)),
        parameters: model.param_count(),
        input_hash: input_hash(cfg, &ds)?,
    };
    fs::write(
        cfg.out.join(RUN_MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    match history.epochs() {
        0 => println!("0 epochs requested; wrote the initial model"),
        n => println!(
            "trained {n} epochs: train_acc={:.4} val_acc={:.4}",
            history.train_accuracy[n - 1],
            history.val_accuracy[n - 1]
        ),
    }
    println!("checkpoint: {}", cfg.out.join(CHECKPOINT_DIR).display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, partition: Partition) -> Result<()> {
    let model: Model = load_checkpoint(checkpoint)?;
    let ds = load_data(cfg)?;
    let k = model.spec.class_count;
    if ds.class_names.len() != k {
        return Err(config_error(format!(
            "data: dataset has {} classes but the checkpoint predicts {k}",
            ds.class_names.len()
        )));
    }
    if ds.class_names != model.class_names {
        log::warn!("dataset class names differ from the checkpoint's; using the checkpoint's");
    }
    let prepared = ds.prepare(model.spec.input_size)?;
    let assignment = split_for(cfg, prepared.len())?;
    let idx = assignment.indices(partition);
    if idx.is_empty() {
        return Err(config_error(format!(
            "partition: the {} partition is empty",
            partition.name()
        )));
    }
    let result = evaluate(&model, &prepared, &idx)?;
    let cm = confusion(&result.predictions, &result.labels, k)?.with_names(model.class_names.clone());
    let report = report_from_confusion(&cm)?;
    let mut rocs = Vec::new();
    for c in 0..k {
        match roc_one_vs_rest(&result.scores, &result.labels, c) {
            Ok(r) => rocs.push(r),
            Err(e) => log::warn!("no ROC for {}: {e}", model.class_names[c]),
        }
    }
    let out = cfg.out.join("eval").join(partition.name());
    fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
    emit(
        EmitInput {
            report: &report,
            confusion: &cm,
            rocs: &rocs,
            history: None,
            svg: true,
        },
        &out,
    )?;
    println!("{} partition, {} examples\n", partition.name(), idx.len());
    print!("{}", format_report_table(&report));
    println!("\nreports: {}", out.display());
    Ok(())
}

pub fn predict(checkpoint: &Path, image: &Path) -> Result<()> {
    let model: Model = load_checkpoint(checkpoint)?;
    let bytes = fs::read(image).with_context(|| image.display().to_string())?;
    let img = decode_ppm(&bytes).with_context(|| image.display().to_string())?;
    let [h, w] = model.spec.input_size;
    let mut x = rescale(&img);
    if (x.width, x.height) != (w, h) {
        log::info!("resizing {}x{} to {w}x{h}", x.width, x.height);
        x = resize_bilinear(&x, w, h);
    }
    let probs = model.forward_hybrid(&x.to_tensor()?, Mode::Infer, &mut seeded(0))?;
    let p = probs.data();
    let top = aggronet::train::argmax(p);
    let width = model.class_names.iter().map(String::len).max().unwrap_or(0);
    println!("prediction: {} ({:.4})", model.class_names[top], p[top]);
    for (name, v) in model.class_names.iter().zip(p) {
        println!("  {name:<width$}  {v:.4}");
    }
    Ok(())
}

pub fn report(out: &Path) -> Result<()> {
    let path = out.join("history.csv");
    let text = fs::read_to_string(&path).with_context(|| path.display().to_string())?;
    let h = History::from_csv(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let svg = out.join("curves.svg");
    fs::write(&svg, curves_svg(&h))?;
    let n = h.epochs();
    if n == 0 {
        println!("history is empty");
    } else {
        let best = (0..n)
            .max_by(|&a, &b| h.val_accuracy[a].total_cmp(&h.val_accuracy[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        println!("epochs: {n}");
        println!("final train accuracy: {:.4}", h.train_accuracy[n - 1]);
        println!("final val accuracy:   {:.4}", h.val_accuracy[n - 1]);
        println!("best val accuracy:    {:.4} (epoch {best})", h.val_accuracy[best]);
    }
    println!("curves: {}", svg.display());
    Ok(())
}

/// Process exit code for an error: 2 for configuration and validation
/// problems, 3 for numerical divergence, 1 otherwise.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<TrainError>() {
        Some(TrainError::Divergence { .. }) => 3,
        Some(TrainError::Config(_) | TrainError::EmptyPartition(_)) => 2,
        _ => 1,
    }
}
