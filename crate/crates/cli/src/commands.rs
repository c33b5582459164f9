use std::path::{Path, PathBuf};

use rayon::prelude::*;
use snowseg::dataset::{
    load_dataset, load_image, load_manifest, resize_bilinear, resize_nearest, save_label_png,
    ClassTable, Dataset, Role,
};
use snowseg::metrics::{
    bench_prediction, write_report, write_report_json, ConfusionMatrix, IoUReport,
};
use snowseg::model::{
    build_fcn8, forward, init_parameters, load_params, predict_labels, save_params,
};
use snowseg::trainer::{detect_overfitting, run_training_with, DEFAULT_OVERFIT_WINDOW};
use snowseg::{Error, LabelMap, NetworkGraph, ParamSet, Result};

use crate::config::RunConfig;
use crate::palette::Palette;

/// Flags shared by every subcommand; each command reads the ones it needs.
#[derive(Clone, Debug, Default)]
pub struct Flags {
    pub config: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub palette: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub preset: Option<String>,
    pub oracle: bool,
    pub raw: bool,
}

fn required<'a>(flag: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    flag.as_deref()
        .ok_or_else(|| Error::Config(format!("--{name} is required")))
}

fn class_table(path: Option<&Path>) -> Result<ClassTable> {
    match path {
        Some(p) => ClassTable::load(p),
        None => Ok(ClassTable::default()),
    }
}

fn palette(path: Option<&Path>) -> Result<Palette> {
    match path {
        Some(p) => Palette::load(p),
        None => Ok(Palette::default()),
    }
}

fn model_size(graph: &NetworkGraph) -> (usize, usize) {
    let s = graph.layers[0].shape;
    (s.h, s.w)
}

fn check_table(graph: &NetworkGraph, table: &ClassTable) -> Result<()> {
    if graph.config.num_classes != table.len() {
        return Err(Error::Config(format!(
            "model predicts {} classes but the class table lists {}",
            graph.config.num_classes,
            table.len()
        )));
    }
    Ok(())
}

pub fn cmd_train(flags: &Flags) -> Result<()> {
    let mut cfg = RunConfig::load(required(&flags.config, "config")?)?;
    if let Some(seed) = flags.seed {
        cfg.set_seed(seed);
    }
    if let Some(name) = &flags.preset {
        cfg.apply_preset(name)?;
    }
    let out = required(&flags.out, "out")?;
    let table = class_table(flags.classes.as_deref().or(cfg.classes.as_deref()))?;
    cfg.model.num_classes = cfg.num_classes.unwrap_or(table.len());
    let graph = build_fcn8(&cfg.model)?;
    check_table(&graph, &table)?;
    let size = Some(model_size(&graph));
    let train_path = cfg
        .train_manifest
        .as_deref()
        .ok_or_else(|| Error::Config("config must set train_manifest".into()))?;
    let train = load_dataset(&load_manifest(train_path, Role::Train)?, &table, size)?;
    let val = match cfg.val_manifest.as_deref() {
        Some(p) => load_dataset(&load_manifest(p, Role::Val)?, &table, size)?,
        None => {
            eprintln!("note: no val_manifest; validation columns repeat the training set");
            train.clone()
        }
    };
    eprintln!(
        "training {} parameters on {} images ({} validation), batch {} for {} epochs",
        graph.parameter_count(),
        train.len(),
        val.len(),
        cfg.train.batch_size,
        cfg.train.epochs
    );

    let params = init_parameters(&graph, cfg.model.seed);
    let epochs = cfg.train.epochs;
    let (params, log) = run_training_with(&graph, params, &train, &val, &cfg.train, |e, r| {
        eprintln!(
            "epoch {}/{epochs} train_loss={:.6} train_acc={:.4} val_loss={:.6} val_acc={:.4}",
            e + 1,
            r.train_loss,
            r.train_acc,
            r.val_loss,
            r.val_acc
        );
    })?;

    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let model_path = out.join("model.bin");
    let log_path = out.join("train_log.csv");
    save_params(&model_path, &graph, &params)?;
    log.write_csv(&log_path)?;

    let last = log.epochs.last().expect("at least one epoch");
    let onset = match detect_overfitting(&log, DEFAULT_OVERFIT_WINDOW) {
        Ok(Some(e)) => format!("epoch {}", e + 1),
        Ok(None) => "none".into(),
        Err(_) => "n/a".into(),
    };
    println!(
        "trained {} epochs: train_loss={:?} train_acc={:?} val_loss={:?} val_acc={:?} overfitting_onset={onset} model={} log={}",
        log.len(),
        last.train_loss,
        last.train_acc,
        last.val_loss,
        last.val_acc,
        model_path.display(),
        log_path.display()
    );
    Ok(())
}

fn report_paths(out: &Path) -> (PathBuf, PathBuf) {
    (out.to_path_buf(), out.with_extension("json"))
}

fn write_reports(report: &IoUReport, out: &Path) -> Result<()> {
    let (csv, json) = report_paths(out);
    write_report(report, &csv)?;
    write_report_json(report, &json)
}

fn confusion(classes: usize, pairs: &[(&LabelMap, &LabelMap)]) -> Result<ConfusionMatrix> {
    pairs
        .par_iter()
        .map(|(gt, pred)| {
            let mut cm = ConfusionMatrix::new(classes);
            cm.accumulate(gt, pred)?;
            Ok(cm)
        })
        .try_reduce(|| ConfusionMatrix::new(classes), |a, b| a.merge(&b))
}

fn predict_one(
    graph: &NetworkGraph,
    params: &ParamSet,
    image: &snowseg::Tensor,
) -> Result<LabelMap> {
    let logits = forward(graph, params, image)?;
    Ok(predict_labels(&logits)?.remove(0))
}

fn load_eval_set(
    flags: &Flags,
    table: &ClassTable,
    size: Option<(usize, usize)>,
) -> Result<Dataset> {
    let manifest = load_manifest(required(&flags.manifest, "manifest")?, Role::Test)?;
    if manifest.is_empty() {
        return Err(Error::Evaluation("manifest lists no images".into()));
    }
    load_dataset(&manifest, table, size)
}

pub fn cmd_eval(flags: &Flags) -> Result<()> {
    let out = required(&flags.out, "out")?;
    let table = class_table(flags.classes.as_deref())?;
    let (data, preds) = if flags.oracle {
        let data = load_eval_set(flags, &table, None)?;
        let preds: Vec<LabelMap> = data.samples.iter().map(|s| s.label.clone()).collect();
        (data, preds)
    } else {
        let (graph, params) = load_params(required(&flags.model, "model")?)?;
        check_table(&graph, &table)?;
        let data = load_eval_set(flags, &table, Some(model_size(&graph)))?;
        let preds = data
            .samples
            .par_iter()
            .map(|s| predict_one(&graph, &params, &s.image))
            .collect::<Result<Vec<_>>>()?;
        (data, preds)
    };
    let pairs: Vec<_> = data.samples.iter().map(|s| &s.label).zip(&preds).collect();
    let cm = confusion(table.len(), &pairs)?;
    let report = IoUReport::from_confusion(&cm, &table, None)?;
    write_reports(&report, out)?;
    println!(
        "evaluated {} images: mean_iou={:?} pixel_accuracy={:?} report={}",
        data.len(),
        report.mean_iou,
        report.pixel_accuracy,
        out.display()
    );
    Ok(())
}

/// Path of the raw class-id raster written next to `out`.
pub fn raw_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}_raw.png"))
}

pub fn cmd_predict(flags: &Flags) -> Result<()> {
    let (graph, params) = load_params(required(&flags.model, "model")?)?;
    let input = required(&flags.image, "image")?;
    let out = required(&flags.out, "out")?;
    let pal = palette(flags.palette.as_deref())?;
    pal.check_covers(graph.config.num_classes)?;

    let image = load_image(input)?;
    let s = image.shape();
    let (h, w) = model_size(&graph);
    let resized = (s.h, s.w) != (h, w);
    let x = if resized {
        eprintln!(
            "note: {} is {}x{}, resizing to the model's {h}x{w}; the mask is resized back",
            input.display(),
            s.h,
            s.w
        );
        resize_bilinear(&image, h, w)?
    } else {
        image
    };
    let mut label = predict_one(&graph, &params, &x)?;
    if resized {
        label = resize_nearest(&label, s.h, s.w)?;
    }
    let rgb = pal.colorize(&label)?;
    rgb.save(out).map_err(|source| Error::Image {
        path: out.to_path_buf(),
        source,
    })?;
    if flags.raw {
        save_label_png(raw_path(out), &label)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_bench(flags: &Flags) -> Result<()> {
    let (graph, params) = load_params(required(&flags.model, "model")?)?;
    let table = class_table(flags.classes.as_deref())?;
    check_table(&graph, &table)?;
    let manifest = load_manifest(required(&flags.manifest, "manifest")?, Role::Test)?;
    let data = load_dataset(&manifest, &table, Some(model_size(&graph)))?;
    if data.is_empty() {
        return Err(Error::Evaluation("manifest lists no images".into()));
    }
    let (timing, preds) =
        bench_prediction(&data.samples, |s| predict_one(&graph, &params, &s.image))?;
    for (entry, t) in manifest.entries.iter().zip(&timing.per_image_s) {
        println!("{}\t{t:?}", entry.image.display());
    }
    println!("mean_s_per_pic={:?}", timing.mean_s);
    if let Some(out) = &flags.out {
        let pairs: Vec<_> = data.samples.iter().map(|s| &s.label).zip(&preds).collect();
        let cm = confusion(table.len(), &pairs)?;
        let report = IoUReport::from_confusion(&cm, &table, Some(timing.mean_s))?;
        write_reports(&report, out)?;
    }
    Ok(())
}
