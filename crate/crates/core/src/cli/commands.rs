use std::fmt;
use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, ImageFormat};

use super::config::Resolver;
use super::{
    CliError, CliResult, ConvertArgs, EvalArgs, GradcheckArgs, PredictArgs, PreprocessArgs, SynthArgs, TrainArgs,
};
use crate::data::{
    binary_to_image, decode_grayscale, load_image_dir, resize_square, write_atomic, DatasetContainer, FitOn,
    MalwareImage, PreprocessOptions, Subset, Width,
};
use crate::error::{Error, Result};
use crate::gradcheck::{self, TOLERANCE};
use crate::model::{
    evaluate, train as run_training, Checkpoint, CsvLog, MetricsSink, ModelKind, ModelSpec, Session, TrainOptions,
};
use crate::svm::Reduction;
use crate::synth::{self, SynthKind};
use crate::tensor::Tensor;

/// `--keep-prob`: a probability or `none`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeepProb(pub Option<f64>);

impl FromStr for KeepProb {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(KeepProb(None));
        }
        s.parse::<f64>()
            .map(|p| KeepProb(Some(p)))
            .map_err(|_| Error::config(format!("keep-prob must be a number or `none`, got `{s}`")))
    }
}

impl fmt::Display for KeepProb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(p) => write!(f, "{p}"),
            None => f.write_str("none"),
        }
    }
}

/// `--hidden 512,256,128`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths(pub Vec<usize>);

impl FromStr for Widths {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Widths)
            .map_err(|_| Error::config(format!("expected comma-separated sizes, got `{s}`")))
    }
}

impl fmt::Display for Widths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

fn parse_opt<T: FromStr<Err = Error>>(s: &Option<String>) -> Result<Option<T>> {
    s.as_deref().map(str::parse).transpose()
}

fn parse_subset(s: &str) -> Result<Subset> {
    match s {
        "test" => Ok(Subset::Test),
        "train" => Ok(Subset::Train),
        _ => Err(Error::config(format!("subset must be `test` or `train`, got `{s}`"))),
    }
}

// -- convert --------------------------------------------------------------

/// Regular, non-hidden files under `dir`, sorted, with paths relative to it.
fn walk(dir: &Path, rel: &Path, out: &mut Vec<(PathBuf, PathBuf)>) -> Result<()> {
    let mut entries = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    for path in entries {
        let name = path.file_name().unwrap_or_default().to_owned();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        if path.is_dir() {
            walk(&path, &rel.join(&name), out)?;
        } else if path.is_file() {
            out.push((path.clone(), rel.join(&name)));
        }
    }
    Ok(())
}

fn encode_png(img: &MalwareImage) -> Result<Vec<u8>> {
    let buf = GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .ok_or_else(|| Error::dim("pixel buffer does not match image size"))?;
    let mut bytes = Cursor::new(Vec::new());
    buf.write_to(&mut bytes, ImageFormat::Png)?;
    Ok(bytes.into_inner())
}

fn slash_path(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

pub(super) fn convert(a: &ConvertArgs, r: &Resolver, out: &mut dyn Write) -> CliResult {
    let input = PathBuf::from(r.require("input", a.input.clone())?);
    let output = PathBuf::from(r.require("output", a.output.clone())?);
    let width: Width = r.get("width", parse_opt(&a.width)?, Width::Auto)?;
    r.echo("convert");

    let mut files = Vec::new();
    if input.is_dir() {
        walk(&input, Path::new(""), &mut files)?;
    } else if input.is_file() {
        files.push((input.clone(), PathBuf::from(input.file_name().unwrap_or_default())));
    } else {
        return Err(Error::input(format!("`{}` does not exist", input.display())).into());
    }

    let mut manifest = csv::Writer::from_writer(Vec::new());
    manifest
        .write_record(["source", "width", "height"])
        .map_err(Error::from)?;
    let mut converted = 0usize;
    for (path, rel) in &files {
        let source = slash_path(rel);
        let img = fs::read(path)
            .map_err(Error::from)
            .and_then(|bytes| binary_to_image(&bytes, width, 0, &source));
        let img = match img {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping `{}`: {e}", path.display());
                continue;
            }
        };
        let mut target = output.join(rel).into_os_string();
        target.push(".png");
        let target = PathBuf::from(target);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&target, &encode_png(&img)?)?;
        manifest
            .write_record([source, img.width.to_string(), img.height.to_string()])
            .map_err(Error::from)?;
        converted += 1;
    }
    if converted == 0 {
        return Err(Error::input(format!("none of {} input files could be converted", files.len())).into());
    }
    fs::create_dir_all(&output)?;
    let manifest = manifest.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&output.join("manifest.csv"), &manifest)?;
    writeln!(
        out,
        "converted {converted} of {} files into {}",
        files.len(),
        output.display()
    )?;
    Ok(())
}

// -- preprocess / synth -----------------------------------------------------

fn print_summary(d: &DatasetContainer, out: &mut dyn Write) -> CliResult {
    writeln!(out, "families: {}", d.num_classes())?;
    for (name, count) in d.class_names.iter().zip(d.class_counts()) {
        writeln!(out, "  {name}: {count}")?;
    }
    writeln!(out, "samples: {}", d.samples())?;
    writeln!(
        out,
        "split: train {} test {} unused {}",
        d.split.train.len(),
        d.split.test.len(),
        d.split.unused.len()
    )?;
    writeln!(out, "standardization checksum: {}", d.stats_checksum())?;
    Ok(())
}

fn fit_on(r: &Resolver, flag: &Option<String>) -> Result<FitOn> {
    r.get("fit-on", parse_opt(flag)?, FitOn::Train)
}

pub(super) fn preprocess(a: &PreprocessArgs, r: &Resolver, out: &mut dyn Write) -> CliResult {
    let data = PathBuf::from(r.require("data", a.data.clone())?);
    let target = PathBuf::from(r.require("out", a.out.clone())?);
    let defaults = PreprocessOptions::default();
    let opts = PreprocessOptions {
        side: r.get("side", a.side, defaults.side)?,
        ratio: r.get("ratio", a.ratio, defaults.ratio)?,
        batch: r.get("batch", a.batch, defaults.batch)?,
        seed: r.get("seed", a.seed, defaults.seed)?,
        fit_on: fit_on(r, &a.fit_on)?,
    };
    r.echo("preprocess");
    let loaded = load_image_dir(&data)?;
    for (path, why) in &loaded.skipped {
        log::warn!("skipped `{}`: {why}", path.display());
    }
    let d = DatasetContainer::from_images(&loaded.images, loaded.class_names, &opts)?;
    d.save(&target)?;
    print_summary(&d, out)
}

pub(super) fn synth(a: &SynthArgs, r: &Resolver, out: &mut dyn Write) -> CliResult {
    let kind: SynthKind = r.get("kind", parse_opt(&a.kind)?, SynthKind::Blobs)?;
    let target = PathBuf::from(r.require("out", a.out.clone())?);
    let samples = r.get("samples", a.samples, 2560)?;
    let seed = r.get("seed", a.seed, 42)?;
    let opts = PreprocessOptions {
        ratio: r.get("ratio", a.ratio, 0.8)?,
        batch: r.get("batch", a.batch, 256)?,
        seed,
        fit_on: fit_on(r, &a.fit_on)?,
        ..PreprocessOptions::default()
    };
    r.echo("synth");
    let d = synth::dataset(kind, samples, seed, &opts)?;
    d.save(&target)?;
    print_summary(&d, out)
}

// -- train ------------------------------------------------------------------

fn resolve_spec(a: &TrainArgs, r: &Resolver, data: &DatasetContainer) -> Result<ModelSpec> {
    let kind: ModelKind = r.require("model", parse_opt(&a.model)?)?;
    let p = ModelSpec::preset(kind);
    let spec = ModelSpec {
        epochs: r.get("epochs", a.epochs, p.epochs)?,
        batch: r.get("batch", a.batch, p.batch)?,
        lr: r.get("lr", a.lr, p.lr)?,
        c: r.get("c", a.c, p.c)?,
        keep_prob: r.get("keep-prob", parse_opt(&a.keep_prob)?, KeepProb(p.keep_prob))?.0,
        seed: r.get("seed", a.seed, p.seed)?,
        reduction: r.get::<Reduction>("reduction", parse_opt(&a.reduction)?, p.reduction)?,
        hidden: r.get("hidden", parse_opt(&a.hidden)?, Widths(p.hidden.clone()))?.0,
        fc_units: r.get("fc-units", a.fc_units, p.fc_units)?,
        kernel: r.get("kernel", a.kernel, p.kernel)?,
        pool_stride: r.get("pool-stride", a.pool_stride, p.pool_stride)?,
        classes: data.num_classes(),
        side: data.side,
        kind,
    };
    spec.validate()?;
    Ok(spec)
}

pub(super) fn train(a: &TrainArgs, r: &Resolver, out: &mut dyn Write) -> CliResult {
    let dataset = PathBuf::from(r.require("dataset", a.dataset.clone())?);
    let target = PathBuf::from(r.require("out", a.out.clone())?);
    let log_path = r.opt("log", a.log.clone())?.map(PathBuf::from);
    let resume = r.opt("resume", a.resume.clone())?.map(PathBuf::from);
    let opts = TrainOptions {
        record_wall_time: !r.get("no-timing", a.no_timing.then_some(true), false)?,
        eval_each_epoch: r.get("eval-each-epoch", a.eval_each_epoch.then_some(true), false)?,
    };
    let data = DatasetContainer::load(&dataset)?;
    let mut session = match &resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            check_stats(&ckpt, &data)?;
            let mut session = ckpt.session;
            if let Some(epochs) = r.opt("epochs", a.epochs)? {
                session.model.set_epochs(epochs);
            }
            session
        }
        None => Session::new(&resolve_spec(a, r, &data)?)?,
    };
    r.echo("train");
    let spec = session.model.spec().clone();
    log::info!(
        "train: {} on {} samples, parameters per layer {:?}",
        spec.kind,
        data.samples(),
        session.model.param_counts()
    );

    let mut csv_log = log_path.as_ref().map(|_| CsvLog::new(Vec::new())).transpose()?;
    let summary = {
        let mut sinks: Vec<&mut dyn MetricsSink> = Vec::new();
        if let Some(l) = csv_log.as_mut() {
            sinks.push(l);
        }
        run_training(&mut session, &data, &mut sinks, &opts)?
    };
    if let (Some(path), Some(l)) = (&log_path, csv_log) {
        write_atomic(path, &l.into_inner()?)?;
    }
    let ckpt = Checkpoint::new(session, data.standardizer.clone(), data.class_names.clone())?;
    ckpt.save(&target)?;

    writeln!(out, "model: {}", spec.kind)?;
    writeln!(out, "steps: {} (total {})", summary.steps_run, summary.total_steps)?;
    writeln!(out, "final loss: {:.6}", summary.last_loss)?;
    writeln!(
        out,
        "training accuracy (final epoch): {:.6}",
        summary.final_epoch_accuracy
    )?;
    writeln!(out, "training accuracy (all steps): {:.6}", summary.mean_batch_accuracy)?;
    for e in &summary.epoch_evals {
        writeln!(out, "epoch {} test accuracy: {:.6}", e.epoch, e.test_accuracy)?;
    }
    Ok(())
}

// -- eval / predict ---------------------------------------------------------

fn check_stats(ckpt: &Checkpoint, data: &DatasetContainer) -> Result<()> {
    if ckpt.class_names != data.class_names {
        return Err(Error::config(format!(
            "checkpoint classes {:?} differ from dataset classes {:?}",
            ckpt.class_names, data.class_names
        )));
    }
    if ckpt.standardizer != data.standardizer {
        return Err(Error::config(format!(
            "checkpoint standardization {} differs from dataset {}",
            crate::data::stats_checksum(&ckpt.standardizer),
            data.stats_checksum()
        )));
    }
    Ok(())
}

pub(super) fn eval(a: &EvalArgs, r: &Resolver, out: &mut dyn Write) -> CliResult {
    let ckpt_path = PathBuf::from(r.require("checkpoint", a.checkpoint.clone())?);
    let dataset = PathBuf::from(r.require("dataset", a.dataset.clone())?);
    let subset = parse_subset(&r.get("subset", a.subset.clone(), "test".to_string())?)?;
    let report_path = r.opt("report", a.report.clone())?.map(PathBuf::from);
    let confusion_path = r.opt("confusion", a.confusion.clone())?.map(PathBuf::from);
    let heatmap_path = r.opt("heatmap", a.heatmap.clone())?.map(PathBuf::from);
    r.echo("eval");

    let ckpt = Checkpoint::load(&ckpt_path)?;
    let data = DatasetContainer::load(&dataset)?;
    check_stats(&ckpt, &data)?;
    let report = evaluate(ckpt.model(), &data, subset)?;
    for k in report.undefined_classes() {
        log::warn!(
            "metrics for `{}` have a zero denominator and are reported as 0",
            data.class_names[k]
        );
    }
    let names = &data.class_names;
    if let Some(p) = &report_path {
        write_atomic(p, report.to_csv(names)?.as_bytes())?;
    }
    if let Some(p) = &confusion_path {
        write_atomic(p, report.confusion.to_csv(names)?.as_bytes())?;
    }
    if let Some(p) = &heatmap_path {
        let title = format!("{} confusion matrix", ckpt.model().spec().kind);
        write_atomic(p, report.confusion.to_svg(names, &title)?.as_bytes())?;
    }
    writeln!(out, "samples: {}", report.confusion.total())?;
    writeln!(out, "accuracy: {:.6}", report.accuracy)?;
    for (label, agg) in [("macro avg", report.macro_avg), ("weighted avg", report.weighted_avg)] {
        writeln!(
            out,
            "{label}: precision {:.6} recall {:.6} f1 {:.6}",
            agg.precision, agg.recall, agg.f1
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReadAs {
    Auto,
    Image,
    Binary,
}

impl FromStr for ReadAs {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(ReadAs::Auto),
            "image" => Ok(ReadAs::Image),
            "binary" => Ok(ReadAs::Binary),
            _ => Err(Error::config(format!("--as must be auto, image or binary, got `{s}`"))),
        }
    }
}

impl fmt::Display for ReadAs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadAs::Auto => "auto",
            ReadAs::Image => "image",
            ReadAs::Binary => "binary",
        })
    }
}

fn read_input(path: &Path, read_as: ReadAs, width: Width) -> Result<MalwareImage> {
    let binary = || {
        let bytes = fs::read(path).map_err(|e| Error::input(format!("cannot read `{}`: {e}", path.display())))?;
        binary_to_image(&bytes, width, 0, &path.display().to_string())
    };
    match read_as {
        ReadAs::Binary => binary(),
        ReadAs::Image => decode_grayscale(path, 0),
        ReadAs::Auto => decode_grayscale(path, 0).or_else(|e| {
            log::debug!("`{}` is not an image ({e}); reading it as a binary", path.display());
            binary()
        }),
    }
}

pub(super) fn predict(a: &PredictArgs, r: &Resolver, out: &mut dyn Write) -> CliResult {
    let ckpt_path = PathBuf::from(r.require("checkpoint", a.checkpoint.clone())?);
    let input = PathBuf::from(r.require("input", a.input.clone())?);
    let read_as: ReadAs = r.get("as", parse_opt(&a.read_as)?, ReadAs::Auto)?;
    let width: Width = r.get("width", parse_opt(&a.width)?, Width::Auto)?;
    r.echo("predict");

    let ckpt = Checkpoint::load(&ckpt_path)?;
    let img = read_input(&input, read_as, width)?;
    let side = ckpt.model().spec().side;
    let mut row = resize_square(&img, side);
    ckpt.standardizer.apply_row(&mut row);
    let x = Tensor::new(vec![1, side * side], row)?;
    let scores = ckpt.model().scores(&x)?;
    let best = ckpt.model().predict(&x)?[0];
    let mut order: Vec<usize> = (0..scores.row_len()).collect();
    // stable sort keeps the lower index first among equal scores
    order.sort_by(|&i, &j| scores.row(0)[j].total_cmp(&scores.row(0)[i]));
    writeln!(out, "predicted: {}", ckpt.class_names[best])?;
    for k in order {
        writeln!(out, "{}\t{:.6}", ckpt.class_names[k], scores.row(0)[k])?;
    }
    Ok(())
}

// -- gradcheck --------------------------------------------------------------

pub(super) fn gradcheck(a: &GradcheckArgs, r: &Resolver, out: &mut dyn Write) -> CliResult {
    let which = r.get("model", a.model.clone(), "all".to_string())?;
    let scale = r.get("scale", a.scale.clone(), "mini".to_string())?;
    let seed = r.get("seed", a.seed, 7)?;
    r.echo("gradcheck");
    if scale != "mini" {
        return Err(Error::config(format!("only `--scale mini` is available, got `{scale}`")).into());
    }
    let kinds: Vec<ModelKind> = if which == "all" {
        ModelKind::ALL.to_vec()
    } else {
        vec![which.parse()?]
    };

    let mut failed = Vec::new();
    writeln!(out, "model\tlayer\telements\tmax_rel_err\tstatus")?;
    for kind in kinds {
        let report = gradcheck::gradcheck(kind, seed)?;
        if report.redraws > 0 {
            log::info!(
                "{kind}: {} input batch(es) redrawn to avoid probing across a kink",
                report.redraws
            );
        }
        for l in &report.layers {
            let ok = l.max_rel_err <= TOLERANCE;
            writeln!(
                out,
                "{kind}\t{}\t{}\t{:.3e}\t{}",
                l.layer,
                l.elements,
                l.max_rel_err,
                if ok { "ok" } else { "FAIL" }
            )?;
            if !ok {
                failed.push(format!("{kind}/{}", l.layer));
            }
        }
    }
    if failed.is_empty() {
        writeln!(out, "all gradients within {TOLERANCE:e} relative error")?;
        Ok(())
    } else {
        Err(CliError::Gradcheck(failed))
    }
}
