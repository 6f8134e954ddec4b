use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use ndarray::Axis;
use phonoguard_core::federated::{run_simulation, write_round_log, ArmSummary, FederatedData};
use phonoguard_core::fusion::{fuse_matrix, FusionTransform, Standardizer};
use phonoguard_core::head::{read_predictions, write_predictions, DropoutMlp, PredictionRecord};
use phonoguard_core::io::{load_segment, read_manifest, write_corpus};
use phonoguard_core::physics::{physics_vector_with, read_feature_csv, write_feature_csv};
use phonoguard_core::pipeline::{
    evaluate, feature_ecdf, fit_on_split, predict_fused, run_pipeline, FeatureTable,
};
use phonoguard_core::{generate_synthetic, rng, Segment, SyntheticCorpusSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::output::{Outputs, RunManifest, RUN_MANIFEST};

pub struct Args {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub command: &'static str,
}

/// Why a command stopped. Configuration problems map to exit code 2,
/// everything else to 1.
pub enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<phonoguard_core::Error> for Failure {
    fn from(e: phonoguard_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

pub struct Ctx {
    cfg: Config,
    seed: u64,
    out: Outputs,
    inputs: Vec<PathBuf>,
    /// Per-input failures that did not stop the command.
    errors: Vec<String>,
}

/// Load and validate the config, run `command`, then write the run
/// manifest. Returns the number of inputs that failed.
pub fn run(args: &Args, command: fn(&mut Ctx) -> Result<(), Failure>) -> Result<usize, Failure> {
    let start = Instant::now();
    let mut cfg = match &args.config {
        Some(path) => Config::load(path).map_err(Failure::Config)?,
        None => Config::default(),
    };
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    cfg.seed = Some(seed);
    cfg.validate().map_err(Failure::Config)?;
    let out = Outputs::create(&args.out)?;
    let mut ctx = Ctx {
        cfg,
        seed,
        out,
        inputs: args.config.iter().cloned().collect(),
        errors: Vec::new(),
    };
    command(&mut ctx)?;

    let manifest = RunManifest {
        command: args.command,
        tool_version: env!("CARGO_PKG_VERSION"),
        seed,
        config_path: args.config.as_deref(),
        config: serde_json::to_value(&ctx.cfg).context("serializing the resolved config")?,
        inputs: ctx.inputs.clone(),
        outputs: ctx.out.written().to_vec(),
        errors: ctx.errors.clone(),
        duration_secs: start.elapsed().as_secs_f64(),
    };
    ctx.out.json(RUN_MANIFEST, &manifest)?;
    log::info!(
        "{} finished in {:.2} s",
        args.command,
        start.elapsed().as_secs_f64()
    );
    Ok(ctx.errors.len())
}

fn required<'a>(value: &'a Option<PathBuf>, field: &str) -> Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::Config(anyhow::anyhow!("{field}: required by this command")))
}

/// Synthetic corpus spec with its seed drawn from the run seed.
fn seeded_spec(spec: &SyntheticCorpusSpec, seed: u64, stream: &str) -> SyntheticCorpusSpec {
    SyntheticCorpusSpec {
        seed: rng::derive_seed(seed, stream),
        ..spec.clone()
    }
}

/// Segments from the manifest, or the synthetic corpus when none is set.
/// Manifest entries that cannot be read or featurized are recorded and
/// skipped.
fn load_corpus(ctx: &mut Ctx) -> Result<Vec<Segment>, Failure> {
    let Some(path) = ctx.cfg.corpus.manifest.clone() else {
        log::info!("generating synthetic corpus");
        return Ok(generate_synthetic(&seeded_spec(
            &ctx.cfg.synthetic,
            ctx.seed,
            "synthetic-corpus",
        ))?);
    };
    ctx.inputs.push(path.clone());
    let records = read_manifest(&path)?;
    log::info!("loading {} segments from {}", records.len(), path.display());
    let rate = ctx.cfg.corpus.embedding_frame_rate;
    let physics = ctx.cfg.physics;
    let loaded: Vec<_> = records
        .par_iter()
        .map(|rec| {
            load_segment(rec, rate)
                .and_then(|s| physics_vector_with(s.embedding(), s.waveform(), &physics).map(|_| s))
        })
        .collect();
    let mut segments = Vec::with_capacity(loaded.len());
    for (rec, result) in records.iter().zip(loaded) {
        match result {
            Ok(s) => segments.push(s),
            Err(e) => {
                let msg = format!("{}: {e}", rec.source_id);
                log::warn!("skipping {msg}");
                ctx.errors.push(msg);
            }
        }
    }
    Ok(segments)
}

fn feature_table(ctx: &mut Ctx) -> Result<FeatureTable, Failure> {
    let segments = load_corpus(ctx)?;
    Ok(FeatureTable::from_segments_with(
        &segments,
        &ctx.cfg.physics,
    )?)
}

fn nonempty(table: &FeatureTable) -> Result<(), Failure> {
    if table.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!(
            "no usable segments in the corpus"
        )));
    }
    Ok(())
}

fn save_fitted(
    out: &mut Outputs,
    scaler: &Standardizer,
    transform: &FusionTransform,
) -> anyhow::Result<()> {
    out.json("scaler.json", scaler)?;
    let mut buf = Vec::new();
    transform.write(&mut buf)?;
    out.bytes("fusion.qrf", &buf)
}

fn save_model(out: &mut Outputs, model: &DropoutMlp) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    model.write(&mut buf)?;
    out.bytes("model.mlp", &buf)
}

pub fn extract(ctx: &mut Ctx) -> Result<(), Failure> {
    let table = feature_table(ctx)?;
    let rows = table.feature_rows();
    ctx.out
        .with("features.csv", |w| write_feature_csv(w, &rows))?;
    log::info!("{} feature rows written", rows.len());
    Ok(())
}

pub fn fuse(ctx: &mut Ctx) -> Result<(), Failure> {
    let table = feature_table(ctx)?;
    nonempty(&table)?;
    let x = table.combined();
    let scaler = Standardizer::fit(x.view());
    let transform = fuse_matrix(scaler.apply(x.view())?.view())
        .transform
        .quantized();
    let fused = transform.apply_rows(scaler.apply(x.view())?.view())?;
    save_fitted(&mut ctx.out, &scaler, &transform)?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["source_id".to_string(), "label".to_string()];
    header.extend((0..fused.ncols()).map(|j| format!("x{j}")));
    wtr.write_record(&header).context("writing fused.csv")?;
    for (i, row) in fused.axis_iter(Axis(0)).enumerate() {
        let mut rec = vec![table.ids[i].clone(), table.labels[i].as_str().to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        wtr.write_record(&rec).context("writing fused.csv")?;
    }
    let buf = wtr
        .into_inner()
        .map_err(|e| anyhow::anyhow!("writing fused.csv: {e}"))?;
    ctx.out.bytes("fused.csv", &buf)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    epoch_losses: &'a [f64],
    class_weights: [f64; 2],
    n_train: usize,
    n_test: usize,
    test_ids: Vec<&'a str>,
}

pub fn train(ctx: &mut Ctx) -> Result<(), Failure> {
    let table = feature_table(ctx)?;
    nonempty(&table)?;
    let (fitted, train_idx, test_idx) = fit_on_split(&table, &ctx.cfg.pipeline(), ctx.seed)?;
    save_fitted(&mut ctx.out, &fitted.scaler, &fitted.transform)?;
    save_model(&mut ctx.out, &fitted.model)?;
    ctx.out.json(
        "train_report.json",
        &TrainSummary {
            epoch_losses: &fitted.report.epoch_losses,
            class_weights: fitted.report.class_weights,
            n_train: train_idx.len(),
            n_test: test_idx.len(),
            test_ids: test_idx.iter().map(|&i| table.ids[i].as_str()).collect(),
        },
    )?;
    Ok(())
}

pub fn predict(ctx: &mut Ctx) -> Result<(), Failure> {
    let inputs = ctx.cfg.inputs.clone();
    let model_path = required(&inputs.model, "inputs.model")?;
    let fusion_path = required(&inputs.fusion, "inputs.fusion")?;
    let scaler_path = required(&inputs.scaler, "inputs.scaler")?;
    let model = DropoutMlp::load(model_path)?;
    let transform = FusionTransform::load(fusion_path)?;
    let scaler_text = std::fs::read_to_string(scaler_path)
        .with_context(|| format!("cannot read {}", scaler_path.display()))?;
    let scaler: Standardizer = serde_json::from_str(&scaler_text)
        .with_context(|| format!("malformed scaler {}", scaler_path.display()))?;
    ctx.inputs.extend([
        model_path.to_path_buf(),
        fusion_path.to_path_buf(),
        scaler_path.to_path_buf(),
    ]);

    let table = feature_table(ctx)?;
    let records: Vec<PredictionRecord> = if table.is_empty() {
        Vec::new()
    } else {
        let x = transform.apply_rows(scaler.apply(table.combined().view())?.view())?;
        let preds = predict_fused(&model, x.view(), &table.keys(), ctx.cfg.mc.passes, ctx.seed)?;
        table
            .ids
            .iter()
            .zip(&table.labels)
            .zip(&preds)
            .map(|((id, &label), p)| PredictionRecord::new(id.clone(), label, p))
            .collect()
    };
    ctx.out
        .with("predictions.jsonl", |w| write_predictions(w, &records))?;
    Ok(())
}

pub fn metrics(ctx: &mut Ctx) -> Result<(), Failure> {
    let inputs = ctx.cfg.inputs.clone();
    let path = required(&inputs.predictions, "inputs.predictions")?;
    let file =
        std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let records = read_predictions(std::io::BufReader::new(file))?;
    ctx.inputs.push(path.to_path_buf());
    let (report, calibration) = evaluate(&records, &ctx.cfg.metrics)?;
    ctx.out.json("metrics.json", &report)?;
    ctx.out.json("calibration.json", &calibration)?;
    if let Some(features) = &inputs.features {
        let file = std::fs::File::open(features)
            .with_context(|| format!("cannot open {}", features.display()))?;
        let rows = read_feature_csv(file)?;
        ctx.inputs.push(features.clone());
        let mvm = feature_ecdf(&rows, |r| r.mean_vel_mag)?;
        let tfv = feature_ecdf(&rows, |r| r.tf_variation)?;
        ctx.out
            .with("ecdf_mean_vel_mag.csv", |w| mvm.write_csv(w))?;
        ctx.out
            .with("ecdf_tf_variation.csv", |w| tfv.write_csv(w))?;
    }
    Ok(())
}

pub fn synth(ctx: &mut Ctx) -> Result<(), Failure> {
    let segments = generate_synthetic(&seeded_spec(
        &ctx.cfg.synthetic,
        ctx.seed,
        "synthetic-corpus",
    ))?;
    let dir = ctx.out.path("corpus");
    let manifest = write_corpus(&dir, &segments)?;
    for s in &segments {
        ctx.out.record(dir.join(format!("{}.wav", s.source_id())));
        ctx.out.record(dir.join(format!("{}.emb", s.source_id())));
    }
    ctx.out.record(manifest);
    log::info!("{} segments written to {}", segments.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct FlsimSummary<'a> {
    clients: usize,
    attackers: usize,
    rounds: usize,
    tau: f64,
    arms: &'a [ArmSummary],
}

pub fn flsim(ctx: &mut Ctx) -> Result<(), Failure> {
    let mut scenario = ctx.cfg.flsim.clone();
    scenario.seed = ctx.seed;
    scenario.corpus.seed = rng::derive_seed(ctx.seed, "flsim-corpus");
    scenario
        .validate()
        .map_err(|e| Failure::Config(anyhow::anyhow!("flsim: {e}")))?;
    let data = if ctx.cfg.corpus.manifest.is_some() {
        FederatedData::from_segments(&load_corpus(ctx)?)?
    } else {
        log::info!("generating synthetic federation corpus");
        FederatedData::synthetic(&scenario)?
    };
    let result = run_simulation(&scenario, &data)?;
    ctx.out
        .with("round_log.jsonl", |w| write_round_log(w, &result.rounds))?;
    ctx.out.json(
        "flsim_summary.json",
        &FlsimSummary {
            clients: scenario.clients,
            attackers: scenario.attackers(),
            rounds: scenario.rounds,
            tau: scenario.tau,
            arms: &result.summaries,
        },
    )?;
    for s in &result.summaries {
        log::info!(
            "{:?}: final EER {:.4}, {} flags",
            s.arm,
            s.final_eer,
            s.flags
        );
    }
    ctx.cfg.flsim = scenario;
    Ok(())
}

pub fn pipeline(ctx: &mut Ctx) -> Result<(), Failure> {
    let segments = load_corpus(ctx)?;
    let out = run_pipeline(&segments, &ctx.cfg.pipeline(), ctx.seed)?;
    let rows = out.features.feature_rows();
    ctx.out
        .with("features.csv", |w| write_feature_csv(w, &rows))?;
    save_fitted(&mut ctx.out, &out.fitted.scaler, &out.fitted.transform)?;
    save_model(&mut ctx.out, &out.fitted.model)?;
    ctx.out.with("predictions.jsonl", |w| {
        write_predictions(w, &out.predictions)
    })?;
    ctx.out.json("metrics.json", &out.metrics)?;
    ctx.out.json("calibration.json", &out.calibration)?;
    ctx.out.with("ecdf_mean_vel_mag.csv", |w| {
        out.ecdf_mean_vel_mag.write_csv(w)
    })?;
    ctx.out.with("ecdf_tf_variation.csv", |w| {
        out.ecdf_tf_variation.write_csv(w)
    })?;
    log::info!(
        "EER {:.4}, ROC-AUC {:.4}, ECE {:.4}",
        out.metrics.eer,
        out.metrics.roc_auc,
        out.calibration.ece
    );
    Ok(())
}
