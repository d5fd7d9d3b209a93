use std::path::{Path, PathBuf};

use tabdiff::data::{load_csv, Preprocessor, RawTable, TableSchema};
use tabdiff::datasets;
use tabdiff::eval::{benchmark_imputation, evaluate as evaluate_tables, BenchmarkSettings};
use tabdiff::masking::MaskMode;
use tabdiff::model::{file_digest, Model};
use tabdiff::sampler::{generate as sample, impute as fill, GenerationRequest, Sidecar};
use tabdiff::trainer::{train as fit, TrainOutputs};
use tabdiff::Error;

use crate::config::RunConfig;
use crate::{CliError, DatasetName};

fn out_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    Ok(dir)
}

fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("no {what} given (set it in the config or pass the flag)")))
}

fn checkpoint_path(config: &RunConfig) -> Result<PathBuf, CliError> {
    match &config.checkpoint {
        Some(p) => Ok(p.clone()),
        None => Ok(out_dir(config)?.join("model.ckpt")),
    }
}

fn schema(config: &RunConfig) -> Result<Option<TableSchema>, CliError> {
    Ok(config.schema.as_ref().map(TableSchema::load).transpose()?)
}

fn load_data(config: &RunConfig) -> Result<RawTable, CliError> {
    let path = require(&config.data, "data file")?;
    Ok(load_csv(path, schema(config)?.as_ref())?)
}

fn load_model(config: &RunConfig) -> Result<(Model, String), CliError> {
    let path = checkpoint_path(config)?;
    let model = Model::load(&path)?;
    if let Some(s) = schema(config)? {
        model.check_schema(&s)?;
    }
    Ok((model, file_digest(&path)?))
}

pub fn train(config: &RunConfig) -> Result<(), CliError> {
    let raw = load_data(config)?;
    let dir = out_dir(config)?;
    let prep = Preprocessor::fit(&raw, &raw.schema)?;
    let encoded = prep.encode(&raw)?;
    raw.schema.save(dir.join("schema.json"))?;
    let outputs = TrainOutputs {
        log: Some(dir.join("train_log.jsonl")),
        checkpoint: Some(checkpoint_path(config)?),
    };
    let (_, report) = fit(&encoded, prep, config.denoiser, &config.train, &outputs)?;
    let last = report.epochs.last().map_or(f64::NAN, |e| e.loss_total);
    println!(
        "trained {} epochs in {:.1}s, final loss {last:.5}; checkpoint {} sha256 {}",
        report.epochs.len(),
        report.seconds,
        outputs.checkpoint.as_ref().map_or(String::new(), |p| p.display().to_string()),
        report.digest.unwrap_or_default()
    );
    Ok(())
}

pub fn generate(config: &RunConfig) -> Result<(), CliError> {
    let (model, digest) = load_model(config)?;
    let dir = out_dir(config)?;
    let request = GenerationRequest::unconditional(config.generate.rows, config.generate.seed);
    let table = sample(&model, &request)?;
    let csv = dir.join("synthetic.csv");
    table.save_csv(&csv)?;
    Sidecar {
        seed: request.seed,
        timesteps: model.steps(),
        checkpoint_sha256: digest,
        request: request.summary(),
    }
    .save(dir.join("synthetic.json"))?;
    println!("wrote {} rows to {}", table.n_rows(), csv.display());
    Ok(())
}

pub fn impute(config: &RunConfig) -> Result<(), CliError> {
    let (model, digest) = load_model(config)?;
    let path = require(&config.data, "data file")?;
    let raw = load_csv(path, Some(model.schema()))?;
    let dir = out_dir(config)?;
    let done = fill(&model, &raw, config.impute.seed, config.impute.draws)?;
    let csv = dir.join("imputed.csv");
    done.save_csv(&csv)?;
    Sidecar {
        seed: config.impute.seed,
        timesteps: model.steps(),
        checkpoint_sha256: digest,
        request: serde_json::json!({
            "kind": "impute",
            "rows": raw.n_rows(),
            "missing_cells": raw.missing_count(),
            "draws": config.impute.draws,
        }),
    }
    .save(dir.join("imputed.json"))?;
    println!("filled {} cells; wrote {}", raw.missing_count(), csv.display());
    Ok(())
}

pub fn evaluate(config: &RunConfig) -> Result<(), CliError> {
    let e = &config.evaluate;
    let real_path = require(&e.real, "real table (--real)")?;
    let synth_path = require(&e.synthetic, "synthetic table (--synthetic)")?;
    let real = load_csv(real_path, schema(config)?.as_ref())?;
    let synth = load_csv(synth_path, Some(&real.schema))?;
    let test = e.test.as_ref().map(|p| load_csv(p, Some(&real.schema))).transpose()?;
    let report = evaluate_tables(&real, &synth, test.as_ref(), e.probe, e.seed)?;
    let path = out_dir(config)?.join("metrics.json");
    report.save(&path)?;
    print!("{}", report.to_json());
    Ok(())
}

pub fn benchmark(config: &RunConfig) -> Result<(), CliError> {
    let raw = load_data(config)?;
    let dir = out_dir(config)?;
    if config.train.mask_mode == MaskMode::Full {
        log::warn!("benchmarking with full masks; imputation normally uses --mask-mode dynamic");
    }
    let b = &config.benchmark;
    let settings = BenchmarkSettings {
        probe: b.probe,
        draws: b.draws,
        seed: b.seed,
    };
    let report = benchmark_imputation(&raw, &b.specs, &settings, |encoded, prep, spec| {
        log::info!("training on {} rows for {} @ {}", encoded.n_rows(), spec.mechanism.label(), spec.rate);
        Ok(fit(encoded, prep.clone(), config.denoiser, &config.train, &TrainOutputs::default())?.0)
    })?;
    let files = report.write(&dir)?;
    print!("{}", report.summary_csv());
    log::info!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

pub fn dataset(config: &RunConfig, name: DatasetName, rows: Option<usize>) -> Result<(), CliError> {
    let n = rows.unwrap_or(datasets::MIXED_ROWS);
    let seed = config.generate.seed;
    let table = match name {
        DatasetName::Mixed => datasets::mixed_classification(n, seed),
        DatasetName::Regression => datasets::numeric_regression(n, seed),
    };
    let dir = out_dir(config)?;
    table.save_csv(dir.join("data.csv"))?;
    table.schema.save(dir.join("schema.json"))?;
    println!("wrote {} rows to {}", n, dir.join("data.csv").display());
    Ok(())
}
