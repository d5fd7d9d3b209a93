//! Training loop: per-row forward diffusion, conditional masks, the
//! combined diffusion loss and Adam updates.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, EncodedTable, Preprocessor, TargetBlock};
use crate::denoiser::{DenoiserConfig, DenoiserInput, TargetInput};
use crate::diffusion::{
    categorical_loss, combine_losses, gaussian_forward, masked_mse, multinomial_forward_sample, CategoricalBatch,
    NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::masking::{mask_dynamic_row, MaskMode};
use crate::model::Model;
use crate::par;
use crate::rng::substream;
use crate::tensor::{Adam, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Diffusion steps T.
    pub timesteps: usize,
    pub mask_mode: MaskMode,
    pub seed: u64,
    /// Write the checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 256,
            learning_rate: 1e-3,
            timesteps: 100,
            mask_mode: MaskMode::Full,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.timesteps == 0 {
            return Err(Error::Config("epochs, batch_size and timesteps must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Optional training artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Line-delimited JSON, one record per epoch.
    pub log: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_total: f64,
    /// Numeric term of the total (already divided by `K_num`).
    pub loss_num: f64,
    /// Categorical term of the total.
    pub loss_cat: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub seconds: f64,
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint SHA-256 when one was written.
    pub digest: Option<String>,
}

/// i.i.d. uniform steps in `1..=steps`.
pub fn sample_timesteps<R: Rng + ?Sized>(b: usize, steps: usize, rng: &mut R) -> Vec<usize> {
    (0..b).map(|_| rng.random_range(1..=steps)).collect()
}

/// Noised state and mask for one training row.
struct RowDraw {
    t: usize,
    eps: Vec<f64>,
    noisy_num: Vec<f64>,
    noisy_cat: Vec<usize>,
    cond: Vec<bool>,
}

fn draw_row(data: &EncodedTable, row: usize, sched: &NoiseSchedule, mode: MaskMode, seed: u64, epoch: usize) -> RowDraw {
    let mut rng = substream(seed, &[epoch as u64, row as u64]);
    let t = rng.random_range(1..=sched.steps());
    let k_num = data.n_numeric();
    let classes = data.schema.categorical_classes();
    let eps: Vec<f64> = (0..k_num).map(|_| rng.sample(StandardNormal)).collect();
    let noisy_num = (0..k_num)
        .map(|j| gaussian_forward(data.numeric_at(row, j), t, sched, eps[j]))
        .collect();
    let noisy_cat = classes
        .iter()
        .enumerate()
        .map(|(j, c)| multinomial_forward_sample(data.code_at(row, j), *c, t, sched, &mut rng))
        .collect();
    let mut cond = vec![true; data.n_features()];
    if mode == MaskMode::Dynamic {
        mask_dynamic_row(&mut cond, &mut rng);
    }
    RowDraw {
        t,
        eps,
        noisy_num,
        noisy_cat,
        cond,
    }
}

struct BatchLoss {
    total: f64,
    num: f64,
    cat: f64,
}

fn t_histogram(t: &[usize], steps: usize) -> Vec<usize> {
    let bins = steps.min(10);
    let mut h = vec![0; bins];
    for &s in t {
        h[((s - 1) * bins / steps).min(bins - 1)] += 1;
    }
    h
}

fn train_batch(model: &mut Model, data: &EncodedTable, rows: &[usize], draws: &[RowDraw], adam: &Adam) -> Result<BatchLoss> {
    let b = rows.len();
    let k = data.n_features();
    let k_num = data.n_numeric();
    let k_cat = data.n_categorical();
    let features = data.schema.features();
    let mut numeric = Vec::with_capacity(b * k_num);
    let mut codes = Vec::with_capacity(b * k_cat);
    let mut eff = Vec::with_capacity(b * k);
    let mut scored = Vec::with_capacity(b * k);
    let mut eps = Vec::with_capacity(b * k_num);
    let mut t = Vec::with_capacity(b);
    for (&r, d) in rows.iter().zip(draws) {
        for (j, f) in features.iter().enumerate() {
            let missing = data.is_missing(r, j);
            let noisy = d.cond[j] || missing;
            eff.push(noisy);
            scored.push(d.cond[j] && !missing);
            match f.kind {
                ColumnKind::Numerical => {
                    numeric.push(if noisy { d.noisy_num[f.block] } else { data.numeric_at(r, f.block) });
                }
                ColumnKind::Categorical => {
                    codes.push(if noisy { d.noisy_cat[f.block] } else { data.code_at(r, f.block) });
                }
            }
        }
        eps.extend_from_slice(&d.eps);
        t.push(d.t);
    }
    let target = data.target.select(rows);
    let target_input = match &target {
        TargetBlock::Real(v) => TargetInput::Real(v),
        TargetBlock::Codes(v) => TargetInput::Codes(v),
    };
    let input = DenoiserInput {
        batch: b,
        numeric: &numeric,
        codes: &codes,
        eff: &eff,
        target: target_input,
        t: &t,
    };
    let num_valid: Vec<bool> = (0..b)
        .flat_map(|i| {
            let s = &scored[i * k..(i + 1) * k];
            features
                .iter()
                .enumerate()
                .filter(|(_, f)| f.kind == ColumnKind::Numerical)
                .map(move |(j, _)| s[j])
        })
        .collect();

    let grads;
    let loss;
    {
        let mut g = Graph::new(&model.store);
        let out = model.net.forward(&mut g, &input)?;
        let num = match out.eps_hat {
            Some(v) => Some((masked_mse(&mut g, v, &eps, &num_valid)?, k_num)),
            None => None,
        };
        let mut cats = Vec::with_capacity(k_cat);
        let cat_features: Vec<(usize, usize)> = features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == ColumnKind::Categorical)
            .map(|(j, f)| (j, f.classes))
            .collect();
        for (ci, (j, classes)) in cat_features.iter().enumerate() {
            let x0: Vec<usize> = rows.iter().map(|&r| data.code_at(r, ci)).collect();
            let xt: Vec<usize> = draws.iter().map(|d| d.noisy_cat[ci]).collect();
            let valid: Vec<bool> = (0..b).map(|i| scored[i * k + j]).collect();
            let l = categorical_loss(
                &mut g,
                out.logits[ci],
                CategoricalBatch {
                    x0: &x0,
                    x_t: &xt,
                    t: &t,
                    valid: &valid,
                },
                &model.schedule,
            )?;
            cats.push((l, *classes));
        }
        let total = combine_losses(&mut g, num, &cats)?;
        let num_term = num.map_or(0.0, |(v, k)| g.value(v).item() / k as f64);
        let cat_term = g.value(total).item() - num_term;
        loss = BatchLoss {
            total: g.value(total).item(),
            num: num_term,
            cat: cat_term,
        };
        grads = g.backward(total)?;
    }
    model.store.accumulate(&grads);
    adam.step(&mut model.store)?;
    Ok(loss)
}

/// Trains a fresh model on `data`, which must be encoded by `prep`.
pub fn train(
    data: &EncodedTable,
    prep: Preprocessor,
    dconf: DenoiserConfig,
    tconf: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<(Model, TrainReport)> {
    tconf.validate()?;
    if data.schema != *prep.schema() {
        return Err(Error::SchemaMismatch("training data was encoded with a different schema".into()));
    }
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::Request("training data has no rows".into()));
    }
    for (j, f) in data.schema.features().iter().enumerate() {
        if (0..n).all(|r| data.is_missing(r, j)) {
            return Err(Error::Request(format!(
                "column `{}` is entirely missing",
                data.schema.columns[f.column].name
            )));
        }
    }
    if data.target_missing.iter().any(|m| *m) {
        return Err(Error::Request("training rows need an observed target".into()));
    }
    let schedule = NoiseSchedule::default_for(tconf.timesteps)?;
    let mut model = Model::new(prep, dconf, schedule, tconf.mask_mode, data.target.clone(), tconf.seed)?;
    let adam = Adam::new(tconf.learning_rate);
    let mut log = match &outputs.log {
        Some(p) => Some(BufWriter::new(
            File::create(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?,
        )),
        None => None,
    };
    let start = Instant::now();
    let mut epochs = Vec::with_capacity(tconf.epochs);
    let mut digest = None;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..tconf.epochs {
        let epoch_start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut substream(tconf.seed, &[u64::MAX, epoch as u64]));
        let (mut sum_total, mut sum_num, mut sum_cat) = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (bi, rows) in order.chunks(tconf.batch_size).enumerate() {
            let draws = par::map_range(rows.len(), |i| {
                draw_row(data, rows[i], &model.schedule, tconf.mask_mode, tconf.seed, epoch)
            });
            let steps = model.schedule.steps();
            let diverged = |loss: f64| Error::Diverged {
                epoch,
                batch: bi,
                loss,
                histogram: t_histogram(&draws.iter().map(|d| d.t).collect::<Vec<_>>(), steps),
            };
            let loss = match train_batch(&mut model, data, rows, &draws, &adam) {
                Ok(l) if l.total.is_finite() => l,
                Ok(l) => return Err(diverged(l.total)),
                Err(Error::Numeric(_) | Error::NonFiniteGradient(_)) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            sum_total += loss.total;
            sum_num += loss.num;
            sum_cat += loss.cat;
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            loss_total: sum_total / batches as f64,
            loss_num: sum_num / batches as f64,
            loss_cat: sum_cat / batches as f64,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: loss {:.5}", stats.loss_total);
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(&stats)?;
            writeln!(w, "{line}").map_err(|e| Error::io("writing training log", e))?;
        }
        epochs.push(stats);
        if let Some(path) = &outputs.checkpoint {
            let last = epoch + 1 == tconf.epochs;
            if last || (tconf.checkpoint_every > 0 && (epoch + 1) % tconf.checkpoint_every == 0) {
                digest = Some(model.save(path)?);
            }
        }
    }
    if let Some(w) = log.as_mut() {
        w.flush().map_err(|e| Error::io("writing training log", e))?;
    }
    let report = TrainReport {
        epochs,
        seconds: start.elapsed().as_secs_f64(),
        checkpoint: outputs.checkpoint.clone(),
        digest,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{Cell, ColumnSpec, RawTable, TableSchema};
    use crate::stats::{chi_square_p_value, pearson};

    fn small_config() -> DenoiserConfig {
        DenoiserConfig {
            latent_dim: 16,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            feedforward_dim: 32,
        }
    }

    fn numeric_toy(n: usize) -> (EncodedTable, Preprocessor) {
        let schema = TableSchema::new(vec![
            ColumnSpec::numerical("a"),
            ColumnSpec::numerical("b"),
            ColumnSpec::categorical("y", 2).as_target(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows = (0..n)
            .map(|i| {
                let a: f64 = rng.sample(StandardNormal);
                let b = 0.8 * a + 0.6 * rng.sample::<f64, _>(StandardNormal);
                vec![Cell::Number(a), Cell::Number(b), Cell::Label(if i % 2 == 0 { "u" } else { "v" }.into())]
            })
            .collect();
        let raw = RawTable::new(schema.clone(), rows).unwrap();
        let prep = Preprocessor::fit(&raw, &schema).unwrap();
        (prep.encode(&raw).unwrap(), prep)
    }

    #[test]
    fn timestep_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_timesteps(100, 1, &mut rng).iter().all(|t| *t == 1));
        let ts = sample_timesteps(100_000, 10, &mut rng);
        assert!(ts.iter().all(|t| (1..=10).contains(t)));
        let mut counts = [0u64; 10];
        for t in ts {
            counts[t - 1] += 1;
        }
        assert!(chi_square_p_value(&counts, &[10_000.0; 10]) > 0.01);
    }

    #[test]
    fn noise_is_independent_across_features() {
        let (data, _) = numeric_toy(4);
        let sched = NoiseSchedule::default_for(10).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for epoch in 0..25_000 {
            for row in 0..4 {
                let d = draw_row(&data, row, &sched, MaskMode::Full, 3, epoch);
                a.push(d.eps[0]);
                b.push(d.eps[1]);
            }
        }
        // the sample correlation of independent normals has SE 1/sqrt(n)
        assert!(pearson(&a, &b).abs() < 3.0 / (a.len() as f64).sqrt());
    }

    #[test]
    fn full_mode_masks_everything() {
        let (data, _) = numeric_toy(8);
        let sched = NoiseSchedule::default_for(10).unwrap();
        for row in 0..8 {
            assert!(draw_row(&data, row, &sched, MaskMode::Full, 0, 0).cond.iter().all(|c| *c));
        }
    }

    #[test]
    fn masked_missing_cells_do_not_contribute() {
        let (mut data, prep) = numeric_toy(4);
        let mut model = Model::new(
            prep,
            small_config(),
            NoiseSchedule::default_for(10).unwrap(),
            MaskMode::Full,
            data.target.clone(),
            0,
        )
        .unwrap();
        let sched = model.schedule.clone();
        let rows = [0usize, 1, 2, 3];
        let draws: Vec<RowDraw> = rows.iter().map(|&r| draw_row(&data, r, &sched, MaskMode::Full, 0, 0)).collect();
        data.set_missing(1, 0);
        let mut a = model.clone();
        let la = train_batch(&mut a, &data, &rows, &draws, &Adam::new(0.0)).unwrap();
        // changing the noise target of the missing cell must not change the loss
        let mut draws2 = draws;
        draws2[1].eps[0] += 5.0;
        let lb = train_batch(&mut model, &data, &rows, &draws2, &Adam::new(0.0)).unwrap();
        assert_eq!(la.total, lb.total);
        draws2[2].eps[0] += 5.0;
        let lc = train_batch(&mut model, &data, &rows, &draws2, &Adam::new(0.0)).unwrap();
        assert_ne!(la.total, lc.total);
    }

    #[test]
    fn loss_halves_on_toy_problem() {
        let (data, prep) = numeric_toy(200);
        let conf = TrainConfig {
            epochs: 30,
            batch_size: 50,
            learning_rate: 2e-3,
            timesteps: 50,
            seed: 4,
            ..TrainConfig::default()
        };
        let (_, report) = train(&data, prep, small_config(), &conf, &TrainOutputs::default()).unwrap();
        let first = report.epochs[0].loss_total;
        let last = report.epochs.last().unwrap().loss_total;
        assert!(last < 0.5 * first, "{first} -> {last}");
        assert!(report.epochs.iter().all(|e| e.loss_total.is_finite()));
    }

    #[test]
    fn parameters_move_every_step() {
        let (data, prep) = numeric_toy(16);
        let mut model = Model::new(
            prep,
            small_config(),
            NoiseSchedule::default_for(10).unwrap(),
            MaskMode::Dynamic,
            data.target.clone(),
            1,
        )
        .unwrap();
        let sched = model.schedule.clone();
        let rows: Vec<usize> = (0..16).collect();
        for step in 0..3 {
            let before = model.store.clone();
            let draws: Vec<RowDraw> = rows.iter().map(|&r| draw_row(&data, r, &sched, MaskMode::Dynamic, 0, step)).collect();
            train_batch(&mut model, &data, &rows, &draws, &Adam::new(1e-3)).unwrap();
            let changed = before.iter().zip(model.store.iter()).filter(|(a, b)| a.value != b.value).count();
            assert!(changed > 0);
        }
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let run = |name: &str| {
            let (data, prep) = numeric_toy(40);
            let conf = TrainConfig {
                epochs: 2,
                batch_size: 16,
                timesteps: 10,
                mask_mode: MaskMode::Dynamic,
                seed: 9,
                ..TrainConfig::default()
            };
            let outputs = TrainOutputs {
                log: Some(dir.path().join(format!("{name}.jsonl"))),
                checkpoint: Some(dir.path().join(format!("{name}.ckpt"))),
            };
            train(&data, prep, small_config(), &conf, &outputs).unwrap().1
        };
        let (a, b) = (run("a"), run("b"));
        assert_eq!(a.digest, b.digest);
        assert_eq!(
            std::fs::read(dir.path().join("a.ckpt")).unwrap(),
            std::fs::read(dir.path().join("b.ckpt")).unwrap()
        );
        let log = std::fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
        let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        for key in ["epoch", "loss_total", "loss_num", "loss_cat", "seconds"] {
            assert!(lines[0].get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn rejects_fully_missing_column() {
        let (mut data, prep) = numeric_toy(5);
        for r in 0..5 {
            data.set_missing(r, 1);
        }
        let err = train(&data, prep, small_config(), &TrainConfig::default(), &TrainOutputs::default()).unwrap_err();
        assert!(err.to_string().contains("`b`"));
    }
}
