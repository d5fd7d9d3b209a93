//! Reverse diffusion for conditional generation and missing-value
//! imputation.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, ColumnKind, EncodedTable, FeatureSlot, RawTable, TargetBlock};
use crate::denoiser::{DenoiserInput, Prediction, TargetInput};
use crate::diffusion::{gaussian_reverse_step, multinomial_reverse_step, NoiseSchedule};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::par;
use crate::rng::substream;
use crate::tensor::softmax_in_place;

/// Rows denoised per network call.
pub const CHUNK_ROWS: usize = 256;

/// Anything that maps a denoiser batch to noise and logit predictions.
pub trait NoisePredictor: Sync {
    fn predict(&self, input: &DenoiserInput<'_>) -> Result<Prediction>;
}

impl NoisePredictor for Model {
    fn predict(&self, input: &DenoiserInput<'_>) -> Result<Prediction> {
        self.net.predict(&self.store, input)
    }
}

/// Reverse-chain state for a block of rows. Cells whose `eff` flag is set
/// are generated; the others hold fixed conditioning values.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub rows: usize,
    pub numeric: Vec<f64>,
    pub codes: Vec<usize>,
    pub eff: Vec<bool>,
    pub target: TargetBlock,
}

/// Draws the prior for every generated cell: standard normal for numerics,
/// uniform for categories. `rngs` holds one generator per row.
pub fn init_chain(state: &mut ChainState, features: &[FeatureSlot], rngs: &mut [ChaCha8Rng]) {
    let k = features.len();
    let k_num = state.numeric.len() / state.rows.max(1);
    let k_cat = state.codes.len() / state.rows.max(1);
    for (r, rng) in rngs.iter_mut().enumerate() {
        for (j, f) in features.iter().enumerate() {
            if !state.eff[r * k + j] {
                continue;
            }
            match f.kind {
                ColumnKind::Numerical => state.numeric[r * k_num + f.block] = rng.sample(StandardNormal),
                ColumnKind::Categorical => state.codes[r * k_cat + f.block] = rng.random_range(0..f.classes),
            }
        }
    }
}

/// Runs `t = T..1`, updating only generated cells. With `stochastic` off
/// the Gaussian step noise is suppressed at every step.
pub fn reverse_diffusion<P: NoisePredictor + ?Sized>(
    predictor: &P,
    sched: &NoiseSchedule,
    features: &[FeatureSlot],
    state: &mut ChainState,
    rngs: &mut [ChaCha8Rng],
    stochastic: bool,
) -> Result<()> {
    let b = state.rows;
    let k = features.len();
    let k_num = state.numeric.len() / b.max(1);
    let k_cat = state.codes.len() / b.max(1);
    let mut probs = Vec::new();
    for t in (1..=sched.steps()).rev() {
        let steps = vec![t; b];
        let pred = {
            let target = match &state.target {
                TargetBlock::Real(v) => TargetInput::Real(v),
                TargetBlock::Codes(v) => TargetInput::Codes(v),
            };
            predictor.predict(&DenoiserInput {
                batch: b,
                numeric: &state.numeric,
                codes: &state.codes,
                eff: &state.eff,
                target,
                t: &steps,
            })?
        };
        for (r, rng) in rngs.iter_mut().enumerate() {
            for (j, f) in features.iter().enumerate() {
                if !state.eff[r * k + j] {
                    continue;
                }
                match f.kind {
                    ColumnKind::Numerical => {
                        let i = r * k_num + f.block;
                        let z = if t > 1 && stochastic { rng.sample(StandardNormal) } else { 0.0 };
                        state.numeric[i] = gaussian_reverse_step(state.numeric[i], pred.eps_hat[i], t, sched, z);
                    }
                    ColumnKind::Categorical => {
                        let i = r * k_cat + f.block;
                        probs.clear();
                        probs.extend_from_slice(pred.logits[f.block].row(r));
                        softmax_in_place(&mut probs);
                        state.codes[i] = multinomial_reverse_step(state.codes[i], &probs, t, sched, rng)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// I.i.d. draws with replacement from the training targets.
pub fn resample_targets<R: Rng + ?Sized>(train: &TargetBlock, n: usize, rng: &mut R) -> Result<TargetBlock> {
    if train.is_empty() {
        return Err(Error::Request("no training targets to resample".into()));
    }
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..train.len())).collect();
    Ok(train.select(&idx))
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSource {
    /// Draw targets from the training distribution.
    Resample,
    /// One raw target value per output row.
    Provided(Vec<Cell>),
}

/// A feature column fixed to caller-supplied raw values.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnCondition {
    pub column: String,
    pub values: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub n_rows: usize,
    pub targets: TargetSource,
    pub conditions: Vec<ColumnCondition>,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn unconditional(n_rows: usize, seed: u64) -> Self {
        Self {
            n_rows,
            targets: TargetSource::Resample,
            conditions: Vec::new(),
            seed,
        }
    }

    /// JSON summary recorded next to generated files.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "generate",
            "rows": self.n_rows,
            "targets": match self.targets {
                TargetSource::Resample => "resample",
                TargetSource::Provided(_) => "provided",
            },
            "conditioned_columns": self.conditions.iter().map(|c| c.column.clone()).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationRequest {
    pub table: EncodedTable,
    pub seed: u64,
    /// Independent reverse chains per row; numeric results are averaged in
    /// the original units and categories take the most frequent draw.
    pub draws: usize,
}

impl ImputationRequest {
    pub fn new(table: EncodedTable, seed: u64) -> Self {
        Self { table, seed, draws: 1 }
    }
}

/// Rows `rows` of `table` as a chain state with `eff` taken from `mask`.
fn state_from_table(table: &EncodedTable, rows: &[usize], mask: impl Fn(usize, usize) -> bool) -> ChainState {
    let k = table.n_features();
    let (k_num, k_cat) = (table.n_numeric(), table.n_categorical());
    let mut s = ChainState {
        rows: rows.len(),
        numeric: Vec::with_capacity(rows.len() * k_num),
        codes: Vec::with_capacity(rows.len() * k_cat),
        eff: Vec::with_capacity(rows.len() * k),
        target: table.target.select(rows),
    };
    for &r in rows {
        s.numeric.extend_from_slice(&table.numeric[r * k_num..(r + 1) * k_num]);
        s.codes.extend_from_slice(&table.categorical[r * k_cat..(r + 1) * k_cat]);
        s.eff.extend((0..k).map(|j| mask(r, j)));
    }
    s
}

/// Runs the chain over `rows` in fixed-size chunks; `key` names the
/// per-row random stream.
fn run_rows(
    model: &Model,
    table: &EncodedTable,
    rows: &[usize],
    mask: &(dyn Fn(usize, usize) -> bool + Sync),
    key: &(dyn Fn(usize) -> ChaCha8Rng + Sync),
) -> Result<Vec<ChainState>> {
    let features = table.schema.features();
    let chunks: Vec<&[usize]> = rows.chunks(CHUNK_ROWS).collect();
    par::map_range(chunks.len(), |c| {
        let rows = chunks[c];
        let mut state = state_from_table(table, rows, mask);
        let mut rngs: Vec<ChaCha8Rng> = rows.iter().map(|&r| key(r)).collect();
        init_chain(&mut state, &features, &mut rngs);
        reverse_diffusion(model, &model.schedule, &features, &mut state, &mut rngs, true)?;
        Ok(state)
    })
    .into_iter()
    .collect()
}

fn write_back(table: &mut EncodedTable, rows: &[usize], states: &[ChainState]) {
    let (k_num, k_cat) = (table.n_numeric(), table.n_categorical());
    let mut it = rows.iter();
    for s in states {
        for i in 0..s.rows {
            let r = *it.next().expect("row per state entry");
            for j in 0..k_num {
                table.numeric[r * k_num + j] = s.numeric[i * k_num + j];
            }
            for j in 0..k_cat {
                table.categorical[r * k_cat + j] = s.codes[i * k_cat + j];
            }
        }
    }
}

/// Conditional generation in the encoded space.
pub fn generate_encoded(model: &Model, req: &GenerationRequest) -> Result<EncodedTable> {
    let schema = model.schema().clone();
    let prep = &model.preprocessor;
    let n = req.n_rows;
    let mut table = EncodedTable::empty(schema.clone(), n);
    let ti = schema.target_index();
    table.target = match &req.targets {
        TargetSource::Resample => resample_targets(&model.train_targets, n, &mut substream(req.seed, &[u64::MAX]))?,
        TargetSource::Provided(cells) => {
            if cells.len() != n {
                return Err(Error::Request(format!("{} target values for {n} rows", cells.len())));
            }
            let mut vals = Vec::with_capacity(n);
            for cell in cells {
                vals.push(
                    prep.encode_cell(ti, cell)?
                        .ok_or_else(|| Error::Request("provided target values must not be missing".into()))?,
                );
            }
            match schema.target().kind {
                ColumnKind::Numerical => TargetBlock::Real(vals),
                ColumnKind::Categorical => TargetBlock::Codes(vals.iter().map(|v| *v as usize).collect()),
            }
        }
    };
    let features = schema.features();
    let mut fixed = vec![false; features.len()];
    for cond in &req.conditions {
        let col = schema
            .column_index(&cond.column)
            .ok_or_else(|| Error::Request(format!("unknown conditioning column `{}`", cond.column)))?;
        let j = schema
            .feature_of_column(col)
            .ok_or_else(|| Error::Request(format!("`{}` is the target, not a feature", cond.column)))?;
        if cond.values.len() != n {
            return Err(Error::Request(format!(
                "{} values for conditioning column `{}`, expected {n}",
                cond.values.len(),
                cond.column
            )));
        }
        fixed[j] = true;
        let f = features[j];
        for (r, cell) in cond.values.iter().enumerate() {
            let v = prep
                .encode_cell(col, cell)?
                .ok_or_else(|| Error::Request(format!("missing value in conditioning column `{}`", cond.column)))?;
            match f.kind {
                ColumnKind::Numerical => table.set_numeric(r, f.block, v),
                ColumnKind::Categorical => table.set_code(r, f.block, v as usize),
            }
        }
    }
    let rows: Vec<usize> = (0..n).collect();
    let seed = req.seed;
    let states = run_rows(model, &table, &rows, &|_, j| !fixed[j], &|r| substream(seed, &[r as u64]))?;
    write_back(&mut table, &rows, &states);
    Ok(table)
}

/// Conditional generation decoded to raw values.
pub fn generate(model: &Model, req: &GenerationRequest) -> Result<RawTable> {
    let enc = generate_encoded(model, req)?;
    model.preprocessor.decode(&enc)
}

/// Fills every missing feature cell; observed cells are copied verbatim.
/// The returned table has an empty missing mask.
pub fn impute_encoded(model: &Model, req: &ImputationRequest) -> Result<EncodedTable> {
    let table = &req.table;
    model.check_schema(&table.schema)?;
    let n = table.n_rows();
    let k = table.n_features();
    let rows: Vec<usize> = (0..n).filter(|&r| table.missing_row(r).iter().any(|m| *m)).collect();
    if let Some(&r) = rows.iter().find(|&&r| table.target_missing[r]) {
        return Err(Error::Request(format!(
            "row {r} has missing features and no target; imputation needs the target"
        )));
    }
    let mut out = table.clone();
    if rows.is_empty() {
        return Ok(out);
    }
    let draws = req.draws.max(1);
    let mask = |r: usize, j: usize| table.missing[r * k + j];
    let results: Vec<Vec<ChainState>> = (0..draws)
        .map(|d| run_rows(model, table, &rows, &mask, &|r| substream(req.seed, &[d as u64, r as u64])))
        .collect::<Result<_>>()?;
    if draws == 1 {
        write_back(&mut out, &rows, &results[0]);
    } else {
        aggregate_draws(model, table, &mut out, &rows, &results);
    }
    out.missing.fill(false);
    Ok(out)
}

fn aggregate_draws(model: &Model, table: &EncodedTable, out: &mut EncodedTable, rows: &[usize], results: &[Vec<ChainState>]) {
    let schema = &table.schema;
    let (k_num, k_cat) = (table.n_numeric(), table.n_categorical());
    let k = table.n_features();
    let features = schema.features();
    let locate = |i: usize| (i / CHUNK_ROWS, i % CHUNK_ROWS);
    for (i, &r) in rows.iter().enumerate() {
        let (c, o) = locate(i);
        for (j, f) in features.iter().enumerate() {
            if !table.missing[r * k + j] {
                continue;
            }
            match f.kind {
                ColumnKind::Numerical => {
                    let q = model.preprocessor.quantile(f.column).expect("numeric column has a quantile map");
                    let mean = results
                        .iter()
                        .map(|d| q.inverse(d[c].numeric[o * k_num + f.block]))
                        .sum::<f64>()
                        / results.len() as f64;
                    out.numeric[r * k_num + f.block] = q.forward(mean);
                }
                ColumnKind::Categorical => {
                    let mut votes = vec![0usize; f.classes];
                    for d in results {
                        votes[d[c].codes[o * k_cat + f.block]] += 1;
                    }
                    let best = (0..f.classes).max_by_key(|&c| (votes[c], std::cmp::Reverse(c))).unwrap_or(0);
                    out.categorical[r * k_cat + f.block] = best;
                }
            }
        }
    }
}

/// Imputation from a raw table with missing cells.
pub fn impute(model: &Model, raw: &RawTable, seed: u64, draws: usize) -> Result<RawTable> {
    model.check_schema(&raw.schema)?;
    let enc = model.preprocessor.encode(raw)?;
    let done = impute_encoded(
        model,
        &ImputationRequest {
            table: enc,
            seed,
            draws,
        },
    )?;
    let mut decoded = model.preprocessor.decode(&done)?;
    // observed raw cells stay textually identical
    for (out_row, in_row) in decoded.rows.iter_mut().zip(&raw.rows) {
        for (o, i) in out_row.iter_mut().zip(in_row) {
            if !i.is_missing() {
                *o = i.clone();
            }
        }
    }
    Ok(decoded)
}

/// Provenance written next to sampler outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub timesteps: usize,
    pub checkpoint_sha256: String,
    pub request: serde_json::Value,
}

impl Sidecar {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::data::{ColumnSpec, Preprocessor, TableSchema};
    use crate::denoiser::DenoiserConfig;
    use crate::diffusion::{build_schedule, gaussian_forward, ScheduleKind};
    use crate::masking::MaskMode;
    use crate::stats::chi_square_p_value;
    use crate::tensor::Tensor;

    fn toy() -> (Model, RawTable) {
        let schema = TableSchema::new(vec![
            ColumnSpec::numerical("x"),
            ColumnSpec::categorical("c", 3),
            ColumnSpec::numerical("z"),
            ColumnSpec::categorical("y", 2).as_target(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows = (0..60)
            .map(|i| {
                vec![
                    Cell::Number(rng.random_range(0.0..10.0)),
                    Cell::Label(["a", "b", "c"][i % 3].into()),
                    Cell::Number(rng.random_range(-1.0..1.0)),
                    Cell::Label(["n", "p"][i % 2].into()),
                ]
            })
            .collect();
        let raw = RawTable::new(schema.clone(), rows).unwrap();
        let prep = Preprocessor::fit(&raw, &schema).unwrap();
        let enc = prep.encode(&raw).unwrap();
        let config = DenoiserConfig {
            latent_dim: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            feedforward_dim: 16,
        };
        let m = Model::new(prep, config, NoiseSchedule::default_for(6).unwrap(), MaskMode::Dynamic, enc.target, 1).unwrap();
        (m, raw)
    }

    #[test]
    fn generation_contract() {
        let (m, _) = toy();
        let req = GenerationRequest::unconditional(300, 5);
        let out = generate(&m, &req).unwrap();
        assert_eq!(out.n_rows(), 300);
        for row in &out.rows {
            assert!(row[0].as_number().is_some_and(f64::is_finite));
            assert!(matches!(&row[1], Cell::Label(l) if ["a", "b", "c"].contains(&l.as_str())));
            assert!(matches!(&row[3], Cell::Label(l) if ["n", "p"].contains(&l.as_str())));
        }
        assert_eq!(generate(&m, &req).unwrap(), out);
        assert_ne!(generate(&m, &GenerationRequest::unconditional(300, 6)).unwrap(), out);
    }

    #[test]
    fn conditioning_columns_pass_through() {
        let (m, _) = toy();
        let req = GenerationRequest {
            n_rows: 20,
            targets: TargetSource::Provided(vec![Cell::Label("p".into()); 20]),
            conditions: vec![
                ColumnCondition {
                    column: "x".into(),
                    values: vec![Cell::Number(m.preprocessor.quantile(0).unwrap().fit_values()[7]); 20],
                },
                ColumnCondition {
                    column: "c".into(),
                    values: vec![Cell::Label("b".into()); 20],
                },
            ],
            seed: 1,
        };
        let out = generate(&m, &req).unwrap();
        let v = m.preprocessor.quantile(0).unwrap().fit_values()[7];
        for row in &out.rows {
            assert_eq!(row[0], Cell::Number(v));
            assert_eq!(row[1], Cell::Label("b".into()));
            assert_eq!(row[3], Cell::Label("p".into()));
        }
        let bad = GenerationRequest {
            conditions: vec![ColumnCondition {
                column: "nope".into(),
                values: vec![],
            }],
            ..req.clone()
        };
        assert!(matches!(generate(&m, &bad), Err(Error::Request(_))));
    }

    #[test]
    fn imputation_fills_only_missing_cells() {
        let (m, raw) = toy();
        assert_eq!(impute(&m, &raw, 0, 1).unwrap(), raw);

        let mut holes = raw.clone();
        for r in (0..60).step_by(4) {
            holes.rows[r][r % 3] = Cell::Missing;
        }
        let out = impute(&m, &holes, 3, 1).unwrap();
        assert_eq!(out.missing_count(), 0);
        for (o, h) in out.rows.iter().zip(&holes.rows) {
            for (a, b) in o.iter().zip(h) {
                if !b.is_missing() {
                    assert_eq!(a, b);
                }
            }
        }
        assert_eq!(impute(&m, &holes, 3, 1).unwrap(), out);
        let multi = impute(&m, &holes, 3, 3).unwrap();
        assert_eq!(multi.missing_count(), 0);

        let mut no_y = holes.clone();
        no_y.rows[0][3] = Cell::Missing;
        assert!(matches!(impute(&m, &no_y, 0, 1), Err(Error::Request(_))));
    }

    #[test]
    fn target_resampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let single = TargetBlock::Real(vec![2.5]);
        assert_eq!(resample_targets(&single, 4, &mut rng).unwrap(), TargetBlock::Real(vec![2.5; 4]));
        assert_eq!(resample_targets(&single, 0, &mut rng).unwrap().len(), 0);
        assert!(resample_targets(&TargetBlock::Codes(vec![]), 3, &mut rng).is_err());
        let train = TargetBlock::Codes(vec![0, 0, 0, 1, 2, 2]);
        let n = 100_000;
        let TargetBlock::Codes(draws) = resample_targets(&train, n, &mut rng).unwrap() else {
            panic!("codes expected")
        };
        let mut counts = [0u64; 3];
        for d in draws {
            counts[d] += 1;
        }
        for (c, p) in counts.iter().zip([0.5, 1.0 / 6.0, 1.0 / 3.0]) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 3.0 * se);
        }
        assert!(chi_square_p_value(&counts, &[50_000.0, n as f64 / 6.0, n as f64 / 3.0]) > 0.01);
    }

    /// Predicts the exact noise separating the current state from known
    /// clean values.
    struct OracleNoise {
        x0: Vec<f64>,
        sched: NoiseSchedule,
    }

    impl NoisePredictor for OracleNoise {
        fn predict(&self, input: &DenoiserInput<'_>) -> Result<Prediction> {
            let ab = self.sched.alpha_bar(input.t[0]);
            let eps_hat = input
                .numeric
                .iter()
                .zip(&self.x0)
                .map(|(x, x0)| (x - ab.sqrt() * x0) / (1.0 - ab).sqrt())
                .collect();
            Ok(Prediction {
                eps_hat,
                logits: vec![],
            })
        }
    }

    #[test]
    fn oracle_noise_recovers_clean_values() {
        let schema = TableSchema::new(vec![
            ColumnSpec::numerical("a"),
            ColumnSpec::numerical("b"),
            ColumnSpec::numerical("y").as_target(),
        ])
        .unwrap();
        let features = schema.features();
        for (steps, tol) in [(1usize, 1e-6), (10, 1e-4)] {
            let sched = build_schedule(steps, ScheduleKind::Linear, 0.05, 0.3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(steps as u64);
            let rows = 50;
            let x0: Vec<f64> = (0..rows * 2).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
            let start: Vec<f64> = x0
                .iter()
                .map(|x| gaussian_forward(*x, steps, &sched, rng.sample(StandardNormal)))
                .collect();
            let mut state = ChainState {
                rows,
                numeric: start,
                codes: vec![],
                eff: vec![true; rows * 2],
                target: TargetBlock::Real(vec![0.0; rows]),
            };
            let mut rngs: Vec<ChaCha8Rng> = (0..rows).map(|r| substream(0, &[r as u64])).collect();
            let oracle = OracleNoise {
                x0: x0.clone(),
                sched: sched.clone(),
            };
            reverse_diffusion(&oracle, &sched, &features, &mut state, &mut rngs, false).unwrap();
            let err = state.numeric.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < tol, "T={steps}: {err}");
        }
    }

    /// Counts network calls to confirm the chain length.
    struct Counting {
        calls: std::sync::atomic::AtomicUsize,
        classes: usize,
    }

    impl NoisePredictor for Counting {
        fn predict(&self, input: &DenoiserInput<'_>) -> Result<Prediction> {
            self.calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            Ok(Prediction {
                eps_hat: vec![0.0; input.numeric.len()],
                logits: vec![Tensor::zeros(&[input.batch, self.classes])],
            })
        }
    }

    #[test]
    fn chain_runs_exactly_t_steps() {
        let schema = TableSchema::new(vec![
            ColumnSpec::numerical("a"),
            ColumnSpec::categorical("c", 4),
            ColumnSpec::numerical("y").as_target(),
        ])
        .unwrap();
        let sched = NoiseSchedule::default_for(7).unwrap();
        let p = Counting {
            calls: 0.into(),
            classes: 4,
        };
        let mut state = ChainState {
            rows: 3,
            numeric: vec![0.0; 3],
            codes: vec![0; 3],
            eff: vec![true; 6],
            target: TargetBlock::Real(vec![0.0; 3]),
        };
        let mut rngs: Vec<ChaCha8Rng> = (0..3).map(|r| substream(1, &[r])).collect();
        init_chain(&mut state, &schema.features(), &mut rngs);
        reverse_diffusion(&p, &sched, &schema.features(), &mut state, &mut rngs, true).unwrap();
        assert_eq!(p.calls.into_inner(), 7);
        assert!(state.codes.iter().all(|c| *c < 4));
    }
}
