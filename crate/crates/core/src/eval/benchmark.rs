use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, ColumnKind, EncodedTable, Preprocessor, RawTable};
use crate::error::{Error, Result};
use crate::eval::missing::{inject_missing, realized_rate, MissingSpec};
use crate::eval::probes::{probe_score, DesignEncoder, ProbeKind};
use crate::eval::similarity::MinMax;
use crate::model::Model;
use crate::rng::substream;
use crate::sampler::{impute_encoded, ImputationRequest};

/// Row indices of the imputation-training, imputation-testing and
/// hold-out splits (40/30/30).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub imputation_train: Vec<usize>,
    pub imputation_test: Vec<usize>,
    pub holdout: Vec<usize>,
}

pub fn split_40_30_30(n: usize, seed: u64) -> Splits {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, &[u64::MAX - 1]));
    let a = (n as f64 * 0.4).round() as usize;
    let b = a + (n as f64 * 0.3).round() as usize;
    Splits {
        imputation_train: order[..a].to_vec(),
        imputation_test: order[a..b.min(n)].to_vec(),
        holdout: order[b.min(n)..].to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSettings {
    pub probe: ProbeKind,
    /// Reverse chains per imputed row.
    pub draws: usize,
    pub seed: u64,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            probe: ProbeKind::Linear,
            draws: 1,
            seed: 0,
        }
    }
}

/// Outcome for one (mechanism, rate) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub mechanism: String,
    pub rate: f64,
    pub realized_rate: f64,
    pub missing_numeric: usize,
    pub missing_categorical: usize,
    /// RMSE over missing numeric cells, min-max scaled on the full dataset.
    pub rmse_model: Option<f64>,
    pub rmse_mean: Option<f64>,
    /// Accuracy over missing categorical cells.
    pub accuracy_model: Option<f64>,
    pub accuracy_mode: Option<f64>,
    /// Probe trained on the model-imputed test split, scored on the hold-out.
    pub probe_metric: f64,
    /// Same probe trained on the mean/mode-imputed split.
    pub probe_metric_baseline: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: [usize; 3],
    /// `f1_weighted` or `mse`.
    pub probe_metric: String,
    pub probe: ProbeKind,
    /// Probe trained on the intact imputation-testing split.
    pub control_probe_metric: f64,
    pub cells: Vec<ImputationReport>,
}

fn column_baseline(observed: impl Iterator<Item = Cell>, kind: ColumnKind) -> Cell {
    match kind {
        ColumnKind::Numerical => {
            let v: Vec<f64> = observed.filter_map(|c| c.as_number()).collect();
            Cell::Number(crate::stats::mean(&v))
        }
        ColumnKind::Categorical => {
            let mut counts = std::collections::BTreeMap::<String, usize>::new();
            for c in observed {
                *counts.entry(c.text()).or_default() += 1;
            }
            let best = counts.iter().fold(None::<(&String, usize)>, |best, (l, n)| match best {
                Some((_, m)) if m >= *n => best,
                _ => Some((l, *n)),
            });
            Cell::Label(best.map(|(l, _)| l.clone()).unwrap_or_default())
        }
    }
}

/// Runs the imputation benchmark for every spec. `factory` trains a
/// generator on the incomplete imputation-training split.
pub fn benchmark_imputation<F>(
    dataset: &RawTable,
    specs: &[MissingSpec],
    settings: &BenchmarkSettings,
    mut factory: F,
) -> Result<BenchmarkReport>
where
    F: FnMut(&EncodedTable, &Preprocessor, &MissingSpec) -> Result<Model>,
{
    if dataset.missing_count() > 0 {
        return Err(Error::Request("the benchmark needs a complete source dataset".into()));
    }
    for s in specs {
        s.validate()?;
    }
    let schema = &dataset.schema;
    let prep = Preprocessor::fit(dataset, schema)?;
    let encoded = prep.encode(dataset)?;
    let splits = split_40_30_30(dataset.n_rows(), settings.seed);
    let (n1, n2) = (splits.imputation_train.len(), splits.imputation_test.len());
    let first_two: Vec<usize> = splits.imputation_train.iter().chain(&splits.imputation_test).copied().collect();
    let second_rows: Vec<usize> = (n1..n1 + n2).collect();
    let holdout = dataset.select_rows(&splits.holdout);
    let intact_test = dataset.select_rows(&splits.imputation_test);
    let scales: Vec<Option<MinMax>> = (0..schema.len())
        .map(|c| {
            (schema.columns[c].kind == ColumnKind::Numerical)
                .then(|| MinMax::fit(&crate::eval::similarity::numeric_column(dataset, c)))
        })
        .collect();
    let score = |train: &RawTable| -> Result<f64> {
        let enc = DesignEncoder::fit(train)?;
        probe_score(settings.probe, &enc, train, &holdout, settings.seed)
    };
    let control_probe_metric = score(&intact_test)?;
    let features = schema.features();
    let k = features.len();

    let mut cells = Vec::with_capacity(specs.len());
    for spec in specs {
        let injected = inject_missing(&encoded.select_rows(&first_two), spec)?;
        let train_split = injected.select_rows(&(0..n1).collect::<Vec<_>>());
        let test_split = injected.select_rows(&second_rows);
        let started = Instant::now();
        let model = factory(&train_split, &prep, spec)?;
        let train_seconds = started.elapsed().as_secs_f64();
        let imputed = impute_encoded(
            &model,
            &ImputationRequest {
                table: test_split.clone(),
                seed: settings.seed,
                draws: settings.draws,
            },
        )?;
        let decoded = prep.decode(&imputed)?;
        let mut imputed_raw = intact_test.clone();

        let injected_raw = prep.decode(&injected)?;
        let baselines: Vec<Cell> = features
            .iter()
            .map(|f| {
                column_baseline(
                    injected_raw.column(f.column).filter(|c| !c.is_missing()).cloned(),
                    f.kind,
                )
            })
            .collect();
        let mut baseline_raw = intact_test.clone();
        let (mut se_model, mut se_mean, mut n_num) = (0.0, 0.0, 0usize);
        let (mut hit_model, mut hit_mode, mut n_cat) = (0usize, 0usize, 0usize);
        for r in 0..n2 {
            for (j, f) in features.iter().enumerate() {
                if !test_split.missing[r * k + j] {
                    continue;
                }
                let truth = &intact_test.rows[r][f.column];
                let guess = &decoded.rows[r][f.column];
                imputed_raw.rows[r][f.column] = guess.clone();
                baseline_raw.rows[r][f.column] = baselines[j].clone();
                match f.kind {
                    ColumnKind::Numerical => {
                        let s = scales[f.column].expect("numeric column has a scale");
                        let t = s.apply(truth.as_number().unwrap_or(0.0));
                        se_model += (s.apply(guess.as_number().unwrap_or(0.0)) - t).powi(2);
                        se_mean += (s.apply(baselines[j].as_number().unwrap_or(0.0)) - t).powi(2);
                        n_num += 1;
                    }
                    ColumnKind::Categorical => {
                        hit_model += usize::from(guess.text() == truth.text());
                        hit_mode += usize::from(baselines[j].text() == truth.text());
                        n_cat += 1;
                    }
                }
            }
        }
        let rmse = |se: f64| (n_num > 0).then(|| (se / n_num as f64).sqrt());
        let acc = |hits: usize| (n_cat > 0).then(|| hits as f64 / n_cat as f64);
        let report = ImputationReport {
            mechanism: spec.mechanism.label().into(),
            rate: spec.rate,
            realized_rate: realized_rate(&injected),
            missing_numeric: n_num,
            missing_categorical: n_cat,
            rmse_model: rmse(se_model),
            rmse_mean: rmse(se_mean),
            accuracy_model: acc(hit_model),
            accuracy_mode: acc(hit_mode),
            probe_metric: score(&imputed_raw)?,
            probe_metric_baseline: score(&baseline_raw)?,
            train_seconds,
        };
        log::info!(
            "{} @ {:.2}: rmse {:?} vs {:?}, accuracy {:?} vs {:?}, probe {:.4}",
            report.mechanism,
            report.rate,
            report.rmse_model,
            report.rmse_mean,
            report.accuracy_model,
            report.accuracy_mode,
            report.probe_metric
        );
        cells.push(report);
    }
    Ok(BenchmarkReport {
        rows: [n1, n2, splits.holdout.len()],
        probe_metric: if schema.target().kind == ColumnKind::Categorical { "f1_weighted" } else { "mse" }.into(),
        probe: settings.probe,
        control_probe_metric,
        cells,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

impl BenchmarkReport {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "mechanism,rate,realized_rate,rmse_model,rmse_mean,accuracy_model,accuracy_mode,probe_metric,probe_metric_baseline\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.mechanism,
                c.rate,
                c.realized_rate,
                fmt_opt(c.rmse_model),
                fmt_opt(c.rmse_mean),
                fmt_opt(c.accuracy_model),
                fmt_opt(c.accuracy_mode),
                c.probe_metric,
                c.probe_metric_baseline
            ));
        }
        out
    }

    /// Writes `<mechanism>_<rate>.json` per cell plus `summary.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut written = Vec::new();
        for c in &self.cells {
            let path = dir.join(format!("{}_{:.2}.json", c.mechanism.to_lowercase(), c.rate));
            let text = serde_json::to_string_pretty(c)? + "\n";
            std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            written.push(path);
        }
        let path = dir.join("summary.csv");
        std::fs::write(&path, self.summary_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        written.push(path);
        Ok(written)
    }
}
