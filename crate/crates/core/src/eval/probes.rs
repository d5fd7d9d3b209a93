use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, ColumnKind, RawTable};
use crate::diffusion::masked_mse;
use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Adam, CustomOp, Graph, Linear, ParamStore, Tensor, Var};

pub const PROBE_L2: f64 = 1e-3;
const LINEAR_STEPS: usize = 1000;
const LINEAR_LR: f64 = 0.05;
pub const MLP_HIDDEN: usize = 64;
pub const MLP_EPOCHS: usize = 200;
const MLP_BATCH: usize = 64;
const MLP_LR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    #[default]
    Linear,
    Mlp,
}

/// Turns raw rows into standardized numerics plus one-hot categoricals,
/// with the scaling and label sets fit on one reference table.
#[derive(Debug, Clone)]
pub struct DesignEncoder {
    columns: Vec<DesignColumn>,
    width: usize,
    target: usize,
}

#[derive(Debug, Clone)]
enum DesignColumn {
    Numeric { index: usize, mean: f64, std: f64 },
    OneHot { index: usize, labels: BTreeMap<String, usize> },
}

fn require_complete(t: &RawTable) -> Result<()> {
    if t.missing_count() > 0 {
        return Err(Error::Request("probe tables must be complete".into()));
    }
    Ok(())
}

impl DesignEncoder {
    pub fn fit(reference: &RawTable) -> Result<Self> {
        require_complete(reference)?;
        let target = reference.schema.target_index();
        let mut columns = Vec::new();
        let mut width = 0;
        for (index, spec) in reference.schema.columns.iter().enumerate() {
            if index == target {
                continue;
            }
            match spec.kind {
                ColumnKind::Numerical => {
                    let v: Vec<f64> = reference.column(index).filter_map(Cell::as_number).collect();
                    let mean = crate::stats::mean(&v);
                    let std = crate::stats::variance(&v).sqrt();
                    columns.push(DesignColumn::Numeric {
                        index,
                        mean,
                        std: if std > 0.0 { std } else { 1.0 },
                    });
                    width += 1;
                }
                ColumnKind::Categorical => {
                    let mut labels = BTreeMap::new();
                    for c in reference.column(index) {
                        labels.insert(c.text(), 0);
                    }
                    for (i, v) in labels.values_mut().enumerate() {
                        *v = i;
                    }
                    width += labels.len();
                    columns.push(DesignColumn::OneHot { index, labels });
                }
            }
        }
        Ok(Self { columns, width, target })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn encode(&self, t: &RawTable) -> Result<Tensor> {
        require_complete(t)?;
        let mut data = vec![0.0; t.n_rows() * self.width];
        for (row, out) in t.rows.iter().zip(data.chunks_mut(self.width.max(1))) {
            let mut at = 0;
            for col in &self.columns {
                match col {
                    DesignColumn::Numeric { index, mean, std } => {
                        let v = row[*index]
                            .as_number()
                            .ok_or_else(|| Error::Request(format!("`{}` is not a number", row[*index].text())))?;
                        out[at] = (v - mean) / std;
                        at += 1;
                    }
                    DesignColumn::OneHot { index, labels } => {
                        if let Some(i) = labels.get(&row[*index].text()) {
                            out[at + i] = 1.0;
                        }
                        at += labels.len();
                    }
                }
            }
        }
        Tensor::new(vec![t.n_rows(), self.width], data)
    }
}

/// Mean softmax cross-entropy of `b × C` logits.
struct CrossEntropy {
    grad: Vec<f64>,
}

impl CustomOp for CrossEntropy {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let g = grad.item();
        let data = self.grad.iter().map(|v| v * g).collect();
        vec![Tensor::new(inputs[0].shape().to_vec(), data).expect("gradient matches input shape")]
    }
}

fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let l = g.value(logits);
    let c = l.cols();
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; l.len()];
    for (r, &y) in labels.iter().enumerate() {
        let mut p = l.row(r).to_vec();
        softmax_in_place(&mut p);
        loss -= p[y].max(1e-300).ln() / n;
        for (k, pk) in p.iter().enumerate() {
            grad[r * c + k] = (pk - f64::from(u8::from(k == y))) / n;
        }
    }
    g.custom(&[logits], Tensor::scalar(loss), Box::new(CrossEntropy { grad }))
}

enum Labels<'a> {
    Classes(&'a [usize], usize),
    Values(&'a [f64]),
}

struct Network {
    store: ParamStore,
    layers: Vec<Linear>,
}

impl Network {
    fn new(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut store = ParamStore::new();
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&mut store, &format!("probe.{i}"), w[0], w[1], rng))
            .collect();
        Self { store, layers }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    fn step(&mut self, x: Tensor, labels: &Labels, lr: f64, l2: f64) -> Result<()> {
        let grads = {
            let mut g = Graph::new(&self.store);
            let xv = g.input(x);
            let out = self.forward(&mut g, xv)?;
            let mut loss = match labels {
                Labels::Classes(y, _) => cross_entropy(&mut g, out, y)?,
                Labels::Values(y) => masked_mse(&mut g, out, y, &vec![true; y.len()])?,
            };
            if l2 > 0.0 {
                for layer in &self.layers {
                    let w = g.param(layer.weight);
                    let sq = g.mul(w, w)?;
                    let s = g.sum(sq)?;
                    let s = g.scale(s, l2)?;
                    loss = g.add(loss, s)?;
                }
            }
            g.backward(loss)?
        };
        self.store.accumulate(&grads);
        Adam::new(lr).step(&mut self.store)
    }

    fn predict(&self, x: Tensor) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let xv = g.input(x);
        let out = self.forward(&mut g, xv)?;
        Ok(g.value(out).clone())
    }
}

fn select_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let c = x.cols();
    let data = rows.iter().flat_map(|&r| x.row(r).iter().copied()).collect();
    Tensor::new(vec![rows.len(), c], data).expect("row selection keeps the width")
}

fn fit_network(kind: ProbeKind, x: &Tensor, labels: Labels, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = match labels {
        Labels::Classes(_, k) => k,
        Labels::Values(_) => 1,
    };
    let n = x.rows();
    match kind {
        ProbeKind::Linear => {
            let mut net = Network::new(&[x.cols(), out], &mut rng);
            for s in 0..LINEAR_STEPS {
                let lr = LINEAR_LR * (1.0 - s as f64 / LINEAR_STEPS as f64);
                net.step(x.clone(), &labels, lr, PROBE_L2)?;
            }
            Ok(net)
        }
        ProbeKind::Mlp => {
            let mut net = Network::new(&[x.cols(), MLP_HIDDEN, MLP_HIDDEN, out], &mut rng);
            let mut order: Vec<usize> = (0..n).collect();
            for _ in 0..MLP_EPOCHS {
                order.shuffle(&mut rng);
                for batch in order.chunks(MLP_BATCH) {
                    let xb = select_rows(x, batch);
                    match &labels {
                        Labels::Classes(y, k) => {
                            let yb: Vec<usize> = batch.iter().map(|&r| y[r]).collect();
                            net.step(xb, &Labels::Classes(&yb, *k), MLP_LR, 0.0)?;
                        }
                        Labels::Values(y) => {
                            let yb: Vec<f64> = batch.iter().map(|&r| y[r]).collect();
                            net.step(xb, &Labels::Values(&yb), MLP_LR, 0.0)?;
                        }
                    }
                }
            }
            Ok(net)
        }
    }
}

/// Support-weighted mean of per-class F1 over the classes present in `truth`.
pub fn weighted_f1(truth: &[usize], pred: &[usize]) -> f64 {
    let classes = truth.iter().chain(pred).copied().max().map_or(0, |m| m + 1);
    let mut tp = vec![0.0; classes];
    let mut fp = vec![0.0; classes];
    let mut support = vec![0.0; classes];
    for (t, p) in truth.iter().zip(pred) {
        support[*t] += 1.0;
        if t == p {
            tp[*t] += 1.0;
        } else {
            fp[*p] += 1.0;
        }
    }
    let n = truth.len() as f64;
    (0..classes)
        .filter(|&c| support[c] > 0.0)
        .map(|c| {
            let f1 = 2.0 * tp[c] / (2.0 * tp[c] + fp[c] + (support[c] - tp[c]));
            support[c] / n * f1
        })
        .sum()
}

pub fn mean_squared_error(truth: &[f64], pred: &[f64]) -> f64 {
    truth.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64
}

fn numeric_target(t: &RawTable, target: usize) -> Result<Vec<f64>> {
    t.column(target)
        .map(|c| c.as_number().ok_or_else(|| Error::Request(format!("target `{}` is not a number", c.text()))))
        .collect()
}

/// Fits a probe of `kind` on `train` (features encoded with `encoder`) and
/// scores it on `test`: weighted F1 for a categorical target, MSE for a
/// numeric one.
pub fn probe_score(kind: ProbeKind, encoder: &DesignEncoder, train: &RawTable, test: &RawTable, seed: u64) -> Result<f64> {
    if train.schema != test.schema {
        return Err(Error::SchemaMismatch("probe train and test schemas differ".into()));
    }
    if train.n_rows() == 0 || test.n_rows() == 0 {
        return Err(Error::Probe("empty train or test split".into()));
    }
    let ti = encoder.target;
    let x_train = encoder.encode(train)?;
    let x_test = encoder.encode(test)?;
    match train.schema.columns[ti].kind {
        ColumnKind::Categorical => {
            let mut labels: BTreeMap<String, usize> = BTreeMap::new();
            for c in train.column(ti).chain(test.column(ti)) {
                labels.insert(c.text(), 0);
            }
            for (i, v) in labels.values_mut().enumerate() {
                *v = i;
            }
            let y_train: Vec<usize> = train.column(ti).map(|c| labels[&c.text()]).collect();
            let y_test: Vec<usize> = test.column(ti).map(|c| labels[&c.text()]).collect();
            if y_train.iter().all(|y| *y == y_train[0]) {
                return Err(Error::Probe("the training split contains a single class".into()));
            }
            let net = fit_network(kind, &x_train, Labels::Classes(&y_train, labels.len()), seed)?;
            let logits = net.predict(x_test)?;
            let pred: Vec<usize> = (0..logits.rows())
                .map(|r| {
                    let row = logits.row(r);
                    (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
                })
                .collect();
            Ok(weighted_f1(&y_test, &pred))
        }
        ColumnKind::Numerical => {
            let y_train = numeric_target(train, ti)?;
            let y_test = numeric_target(test, ti)?;
            let mean = crate::stats::mean(&y_train);
            let std = crate::stats::variance(&y_train).sqrt();
            let std = if std > 0.0 { std } else { 1.0 };
            let scaled: Vec<f64> = y_train.iter().map(|y| (y - mean) / std).collect();
            let net = fit_network(kind, &x_train, Labels::Values(&scaled), seed)?;
            let pred: Vec<f64> = net.predict(x_test)?.data().iter().map(|p| p * std + mean).collect();
            Ok(mean_squared_error(&y_test, &pred))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlEfficiency {
    /// `f1_weighted` or `mse`.
    pub metric: String,
    pub probe: ProbeKind,
    pub real: f64,
    pub synthetic: f64,
    /// How much worse the synthetic-trained probe scores; positive means
    /// worse for either metric.
    pub gap: f64,
}

/// Trains the probe on real and on synthetic training data and scores
/// both on the same real test split.
pub fn ml_efficiency(
    real_train: &RawTable,
    synth_train: &RawTable,
    test: &RawTable,
    kind: ProbeKind,
    seed: u64,
) -> Result<MlEfficiency> {
    if real_train.schema != synth_train.schema {
        return Err(Error::SchemaMismatch("real and synthetic schemas differ".into()));
    }
    let encoder = DesignEncoder::fit(real_train)?;
    let real = probe_score(kind, &encoder, real_train, test, seed)?;
    let synthetic = probe_score(kind, &encoder, synth_train, test, seed)?;
    let classification = real_train.schema.target().kind == ColumnKind::Categorical;
    Ok(MlEfficiency {
        metric: if classification { "f1_weighted" } else { "mse" }.into(),
        probe: kind,
        real,
        synthetic,
        gap: if classification { real - synthetic } else { synthetic - real },
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::data::{ColumnSpec, TableSchema};

    fn separable(n: usize, seed: u64) -> RawTable {
        let schema = TableSchema::new(vec![
            ColumnSpec::numerical("a"),
            ColumnSpec::numerical("b"),
            ColumnSpec::categorical("c", 2),
            ColumnSpec::categorical("y", 2).as_target(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let shift = if a + b > 0.0 { 0.5 } else { -0.5 };
                vec![
                    Cell::Number(a + shift),
                    Cell::Number(b + shift),
                    Cell::Label(if rng.random::<bool>() { "u" } else { "v" }.into()),
                    Cell::Label(if a + b > 0.0 { "pos" } else { "neg" }.into()),
                ]
            })
            .collect();
        RawTable::new(schema, rows).unwrap()
    }

    fn copy_task(n: usize, seed: u64) -> RawTable {
        let schema = TableSchema::new(vec![ColumnSpec::numerical("x"), ColumnSpec::numerical("y").as_target()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                vec![Cell::Number(x), Cell::Number(x)]
            })
            .collect();
        RawTable::new(schema, rows).unwrap()
    }

    #[test]
    fn f1_examples() {
        assert_eq!(weighted_f1(&[0, 1, 1, 0], &[0, 1, 1, 0]), 1.0);
        // class 0: tp 1, fp 0, fn 1 → 2/3; class 1: tp 2, fp 1, fn 0 → 0.8
        let f = weighted_f1(&[0, 0, 1, 1], &[0, 1, 1, 1]);
        assert!((f - (0.5 * 2.0 / 3.0 + 0.5 * 0.8)).abs() < 1e-12);
    }

    #[test]
    fn separable_classes_are_learned() {
        let train = separable(400, 1);
        let test = separable(400, 2);
        let enc = DesignEncoder::fit(&train).unwrap();
        assert!(probe_score(ProbeKind::Linear, &enc, &train, &test, 0).unwrap() > 0.99);
        assert!(probe_score(ProbeKind::Mlp, &enc, &train, &test, 0).unwrap() > 0.99);
    }

    #[test]
    fn identity_regression() {
        let train = copy_task(300, 3);
        let test = copy_task(200, 4);
        let enc = DesignEncoder::fit(&train).unwrap();
        assert!(probe_score(ProbeKind::Linear, &enc, &train, &test, 0).unwrap() < 1e-3);
        assert!(probe_score(ProbeKind::Mlp, &enc, &train, &test, 0).unwrap() < 1e-2);
    }

    #[test]
    fn identical_training_data_has_zero_gap() {
        let train = separable(300, 5);
        let test = separable(300, 6);
        let e = ml_efficiency(&train, &train, &test, ProbeKind::Linear, 9).unwrap();
        assert_eq!(e.gap, 0.0);
        assert_eq!(e.metric, "f1_weighted");
    }

    #[test]
    fn single_class_split_is_rejected() {
        let train = separable(200, 7);
        let rows: Vec<usize> = (0..200).filter(|&r| train.rows[r][3].text() == "pos").collect();
        let one = train.select_rows(&rows);
        let enc = DesignEncoder::fit(&one).unwrap();
        assert!(matches!(probe_score(ProbeKind::Linear, &enc, &one, &train, 0), Err(Error::Probe(_))));
    }
}
