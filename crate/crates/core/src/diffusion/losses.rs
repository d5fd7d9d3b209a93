use crate::diffusion::multinomial::{categorical_kl, multinomial_posterior_into};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, CustomOp, Graph, Tensor, Var};

/// Mean squared error over entries flagged in `valid`; 0 when none are.
pub fn loss_simple(eps: &[f64], eps_hat: &[f64], valid: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((e, p), v) in eps.iter().zip(eps_hat).zip(valid) {
        if *v {
            sum += (e - p).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Categorical diffusion loss for one cell: the KL between the true and
/// predicted posteriors for `t > 1`, the negative log-likelihood of the
/// clean class at `t = 1`.
pub fn loss_multinomial(x0: usize, x0_probs: &[f64], x_t: usize, t: usize, sched: &NoiseSchedule) -> Result<f64> {
    if t == 1 {
        return Ok(-x0_probs[x0].max(1e-300).ln());
    }
    let c = x0_probs.len();
    let mut onehot = vec![0.0; c];
    onehot[x0] = 1.0;
    let mut q = vec![0.0; c];
    let mut p = vec![0.0; c];
    multinomial_posterior_into(x_t, &onehot, t, sched, &mut q)?;
    multinomial_posterior_into(x_t, x0_probs, t, sched, &mut p)?;
    Ok(categorical_kl(&q, &p))
}

/// `L_simple/K_num + (Σ L_i/Cl_i)/K_cat`, dropping a term whose count is 0.
pub fn loss_total(l_simple: f64, cat_losses: &[f64], k_num: usize, classes: &[usize]) -> f64 {
    let num = if k_num == 0 { 0.0 } else { l_simple / k_num as f64 };
    let cat = if cat_losses.is_empty() {
        0.0
    } else {
        cat_losses
            .iter()
            .zip(classes)
            .map(|(l, c)| l / *c as f64)
            .sum::<f64>()
            / cat_losses.len() as f64
    };
    num + cat
}

/// Loss op whose input gradient was computed during the forward pass.
struct PrecomputedGrad {
    name: &'static str,
    grad: Vec<f64>,
    shape: Vec<usize>,
}

impl CustomOp for PrecomputedGrad {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let g = grad.item();
        let data = self.grad.iter().map(|d| d * g).collect();
        vec![Tensor::new(self.shape.clone(), data).expect("shape of recorded input")]
    }
}

/// Masked mean squared error between `pred` and a constant `target`.
pub fn masked_mse(g: &mut Graph, pred: Var, target: &[f64], valid: &[bool]) -> Result<Var> {
    let p = g.value(pred);
    if p.len() != target.len() || p.len() != valid.len() {
        return Err(Error::Shape {
            op: "masked_mse",
            lhs: p.shape().to_vec(),
            rhs: vec![target.len()],
        });
    }
    let n = valid.iter().filter(|v| **v).count();
    let loss = loss_simple(target, p.data(), valid);
    let grad = p
        .data()
        .iter()
        .zip(target)
        .zip(valid)
        .map(|((p, e), v)| if *v { 2.0 * (p - e) / n as f64 } else { 0.0 })
        .collect();
    let shape = p.shape().to_vec();
    g.custom(
        &[pred],
        Tensor::scalar(loss),
        Box::new(PrecomputedGrad {
            name: "masked_mse",
            grad,
            shape,
        }),
    )
}

/// Per-row inputs of [`categorical_loss`].
#[derive(Debug, Clone, Copy)]
pub struct CategoricalBatch<'a> {
    pub x0: &'a [usize],
    pub x_t: &'a [usize],
    pub t: &'a [usize],
    pub valid: &'a [bool],
}

/// Mean categorical diffusion loss over valid rows of `logits` (`b × C`),
/// with the softmax applied inside the op.
pub fn categorical_loss(g: &mut Graph, logits: Var, batch: CategoricalBatch<'_>, sched: &NoiseSchedule) -> Result<Var> {
    let lt = g.value(logits);
    let (b, c) = (lt.rows(), lt.cols());
    let CategoricalBatch { x0, x_t, t, valid } = batch;
    if [x0.len(), x_t.len(), t.len(), valid.len()].iter().any(|n| *n != b) {
        return Err(Error::Shape {
            op: "categorical_loss",
            lhs: lt.shape().to_vec(),
            rhs: vec![x0.len()],
        });
    }
    let n = valid.iter().filter(|v| **v).count();
    let mut grad = vec![0.0; b * c];
    let mut total = 0.0;
    let mut p = vec![0.0; c];
    let mut q = vec![0.0; c];
    let mut onehot = vec![0.0; c];
    let mut m = vec![0.0; c];
    let mut a = vec![0.0; c];
    for r in 0..b {
        if !valid[r] {
            continue;
        }
        let (xr, xt, tr) = (x0[r], x_t[r], t[r]);
        if xr >= c || xt >= c {
            return Err(Error::Index {
                what: "class code",
                index: xr.max(xt),
                size: c,
            });
        }
        p.copy_from_slice(lt.row(r));
        softmax_in_place(&mut p);
        let gr = &mut grad[r * c..(r + 1) * c];
        if tr == 1 {
            let row = lt.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[xr];
            for k in 0..c {
                gr[k] = p[k] - f64::from(u8::from(k == xr));
            }
        } else {
            let alpha = sched.alpha(tr);
            let c1 = sched.alpha_bar(tr - 1);
            let c0 = (1.0 - c1) / c as f64;
            onehot.fill(0.0);
            onehot[xr] = 1.0;
            multinomial_posterior_into(xt, &onehot, tr, sched, &mut q)?;
            let mut s = 0.0;
            for k in 0..c {
                m[k] = c1 * p[k] + c0;
                a[k] = if k == xt { alpha } else { 0.0 } + (1.0 - alpha) / c as f64;
                s += a[k] * m[k];
            }
            let pred: Vec<f64> = (0..c).map(|k| a[k] * m[k] / s).collect();
            total += categorical_kl(&q, &pred);
            let dp: Vec<f64> = (0..c).map(|k| c1 * (a[k] / s - q[k] / m[k])).collect();
            let dot: f64 = p.iter().zip(&dp).map(|(p, d)| p * d).sum();
            for k in 0..c {
                gr[k] = p[k] * (dp[k] - dot);
            }
        }
        gr.iter_mut().for_each(|v| *v /= n as f64);
    }
    let loss = if n == 0 { 0.0 } else { total / n as f64 };
    let shape = lt.shape().to_vec();
    g.custom(
        &[logits],
        Tensor::scalar(loss),
        Box::new(PrecomputedGrad {
            name: "categorical_loss",
            grad,
            shape,
        }),
    )
}

/// Graph form of [`loss_total`]; `categorical` pairs each loss with its
/// class count. Returns a constant zero when both groups are empty.
pub fn combine_losses(g: &mut Graph, numeric: Option<(Var, usize)>, categorical: &[(Var, usize)]) -> Result<Var> {
    let mut terms = Vec::new();
    if let Some((v, k_num)) = numeric {
        if k_num > 0 {
            terms.push((v, 1.0 / k_num as f64));
        }
    }
    let k_cat = categorical.len() as f64;
    for (v, classes) in categorical {
        terms.push((*v, 1.0 / (*classes as f64 * k_cat)));
    }
    if terms.is_empty() {
        return Ok(g.input(Tensor::scalar(0.0)));
    }
    g.weighted_sum(&terms)
}
