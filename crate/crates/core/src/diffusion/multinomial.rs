use rand::Rng;

use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// Floor applied to the second argument of [`categorical_kl`].
pub const KL_FLOOR: f64 = 1e-12;

/// Draws an index from a probability vector by inverse CDF.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// First index of the largest entry.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = k;
        }
    }
    best
}

/// `ᾱ_t·onehot(x0) + (1 − ᾱ_t)/C`.
pub fn multinomial_marginal(x0: usize, classes: usize, t: usize, sched: &NoiseSchedule) -> Vec<f64> {
    let ab = sched.alpha_bar(t);
    let mut p = vec![(1.0 - ab) / classes as f64; classes];
    p[x0] += ab;
    p
}

pub fn multinomial_forward_sample<R: Rng + ?Sized>(
    x0: usize,
    classes: usize,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> usize {
    sample_categorical(&multinomial_marginal(x0, classes, t, sched), rng)
}

/// Posterior over `x_{t−1}` given the current class `x_t` and a
/// distribution `x0` over clean classes, written into `out`.
pub fn multinomial_posterior_into(x_t: usize, x0: &[f64], t: usize, sched: &NoiseSchedule, out: &mut [f64]) -> Result<()> {
    let c = x0.len() as f64;
    let a = sched.alpha(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let mut total = 0.0;
    for (k, (o, p)) in out.iter_mut().zip(x0).enumerate() {
        let step = if k == x_t { a } else { 0.0 } + (1.0 - a) / c;
        let jump = ab_prev * p + (1.0 - ab_prev) / c;
        *o = step * jump;
        total += *o;
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!("categorical posterior has total mass {total}")));
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(())
}

pub fn multinomial_posterior(x_t: usize, x0: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x0.len()];
    multinomial_posterior_into(x_t, x0, t, sched, &mut out)?;
    Ok(out)
}

/// Samples `x_{t−1}`; at `t = 1` returns the posterior argmax instead.
pub fn multinomial_reverse_step<R: Rng + ?Sized>(
    x_t: usize,
    x0_probs: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<usize> {
    let post = multinomial_posterior(x_t, x0_probs, t, sched)?;
    Ok(if t == 1 {
        argmax(&post)
    } else {
        sample_categorical(&post, rng)
    })
}

/// `Σ q_k ln(q_k / p_k)` with `0·ln 0 = 0` and `p` floored at [`KL_FLOOR`].
pub fn categorical_kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(q, _)| **q > 0.0)
        .map(|(q, p)| q * (q / p.max(KL_FLOOR)).ln())
        .sum::<f64>()
        .max(0.0)
}
