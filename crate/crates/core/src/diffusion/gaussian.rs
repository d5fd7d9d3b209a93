use crate::diffusion::schedule::NoiseSchedule;

/// Closed-form forward jump `x_t = sqrt(ᾱ_t)·x0 + sqrt(1 − ᾱ_t)·ε`.
pub fn gaussian_forward(x0: f64, t: usize, sched: &NoiseSchedule, eps: f64) -> f64 {
    let ab = sched.alpha_bar(t);
    ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps
}

/// Reverse mean `(x_t − β_t/sqrt(1 − ᾱ_t)·ε̂)/sqrt(α_t)`.
pub fn gaussian_reverse_mean(x_t: f64, eps_hat: f64, t: usize, sched: &NoiseSchedule) -> f64 {
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    (x_t - coef * eps_hat) / sched.alpha(t).sqrt()
}

/// One reverse step; the noise `z` is ignored at `t = 1`.
pub fn gaussian_reverse_step(x_t: f64, eps_hat: f64, t: usize, sched: &NoiseSchedule, z: f64) -> f64 {
    let mean = gaussian_reverse_mean(x_t, eps_hat, t, sched);
    if t == 1 {
        mean
    } else {
        mean + sched.sigma(t) * z
    }
}
