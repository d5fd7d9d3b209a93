use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::param::ParamStore;

/// Compares reverse-mode gradients of a scalar graph against central finite
/// differences with step `h`.
///
/// Checks up to `per_param` randomly chosen coordinates of every parameter
/// (all of them when the parameter is smaller). Returns the largest
/// `|g_ad − g_fd| / max(1, |g_ad|, |g_fd|)`.
pub fn grad_check<F>(store: &mut ParamStore, f: F, h: f64, per_param: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, per_param).into_vec()
        };
        for c in coords {
            let ad = analytic.get(id).map_or(0.0, |g| g.data()[c]);
            let orig = store.value(id).data()[c];
            store.get_mut(id).value.data_mut()[c] = orig + h;
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = orig - h;
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[c] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
