//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Mode, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::error::{FdpError, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub mode: Mode,
    /// Check at most this many coordinates per tensor (chosen with `seed`); `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-6,
            mode: Mode::Train,
            max_coords: None,
            seed: 0,
        }
    }
}

impl GradCheckOptions {
    pub fn with_eps(eps: f64) -> Self {
        GradCheckOptions {
            eps,
            ..Default::default()
        }
    }
}

/// Largest coordinate-wise mismatch found.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    pub worst_tensor: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst_tensor: 0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            coords_checked: 0,
        }
    }

    fn record(&mut self, tensor: usize, index: usize, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
        self.coords_checked += 1;
        if err > self.max_rel_error || self.coords_checked == 1 {
            self.max_rel_error = err.max(self.max_rel_error);
            self.worst_tensor = tensor;
            self.worst_index = index;
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }
}

fn validate_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-2).contains(&eps) {
        return Err(FdpError::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-6, 1e-2]"
        )));
    }
    Ok(())
}

fn coords(len: usize, opts: &GradCheckOptions, salt: u64) -> Vec<usize> {
    match opts.max_coords {
        Some(k) if k < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut picked = sample(&mut rng, len, k).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..len).collect(),
    }
}

fn scalar_of<T: Scalar>(g: &Graph<T>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(FdpError::Shape(format!("grad_check needs a scalar, got {:?}", t.shape())));
    }
    let s = t.data()[0].as_f64();
    if !s.is_finite() {
        return Err(FdpError::NonFinite { op: "grad_check objective".into() });
    }
    Ok(s)
}

fn fresh_graph<T: Scalar>(opts: &GradCheckOptions) -> Graph<T> {
    let mut g = Graph::new(opts.mode);
    g.set_dropout(false);
    g
}

/// Checks the gradient of `f` with respect to each tensor in `point`.
pub fn grad_check<T, F>(f: F, point: &[Tensor<T>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    validate_eps(opts.eps)?;
    let eval = |inputs: &[Tensor<T>]| -> Result<f64> {
        let mut g = fresh_graph(&opts);
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };

    let mut g = fresh_graph(&opts);
    let vars: Vec<Var> = point.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport::new();
    let mut work: Vec<Tensor<T>> = point.to_vec();
    for (ti, &v) in vars.iter().enumerate() {
        let analytic = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(point[ti].shape().to_vec()));
        for i in coords(point[ti].numel(), &opts, ti as u64) {
            let orig = work[ti].data()[i];
            work[ti].data_mut()[i] = T::of(orig.as_f64() + opts.eps);
            let plus = eval(&work)?;
            work[ti].data_mut()[i] = T::of(orig.as_f64() - opts.eps);
            let minus = eval(&work)?;
            work[ti].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            report.record(ti, i, analytic.data()[i].as_f64(), numeric);
        }
    }
    Ok(report)
}

/// Checks the gradient of `f` with respect to stored parameters `ids`.
pub fn grad_check_params<T, F>(
    store: &mut ParamStore<T>,
    ids: &[ParamId],
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    validate_eps(opts.eps)?;
    let mut g = fresh_graph(&opts);
    let out = f(&mut g, store)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;
    let analytic: Vec<(ParamId, Tensor<T>)> = g.param_grads(&grads);
    drop(g);

    let mut report = GradCheckReport::new();
    for (ti, &id) in ids.iter().enumerate() {
        let grad = analytic
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec()));
        for i in coords(store.get(id).numel(), &opts, id.0 as u64) {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = T::of(orig.as_f64() + opts.eps);
            let plus = {
                let mut g = fresh_graph(&opts);
                let out = f(&mut g, store)?;
                scalar_of(&g, out)?
            };
            store.get_mut(id).data_mut()[i] = T::of(orig.as_f64() - opts.eps);
            let minus = {
                let mut g = fresh_graph(&opts);
                let out = f(&mut g, store)?;
                scalar_of(&g, out)?
            };
            store.get_mut(id).data_mut()[i] = orig;
            report.record(ti, i, grad.data()[i].as_f64(), (plus - minus) / (2.0 * opts.eps));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::<f64>::scalar(3.0);
        let report = grad_check(
            |g, v| {
                let sq = g.matmul_square(v[0])?;
                Ok(sq)
            },
            &[x],
            GradCheckOptions::with_eps(1e-4),
        )
        .unwrap();
        assert!((report.analytic - 6.0).abs() < 1e-12);
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn rejects_out_of_range_step() {
        let x = Tensor::<f64>::scalar(1.0);
        let err = grad_check(|g, v| g.sum_all(v[0]), &[x], GradCheckOptions::with_eps(0.5));
        assert!(matches!(err, Err(FdpError::InvalidArgument(_))));
    }

    impl<T: Scalar> Graph<T> {
        fn matmul_square(&mut self, x: Var) -> Result<Var> {
            let m = self.reshape(x, vec![1, 1])?;
            let p = self.matmul(m, m, false, false)?;
            self.sum_all(p)
        }
    }
}
