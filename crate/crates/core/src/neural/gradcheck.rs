use super::{cast, to_f64, Module, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate where the maximum occurred.
    pub worst_index: Option<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Coordinates left out because the two probes straddled a kink.
    pub skipped: usize,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Gradients smaller than this, per unit of loss, are compared absolutely:
/// with `h = 1e-5`, rounding perturbs a central difference by roughly
/// `1e-11·|f|`, so relative errors of smaller gradients measure noise.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, GRADIENT_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, GRADIENT_FLOOR)
}

fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient returned by `f` at `params` with central
/// differences `(f(p + h) − f(p − h)) / 2h`, coordinate by coordinate. The
/// relative-error floor is [`GRADIENT_FLOOR`] scaled by `max(1, |f(params)|)`.
pub fn gradient_check<F>(mut f: F, params: &[f64], h: f64) -> GradCheck
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    gradient_check_piecewise(
        |p| {
            let (v, g) = f(p);
            (v, g, Vec::new())
        },
        params,
        h,
    )
}

/// Like [`gradient_check`] for piecewise-smooth functions. `f` also returns
/// an activation pattern; a coordinate whose `+h` and `−h` probes see
/// different patterns crossed a kink, where central differences are
/// meaningless, and is counted in `skipped` instead.
pub fn gradient_check_piecewise<F>(mut f: F, params: &[f64], h: f64) -> GradCheck
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>, Vec<usize>),
{
    let (value, analytic, base) = f(params);
    let floor = GRADIENT_FLOOR * value.abs().max(1.0);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameters");
    let mut p = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let (fp, _, pattern_p) = f(&p);
        p[i] = orig - h;
        let (fm, _, pattern_m) = f(&p);
        p[i] = orig;
        if pattern_p != base || pattern_m != base {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error_with_floor(analytic[i], numeric, floor);
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}

pub fn flat_params<T: Real, M: Module<T> + ?Sized>(m: &mut M) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit_params("", &mut |_, p| out.extend(p.value.data.iter().map(|v| to_f64(*v))));
    out
}

pub fn set_flat_params<T: Real, M: Module<T> + ?Sized>(m: &mut M, values: &[f64]) {
    let mut pos = 0;
    m.visit_params("", &mut |_, p| {
        for v in p.value.data.iter_mut() {
            *v = cast(values[pos]);
            pos += 1;
        }
    });
    assert_eq!(pos, values.len(), "parameter count mismatch");
}

pub fn flat_grads<T: Real, M: Module<T> + ?Sized>(m: &mut M) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit_params("", &mut |_, p| out.extend(p.grad.data.iter().map(|v| to_f64(*v))));
    out
}

pub fn zero_grads<T: Real, M: Module<T> + ?Sized>(m: &mut M) {
    m.visit_params("", &mut |_, p| p.grad.fill(T::zero()));
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::neural::{Linear, Tensor};

    #[test]
    fn linear_sum_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Linear::<f64>::new(&mut rng, 3, 2, true);
        let x = Tensor::from_f64(&[1, 3], &[0.5, -1.5, 2.0]);
        let y = layer.forward(&x).unwrap();
        layer.backward(&x, &Tensor::from_f64(&[1, 2], &[1.0, 1.0]));
        assert_eq!(layer.weight.grad.data, vec![0.5, -1.5, 2.0, 0.5, -1.5, 2.0]);
        assert_eq!(y.len(), 2);

        let p0 = flat_params(&mut layer);
        let report = gradient_check(
            |p| {
                set_flat_params(&mut layer, p);
                zero_grads(&mut layer);
                let y = layer.forward(&x).unwrap();
                layer.backward(&x, &Tensor::from_f64(&[1, 2], &[1.0, 1.0]));
                (y.data.iter().sum(), flat_grads(&mut layer))
            },
            &p0,
            1e-5,
        );
        assert!(report.max_rel_error < 1e-10, "{report:?}");
    }

    #[test]
    fn quadratic_error_shrinks_with_step() {
        // f(p) = Σ c_i p_i² + p_0 p_1 is exactly quadratic, so central
        // differences are exact up to rounding; a cubic term exposes the
        // O(h²) truncation error.
        let cubic = |p: &[f64]| {
            let v = p[0].powi(3) + 2.0 * p[1] * p[1];
            (v, vec![3.0 * p[0] * p[0], 4.0 * p[1]])
        };
        let e1 = gradient_check(cubic, &[1.3, -0.7], 1e-2).max_rel_error;
        let e2 = gradient_check(cubic, &[1.3, -0.7], 1e-3).max_rel_error;
        assert!(e1 > 0.0);
        let ratio = e1 / e2;
        assert!((80.0..120.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let report = gradient_check(|p| (p[0] * p[0], vec![p[0]]), &[2.0], 1e-5);
        assert!(!report.passes(1e-4));
        assert_eq!(report.worst_index, Some(0));
    }
}
