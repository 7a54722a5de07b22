//! Central finite-difference gradient checking.

use crate::params::Parameters;

/// Magnitudes below this are treated as zero when forming relative errors;
/// central differences at `h = 1e-5` carry roundoff of roughly `1e-11`.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, ABS_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares `analytic` against central differences of `loss` around `params`
/// for every scalar parameter.
pub fn check<P, F>(params: &P, analytic: &P, h: f64, mut loss: F) -> GradCheck
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    let base = params.flatten();
    let grad = analytic.flatten();
    assert_eq!(base.len(), grad.len(), "gradient layout differs from parameters");
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut result = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: base.len(),
    };
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.load_flat(&flat);
        let up = loss(&probe);
        flat[i] = base[i] - h;
        probe.load_flat(&flat);
        let down = loss(&probe);
        flat[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(grad[i], numeric);
        if err > result.max_rel_error {
            result.max_rel_error = err;
            result.worst_index = i;
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{slice_of, slice_of_mut};
    use ndarray::Array1;

    #[derive(Clone)]
    struct Vector(Array1<f64>);

    impl Parameters for Vector {
        fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
            f("x", self.0.shape(), slice_of(&self.0));
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
            f("x", slice_of_mut(&mut self.0));
        }
    }

    #[test]
    fn quadratic_gradient_checks_out() {
        let x = Vector(Array1::from(vec![0.5, -1.0, 2.0]));
        let g = Vector(x.0.mapv(|v| 2.0 * v));
        let r = check(&x, &g, 1e-5, |p| p.0.mapv(|v| v * v).sum());
        assert!(r.max_rel_error < 1e-8);
        let wrong = Vector(x.0.mapv(|v| 3.0 * v));
        assert!(check(&x, &wrong, 1e-5, |p| p.0.mapv(|v| v * v).sum()).max_rel_error > 0.1);
    }
}
