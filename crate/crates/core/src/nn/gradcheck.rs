use rand::seq::index::sample;

use super::ParamSet;
use crate::seed;

/// Gradients smaller than this in magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter path and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compare analytic gradients against central differences.
///
/// `f(ps, with_grad)` returns the scalar loss and, when `with_grad` is true,
/// accumulates its gradient into `ps`. At most `max_coords` coordinates are
/// checked (all of them when there are fewer), drawn without replacement
/// from a stream seeded by `seed`.
pub fn finite_diff_check<F>(ps: &mut ParamSet<f64>, h: f64, max_coords: usize, seed: u64, mut f: F) -> GradCheckReport
where
    F: FnMut(&mut ParamSet<f64>, bool) -> f64,
{
    ps.zero_grad();
    f(ps, true);
    let mut coords = Vec::new();
    for id in ps.ids() {
        for i in 0..ps.value(id).len() {
            coords.push((id, i));
        }
    }
    let picked: Vec<usize> = if coords.len() <= max_coords {
        (0..coords.len()).collect()
    } else {
        let mut v = sample(&mut seed::rng_from(seed), coords.len(), max_coords).into_vec();
        v.sort_unstable();
        v
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: picked.len(),
        worst: None,
    };
    for k in picked {
        let (id, i) = coords[k];
        let analytic = ps.grad(id).data()[i];
        let orig = ps.value(id).data()[i];
        ps.value_mut(id).data_mut()[i] = orig + h;
        let up = f(ps, false);
        ps.value_mut(id).data_mut()[i] = orig - h;
        let down = f(ps, false);
        ps.value_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel;
            report.worst = Some((ps.path(id).to_string(), i));
        }
    }
    ps.zero_grad();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_exact() {
        let mut ps = ParamSet::<f64>::new();
        let x = ps.add_uniform("x", &[100], 1, &mut seed::rng_from(0));
        let a: Vec<f64> = (0..100).map(|i| 1.0 + i as f64 * 0.1).collect();
        let report = finite_diff_check(&mut ps, 1e-3, 64, 0, |ps, grad| {
            let v = ps.value(x).data().to_vec();
            if grad {
                let g = ps.param_mut(x).grad.data_mut();
                for i in 0..100 {
                    g[i] += 2.0 * a[i] * v[i] + 1.0;
                }
            }
            v.iter().zip(&a).map(|(v, a)| a * v * v + v).sum()
        });
        assert_eq!(report.checked, 64);
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut ps = ParamSet::<f64>::new();
        let x = ps.add_const("x", &[1], 2.0);
        let report = finite_diff_check(&mut ps, 1e-3, 64, 0, |ps, grad| {
            let v = ps.value(x).data()[0];
            if grad {
                ps.param_mut(x).grad.data_mut()[0] += 3.0 * v;
            }
            v * v
        });
        assert!(report.max_rel_error > 0.2);
        assert_eq!(report.worst, Some(("x".into(), 0)));
    }
}
