//! Central-difference verification of hand-written backward passes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A named block of parameters together with the analytic gradient claimed
/// for it.
#[derive(Clone, Debug)]
pub struct ParamGroup<T = f64> {
    pub name: String,
    pub values: Vec<T>,
    pub analytic: Vec<T>,
}

impl<T: Scalar> ParamGroup<T> {
    pub fn new(name: impl Into<String>, values: Vec<T>, analytic: Vec<T>) -> Self {
        Self {
            name: name.into(),
            values,
            analytic,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions<T = f64> {
    pub h: T,
    pub tol: T,
    /// Check at most this many coordinates per group.
    pub max_per_group: Option<usize>,
    /// With a cap, pick the coordinates with the largest analytic gradient
    /// instead of an even stride.
    pub largest_first: bool,
}

impl<T: Scalar> GradCheckOptions<T> {
    pub fn new(h: T, tol: T) -> Self {
        Self {
            h,
            tol,
            max_per_group: None,
            largest_first: false,
        }
    }

    /// Evenly strided coordinates, at most `max_per_group` per group.
    pub fn sampled(mut self, max_per_group: usize) -> Self {
        self.max_per_group = Some(max_per_group);
        self
    }

    /// The `k` coordinates of each group with the largest `|analytic|`.
    /// Coordinates whose gradient is near zero cannot be resolved by a
    /// central difference to a relative tolerance, because the roundoff
    /// of the two loss evaluations does not shrink with the gradient.
    pub fn largest(mut self, k: usize) -> Self {
        self.max_per_group = Some(k);
        self.largest_first = true;
        self
    }
}

#[derive(Clone, Debug)]
pub struct GroupError<T = f64> {
    pub name: String,
    pub max_rel_error: T,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradReport<T = f64> {
    pub groups: Vec<GroupError<T>>,
    pub tol: T,
}

impl<T: Scalar> GradReport<T> {
    pub fn max_rel_error(&self) -> T {
        self.groups
            .iter()
            .fold(T::zero(), |a, g| a.max(g.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn worst(&self) -> Option<&GroupError<T>> {
        self.groups.iter().max_by(|a, b| {
            a.max_rel_error
                .partial_cmp(&b.max_rel_error)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    let denom = analytic.abs().max(numeric.abs()).max(T::lit(1e-8));
    (analytic - numeric).abs() / denom
}

/// Compares every group's analytic gradient against central differences of
/// `f`, which receives the full parameter set with one coordinate perturbed.
pub fn grad_check<T: Scalar>(
    mut f: impl FnMut(&[Vec<T>]) -> T,
    groups: &[ParamGroup<T>],
    opts: GradCheckOptions<T>,
) -> Result<GradReport<T>> {
    let mut point: Vec<Vec<T>> = groups.iter().map(|g| g.values.clone()).collect();
    if !f(&point).is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let two_h = opts.h + opts.h;
    let mut report = Vec::with_capacity(groups.len());
    for (gi, group) in groups.iter().enumerate() {
        if group.analytic.len() != group.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "group `{}` has {} values but {} gradients",
                group.name,
                group.values.len(),
                group.analytic.len()
            )));
        }
        let n = group.values.len();
        let coords: Vec<usize> = match opts.max_per_group {
            Some(m) if m > 0 && n > m && opts.largest_first => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| {
                    let (x, y) = (group.analytic[a].abs(), group.analytic[b].abs());
                    y.partial_cmp(&x)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                });
                idx.truncate(m);
                idx
            }
            Some(m) if m > 0 && n > m => (0..n).step_by(n.div_ceil(m)).collect(),
            _ => (0..n).collect(),
        };
        let mut worst = T::zero();
        let mut checked = 0;
        for i in coords {
            let orig = point[gi][i];
            point[gi][i] = orig + opts.h;
            let up = f(&point);
            point[gi][i] = orig - opts.h;
            let down = f(&point);
            point[gi][i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            let numeric = (up - down) / two_h;
            worst = worst.max(relative_error(group.analytic[i], numeric));
            checked += 1;
        }
        report.push(GroupError {
            name: group.name.clone(),
            max_rel_error: worst,
            checked,
            passed: worst < opts.tol,
        });
    }
    Ok(GradReport {
        groups: report,
        tol: opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let groups = [ParamGroup::new("x", vec![3.0], vec![6.0])];
        let r = grad_check(
            |p| p[0][0] * p[0][0],
            &groups,
            GradCheckOptions::new(1e-5, 1e-4),
        )
        .unwrap();
        assert!(r.max_rel_error() < 1e-9);
        assert!(r.passed());
    }

    #[test]
    fn constant_has_zero_error() {
        let groups = [ParamGroup::new("x", vec![1.0, -2.0], vec![0.0, 0.0])];
        let r = grad_check(|_| 7.0, &groups, GradCheckOptions::new(1e-5, 1e-4)).unwrap();
        assert_eq!(r.max_rel_error(), 0.0);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let groups = [ParamGroup::new("x", vec![2.0f64], vec![1.0])];
        let r = grad_check(
            |p| p[0][0].powi(3),
            &groups,
            GradCheckOptions::new(1e-5, 1e-4),
        )
        .unwrap();
        assert!(!r.passed());
        assert_eq!(r.worst().unwrap().name, "x");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let groups = [ParamGroup::new("x", vec![0.0], vec![0.0])];
        let r = grad_check(
            |p| 1.0 / p[0][0],
            &groups,
            GradCheckOptions::new(1e-5, 1e-4),
        );
        assert!(matches!(r, Err(Error::NonFiniteLoss)));
    }

    #[test]
    fn largest_picks_biggest_analytic_entries() {
        // Only x[1] carries a wrong gradient; the stride of 2 skips it.
        let values = vec![1.0, 1.0, 1.0, 1.0];
        let groups = [ParamGroup::new("x", values, vec![2.0, 9.0, 2.0, 2.0])];
        let f = |p: &[Vec<f64>]| p[0].iter().map(|v| v * v).sum::<f64>();
        let r = grad_check(f, &groups, GradCheckOptions::new(1e-5, 1e-4).largest(1)).unwrap();
        assert!(!r.passed());
        let r = grad_check(f, &groups, GradCheckOptions::new(1e-5, 1e-4).sampled(2)).unwrap();
        assert!(r.passed());
    }
}
