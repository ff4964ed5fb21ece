use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Largest relative disagreement between the analytic gradient of `f` and
/// a central finite difference with step `h`, over every input coordinate.
///
/// `f` builds a scalar loss from the input leaves. It is rebuilt from scratch
/// for every perturbation, so it must be deterministic (no dropout).
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let all: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j))).collect();
    grad_check_at(f, inputs, h, &all)
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckStats {
    /// Max over coordinates of `|a − n| / max(1e-8, |a| + |n|)`.
    pub max_rel_err: f64,
    /// Coordinates checked.
    pub coords: usize,
    /// Coordinates above `tol` whose gap `|a − n|` also exceeds the
    /// round-off floor of the central difference.
    pub violations: usize,
    /// Coordinates above `tol` whose gap is within the round-off floor.
    pub noise_limited: usize,
}

/// Round-off floor of a central difference: a few ulps of the larger
/// function value, divided by the step.
fn roundoff_floor(up: f64, down: f64, h: f64) -> f64 {
    16.0 * f64::EPSILON * up.abs().max(down.abs()).max(1.0) / h
}

/// As [`grad_check`], restricted to the `(input, flat index)` coordinates
/// in `coords`.
pub fn grad_check_at<F>(f: F, inputs: &[Tensor<f64>], h: f64, coords: &[(usize, usize)]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    Ok(grad_check_stats(f, inputs, h, coords, f64::INFINITY)?.max_rel_err)
}

/// Full comparison over `coords`, classifying coordinates above `tol`.
pub fn grad_check_stats<F>(
    f: F,
    inputs: &[Tensor<f64>],
    h: f64,
    coords: &[(usize, usize)],
    tol: f64,
) -> Result<GradCheckStats>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut stats = GradCheckStats { coords: coords.len(), ..Default::default() };
    let mut probe = inputs.to_vec();
    for &(i, j) in coords {
        let a = grads.get(vars[i]).map_or(0.0, |t| t.data()[j]);
        let orig = inputs[i].data()[j];
        probe[i].data_mut()[j] = orig + h;
        let up = eval(&probe)?;
        probe[i].data_mut()[j] = orig - h;
        let down = eval(&probe)?;
        probe[i].data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if err > tol {
            if (a - numeric).abs() > roundoff_floor(up, down, h) {
                stats.violations += 1;
            } else {
                stats.noise_limited += 1;
            }
        }
        stats.max_rel_err = stats.max_rel_err.max(err);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.0, 0.7, 0.0, -0.4]).unwrap();
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-9, "{err}");
    }
}
