use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error of near-zero gradient entries.
const REL_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient returned by `loss_and_grad` against central
/// differences at `probes` randomly chosen coordinates and returns the worst
/// relative error `|a − n| / max(|a|, |n|, 1e-6)`.
///
/// `loss_and_grad` must be deterministic: any noise has to be frozen.
pub fn finite_diff_check<F, R>(mut loss_and_grad: F, params: &[Tensor], probes: usize, rng: &mut R) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
    R: Rng + ?Sized,
{
    let total: usize = params.iter().map(Tensor::len).sum();
    if total == 0 {
        return Err(Error::invalid("no parameters to probe"));
    }
    let (_, analytic) = loss_and_grad(params)?;
    if analytic.len() != params.len() {
        return Err(Error::dim("gradient list does not match parameter list"));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let mut flat = rng.random_range(0..total);
        let mut t = 0;
        while flat >= work[t].len() {
            flat -= work[t].len();
            t += 1;
        }
        let orig = work[t].data()[flat];
        work[t].data_mut()[flat] = orig + FD_STEP;
        let (up, _) = loss_and_grad(&work)?;
        work[t].data_mut()[flat] = orig - FD_STEP;
        let (down, _) = loss_and_grad(&work)?;
        work[t].data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[t].data()[flat];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn linear_model_quadratic_loss() {
        // L(w) = ½ Σ_s (w·x_s − y_s)²
        let xs = [[1.0, 2.0], [-0.5, 0.3], [2.0, -1.0]];
        let ys = [1.0, -2.0, 0.5];
        let f = |p: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let w = p[0].data();
            let mut loss = 0.0;
            let mut g = vec![0.0; 2];
            for (x, y) in xs.iter().zip(ys) {
                let r = w[0] * x[0] + w[1] * x[1] - y;
                loss += 0.5 * r * r;
                g[0] += r * x[0];
                g[1] += r * x[1];
            }
            Ok((loss, vec![Tensor::vector(g)]))
        };
        let err = finite_diff_check(f, &[Tensor::vector(vec![0.3, -0.7])], 20, &mut stream(1, 0)).unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
