/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead of exploding.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compare a reverse-mode gradient with central finite differences.
///
/// `loss` must return both the value and its analytic gradient at the given point.
/// The relative error per coordinate is `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn grad_check<F>(loss: F, point: &[f64], step: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss(point);
    assert_eq!(analytic.len(), point.len(), "gradient length must match point");
    let mut x = point.to_vec();
    let mut worst = (0.0f64, 0usize);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let (fp, _) = loss(&x);
        x[i] = orig - step;
        let (fm, _) = loss(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, i);
        }
    }
    GradCheckReport {
        max_relative_error: worst.0,
        worst_index: worst.1,
        coordinates: point.len(),
    }
}
