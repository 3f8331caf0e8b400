use crate::error::{Error, Result};

/// Relative L2 error `sqrt(Σ(truth−pred)² / Σ truth²)`.
pub fn relative_error(truth: &[f64], prediction: &[f64]) -> Result<f64> {
    if truth.len() != prediction.len() {
        return Err(Error::ShapeMismatch {
            expected: truth.len(),
            got: prediction.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("series"));
    }
    let denom: f64 = truth.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::ZeroNorm("truth series has zero norm"));
    }
    let num: f64 = truth
        .iter()
        .zip(prediction)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((num / denom).sqrt())
}

/// Empirical quantile with linear interpolation between order statistics at
/// position `q·(n−1)`. `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Central `level` band of `values`: the `(1−level)/2` and `(1+level)/2`
/// quantiles.
pub fn central_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&sorted, (1.0 - level) / 2.0),
        quantile_sorted(&sorted, (1.0 + level) / 2.0),
    ))
}

/// Arithmetic mean, accumulated as offsets from the first value so that a
/// constant input returns that constant exactly.
pub fn mean(values: &[f64]) -> f64 {
    let Some(&first) = values.first() else {
        return f64::NAN;
    };
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_constant_is_exact() {
        let v = 11.383_009_672_944_89;
        assert_eq!(mean(&[v; 3]), v);
        assert_eq!(mean(&[1.0, 3.0]), 2.0);
        assert!(mean(&[]).is_nan());
    }
    use proptest::prelude::*;

    #[test]
    fn exact_prediction_has_zero_error() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(relative_error(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn zero_prediction_has_unit_error() {
        assert_eq!(relative_error(&[3.0, -4.0], &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn hand_evaluated_error() {
        let e = relative_error(&[1.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!((e - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_truth_is_an_error() {
        assert!(matches!(
            relative_error(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm(_))
        ));
        assert!(relative_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn quantiles_of_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = central_interval(&v, 0.95).unwrap();
        assert!((lo - 3.475).abs() < 1e-12);
        assert!((hi - 97.525).abs() < 1e-12);
    }

    #[test]
    fn quantiles_of_five_members() {
        // positions 0.025·4 = 0.1 and 0.975·4 = 3.9
        let (lo, hi) = central_interval(&[3.0, 0.0, 4.0, 1.0, 2.0], 0.95).unwrap();
        assert!((lo - 0.1).abs() < 1e-12);
        assert!((hi - 3.9).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn error_is_scale_and_permutation_invariant(
            pairs in prop::collection::vec((1.0f64..10.0, -10.0f64..10.0), 1..20),
            c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            shift in 0usize..20,
        ) {
            let truth: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let base = relative_error(&truth, &pred).unwrap();
            let scaled = relative_error(
                &truth.iter().map(|v| c * v).collect::<Vec<_>>(),
                &pred.iter().map(|v| c * v).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
            let k = shift % truth.len();
            let mut t2 = truth.clone();
            let mut p2 = pred.clone();
            t2.rotate_left(k);
            p2.rotate_left(k);
            let rotated = relative_error(&t2, &p2).unwrap();
            prop_assert!((base - rotated).abs() <= 1e-12 * base.max(1.0));
        }
    }
}
