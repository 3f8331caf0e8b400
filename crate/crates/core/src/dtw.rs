//! Dynamic time warping with squared point cost, and DTW barycenter
//! averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtwConfig {
    /// Sakoe–Chiba half-width in index units; `None` is the full matrix.
    #[serde(default)]
    pub window: Option<usize>,
}

impl DtwConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if let Some(w) = self.window {
            if w < 1 || w >= m {
                return Err(Error::InvalidArgument(format!(
                    "window must satisfy 1 <= window < {m}, got {w}"
                )));
            }
        }
        Ok(())
    }
}

fn check_inputs(a: &[f64], b: &[f64], cfg: &DtwConfig) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw series"));
    }
    if let Some(w) = cfg.window {
        if a.len().abs_diff(b.len()) > w {
            return Err(Error::InvalidArgument(format!(
                "length difference {} exceeds window {w}",
                a.len().abs_diff(b.len())
            )));
        }
    }
    Ok(())
}

#[inline]
fn in_band(i: usize, j: usize, window: Option<usize>) -> bool {
    window.is_none_or(|w| i.abs_diff(j) <= w)
}

/// Cumulative-cost matrix, `(n+1)×(m+1)` row-major with an infinite border.
fn cost_matrix(a: &[f64], b: &[f64], window: Option<usize>) -> Vec<f64> {
    let (n, m) = (a.len(), b.len());
    let stride = m + 1;
    let mut d = vec![f64::INFINITY; (n + 1) * stride];
    d[0] = 0.0;
    for i in 1..=n {
        let (j_lo, j_hi) = match window {
            Some(w) => (i.saturating_sub(w).max(1), (i + w).min(m)),
            None => (1, m),
        };
        for j in j_lo..=j_hi {
            let diff = a[i - 1] - b[j - 1];
            let best = d[(i - 1) * stride + j - 1]
                .min(d[(i - 1) * stride + j])
                .min(d[i * stride + j - 1]);
            d[i * stride + j] = diff * diff + best;
        }
    }
    d
}

/// Minimal cumulative squared cost over admissible warping paths.
pub fn dtw_cost(a: &[f64], b: &[f64], cfg: &DtwConfig) -> Result<f64> {
    check_inputs(a, b, cfg)?;
    if cfg.window.is_none() {
        return Ok(cost_two_rows(a, b));
    }
    let d = cost_matrix(a, b, cfg.window);
    Ok(d[a.len() * (b.len() + 1) + b.len()])
}

fn cost_two_rows(a: &[f64], b: &[f64]) -> f64 {
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &ai in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let diff = ai - b[j - 1];
            cur[j] = diff * diff + prev[j - 1].min(prev[j]).min(cur[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

pub fn dtw_distance(a: &[f64], b: &[f64], cfg: &DtwConfig) -> Result<f64> {
    dtw_cost(a, b, cfg).map(f64::sqrt)
}

/// Optimal path as `(index in a, index in b)` pairs from `(0, 0)` to the end.
/// Ties prefer the diagonal step, then a step in `a`.
pub fn dtw_path(a: &[f64], b: &[f64], cfg: &DtwConfig) -> Result<(f64, Vec<(usize, usize)>)> {
    check_inputs(a, b, cfg)?;
    let (n, m) = (a.len(), b.len());
    let stride = m + 1;
    let d = cost_matrix(a, b, cfg.window);
    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    path.push((i - 1, j - 1));
    while i > 1 || j > 1 {
        let diag = d[(i - 1) * stride + j - 1];
        let up = d[(i - 1) * stride + j];
        let left = d[i * stride + j - 1];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        debug_assert!(in_band(i, j, cfg.window));
        path.push((i - 1, j - 1));
    }
    path.reverse();
    Ok((d[n * stride + m], path))
}

/// One DBA update: aligns every series to `centroid` and averages the values
/// mapped onto each centroid coordinate.
pub fn dba_update(series: &[&[f64]], centroid: &[f64], cfg: &DtwConfig) -> Result<(Vec<f64>, f64)> {
    let mut sums = vec![0.0; centroid.len()];
    let mut counts = vec![0usize; centroid.len()];
    let mut total = 0.0;
    for s in series {
        let (cost, path) = dtw_path(centroid, s, cfg)?;
        total += cost;
        for (ci, si) in path {
            sums[ci] += s[si];
            counts[ci] += 1;
        }
    }
    let next = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    Ok((next, total))
}

/// Total squared DTW cost of `series` to `centroid`.
pub fn within_cost(series: &[&[f64]], centroid: &[f64], cfg: &DtwConfig) -> Result<f64> {
    series.iter().map(|s| dtw_cost(centroid, s, cfg)).sum()
}

/// DTW barycenter averaging from `init`, `iters` rounds.
pub fn dba_centroid(series: &[&[f64]], init: &[f64], iters: usize, cfg: &DtwConfig) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Empty("dba series"));
    }
    if init.is_empty() {
        return Err(Error::Empty("dba init"));
    }
    let mut centroid = init.to_vec();
    for _ in 0..iters {
        let (next, _) = dba_update(series, &centroid, cfg)?;
        if next == centroid {
            break;
        }
        centroid = next;
    }
    Ok(centroid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates every monotone, continuous path from (0,0) to (n-1,m-1).
    fn brute_force_cost(a: &[f64], b: &[f64]) -> f64 {
        fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
            let c = acc + (a[i] - b[j]).powi(2);
            if i == a.len() - 1 && j == b.len() - 1 {
                *best = best.min(c);
                return;
            }
            if i + 1 < a.len() {
                walk(a, b, i + 1, j, c, best);
            }
            if j + 1 < b.len() {
                walk(a, b, i, j + 1, c, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                walk(a, b, i + 1, j + 1, c, best);
            }
        }
        let mut best = f64::INFINITY;
        walk(a, b, 0, 0, 0.0, &mut best);
        best
    }

    const FULL: DtwConfig = DtwConfig { window: None };

    #[test]
    fn identical_series_have_zero_distance() {
        let a = [0.3, -1.0, 2.0, 5.0];
        assert_eq!(dtw_distance(&a, &a, &FULL).unwrap(), 0.0);
    }

    #[test]
    fn time_shift_is_absorbed() {
        let a = [0.0, 1.0, 0.0, 0.0];
        let b = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(brute_force_cost(&a, &b), 0.0);
        assert_eq!(dtw_distance(&a, &b, &FULL).unwrap(), 0.0);
    }

    #[test]
    fn single_mismatch_costs_one() {
        let a = [0.0, 0.0, 0.0];
        let b = [0.0, 0.0, 1.0];
        assert_eq!(brute_force_cost(&a, &b), 1.0);
        assert_eq!(dtw_distance(&a, &b, &FULL).unwrap(), 1.0);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(dtw_distance(&[], &[1.0], &FULL).is_err());
    }

    #[test]
    fn window_constraints() {
        let cfg = DtwConfig { window: Some(1) };
        assert!(dtw_distance(&[0.0; 5], &[0.0; 3], &cfg).is_err());
        assert!(cfg.validate(5).is_ok());
        assert!(DtwConfig { window: Some(5) }.validate(5).is_err());
        assert!(DtwConfig { window: Some(0) }.validate(5).is_err());
    }

    #[test]
    fn banded_cost_never_below_full() {
        let a = [0.0, 2.0, 0.0, 0.0, 0.0, 1.0];
        let b = [0.0, 0.0, 0.0, 0.0, 2.0, 1.0];
        let full = dtw_cost(&a, &b, &FULL).unwrap();
        let banded = dtw_cost(&a, &b, &DtwConfig { window: Some(1) }).unwrap();
        assert!(banded >= full);
        assert_eq!(dtw_cost(&a, &b, &DtwConfig { window: Some(5) }).unwrap(), full);
    }

    #[test]
    fn path_cost_matches_distance() {
        let a = [0.0, 1.0, 3.0, 2.0, 0.5];
        let b = [0.2, 0.9, 1.0, 2.9, 2.1, 0.0];
        let (cost, path) = dtw_path(&a, &b, &FULL).unwrap();
        let along: f64 = path.iter().map(|&(i, j)| (a[i] - b[j]).powi(2)).sum();
        assert!((cost - along).abs() < 1e-12);
        assert_eq!(path[0], (0, 0));
        assert_eq!(*path.last().unwrap(), (4, 5));
        for w in path.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            assert!(di <= 1 && dj <= 1 && di + dj >= 1);
        }
    }

    #[test]
    fn dba_of_single_series_is_itself() {
        let s = [1.0, 3.0, 2.0, -1.0];
        assert_eq!(dba_centroid(&[&s], &s, 10, &FULL).unwrap(), s.to_vec());
        assert_eq!(dba_centroid(&[&s, &s], &s, 10, &FULL).unwrap(), s.to_vec());
    }

    #[test]
    fn dba_of_two_constant_series_is_midline() {
        let a = [0.0, 0.0, 0.0];
        let b = [2.0, 2.0, 2.0];
        let c = dba_centroid(&[&a, &b], &a, 1, &FULL).unwrap();
        assert_eq!(c, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn dba_cost_is_non_increasing() {
        let s1 = [0.0, 1.0, 4.0, 1.0, 0.0, 0.0];
        let s2 = [0.0, 0.0, 1.0, 4.0, 1.0, 0.0];
        let s3 = [0.0, 2.0, 3.5, 0.5, 0.0, 0.0];
        let set: [&[f64]; 3] = [&s1, &s2, &s3];
        let mut c = vec![1.0; 6];
        let mut last = within_cost(&set, &c, &FULL).unwrap();
        for _ in 0..8 {
            c = dba_update(&set, &c, &FULL).unwrap().0;
            let cost = within_cost(&set, &c, &FULL).unwrap();
            assert!(cost <= last * (1.0 + 1e-12) + 1e-12, "{cost} > {last}");
            last = cost;
        }
    }

    fn short_series() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, 1..=6)
    }

    proptest! {
        #[test]
        fn matches_brute_force(a in short_series(), b in short_series()) {
            let dp = dtw_cost(&a, &b, &FULL).unwrap();
            prop_assert!((dp - brute_force_cost(&a, &b)).abs() <= 1e-12);
        }

        #[test]
        fn symmetric_nonnegative_and_below_euclidean(
            pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..30)
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let ab = dtw_distance(&a, &b, &FULL).unwrap();
            let ba = dtw_distance(&b, &a, &FULL).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(dtw_distance(&a, &a, &FULL).unwrap(), 0.0);
            let euclid = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(ab <= euclid + 1e-12);
        }
    }
}
