//! Simplex weight checks and the floored-simplex projection used by the merge agent.

use crate::error::{Error, Result};

/// Tolerance on `Σw = 1` accepted by every merge operation.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Accepts weights on the closed probability simplex: finite, non-negative,
/// summing to one within [`SUM_TOLERANCE`].
pub fn check(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::SimplexViolation("empty weight vector".into()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::SimplexViolation(format!("weight {w} is negative or not finite")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::SimplexViolation(format!("weights sum to {sum}")));
    }
    Ok(())
}

/// `1/n` in every coordinate.
pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Euclidean projection of `v` onto `{x : x_i ≥ floor, Σx = 1}`.
///
/// Requires `v.len() * floor < 1`. Coordinates that end up on the boundary are
/// set to exactly `floor`.
pub fn project_floored(v: &[f64], floor: f64) -> Vec<f64> {
    let n = v.len();
    let mass = 1.0 - n as f64 * floor;
    assert!(mass > 0.0, "floor {floor} too large for {n} coordinates");
    // Project v - floor onto the simplex of total `mass` (sort-based threshold).
    let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - mass) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    let mut out: Vec<f64> = shifted.iter().map(|&x| (x - tau).max(0.0) + floor).collect();
    // Remove the last rounding residue from the largest coordinate.
    let sum: f64 = out.iter().sum();
    let imax = (0..n).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap();
    out[imax] += 1.0 - sum;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn check_accepts_vertices_and_rejects_bad_sums() {
        assert!(check(&[1.0, 0.0, 0.0]).is_ok());
        assert!(check(&[0.5, 0.5]).is_ok());
        assert!(check(&[0.5, 0.6]).is_err());
        assert!(check(&[1.5, -0.5]).is_err());
        assert!(check(&[f64::NAN, 1.0]).is_err());
        assert!(check(&[]).is_err());
    }

    #[test]
    fn projection_is_identity_inside() {
        let p = project_floored(&[0.55, 0.45], 1e-3);
        assert!((p[0] - 0.55).abs() < 1e-15 && (p[1] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn projection_clips_to_floor() {
        let p = project_floored(&[-0.03, 0.98], 1e-3);
        assert_eq!(p[0], 1e-3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn projection_lands_on_floored_simplex(v in prop::collection::vec(-2.0f64..3.0, 1..8)) {
            let floor = 1e-3;
            let p = project_floored(&v, floor);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
            prop_assert!(p.iter().all(|&x| x >= floor));
        }
    }
}
