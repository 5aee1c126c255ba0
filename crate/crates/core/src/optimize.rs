//! One-dimensional search routines.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Accepts `+inf` as a marker for infeasible points; rejects NaN and `-inf`.
fn finite(x: f64, v: f64) -> Result<f64> {
    if v.is_finite() || v == f64::INFINITY {
        Ok(v)
    } else {
        Err(Error::Numeric(format!(
            "objective is not finite at {x}: {v}"
        )))
    }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
///
/// Stops once the bracket is narrower than `tol`; returns the better of the two
/// interior probes.
pub fn golden_section_min<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = finite(x1, f(x1))?;
    let mut f2 = finite(x2, f(x2))?;
    let mut iters = 0;
    while hi - lo > tol && iters < 500 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = finite(x1, f(x1))?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = finite(x2, f(x2))?;
        }
        iters += 1;
    }
    Ok(if f1 <= f2 { x1 } else { x2 })
}

/// Root of a nonincreasing function on `[lo, hi]` with `g(lo) > 0 > g(hi)`.
///
/// Bisects until the bracket stops shrinking or is narrower than `tol`.
pub fn bisect_decreasing<G>(mut g: G, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64>
where
    G: FnMut(f64) -> f64,
{
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= tol {
            break;
        }
        let v = finite(mid, g(mid))?;
        if v > 0.0 {
            lo = mid;
        } else if v < 0.0 {
            hi = mid;
        } else {
            return Ok(mid);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Grid scan followed by golden-section refinement inside the best grid cell.
///
/// Guards golden-section against multimodal criteria. Ties on the grid resolve to
/// the smallest abscissa.
pub fn grid_then_golden_min<F>(mut f: F, lo: f64, hi: f64, cells: usize, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let step = (hi - lo) / cells as f64;
    let mut best = 0usize;
    let mut best_val = f64::INFINITY;
    for i in 0..=cells {
        let x = lo + step * i as f64;
        let v = finite(x, f(x))?;
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    if !best_val.is_finite() {
        return Err(Error::Numeric(format!(
            "objective is infinite on all of [{lo}, {hi}]"
        )));
    }
    let a = lo + step * best.saturating_sub(1) as f64;
    let b = (lo + step * (best + 1) as f64).min(hi);
    let x = golden_section_min(&mut f, a, b, tol)?;
    let xg = lo + step * best as f64;
    Ok(if f(x) <= best_val { x } else { xg })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let x = golden_section_min(|x| (x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-10).unwrap();
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn bisect_linear_root() {
        let x = bisect_decreasing(|x| 0.15 - x, 0.0, 1.0, 0.0).unwrap();
        assert!((x - 0.15).abs() < 1e-15);
    }

    #[test]
    fn grid_guard_escapes_local_minimum() {
        // Local minimum near 0.2, global near 0.8.
        let f =
            |x: f64| -(-(x - 0.2).powi(2) / 0.002).exp() - 2.0 * (-(x - 0.8).powi(2) / 0.002).exp();
        let x = grid_then_golden_min(f, 0.0, 1.0, 200, 1e-10).unwrap();
        assert!((x - 0.8).abs() < 1e-6);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        assert!(golden_section_min(|_| f64::NAN, 0.0, 1.0, 1e-6).is_err());
    }
}
