//! Smooth one-dimensional cutoff profiles built from the `exp(-1/s)` mollifier.

use serde::{Deserialize, Serialize};

#[inline]
fn psi(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

/// C^∞ transition from 0 (for `s <= 0`) to 1 (for `s >= 1`).
#[inline]
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = psi(s);
        a / (a + psi(1.0 - s))
    }
}

/// Smooth plateau: 0 outside `(outer_lo, outer_hi)`, 1 on `[inner_lo, inner_hi]`.
///
/// Infinite endpoints give one-sided profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub outer_lo: f64,
    pub inner_lo: f64,
    pub inner_hi: f64,
    pub outer_hi: f64,
}

impl Plateau {
    pub fn new(outer_lo: f64, inner_lo: f64, inner_hi: f64, outer_hi: f64) -> Self {
        assert!(outer_lo <= inner_lo && inner_lo <= inner_hi && inner_hi <= outer_hi, "plateau endpoints out of order");
        Plateau { outer_lo, inner_lo, inner_hi, outer_hi }
    }

    /// Symmetric bump of half-width `half` around `center` with a ramp of `ramp`.
    pub fn centered(center: f64, half: f64, ramp: f64) -> Self {
        Plateau::new(center - half - ramp, center - half, center + half, center + half + ramp)
    }

    /// 0 below `lo`, rising to 1 at `hi`, 1 beyond.
    pub fn rising(lo: f64, hi: f64) -> Self {
        Plateau::new(lo, hi, f64::INFINITY, f64::INFINITY)
    }

    /// 1 below `lo`, falling to 0 at `hi`.
    pub fn falling(lo: f64, hi: f64) -> Self {
        Plateau::new(f64::NEG_INFINITY, f64::NEG_INFINITY, lo, hi)
    }

    pub fn eval(&self, s: f64) -> f64 {
        let up = if self.inner_lo == f64::NEG_INFINITY {
            1.0
        } else if s <= self.outer_lo {
            0.0
        } else if s >= self.inner_lo {
            1.0
        } else {
            smooth_step((s - self.outer_lo) / (self.inner_lo - self.outer_lo))
        };
        let down = if self.inner_hi == f64::INFINITY {
            1.0
        } else if s >= self.outer_hi {
            0.0
        } else if s <= self.inner_hi {
            1.0
        } else {
            smooth_step((self.outer_hi - s) / (self.outer_hi - self.inner_hi))
        };
        up * down
    }

    /// Closed support `[outer_lo, outer_hi]`.
    pub fn support(&self) -> (f64, f64) {
        (self.outer_lo, self.outer_hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_step_is_symmetric_and_saturates() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(0.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        for k in 1..20 {
            let s = k as f64 / 20.0;
            assert!((smooth_step(s) + smooth_step(1.0 - s) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn smooth_step_is_monotone() {
        let mut prev = 0.0;
        for k in 0..=1000 {
            let v = smooth_step(k as f64 / 1000.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn plateau_profiles() {
        let p = Plateau::new(0.0, 1.0, 2.0, 3.0);
        assert_eq!(p.eval(-0.1), 0.0);
        assert_eq!(p.eval(1.5), 1.0);
        assert_eq!(p.eval(3.5), 0.0);
        assert!(p.eval(0.5) > 0.0 && p.eval(0.5) < 1.0);

        let r = Plateau::rising(1.0, 2.0);
        assert_eq!(r.eval(0.0), 0.0);
        assert_eq!(r.eval(100.0), 1.0);
        let f = Plateau::falling(1.0, 2.0);
        assert_eq!(f.eval(-100.0), 1.0);
        assert_eq!(f.eval(2.5), 0.0);
        for k in 0..40 {
            let s = k as f64 * 0.1;
            assert!((r.eval(s) + f.eval(s) - 1.0).abs() < 1e-14);
        }
    }
}
