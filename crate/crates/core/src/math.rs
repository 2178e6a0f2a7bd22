//! Float helpers backed by `libm` so results are identical with or without `std`.

use core::f64::consts::PI;

pub use libm::{atan2, cos, exp, log as ln, sin, sqrt, tanh};

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(mut a: f64) -> f64 {
    if !a.is_finite() {
        return a;
    }
    a = libm::fmod(a, 2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Order-independent mean: values are summed in ascending order.
pub fn sorted_mean(values: &[f64]) -> f64 {
    let mut v = alloc::vec::Vec::from(values);
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_keeps_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap_angle(2.0 * PI + 0.25) - 0.25).abs() < 1e-12);
    }
}
