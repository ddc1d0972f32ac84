//! Cubic convolution interpolation kernel (Keys, a = -1/2).
//!
//! The kernel is supported on [-2, 2], interpolating (phi(0) = 1 and
//! phi(k) = 0 at nonzero integers), C^1, and sums to one over every unit
//! shift of the integer lattice.

/// Kernel value `phi(x)`.
#[inline]
pub fn phi(x: f64) -> f64 {
    let t = x.abs();
    if t < 1.0 {
        ((1.5 * t - 2.5) * t) * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Kernel derivative `d phi / dx`. The kernel is C^1, so the derivative is
/// continuous; at the piece boundaries the branch taken is the one from the
/// right, which agrees with the limit from the left.
#[inline]
pub fn phi_dot(x: f64) -> f64 {
    let t = x.abs();
    let d = if t < 1.0 {
        (4.5 * t - 5.0) * t
    } else if t < 2.0 {
        (-1.5 * t + 5.0) * t - 4.0
    } else {
        0.0
    };
    if x < 0.0 {
        -d
    } else {
        d
    }
}
