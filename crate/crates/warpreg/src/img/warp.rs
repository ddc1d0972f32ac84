//! Interpolation of images at deformation fields, and the analytic Jacobian
//! of the interpolant.

use super::kernel::{phi, phi_dot};
use super::Image;
use crate::transform::DeformationField;

/// `out(i,j,k) = sum_{p,q} image(p,q,k) phi(tau0 - p) phi(tau1 - q)`,
/// reading zeros outside the image support. Output shape follows the field.
pub fn interpolate(image: &Image, field: &DeformationField) -> Image {
    let (m, n) = (field.rows(), field.cols());
    let c = image.channels();
    let mut out = Image::zeros(m, n, c);
    let mut wr = [0.0f64; 4];
    let mut wc = [0.0f64; 4];
    for i in 0..m {
        for j in 0..n {
            let t = field.get(i, j);
            let i0 = t[0].floor() as isize;
            let j0 = t[1].floor() as isize;
            for d in 0..4 {
                wr[d] = phi(t[0] - (i0 - 1 + d as isize) as f64);
                wc[d] = phi(t[1] - (j0 - 1 + d as isize) as f64);
            }
            for k in 0..c {
                let mut acc = 0.0;
                for (dr, &wri) in wr.iter().enumerate() {
                    if wri == 0.0 {
                        continue;
                    }
                    let p = i0 - 1 + dr as isize;
                    for (dc, &wcj) in wc.iter().enumerate() {
                        if wcj == 0.0 {
                            continue;
                        }
                        acc += image.sample(p, j0 - 1 + dc as isize, k) * wri * wcj;
                    }
                }
                out.set(i, j, k, acc);
            }
        }
    }
    out
}

/// Jacobian of the interpolant evaluated at the field points: returns per
/// output pixel, channel `k`, the pair
/// `(sum y phi_dot(tau0-p) phi(tau1-q), sum y phi(tau0-p) phi_dot(tau1-q))`.
///
/// Layout: `m x n x (2c)` image, component `2k + d` for channel `k`,
/// coordinate `d`.
pub fn warp_jacobian(image: &Image, field: &DeformationField) -> Image {
    warp_with_jacobian(image, field).1
}

/// One-pass evaluation of the warped image and its Jacobian at the field,
/// sharing the kernel weights.
pub fn warp_with_jacobian(image: &Image, field: &DeformationField) -> (Image, Image) {
    let (m, n) = (field.rows(), field.cols());
    let c = image.channels();
    let mut out = Image::zeros(m, n, c);
    let mut jac = Image::zeros(m, n, 2 * c);
    let mut wr = [0.0f64; 4];
    let mut wc = [0.0f64; 4];
    let mut dr_ = [0.0f64; 4];
    let mut dc_ = [0.0f64; 4];
    for i in 0..m {
        for j in 0..n {
            let t = field.get(i, j);
            let i0 = t[0].floor() as isize;
            let j0 = t[1].floor() as isize;
            for d in 0..4 {
                let xr = t[0] - (i0 - 1 + d as isize) as f64;
                let xc = t[1] - (j0 - 1 + d as isize) as f64;
                wr[d] = phi(xr);
                wc[d] = phi(xc);
                dr_[d] = phi_dot(xr);
                dc_[d] = phi_dot(xc);
            }
            for k in 0..c {
                let mut v = 0.0;
                let mut g0 = 0.0;
                let mut g1 = 0.0;
                for dr in 0..4 {
                    let p = i0 - 1 + dr as isize;
                    for dc in 0..4 {
                        let y = image.sample(p, j0 - 1 + dc as isize, k);
                        if y == 0.0 {
                            continue;
                        }
                        v += y * wr[dr] * wc[dc];
                        g0 += y * dr_[dr] * wc[dc];
                        g1 += y * wr[dr] * dc_[dc];
                    }
                }
                out.set(i, j, k, v);
                jac.set(i, j, 2 * k, g0);
                jac.set(i, j, 2 * k + 1, g1);
            }
        }
    }
    (out, jac)
}

/// Jacobian at the identity field (the grid samples of the interpolant's
/// derivative).
pub fn jacobian(image: &Image) -> Image {
    let field = DeformationField::identity(image.rows(), image.cols(), nalgebra::Vector2::zeros());
    warp_jacobian(image, &field)
}
