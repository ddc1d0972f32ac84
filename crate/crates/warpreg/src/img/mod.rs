//! Dense image representation and core image operations.
//!
//! Images are real-valued `m x n x c` grids identified with functions on the
//! integer plane that are zero outside `{0..m-1} x {0..n-1}`; every operation
//! that reads outside the index range reads exactly zero.

mod fft;
mod gaussian;
pub mod io;
pub mod kernel;
mod warp;

pub use fft::{next_fast_len, Fft2};
pub use gaussian::{convolve, min_eigenvalue, smooth_normalized, support_side, GaussianFilter};
pub use warp::{interpolate, jacobian, warp_jacobian, warp_with_jacobian};

use crate::error::{Error, Result};

/// Dense `m x n x c` image of f64 samples, row-major with interleaved
/// channels: index `(i, j, k)` lives at `(i * n + j) * c + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    m: usize,
    n: usize,
    c: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(m: usize, n: usize, c: usize) -> Self {
        Image {
            m,
            n,
            c,
            data: vec![0.0; m * n * c],
        }
    }

    pub fn from_vec(m: usize, n: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * n * c {
            return Err(Error::ShapeMismatch {
                expected: format!("{} samples", m * n * c),
                got: format!("{}", data.len()),
            });
        }
        Ok(Image { m, n, c, data })
    }

    pub fn from_fn(m: usize, n: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut img = Image::zeros(m, n, c);
        for i in 0..m {
            for j in 0..n {
                for k in 0..c {
                    img.data[(i * n + j) * c + k] = f(i, j, k);
                }
            }
        }
        img
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m, self.n, self.c)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.c + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.n + j) * self.c + k] = v;
    }

    /// Zero-padded read: out-of-range indices read exactly 0.
    #[inline]
    pub fn sample(&self, i: isize, j: isize, k: usize) -> f64 {
        if i < 0 || j < 0 || i >= self.m as isize || j >= self.n as isize {
            0.0
        } else {
            self.data[(i as usize * self.n + j as usize) * self.c + k]
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, k: usize) -> Image {
        Image::from_fn(self.m, self.n, 1, |i, j, _| self.get(i, j, k))
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Image, s: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Coordinates of the largest sample of channel `k`.
    pub fn argmax(&self, k: usize) -> (usize, usize) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = (0, 0);
        for i in 0..self.m {
            for j in 0..self.n {
                let v = self.get(i, j, k);
                if v > best {
                    best = v;
                    arg = (i, j);
                }
            }
        }
        arg
    }

    /// Copies `src` into `self` with `src(0,0)` landing at `(oi, oj)`;
    /// samples falling outside are dropped.
    pub fn paste(&mut self, src: &Image, oi: isize, oj: isize) {
        assert_eq!(self.c, src.c);
        for i in 0..src.m {
            let ti = oi + i as isize;
            if ti < 0 || ti >= self.m as isize {
                continue;
            }
            for j in 0..src.n {
                let tj = oj + j as isize;
                if tj < 0 || tj >= self.n as isize {
                    continue;
                }
                for k in 0..self.c {
                    self.set(ti as usize, tj as usize, k, src.get(i, j, k));
                }
            }
        }
    }

    /// Extracts the `rm x rn` window with origin `(oi, oj)`, zero padding.
    pub fn crop(&self, oi: isize, oj: isize, rm: usize, rn: usize) -> Image {
        Image::from_fn(rm, rn, self.c, |i, j, k| {
            self.sample(oi + i as isize, oj + j as isize, k)
        })
    }

    /// Per-channel means.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.c];
        for i in 0..self.m {
            for j in 0..self.n {
                for k in 0..self.c {
                    means[k] += self.get(i, j, k);
                }
            }
        }
        let px = (self.m * self.n) as f64;
        for v in &mut means {
            *v /= px;
        }
        means
    }
}

/// Membership set over an `m x n` grid; the associated projection zeroes
/// samples outside the set.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportMask {
    m: usize,
    n: usize,
    set: Vec<bool>,
}

impl SupportMask {
    pub fn full(m: usize, n: usize) -> Self {
        SupportMask {
            m,
            n,
            set: vec![true; m * n],
        }
    }

    pub fn empty(m: usize, n: usize) -> Self {
        SupportMask {
            m,
            n,
            set: vec![false; m * n],
        }
    }

    pub fn from_fn(m: usize, n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = SupportMask::empty(m, n);
        for i in 0..m {
            for j in 0..n {
                mask.set[i * n + j] = f(i, j);
            }
        }
        mask
    }

    /// Support of nonzero pixels (any channel) of an image.
    pub fn from_nonzero(img: &Image, tol: f64) -> Self {
        SupportMask::from_fn(img.rows(), img.cols(), |i, j| {
            (0..img.channels()).any(|k| img.get(i, j, k).abs() > tol)
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.set[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.set[i * self.n + j] = v;
    }

    pub fn count(&self) -> usize {
        self.set.iter().filter(|b| **b).count()
    }

    pub fn complement(&self) -> SupportMask {
        SupportMask {
            m: self.m,
            n: self.n,
            set: self.set.iter().map(|b| !b).collect(),
        }
    }

    /// Zeroes samples outside the mask (all channels).
    pub fn project(&self, img: &Image) -> Image {
        assert_eq!((self.m, self.n), (img.rows(), img.cols()));
        Image::from_fn(img.rows(), img.cols(), img.channels(), |i, j, k| {
            if self.contains(i, j) {
                img.get(i, j, k)
            } else {
                0.0
            }
        })
    }

    /// In-place projection.
    pub fn project_mut(&self, img: &mut Image) {
        assert_eq!((self.m, self.n), (img.rows(), img.cols()));
        let c = img.channels();
        let n = img.cols();
        for i in 0..self.m {
            for j in 0..n {
                if !self.set[i * n + j] {
                    for k in 0..c {
                        img.set(i, j, k, 0.0);
                    }
                }
            }
        }
    }

    /// 0/1 single-channel image of the membership set.
    pub fn to_image(&self) -> Image {
        Image::from_fn(self.m, self.n, 1, |i, j, _| {
            if self.contains(i, j) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Bounding box `(i0, j0, height, width)` of the set, if nonempty.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut i0, mut j0, mut i1, mut j1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        for i in 0..self.m {
            for j in 0..self.n {
                if self.contains(i, j) {
                    i0 = i0.min(i);
                    j0 = j0.min(j);
                    i1 = i1.max(i);
                    j1 = j1.max(j);
                }
            }
        }
        if i0 == usize::MAX {
            None
        } else {
            Some((i0, j0, i1 - i0 + 1, j1 - j0 + 1))
        }
    }

    /// Re-embeds the mask into an `m x n` grid with origin `(oi, oj)`.
    pub fn embed(&self, m: usize, n: usize, oi: isize, oj: isize) -> SupportMask {
        SupportMask::from_fn(m, n, |i, j| {
            let si = i as isize - oi;
            let sj = j as isize - oj;
            si >= 0
                && sj >= 0
                && (si as usize) < self.m
                && (sj as usize) < self.n
                && self.contains(si as usize, sj as usize)
        })
    }
}

/// Morphological dilation: all pixels within Chebyshev distance
/// `ceil(radius)` of the set, clipped to the grid. Implemented as two
/// separable max passes, which is exact for the Chebyshev ball.
pub fn dilate(mask: &SupportMask, radius: f64) -> SupportMask {
    assert!(radius >= 0.0);
    let r = radius.ceil() as usize;
    if r == 0 {
        return mask.clone();
    }
    let (m, n) = (mask.rows(), mask.cols());
    let mut rows = SupportMask::empty(m, n);
    for i in 0..m {
        for j in 0..n {
            if mask.contains(i, j) {
                let lo = i.saturating_sub(r);
                let hi = (i + r).min(m - 1);
                for t in lo..=hi {
                    rows.set(t, j, true);
                }
            }
        }
    }
    let mut out = SupportMask::empty(m, n);
    for i in 0..m {
        for j in 0..n {
            if rows.contains(i, j) {
                let lo = j.saturating_sub(r);
                let hi = (j + r).min(n - 1);
                for t in lo..=hi {
                    out.set(i, t, true);
                }
            }
        }
    }
    out
}

/// Normalized cross-correlation `<x, y> / (|x| |y|)`.
pub fn ncc(x: &Image, y: &Image) -> Result<f64> {
    check_same_shape(x, y)?;
    let nx = x.sq_norm().sqrt();
    let ny = y.sq_norm().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVariance { metric: "ncc" });
    }
    Ok(x.dot(y) / (nx * ny))
}

/// Zero-normalized cross-correlation: NCC after channelwise mean removal.
pub fn zncc(x: &Image, y: &Image) -> Result<f64> {
    check_same_shape(x, y)?;
    let cx = subtract_channel_means(x);
    let cy = subtract_channel_means(y);
    let nx = cx.sq_norm().sqrt();
    let ny = cy.sq_norm().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVariance { metric: "zncc" });
    }
    Ok(cx.dot(&cy) / (nx * ny))
}

/// ZNCC restricted to a support mask (means and sums over the mask only).
pub fn zncc_masked(x: &Image, y: &Image, mask: &SupportMask) -> Result<f64> {
    check_same_shape(x, y)?;
    let cnt = mask.count();
    if cnt == 0 {
        return Err(Error::ZeroVariance { metric: "zncc" });
    }
    let c = x.channels();
    let mut mx = vec![0.0; c];
    let mut my = vec![0.0; c];
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            if mask.contains(i, j) {
                for k in 0..c {
                    mx[k] += x.get(i, j, k);
                    my[k] += y.get(i, j, k);
                }
            }
        }
    }
    for k in 0..c {
        mx[k] /= cnt as f64;
        my[k] /= cnt as f64;
    }
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            if mask.contains(i, j) {
                for k in 0..c {
                    let a = x.get(i, j, k) - mx[k];
                    let b = y.get(i, j, k) - my[k];
                    dot += a * b;
                    nx += a * a;
                    ny += b * b;
                }
            }
        }
    }
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVariance { metric: "zncc" });
    }
    Ok(dot / (nx.sqrt() * ny.sqrt()))
}

fn subtract_channel_means(x: &Image) -> Image {
    let means = x.channel_means();
    Image::from_fn(x.rows(), x.cols(), x.channels(), |i, j, k| {
        x.get(i, j, k) - means[k]
    })
}

fn check_same_shape(x: &Image, y: &Image) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", x.shape()),
            got: format!("{:?}", y.shape()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(m: usize, n: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(m, n, c, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn projection_idempotent_and_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mask = SupportMask::from_fn(9, 11, |_, _| rng.gen_bool(0.4));
            let x = random_image(9, 11, 2, rng.gen());
            let y = random_image(9, 11, 2, rng.gen());
            let px = mask.project(&x);
            let ppx = mask.project(&px);
            assert_eq!(px, ppx);
            // <P x, y> = <x, P y>
            let lhs = px.dot(&y);
            let rhs = x.dot(&mask.project(&y));
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn zncc_self_similarity_is_one() {
        let x = random_image(8, 8, 3, 3);
        assert!((zncc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zncc_affine_invariance() {
        let x = random_image(8, 8, 2, 4);
        let y = Image::from_fn(8, 8, 2, |i, j, k| 2.5 * x.get(i, j, k) + if k == 0 { 3.0 } else { -1.0 });
        assert!((zncc(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ncc_proportional_images() {
        let x = Image::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = Image::from_vec(2, 2, 1, vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        assert!((ncc(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zncc_zero_variance_is_error() {
        let x = Image::from_fn(4, 4, 1, |_, _, _| 3.0);
        let y = random_image(4, 4, 1, 5);
        assert!(matches!(zncc(&x, &y), Err(Error::ZeroVariance { .. })));
    }

    #[test]
    fn metrics_bounded_on_random_inputs() {
        for seed in 0..50 {
            let x = random_image(6, 7, 2, seed);
            let y = random_image(6, 7, 2, seed + 1000);
            let v = zncc(&x, &y).unwrap();
            assert!(v >= -1.0 - 1e-12 && v <= 1.0 + 1e-12);
            let v = ncc(&x, &y).unwrap();
            assert!(v >= -1.0 - 1e-12 && v <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let mask = SupportMask::from_fn(7, 7, |i, j| (i + j) % 3 == 0);
        assert_eq!(dilate(&mask, 0.0), mask);
    }

    #[test]
    fn dilate_single_pixel_radius_one_is_3x3() {
        let mut mask = SupportMask::empty(7, 7);
        mask.set(3, 3, true);
        let d = dilate(&mask, 1.0);
        assert_eq!(d.count(), 9);
        for i in 2..=4 {
            for j in 2..=4 {
                assert!(d.contains(i, j));
            }
        }
    }

    #[test]
    fn dilate_matches_brute_force_chebyshev() {
        // Irregular blob, radius 2*sigma with sigma = 3 (13x13 element).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mask = SupportMask::from_fn(40, 44, |i, j| {
            let di = i as f64 - 17.0;
            let dj = j as f64 - 23.0;
            (di * di / 80.0 + dj * dj / 140.0) < 1.0 && rng.gen_bool(0.8)
        });
        let radius = 2.0 * 3.0;
        let fast = dilate(&mask, radius);
        let r = radius.ceil() as isize;
        let brute = SupportMask::from_fn(40, 44, |i, j| {
            for di in -r..=r {
                for dj in -r..=r {
                    let p = i as isize + di;
                    let q = j as isize + dj;
                    if p >= 0 && q >= 0 && p < 40 && q < 44 && mask.contains(p as usize, q as usize) {
                        return true;
                    }
                }
            }
            false
        });
        assert_eq!(fast, brute);
        // Superset of the original set.
        for i in 0..40 {
            for j in 0..44 {
                if mask.contains(i, j) {
                    assert!(fast.contains(i, j));
                }
            }
        }
    }
}
