//! Parametric transformation families represented as deformation fields.
//!
//! A transform `(A, b)` centered at `c` maps plane points by
//! `x -> A (x - c) + b + c`. Its field form on an `m' x n'` grid stores the
//! target coordinates of every grid point. The center is the grid centroid
//! by default, which makes the six affine basis fields mutually orthogonal
//! and the subspace projection a set of independent inner products.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

/// Motion model tag; parameter dimensions are 2 / 3 / 4 / 6.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionModel {
    Translation,
    Euclidean,
    Similarity,
    Affine,
}

impl MotionModel {
    pub fn dim(self) -> usize {
        match self {
            MotionModel::Translation => 2,
            MotionModel::Euclidean => 3,
            MotionModel::Similarity => 4,
            MotionModel::Affine => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionModel::Translation => "translation",
            MotionModel::Euclidean => "euclidean",
            MotionModel::Similarity => "similarity",
            MotionModel::Affine => "affine",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(MotionModel::Translation),
            "euclidean" => Ok(MotionModel::Euclidean),
            "similarity" => Ok(MotionModel::Similarity),
            "affine" => Ok(MotionModel::Affine),
            other => Err(Error::Config(format!("unknown motion model '{other}'"))),
        }
    }
}

/// Rotation matrix acting on (row, col) coordinates.
pub fn rotation(theta: f64) -> Matrix2<f64> {
    Matrix2::new(theta.cos(), -theta.sin(), theta.sin(), theta.cos())
}

/// Parametric transform `x -> A (x - center) + b + center`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformParams {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub center: Vector2<f64>,
    pub model: MotionModel,
}

impl TransformParams {
    pub fn identity(model: MotionModel, center: Vector2<f64>) -> Self {
        TransformParams {
            a: Matrix2::identity(),
            b: Vector2::zeros(),
            center,
            model,
        }
    }

    pub fn euclidean(theta: f64, b: Vector2<f64>, center: Vector2<f64>) -> Self {
        TransformParams {
            a: rotation(theta),
            b,
            center,
            model: MotionModel::Euclidean,
        }
    }

    /// Applies the transform to a plane point.
    pub fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.a * (p - self.center) + self.b + self.center
    }

    /// Rotation angle of the (scaled) rotation block; meaningful for the
    /// euclidean and similarity models.
    pub fn theta(&self) -> f64 {
        self.a[(1, 0)].atan2(self.a[(0, 0)])
    }

    /// The same affine map expressed about a different center.
    pub fn recenter(&self, center: Vector2<f64>) -> TransformParams {
        // A(x-c)+b+c = A(x-c')+b'+c' with b' = b + (I-A)(c'-c) ... derive:
        // A x - A c + b + c = A x - A c' + b' + c'  =>
        // b' = b + c - c' + A(c' - c)
        let b = self.b + self.center - center + self.a * (center - self.center);
        TransformParams {
            a: self.a,
            b,
            center,
            model: self.model,
        }
    }

    /// Inverse transform about the same center.
    pub fn inverse(&self) -> Result<TransformParams> {
        let det = self.a.determinant();
        if det.abs() < 1e-300 {
            return Err(Error::SingularTransform { det });
        }
        let a_inv = self.a.try_inverse().ok_or(Error::SingularTransform { det })?;
        // y = A(x-c)+b+c  =>  x = A^-1(y-c) - A^-1 b + c
        Ok(TransformParams {
            a: a_inv,
            b: -(a_inv * self.b),
            center: self.center,
            model: self.model,
        })
    }

    /// Composition `self . other` (apply `other` first) about `self.center`.
    pub fn compose(&self, other: &TransformParams) -> TransformParams {
        // Work in homogeneous form f(x) = M x + t.
        let (m1, t1) = self.homogeneous();
        let (m2, t2) = other.homogeneous();
        let m = m1 * m2;
        let t = m1 * t2 + t1;
        // Re-express about self.center: b = t + (M - I) c ... from
        // M(x-c)+b+c = Mx + t  =>  b = t - c + M c.
        let b = t - self.center + m * self.center;
        TransformParams {
            a: m,
            b,
            center: self.center,
            model: MotionModel::Affine,
        }
    }

    fn homogeneous(&self) -> (Matrix2<f64>, Vector2<f64>) {
        (self.a, self.b + self.center - self.a * self.center)
    }

    /// Checks the model constraint on `A`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        match self.model {
            MotionModel::Translation => {
                let d = (self.a - Matrix2::identity()).norm();
                if d > tol {
                    return Err(Error::Config(format!(
                        "translation model requires A = I (|A - I| = {d})"
                    )));
                }
            }
            MotionModel::Euclidean => {
                let g = self.a.transpose() * self.a - Matrix2::identity();
                if g.norm() > tol || self.a.determinant() < 0.0 {
                    return Err(Error::Config(
                        "euclidean model requires a proper rotation".into(),
                    ));
                }
            }
            MotionModel::Similarity => {
                let ata = self.a.transpose() * self.a;
                let s2 = 0.5 * (ata[(0, 0)] + ata[(1, 1)]);
                let g = ata - Matrix2::identity() * s2;
                if g.norm() > tol * s2.max(1.0) || self.a.determinant() <= 0.0 {
                    return Err(Error::Config(
                        "similarity model requires A = s R with s > 0".into(),
                    ));
                }
            }
            MotionModel::Affine => {
                if self.a.determinant().abs() < 1e-12 {
                    return Err(Error::SingularTransform {
                        det: self.a.determinant(),
                    });
                }
            }
        }
        Ok(())
    }

    /// One-line text form: `model a11 a12 a21 a22 b1 b2 c1 c2`.
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {} {} {}",
            self.model.name(),
            self.a[(0, 0)],
            self.a[(0, 1)],
            self.a[(1, 0)],
            self.a[(1, 1)],
            self.b[0],
            self.b[1],
            self.center[0],
            self.center[1],
        )
    }

    pub fn parse_line(line: &str) -> Result<TransformParams> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 9 {
            return Err(Error::Config(format!(
                "params line needs 9 fields, got {}",
                toks.len()
            )));
        }
        let model = MotionModel::parse(toks[0])?;
        let mut v = [0.0f64; 8];
        for (idx, t) in toks[1..].iter().enumerate() {
            v[idx] = t
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number '{t}': {e}")))?;
        }
        Ok(TransformParams {
            a: Matrix2::new(v[0], v[1], v[2], v[3]),
            b: Vector2::new(v[4], v[5]),
            center: Vector2::new(v[6], v[7]),
            model,
        })
    }
}

/// Deformation field: per-pixel target coordinates (tau0, tau1).
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    m: usize,
    n: usize,
    data: Vec<f64>, // 2 per pixel
}

impl DeformationField {
    pub fn zeros(m: usize, n: usize) -> Self {
        DeformationField {
            m,
            n,
            data: vec![0.0; 2 * m * n],
        }
    }

    /// Identity field on a grid whose (0,0) pixel sits at plane point
    /// `origin`.
    pub fn identity(m: usize, n: usize, origin: Vector2<f64>) -> Self {
        let mut f = DeformationField::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                f.set(i, j, Vector2::new(origin[0] + i as f64, origin[1] + j as f64));
            }
        }
        f
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
    pub fn get(&self, i: usize, j: usize) -> Vector2<f64> {
        let idx = 2 * (i * self.n + j);
        Vector2::new(self.data[idx], self.data[idx + 1])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Vector2<f64>) {
        let idx = 2 * (i * self.n + j);
        self.data[idx] = v[0];
        self.data[idx + 1] = v[1];
    }

    pub fn translate(&self, delta: Vector2<f64>) -> DeformationField {
        let mut out = self.clone();
        for i in 0..self.m {
            for j in 0..self.n {
                out.set(i, j, self.get(i, j) + delta);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Field form of a parametric transform on an `m x n` grid whose (0,0)
/// pixel sits at plane point `origin`.
pub fn field_from_params(
    p: &TransformParams,
    m: usize,
    n: usize,
    origin: Vector2<f64>,
) -> Result<DeformationField> {
    if p.model == MotionModel::Affine && p.a.determinant().abs() < 1e-300 {
        return Err(Error::SingularTransform {
            det: p.a.determinant(),
        });
    }
    let mut f = DeformationField::zeros(m, n);
    for i in 0..m {
        let pi = origin[0] + i as f64;
        for j in 0..n {
            let pj = origin[1] + j as f64;
            f.set(i, j, p.apply(Vector2::new(pi, pj)));
        }
    }
    Ok(f)
}

/// Default centered field: grid origin 0, center at the grid centroid.
pub fn field_from_params_default(p: &TransformParams, m: usize, n: usize) -> Result<DeformationField> {
    field_from_params(p, m, n, Vector2::zeros())
}

pub fn grid_center(m: usize, n: usize, origin: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(
        origin[0] + (m as f64 - 1.0) / 2.0,
        origin[1] + (n as f64 - 1.0) / 2.0,
    )
}

/// Diagnostics attached to a field projection.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProjectionInfo {
    /// The projected linear part had negative determinant and was clamped
    /// to the nearest rotation (euclidean / similarity models).
    pub reflected: bool,
    /// The projected linear part was numerically zero, so the polar factor
    /// is not unique.
    pub degenerate: bool,
}

/// Orthogonal projection of a field onto the centered affine subspace,
/// restricted to the requested motion model. The transform center is the
/// grid centroid (`origin + ((m-1)/2, (n-1)/2)`), which is the centering
/// that makes the affine basis fields orthogonal.
pub fn project_field(
    field: &DeformationField,
    model: MotionModel,
    origin: Vector2<f64>,
) -> (TransformParams, ProjectionInfo) {
    let (m, n) = (field.rows(), field.cols());
    let center = grid_center(m, n, origin);
    let ci = (m as f64 - 1.0) / 2.0;
    let cj = (n as f64 - 1.0) / 2.0;

    // Basis inner products: sum_i (i-ci)^2 over the grid (times n), etc.
    let sii: f64 = (0..m).map(|i| (i as f64 - ci).powi(2)).sum::<f64>() * n as f64;
    let sjj: f64 = (0..n).map(|j| (j as f64 - cj).powi(2)).sum::<f64>() * m as f64;
    let px = (m * n) as f64;

    let mut a = Matrix2::zeros();
    let mut mean = Vector2::zeros();
    for i in 0..m {
        let di = i as f64 - ci;
        for j in 0..n {
            let dj = j as f64 - cj;
            let t = field.get(i, j);
            a[(0, 0)] += t[0] * di;
            a[(0, 1)] += t[0] * dj;
            a[(1, 0)] += t[1] * di;
            a[(1, 1)] += t[1] * dj;
            mean += t;
        }
    }
    if sii > 0.0 {
        a[(0, 0)] /= sii;
        a[(1, 0)] /= sii;
    } else {
        a[(0, 0)] = 1.0;
        a[(1, 0)] = 0.0;
    }
    if sjj > 0.0 {
        a[(0, 1)] /= sjj;
        a[(1, 1)] /= sjj;
    } else {
        a[(0, 1)] = 0.0;
        a[(1, 1)] = 1.0;
    }
    mean /= px;
    let b = mean - center;

    let mut info = ProjectionInfo::default();
    let a = match model {
        MotionModel::Translation => Matrix2::identity(),
        MotionModel::Affine => a,
        MotionModel::Euclidean | MotionModel::Similarity => {
            let (r, sing, reflected, degenerate) = polar_rotation(&a);
            info.reflected = reflected;
            info.degenerate = degenerate;
            match model {
                MotionModel::Euclidean => r,
                _ => {
                    // Nearest s R: s = <A, R> / |R|^2 = (s1 +/- s2) / 2.
                    let s = (sing.0 + if reflected { -sing.1 } else { sing.1 }) / 2.0;
                    r * s.max(1e-12)
                }
            }
        }
    };

    (
        TransformParams {
            a,
            b,
            center,
            model,
        },
        info,
    )
}

/// Nearest rotation (Frobenius) to a 2x2 matrix, with singular values.
/// Uses the closed 2x2 polar form: A + det-sign adjugate trick.
fn polar_rotation(a: &Matrix2<f64>) -> (Matrix2<f64>, (f64, f64), bool, bool) {
    // For 2x2: with E = [[a11+a22, a12-a21]] / 2 and F = [[a11-a22, a12+a21]] / 2,
    // singular values are |E| + |F| and ||E| - |F||; the polar rotation angle
    // comes from the E component (det >= 0) after reflection handling.
    let e0 = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let e1 = 0.5 * (a[(1, 0)] - a[(0, 1)]);
    let f0 = 0.5 * (a[(0, 0)] - a[(1, 1)]);
    let f1 = 0.5 * (a[(1, 0)] + a[(0, 1)]);
    let re = (e0 * e0 + e1 * e1).sqrt();
    let rf = (f0 * f0 + f1 * f1).sqrt();
    let s1 = re + rf;
    let s2 = (re - rf).abs();
    let reflected = a.determinant() < 0.0;
    let degenerate = s1 < 1e-12;
    if degenerate {
        return (Matrix2::identity(), (s1, s2), reflected, degenerate);
    }
    // argmax_R <A, R> over SO(2): R(theta) with cos ~ e0, sin ~ e1.
    if re < 1e-15 * s1 {
        // A is (numerically) a pure reflection; any rotation is equally
        // close. Pick identity and flag.
        return (Matrix2::identity(), (s1, s2), reflected, true);
    }
    let ct = e0 / re;
    let st = e1 / re;
    (
        Matrix2::new(ct, -st, st, ct),
        (s1, s2),
        reflected,
        degenerate,
    )
}

/// Chain rule for costs differentiated in the SO(2) angle parameterization:
/// given the gradient with respect to the matrix A evaluated at A = R(theta),
/// returns d/d theta as the inner product with R'(theta).
pub fn so2_grad(grad_a: &Matrix2<f64>, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    grad_a[(0, 0)] * (-s) + grad_a[(0, 1)] * (-c) + grad_a[(1, 0)] * c + grad_a[(1, 1)] * (-s)
}

/// Gradients of `phi(A^-1, -A^-1 b)` from the gradients of `phi` evaluated
/// at the mapped point (the inverse-parameterization chain rule).
pub fn inverse_param_grads(
    grad_a_std: &Matrix2<f64>,
    grad_b_std: &Vector2<f64>,
    a: &Matrix2<f64>,
    b: &Vector2<f64>,
) -> Result<(Matrix2<f64>, Vector2<f64>)> {
    let det = a.determinant();
    let a_inv = a.try_inverse().ok_or(Error::SingularTransform { det })?;
    let a_inv_t = a_inv.transpose();
    let ga = -a_inv_t * grad_a_std * a_inv_t + a_inv_t * grad_b_std * (a_inv * b).transpose();
    let gb = -a_inv_t * grad_b_std;
    Ok((ga, gb))
}
