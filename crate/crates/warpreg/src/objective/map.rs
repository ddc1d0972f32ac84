//! Basic masked registration objective
//! `scale * | P_Omega [ g * (y o tau - x_o) ] |_F^2`
//! with `scale = 1/2` for textured motifs and `1/(2c)` for multichannel
//! occurrence maps (where the filter carries the complementary-smoothed
//! variance).

use nalgebra::Vector2;

use super::EvalGrad;
use crate::error::{Error, Result};
use crate::img::{convolve, warp_with_jacobian, GaussianFilter, Image, SupportMask};
use crate::transform::DeformationField;

pub struct MapObjective {
    scene: Image,
    motif_embedded: Image,
    mask_embedded: SupportMask,
    filter: GaussianFilter,
    scale: f64,
    wm: usize,
    wn: usize,
    origin: Vector2<f64>,
}

impl MapObjective {
    /// `motif_origin` is the plane position of motif pixel (0, 0); the mask
    /// lives on the motif grid.
    pub fn new(
        scene: Image,
        motif: &Image,
        mask: &SupportMask,
        filter: GaussianFilter,
        scale: f64,
        motif_origin: Vector2<f64>,
    ) -> Result<Self> {
        if (mask.rows(), mask.cols()) != (motif.rows(), motif.cols()) {
            return Err(Error::ShapeMismatch {
                expected: format!("mask {}x{}", motif.rows(), motif.cols()),
                got: format!("{}x{}", mask.rows(), mask.cols()),
            });
        }
        if scene.channels() != motif.channels() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} channels", motif.channels()),
                got: format!("{}", scene.channels()),
            });
        }
        let pad = filter.radius();
        let wm = motif.rows() + 2 * pad;
        let wn = motif.cols() + 2 * pad;
        let mut motif_embedded = Image::zeros(wm, wn, motif.channels());
        motif_embedded.paste(motif, pad as isize, pad as isize);
        let mask_embedded = mask.embed(wm, wn, pad as isize, pad as isize);
        Ok(MapObjective {
            scene,
            motif_embedded,
            mask_embedded,
            filter,
            scale,
            wm,
            wn,
            origin: motif_origin - Vector2::new(pad as f64, pad as f64),
        })
    }

    pub fn work_shape(&self) -> (usize, usize) {
        (self.wm, self.wn)
    }

    pub fn origin(&self) -> Vector2<f64> {
        self.origin
    }

    pub fn scene(&self) -> &Image {
        &self.scene
    }

    pub fn motif_embedded(&self) -> &Image {
        &self.motif_embedded
    }

    pub fn mask_embedded(&self) -> &SupportMask {
        &self.mask_embedded
    }

    fn check_field(&self, field: &DeformationField) -> Result<()> {
        if (field.rows(), field.cols()) != (self.wm, self.wn) {
            return Err(Error::ShapeMismatch {
                expected: format!("field {}x{}", self.wm, self.wn),
                got: format!("{}x{}", field.rows(), field.cols()),
            });
        }
        Ok(())
    }

    fn masked_filtered_residual(&self, warped: &Image) -> Image {
        let mut resid = warped.clone();
        resid.add_scaled(&self.motif_embedded, -1.0);
        let mut e = convolve(&resid, &self.filter);
        self.mask_embedded.project_mut(&mut e);
        e
    }

    pub fn eval(&self, field: &DeformationField) -> Result<f64> {
        self.check_field(field)?;
        let warped = crate::img::interpolate(&self.scene, field);
        Ok(self.scale * self.masked_filtered_residual(&warped).sq_norm())
    }

    pub fn eval_grad(&self, field: &DeformationField) -> Result<EvalGrad> {
        self.check_field(field)?;
        let (warped, jac) = warp_with_jacobian(&self.scene, field);
        let me = self.masked_filtered_residual(&warped);
        let value = self.scale * me.sq_norm();
        // Adjoint chain: correlate with the (symmetric) filter again, then
        // pair with the interpolant Jacobian channelwise.
        let s = convolve(&me, &self.filter);
        let c = self.scene.channels();
        let w = 2.0 * self.scale;
        let mut g = DeformationField::zeros(self.wm, self.wn);
        for i in 0..self.wm {
            for j in 0..self.wn {
                let mut acc = Vector2::zeros();
                for k in 0..c {
                    let sv = s.get(i, j, k);
                    acc[0] += sv * jac.get(i, j, 2 * k);
                    acc[1] += sv * jac.get(i, j, 2 * k + 1);
                }
                g.set(i, j, w * acc);
            }
        }
        Ok(EvalGrad {
            value,
            field_grad: g,
            beta_grad: None,
            warped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{field_from_params, grid_center, MotionModel, TransformParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(m: usize, n: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(m, n, c, |_, _, _| rng.gen_range(0.0..1.0))
    }

    fn identity_field_for(obj: &MapObjective) -> DeformationField {
        let (m, n) = obj.work_shape();
        let p = TransformParams::identity(MotionModel::Affine, grid_center(m, n, obj.origin()));
        field_from_params(&p, m, n, obj.origin()).unwrap()
    }

    #[test]
    fn exact_match_has_zero_value_and_gradient() {
        let motif = random_image(12, 12, 2, 1);
        let mut scene = Image::zeros(32, 32, 2);
        scene.paste(&motif, 10, 10);
        let obj = MapObjective::new(
            scene,
            &motif,
            &SupportMask::full(12, 12),
            GaussianFilter::isotropic(2.0).unwrap(),
            0.5,
            Vector2::new(10.0, 10.0),
        )
        .unwrap();
        let field = identity_field_for(&obj);
        let out = obj.eval_grad(&field).unwrap();
        assert!(out.value < 1e-24, "value = {}", out.value);
        for i in 0..field.rows() {
            for j in 0..field.cols() {
                assert!(out.field_grad.get(i, j).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn integer_shift_with_matching_field_is_exact() {
        let motif = random_image(10, 10, 1, 2);
        let mut scene = Image::zeros(34, 34, 1);
        scene.paste(&motif, 14, 9); // shifted by (4, -3) from (10, 12)
        let obj = MapObjective::new(
            scene,
            &motif,
            &SupportMask::full(10, 10),
            GaussianFilter::isotropic(1.0).unwrap(),
            0.5,
            Vector2::new(10.0, 12.0),
        )
        .unwrap();
        let (m, n) = obj.work_shape();
        let mut p = TransformParams::identity(MotionModel::Translation, grid_center(m, n, obj.origin()));
        p.b = Vector2::new(4.0, -3.0);
        let field = field_from_params(&p, m, n, obj.origin()).unwrap();
        assert!(obj.eval(&field).unwrap() < 1e-24);
    }

    #[test]
    fn field_gradient_matches_finite_differences() {
        let scene = random_image(40, 40, 2, 3);
        let motif = random_image(14, 14, 2, 4);
        let obj = MapObjective::new(
            scene,
            &motif,
            &SupportMask::full(14, 14),
            GaussianFilter::isotropic(1.5).unwrap(),
            0.5,
            Vector2::new(12.0, 12.0),
        )
        .unwrap();
        let (m, n) = obj.work_shape();
        let mut field = identity_field_for(&obj);
        // Generic offset keeps the evaluation off kernel breakpoints.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..m {
            for j in 0..n {
                field.set(
                    i,
                    j,
                    field.get(i, j) + Vector2::new(rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4)),
                );
            }
        }
        let out = obj.eval_grad(&field).unwrap();
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let i = rng.gen_range(2..m - 2);
            let j = rng.gen_range(2..n - 2);
            let d = rng.gen_range(0..2);
            let delta = if d == 0 {
                Vector2::new(h, 0.0)
            } else {
                Vector2::new(0.0, h)
            };
            let mut fp = field.clone();
            fp.set(i, j, field.get(i, j) + delta);
            let mut fm = field.clone();
            fm.set(i, j, field.get(i, j) - delta);
            let fd = (obj.eval(&fp).unwrap() - obj.eval(&fm).unwrap()) / (2.0 * h);
            let an = out.field_grad.get(i, j)[d];
            assert!(
                (an - fd).abs() <= 1e-3 * fd.abs().max(1e-6),
                "({i},{j},{d}): {an} vs {fd}"
            );
        }
    }
}
