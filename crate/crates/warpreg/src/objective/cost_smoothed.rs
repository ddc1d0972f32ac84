//! Cost-smoothed registration objective: the gaussian-weighted average of
//! masked squared errors over integer shifts of the warped scene,
//!
//! `1/2 sum_D g_D | P_Omega [ shift_D(y o tau) - x_o ] |_F^2`.
//!
//! Expanding the square turns the shift sum into fixed correlations of the
//! mask and the masked motif with the filter, so each evaluation needs only
//! two inner products against `(y o tau)^2` and `y o tau` plus a constant
//! (no convolutions in the solver loop). The direct truncated sum is kept
//! as an independent evaluation route.

use nalgebra::Vector2;

use super::EvalGrad;
use crate::error::{Error, Result};
use crate::img::{convolve, warp_with_jacobian, GaussianFilter, Image, SupportMask};
use crate::transform::DeformationField;

pub struct CostSmoothedObjective {
    scene: Image,
    motif_embedded: Image,
    mask_embedded: SupportMask,
    filter: GaussianFilter,
    /// g * P_Omega[1], on the working grid (single channel).
    g_mask: Image,
    /// g * P_Omega[x_o], per channel.
    g_motif: Image,
    /// sum(g) * |P_Omega[x_o]|^2.
    const_term: f64,
    wm: usize,
    wn: usize,
    origin: Vector2<f64>,
}

impl CostSmoothedObjective {
    pub fn new(
        scene: Image,
        motif: &Image,
        mask: &SupportMask,
        filter: GaussianFilter,
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
        motif_embedded.paste(&mask.project(motif), pad as isize, pad as isize);
        let mask_embedded = mask.embed(wm, wn, pad as isize, pad as isize);
        let g_mask = convolve(&mask_embedded.to_image(), &filter);
        let g_motif = convolve(&motif_embedded, &filter);
        let const_term = filter.sum() * motif_embedded.sq_norm();
        Ok(CostSmoothedObjective {
            scene,
            motif_embedded,
            mask_embedded,
            filter,
            g_mask,
            g_motif,
            const_term,
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

    pub fn mask_embedded(&self) -> &SupportMask {
        &self.mask_embedded
    }

    pub fn motif_embedded(&self) -> &Image {
        &self.motif_embedded
    }

    pub fn filter(&self) -> &GaussianFilter {
        &self.filter
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

    fn value_from_warp(&self, warped: &Image) -> f64 {
        let c = warped.channels();
        let mut quad = 0.0;
        let mut cross = 0.0;
        for i in 0..self.wm {
            for j in 0..self.wn {
                let gm = self.g_mask.get(i, j, 0);
                for k in 0..c {
                    let z = warped.get(i, j, k);
                    quad += z * z * gm;
                    cross += z * self.g_motif.get(i, j, k);
                }
            }
        }
        0.5 * (quad - 2.0 * cross + self.const_term)
    }

    pub fn eval(&self, field: &DeformationField) -> Result<f64> {
        self.check_field(field)?;
        let warped = crate::img::interpolate(&self.scene, field);
        Ok(self.value_from_warp(&warped))
    }

    pub fn eval_grad(&self, field: &DeformationField) -> Result<EvalGrad> {
        self.check_field(field)?;
        let (warped, jac) = warp_with_jacobian(&self.scene, field);
        let value = self.value_from_warp(&warped);
        let c = warped.channels();
        let mut g = DeformationField::zeros(self.wm, self.wn);
        for i in 0..self.wm {
            for j in 0..self.wn {
                let gm = self.g_mask.get(i, j, 0);
                let mut acc = Vector2::zeros();
                for k in 0..c {
                    let dz = warped.get(i, j, k) * gm - self.g_motif.get(i, j, k);
                    acc[0] += dz * jac.get(i, j, 2 * k);
                    acc[1] += dz * jac.get(i, j, 2 * k + 1);
                }
                g.set(i, j, acc);
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

/// Independent evaluation route: the literal truncated shift sum
/// `1/2 sum_D g_D sum_{p in Omega} (z(p + D) - x_o(p))^2` with `z = y o tau`
/// on the working grid. Identical truncation to the fast form.
pub fn cost_smoothed_direct(obj: &CostSmoothedObjective, field: &DeformationField) -> Result<f64> {
    let warped = crate::img::interpolate(obj.scene(), field);
    let filter = obj.filter();
    let h = filter.radius() as isize;
    let mask = obj.mask_embedded();
    let motif = obj.motif_embedded();
    let c = warped.channels();
    let mut total = 0.0;
    for di in -h..=h {
        for dj in -h..=h {
            let w = filter.value_at(di, dj);
            let mut acc = 0.0;
            for i in 0..mask.rows() {
                for j in 0..mask.cols() {
                    if !mask.contains(i, j) {
                        continue;
                    }
                    for k in 0..c {
                        let z = warped.sample(i as isize + di, j as isize + dj, k);
                        let d = z - motif.get(i, j, k);
                        acc += d * d;
                    }
                }
            }
            total += w * acc;
        }
    }
    Ok(0.5 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{field_from_params, grid_center, TransformParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, sigma2: f64) -> CostSmoothedObjective {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = Image::from_fn(36, 36, 2, |_, _, _| rng.gen_range(0.0..1.0));
        let motif = Image::from_fn(12, 12, 2, |_, _, _| rng.gen_range(0.0..1.0));
        let mask = SupportMask::from_fn(12, 12, |i, j| {
            let di = i as f64 - 5.5;
            let dj = j as f64 - 5.5;
            di * di + dj * dj < 30.0
        });
        CostSmoothedObjective::new(
            scene,
            &motif,
            &mask,
            GaussianFilter::isotropic(sigma2).unwrap(),
            Vector2::new(12.0, 12.0),
        )
        .unwrap()
    }

    fn se2_field(obj: &CostSmoothedObjective, theta: f64, b: Vector2<f64>) -> DeformationField {
        let (m, n) = obj.work_shape();
        let p = TransformParams::euclidean(theta, b, grid_center(m, n, obj.origin()));
        field_from_params(&p, m, n, obj.origin()).unwrap()
    }

    #[test]
    fn fast_form_equals_direct_truncated_sum() {
        for seed in 0..5 {
            let obj = random_problem(seed, 1.8);
            let field = se2_field(&obj, 0.13, Vector2::new(0.7, -0.4));
            let fast = obj.eval(&field).unwrap();
            let direct = cost_smoothed_direct(&obj, &field).unwrap();
            assert!(
                (fast - direct).abs() <= 1e-8 * direct.abs().max(1e-12),
                "{fast} vs {direct}"
            );
        }
    }

    #[test]
    fn near_delta_filter_at_exact_match_is_zero() {
        // sigma^2 -> 0 collapses the sum to the single D = 0 term.
        let motif = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            Image::from_fn(10, 10, 1, |_, _, _| rng.gen_range(0.0..1.0))
        };
        let mut scene = Image::zeros(30, 30, 1);
        scene.paste(&motif, 8, 8);
        let obj = CostSmoothedObjective::new(
            scene,
            &motif,
            &SupportMask::full(10, 10),
            GaussianFilter::isotropic(1e-2).unwrap(),
            Vector2::new(8.0, 8.0),
        )
        .unwrap();
        let field = se2_field(&obj, 0.0, Vector2::zeros());
        // The expanded quadratic form cancels to zero only up to rounding
        // of the large individual inner products.
        assert!(obj.eval(&field).unwrap().abs() < 1e-11);
    }

    #[test]
    fn params_gradient_matches_finite_differences() {
        let obj = random_problem(3, 2.0);
        let (m, n) = obj.work_shape();
        let center = grid_center(m, n, obj.origin());
        let eval_at = |theta: f64, b: Vector2<f64>| {
            let p = TransformParams::euclidean(theta, b, center);
            let f = field_from_params(&p, m, n, obj.origin()).unwrap();
            obj.eval(&f).unwrap()
        };
        let (theta0, b0) = (0.07, Vector2::new(0.3, -0.2));
        let field = se2_field(&obj, theta0, b0);
        let out = obj.eval_grad(&field).unwrap();
        let (ga, gb) =
            super::super::field_grad_to_params(&out.field_grad, obj.origin(), center);
        let gt = crate::transform::so2_grad(&ga, theta0);
        let h = 1e-4;
        let fd_t = (eval_at(theta0 + h, b0) - eval_at(theta0 - h, b0)) / (2.0 * h);
        assert!((gt - fd_t).abs() <= 1e-3 * fd_t.abs().max(1e-6), "{gt} vs {fd_t}");
        for d in 0..2 {
            let mut bp = b0;
            bp[d] += h;
            let mut bm = b0;
            bm[d] -= h;
            let fd = (eval_at(theta0, bp) - eval_at(theta0, bm)) / (2.0 * h);
            assert!((gb[d] - fd).abs() <= 1e-3 * fd.abs().max(1e-6), "{} vs {fd}", gb[d]);
        }
    }
}
