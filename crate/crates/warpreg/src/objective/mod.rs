//! Registration objectives and their analytic gradients.
//!
//! All variants compare a warped scene against a motif under gaussian
//! smoothing on a *working grid*: the motif grid padded symmetrically so
//! that every filter read is in range. Working-grid pixel `(i, j)` sits at
//! plane point `origin + (i, j)`; the transform center is the working-grid
//! centroid, which coincides with the motif center because the padding is
//! symmetric.

mod background;
mod cost_smoothed;
mod map;
mod spike;

pub use background::BackgroundObjective;
pub use cost_smoothed::{cost_smoothed_direct, CostSmoothedObjective};
pub use map::MapObjective;
pub use spike::SpikeObjective;

use nalgebra::{Matrix2, Vector2};

use crate::img::Image;
use crate::transform::DeformationField;

/// Value, warped scene, and gradients from one objective evaluation.
pub struct EvalGrad {
    pub value: f64,
    /// Gradient with respect to the deformation field (2 components per px).
    pub field_grad: DeformationField,
    /// Gradient with respect to the background model, if the variant has one.
    pub beta_grad: Option<Image>,
    /// The warped scene on the working grid (useful for ZNCC checks).
    pub warped: Image,
}

/// Chains a field-space gradient through the centered parameterization
/// `tau(p) = A (p - center) + b + center`:
/// `dA[r][s] = sum_p G_r(p) (p_s - center_s)`, `db[r] = sum_p G_r(p)`.
pub fn field_grad_to_params(
    g: &DeformationField,
    origin: Vector2<f64>,
    center: Vector2<f64>,
) -> (Matrix2<f64>, Vector2<f64>) {
    let mut ga = Matrix2::zeros();
    let mut gb = Vector2::zeros();
    for i in 0..g.rows() {
        let di = origin[0] + i as f64 - center[0];
        for j in 0..g.cols() {
            let dj = origin[1] + j as f64 - center[1];
            let v = g.get(i, j);
            ga[(0, 0)] += v[0] * di;
            ga[(0, 1)] += v[0] * dj;
            ga[(1, 0)] += v[1] * di;
            ga[(1, 1)] += v[1] * dj;
            gb += v;
        }
    }
    (ga, gb)
}

/// The field-parameterized objectives, unified for the solver.
pub enum FieldObjective {
    Map(MapObjective),
    CostSmoothed(CostSmoothedObjective),
    Background(BackgroundObjective),
}

impl FieldObjective {
    pub fn work_shape(&self) -> (usize, usize) {
        match self {
            FieldObjective::Map(o) => o.work_shape(),
            FieldObjective::CostSmoothed(o) => o.work_shape(),
            FieldObjective::Background(o) => o.work_shape(),
        }
    }

    pub fn origin(&self) -> Vector2<f64> {
        match self {
            FieldObjective::Map(o) => o.origin(),
            FieldObjective::CostSmoothed(o) => o.origin(),
            FieldObjective::Background(o) => o.origin(),
        }
    }

    /// Transform center: the working-grid centroid.
    pub fn center(&self) -> Vector2<f64> {
        let (m, n) = self.work_shape();
        crate::transform::grid_center(m, n, self.origin())
    }

    pub fn has_background(&self) -> bool {
        matches!(self, FieldObjective::Background(_))
    }

    pub fn eval(&self, field: &DeformationField, beta: Option<&Image>) -> crate::Result<f64> {
        match self {
            FieldObjective::Map(o) => o.eval(field),
            FieldObjective::CostSmoothed(o) => o.eval(field),
            FieldObjective::Background(o) => {
                o.eval(field, beta.expect("background variant needs beta"))
            }
        }
    }

    pub fn eval_grad(
        &self,
        field: &DeformationField,
        beta: Option<&Image>,
    ) -> crate::Result<EvalGrad> {
        match self {
            FieldObjective::Map(o) => o.eval_grad(field),
            FieldObjective::CostSmoothed(o) => o.eval_grad(field),
            FieldObjective::Background(o) => {
                o.eval_grad(field, beta.expect("background variant needs beta"))
            }
        }
    }

    /// Operation accounting for one gradient step: (interpolations,
    /// convolutions), counting the warp of the value/Jacobian stack as three
    /// interpolations.
    pub fn ops_per_iter(&self) -> (usize, usize) {
        match self {
            FieldObjective::Map(_) => (3, 2),
            FieldObjective::CostSmoothed(_) => (3, 0),
            FieldObjective::Background(_) => (3, 4),
        }
    }

    /// Initial background model for the background variant (smoothed
    /// difference between the initially warped scene and the motif,
    /// restricted off the motif support); `None` otherwise.
    pub fn init_beta(&self, field: &DeformationField) -> crate::Result<Option<Image>> {
        match self {
            FieldObjective::Background(o) => Ok(Some(o.init_beta(field)?)),
            _ => Ok(None),
        }
    }
}
