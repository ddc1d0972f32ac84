//! Fixed-depth proximal-gradient solvers for the registration objectives.
//!
//! One iteration computes the parametric gradient (the field gradient
//! chained onto the centered affine parameters, routed through the SO(2)
//! chain rule for rigid models), takes decoupled steps on the linear and
//! translation blocks, and re-forms the field from the projected
//! parameters. Depth is a fixed budget: the iterate map is the layer stack
//! of the corresponding unrolled network, so there is no tolerance-based
//! early exit in the core loop (callers may stop through the observer).

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::img::{smooth_normalized, GaussianFilter, Image, SupportMask};
use crate::objective::{
    field_grad_to_params, BackgroundObjective, CostSmoothedObjective, FieldObjective,
    MapObjective, SpikeObjective,
};
use crate::transform::{field_from_params, rotation, so2_grad, MotionModel, TransformParams};

/// Decoupled step sizes for the linear block, the translation block, and
/// the background model.
#[derive(Clone, Copy, Debug)]
pub struct StepSizes {
    pub t_a: f64,
    pub t_b: f64,
    pub t_beta: f64,
}

impl StepSizes {
    pub fn new(t_a: f64, t_b: f64) -> Self {
        StepSizes {
            t_a,
            t_b,
            t_beta: 1.0,
        }
    }

    pub fn scaled(&self, f: f64) -> StepSizes {
        StepSizes {
            t_a: self.t_a * f,
            t_b: self.t_b * f,
            t_beta: self.t_beta,
        }
    }
}

/// Heuristic step sizes for textured motifs: one tenth of
/// `4 sigma / max(m^2, n^2)` on the linear block and `2 sigma / max(m, n)`
/// on the translation block.
pub fn heuristic_steps(sigma: f64, motif_m: usize, motif_n: usize) -> StepSizes {
    let d = motif_m.max(motif_n) as f64;
    StepSizes {
        t_a: 0.1 * 4.0 * sigma / (d * d),
        t_b: 0.1 * 2.0 * sigma / d,
        t_beta: 1.0,
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub model: MotionModel,
    pub iters: usize,
    pub steps: StepSizes,
    /// Iterations at the start updating only the background model.
    pub beta_warmup: usize,
}

impl SolverConfig {
    pub fn new(model: MotionModel, iters: usize, steps: StepSizes) -> Self {
        SolverConfig {
            model,
            iters,
            steps,
            beta_warmup: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SolverDiagnostics {
    /// A euclidean/similarity projection hit a reflection or a degenerate
    /// polar factor at least once.
    pub projection_flagged: bool,
    pub interp_ops: usize,
    pub conv_ops: usize,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub params: TransformParams,
    pub beta: Option<Image>,
    pub loss_trace: Vec<f64>,
    pub params_trace: Vec<TransformParams>,
    pub diagnostics: SolverDiagnostics,
}

/// Per-iteration view handed to observers; returning `false` stops early.
pub struct IterState<'a> {
    pub k: usize,
    pub loss: f64,
    pub params: &'a TransformParams,
    pub warped: &'a Image,
}

/// Internal parameter state per motion model: angle/scale for the rigid
/// models so the constraint holds exactly at every iterate.
#[derive(Clone, Copy, Debug)]
enum ModelState {
    Translation { b: Vector2<f64> },
    Euclidean { theta: f64, b: Vector2<f64> },
    Similarity { theta: f64, s: f64, b: Vector2<f64> },
    Affine { a: Matrix2<f64>, b: Vector2<f64> },
}

impl ModelState {
    fn from_params(p: &TransformParams, model: MotionModel) -> Result<Self> {
        p.validate(1e-8)?;
        Ok(match model {
            MotionModel::Translation => ModelState::Translation { b: p.b },
            MotionModel::Euclidean => ModelState::Euclidean {
                theta: p.theta(),
                b: p.b,
            },
            MotionModel::Similarity => {
                let ata = p.a.transpose() * p.a;
                let s = (0.5 * (ata[(0, 0)] + ata[(1, 1)])).sqrt();
                ModelState::Similarity {
                    theta: p.theta(),
                    s,
                    b: p.b,
                }
            }
            MotionModel::Affine => ModelState::Affine { a: p.a, b: p.b },
        })
    }

    fn to_params(self, center: Vector2<f64>) -> TransformParams {
        match self {
            ModelState::Translation { b } => TransformParams {
                a: Matrix2::identity(),
                b,
                center,
                model: MotionModel::Translation,
            },
            ModelState::Euclidean { theta, b } => TransformParams {
                a: rotation(theta),
                b,
                center,
                model: MotionModel::Euclidean,
            },
            ModelState::Similarity { theta, s, b } => TransformParams {
                a: rotation(theta) * s,
                b,
                center,
                model: MotionModel::Similarity,
            },
            ModelState::Affine { a, b } => TransformParams {
                a,
                b,
                center,
                model: MotionModel::Affine,
            },
        }
    }

    /// Gradient step in the model's own coordinates (the per-parameter
    /// scaling standing in for exact basis orthonormalization).
    fn step(&mut self, grad_a: &Matrix2<f64>, grad_b: &Vector2<f64>, steps: &StepSizes) {
        match self {
            ModelState::Translation { b } => *b -= steps.t_b * grad_b,
            ModelState::Euclidean { theta, b } => {
                *theta -= steps.t_a * so2_grad(grad_a, *theta);
                *b -= steps.t_b * grad_b;
            }
            ModelState::Similarity { theta, s, b } => {
                let gt = *s * so2_grad(grad_a, *theta);
                let gs = grad_a.dot(&rotation(*theta));
                *theta -= steps.t_a * gt;
                *s = (*s - steps.t_a * gs).max(1e-6);
                *b -= steps.t_b * grad_b;
            }
            ModelState::Affine { a, b } => {
                *a -= steps.t_a * grad_a;
                *b -= steps.t_b * grad_b;
            }
        }
    }
}

/// Unrolled proximal-gradient solve of a field-parameterized objective.
pub fn prox_grad_solve(
    objective: &FieldObjective,
    cfg: &SolverConfig,
    init: &TransformParams,
    beta0: Option<Image>,
) -> Result<SolveResult> {
    prox_grad_solve_observed(objective, cfg, init, beta0, &mut |_: &IterState| true)
}

pub fn prox_grad_solve_observed(
    objective: &FieldObjective,
    cfg: &SolverConfig,
    init: &TransformParams,
    beta0: Option<Image>,
    observe: &mut dyn FnMut(&IterState) -> bool,
) -> Result<SolveResult> {
    let (m, n) = objective.work_shape();
    let origin = objective.origin();
    let center = objective.center();
    let init = init.recenter(center);
    let mut state = ModelState::from_params(&init, cfg.model)?;
    let mut diagnostics = SolverDiagnostics::default();
    let (iu, cu) = objective.ops_per_iter();

    let mut beta = if objective.has_background() {
        match beta0 {
            Some(b) => Some(b),
            None => {
                let p = state.to_params(center);
                let field = field_from_params(&p, m, n, origin)?;
                objective.init_beta(&field)?
            }
        }
    } else {
        None
    };

    let mut loss_trace = Vec::with_capacity(cfg.iters + 1);
    let mut params_trace = Vec::with_capacity(cfg.iters + 1);
    for k in 0..=cfg.iters {
        let params = state.to_params(center);
        let field = field_from_params(&params, m, n, origin)?;
        if k == cfg.iters {
            let loss = objective
                .eval(&field, beta.as_ref())
                .map_err(|e| Error::Solver {
                    iter: k,
                    source: Box::new(e),
                })?;
            loss_trace.push(loss);
            params_trace.push(params);
            break;
        }
        let out = objective
            .eval_grad(&field, beta.as_ref())
            .map_err(|e| Error::Solver {
                iter: k,
                source: Box::new(e),
            })?;
        diagnostics.interp_ops += iu;
        diagnostics.conv_ops += cu;
        loss_trace.push(out.value);
        params_trace.push(params);
        let keep_going = observe(&IterState {
            k,
            loss: out.value,
            params: &params,
            warped: &out.warped,
        });
        if !keep_going {
            break;
        }
        let warmup = k < cfg.beta_warmup && beta.is_some();
        if !warmup {
            let (ga, gb) = field_grad_to_params(&out.field_grad, origin, center);
            state.step(&ga, &gb, &cfg.steps);
        }
        if let (Some(beta_img), Some(bg)) = (beta.as_mut(), out.beta_grad.as_ref()) {
            beta_img.add_scaled(bg, -cfg.steps.t_beta);
        }
    }
    Ok(SolveResult {
        params: state.to_params(center),
        beta,
        loss_trace,
        params_trace,
        diagnostics,
    })
}

/// Gradient descent on the spike objective over Aff(2) (the iterate is the
/// (A, b) pair of the inverse parameterization; no projection is needed).
pub fn spike_solve(
    objective: &SpikeObjective,
    iters: usize,
    steps: &StepSizes,
    init: Option<(Matrix2<f64>, Vector2<f64>)>,
) -> Result<SpikeSolveResult> {
    let (mut a, mut b) = init.unwrap_or((Matrix2::identity(), Vector2::zeros()));
    let mut loss_trace = Vec::with_capacity(iters + 1);
    let mut iterates = Vec::with_capacity(iters + 1);
    for k in 0..=iters {
        iterates.push((a, b));
        if k == iters {
            let v = objective.eval(&a, &b).map_err(|e| attach_iter(e, k))?;
            loss_trace.push(v);
            break;
        }
        let out = objective.eval1(&a, &b).map_err(|e| attach_iter(e, k))?;
        loss_trace.push(out.value);
        a -= steps.t_a * out.grad_a;
        b -= steps.t_b * out.grad_b;
    }
    Ok(SpikeSolveResult {
        a,
        b,
        loss_trace,
        iterates,
    })
}

fn attach_iter(e: Error, iter: usize) -> Error {
    match e {
        Error::SpikeFilterDomain { eigenvalue, .. } => Error::SpikeFilterDomain { iter, eigenvalue },
        other => Error::Solver {
            iter,
            source: Box::new(other),
        },
    }
}

#[derive(Clone, Debug)]
pub struct SpikeSolveResult {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub loss_trace: Vec<f64>,
    pub iterates: Vec<(Matrix2<f64>, Vector2<f64>)>,
}

/// Which objective a registration spec builds at a given smoothing level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Basic,
    CostSmoothed,
    Background,
    /// Masked multichannel occurrence-map registration: the basic objective
    /// with complementary-smoothed filter variance and 1/(2c) scaling.
    SpikeMap,
}

/// Everything needed to rebuild a field objective at any smoothing level;
/// multiscale schedules reconstruct filters and re-dilate masks per scale.
#[derive(Clone)]
pub struct RegistrationSpec {
    pub variant: Variant,
    pub scene: Image,
    pub motif: Image,
    pub mask: SupportMask,
    /// Plane position of motif pixel (0, 0).
    pub motif_origin: Vector2<f64>,
    /// Input smoothing applied to the scene before registration.
    pub input_sigma2: f64,
    /// Background coarse-scale factor (background variant; C > 1).
    pub coarse_factor: f64,
    /// Complementary smoothing already present in spike-map inputs.
    pub sigma0_2: f64,
}

impl RegistrationSpec {
    pub fn new(variant: Variant, scene: Image, motif: Image, mask: SupportMask) -> Self {
        RegistrationSpec {
            variant,
            scene,
            motif,
            mask,
            motif_origin: Vector2::zeros(),
            input_sigma2: 0.0,
            coarse_factor: 4.0,
            sigma0_2: 0.0,
        }
    }

    pub fn with_origin(mut self, origin: Vector2<f64>) -> Self {
        self.motif_origin = origin;
        self
    }

    pub fn with_input_smoothing(mut self, sigma2: f64) -> Self {
        self.input_sigma2 = sigma2;
        self
    }

    pub fn with_sigma0(mut self, sigma0_2: f64) -> Self {
        self.sigma0_2 = sigma0_2;
        self
    }

    pub fn build(&self, sigma2: f64) -> Result<FieldObjective> {
        let scene = if self.input_sigma2 > 0.0 {
            smooth_normalized(&self.scene, self.input_sigma2)?
        } else {
            self.scene.clone()
        };
        Ok(match self.variant {
            Variant::Basic => FieldObjective::Map(MapObjective::new(
                scene,
                &self.motif,
                &self.mask,
                GaussianFilter::isotropic(sigma2)?,
                0.5,
                self.motif_origin,
            )?),
            Variant::SpikeMap => {
                let c = self.motif.channels() as f64;
                FieldObjective::Map(MapObjective::new(
                    scene,
                    &self.motif,
                    &self.mask,
                    GaussianFilter::isotropic(sigma2 - self.sigma0_2)?,
                    0.5 / c,
                    self.motif_origin,
                )?)
            }
            Variant::CostSmoothed => FieldObjective::CostSmoothed(CostSmoothedObjective::new(
                scene,
                &self.motif,
                &self.mask,
                GaussianFilter::isotropic(sigma2)?,
                self.motif_origin,
            )?),
            Variant::Background => FieldObjective::Background(BackgroundObjective::new(
                scene,
                &self.motif,
                &self.mask,
                sigma2,
                self.coarse_factor,
                self.motif_origin,
            )?),
        })
    }
}

/// One multiscale stage: smoothing level, iteration span, step sizes.
#[derive(Clone, Copy, Debug)]
pub struct Stage {
    pub sigma2: f64,
    pub iters: usize,
    pub steps: StepSizes,
}

/// The standard protocol schedule: start at `sigma_start`, halve sigma
/// every `span` iterations, step sizes proportional to sigma.
pub fn halving_schedule(
    sigma_start: f64,
    total_iters: usize,
    span: usize,
    steps_at: impl Fn(f64) -> StepSizes,
) -> Vec<Stage> {
    let mut stages = Vec::new();
    let mut sigma = sigma_start;
    let mut left = total_iters;
    while left > 0 {
        let iters = left.min(span);
        stages.push(Stage {
            sigma2: sigma * sigma,
            iters,
            steps: steps_at(sigma),
        });
        left -= iters;
        sigma *= 0.5;
    }
    stages
}

/// Chains fixed-depth solves across decreasing smoothing levels,
/// warm-starting each stage at the previous optimum. Traces concatenate;
/// the background model carries across stages (resized working grids keep
/// the plane anchoring).
pub fn multiscale_solve(
    spec: &RegistrationSpec,
    stages: &[Stage],
    cfg_model: MotionModel,
    beta_warmup: usize,
    init: &TransformParams,
) -> Result<SolveResult> {
    multiscale_solve_observed(spec, stages, cfg_model, beta_warmup, init, &mut |_| true)
}

pub fn multiscale_solve_observed(
    spec: &RegistrationSpec,
    stages: &[Stage],
    cfg_model: MotionModel,
    beta_warmup: usize,
    init: &TransformParams,
    observe: &mut dyn FnMut(&IterState) -> bool,
) -> Result<SolveResult> {
    assert!(!stages.is_empty());
    let mut params = *init;
    let mut result: Option<SolveResult> = None;
    let mut beta: Option<Image> = None;
    let mut prev_grid: Option<(usize, usize, Vector2<f64>)> = None;
    for stage in stages {
        let objective = spec.build(stage.sigma2)?;
        let cfg = SolverConfig {
            model: cfg_model,
            iters: stage.iters,
            steps: stage.steps,
            beta_warmup,
        };
        // Re-anchor the carried background model onto this stage's grid.
        let beta0 = if objective.has_background() {
            let (m, n) = objective.work_shape();
            let origin = objective.origin();
            match (&beta, prev_grid) {
                (Some(old), Some((_, _, old_origin))) => {
                    let di = (old_origin[0] - origin[0]).round() as isize;
                    let dj = (old_origin[1] - origin[1]).round() as isize;
                    let mut fresh = Image::zeros(m, n, old.channels());
                    fresh.paste(old, di, dj);
                    Some(fresh)
                }
                _ => None,
            }
        } else {
            None
        };
        let r = prox_grad_solve_observed(&objective, &cfg, &params, beta0, observe)?;
        params = r.params;
        beta = r.beta.clone();
        {
            let (m, n) = objective.work_shape();
            prev_grid = Some((m, n, objective.origin()));
        }
        result = Some(match result {
            None => r,
            Some(mut acc) => {
                acc.loss_trace.extend(r.loss_trace);
                acc.params_trace.extend(r.params_trace);
                acc.params = r.params;
                acc.beta = r.beta;
                acc.diagnostics.interp_ops += r.diagnostics.interp_ops;
                acc.diagnostics.conv_ops += r.diagnostics.conv_ops;
                acc.diagnostics.projection_flagged |= r.diagnostics.projection_flagged;
                acc
            }
        });
    }
    Ok(result.expect("at least one stage"))
}

/// Defaults of the verification phase: 256 iterations at `sigma^2 = 1e-2`
/// with input smoothing switched off.
pub const FINE_PHASE_ITERS: usize = 256;
pub const FINE_PHASE_SIGMA2: f64 = 1e-2;
pub const FINE_PHASE_INPUT_SIGMA2: f64 = 1e-12;

/// Coarse solve followed by a re-solve from its output at verification
/// settings; returns the fine result with the concatenated trace.
pub fn two_phase_refine(
    spec: &RegistrationSpec,
    coarse_sigma2: f64,
    coarse_cfg: &SolverConfig,
    fine_iters: usize,
    fine_steps: StepSizes,
    init: &TransformParams,
) -> Result<SolveResult> {
    let coarse_obj = spec.build(coarse_sigma2)?;
    let coarse = prox_grad_solve(&coarse_obj, coarse_cfg, init, None)?;
    let mut fine_spec = spec.clone();
    fine_spec.input_sigma2 = FINE_PHASE_INPUT_SIGMA2;
    fine_spec.sigma0_2 = 0.0;
    let fine_obj = fine_spec.build(FINE_PHASE_SIGMA2)?;
    let fine_cfg = SolverConfig {
        model: coarse_cfg.model,
        iters: fine_iters,
        steps: fine_steps,
        beta_warmup: 0,
    };
    let fine = prox_grad_solve(&fine_obj, &fine_cfg, &coarse.params, None)?;
    let mut out = fine;
    let mut trace = coarse.loss_trace;
    trace.extend(out.loss_trace);
    out.loss_trace = trace;
    let mut ptrace = coarse.params_trace;
    ptrace.extend(out.params_trace);
    out.params_trace = ptrace;
    out.diagnostics.interp_ops += coarse.diagnostics.interp_ops;
    out.diagnostics.conv_ops += coarse.diagnostics.conv_ops;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shifted_motif_spec(seed: u64, shift: Vector2<f64>) -> (RegistrationSpec, Vector2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let motif = Image::from_fn(16, 16, 1, |_, _, _| rng.gen_range(0.0..1.0));
        let mut scene = Image::zeros(48, 48, 1);
        let base = Vector2::new(16.0, 16.0);
        scene.paste(
            &motif,
            (base[0] + shift[0]) as isize,
            (base[1] + shift[1]) as isize,
        );
        let spec = RegistrationSpec::new(
            Variant::Basic,
            scene,
            motif,
            SupportMask::full(16, 16),
        )
        .with_origin(base);
        (spec, shift)
    }

    #[test]
    fn zero_iterations_returns_init() {
        let (spec, _) = shifted_motif_spec(1, Vector2::zeros());
        let obj = spec.build(4.0).unwrap();
        let init = TransformParams::identity(MotionModel::Translation, obj.center());
        let cfg = SolverConfig::new(MotionModel::Translation, 0, StepSizes::new(1e-3, 1e-2));
        let r = prox_grad_solve(&obj, &cfg, &init, None).unwrap();
        assert_eq!(r.loss_trace.len(), 1);
        assert_eq!(r.params.b, init.b);
    }

    #[test]
    fn recovers_integer_translation() {
        let (spec, shift) = shifted_motif_spec(2, Vector2::new(4.0, -3.0));
        let obj = spec.build(9.0).unwrap();
        let init = TransformParams::identity(MotionModel::Translation, obj.center());
        let steps = heuristic_steps(3.0, 16, 16);
        let cfg = SolverConfig::new(MotionModel::Translation, 450, steps);
        let r = prox_grad_solve(&obj, &cfg, &init, None).unwrap();
        assert!(
            (r.params.b - shift).norm() <= 0.1,
            "recovered {:?}",
            r.params.b
        );
        assert_eq!(r.loss_trace.len(), 451);
        assert_eq!(r.params_trace.len(), 451);
    }

    #[test]
    fn halved_steps_keep_final_loss_below_initial() {
        for seed in 0..10 {
            let (spec, _) = shifted_motif_spec(100 + seed, Vector2::new(2.0, 1.0));
            let obj = spec.build(4.0).unwrap();
            let init = TransformParams::identity(MotionModel::Euclidean, obj.center());
            let steps = heuristic_steps(2.0, 16, 16).scaled(0.5);
            let cfg = SolverConfig::new(MotionModel::Euclidean, 40, steps);
            let r = prox_grad_solve(&obj, &cfg, &init, None).unwrap();
            assert!(
                r.loss_trace.last().unwrap() <= r.loss_trace.first().unwrap(),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn iterates_satisfy_model_constraint() {
        let (spec, _) = shifted_motif_spec(3, Vector2::new(1.0, 2.0));
        let obj = spec.build(4.0).unwrap();
        let init = TransformParams::identity(MotionModel::Similarity, obj.center());
        let cfg = SolverConfig::new(MotionModel::Similarity, 30, heuristic_steps(2.0, 16, 16));
        let r = prox_grad_solve(&obj, &cfg, &init, None).unwrap();
        for p in &r.params_trace {
            let ata = p.a.transpose() * p.a;
            let s2 = 0.5 * (ata[(0, 0)] + ata[(1, 1)]);
            assert!((ata - Matrix2::identity() * s2).norm() <= 1e-10 * s2.max(1.0));
        }
    }

    #[test]
    fn single_stage_multiscale_equals_plain_solve() {
        let (spec, _) = shifted_motif_spec(4, Vector2::new(2.0, -1.0));
        let steps = heuristic_steps(2.0, 16, 16);
        let stage = Stage {
            sigma2: 4.0,
            iters: 25,
            steps,
        };
        let obj = spec.build(4.0).unwrap();
        let init = TransformParams::identity(MotionModel::Translation, obj.center());
        let a = prox_grad_solve(
            &obj,
            &SolverConfig::new(MotionModel::Translation, 25, steps),
            &init,
            None,
        )
        .unwrap();
        let b = multiscale_solve(&spec, &[stage], MotionModel::Translation, 0, &init).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.params.b, b.params.b);
    }

    #[test]
    fn halving_schedule_matches_protocol() {
        // sigma start 10, 250 iterations, halved every 50.
        let stages = halving_schedule(10.0, 250, 50, |s| StepSizes::new(0.0, 0.005 * s));
        assert_eq!(stages.len(), 5);
        assert_eq!(stages[0].sigma2, 100.0);
        assert_eq!(stages[1].sigma2, 25.0);
        assert!(stages.iter().all(|st| st.iters == 50));
        assert!((stages[0].steps.t_b - 0.05).abs() < 1e-15);
    }

    #[test]
    fn heuristic_steps_formula() {
        let s = heuristic_steps(3.0, 64, 64);
        assert!((s.t_a - 0.1 * 12.0 / 4096.0).abs() < 1e-15);
        assert!((s.t_b - 0.1 * 6.0 / 64.0).abs() < 1e-15);
        // Linear in sigma.
        let d = heuristic_steps(6.0, 64, 64);
        assert!((d.t_a - 2.0 * s.t_a).abs() < 1e-15);
        assert!((d.t_b - 2.0 * s.t_b).abs() < 1e-15);
        // Max rule: tall vs square with the same max dimension.
        let t = heuristic_steps(3.0, 64, 16);
        assert_eq!(t.t_a, s.t_a);
        assert_eq!(t.t_b, s.t_b);
    }

    #[test]
    fn two_phase_trace_bookkeeping() {
        let (spec, _) = shifted_motif_spec(5, Vector2::new(1.0, 1.0));
        let steps = heuristic_steps(2.0, 16, 16);
        let coarse_cfg = SolverConfig::new(MotionModel::Translation, 30, steps);
        let obj = spec.build(4.0).unwrap();
        let init = TransformParams::identity(MotionModel::Translation, obj.center());
        let fine_steps = heuristic_steps(FINE_PHASE_SIGMA2.sqrt(), 16, 16);
        let r = two_phase_refine(&spec, 4.0, &coarse_cfg, 64, fine_steps, &init).unwrap();
        assert_eq!(r.loss_trace.len(), 30 + 64 + 2);
    }

    #[test]
    fn warm_start_from_optimum_stays_low() {
        let (spec, shift) = shifted_motif_spec(6, Vector2::new(3.0, 0.0));
        let steps = heuristic_steps(3.0, 16, 16);
        let coarse_cfg = SolverConfig::new(MotionModel::Translation, 100, steps);
        let obj = spec.build(9.0).unwrap();
        let mut init = TransformParams::identity(MotionModel::Translation, obj.center());
        init.b = shift; // exact optimum
        let fine_steps = heuristic_steps(0.1, 16, 16);
        let r = two_phase_refine(&spec, 9.0, &coarse_cfg, 64, fine_steps, &init).unwrap();
        // Fine loss at an exact optimum stays at the floor.
        assert!(*r.loss_trace.last().unwrap() <= r.loss_trace[100] + 1e-12);
    }
}
