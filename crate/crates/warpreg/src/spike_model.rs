//! Exact continuum model for multichannel spike registration.
//!
//! A c-channel spike scene with locations `u_i` is registered against a
//! target with locations `v_i = A* u_i + b*`. After inverse
//! parameterization, the smoothed L2 objective collapses to a closed form
//! in `psi(s) = (1 - exp(-s / (2 sigma^2))) / (4 pi sigma^2)`, which this
//! module evaluates exactly, together with the smoothing/step-size oracle
//! and an iterate-by-iterate verifier for the linear-convergence bound.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Closed form `psi(s) = (1 - exp(-s / (2 sigma^2))) / (4 pi sigma^2)`:
/// half the squared L2 distance between two unit-mass isotropic gaussians
/// whose means are `sqrt(2 s)` apart.
pub fn psi(s: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    (1.0 - (-s / (2.0 * s2)).exp()) / (4.0 * std::f64::consts::PI * s2)
}

/// Derivative `psi'(s) = exp(-s / (2 sigma^2)) / (8 pi sigma^4)`.
pub fn psi_dot(s: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    (-s / (2.0 * s2)).exp() / (8.0 * std::f64::consts::PI * s2 * s2)
}

/// A continuum spike instance: centered observed locations `U`, ground
/// truth `(A*, b*)`, derived targets `v_i = A* u_i + b*`, and the smoothing
/// level used by the gradient iteration.
#[derive(Clone, Debug)]
pub struct SpikeInstance {
    u: Vec<Vector2<f64>>,
    v: Vec<Vector2<f64>>,
    a_star: Matrix2<f64>,
    b_star: Vector2<f64>,
    sigma: f64,
}

impl SpikeInstance {
    /// Builds an instance, enforcing `sum u_i = 0` and `rank(U) = 2`.
    pub fn new(
        u: Vec<Vector2<f64>>,
        a_star: Matrix2<f64>,
        b_star: Vector2<f64>,
        sigma: f64,
    ) -> Result<Self> {
        assert!(sigma > 0.0);
        let c = u.len() as f64;
        let mean: Vector2<f64> = u.iter().sum::<Vector2<f64>>() / c;
        if mean.norm() > 1e-9 {
            return Err(Error::NotCentered { norm: mean.norm() });
        }
        let (s_max, s_min) = singular_values(&u);
        if s_min <= 1e-9 * s_max.max(1.0) {
            return Err(Error::RankDeficient { s_max, s_min });
        }
        let v = u.iter().map(|ui| a_star * ui + b_star).collect();
        Ok(SpikeInstance {
            u,
            v,
            a_star,
            b_star,
            sigma,
        })
    }

    pub fn channels(&self) -> usize {
        self.u.len()
    }

    pub fn locations(&self) -> &[Vector2<f64>] {
        &self.u
    }

    pub fn targets(&self) -> &[Vector2<f64>] {
        &self.v
    }

    pub fn truth(&self) -> (Matrix2<f64>, Vector2<f64>) {
        (self.a_star, self.b_star)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        assert!(sigma > 0.0);
        self.sigma = sigma;
        self
    }
}

/// Singular values (max, min) of the 2 x c matrix `U = [u_1 ... u_c]`,
/// via the eigenvalues of the 2x2 Gram matrix `U U^T`.
pub fn singular_values(u: &[Vector2<f64>]) -> (f64, f64) {
    let mut g = Matrix2::zeros();
    for ui in u {
        g += ui * ui.transpose();
    }
    let tr = g[(0, 0)] + g[(1, 1)];
    let det = g.determinant();
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    let e_max = 0.5 * (tr + disc);
    let e_min = 0.5 * (tr - disc);
    (e_max.max(0.0).sqrt(), e_min.max(0.0).sqrt())
}

/// Continuum objective `(1/c) sum_i psi(|A u_i + b - v_i|^2 / 2)`.
pub fn continuum_objective(a: &Matrix2<f64>, b: &Vector2<f64>, inst: &SpikeInstance) -> f64 {
    let c = inst.channels() as f64;
    inst.u
        .iter()
        .zip(inst.v.iter())
        .map(|(ui, vi)| {
            let d = a * ui + b - vi;
            psi(0.5 * d.norm_squared(), inst.sigma)
        })
        .sum::<f64>()
        / c
}

/// Continuum gradients:
/// `grad_A = (1/c) sum psi'(|d_i|^2/2) d_i u_i^T`,
/// `grad_b = (1/c) sum psi'(|d_i|^2/2) d_i`.
pub fn continuum_grads(
    a: &Matrix2<f64>,
    b: &Vector2<f64>,
    inst: &SpikeInstance,
) -> (Matrix2<f64>, Vector2<f64>) {
    let c = inst.channels() as f64;
    let mut ga = Matrix2::zeros();
    let mut gb = Vector2::zeros();
    for (ui, vi) in inst.u.iter().zip(inst.v.iter()) {
        let d = a * ui + b - vi;
        let w = psi_dot(0.5 * d.norm_squared(), inst.sigma);
        ga += w * d * ui.transpose();
        gb += w * d;
    }
    (ga / c, gb / c)
}

/// Hyperparameters prescribed by the linear-convergence theorem.
#[derive(Clone, Copy, Debug)]
pub struct TheoremParams {
    /// Minimum admissible smoothing `sigma_min^2`.
    pub sigma_min2: f64,
    /// Step size on A: `8 pi c sigma^4 / s_max(U)^2`.
    pub t_a: f64,
    /// Step size on b: `8 pi sigma^4`.
    pub t_b: f64,
    /// Condition number `kappa = s_max(U)^2 / s_min(U)^2`.
    pub kappa: f64,
}

/// Evaluates the theorem's smoothing bound and step sizes for an instance
/// (step sizes use the instance's own sigma).
pub fn theorem_hyperparams(inst: &SpikeInstance) -> TheoremParams {
    let c = inst.channels() as f64;
    let (s_max, s_min) = singular_values(&inst.u);
    let max_u2 = inst
        .u
        .iter()
        .map(|u| u.norm_squared())
        .fold(0.0f64, f64::max);
    let a_err = (inst.a_star - Matrix2::identity()).norm_squared();
    let sigma_min2 =
        2.0 * (max_u2 / (s_min * s_min)) * (s_max * s_max * a_err + c * inst.b_star.norm_squared());
    let s4 = inst.sigma.powi(4);
    TheoremParams {
        sigma_min2,
        t_a: 8.0 * std::f64::consts::PI * c * s4 / (s_max * s_max),
        t_b: 8.0 * std::f64::consts::PI * s4,
        kappa: (s_max * s_max) / (s_min * s_min),
    }
}

/// One iterate of the verified gradient descent trace.
#[derive(Clone, Copy, Debug)]
pub struct GdIterate {
    pub k: usize,
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    /// `(8 pi sigma^4 / t_A) |A_k - A*|_F^2 + |b_k - b*|^2`
    pub lhs: f64,
    /// `(1 - 1/(2 kappa))^{2k}` times the k = 0 left-hand side
    pub rhs: f64,
    pub objective: f64,
}

/// Plain gradient descent with the theorem's step sizes from
/// `A_0 = I, b_0 = 0`, recording the contraction bound at every iterate.
pub fn run_theorem_gd(inst: &SpikeInstance, iters: usize) -> Result<Vec<GdIterate>> {
    let hp = theorem_hyperparams(inst);
    if inst.sigma * inst.sigma < hp.sigma_min2 {
        return Err(Error::Config(format!(
            "sigma^2 = {} below the theorem bound {}",
            inst.sigma * inst.sigma,
            hp.sigma_min2
        )));
    }
    let weight = 8.0 * std::f64::consts::PI * inst.sigma.powi(4) / hp.t_a; // = s_max^2 / c
    let contraction = 1.0 - 1.0 / (2.0 * hp.kappa);
    let mut a = Matrix2::identity();
    let mut b = Vector2::zeros();
    let lhs0 = weight * (a - inst.a_star).norm_squared() + (b - inst.b_star).norm_squared();
    let mut trace = Vec::with_capacity(iters + 1);
    for k in 0..=iters {
        let lhs = weight * (a - inst.a_star).norm_squared() + (b - inst.b_star).norm_squared();
        let rhs = contraction.powi(2 * k as i32) * lhs0;
        trace.push(GdIterate {
            k,
            a,
            b,
            lhs,
            rhs,
            objective: continuum_objective(&a, &b, inst),
        });
        if k == iters {
            break;
        }
        let (ga, gb) = continuum_grads(&a, &b, inst);
        a -= hp.t_a * ga;
        b -= hp.t_b * gb;
    }
    Ok(trace)
}

/// Draws a random instance inside the theorem's regime: standard-normal
/// locations centered exactly, `|A* - I|_F <= max_a_pert`,
/// `|b*| <= max_b`, and `sigma^2 = 2 sigma_min^2` (or 1 when the truth is
/// the identity).
pub fn random_instance(c: usize, seed: u64, max_a_pert: f64, max_b: f64) -> Result<SpikeInstance> {
    assert!(c >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = loop {
        let mut u: Vec<Vector2<f64>> = (0..c)
            .map(|_| Vector2::new(gaussian_sample(&mut rng), gaussian_sample(&mut rng)))
            .collect();
        let mean: Vector2<f64> = u.iter().sum::<Vector2<f64>>() / c as f64;
        for ui in &mut u {
            *ui -= mean;
        }
        let (s_max, s_min) = singular_values(&u);
        if s_min > 1e-6 * s_max {
            break u;
        }
    };
    let dir = Matrix2::new(
        gaussian_sample(&mut rng),
        gaussian_sample(&mut rng),
        gaussian_sample(&mut rng),
        gaussian_sample(&mut rng),
    );
    let a_star = if dir.norm() > 0.0 {
        Matrix2::identity() + dir * (rng.gen_range(0.0..max_a_pert) / dir.norm())
    } else {
        Matrix2::identity()
    };
    let bdir = Vector2::new(gaussian_sample(&mut rng), gaussian_sample(&mut rng));
    let b_star = if bdir.norm() > 0.0 {
        bdir * (rng.gen_range(0.0..max_b) / bdir.norm())
    } else {
        Vector2::zeros()
    };
    let inst = SpikeInstance::new(u, a_star, b_star, 1.0)?;
    let hp = theorem_hyperparams(&inst);
    let sigma = if hp.sigma_min2 > 0.0 {
        (2.0 * hp.sigma_min2).sqrt()
    } else {
        1.0
    };
    Ok(inst.with_sigma(sigma))
}

fn gaussian_sample(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
