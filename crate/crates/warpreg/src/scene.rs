//! Deterministic synthetic data: transform samplers, low-frequency clutter,
//! textured templates with articulating parts, and multichannel spike
//! scenes. Everything is a pure function of (spec, seed).

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::img::{
    convolve, interpolate, GaussianFilter, Image, SupportMask,
};
use crate::spike_model::SpikeInstance;
use crate::transform::{field_from_params, rotation, MotionModel, TransformParams};

/// Sampling ranges for random transforms; the defaults follow the
/// complexity-experiment protocol (translation up to 5 px, rotation up to
/// pi/4, scale and affine singular values in [0.8, 1.25]).
#[derive(Clone, Debug)]
pub struct TransformSampler {
    pub mode: MotionModel,
    pub max_translation: f64,
    pub max_rotation: f64,
    pub scale_range: (f64, f64),
    rng: ChaCha8Rng,
}

impl TransformSampler {
    pub fn new(mode: MotionModel, seed: u64) -> Self {
        TransformSampler {
            mode,
            max_translation: 5.0,
            max_rotation: std::f64::consts::FRAC_PI_4,
            scale_range: (0.8, 1.25),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_ranges(mut self, max_translation: f64, max_rotation: f64, scale: (f64, f64)) -> Self {
        self.max_translation = max_translation;
        self.max_rotation = max_rotation;
        self.scale_range = scale;
        self
    }

    /// Draws a transform about center 0 (recenter as needed). Affine draws
    /// are built as `R(theta1) diag(s1, s2) R(theta2)`, so the singular
    /// values land in the scale range and the determinant stays positive.
    pub fn sample(&mut self) -> TransformParams {
        let t = self.max_translation;
        let b = Vector2::new(self.rng.gen_range(-t..=t), self.rng.gen_range(-t..=t));
        let r = self.max_rotation;
        let (lo, hi) = self.scale_range;
        let a = match self.mode {
            MotionModel::Translation => Matrix2::identity(),
            MotionModel::Euclidean => rotation(self.rng.gen_range(-r..=r)),
            MotionModel::Similarity => {
                rotation(self.rng.gen_range(-r..=r)) * self.rng.gen_range(lo..=hi)
            }
            MotionModel::Affine => {
                let theta1 = self.rng.gen_range(-r..=r);
                let theta2 = self.rng.gen_range(-r..=r);
                let s1 = self.rng.gen_range(lo..=hi);
                let s2 = self.rng.gen_range(lo..=hi);
                rotation(theta1) * Matrix2::new(s1, 0.0, 0.0, s2) * rotation(theta2)
            }
        };
        TransformParams {
            a,
            b,
            center: Vector2::zeros(),
            model: self.mode,
        }
    }
}

/// Smooth colored clutter: white noise filtered at `sigma^2 = 16`, each
/// channel normalized to [0, 1]. Replaces photographic backgrounds with a
/// seedable low-frequency field.
pub fn clutter(m: usize, n: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Image::from_fn(m, n, 3, |_, _, _| rng.gen_range(-1.0..1.0));
    let filter = GaussianFilter::isotropic(16.0).expect("fixed PD covariance");
    let sm = convolve(&noise, &filter);
    let mut out = sm.clone();
    for k in 0..3 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..m {
            for j in 0..n {
                let v = sm.get(i, j, k);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let span = (hi - lo).max(1e-12);
        for i in 0..m {
            for j in 0..n {
                out.set(i, j, k, (sm.get(i, j, k) - lo) / span);
            }
        }
    }
    out
}

pub struct EmbedResult {
    pub image: Image,
    /// Part of the warped template support fell outside the background.
    pub clipped: bool,
}

/// Composites `template` (black background outside `support`) over `bg`:
/// the template is placed with pixel (0, 0) at `pos`, transformed by
/// `params` (centered in scene coordinates), and alpha-blended on the
/// warped support.
pub fn embed(
    bg: &Image,
    template: &Image,
    support: &SupportMask,
    params: &TransformParams,
    pos: Vector2<f64>,
) -> Result<EmbedResult> {
    if template.channels() != bg.channels() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", bg.channels()),
            got: format!("{}", template.channels()),
        });
    }
    let inv = params.inverse()?;
    let (m, n) = (bg.rows(), bg.cols());
    let field = field_from_params(&inv, m, n, Vector2::zeros())?.translate(-pos);
    let warped_t = interpolate(template, &field);
    let warped_a = interpolate(&support.to_image(), &field);
    let mut out = bg.clone();
    let mut border_alpha = 0.0;
    for i in 0..m {
        for j in 0..n {
            let alpha = warped_a.get(i, j, 0).clamp(0.0, 1.0);
            if alpha > 0.0 {
                for k in 0..bg.channels() {
                    let v = bg.get(i, j, k) * (1.0 - alpha) + warped_t.get(i, j, k);
                    out.set(i, j, k, v);
                }
                if i == 0 || j == 0 || i == m - 1 || j == n - 1 {
                    border_alpha += alpha;
                }
            }
        }
    }
    // Clipping check: corners of the support bounding box under the forward
    // map must land inside the background.
    let mut clipped = border_alpha > 0.5;
    if let Some((i0, j0, bm, bn)) = support.bbox() {
        for (ci, cj) in [
            (i0, j0),
            (i0, j0 + bn - 1),
            (i0 + bm - 1, j0),
            (i0 + bm - 1, j0 + bn - 1),
        ] {
            let p = params.apply(Vector2::new(ci as f64, cj as f64) + pos);
            if p[0] < 0.0 || p[1] < 0.0 || p[0] > (m - 1) as f64 || p[1] > (n - 1) as f64 {
                clipped = true;
            }
        }
    }
    Ok(EmbedResult { image: out, clipped })
}

/// One articulating part: its canonical motif crop, support mask, and
/// anchor (top-left corner) in the template frame.
#[derive(Clone)]
pub struct Part {
    pub motif: Image,
    pub mask: SupportMask,
    pub anchor: (usize, usize),
}

impl Part {
    /// Plane position of the part center in the template frame.
    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(
            self.anchor.0 as f64 + (self.motif.rows() as f64 - 1.0) / 2.0,
            self.anchor.1 as f64 + (self.motif.cols() as f64 - 1.0) / 2.0,
        )
    }
}

#[derive(Clone)]
pub struct Template {
    /// Canonized template on a black background.
    pub image: Image,
    /// Static body: template minus the part pixels.
    pub body: Image,
    pub support: SupportMask,
    pub parts: Vec<Part>,
    /// Per-part articulation limit (radians).
    pub articulation_limit: f64,
}

/// Procedural template spec: an elliptical textured body with K distinct
/// high-contrast part motifs at fixed anchors.
#[derive(Clone, Debug)]
pub struct TemplateSpec {
    pub rows: usize,
    pub cols: usize,
    /// (anchor_i, anchor_j, side) per part; supports must not overlap.
    pub parts: Vec<(usize, usize, usize)>,
    pub seed: u64,
    pub articulation_limit: f64,
}

impl TemplateSpec {
    pub fn standard(rows: usize, cols: usize, part_side: usize, seed: u64) -> Self {
        // Three parts: upper-left, upper-right, lower-middle.
        let s = part_side;
        let qi = rows / 5;
        let qj = cols / 6;
        TemplateSpec {
            rows,
            cols,
            parts: vec![
                (qi, qj, s),
                (qi, cols - qj - s, s),
                (rows - qi - s, (cols - s) / 2, s),
            ],
            seed,
            articulation_limit: std::f64::consts::PI / 16.0,
        }
    }
}

/// Distinct oriented pattern for part `k`: a grating plus an eccentric
/// blob, phase-shifted per channel so rotations are unambiguous.
fn part_pattern(side: usize, k: usize, rng: &mut ChaCha8Rng) -> (Image, SupportMask) {
    let r = (side as f64 - 1.0) / 2.0;
    let base = 0.4 + 1.05 * k as f64 + rng.gen_range(-0.1..0.1);
    let mask = SupportMask::from_fn(side, side, |i, j| {
        let di = i as f64 - r;
        let dj = j as f64 - r;
        di * di + dj * dj <= r * r
    });
    // An asymmetric constellation of colored blobs: aperiodic (no rotation
    // aliases), low-frequency (stable under resampling), and distinct per
    // part through the base angle and color weights.
    let blob_angles = [base, base + 2.1, base + 3.9];
    let blob_radius = [0.52 * r, 0.45 * r, 0.30 * r];
    let colors: [[f64; 3]; 3] = [
        [1.0, 0.15, 0.1],
        [0.1, 1.0, 0.2],
        [0.2, 0.15, 1.0],
    ];
    let s2 = (0.34 * r) * (0.34 * r);
    let img = Image::from_fn(side, side, 3, |i, j, ch| {
        if !mask.contains(i, j) {
            return 0.0;
        }
        let p = Vector2::new(i as f64, j as f64);
        let dc = (p - Vector2::new(r, r)).norm() / r;
        let mut v: f64 = 0.55 - 0.35 * dc * dc;
        for t in 0..3 {
            let c = Vector2::new(
                r + blob_radius[t] * blob_angles[t].cos(),
                r + blob_radius[t] * blob_angles[t].sin(),
            );
            let w = (-(p - c).norm_squared() / (2.0 * s2)).exp();
            v += (0.75 * colors[t][ch] - 0.3) * w;
        }
        v.clamp(0.02, 1.0)
    });
    (img, mask)
}

pub fn build_template(spec: &TemplateSpec) -> Result<Template> {
    let (m, n) = (spec.rows, spec.cols);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Elliptical body support with smooth texture.
    let (ci, cj) = ((m as f64 - 1.0) / 2.0, (n as f64 - 1.0) / 2.0);
    let support = SupportMask::from_fn(m, n, |i, j| {
        let di = (i as f64 - ci) / (0.48 * m as f64);
        let dj = (j as f64 - cj) / (0.48 * n as f64);
        di * di + dj * dj <= 1.0
    });
    let noise = Image::from_fn(m, n, 3, |_, _, _| rng.gen_range(-1.0..1.0));
    let filter = GaussianFilter::isotropic(8.0).expect("fixed PD covariance");
    let sm = convolve(&noise, &filter);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in sm.data() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = (hi - lo).max(1e-12);
    let mut body = Image::from_fn(m, n, 3, |i, j, k| {
        if support.contains(i, j) {
            0.2 + 0.6 * (sm.get(i, j, k) - lo) / span
        } else {
            0.0
        }
    });

    // Carve out the parts and validate placement.
    let mut parts = Vec::new();
    let mut occupied = SupportMask::empty(m, n);
    for (idx, &(ai, aj, side)) in spec.parts.iter().enumerate() {
        if ai + side > m || aj + side > n {
            return Err(Error::Config(format!("part {idx} exceeds the template")));
        }
        let (motif, mask) = part_pattern(side, idx, &mut rng);
        for i in 0..side {
            for j in 0..side {
                if mask.contains(i, j) {
                    if occupied.contains(ai + i, aj + j) {
                        return Err(Error::Config(format!("part {idx} overlaps another part")));
                    }
                    occupied.set(ai + i, aj + j, true);
                    for k in 0..3 {
                        body.set(ai + i, aj + j, k, 0.0);
                    }
                }
            }
        }
        parts.push(Part {
            motif,
            mask,
            anchor: (ai, aj),
        });
    }
    // template = body-with-holes + sum_k part_k shifted to its anchor.
    let mut image = body.clone();
    for p in &parts {
        for i in 0..p.motif.rows() {
            for j in 0..p.motif.cols() {
                if p.mask.contains(i, j) {
                    for k in 0..3 {
                        image.set(
                            p.anchor.0 + i,
                            p.anchor.1 + j,
                            k,
                            p.motif.get(i, j, k),
                        );
                    }
                }
            }
        }
    }
    // Parts are inside the body support by construction of the template;
    // extend the support to include them in case they poke out.
    let mut support = support;
    for p in &parts {
        for i in 0..p.motif.rows() {
            for j in 0..p.motif.cols() {
                if p.mask.contains(i, j) {
                    support.set(p.anchor.0 + i, p.anchor.1 + j, true);
                }
            }
        }
    }
    Ok(Template {
        image,
        body,
        support,
        parts,
        articulation_limit: spec.articulation_limit,
    })
}

/// Observation model in the template frame:
/// `sum_k (x_k * e_{anchor_k}) o tau_k + body`, with each part rotating
/// about its own center, composed afterwards with a global transform by
/// the caller (or `embed`).
pub fn articulated_observation(
    template: &Template,
    part_rotations: &[f64],
) -> Result<Image> {
    if part_rotations.len() != template.parts.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} part rotations", template.parts.len()),
            got: format!("{}", part_rotations.len()),
        });
    }
    for (k, rot) in part_rotations.iter().enumerate() {
        if rot.abs() > template.articulation_limit + 1e-12 {
            return Err(Error::Config(format!(
                "part {k} rotation {rot} exceeds articulation limit {}",
                template.articulation_limit
            )));
        }
    }
    let (m, n) = (template.image.rows(), template.image.cols());
    let mut out = template.body.clone();
    for (part, &rot) in template.parts.iter().zip(part_rotations.iter()) {
        // Embed the part at its anchor, then rotate about the part center.
        let mut embedded = Image::zeros(m, n, 3);
        embedded.paste(
            &part.mask.project(&part.motif),
            part.anchor.0 as isize,
            part.anchor.1 as isize,
        );
        if rot == 0.0 {
            out.add_scaled(&embedded, 1.0);
        } else {
            let p = TransformParams::euclidean(rot, Vector2::zeros(), part.center());
            let field = field_from_params(&p.inverse()?, m, n, Vector2::zeros())?;
            let warped = interpolate(&embedded, &field);
            out.add_scaled(&warped, 1.0);
        }
    }
    Ok(out)
}

/// A spike scene / motif pair with its continuum instance: channel `i`
/// carries a sigma0-smoothed unit-mass bump.
pub struct SpikeScene {
    pub scene: Image,
    pub motif: Image,
    pub truth: TransformParams,
    pub instance: SpikeInstance,
}

/// Adds `amplitude x` the sigma^2-gaussian density centered at a real-valued
/// location to channel `k`.
pub fn add_bump(img: &mut Image, k: usize, center: Vector2<f64>, sigma2: f64, amplitude: f64) {
    let norm = amplitude / (2.0 * std::f64::consts::PI * sigma2);
    let reach = (8.0 * sigma2.sqrt()).ceil();
    let i0 = ((center[0] - reach).floor().max(0.0)) as usize;
    let i1 = ((center[0] + reach).ceil().min(img.rows() as f64 - 1.0)) as usize;
    let j0 = ((center[1] - reach).floor().max(0.0)) as usize;
    let j1 = ((center[1] + reach).ceil().min(img.cols() as f64 - 1.0)) as usize;
    for i in i0..=i1 {
        for j in j0..=j1 {
            let d = Vector2::new(i as f64, j as f64) - center;
            let v = img.get(i, j, k) + norm * (-0.5 * d.norm_squared() / sigma2).exp();
            img.set(i, j, k, v);
        }
    }
}

/// Draws a spike scene per the verification protocol: `c` spikes uniform in
/// the frame with a 10 px margin, rendered as sigma0 gaussian densities,
/// and a random affine truth (mild enough to keep targets in frame).
pub fn spike_scene(
    c: usize,
    m: usize,
    n: usize,
    sigma0: f64,
    seed: u64,
    sampler_ranges: Option<(f64, f64, (f64, f64))>,
) -> Result<SpikeScene> {
    let (max_t, max_r, scale) = sampler_ranges.unwrap_or((2.0, std::f64::consts::PI / 16.0, (0.93, 1.08)));
    let mut attempt = 0u64;
    loop {
        let mut sampler = TransformSampler::new(MotionModel::Affine, seed ^ (attempt.wrapping_mul(0x9e3779b97f4a7c15)))
            .with_ranges(max_t, max_r, scale);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(1_000_003)));
        let margin = 10.0;
        let raw: Vec<Vector2<f64>> = (0..c)
            .map(|_| {
                Vector2::new(
                    rng.gen_range(margin..(m as f64 - margin)),
                    rng.gen_range(margin..(n as f64 - margin)),
                )
            })
            .collect();
        let centroid: Vector2<f64> = raw.iter().sum::<Vector2<f64>>() / c as f64;
        let centered: Vec<Vector2<f64>> = raw.iter().map(|u| u - centroid).collect();
        let draw = sampler.sample();
        let (a_star, b_star) = (draw.a, draw.b);
        let targets_abs: Vec<Vector2<f64>> = centered
            .iter()
            .map(|u| a_star * u + b_star + centroid)
            .collect();
        let in_frame = targets_abs.iter().all(|v| {
            v[0] >= 4.0 && v[1] >= 4.0 && v[0] <= m as f64 - 5.0 && v[1] <= n as f64 - 5.0
        });
        let inst = SpikeInstance::new(centered, a_star, b_star, 1.0);
        match (in_frame, inst) {
            (true, Ok(instance)) => {
                let s02 = sigma0 * sigma0;
                let mut scene = Image::zeros(m, n, c);
                let mut motif = Image::zeros(m, n, c);
                for k in 0..c {
                    add_bump(&mut scene, k, raw[k], s02, 1.0);
                    add_bump(&mut motif, k, targets_abs[k], s02, 1.0);
                }
                let truth = TransformParams {
                    a: a_star,
                    b: b_star,
                    center: centroid,
                    model: MotionModel::Affine,
                };
                return Ok(SpikeScene {
                    scene,
                    motif,
                    truth,
                    instance,
                });
            }
            _ => {
                attempt += 1;
                if attempt > 200 {
                    return Err(Error::Config(
                        "could not draw an in-frame spike scene".into(),
                    ));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::img::zncc_masked;

    #[test]
    fn sampler_translation_mode_keeps_identity_linear_part() {
        let mut s = TransformSampler::new(MotionModel::Translation, 1);
        for _ in 0..50 {
            let p = s.sample();
            assert_eq!(p.a, Matrix2::identity());
            assert!(p.b.amax() <= 5.0);
        }
    }

    #[test]
    fn sampler_similarity_mode_is_scaled_rotation() {
        let mut s = TransformSampler::new(MotionModel::Similarity, 2);
        for _ in 0..100 {
            let p = s.sample();
            let ata = p.a.transpose() * p.a;
            let s2 = 0.5 * (ata[(0, 0)] + ata[(1, 1)]);
            assert!((ata - Matrix2::identity() * s2).norm() <= 1e-12 * s2);
            let sc = s2.sqrt();
            assert!((0.8..=1.25).contains(&sc));
        }
    }

    #[test]
    fn sampler_affine_singular_values_in_range() {
        let mut s = TransformSampler::new(MotionModel::Affine, 3);
        for _ in 0..2000 {
            let p = s.sample();
            let svd = p.a.svd(false, false);
            for v in svd.singular_values.iter() {
                assert!((0.8 - 1e-9..=1.25 + 1e-9).contains(v), "sv {v}");
            }
            assert!(p.a.determinant() > 0.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = clutter(24, 30, 7);
        let b = clutter(24, 30, 7);
        assert_eq!(a, b);
        for v in a.data() {
            assert!((0.0..=1.0).contains(v));
        }
        let t1 = build_template(&TemplateSpec::standard(48, 48, 12, 9)).unwrap();
        let t2 = build_template(&TemplateSpec::standard(48, 48, 12, 9)).unwrap();
        assert_eq!(t1.image, t2.image);
    }

    #[test]
    fn clutter_energy_is_low_frequency() {
        let img = clutter(64, 64, 11);
        // Spectral split at quarter-Nyquist (0.125 cycles/px), DC removed.
        let mean: f64 = img.data().iter().sum::<f64>() / img.data().len() as f64;
        let fft = crate::img::Fft2::new(64, 64);
        let mut grid = fft.alloc();
        for i in 0..64 {
            for j in 0..64 {
                grid[i * 64 + j].re = img.get(i, j, 0) - mean;
            }
        }
        fft.forward(&mut grid);
        let mut low = 0.0;
        let mut total = 0.0;
        for i in 0..64 {
            for j in 0..64 {
                let fi = if i <= 32 { i as f64 } else { i as f64 - 64.0 } / 64.0;
                let fj = if j <= 32 { j as f64 } else { j as f64 - 64.0 } / 64.0;
                let e = grid[i * 64 + j].norm_sqr();
                total += e;
                if (fi * fi + fj * fj).sqrt() <= 0.125 {
                    low += e;
                }
            }
        }
        assert!(low / total >= 0.9, "low fraction {}", low / total);
    }

    #[test]
    fn template_decomposition_is_exact() {
        let t = build_template(&TemplateSpec::standard(64, 72, 14, 5)).unwrap();
        // body + parts = image, parts non-overlapping and inside.
        let rebuilt = articulated_observation(&t, &[0.0, 0.0, 0.0]).unwrap();
        for (a, b) in rebuilt.data().iter().zip(t.image.data().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn articulation_bounds_enforced() {
        let t = build_template(&TemplateSpec::standard(48, 48, 12, 6)).unwrap();
        let r = articulated_observation(&t, &[0.0, 1.0, 0.0]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn nested_and_flat_observation_forms_agree() {
        // Interpolation is linear in the image, so warping a sum equals the
        // sum of warps: the grouped ("hierarchical") form below must match
        // the flat per-part form exactly.
        let t = build_template(&TemplateSpec::standard(56, 56, 12, 8)).unwrap();
        let (m, n) = (56, 56);
        let embed_part = |k: usize| {
            let mut e = Image::zeros(m, n, 3);
            e.paste(
                &t.parts[k].mask.project(&t.parts[k].motif),
                t.parts[k].anchor.0 as isize,
                t.parts[k].anchor.1 as isize,
            );
            e
        };
        let group_rot = TransformParams::euclidean(
            0.11,
            Vector2::zeros(),
            Vector2::new(27.5, 27.5),
        );
        let field = field_from_params(&group_rot.inverse().unwrap(), m, n, Vector2::zeros()).unwrap();
        // flat: warp each part separately then sum.
        let mut flat = interpolate(&embed_part(1), &field);
        flat.add_scaled(&interpolate(&embed_part(2), &field), 1.0);
        // nested: sum first, then warp.
        let mut sum = embed_part(1);
        sum.add_scaled(&embed_part(2), 1.0);
        let nested = interpolate(&sum, &field);
        for (a, b) in flat.data().iter().zip(nested.data().iter()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn embed_round_trip_recovers_template() {
        let t = build_template(&TemplateSpec::standard(48, 48, 12, 10)).unwrap();
        let bg = clutter(128, 128, 3);
        let pos = Vector2::new(40.0, 40.0);
        let center = pos + Vector2::new(23.5, 23.5);
        let params = TransformParams::euclidean(0.25, Vector2::new(2.0, -1.0), center);
        let emb = embed(&bg, &t.image, &t.support, &params, pos).unwrap();
        assert!(!emb.clipped);
        // Re-canonize: sample the scene at the forward-warped template grid.
        let mut shifted = crate::transform::DeformationField::zeros(48, 48);
        for i in 0..48 {
            for j in 0..48 {
                let p = params.apply(Vector2::new(i as f64, j as f64) + pos);
                shifted.set(i, j, p);
            }
        }
        let recan = interpolate(&emb.image, &shifted);
        // Compare on the eroded support (edge blending is excluded).
        let interior = crate::img::dilate(&t.support.complement(), 2.0).complement();
        let z = zncc_masked(&recan, &t.image, &interior).unwrap();
        assert!(z >= 0.99, "zncc {z}");
    }

    #[test]
    fn embed_identity_pastes_at_position() {
        let t = build_template(&TemplateSpec::standard(32, 32, 8, 11)).unwrap();
        let bg = Image::zeros(96, 96, 3);
        let pos = Vector2::new(30.0, 25.0);
        let center = pos + Vector2::new(15.5, 15.5);
        let params = TransformParams::identity(MotionModel::Euclidean, center);
        let emb = embed(&bg, &t.image, &t.support, &params, pos).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                if t.support.contains(i, j) {
                    for k in 0..3 {
                        let got = emb.image.get(i + 30, j + 25, k);
                        let want = t.image.get(i, j, k);
                        assert!((got - want).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn spike_scene_argmax_near_truth_locations() {
        for seed in 0..20 {
            let s = spike_scene(5, 61, 81, 3.0, seed, None).unwrap();
            assert_eq!(s.scene.channels(), 5);
            // Each channel has one bump whose argmax rounds to the location.
            for k in 0..5 {
                let (ai, aj) = s.scene.argmax(k);
                let loc = s.instance.locations()[k] + s.truth.center;
                assert!(
                    (ai as f64 - loc[0]).abs() <= 1.0 && (aj as f64 - loc[1]).abs() <= 1.0,
                    "seed {seed} channel {k}"
                );
            }
        }
    }

    #[test]
    fn spike_scene_identity_truth_equals_motif() {
        let s = spike_scene(5, 61, 81, 3.0, 42, Some((0.0, 0.0, (1.0, 1.0)))).unwrap();
        for (a, b) in s.scene.data().iter().zip(s.motif.data().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
