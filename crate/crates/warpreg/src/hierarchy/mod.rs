//! Hierarchical invariant motif detection: strided registration of visual
//! and occurrence-map motifs over a rooted tree, occurrence-map
//! construction, template detection, and the extraction / calibration
//! preprocessing that derives non-leaf motifs and per-node loss thresholds.

pub mod file;

use std::collections::BTreeMap;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::img::{dilate, Image, SupportMask};
use crate::scene::add_bump;
use crate::solver::{
    heuristic_steps, prox_grad_solve, RegistrationSpec, SolverConfig, StepSizes, Variant,
    two_phase_refine, FINE_PHASE_SIGMA2,
};
use crate::spike_model::singular_values;
use crate::transform::{MotionModel, TransformParams};

/// Per-node registration and detection hyperparameters. Defaults follow the
/// protocol values; everything is overridable per node.
#[derive(Clone, Debug)]
pub struct NodeConfig {
    /// Coarse unrolled depth.
    pub t_iters: usize,
    /// Verification-phase depth (leaves only).
    pub fine_iters: usize,
    pub stride: (usize, usize),
    /// Smoothing: cost smoothing level for leaves; total smoothing for
    /// occurrence-map nodes.
    pub sigma2: f64,
    /// Occurrence-map rendering variance (shared across the graph).
    pub sigma0_2: f64,
    /// Input smoothing for leaf registration.
    pub sigma_in2: f64,
    /// Occurrence-map suppression scale.
    pub alpha: f64,
    /// Calibrated loss threshold.
    pub gamma: Option<f64>,
    /// Explicit step sizes (defaults: the textured-motif heuristic for
    /// leaves, the spike step-size oracle x 0.2 for occurrence nodes).
    pub steps: Option<StepSizes>,
    /// Skip anchors whose masked scene energy is below 10% of the motif's.
    pub prescreen: bool,
}

impl NodeConfig {
    pub fn default_leaf() -> Self {
        NodeConfig {
            t_iters: 1024,
            fine_iters: 256,
            stride: (20, 20),
            sigma2: 9.0,
            sigma0_2: 9.0,
            sigma_in2: 9.0 / 4.0,
            alpha: 1.0,
            gamma: None,
            steps: None,
            prescreen: false,
        }
    }

    pub fn default_spike() -> Self {
        NodeConfig {
            t_iters: 1024,
            fine_iters: 0,
            stride: (20, 20),
            // 16 x sigma0^2 keeps the filter tractable; the step sizes come
            // from the theorem oracle at whatever level is set here.
            sigma2: 144.0,
            sigma0_2: 9.0,
            sigma_in2: 0.0,
            alpha: 2.5e5,
            gamma: None,
            steps: None,
            prescreen: false,
        }
    }
}

#[derive(Clone)]
pub struct HierarchyNode {
    pub id: u32,
    pub parent: Option<u32>,
    /// Canonical motif: RGB crop for leaves; extracted occurrence-map crop
    /// for non-leaves (filled by extraction).
    pub motif: Option<Image>,
    pub mask: Option<SupportMask>,
    /// Plane position of motif pixel (0,0) in the canonical template frame.
    pub anchor: (isize, isize),
    pub cfg: NodeConfig,
}

#[derive(Clone)]
pub struct HierarchyGraph {
    nodes: BTreeMap<u32, HierarchyNode>,
    root: u32,
}

impl HierarchyGraph {
    pub fn new(nodes: Vec<HierarchyNode>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut root = None;
        for n in nodes {
            if n.parent.is_none() {
                if root.is_some() {
                    return Err(Error::Hierarchy("multiple roots".into()));
                }
                root = Some(n.id);
            }
            if map.insert(n.id, n).is_some() {
                return Err(Error::Hierarchy("duplicate node id".into()));
            }
        }
        let root = root.ok_or_else(|| Error::Hierarchy("no root node".into()))?;
        let g = HierarchyGraph { nodes: map, root };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for n in self.nodes.values() {
            if let Some(p) = n.parent {
                if !self.nodes.contains_key(&p) {
                    return Err(Error::Hierarchy(format!(
                        "node {} references missing parent {}",
                        n.id, p
                    )));
                }
            }
        }
        // Tree check: every node reaches the root without cycles.
        for n in self.nodes.values() {
            let mut cur = n.id;
            let mut hops = 0;
            while let Some(p) = self.nodes[&cur].parent {
                cur = p;
                hops += 1;
                if hops > self.nodes.len() {
                    return Err(Error::Hierarchy(format!("cycle through node {}", n.id)));
                }
            }
            if cur != self.root {
                return Err(Error::Hierarchy(format!(
                    "node {} is disconnected from the root",
                    n.id
                )));
            }
        }
        for n in self.nodes.values() {
            if self.children(n.id).is_empty() && (n.motif.is_none() || n.mask.is_none()) {
                return Err(Error::Hierarchy(format!(
                    "leaf node {} is missing its motif or mask",
                    n.id
                )));
            }
        }
        Ok(())
    }

    pub fn root(&self) -> u32 {
        self.root
    }

    pub fn node(&self, id: u32) -> &HierarchyNode {
        &self.nodes[&id]
    }

    pub fn node_mut(&mut self, id: u32) -> &mut HierarchyNode {
        self.nodes.get_mut(&id).expect("node exists")
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes.keys().copied()
    }

    /// Children in increasing id order (the channel enumeration).
    pub fn children(&self, id: u32) -> Vec<u32> {
        self.nodes
            .values()
            .filter(|n| n.parent == Some(id))
            .map(|n| n.id)
            .collect()
    }

    pub fn is_leaf(&self, id: u32) -> bool {
        self.children(id).is_empty()
    }

    pub fn depth(&self, id: u32) -> usize {
        let mut d = 0;
        let mut cur = id;
        while let Some(p) = self.nodes[&cur].parent {
            cur = p;
            d += 1;
        }
        d
    }

    /// Node ids grouped by depth, deepest first; each node appears exactly
    /// once.
    pub fn depths_descending(&self) -> Vec<Vec<u32>> {
        let mut by_depth: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for id in self.nodes.keys() {
            by_depth.entry(self.depth(*id)).or_default().push(*id);
        }
        by_depth.into_values().rev().collect()
    }

    /// Canonical plane position of a node's center in the template frame.
    pub fn canonical_center(&self, id: u32) -> Result<Vector2<f64>> {
        let n = &self.nodes[&id];
        let motif = n
            .motif
            .as_ref()
            .ok_or_else(|| Error::Hierarchy(format!("node {id} has no motif")))?;
        Ok(Vector2::new(
            n.anchor.0 as f64 + (motif.rows() as f64 - 1.0) / 2.0,
            n.anchor.1 as f64 + (motif.cols() as f64 - 1.0) / 2.0,
        ))
    }
}

/// Anchor lattice `{(i dh, j dw)}` intersected with the scene grid.
pub fn stride_grid(m: usize, n: usize, dh: usize, dw: usize) -> Vec<(usize, usize)> {
    assert!(dh >= 1 && dw >= 1);
    let mut out = Vec::new();
    let mut i = 0;
    while i < m {
        let mut j = 0;
        while j < n {
            out.push((i, j));
            j += dw;
        }
        i += dh;
    }
    out
}

/// Result of one anchored registration.
#[derive(Clone, Debug)]
pub struct AnchorResult {
    pub anchor: (usize, usize),
    pub params: TransformParams,
    pub loss: f64,
    /// Anchor was skipped by pre-screening.
    pub skipped: bool,
}

/// Step sizes from the spike step-size oracle on the node's canonical
/// child coordinates, times the discrete-step safety factor 0.2.
pub fn spike_oracle_steps(graph: &HierarchyGraph, id: u32, sigma2: f64) -> Result<StepSizes> {
    let children = graph.children(id);
    let c = children.len().max(1) as f64;
    let centers: Vec<Vector2<f64>> = children
        .iter()
        .map(|&ch| graph.canonical_center(ch))
        .collect::<Result<_>>()?;
    let centroid: Vector2<f64> = centers.iter().sum::<Vector2<f64>>() / c;
    let centered: Vec<Vector2<f64>> = centers.iter().map(|p| p - centroid).collect();
    let (s_max, _) = singular_values(&centered);
    let s4 = sigma2 * sigma2;
    let safety = 0.2;
    let t_b = 8.0 * std::f64::consts::PI * s4 * safety;
    let t_a = 8.0 * std::f64::consts::PI * c * s4 / s_max.powi(2).max(1.0) * safety;
    Ok(StepSizes {
        t_a,
        t_b,
        t_beta: 1.0,
    })
}

fn masked_energy(scene: &Image, mask: &SupportMask, anchor: (usize, usize)) -> f64 {
    let mut e = 0.0;
    for i in 0..mask.rows() {
        for j in 0..mask.cols() {
            if mask.contains(i, j) {
                for k in 0..scene.channels() {
                    let v = scene.sample(anchor.0 as isize + i as isize, anchor.1 as isize + j as isize, k);
                    e += v * v;
                }
            }
        }
    }
    e
}

/// Strided two-phase cost-smoothed SE(2) registration of a visual (leaf)
/// motif. The scene must be the raw RGB scene; input smoothing is applied
/// here per the node's configuration.
pub fn register_visual_at_strides(
    scene: &Image,
    node: &HierarchyNode,
    anchors: &[(usize, usize)],
) -> Result<Vec<AnchorResult>> {
    let motif = node.motif.as_ref().expect("leaf motif present");
    let mask = node.mask.as_ref().expect("leaf mask present");
    let cfg = &node.cfg;
    let sigma = cfg.sigma2.sqrt();
    let steps = cfg
        .steps
        .unwrap_or_else(|| heuristic_steps(sigma, motif.rows(), motif.cols()));
    let fine_steps = heuristic_steps(FINE_PHASE_SIGMA2.sqrt(), motif.rows(), motif.cols());
    let motif_energy = mask.project(motif).sq_norm();
    let mut out = Vec::with_capacity(anchors.len());
    for &(ai, aj) in anchors {
        if cfg.prescreen {
            let e = masked_energy(scene, mask, (ai, aj));
            if e < 0.1 * motif_energy {
                out.push(AnchorResult {
                    anchor: (ai, aj),
                    params: TransformParams::identity(
                        MotionModel::Euclidean,
                        Vector2::new(ai as f64, aj as f64),
                    ),
                    loss: f64::INFINITY,
                    skipped: true,
                });
                continue;
            }
        }
        // The spec carries the raw scene; the coarse phase smooths it by
        // sigma_in^2 while the verification phase re-solves on the raw
        // scene (input smoothing 1e-12).
        let spec = RegistrationSpec::new(
            Variant::CostSmoothed,
            scene.clone(),
            motif.clone(),
            mask.clone(),
        )
        .with_origin(Vector2::new(ai as f64, aj as f64))
        .with_input_smoothing(cfg.sigma_in2);
        let coarse_cfg = SolverConfig::new(MotionModel::Euclidean, cfg.t_iters, steps);
        let init = TransformParams::identity(MotionModel::Euclidean, Vector2::zeros());
        let r = two_phase_refine(
            &spec,
            cfg.sigma2,
            &coarse_cfg,
            cfg.fine_iters,
            fine_steps,
            &init,
        )
        .map_err(|e| Error::Anchor {
            node: node.id,
            i: ai,
            j: aj,
            source: Box::new(e),
        })?;
        out.push(AnchorResult {
            anchor: (ai, aj),
            params: r.params,
            loss: *r.loss_trace.last().expect("nonempty trace"),
            skipped: false,
        });
    }
    Ok(out)
}

/// Strided SE(2) registration of an occurrence-map motif against the
/// aggregated child maps (no multiscale refinement; the inputs are already
/// sigma0-smoothed, so the filter carries `sigma^2 - sigma0^2`).
pub fn register_spike_at_strides(
    occ_scene: &Image,
    graph: &HierarchyGraph,
    id: u32,
    anchors: &[(usize, usize)],
) -> Result<Vec<AnchorResult>> {
    let node = graph.node(id);
    let motif = node
        .motif
        .as_ref()
        .ok_or_else(|| Error::Hierarchy(format!("node {id} has no extracted motif")))?;
    let mask = node
        .mask
        .as_ref()
        .ok_or_else(|| Error::Hierarchy(format!("node {id} has no mask")))?;
    let cfg = &node.cfg;
    let steps = match cfg.steps {
        Some(s) => s,
        None => spike_oracle_steps(graph, id, cfg.sigma2)?,
    };
    let motif_energy = mask.project(motif).sq_norm();
    let mut out = Vec::with_capacity(anchors.len());
    for &(ai, aj) in anchors {
        if cfg.prescreen {
            let e = masked_energy(occ_scene, mask, (ai, aj));
            if e < 0.1 * motif_energy {
                out.push(AnchorResult {
                    anchor: (ai, aj),
                    params: TransformParams::identity(
                        MotionModel::Euclidean,
                        Vector2::new(ai as f64, aj as f64),
                    ),
                    loss: f64::INFINITY,
                    skipped: true,
                });
                continue;
            }
        }
        let spec = RegistrationSpec::new(
            Variant::SpikeMap,
            occ_scene.clone(),
            motif.clone(),
            mask.clone(),
        )
        .with_origin(Vector2::new(ai as f64, aj as f64))
        .with_sigma0(cfg.sigma0_2);
        let obj = spec.build(cfg.sigma2)?;
        let init = TransformParams::identity(MotionModel::Euclidean, Vector2::zeros());
        let scfg = SolverConfig::new(MotionModel::Euclidean, cfg.t_iters, steps);
        let r = prox_grad_solve(&obj, &scfg, &init, None).map_err(|e| Error::Anchor {
            node: node.id,
            i: ai,
            j: aj,
            source: Box::new(e),
        })?;
        out.push(AnchorResult {
            anchor: (ai, aj),
            params: r.params,
            loss: *r.loss_trace.last().expect("nonempty trace"),
            skipped: false,
        });
    }
    Ok(out)
}

/// Converts anchored registration results into an occurrence map: a
/// sigma0-gaussian bump per anchor at the recovered motif center, scaled by
/// `exp(-alpha max(0, loss - gamma))`. Translations beyond the motif
/// diagonal are clamped before bump placement.
pub fn occurrence_map(
    results: &[AnchorResult],
    node: &HierarchyNode,
    m: usize,
    n: usize,
) -> Image {
    let motif = node.motif.as_ref().expect("motif present");
    let cfg = &node.cfg;
    let gamma = cfg.gamma.unwrap_or(f64::INFINITY);
    let center_off = Vector2::new(
        (motif.rows() as f64 - 1.0) / 2.0,
        (motif.cols() as f64 - 1.0) / 2.0,
    );
    let diag = ((motif.rows() * motif.rows() + motif.cols() * motif.cols()) as f64).sqrt();
    let mut map = Image::zeros(m, n, 1);
    for r in results {
        if r.skipped || !r.loss.is_finite() {
            continue;
        }
        let weight = (-cfg.alpha * (r.loss - gamma).max(0.0)).exp();
        if weight < 1e-14 {
            continue;
        }
        let mut b = r.params.b;
        if b.norm() > diag {
            b *= diag / b.norm();
        }
        let center = Vector2::new(r.anchor.0 as f64, r.anchor.1 as f64) + center_off + b;
        add_bump(&mut map, 0, center, cfg.sigma0_2, weight);
    }
    map
}

/// Stacks child occurrence maps into a `c_v`-channel feature image,
/// channels in increasing child id order.
pub fn aggregate_children(maps: &[(u32, &Image)], m: usize, n: usize) -> Result<Image> {
    let mut ordered: Vec<(u32, &Image)> = maps.to_vec();
    ordered.sort_by_key(|(id, _)| *id);
    let c = ordered.len();
    if c == 0 {
        return Err(Error::Hierarchy("aggregation needs at least one child".into()));
    }
    for (_, img) in &ordered {
        if (img.rows(), img.cols(), img.channels()) != (m, n, 1) {
            return Err(Error::ShapeMismatch {
                expected: format!("{m}x{n}x1"),
                got: format!("{:?}", img.shape()),
            });
        }
    }
    Ok(Image::from_fn(m, n, c, |i, j, k| ordered[k].1.get(i, j, 0)))
}

/// Per-node outputs of a detection pass.
pub struct NodeDetection {
    pub anchors: Vec<AnchorResult>,
    pub occurrence: Image,
}

pub struct DetectionResult {
    pub omega0: Image,
    pub per_node: BTreeMap<u32, NodeDetection>,
}

impl DetectionResult {
    /// Best (lowest-loss) anchor of a node.
    pub fn best_anchor(&self, id: u32) -> Option<&AnchorResult> {
        self.per_node[&id]
            .anchors
            .iter()
            .filter(|a| !a.skipped)
            .min_by(|a, b| a.loss.total_cmp(&b.loss))
    }
}

/// Full detection pass: depth-descending traversal, leaves via strided
/// visual registration, non-leaves via child aggregation and strided
/// occurrence-map registration.
pub fn detect(scene: &Image, graph: &HierarchyGraph) -> Result<DetectionResult> {
    let (m, n) = (scene.rows(), scene.cols());
    let mut per_node: BTreeMap<u32, NodeDetection> = BTreeMap::new();
    for level in graph.depths_descending() {
        for id in level {
            let node = graph.node(id);
            let anchors = stride_grid(m, n, node.cfg.stride.0, node.cfg.stride.1);
            let results = if graph.is_leaf(id) {
                register_visual_at_strides(scene, node, &anchors)?
            } else {
                let children = graph.children(id);
                let maps: Vec<(u32, &Image)> = children
                    .iter()
                    .map(|ch| (*ch, &per_node[ch].occurrence))
                    .collect();
                let y_v = aggregate_children(&maps, m, n)?;
                register_spike_at_strides(&y_v, graph, id, &anchors)?
            };
            let occurrence = occurrence_map(&results, node, m, n);
            per_node.insert(
                id,
                NodeDetection {
                    anchors: results,
                    occurrence,
                },
            );
        }
    }
    let omega0 = per_node[&graph.root()].occurrence.clone();
    Ok(DetectionResult { omega0, per_node })
}

/// Splits a loss population at its largest log-gap; used to auto-threshold
/// clean-template extraction runs before calibration exists.
pub fn auto_threshold(losses: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = losses
        .iter()
        .copied()
        .filter(|l| l.is_finite() && *l > 0.0)
        .collect();
    if v.len() < 2 {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mut best = (0.0, None);
    for w in v.windows(2) {
        let gap = (w[1] / w[0]).ln();
        if gap > best.0 {
            best = (gap, Some((w[0] * w[1]).sqrt()));
        }
    }
    best.1
}

pub struct ExtractedMotif {
    pub motif: Image,
    /// Crop origin in the template frame.
    pub origin: (isize, isize),
}

/// Extraction: runs detection on the canonical template (black background)
/// and crops each non-leaf's aggregated child map to the bounding box of
/// its support, thresholded at 1/20 of the map peak and dilated by
/// `2 sigma_v`. Nodes without a calibrated gamma get a provisional
/// largest-log-gap threshold (the template is clean, so the loss
/// populations split sharply).
pub fn extract(template: &Image, graph: &HierarchyGraph) -> Result<BTreeMap<u32, ExtractedMotif>> {
    let mut work = graph.clone();
    let (m, n) = (template.rows(), template.cols());
    let mut extracted = BTreeMap::new();
    let mut per_node: BTreeMap<u32, Image> = BTreeMap::new();
    for level in work.depths_descending() {
        for id in level {
            let node = work.node(id).clone();
            let anchors = stride_grid(m, n, node.cfg.stride.0, node.cfg.stride.1);
            if work.is_leaf(id) {
                let results = register_visual_at_strides(template, &node, &anchors)?;
                ensure_threshold(&mut work, id, &results)?;
                let occ = occurrence_map(&results, work.node(id), m, n);
                per_node.insert(id, occ);
            } else {
                let children = work.children(id);
                let maps: Vec<(u32, &Image)> = children
                    .iter()
                    .map(|ch| (*ch, &per_node[ch]))
                    .collect();
                let y_v = aggregate_children(&maps, m, n)?;
                // Crop the aggregated map to its thresholded support.
                let peak = y_v.max_value();
                let thr = peak / 20.0;
                let support = SupportMask::from_nonzero(&y_v, thr);
                let (i0, j0, bm, bn) = support
                    .bbox()
                    .ok_or(Error::EmptySupport { node: id })?;
                let sigma_v = work.node(id).cfg.sigma2.sqrt();
                let d = (2.0 * sigma_v).ceil() as isize;
                let oi = i0 as isize - d;
                let oj = j0 as isize - d;
                let cm = bm + 2 * d as usize;
                let cn = bn + 2 * d as usize;
                let motif = y_v.crop(oi, oj, cm, cn);
                extracted.insert(
                    id,
                    ExtractedMotif {
                        motif: motif.clone(),
                        origin: (oi, oj),
                    },
                );
                {
                    let nd = work.node_mut(id);
                    nd.motif = Some(motif);
                    nd.mask = Some(SupportMask::full(cm, cn));
                    nd.anchor = (oi, oj);
                }
                if id != work.root() {
                    let results =
                        register_spike_at_strides(&y_v, &work, id, &anchors)?;
                    ensure_threshold(&mut work, id, &results)?;
                    let occ = occurrence_map(&results, work.node(id), m, n);
                    per_node.insert(id, occ);
                }
            }
        }
    }
    Ok(extracted)
}

fn ensure_threshold(graph: &mut HierarchyGraph, id: u32, results: &[AnchorResult]) -> Result<()> {
    if graph.node(id).cfg.gamma.is_some() {
        return Ok(());
    }
    let losses: Vec<f64> = results.iter().filter(|r| !r.skipped).map(|r| r.loss).collect();
    let thr = auto_threshold(&losses)
        .ok_or_else(|| Error::Hierarchy(format!("node {id}: cannot auto-threshold during extraction")))?;
    graph.node_mut(id).cfg.gamma = Some(thr);
    Ok(())
}


/// Calibration scene generator: clutter plus the template embedded at a
/// known pose.
pub struct CalibrationProtocol {
    /// Scene size.
    pub rows: usize,
    pub cols: usize,
    /// Global rotations to sweep.
    pub angles: Vec<f64>,
    /// Clutter seeds per angle.
    pub seeds: Vec<u64>,
    /// Success radius: recovered center within `stride/2 + 2` px by default
    /// (set explicitly here).
    pub success_radius: f64,
}

pub struct CalibrationOutcome {
    pub gammas: BTreeMap<u32, f64>,
    /// (node, max success loss, min failure loss) per node.
    pub separations: BTreeMap<u32, (f64, f64)>,
}

/// Calibrates per-node thresholds by sweeping embedded rotated templates
/// over clutter, labeling each anchor a success or failure by the distance
/// of its recovered location to the ground truth, and taking the midpoint
/// between the worst success and best failure losses.
pub fn calibrate(
    template: &Image,
    template_support: &SupportMask,
    graph: &HierarchyGraph,
    proto: &CalibrationProtocol,
) -> Result<CalibrationOutcome> {
    let mut work = graph.clone();
    // Non-leaf motifs must exist; extract with provisional thresholds if not.
    let missing: Vec<u32> = work
        .ids()
        .filter(|id| !work.is_leaf(*id) && work.node(*id).motif.is_none())
        .collect();
    if !missing.is_empty() {
        let ex = extract(template, &work)?;
        for (id, e) in ex {
            let (cm, cn) = (e.motif.rows(), e.motif.cols());
            let nd = work.node_mut(id);
            nd.motif = Some(e.motif);
            nd.mask = Some(SupportMask::full(cm, cn));
            nd.anchor = e.origin;
        }
    }
    // Reset thresholds: calibration replaces provisional values.
    for id in work.ids().collect::<Vec<_>>() {
        work.node_mut(id).cfg.gamma = None;
    }

    let (tm, tn) = (template.rows(), template.cols());
    let pos = Vector2::new(
        (proto.rows as f64 - tm as f64) / 2.0,
        (proto.cols as f64 - tn as f64) / 2.0,
    );
    let template_center = pos + Vector2::new((tm as f64 - 1.0) / 2.0, (tn as f64 - 1.0) / 2.0);

    // Scenes with ground-truth transforms.
    let mut scenes = Vec::new();
    for (ai, &angle) in proto.angles.iter().enumerate() {
        for &seed in &proto.seeds {
            let bg = crate::scene::clutter(proto.rows, proto.cols, seed ^ (ai as u64) << 32);
            let pose = TransformParams::euclidean(angle, Vector2::zeros(), template_center);
            let emb = crate::scene::embed(&bg, template, template_support, &pose, pos)?;
            scenes.push((emb.image, pose));
        }
    }

    let mut gammas = BTreeMap::new();
    let mut separations = BTreeMap::new();
    // Per-scene cached occurrence maps for the current calibrated state.
    let mut per_scene_maps: Vec<BTreeMap<u32, Image>> =
        scenes.iter().map(|_| BTreeMap::new()).collect();
    for level in work.depths_descending() {
        for id in level {
            let node = work.node(id).clone();
            let anchors = stride_grid(proto.rows, proto.cols, node.cfg.stride.0, node.cfg.stride.1);
            let canon = work.canonical_center(id)?;
            let center_off = {
                let motif = work.node(id).motif.as_ref().expect("motif present");
                Vector2::new(
                    (motif.rows() as f64 - 1.0) / 2.0,
                    (motif.cols() as f64 - 1.0) / 2.0,
                )
            };
            let mut successes: Vec<f64> = Vec::new();
            let mut failures: Vec<f64> = Vec::new();
            let mut per_scene_results = Vec::new();
            for (scene_idx, (scene, pose)) in scenes.iter().enumerate() {
                let results = if work.is_leaf(id) {
                    register_visual_at_strides(scene, &node, &anchors)?
                } else {
                    let children = work.children(id);
                    let maps: Vec<(u32, &Image)> = children
                        .iter()
                        .map(|ch| (*ch, &per_scene_maps[scene_idx][ch]))
                        .collect();
                    let y_v = aggregate_children(&maps, proto.rows, proto.cols)?;
                    register_spike_at_strides(&y_v, &work, id, &anchors)?
                };
                let truth = pose.apply(canon + pos);
                for r in &results {
                    if r.skipped {
                        continue;
                    }
                    let recovered =
                        Vector2::new(r.anchor.0 as f64, r.anchor.1 as f64) + center_off + r.params.b;
                    if (recovered - truth).norm() <= proto.success_radius {
                        successes.push(r.loss);
                    } else {
                        failures.push(r.loss);
                    }
                }
                per_scene_results.push(results);
            }
            let max_s = successes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min_f = failures.iter().cloned().fold(f64::INFINITY, f64::min);
            if successes.is_empty() {
                return Err(Error::Hierarchy(format!(
                    "node {id}: no successful registrations during calibration"
                )));
            }
            if max_s >= min_f {
                return Err(Error::NoSeparatingThreshold {
                    node: id,
                    max_success: max_s,
                    min_failure: min_f,
                });
            }
            let gamma = if min_f.is_finite() {
                0.5 * (max_s + min_f)
            } else {
                // Degenerate sweep: every anchor succeeded; sit just above.
                max_s * 1.05 + 1e-12
            };
            work.node_mut(id).cfg.gamma = Some(gamma);
            gammas.insert(id, gamma);
            separations.insert(id, (max_s, min_f));
            // Build this node's occurrence maps for the parent level.
            for (scene_idx, results) in per_scene_results.iter().enumerate() {
                let occ = occurrence_map(results, work.node(id), proto.rows, proto.cols);
                per_scene_maps[scene_idx].insert(id, occ);
            }
        }
    }
    Ok(CalibrationOutcome {
        gammas,
        separations,
    })
}

/// Dilated-bounding-box mask used for extracted occurrence motifs.
pub fn dilated_box_mask(mask: &SupportMask, radius: f64) -> SupportMask {
    dilate(mask, radius)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(id: u32, parent: Option<u32>) -> HierarchyNode {
        HierarchyNode {
            id,
            parent,
            motif: Some(Image::zeros(4, 4, 3)),
            mask: Some(SupportMask::full(4, 4)),
            anchor: (0, 0),
            cfg: NodeConfig::default_leaf(),
        }
    }

    #[test]
    fn stride_grid_counts() {
        assert_eq!(stride_grid(100, 100, 20, 20).len(), 25);
        assert_eq!(stride_grid(8, 8, 1, 1).len(), 64);
        // 512 x 384 at stride 20: ceil counts 26 x 20.
        assert_eq!(stride_grid(512, 384, 20, 20).len(), 26 * 20);
    }

    #[test]
    fn graph_validation() {
        // Valid 3-leaf tree.
        let mut root = leaf(0, None);
        root.motif = None;
        root.mask = None;
        let g = HierarchyGraph::new(vec![root.clone(), leaf(1, Some(0)), leaf(2, Some(0)), leaf(3, Some(0))]);
        assert!(g.is_ok());
        let g = g.unwrap();
        assert_eq!(g.children(0), vec![1, 2, 3]);
        assert_eq!(g.depths_descending(), vec![vec![1, 2, 3], vec![0]]);
        // Two roots.
        assert!(HierarchyGraph::new(vec![leaf(0, None), leaf(1, None)]).is_err());
        // Cycle (no root at all).
        let mut a = leaf(0, Some(1));
        let mut b = leaf(1, Some(0));
        a.parent = Some(1);
        b.parent = Some(0);
        assert!(HierarchyGraph::new(vec![a, b]).is_err());
        // Missing parent.
        assert!(HierarchyGraph::new(vec![leaf(0, None), leaf(1, Some(7))]).is_err());
    }

    #[test]
    fn occurrence_map_amplitude_algebra() {
        let mut node = leaf(1, Some(0));
        node.motif = Some(Image::zeros(5, 5, 3)); // odd size: bump centers on-grid
        node.mask = Some(SupportMask::full(5, 5));
        node.cfg.gamma = Some(2.0);
        node.cfg.alpha = 3.0;
        node.cfg.sigma0_2 = 4.0;
        let peak = 1.0 / (2.0 * std::f64::consts::PI * 4.0);
        let mk = |loss: f64, anchor: (usize, usize)| AnchorResult {
            anchor,
            params: TransformParams::identity(MotionModel::Euclidean, Vector2::zeros()),
            loss,
            skipped: false,
        };
        // Below-threshold losses give full amplitude at the bump center
        // (anchor + motif center offset).
        let map = occurrence_map(&[mk(1.0, (20, 20))], &node, 48, 48);
        let exact = map.get(22, 22, 0);
        assert!((exact - peak).abs() <= 1e-12, "{exact} vs {peak}");
        assert_eq!(map.max_value(), exact);
        // A loss of gamma + ln(2)/alpha halves the bump.
        let halved = occurrence_map(
            &[mk(2.0 + (2.0f64).ln() / 3.0, (20, 20))],
            &node,
            48,
            48,
        );
        let ratio = halved.max_value() / map.max_value();
        assert!((ratio - 0.5).abs() <= 1e-12, "ratio {ratio}");
        // Two anchors converging to the same location add amplitudes.
        let mut r1 = mk(1.0, (20, 20));
        let mut r2 = mk(1.0, (24, 24));
        r1.params.b = Vector2::new(2.0, 2.0);
        r2.params.b = Vector2::new(-2.0, -2.0);
        let summed = occurrence_map(&[r1, r2], &node, 48, 48);
        assert!((summed.max_value() - 2.0 * map.max_value()).abs() <= 1e-6 * peak);
        // Entries are nonnegative and peaks bounded by the center value.
        for v in map.data() {
            assert!(*v >= 0.0 && *v <= peak * (1.0 + 1e-12));
        }
    }

    #[test]
    fn aggregation_is_order_invariant_and_bookkept() {
        let m1 = Image::from_fn(6, 6, 1, |i, j, _| (i + j) as f64);
        let m2 = Image::from_fn(6, 6, 1, |i, _, _| i as f64);
        let a = aggregate_children(&[(2, &m1), (1, &m2)], 6, 6).unwrap();
        let b = aggregate_children(&[(1, &m2), (2, &m1)], 6, 6).unwrap();
        assert_eq!(a, b);
        // Channel order follows increasing id: channel 0 is node 1's map.
        assert_eq!(a.get(3, 0, 0), 3.0);
        assert_eq!(a.get(3, 0, 1), 3.0 + 0.0);
        // Channel sums equal the individual map sums.
        let sum0: f64 = (0..6).flat_map(|i| (0..6).map(move |j| (i, j))).map(|(i, j)| a.get(i, j, 0)).sum();
        let want: f64 = m2.data().iter().sum();
        assert_eq!(sum0, want);
        // Single child: a single-channel copy.
        let single = aggregate_children(&[(5, &m1)], 6, 6).unwrap();
        assert_eq!(single.channels(), 1);
        assert_eq!(single.get(2, 3, 0), m1.get(2, 3, 0));
    }

    #[test]
    fn auto_threshold_splits_bimodal_losses() {
        let losses = [1e-6, 2e-6, 1.5e-6, 0.5, 0.8, 1.2];
        let t = auto_threshold(&losses).unwrap();
        assert!(t > 2e-6 && t < 0.5, "{t}");
    }
}
