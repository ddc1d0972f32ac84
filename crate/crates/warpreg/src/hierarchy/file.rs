//! Plain-text hierarchy description files.
//!
//! One node per line, `#` comments. Tokens are space-separated key/value
//! groups after the id:
//!
//! ```text
//! node 1 parent 0 anchor 12 9 motif parts/claw.raw mask parts/claw_mask.raw sigma2 9 stride 20 20
//! node 0 parent - anchor 0 0 alpha 2.5e5 sigma2 144
//! ```
//!
//! Defaults are the leaf/occurrence-node protocol values; motif and mask
//! paths resolve relative to the file. Masks load from raw/png as the
//! samples-above-one-half set; a leaf without a mask line uses its motif's
//! nonzero support.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::img::{io as img_io, Image, SupportMask};

use super::{HierarchyGraph, HierarchyNode, NodeConfig};

struct RawNode {
    id: u32,
    parent: Option<u32>,
    anchor: (isize, isize),
    motif: Option<PathBuf>,
    mask: Option<PathBuf>,
    overrides: Vec<(String, Vec<String>)>,
}

fn load_image_any(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("raw") => img_io::load_raw(path),
        Some("png") => img_io::load_png(path),
        other => Err(Error::Config(format!(
            "unsupported image extension {other:?} for {}",
            path.display()
        ))),
    }
}

pub fn load_hierarchy(path: &Path) -> Result<HierarchyGraph> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut raws: Vec<RawNode> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: &str| Error::Config(format!("{}:{}: {msg}", path.display(), lineno + 1));
        if toks[0] != "node" || toks.len() < 2 {
            return Err(err("expected 'node <id> ...'"));
        }
        let id: u32 = toks[1].parse().map_err(|_| err("bad node id"))?;
        let mut raw = RawNode {
            id,
            parent: None,
            anchor: (0, 0),
            motif: None,
            mask: None,
            overrides: Vec::new(),
        };
        let mut k = 2;
        let mut saw_parent = false;
        while k < toks.len() {
            let key = toks[k];
            let take = |count: usize| -> Result<Vec<String>> {
                if k + count >= toks.len() + 0 && k + count > toks.len() - 1 {
                    // bounds handled below
                }
                if k + count > toks.len() - 1 {
                    return Err(Error::Config(format!(
                        "{}:{}: key '{key}' needs {count} value(s)",
                        path.display(),
                        lineno + 1
                    )));
                }
                Ok(toks[k + 1..=k + count].iter().map(|s| s.to_string()).collect())
            };
            match key {
                "parent" => {
                    let v = take(1)?;
                    saw_parent = true;
                    raw.parent = if v[0] == "-" {
                        None
                    } else {
                        Some(v[0].parse().map_err(|_| err("bad parent id"))?)
                    };
                    k += 2;
                }
                "anchor" => {
                    let v = take(2)?;
                    raw.anchor = (
                        v[0].parse().map_err(|_| err("bad anchor"))?,
                        v[1].parse().map_err(|_| err("bad anchor"))?,
                    );
                    k += 3;
                }
                "motif" => {
                    let v = take(1)?;
                    raw.motif = Some(base.join(&v[0]));
                    k += 2;
                }
                "mask" => {
                    let v = take(1)?;
                    raw.mask = Some(base.join(&v[0]));
                    k += 2;
                }
                "stride" => {
                    let v = take(2)?;
                    raw.overrides.push(("stride".into(), v));
                    k += 3;
                }
                "t_iters" | "fine_iters" | "sigma2" | "sigma0_2" | "sigma_in2" | "alpha"
                | "gamma" | "step_a" | "step_b" | "prescreen" => {
                    let v = take(1)?;
                    raw.overrides.push((key.to_string(), v));
                    k += 2;
                }
                other => {
                    return Err(err(&format!("unknown key '{other}'")));
                }
            }
        }
        if !saw_parent {
            return Err(err("node line is missing 'parent'"));
        }
        raws.push(raw);
    }
    let with_children: std::collections::BTreeSet<u32> =
        raws.iter().filter_map(|r| r.parent).collect();
    let mut nodes = Vec::new();
    for raw in raws {
        let is_leaf = !with_children.contains(&raw.id);
        let mut cfg = if is_leaf {
            NodeConfig::default_leaf()
        } else {
            NodeConfig::default_spike()
        };
        let mut step_a = None;
        let mut step_b = None;
        for (key, v) in &raw.overrides {
            let f = |s: &String| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Config(format!("node {}: bad number '{s}'", raw.id)))
            };
            match key.as_str() {
                "stride" => {
                    cfg.stride = (
                        v[0].parse().map_err(|_| Error::Config("bad stride".into()))?,
                        v[1].parse().map_err(|_| Error::Config("bad stride".into()))?,
                    )
                }
                "t_iters" => cfg.t_iters = f(&v[0])? as usize,
                "fine_iters" => cfg.fine_iters = f(&v[0])? as usize,
                "sigma2" => cfg.sigma2 = f(&v[0])?,
                "sigma0_2" => cfg.sigma0_2 = f(&v[0])?,
                "sigma_in2" => cfg.sigma_in2 = f(&v[0])?,
                "alpha" => cfg.alpha = f(&v[0])?,
                "gamma" => cfg.gamma = Some(f(&v[0])?),
                "step_a" => step_a = Some(f(&v[0])?),
                "step_b" => step_b = Some(f(&v[0])?),
                "prescreen" => cfg.prescreen = f(&v[0])? != 0.0,
                _ => unreachable!(),
            }
        }
        if let (Some(a), Some(b)) = (step_a, step_b) {
            cfg.steps = Some(crate::solver::StepSizes::new(a, b));
        }
        let motif = raw.motif.as_deref().map(load_image_any).transpose()?;
        let mask = match (&raw.mask, &motif) {
            (Some(p), _) => {
                let img = load_image_any(p)?;
                Some(SupportMask::from_fn(img.rows(), img.cols(), |i, j| {
                    img.get(i, j, 0) > 0.5
                }))
            }
            (None, Some(m)) if is_leaf => Some(SupportMask::from_nonzero(m, 1e-9)),
            _ => None,
        };
        nodes.push(HierarchyNode {
            id: raw.id,
            parent: raw.parent,
            motif,
            mask,
            anchor: raw.anchor,
            cfg,
        });
    }
    HierarchyGraph::new(nodes)
}

/// Writes a hierarchy file; motif/mask images are saved as raw dumps under
/// `dir` and referenced by relative path.
pub fn save_hierarchy(graph: &HierarchyGraph, dir: &Path, file_name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut lines =
        vec!["# hierarchy description: node <id> parent <id|-> anchor <i> <j> [key value]*".to_string()];
    for id in graph.ids().collect::<Vec<_>>() {
        let n = graph.node(id);
        let mut line = format!(
            "node {} parent {} anchor {} {}",
            n.id,
            n.parent.map_or("-".to_string(), |p| p.to_string()),
            n.anchor.0,
            n.anchor.1
        );
        if let Some(m) = &n.motif {
            let rel = format!("node_{}_motif.raw", n.id);
            img_io::save_raw(m, &dir.join(&rel))?;
            line.push_str(&format!(" motif {rel}"));
        }
        if let Some(mask) = &n.mask {
            let rel = format!("node_{}_mask.raw", n.id);
            img_io::save_raw(&mask.to_image(), &dir.join(&rel))?;
            line.push_str(&format!(" mask {rel}"));
        }
        let c = &n.cfg;
        line.push_str(&format!(
            " t_iters {} fine_iters {} stride {} {} sigma2 {} sigma0_2 {} sigma_in2 {} alpha {}",
            c.t_iters,
            c.fine_iters,
            c.stride.0,
            c.stride.1,
            c.sigma2,
            c.sigma0_2,
            c.sigma_in2,
            c.alpha
        ));
        if let Some(g) = c.gamma {
            line.push_str(&format!(" gamma {g}"));
        }
        if let Some(s) = c.steps {
            line.push_str(&format!(" step_a {} step_b {}", s.t_a, s.t_b));
        }
        if c.prescreen {
            line.push_str(" prescreen 1");
        }
        lines.push(line);
    }
    let path = dir.join(file_name);
    std::fs::write(&path, lines.join("\n") + "\n")?;
    Ok(path)
}

/// Per-node gamma file: lines of `<id> <gamma>`.
pub fn save_gammas(gammas: &BTreeMap<u32, f64>, path: &Path) -> Result<()> {
    let mut out = String::from("# node gamma\n");
    for (id, g) in gammas {
        out.push_str(&format!("{id} {g}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_gammas(path: &Path) -> Result<BTreeMap<u32, f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::Config(format!("bad gamma line '{line}'")));
        }
        out.insert(
            toks[0].parse().map_err(|_| Error::Config("bad node id".into()))?,
            toks[1].parse().map_err(|_| Error::Config("bad gamma".into()))?,
        );
    }
    Ok(out)
}
