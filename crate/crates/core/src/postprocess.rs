//! Binarization and removal of small 4-connected regions.

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GeoTransform, Window};

/// Default size below which regions are dropped: anything up to 50 pixels goes.
pub const DEFAULT_MIN_KEEP: usize = 51;

/// `prob > tau`, strictly.
pub fn binarize(probs: &[f32], height: usize, width: usize, tau: f32) -> Result<BinaryMask> {
    if probs.len() != height * width {
        return Err(Error::Shape(format!(
            "{} probabilities for a {height}x{width} grid",
            probs.len()
        )));
    }
    let data = probs.iter().map(|&p| (p > tau) as u8).collect();
    BinaryMask::from_vec(height, width, data)
}

/// Component ids per pixel (0 = background) plus component sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    /// `sizes[k - 1]` is the pixel count of component `k`.
    pub sizes: Vec<usize>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    let mut root = x;
    while parent[root as usize] != root {
        root = parent[root as usize];
    }
    while parent[x as usize] != root {
        let next = parent[x as usize];
        parent[x as usize] = root;
        x = next;
    }
    root
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let (ra, rb) = (find(parent, a), find(parent, b));
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// Two-pass union-find labeling with 4-connectivity. Ids are numbered
/// 1..=K in raster order of each component's first pixel.
pub fn label_components(mask: &BinaryMask) -> ComponentLabeling {
    let (h, w) = (mask.height(), mask.width());
    let m = mask.data();
    let mut labels = vec![0u32; h * w];
    // parent[0] is the background sentinel
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if m[i] == 0 {
                continue;
            }
            let up = if r > 0 { labels[i - w] } else { 0 };
            let left = if c > 0 { labels[i - 1] } else { 0 };
            labels[i] = match (up, left) {
                (0, 0) => {
                    let l = parent.len() as u32;
                    parent.push(l);
                    l
                }
                (u, 0) => u,
                (0, l) => l,
                (u, l) if u == l => u,
                (u, l) => union(&mut parent, u, l),
            };
        }
    }
    let mut remap = vec![0u32; parent.len()];
    let mut sizes = Vec::new();
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *l) as usize;
        if remap[root] == 0 {
            sizes.push(0);
            remap[root] = sizes.len() as u32;
        }
        *l = remap[root];
        sizes[*l as usize - 1] += 1;
    }
    ComponentLabeling {
        height: h,
        width: w,
        labels,
        sizes,
    }
}

/// Drops every component with fewer than `min_keep` pixels.
pub fn remove_small(mask: &BinaryMask, min_keep: usize) -> BinaryMask {
    let lab = label_components(mask);
    let data = lab
        .labels
        .iter()
        .map(|&l| (l != 0 && lab.sizes[l as usize - 1] >= min_keep) as u8)
        .collect();
    BinaryMask::new(mask.height(), mask.width(), data, *mask.transform()).expect("labels preserve shape")
}

/// Union of patch masks pasted into a scene-sized canvas; overlapping
/// windows are OR-ed.
pub fn stitch_masks(
    patches: &[(Window, &BinaryMask)],
    height: usize,
    width: usize,
    transform: GeoTransform,
) -> Result<BinaryMask> {
    let mut out = BinaryMask::zeros(height, width, transform);
    for (win, m) in patches {
        if !win.fits(height, width) || (m.height(), m.width()) != (win.height, win.width) {
            return Err(Error::Shape(format!(
                "patch {}x{} at ({}, {}) does not fit window {}x{} in {height}x{width}",
                m.height(),
                m.width(),
                win.row,
                win.col,
                win.height,
                win.width
            )));
        }
        for r in 0..win.height {
            for c in 0..win.width {
                if m.get(r, c) != 0 {
                    out.set(win.row + r, win.col + c, true);
                }
            }
        }
    }
    Ok(out)
}

/// How small-region removal treats patch boundaries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterScope {
    /// Each patch on its own; regions cut by a patch edge count separately.
    #[default]
    PerPatch,
    /// Stitch the patches into the scene first, filter, then cut back out.
    Scene,
}

/// Small-region removal for a set of patch predictions from one scene.
pub fn remove_small_patches(
    patches: &[(Window, BinaryMask)],
    scene_height: usize,
    scene_width: usize,
    min_keep: usize,
    scope: FilterScope,
) -> Result<Vec<BinaryMask>> {
    match scope {
        FilterScope::PerPatch => Ok(patches.iter().map(|(_, m)| remove_small(m, min_keep)).collect()),
        FilterScope::Scene => {
            let refs: Vec<(Window, &BinaryMask)> = patches.iter().map(|(w, m)| (*w, m)).collect();
            let scene = stitch_masks(&refs, scene_height, scene_width, GeoTransform::identity())?;
            let kept = remove_small(&scene, min_keep);
            Ok(patches
                .iter()
                .map(|(win, m)| {
                    BinaryMask::from_fn(win.height, win.width, |r, c| {
                        m.get(r, c) != 0 && kept.get(win.row + r, win.col + c) != 0
                    })
                    .with_transform(*m.transform())
                })
                .collect())
        }
    }
}
