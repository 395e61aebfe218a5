//! Grid alignment: nearest-neighbour resampling and extent intersection.

use super::{BinaryMask, GeoTransform, Grid, Gridded, RasterStack, Window};
use crate::error::{Error, Result};

/// For each target pixel, the source pixel whose center is nearest to the
/// target pixel center, or `None` when that position lies outside the source.
fn nearest_lookup(src: &Grid, target: &GeoTransform, height: usize, width: usize) -> Result<Vec<Option<usize>>> {
    src.transform.validate()?;
    target.validate()?;
    let mut lookup = Vec::with_capacity(height * width);
    let mut hits = 0usize;
    for r in 0..height {
        for c in 0..width {
            let (x, y) = target.pixel_center(r, c);
            let (sr, sc) = src.transform.world_to_pixel(x, y)?;
            let (fr, fc) = (sr.floor(), sc.floor());
            if fr >= 0.0 && fc >= 0.0 && (fr as usize) < src.height && (fc as usize) < src.width {
                lookup.push(Some(fr as usize * src.width + fc as usize));
                hits += 1;
            } else {
                lookup.push(None);
            }
        }
    }
    if hits == 0 {
        return Err(Error::EmptyOverlap(format!(
            "target grid {height}x{width} does not overlap the {}x{} source",
            src.height, src.width
        )));
    }
    Ok(lookup)
}

/// Nearest-neighbour resampling of every band onto `target`; pixels falling
/// outside the source receive 0 (the nodata value).
pub fn resample_to_grid(
    src: &RasterStack,
    target: GeoTransform,
    height: usize,
    width: usize,
) -> Result<RasterStack> {
    let lookup = nearest_lookup(&src.grid(), &target, height, width)?;
    let mut data = Vec::with_capacity(src.bands() * height * width);
    for k in 0..src.bands() {
        let band = src.band(k);
        data.extend(lookup.iter().map(|idx| idx.map_or(0.0, |i| band[i])));
    }
    Ok(RasterStack::new(src.bands(), height, width, data, target)?
        .with_band_names(src.band_names().to_vec())?
        .with_dtype(src.dtype()))
}

/// Mask counterpart of [`resample_to_grid`]; outside pixels become 0.
pub fn resample_mask_to_grid(
    src: &BinaryMask,
    target: GeoTransform,
    height: usize,
    width: usize,
) -> Result<BinaryMask> {
    let lookup = nearest_lookup(&src.grid(), &target, height, width)?;
    let data = lookup
        .iter()
        .map(|idx| idx.map_or(0, |i| src.data()[i]))
        .collect();
    BinaryMask::new(height, width, data, target)
}

/// Windows that crop each grid to the common world extent.
///
/// All grids must share the linear part of their transform and an integer
/// pixel offset relative to the first grid.
pub fn intersection_windows(grids: &[Grid]) -> Result<Vec<Window>> {
    let Some(reference) = grids.first() else {
        return Err(Error::Config("no grids to intersect".into()));
    };
    let mut offsets = Vec::with_capacity(grids.len());
    for (i, g) in grids.iter().enumerate() {
        g.transform.validate()?;
        if !g.transform.same_linear_part(&reference.transform) {
            return Err(Error::GridMismatch(format!(
                "grid {i} has pixel size/rotation {:?}, expected {:?}",
                g.transform, reference.transform
            )));
        }
        let (r, c) = reference
            .transform
            .world_to_pixel(g.transform.origin_x, g.transform.origin_y)?;
        let (rr, cr) = (r.round(), c.round());
        if (r - rr).abs() > 1e-6 || (c - cr).abs() > 1e-6 {
            return Err(Error::GridMismatch(format!(
                "grid {i} is offset by a fractional pixel ({r}, {c})"
            )));
        }
        offsets.push((rr as i64, cr as i64));
    }
    let mut top = i64::MIN;
    let mut left = i64::MIN;
    let mut bottom = i64::MAX;
    let mut right = i64::MAX;
    for (g, &(r0, c0)) in grids.iter().zip(&offsets) {
        top = top.max(r0);
        left = left.max(c0);
        bottom = bottom.min(r0 + g.height as i64);
        right = right.min(c0 + g.width as i64);
    }
    if bottom <= top || right <= left {
        return Err(Error::EmptyOverlap("grids have no common pixel".into()));
    }
    Ok(offsets
        .iter()
        .map(|&(r0, c0)| Window {
            row: (top - r0) as usize,
            col: (left - c0) as usize,
            height: (bottom - top) as usize,
            width: (right - left) as usize,
        })
        .collect())
}

/// Crops every input to the common extent.
pub fn intersect_extents<T: Gridded>(items: &[&T]) -> Result<Vec<T>> {
    let grids: Vec<Grid> = items.iter().map(|t| t.grid()).collect();
    let windows = intersection_windows(&grids)?;
    items
        .iter()
        .zip(&windows)
        .map(|(item, w)| item.crop(w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, t: GeoTransform) -> RasterStack {
        RasterStack::new(1, h, w, (1..=h * w).map(|v| v as f32).collect(), t).unwrap()
    }

    #[test]
    fn identity_resample_is_bit_identical() {
        let t = GeoTransform::north_up(500.0, 900.0, 30.0, -30.0);
        let src = ramp(7, 5, t);
        let out = resample_to_grid(&src, t, 7, 5).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn one_pixel_shift_fills_edge_with_nodata() {
        let t = GeoTransform::north_up(0.0, 0.0, 30.0, -30.0);
        let src = ramp(4, 4, t);
        // target starts one column to the right of the source
        let target = t.shifted(0, 1);
        let out = resample_to_grid(&src, target, 4, 4).unwrap();
        // brute force: nearest source center for each target center
        for r in 0..4 {
            for c in 0..4 {
                let (x, y) = target.pixel_center(r, c);
                let mut best = None;
                let mut best_d = f64::MAX;
                for sr in 0..4 {
                    for sc in 0..4 {
                        let (sx, sy) = t.pixel_center(sr, sc);
                        let d = (sx - x).powi(2) + (sy - y).powi(2);
                        if d < best_d {
                            best_d = d;
                            best = Some((sr, sc));
                        }
                    }
                }
                let expected = match best {
                    Some((sr, sc)) if best_d < 1e-6 => src.get(0, sr, sc),
                    _ => 0.0,
                };
                assert_eq!(out.get(0, r, c), expected, "pixel ({r},{c})");
            }
        }
        assert!((0..4).all(|r| out.get(0, r, 3) == 0.0));
    }

    #[test]
    fn disjoint_target_is_empty_overlap() {
        let t = GeoTransform::identity();
        let src = ramp(4, 4, t);
        let far = GeoTransform::north_up(1000.0, 1000.0, 1.0, 1.0);
        assert!(matches!(resample_to_grid(&src, far, 4, 4), Err(Error::EmptyOverlap(_))));
    }

    #[test]
    fn identical_extents_unchanged() {
        let t = GeoTransform::identity();
        let a = BinaryMask::zeros(10, 12, t);
        let out = intersect_extents(&[&a, &a, &a]).unwrap();
        assert!(out.iter().all(|m| m.height() == 10 && m.width() == 12));
    }

    #[test]
    fn half_overlap_crops_to_common_rectangle() {
        // extents [0,100]x[0,100] and [50,150]x[0,100] in pixel space
        let a = BinaryMask::zeros(100, 100, GeoTransform::identity());
        let b = BinaryMask::zeros(100, 100, GeoTransform::north_up(50.0, 0.0, 1.0, 1.0));
        let out = intersect_extents(&[&a, &b]).unwrap();
        for m in &out {
            assert_eq!((m.height(), m.width()), (100, 50));
        }
        let ca = out[0].transform().pixel_to_world(0.0, 0.0);
        let cb = out[1].transform().pixel_to_world(0.0, 0.0);
        assert!((ca.0 - cb.0).abs() < 1e-6 && (ca.1 - cb.1).abs() < 1e-6);
    }

    #[test]
    fn disjoint_extents_error() {
        let a = BinaryMask::zeros(10, 10, GeoTransform::identity());
        let b = BinaryMask::zeros(10, 10, GeoTransform::north_up(20.0, 0.0, 1.0, 1.0));
        assert!(matches!(intersect_extents(&[&a, &b]), Err(Error::EmptyOverlap(_))));
    }

    #[test]
    fn mismatched_pixel_size_errors() {
        let a = BinaryMask::zeros(10, 10, GeoTransform::identity());
        let b = BinaryMask::zeros(10, 10, GeoTransform::north_up(0.0, 0.0, 2.0, 1.0));
        assert!(matches!(intersect_extents(&[&a, &b]), Err(Error::GridMismatch(_))));
        let c = BinaryMask::zeros(10, 10, GeoTransform::north_up(0.5, 0.0, 1.0, 1.0));
        assert!(matches!(intersect_extents(&[&a, &c]), Err(Error::GridMismatch(_))));
    }
}
