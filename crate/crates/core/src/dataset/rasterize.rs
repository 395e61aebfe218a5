//! Scanline polygon fill with pixel-center sampling and the even-odd rule.

use crate::error::Result;
use crate::raster::{BinaryMask, GeoTransform, Polygon, PolygonLayer};

/// Edges of one polygon in continuous pixel space as `(row, col)` pairs.
fn pixel_edges(poly: &Polygon, t: &GeoTransform) -> Result<Vec<([f64; 2], [f64; 2])>> {
    let mut edges = Vec::new();
    for ring in poly.rings() {
        let pts = ring
            .vertices()
            .iter()
            .map(|p| t.world_to_pixel(p[0], p[1]).map(|(r, c)| [r, c]))
            .collect::<Result<Vec<_>>>()?;
        edges.extend(pts.windows(2).map(|w| (w[0], w[1])));
    }
    Ok(edges)
}

/// First column whose center `j + 0.5` is `>= x`.
fn first_center_at_or_after(x: f64, width: usize) -> usize {
    if x.is_nan() || x <= 0.5 {
        return 0;
    }
    let mut j = ((x - 0.5).ceil().min(width as f64)) as usize;
    while j > 0 && (j - 1) as f64 + 0.5 >= x {
        j -= 1;
    }
    while j < width && (j as f64 + 0.5) < x {
        j += 1;
    }
    j
}

fn fill_polygon(edges: &[([f64; 2], [f64; 2])], height: usize, width: usize, out: &mut [u8]) {
    let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in edges {
        rmin = rmin.min(a[0]).min(b[0]);
        rmax = rmax.max(a[0]).max(b[0]);
    }
    let first = first_center_at_or_after(rmin, height);
    let mut crossings = Vec::new();
    for i in first..height {
        let rc = i as f64 + 0.5;
        if rc > rmax {
            break;
        }
        crossings.clear();
        for &(a, b) in edges {
            if (a[0] > rc) != (b[0] > rc) {
                crossings.push(a[1] + (rc - a[0]) * (b[1] - a[1]) / (b[0] - a[0]));
            }
        }
        crossings.sort_by(|x, y| x.total_cmp(y));
        let row = &mut out[i * width..(i + 1) * width];
        // a center c is inside iff an odd number of crossings lie strictly right of it
        for pair in crossings.chunks_exact(2) {
            let start = first_center_at_or_after(pair[0], width);
            let end = first_center_at_or_after(pair[1], width);
            for v in &mut row[start..end.max(start)] {
                *v = 1;
            }
        }
    }
}

/// Burns the polygons whose year `Y` satisfies `y1 < Y <= y2` into a mask on
/// the given grid. A pixel is 1 iff its center is inside any such polygon.
pub fn rasterize_polygons(
    layer: &PolygonLayer,
    grid: &GeoTransform,
    height: usize,
    width: usize,
    year_pair: (u16, u16),
) -> Result<BinaryMask> {
    grid.validate()?;
    let mut data = vec![0u8; height * width];
    for poly in layer.between_years(year_pair.0, year_pair.1) {
        let edges = pixel_edges(poly, grid)?;
        fill_polygon(&edges, height, width, &mut data);
    }
    BinaryMask::new(height, width, data, *grid)
}
