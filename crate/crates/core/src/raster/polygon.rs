//! Deforestation polygons with `dYYYY` class labels.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Year label of the form `dYYYY`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassLabel {
    pub year: u16,
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s
            .strip_prefix('d')
            .filter(|d| d.len() == 4 && d.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| Error::Ingestion(format!("class label {s:?} is not of the form dYYYY")))?;
        Ok(ClassLabel {
            year: digits.parse().expect("four ascii digits"),
        })
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{:04}", self.year)
    }
}

/// Closed ring of world-coordinate vertices; first vertex == last vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring(Vec<[f64; 2]>);

impl Ring {
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Ingestion("ring has non-finite coordinates".into()));
        }
        if vertices.len() >= 2 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        let mut distinct = vertices.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        distinct.dedup();
        if distinct.len() < 3 {
            return Err(Error::Ingestion(format!(
                "ring has {} distinct vertices, need at least 3",
                distinct.len()
            )));
        }
        let first = vertices[0];
        vertices.push(first);
        Ok(Ring(vertices))
    }

    /// Vertices including the closing repeat of the first one.
    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.0
    }

    /// Edges as consecutive vertex pairs.
    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }

    /// Shoelace area, signed (positive for counter-clockwise in x/y).
    pub fn signed_area(&self) -> f64 {
        self.edges()
            .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
            .sum::<f64>()
            / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
    pub class: ClassLabel,
}

impl Polygon {
    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    /// Area of the exterior minus the holes.
    pub fn area(&self) -> f64 {
        self.exterior.signed_area().abs() - self.holes.iter().map(|h| h.signed_area().abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolygonLayer {
    pub polygons: Vec<Polygon>,
}

fn parse_ring(v: &Value) -> Result<Ring> {
    let pts = v
        .as_array()
        .ok_or_else(|| Error::Ingestion("ring is not an array".into()))?;
    let mut out = Vec::with_capacity(pts.len());
    for p in pts {
        let xy = p
            .as_array()
            .filter(|a| a.len() >= 2)
            .and_then(|a| Some([a[0].as_f64()?, a[1].as_f64()?]))
            .ok_or_else(|| Error::Ingestion(format!("bad position {p}")))?;
        out.push(xy);
    }
    Ring::new(out)
}

fn parse_polygon_coords(v: &Value, class: ClassLabel) -> Result<Polygon> {
    let rings = v
        .as_array()
        .filter(|r| !r.is_empty())
        .ok_or_else(|| Error::Ingestion("polygon has no rings".into()))?;
    let exterior = parse_ring(&rings[0])?;
    let holes = rings[1..].iter().map(parse_ring).collect::<Result<_>>()?;
    Ok(Polygon {
        exterior,
        holes,
        class,
    })
}

impl PolygonLayer {
    pub fn new(polygons: Vec<Polygon>) -> Self {
        Self { polygons }
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    /// Polygons whose year `Y` satisfies `y1 < Y <= y2`.
    pub fn between_years(&self, y1: u16, y2: u16) -> impl Iterator<Item = &Polygon> {
        self.polygons
            .iter()
            .filter(move |p| p.class.year > y1 && p.class.year <= y2)
    }

    /// Parses a GeoJSON FeatureCollection of Polygon/MultiPolygon features
    /// carrying a `class` property.
    pub fn from_geojson(v: &Value) -> Result<Self> {
        let features = v
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Ingestion("not a FeatureCollection: missing features array".into()))?;
        let mut polygons = Vec::new();
        for (i, f) in features.iter().enumerate() {
            let describe = |msg: String| {
                let id = f.get("id").map(|id| format!(" (id {id})")).unwrap_or_default();
                Error::Ingestion(format!("feature {i}{id}: {msg}"))
            };
            let label = f
                .pointer("/properties/class")
                .and_then(Value::as_str)
                .ok_or_else(|| describe("missing string property \"class\"".into()))?;
            let class: ClassLabel = label.parse().map_err(|e: Error| describe(e.to_string()))?;
            let geom = f
                .get("geometry")
                .ok_or_else(|| describe("missing geometry".into()))?;
            let coords = geom
                .get("coordinates")
                .ok_or_else(|| describe("geometry has no coordinates".into()))?;
            match geom.get("type").and_then(Value::as_str) {
                Some("Polygon") => {
                    polygons.push(parse_polygon_coords(coords, class).map_err(|e| describe(e.to_string()))?)
                }
                Some("MultiPolygon") => {
                    let parts = coords
                        .as_array()
                        .ok_or_else(|| describe("MultiPolygon coordinates not an array".into()))?;
                    for part in parts {
                        polygons.push(parse_polygon_coords(part, class).map_err(|e| describe(e.to_string()))?);
                    }
                }
                other => return Err(describe(format!("unsupported geometry type {other:?}"))),
            }
        }
        Ok(Self { polygons })
    }

    pub fn to_geojson(&self) -> Value {
        let ring = |r: &Ring| -> Value { r.vertices().iter().map(|p| json!([p[0], p[1]])).collect() };
        let features: Vec<Value> = self
            .polygons
            .iter()
            .map(|p| {
                let rings: Vec<Value> = p.rings().map(ring).collect();
                json!({
                    "type": "Feature",
                    "properties": { "class": p.class.to_string() },
                    "geometry": { "type": "Polygon", "coordinates": rings },
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        Self::from_geojson(&v)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_geojson())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_labels() {
        assert_eq!("d2019".parse::<ClassLabel>().unwrap().year, 2019);
        for bad in ["2019", "d19", "x2019", "d20190", "d20a9", ""] {
            assert!(bad.parse::<ClassLabel>().is_err(), "{bad}");
        }
        assert_eq!(ClassLabel { year: 2008 }.to_string(), "d2008");
    }

    #[test]
    fn ring_is_closed_and_needs_three_vertices() {
        let r = Ring::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!(r.vertices().first(), r.vertices().last());
        assert_eq!(r.vertices().len(), 4);
        assert!(Ring::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]).is_err());
        assert_eq!(r.signed_area(), 0.5);
    }

    #[test]
    fn geojson_round_trip_and_bad_label() {
        let v = json!({"type": "FeatureCollection", "features": [
            {"type": "Feature", "properties": {"class": "d2019"},
             "geometry": {"type": "Polygon", "coordinates": [[[0,0],[4,0],[4,4],[0,4],[0,0]], [[1,1],[2,1],[2,2],[1,1]]]}}
        ]});
        let layer = PolygonLayer::from_geojson(&v).unwrap();
        assert_eq!(layer.polygons.len(), 1);
        assert_eq!(layer.polygons[0].holes.len(), 1);
        assert_eq!(PolygonLayer::from_geojson(&layer.to_geojson()).unwrap(), layer);

        let bad = json!({"features": [
            {"properties": {"class": "d2019"}, "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[1,1]]]}},
            {"id": "x7", "properties": {"class": "2019"}, "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[1,1]]]}}
        ]});
        let err = PolygonLayer::from_geojson(&bad).unwrap_err().to_string();
        assert!(err.contains("feature 1") && err.contains("x7"), "{err}");
    }

    #[test]
    fn year_filter_is_half_open() {
        let tri = Ring::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
        let layer = PolygonLayer::new(
            [2017, 2018, 2019, 2020]
                .iter()
                .map(|&y| Polygon {
                    exterior: tri.clone(),
                    holes: vec![],
                    class: ClassLabel { year: y },
                })
                .collect(),
        );
        let years: Vec<u16> = layer.between_years(2018, 2019).map(|p| p.class.year).collect();
        assert_eq!(years, vec![2019]);
    }
}
