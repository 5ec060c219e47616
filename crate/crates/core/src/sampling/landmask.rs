//! Land polygons loaded from GeoJSON with a coarse grid index.

use std::collections::HashMap;
use std::path::Path;

use serde_json::Value;

use super::geo::LatLon;
use super::{BoundingBox, SamplingError};

/// Grid cell size (degrees) of the polygon bbox index.
const INDEX_CELL_DEG: f64 = 1.0;
const EDGE_EPS: f64 = 1e-12;

/// Ring vertices as `[lon, lat]`, closed (first == last).
pub type Ring = Vec<[f64; 2]>;

#[derive(Debug, Clone)]
pub struct LandPolygon {
    pub exterior: Ring,
    /// Interior rings are water.
    pub holes: Vec<Ring>,
    pub bbox: BoundingBox,
}

impl LandPolygon {
    pub fn new(exterior: Ring, holes: Vec<Ring>) -> Result<Self, SamplingError> {
        let exterior = close_ring(exterior)?;
        let holes = holes.into_iter().map(close_ring).collect::<Result<Vec<_>, _>>()?;
        let (mut lat_min, mut lat_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut lon_min, mut lon_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &[lon, lat] in &exterior {
            lat_min = lat_min.min(lat);
            lat_max = lat_max.max(lat);
            lon_min = lon_min.min(lon);
            lon_max = lon_max.max(lon);
        }
        Ok(Self { exterior, holes, bbox: BoundingBox { lat_min, lat_max, lon_min, lon_max } })
    }

    fn contains(&self, lon: f64, lat: f64) -> bool {
        if !self.bbox.contains_inclusive(LatLon::new(lat, lon)) {
            return false;
        }
        match ring_position(&self.exterior, lon, lat) {
            RingPosition::Outside => false,
            RingPosition::OnEdge => true,
            RingPosition::Inside => self
                .holes
                .iter()
                .all(|h| ring_position(h, lon, lat) != RingPosition::Inside),
        }
    }
}

fn close_ring(mut ring: Ring) -> Result<Ring, SamplingError> {
    if ring.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err(SamplingError::LandMask("non-finite vertex".into()));
    }
    if ring.first() != ring.last() {
        let first = ring[0];
        ring.push(first);
    }
    if ring.len() < 4 {
        return Err(SamplingError::LandMask(format!("ring with {} vertices", ring.len())));
    }
    Ok(ring)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RingPosition {
    Inside,
    OnEdge,
    Outside,
}

fn on_segment(a: [f64; 2], b: [f64; 2], x: f64, y: f64) -> bool {
    let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    let scale = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).max(1.0);
    cross.abs() <= EDGE_EPS * scale
        && x >= a[0].min(b[0]) - EDGE_EPS
        && x <= a[0].max(b[0]) + EDGE_EPS
        && y >= a[1].min(b[1]) - EDGE_EPS
        && y <= a[1].max(b[1]) + EDGE_EPS
}

/// Even-odd ray casting toward +x, with explicit edge detection.
fn ring_position(ring: &[[f64; 2]], x: f64, y: f64) -> RingPosition {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if on_segment(a, b, x, y) {
            return RingPosition::OnEdge;
        }
        if (a[1] > y) != (b[1] > y) {
            let x_cross = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if x < x_cross {
                inside = !inside;
            }
        }
    }
    if inside {
        RingPosition::Inside
    } else {
        RingPosition::Outside
    }
}

/// Immutable land mask; safe to share across threads.
#[derive(Debug, Clone, Default)]
pub struct LandMask {
    polygons: Vec<LandPolygon>,
    index: HashMap<(i32, i32), Vec<usize>>,
}

fn cell_of(v: f64) -> i32 {
    (v / INDEX_CELL_DEG).floor() as i32
}

impl LandMask {
    pub fn new(polygons: Vec<LandPolygon>) -> Self {
        let mut index: HashMap<(i32, i32), Vec<usize>> = HashMap::new();
        for (i, p) in polygons.iter().enumerate() {
            for cx in cell_of(p.bbox.lon_min)..=cell_of(p.bbox.lon_max) {
                for cy in cell_of(p.bbox.lat_min)..=cell_of(p.bbox.lat_max) {
                    index.entry((cx, cy)).or_default().push(i);
                }
            }
        }
        Self { polygons, index }
    }

    pub fn polygons(&self) -> &[LandPolygon] {
        &self.polygons
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn intersects(&self, bbox: &BoundingBox) -> bool {
        self.polygons.iter().any(|p| p.bbox.intersects(bbox))
    }

    /// Points on a polygon edge or vertex count as land; points inside a
    /// hole do not.
    pub fn point_on_land(&self, p: LatLon) -> bool {
        self.index
            .get(&(cell_of(p.lon), cell_of(p.lat)))
            .is_some_and(|c| c.iter().any(|&i| self.polygons[i].contains(p.lon, p.lat)))
    }

    pub fn from_geojson_str(text: &str) -> Result<Self, SamplingError> {
        let root: Value = serde_json::from_str(text).map_err(|e| SamplingError::LandMask(e.to_string()))?;
        let mut polygons = Vec::new();
        collect_geometry(&root, &mut polygons)?;
        Ok(Self::new(polygons))
    }

    pub fn from_geojson_file(path: &Path) -> Result<Self, SamplingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SamplingError::LandMask(format!("{}: {e}", path.display())))?;
        Self::from_geojson_str(&text)
    }
}

fn parse_ring(v: &Value) -> Result<Ring, SamplingError> {
    let arr = v.as_array().ok_or_else(|| SamplingError::LandMask("ring is not an array".into()))?;
    arr.iter()
        .map(|pos| {
            let lon = pos.get(0).and_then(Value::as_f64);
            let lat = pos.get(1).and_then(Value::as_f64);
            match (lon, lat) {
                (Some(lon), Some(lat)) => Ok([lon, lat]),
                _ => Err(SamplingError::LandMask("bad position".into())),
            }
        })
        .collect()
}

fn parse_polygon(coords: &Value) -> Result<LandPolygon, SamplingError> {
    let rings = coords
        .as_array()
        .ok_or_else(|| SamplingError::LandMask("polygon coordinates are not an array".into()))?;
    let mut rings = rings.iter().map(parse_ring).collect::<Result<Vec<_>, _>>()?;
    if rings.is_empty() {
        return Err(SamplingError::LandMask("polygon without rings".into()));
    }
    let exterior = rings.remove(0);
    LandPolygon::new(exterior, rings)
}

fn collect_geometry(v: &Value, out: &mut Vec<LandPolygon>) -> Result<(), SamplingError> {
    match v.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => {
            for f in v.get("features").and_then(Value::as_array).into_iter().flatten() {
                collect_geometry(f, out)?;
            }
        }
        Some("Feature") => {
            if let Some(g) = v.get("geometry").filter(|g| !g.is_null()) {
                collect_geometry(g, out)?;
            }
        }
        Some("GeometryCollection") => {
            for g in v.get("geometries").and_then(Value::as_array).into_iter().flatten() {
                collect_geometry(g, out)?;
            }
        }
        Some("Polygon") => out.push(parse_polygon(&v["coordinates"])?),
        Some("MultiPolygon") => {
            let polys = v["coordinates"]
                .as_array()
                .ok_or_else(|| SamplingError::LandMask("multipolygon coordinates are not an array".into()))?;
            for p in polys {
                out.push(parse_polygon(p)?);
            }
        }
        Some(other) => log::debug!("ignoring {other} geometry in land mask"),
        None => return Err(SamplingError::LandMask("GeoJSON object without type".into())),
    }
    Ok(())
}
