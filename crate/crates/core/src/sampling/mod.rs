//! Pseudo-absence background sampling.
//!
//! Candidates are drawn uniformly in degrees over the presences' bounding
//! box widened by a buffer, then rejected if they fall within the exclusion
//! radius of any presence or off land. Draws come from a seeded ChaCha
//! stream so a given seed always yields the same list.

mod geo;
mod landmask;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use geo::{haversine_km, LatLon, EARTH_RADIUS_KM};
pub use landmask::{LandMask, LandPolygon, Ring};

use crate::occurrence::OccurrenceRecord;

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("no presence records to sample around")]
    EmptyPresences,
    #[error("insufficient land: accepted {accepted} of {target} background points after {attempts} draws")]
    InsufficientLand { accepted: usize, target: usize, attempts: usize },
    #[error("bounding box crosses the antimeridian (lon {lon_min} .. {lon_max})")]
    Antimeridian { lon_min: f64, lon_max: f64 },
    #[error("invalid sampling parameter: {0}")]
    InvalidParameter(String),
    #[error("land mask: {0}")]
    LandMask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn contains_inclusive(&self, p: LatLon) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat) && (self.lon_min..=self.lon_max).contains(&p.lon)
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.lat_min <= other.lat_max
            && other.lat_min <= self.lat_max
            && self.lon_min <= other.lon_max
            && other.lon_min <= self.lon_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub latitude: f64,
    pub longitude: f64,
    pub presence: u8,
}

impl SamplePoint {
    pub fn presence(lat: f64, lon: f64) -> Self {
        Self { latitude: lat, longitude: lon, presence: 1 }
    }

    pub fn absence(lat: f64, lon: f64) -> Self {
        Self { latitude: lat, longitude: lon, presence: 0 }
    }

    pub fn location(&self) -> LatLon {
        LatLon::new(self.latitude, self.longitude)
    }
}

/// Presence bbox widened by `buffer_deg` on every side; latitude clamped
/// to the poles. Longitudes past ±180 are rejected.
pub fn buffered_bbox(presences: &[LatLon], buffer_deg: f64) -> Result<BoundingBox, SamplingError> {
    if presences.is_empty() {
        return Err(SamplingError::EmptyPresences);
    }
    if !(buffer_deg >= 0.0) {
        return Err(SamplingError::InvalidParameter(format!("buffer_deg = {buffer_deg}")));
    }
    let mut b = BoundingBox {
        lat_min: f64::INFINITY,
        lat_max: f64::NEG_INFINITY,
        lon_min: f64::INFINITY,
        lon_max: f64::NEG_INFINITY,
    };
    for p in presences {
        b.lat_min = b.lat_min.min(p.lat);
        b.lat_max = b.lat_max.max(p.lat);
        b.lon_min = b.lon_min.min(p.lon);
        b.lon_max = b.lon_max.max(p.lon);
    }
    let lon_min = b.lon_min - buffer_deg;
    let lon_max = b.lon_max + buffer_deg;
    if lon_min < -180.0 || lon_max > 180.0 {
        return Err(SamplingError::Antimeridian { lon_min, lon_max });
    }
    Ok(BoundingBox {
        lat_min: (b.lat_min - buffer_deg).max(-90.0),
        lat_max: (b.lat_max + buffer_deg).min(90.0),
        lon_min,
        lon_max,
    })
}

pub fn record_locations(records: &[OccurrenceRecord]) -> Vec<LatLon> {
    records.iter().map(|r| LatLon::new(r.latitude, r.longitude)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    /// Background points per presence.
    pub ratio: f64,
    pub exclusion_km: f64,
    pub buffer_deg: f64,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { ratio: 2.0, exclusion_km: 5.0, buffer_deg: 1.0, seed: 0 }
    }
}

/// Draws per accepted point before giving up.
pub const REJECTION_BUDGET_FACTOR: usize = 100;

const PRESENCE_CELL_DEG: f64 = 0.1;
const KM_PER_DEGREE: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// 0.1° bucket index over presence points for radius queries.
struct PresenceIndex<'a> {
    points: &'a [LatLon],
    cells: HashMap<(i64, i64), Vec<usize>>,
}

fn presence_cell(p: LatLon) -> (i64, i64) {
    ((p.lat / PRESENCE_CELL_DEG).floor() as i64, (p.lon / PRESENCE_CELL_DEG).floor() as i64)
}

impl<'a> PresenceIndex<'a> {
    fn new(points: &'a [LatLon]) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(presence_cell(*p)).or_default().push(i);
        }
        Self { points, cells }
    }

    fn brute_force_within(&self, q: LatLon, radius_km: f64) -> bool {
        self.points.iter().any(|p| haversine_km(*p, q) <= radius_km)
    }

    /// Whether any presence lies within `radius_km` (inclusive) of `q`.
    fn any_within(&self, q: LatLon, radius_km: f64) -> bool {
        // lat span of the search disc, padded by one cell for rounding
        let dlat = radius_km / KM_PER_DEGREE;
        let max_abs_lat = q.lat.abs() + dlat;
        if max_abs_lat >= 89.0 {
            return self.brute_force_within(q, radius_km);
        }
        let dlon = dlat / max_abs_lat.to_radians().cos();
        let row_span = (dlat / PRESENCE_CELL_DEG).ceil() as i64 + 1;
        let col_span = (dlon / PRESENCE_CELL_DEG).ceil() as i64 + 1;
        if (2 * row_span + 1) * (2 * col_span + 1) > 4 * self.points.len() as i64 {
            return self.brute_force_within(q, radius_km);
        }
        let (r0, c0) = presence_cell(q);
        for r in (r0 - row_span)..=(r0 + row_span) {
            for c in (c0 - col_span)..=(c0 + col_span) {
                if let Some(ids) = self.cells.get(&(r, c)) {
                    if ids.iter().any(|&i| haversine_km(self.points[i], q) <= radius_km) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Number of background points drawn for `n_presence` presences.
pub fn target_count(n_presence: usize, ratio: f64) -> usize {
    (ratio * n_presence as f64).ceil() as usize
}

/// Samples `ceil(ratio × n)` pseudo-absences inside the buffered bbox,
/// strictly farther than `exclusion_km` from every presence, and on land.
pub fn sample_pseudo_absences(
    presences: &[LatLon],
    mask: &LandMask,
    params: &SamplingParams,
) -> Result<Vec<SamplePoint>, SamplingError> {
    if !(params.ratio > 0.0) || !params.ratio.is_finite() {
        return Err(SamplingError::InvalidParameter(format!("ratio = {}", params.ratio)));
    }
    if !(params.exclusion_km >= 0.0) || !params.exclusion_km.is_finite() {
        return Err(SamplingError::InvalidParameter(format!("exclusion_km = {}", params.exclusion_km)));
    }
    let bbox = buffered_bbox(presences, params.buffer_deg)?;
    let target = target_count(presences.len(), params.ratio);
    let budget = REJECTION_BUDGET_FACTOR * target;
    if !mask.intersects(&bbox) {
        return Err(SamplingError::InsufficientLand { accepted: 0, target, attempts: 0 });
    }
    let index = PresenceIndex::new(presences);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::with_capacity(target);
    let mut attempts = 0;
    while out.len() < target {
        if attempts == budget {
            return Err(SamplingError::InsufficientLand { accepted: out.len(), target, attempts });
        }
        attempts += 1;
        let lat = rng.random_range(bbox.lat_min..=bbox.lat_max);
        let lon = rng.random_range(bbox.lon_min..=bbox.lon_max);
        let q = LatLon::new(lat, lon);
        if index.any_within(q, params.exclusion_km) || !mask.point_on_land(q) {
            continue;
        }
        out.push(SamplePoint::absence(lat, lon));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask(lat0: f64, lat1: f64, lon0: f64, lon1: f64) -> LandMask {
        LandMask::new(vec![LandPolygon::new(
            vec![[lon0, lat0], [lon1, lat0], [lon1, lat1], [lon0, lat1], [lon0, lat0]],
            vec![],
        )
        .unwrap()])
    }

    #[test]
    fn bbox_examples() {
        let b = buffered_bbox(&[LatLon::new(52.0, 13.0)], 1.0).unwrap();
        assert_eq!((b.lat_min, b.lat_max, b.lon_min, b.lon_max), (51.0, 53.0, 12.0, 14.0));
        let b = buffered_bbox(&[LatLon::new(0.0, 0.0), LatLon::new(2.0, 3.0)], 1.0).unwrap();
        assert_eq!((b.lat_min, b.lat_max, b.lon_min, b.lon_max), (-1.0, 3.0, -1.0, 4.0));
        let b = buffered_bbox(&[LatLon::new(89.5, 0.0)], 1.0).unwrap();
        assert_eq!(b.lat_max, 90.0);
        assert!(matches!(buffered_bbox(&[], 1.0), Err(SamplingError::EmptyPresences)));
        assert!(matches!(
            buffered_bbox(&[LatLon::new(0.0, 179.5)], 1.0),
            Err(SamplingError::Antimeridian { .. })
        ));
    }

    #[test]
    fn ten_presences_give_twenty_absences() {
        let presences: Vec<LatLon> = (0..10).map(|i| LatLon::new(50.0 + 0.1 * i as f64, 10.0)).collect();
        let mask = square_mask(40.0, 60.0, 0.0, 20.0);
        let params = SamplingParams { seed: 3, ..Default::default() };
        let pts = sample_pseudo_absences(&presences, &mask, &params).unwrap();
        assert_eq!(pts.len(), 20);
        assert!(pts.iter().all(|p| p.presence == 0));
        for q in &pts {
            let d = presences.iter().map(|p| haversine_km(*p, q.location())).fold(f64::INFINITY, f64::min);
            assert!(d > 5.0);
        }
    }

    #[test]
    fn all_ocean_mask_fails() {
        let presences = [LatLon::new(50.0, 10.0)];
        let err = sample_pseudo_absences(&presences, &LandMask::default(), &SamplingParams::default()).unwrap_err();
        assert!(matches!(err, SamplingError::InsufficientLand { accepted: 0, .. }));
    }

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        let presences = [LatLon::new(50.0, 10.0), LatLon::new(50.5, 10.5)];
        let mask = square_mask(40.0, 60.0, 0.0, 20.0);
        let p = |seed| SamplingParams { seed, ..Default::default() };
        let a = sample_pseudo_absences(&presences, &mask, &p(1)).unwrap();
        let b = sample_pseudo_absences(&presences, &mask, &p(1)).unwrap();
        let c = sample_pseudo_absences(&presences, &mask, &p(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn index_matches_brute_force() {
        let presences: Vec<LatLon> =
            (0..200).map(|i| LatLon::new(45.0 + (i % 20) as f64 * 0.07, 8.0 + (i / 20) as f64 * 0.09)).collect();
        let idx = PresenceIndex::new(&presences);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5000 {
            let q = LatLon::new(rng.random_range(44.0..47.5), rng.random_range(7.0..10.0));
            for r in [1.0, 5.0, 12.0] {
                assert_eq!(idx.any_within(q, r), idx.brute_force_within(q, r));
            }
        }
    }

    #[test]
    fn high_latitude_falls_back_to_brute_force() {
        let presences = [LatLon::new(88.95, 0.0)];
        let idx = PresenceIndex::new(&presences);
        assert!(idx.any_within(LatLon::new(88.95, 1.0), 5.0));
        assert!(!idx.any_within(LatLon::new(88.0, 0.0), 5.0));
    }
}
