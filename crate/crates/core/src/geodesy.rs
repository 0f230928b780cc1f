//! Great-circle geometry on a spherical Earth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius, kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub const KM_PER_MILE: f64 = 1.609344;

/// Mean vectors shorter than this are treated as having no direction.
const MIN_MEAN_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("midpoint is undefined: point set cancels out on the sphere")]
    DegenerateMidpoint,
    #[error("no regions with centroids to assign against")]
    NoRegions,
}

/// A WGS84 coordinate in degrees. Longitude is kept in [-180, 180).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidCoordinate { lat, lon });
        }
        Ok(Self {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    fn to_unit_vector(self) -> [f64; 3] {
        let (lat, lon) = (self.lat.to_radians(), self.lon.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }
}

fn normalize_lon(lon: f64) -> f64 {
    if (-180.0..180.0).contains(&lon) {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360.0 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// A named spatial bucket (state, country, ...) with an optional centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub key: String,
    pub centroid: Option<GeoPoint>,
}

impl Region {
    pub fn new(key: impl Into<String>, centroid: Option<GeoPoint>) -> Self {
        Self {
            key: key.into(),
            centroid,
        }
    }
}

/// Great-circle distance in kilometers.
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Curvature-aware center of a point set: the normalized mean of unit vectors.
pub fn midpoint(points: &[GeoPoint]) -> Result<GeoPoint, GeoError> {
    if points.is_empty() {
        return Err(GeoError::DegenerateMidpoint);
    }
    if points.iter().all(|p| *p == points[0]) {
        return Ok(points[0]);
    }
    let mut sum = [0.0f64; 3];
    for p in points {
        let v = p.to_unit_vector();
        sum[0] += v[0];
        sum[1] += v[1];
        sum[2] += v[2];
    }
    let n = points.len() as f64;
    let mean = [sum[0] / n, sum[1] / n, sum[2] / n];
    let norm = (mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]).sqrt();
    if norm < MIN_MEAN_NORM {
        return Err(GeoError::DegenerateMidpoint);
    }
    let lat = (mean[2] / norm).clamp(-1.0, 1.0).asin().to_degrees();
    let lon = mean[1].atan2(mean[0]).to_degrees();
    GeoPoint::new(lat, lon)
}

/// Nearest-centroid region; ties go to the lexicographically smallest key.
/// Regions without a centroid are ignored.
pub fn assign_region(point: GeoPoint, regions: &[Region]) -> Result<&Region, GeoError> {
    let mut best: Option<(&Region, f64)> = None;
    for region in regions {
        let Some(centroid) = region.centroid else {
            continue;
        };
        let d = haversine(point, centroid);
        best = match best {
            Some((cur, cur_d)) if cur_d < d || (cur_d == d && cur.key <= region.key) => {
                Some((cur, cur_d))
            }
            _ => Some((region, d)),
        };
    }
    best.map(|(r, _)| r).ok_or(GeoError::NoRegions)
}

/// Loads a `key,lat,lon` centroid table.
pub fn read_region_table<R: std::io::Read>(reader: R) -> Result<Vec<Region>, RegionTableError> {
    #[derive(Deserialize)]
    struct Row {
        key: String,
        lat: f64,
        lon: f64,
    }
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(reader)
        .deserialize::<Row>()
        .enumerate()
    {
        let row = row?;
        if row.key.trim().is_empty() {
            return Err(RegionTableError::EmptyKey(i + 2));
        }
        out.push(Region::new(row.key, Some(GeoPoint::new(row.lat, row.lon)?)));
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum RegionTableError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("empty region key on line {0}")]
    EmptyKey(usize),
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn haversine_closed_forms() {
        assert_eq!(haversine(p(0.0, 0.0), p(0.0, 0.0)), 0.0);
        let quarter = EARTH_RADIUS_KM * std::f64::consts::FRAC_PI_2;
        assert!((haversine(p(0.0, 0.0), p(0.0, 90.0)) - quarter).abs() < 1e-9);
        assert!((haversine(p(0.0, 0.0), p(0.0, 90.0)) - 10007.54).abs() < 0.01);
        assert!((haversine(p(0.0, 0.0), p(1.0, 0.0)) - 111.195).abs() < 0.001);
    }

    #[test]
    fn antipodes_do_not_nan() {
        let d = haversine(p(0.0, 0.0), p(0.0, 180.0));
        assert!((d - EARTH_RADIUS_KM * std::f64::consts::PI).abs() < 1e-6);
        let d = haversine(p(90.0, 0.0), p(-90.0, 0.0));
        assert!(d.is_finite());
    }

    #[test]
    fn longitude_is_normalized() {
        assert_eq!(p(0.0, 180.0).lon(), -180.0);
        assert_eq!(p(0.0, 190.0).lon(), -170.0);
        assert_eq!(p(0.0, -190.0).lon(), 170.0);
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn midpoint_cases() {
        assert_eq!(midpoint(&[p(12.5, -3.0)]).unwrap(), p(12.5, -3.0));
        let m = midpoint(&[p(0.0, 0.0), p(0.0, 90.0)]).unwrap();
        assert!(m.lat().abs() < 1e-9 && (m.lon() - 45.0).abs() < 1e-9);
        assert_eq!(
            midpoint(&[p(0.0, 0.0), p(0.0, 180.0)]),
            Err(GeoError::DegenerateMidpoint)
        );
        assert_eq!(midpoint(&[]), Err(GeoError::DegenerateMidpoint));
    }

    #[test]
    fn region_assignment() {
        let regions = vec![
            Region::new("TX", Some(p(31.5, -99.3))),
            Region::new("NY", Some(p(42.9, -75.5))),
        ];
        assert_eq!(assign_region(p(40.75, -74.0), &regions).unwrap().key, "NY");
        assert_eq!(assign_region(p(31.5, -99.3), &regions).unwrap().key, "TX");

        let tied = vec![
            Region::new("AB", Some(p(0.0, 1.0))),
            Region::new("AA", Some(p(0.0, -1.0))),
        ];
        assert_eq!(assign_region(p(0.0, 0.0), &tied).unwrap().key, "AA");
        assert_eq!(assign_region(p(0.0, 0.0), &[]), Err(GeoError::NoRegions));
        assert_eq!(
            assign_region(p(0.0, 0.0), &[Region::new("X", None)]),
            Err(GeoError::NoRegions)
        );
    }

    #[test]
    fn region_table_parses() {
        let csv = "key,lat,lon\nNY,42.9,-75.5\nTX,31.5,-99.3\n";
        let regions = read_region_table(csv.as_bytes()).unwrap();
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[1].key, "TX");
        assert!(read_region_table("key,lat,lon\nNY,95,0\n".as_bytes()).is_err());
    }

    fn point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -180.0f64..180.0).prop_map(|(a, b)| p(a, b))
    }

    proptest! {
        #[test]
        fn haversine_is_a_metric(a in point(), b in point(), c in point()) {
            prop_assert!(haversine(a, b) >= 0.0);
            prop_assert!((haversine(a, b) - haversine(b, a)).abs() < 1e-9);
            prop_assert!(haversine(a, a) == 0.0);
            prop_assert!(haversine(a, c) <= haversine(a, b) + haversine(b, c) + 1e-9);
        }

        #[test]
        fn haversine_rotation_invariant(a in point(), b in point(), shift in -360.0f64..360.0) {
            let ar = p(a.lat(), a.lon() + shift);
            let br = p(b.lat(), b.lon() + shift);
            prop_assert!((haversine(a, b) - haversine(ar, br)).abs() < 1e-9);
        }

        #[test]
        fn midpoint_permutation_invariant(pts in prop::collection::vec(point(), 1..12)) {
            let mut rev = pts.clone();
            rev.reverse();
            match (midpoint(&pts), midpoint(&rev)) {
                (Ok(m1), Ok(m2)) => prop_assert!(haversine(m1, m2) < 1e-6),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "degeneracy depends on order"),
            }
        }

        #[test]
        fn midpoint_of_identical_points(a in point(), n in 1usize..10) {
            let m = midpoint(&vec![a; n]).unwrap();
            prop_assert!(haversine(m, a) < 1e-6);
        }
    }
}
