//! Great-circle distance and the small amount of planar geometry needed for
//! geofence crossings.

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        GeoPoint { lat, lon }
    }
}

/// Haversine distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Point at `distance_m` from `origin` along the initial bearing `bearing_deg`.
pub fn destination(origin: GeoPoint, bearing_deg: f64, distance_m: f64) -> GeoPoint {
    let lat1 = origin.lat.to_radians();
    let lon1 = origin.lon.to_radians();
    let brg = bearing_deg.to_radians();
    let dr = distance_m / EARTH_RADIUS_M;
    let lat2 = (lat1.sin() * dr.cos() + lat1.cos() * dr.sin() * brg.cos()).asin();
    let lon2 = lon1 + (brg.sin() * dr.sin() * lat1.cos()).atan2(dr.cos() - lat1.sin() * lat2.sin());
    GeoPoint::new(lat2.to_degrees(), lon2.to_degrees())
}

/// Initial bearing from `a` to `b` in degrees clockwise from north.
pub fn bearing_deg(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    y.atan2(x).to_degrees().rem_euclid(360.0)
}

/// Equirectangular projection to meters (east, north) around `origin`.
/// Accurate to well under a meter over a few hundred meters.
pub fn local_xy(origin: GeoPoint, p: GeoPoint) -> (f64, f64) {
    let mean_lat = ((origin.lat + p.lat) / 2.0).to_radians();
    let x = (p.lon - origin.lon).to_radians() * mean_lat.cos() * EARTH_RADIUS_M;
    let y = (p.lat - origin.lat).to_radians() * EARTH_RADIUS_M;
    (x, y)
}

/// Parameters `s` in [0, 1] at which the segment a→b (local meters, circle
/// centered at the origin) crosses the circle of radius `r`, as
/// (entry, exit). Either may be absent.
pub fn segment_circle_crossings(a: (f64, f64), b: (f64, f64), r: f64) -> (Option<f64>, Option<f64>) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let qa = dx * dx + dy * dy;
    let qb = 2.0 * (a.0 * dx + a.1 * dy);
    let qc = a.0 * a.0 + a.1 * a.1 - r * r;
    if qa == 0.0 {
        return (None, None);
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return (None, None);
    }
    let sq = disc.sqrt();
    let s1 = (-qb - sq) / (2.0 * qa);
    let s2 = (-qb + sq) / (2.0 * qa);
    let start_inside = qc <= 0.0;
    let entry = (!start_inside && (0.0..=1.0).contains(&s1)).then_some(s1);
    let exit = if start_inside {
        (s2 > 0.0 && s2 <= 1.0).then_some(s2)
    } else {
        // a tangent touch is not an exit
        (entry.is_some() && s2 > s1 && s2 <= 1.0).then_some(s2)
    };
    (entry, exit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn around(points: impl IntoIterator<Item = GeoPoint>) -> Self {
        let mut bb = BoundingBox {
            min_lat: f64::INFINITY,
            max_lat: f64::NEG_INFINITY,
            min_lon: f64::INFINITY,
            max_lon: f64::NEG_INFINITY,
        };
        for p in points {
            bb.min_lat = bb.min_lat.min(p.lat);
            bb.max_lat = bb.max_lat.max(p.lat);
            bb.min_lon = bb.min_lon.min(p.lon);
            bb.max_lon = bb.max_lon.max(p.lon);
        }
        bb
    }

    /// Grow the box by `meters` on every side.
    pub fn padded(&self, meters: f64) -> Self {
        let dlat = (meters / EARTH_RADIUS_M).to_degrees();
        let widest = self.min_lat.abs().max(self.max_lat.abs()).min(89.0);
        let dlon = (meters / (EARTH_RADIUS_M * widest.to_radians().cos())).to_degrees();
        BoundingBox {
            min_lat: self.min_lat - dlat,
            max_lat: self.max_lat + dlat,
            min_lon: self.min_lon - dlon,
            max_lon: self.max_lon + dlon,
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat) && (self.min_lon..=self.max_lon).contains(&p.lon)
    }
}
