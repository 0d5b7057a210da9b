//! Flat-earth helpers for regional ROIs.

/// Kilometres per degree of latitude.
pub const KM_PER_DEG_LAT: f64 = 111.32;
/// Kilometres per nautical mile; one knot is one nautical mile per hour.
pub const KM_PER_NM: f64 = 1.852;

/// Equirectangular projection anchored at `(lat0, lon0)`: x east, y north, km.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalProjection {
    pub lat0: f64,
    pub lon0: f64,
    km_per_deg_lon: f64,
}

impl LocalProjection {
    pub fn new(lat0: f64, lon0: f64) -> Self {
        LocalProjection { lat0, lon0, km_per_deg_lon: KM_PER_DEG_LAT * lat0.to_radians().cos() }
    }

    pub fn to_km(&self, lat: f64, lon: f64) -> (f64, f64) {
        ((lon - self.lon0) * self.km_per_deg_lon, (lat - self.lat0) * KM_PER_DEG_LAT)
    }

    /// Inverse of [`to_km`](Self::to_km); returns `(lat, lon)`.
    pub fn from_km(&self, x: f64, y: f64) -> (f64, f64) {
        (self.lat0 + y / KM_PER_DEG_LAT, self.lon0 + x / self.km_per_deg_lon)
    }

    pub fn distance_km(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let (ax, ay) = self.to_km(a.0, a.1);
        let (bx, by) = self.to_km(b.0, b.1);
        (ax - bx).hypot(ay - by)
    }
}

/// Compass bearing (degrees clockwise from north, `[0, 360)`) of a km displacement.
pub fn bearing_deg(dx_east: f64, dy_north: f64) -> f64 {
    dx_east.atan2(dy_north).to_degrees().rem_euclid(360.0)
}

/// Unit displacement `(east, north)` for a compass bearing.
pub fn heading_vector(bearing: f64) -> (f64, f64) {
    let r = bearing.to_radians();
    (r.sin(), r.cos())
}

/// Signed shortest-arc difference `b - a` in `(-180, 180]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Interpolates from `a` toward `b` along the shortest arc.
pub fn interp_angle(a: f64, b: f64, frac: f64) -> f64 {
    (a + frac * angle_diff(a, b)).rem_euclid(360.0)
}
