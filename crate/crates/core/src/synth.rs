//! Labelled synthetic AIS scenarios.
//!
//! Vessels follow waypoint polylines (with a per-vessel lateral lane
//! offset) or circle inside loop zones at constant speed. Fixes are emitted
//! every `dt` seconds with Gaussian position, speed and course noise, then
//! thinned by dropout gaps.
//!
//! Scenario files use the configuration syntax of [`crate::config`]:
//!
//! ```text
//! [scenario]
//! seed = 7
//! start_time = 1700000000
//!
//! [roi]
//! lat_min = 45.0
//! ...
//!
//! [noise]
//! pos_km = 0.2
//! sog_knots = 0.3
//! cog_deg = 2
//! lane_km = 0.5
//!
//! [dropout]
//! p = 0.02          # chance a gap starts at any step
//! gap_min = 1       # gap length in steps
//! gap_max = 3
//!
//! [route.east]
//! waypoints = 45.5 4.6, 45.5 6.9
//!
//! [loop.harbour]
//! center = 46.3 5.0
//! radius_km = 3
//!
//! [class.cargo]
//! type = cargo
//! count = 100
//! speed = 15 18     # knots, uniform
//! duration_h = 5 24
//! behaviors = east, west
//! ```

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::{parse_roi, Reader};
use crate::error::{Error, Result};
use crate::geo::{angle_diff, bearing_deg, heading_vector, LocalProjection, KM_PER_NM};
use crate::ingest::{AisMessage, RoiConfig, Track, VesselType};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub name: String,
    /// `(lat, lon)` waypoints.
    pub waypoints: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopZone {
    pub name: String,
    pub center: (f64, f64),
    pub radius_km: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    pub vessel_type: VesselType,
    pub count: usize,
    /// Knots.
    pub speed: (f64, f64),
    pub duration_h: (f64, f64),
    /// Route or loop names, chosen uniformly per vessel.
    pub behaviors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub pos_km: f64,
    pub sog_knots: f64,
    pub cog_deg: f64,
    /// Half-width of a lane: each vessel keeps a fixed lateral offset drawn
    /// uniformly in `[-lane_km, lane_km]`.
    pub lane_km: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub p: f64,
    pub gap_min: usize,
    pub gap_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub roi: RoiConfig,
    pub routes: Vec<Route>,
    pub loops: Vec<LoopZone>,
    pub classes: Vec<ClassSpec>,
    pub noise: Noise,
    pub dropout: Dropout,
    pub start_time: i64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Anomaly {
    /// Shift every fix perpendicular to the mean heading; positive is starboard.
    Translate { km: f64 },
    /// Reverse course at the midpoint for this many minutes, then resume.
    UTurn { minutes: f64 },
    /// Reported speed raised by this many knots for one hour from the midpoint.
    SpeedSpike { knots: f64 },
    /// Shift the whole track by a fixed displacement.
    ZoneSwap { north_km: f64, east_km: f64 },
}

impl Anomaly {
    pub fn is_identity(&self) -> bool {
        match *self {
            Anomaly::Translate { km } => km == 0.0,
            Anomaly::UTurn { minutes } => minutes == 0.0,
            Anomaly::SpeedSpike { knots } => knots == 0.0,
            Anomaly::ZoneSwap { north_km, east_km } => north_km == 0.0 && east_km == 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrack {
    pub track: Track,
    pub label: VesselType,
    pub class: String,
    pub behavior: String,
    pub anomaly: Option<Anomaly>,
}

enum Path {
    Route { pts: Vec<(f64, f64)>, cum: Vec<f64> },
    Loop { center: (f64, f64), radius: f64 },
}

fn range_sample<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.roi.check()?;
        let bad = |m: String| Err(Error::Config(m));
        for r in &self.routes {
            if r.waypoints.len() < 2 {
                return bad(format!("route {} needs at least two waypoints", r.name));
            }
            if let Some(p) = r.waypoints.iter().find(|p| !self.roi.contains(p.0, p.1)) {
                return bad(format!("route {} waypoint {:?} lies outside the ROI", r.name, p));
            }
        }
        let proj = self.projection();
        for l in &self.loops {
            let (x, y) = proj.to_km(l.center.0, l.center.1);
            let inside = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)].iter().all(|(dx, dy)| {
                let (lat, lon) = proj.from_km(x + dx * l.radius_km, y + dy * l.radius_km);
                self.roi.contains(lat, lon)
            });
            if !(l.radius_km > 0.0) || !inside {
                return bad(format!("loop {} must have positive radius and stay inside the ROI", l.name));
            }
        }
        let n = &self.noise;
        if [n.pos_km, n.sog_knots, n.cog_deg, n.lane_km].iter().any(|s| !(*s >= 0.0)) {
            return bad("noise standard deviations must be >= 0".into());
        }
        let d = &self.dropout;
        if !(0.0..=1.0).contains(&d.p) || d.gap_min == 0 || d.gap_max < d.gap_min {
            return bad("dropout needs p in [0,1] and 1 <= gap_min <= gap_max".into());
        }
        for c in &self.classes {
            if c.behaviors.is_empty() {
                return bad(format!("class {} has no behaviors", c.name));
            }
            if let Some(b) = c.behaviors.iter().find(|b| self.behavior(b).is_none()) {
                return bad(format!("class {} refers to unknown behavior {b}", c.name));
            }
            if !(c.speed.0 > 0.0 && c.speed.1 >= c.speed.0 && c.speed.1 < self.roi.sog_max) {
                return bad(format!("class {} speed range {:?} must lie in (0, sog_max)", c.name, c.speed));
            }
            if !(c.duration_h.0 > 0.0 && c.duration_h.1 >= c.duration_h.0) {
                return bad(format!("class {} has an invalid duration range", c.name));
            }
        }
        Ok(())
    }

    fn projection(&self) -> LocalProjection {
        let (lat, lon) = self.roi.center();
        LocalProjection::new(lat, lon)
    }

    fn behavior(&self, name: &str) -> Option<Path> {
        let proj = self.projection();
        if let Some(r) = self.routes.iter().find(|r| r.name == name) {
            let pts: Vec<(f64, f64)> = r.waypoints.iter().map(|&(lat, lon)| proj.to_km(lat, lon)).collect();
            let mut cum = vec![0.0];
            for w in pts.windows(2) {
                cum.push(cum.last().unwrap() + (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1));
            }
            return Some(Path::Route { pts, cum });
        }
        self.loops
            .iter()
            .find(|l| l.name == name)
            .map(|l| Path::Loop { center: proj.to_km(l.center.0, l.center.1), radius: l.radius_km })
    }

    pub fn total_count(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    /// All vessels, in class order then vessel order. Vessel `v` draws from
    /// the `"vessel"` sub-stream of the seed with index `v`.
    pub fn generate(&self) -> Result<Vec<SynthTrack>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.total_count());
        let mut v = 0u64;
        for class in &self.classes {
            for _ in 0..class.count {
                out.push(self.vessel(class, v)?);
                v += 1;
            }
        }
        Ok(out)
    }

    fn vessel(&self, class: &ClassSpec, v: u64) -> Result<SynthTrack> {
        let mut rng = substream(self.seed, "vessel", v);
        let behavior = class.behaviors[rng.gen_range(0..class.behaviors.len())].clone();
        let path = self.behavior(&behavior).expect("validated");
        let speed = range_sample(&mut rng, class.speed);
        let duration_s = range_sample(&mut rng, class.duration_h) * 3600.0;
        let kmh = speed * KM_PER_NM;
        let dt = self.roi.dt;
        let lane = self.noise.lane_km * rng.gen_range(-1.0..=1.0);
        let t0 = self.start_time + dt * rng.gen_range(0..36);
        let (s0, total_s) = match &path {
            Path::Route { cum, .. } => {
                let len = *cum.last().unwrap();
                let need = kmh * duration_s / 3600.0;
                let s0 = if len > need { rng.gen_range(0.0..len - need) } else { 0.0 };
                (s0, duration_s.min((len - s0) / kmh * 3600.0))
            }
            Path::Loop { .. } => (rng.gen_range(0.0..360.0), duration_s),
        };
        let steps = (total_s / dt as f64).floor() as usize + 1;
        let proj = self.projection();
        let pos_noise = Normal::new(0.0, self.noise.pos_km).expect("sigma >= 0");
        let sog_noise = Normal::new(0.0, self.noise.sog_knots).expect("sigma >= 0");
        let cog_noise = Normal::new(0.0, self.noise.cog_deg).expect("sigma >= 0");
        let mmsi = 200_000_000 + v;

        let mut keep = vec![true; steps];
        let mut k = 1;
        while k + 1 < steps {
            if rng.gen::<f64>() < self.dropout.p {
                let len = rng.gen_range(self.dropout.gap_min..=self.dropout.gap_max);
                for slot in keep.iter_mut().skip(k).take(len.min(steps - 1 - k)) {
                    *slot = false;
                }
                k += len;
            } else {
                k += 1;
            }
        }

        let mut messages = Vec::with_capacity(steps);
        for (i, &kept) in keep.iter().enumerate() {
            let t = i as f64 * dt as f64;
            let ((x, y), heading) = match &path {
                Path::Route { pts, cum } => {
                    let s = s0 + kmh * t / 3600.0;
                    let seg = cum.windows(2).position(|w| s <= w[1]).unwrap_or(cum.len() - 2);
                    let (a, b) = (pts[seg], pts[seg + 1]);
                    let seg_len = cum[seg + 1] - cum[seg];
                    let f = if seg_len > 0.0 { ((s - cum[seg]) / seg_len).clamp(0.0, 1.0) } else { 0.0 };
                    let heading = bearing_deg(b.0 - a.0, b.1 - a.1);
                    let (sx, sy) = heading_vector(heading + 90.0);
                    ((a.0 + f * (b.0 - a.0) + lane * sx, a.1 + f * (b.1 - a.1) + lane * sy), heading)
                }
                Path::Loop { center, radius } => {
                    let theta = s0 + (kmh * t / 3600.0 / radius).to_degrees();
                    let (ux, uy) = heading_vector(theta);
                    ((center.0 + radius * ux, center.1 + radius * uy), (theta + 90.0).rem_euclid(360.0))
                }
            };
            // draw noise for every step so dropout does not shift later draws
            let (nx, ny) = (pos_noise.sample(&mut rng), pos_noise.sample(&mut rng));
            let (ns, nc) = (sog_noise.sample(&mut rng), cog_noise.sample(&mut rng));
            if !kept {
                continue;
            }
            let (lat, lon) = proj.from_km(x + nx, y + ny);
            messages.push(AisMessage {
                mmsi,
                timestamp: t0 + i as i64 * dt,
                lat,
                lon,
                sog: (speed + ns).clamp(0.0, self.roi.sog_max - 1e-6),
                cog: (heading + nc).rem_euclid(360.0),
                vessel_type: Some(class.vessel_type),
            });
        }
        Ok(SynthTrack {
            track: Track { id: v, mmsi, messages },
            label: class.vessel_type,
            class: class.name.clone(),
            behavior,
            anomaly: None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Reader::parse(text)?;
        let seed = r.take_or("scenario", "seed", 0u64)?;
        let start_time = r.take_or("scenario", "start_time", 1_700_000_000i64)?;
        let roi = parse_roi(&mut r, "roi")?;
        let noise = Noise {
            pos_km: r.take_or("noise", "pos_km", 0.0)?,
            sog_knots: r.take_or("noise", "sog_knots", 0.0)?,
            cog_deg: r.take_or("noise", "cog_deg", 0.0)?,
            lane_km: r.take_or("noise", "lane_km", 0.0)?,
        };
        let dropout = Dropout {
            p: r.take_or("dropout", "p", 0.0)?,
            gap_min: r.take_or("dropout", "gap_min", 1)?,
            gap_max: r.take_or("dropout", "gap_max", 1)?,
        };
        let pair = |v: Vec<f64>, what: &str| -> Result<(f64, f64)> {
            match v.as_slice() {
                [a] => Ok((*a, *a)),
                [a, b] => Ok((*a, *b)),
                _ => Err(Error::Config(format!("{what} takes one or two numbers"))),
            }
        };
        let mut routes = Vec::new();
        for sec in r.sections_with_prefix("route.") {
            let flat = r.take_list(&sec, "waypoints")?.ok_or_else(|| Error::Config(format!("[{sec}] needs waypoints")))?;
            if flat.len() % 2 != 0 {
                return Err(Error::Config(format!("[{sec}] waypoints must be lat lon pairs")));
            }
            routes.push(Route { name: sec["route.".len()..].to_string(), waypoints: flat.chunks(2).map(|c| (c[0], c[1])).collect() });
        }
        let mut loops = Vec::new();
        for sec in r.sections_with_prefix("loop.") {
            let c = r.take_list(&sec, "center")?.unwrap_or_default();
            loops.push(LoopZone {
                name: sec["loop.".len()..].to_string(),
                center: pair(c, &format!("[{sec}] center"))?,
                radius_km: r.require(&sec, "radius_km")?,
            });
        }
        let mut classes = Vec::new();
        for sec in r.sections_with_prefix("class.") {
            let behaviors: String = r.require(&sec, "behaviors")?;
            classes.push(ClassSpec {
                name: sec["class.".len()..].to_string(),
                vessel_type: r.require(&sec, "type")?,
                count: r.require(&sec, "count")?,
                speed: pair(r.take_list(&sec, "speed")?.unwrap_or_default(), &format!("[{sec}] speed"))?,
                duration_h: pair(r.take_list(&sec, "duration_h")?.unwrap_or_default(), &format!("[{sec}] duration_h"))?,
                behaviors: behaviors.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            });
        }
        r.finish()?;
        let s = Scenario { roi, routes, loops, classes, noise, dropout, start_time, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Scenario::parse(&std::fs::read_to_string(path)?)
    }
}

fn mean_heading(track: &Track, proj: &LocalProjection) -> f64 {
    let (Some(a), Some(b)) = (track.messages.first(), track.messages.last()) else { return 0.0 };
    let (ax, ay) = proj.to_km(a.lat, a.lon);
    let (bx, by) = proj.to_km(b.lat, b.lon);
    if (bx - ax).hypot(by - ay) > 1e-6 {
        return bearing_deg(bx - ax, by - ay);
    }
    let (sx, sy) = track.messages.iter().fold((0.0, 0.0), |(x, y), m| {
        let (e, n) = heading_vector(m.cog);
        (x + e, y + n)
    });
    if sx.hypot(sy) > 1e-9 {
        bearing_deg(sx, sy)
    } else {
        0.0
    }
}

fn shifted(track: &Track, proj: &LocalProjection, dx: f64, dy: f64) -> Vec<AisMessage> {
    track
        .messages
        .iter()
        .map(|m| {
            let (x, y) = proj.to_km(m.lat, m.lon);
            let (lat, lon) = proj.from_km(x + dx, y + dy);
            AisMessage { lat, lon, ..*m }
        })
        .collect()
}

/// Applies `anomaly`, keeping ids, timestamps and labels. Fails with a
/// domain error if a perturbed fix would leave the ROI.
pub fn inject_anomaly(track: &Track, anomaly: Anomaly, roi: &RoiConfig) -> Result<Track> {
    if anomaly.is_identity() || track.messages.is_empty() {
        return Ok(track.clone());
    }
    let (clat, clon) = roi.center();
    let proj = LocalProjection::new(clat, clon);
    let messages = match anomaly {
        Anomaly::Translate { km } => {
            let (sx, sy) = heading_vector(mean_heading(track, &proj) + 90.0);
            shifted(track, &proj, km * sx, km * sy)
        }
        Anomaly::ZoneSwap { north_km, east_km } => shifted(track, &proj, east_km, north_km),
        Anomaly::UTurn { minutes } => {
            let msgs = &track.messages;
            let t_mid = msgs[0].timestamp + track.duration() / 2;
            let span = (minutes * 60.0).round() as i64;
            // Position at time t follows the original path at time tau(t):
            // forward, then backwards during the span, then forward again.
            let tau = |t: i64| {
                if t < t_mid {
                    t
                } else if t < t_mid + span {
                    t_mid - (t - t_mid)
                } else {
                    t - 2 * span
                }
            };
            let at = |t: i64| -> AisMessage {
                let t = t.clamp(msgs[0].timestamp, msgs[msgs.len() - 1].timestamp);
                let i = msgs.partition_point(|m| m.timestamp <= t).max(1) - 1;
                if i + 1 < msgs.len() && msgs[i].timestamp != t {
                    crate::ingest::interpolate(&msgs[i], &msgs[i + 1], t)
                } else {
                    msgs[i]
                }
            };
            msgs.iter()
                .map(|m| {
                    let src = at(tau(m.timestamp));
                    let back = m.timestamp >= t_mid && m.timestamp < t_mid + span;
                    let cog = if back { (src.cog + 180.0).rem_euclid(360.0) } else { src.cog };
                    AisMessage { lat: src.lat, lon: src.lon, sog: src.sog, cog, ..*m }
                })
                .collect()
        }
        Anomaly::SpeedSpike { knots } => {
            let t_mid = track.messages[0].timestamp + track.duration() / 2;
            track
                .messages
                .iter()
                .map(|m| {
                    let hit = m.timestamp >= t_mid && m.timestamp < t_mid + 3600;
                    AisMessage { sog: if hit { (m.sog + knots).max(0.0) } else { m.sog }, ..*m }
                })
                .collect()
        }
    };
    if let Some(m) = messages.iter().find(|m| !roi.contains(m.lat, m.lon) || m.sog >= roi.sog_max) {
        return Err(Error::Domain(format!("anomaly moves track {} outside the ROI at t={}", track.id, m.timestamp)));
    }
    Ok(Track { messages, ..track.clone() })
}

impl SynthTrack {
    pub fn with_anomaly(&self, anomaly: Anomaly, roi: &RoiConfig) -> Result<SynthTrack> {
        Ok(SynthTrack { track: inject_anomaly(&self.track, anomaly, roi)?, anomaly: Some(anomaly), ..self.clone() })
    }
}

/// Largest course change between consecutive fixes, degrees.
pub fn max_turn(track: &Track) -> f64 {
    track.messages.windows(2).map(|w| angle_diff(w[0].cog, w[1].cog).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::KM_PER_DEG_LAT;
    use crate::ingest::{clean_tracks, IngestConfig, ParseReport};

    fn roi() -> RoiConfig {
        RoiConfig::from_resolution((45.0, 46.0), (5.0, 6.5), 1.0, 1.0, 5.0, 30.0).unwrap()
    }

    fn scenario(p: f64, noise: f64) -> Scenario {
        Scenario {
            roi: roi(),
            routes: vec![Route { name: "north".into(), waypoints: vec![(45.1, 5.5), (45.9, 5.5)] }],
            loops: vec![LoopZone { name: "pond".into(), center: (45.5, 6.0), radius_km: 3.0 }],
            classes: vec![
                ClassSpec {
                    name: "cargo".into(),
                    vessel_type: VesselType::Cargo,
                    count: 3,
                    speed: (10.0, 10.0),
                    duration_h: (4.0, 4.0),
                    behaviors: vec!["north".into()],
                },
                ClassSpec {
                    name: "tug".into(),
                    vessel_type: VesselType::Tug,
                    count: 2,
                    speed: (5.0, 6.0),
                    duration_h: (24.0, 24.0),
                    behaviors: vec!["pond".into()],
                },
            ],
            noise: Noise { pos_km: noise, sog_knots: noise, cog_deg: noise, lane_km: noise },
            dropout: Dropout { p, gap_min: 1, gap_max: 1 },
            start_time: 1_700_000_000,
            seed: 3,
        }
    }

    #[test]
    fn noiseless_route_is_evenly_spaced_and_collinear() {
        let tracks = scenario(0.0, 0.0).generate().unwrap();
        let m = &tracks[0].track.messages;
        assert_eq!(m.len(), 25);
        let step_km = 10.0 * KM_PER_NM / 6.0;
        for w in m.windows(2) {
            assert!(((w[1].lat - w[0].lat) * KM_PER_DEG_LAT - step_km).abs() < 1e-6);
            assert!((w[1].lon - 5.5).abs() < 1e-9);
            assert_eq!(w[1].timestamp - w[0].timestamp, 600);
        }
        assert!(m.iter().all(|x| x.sog == 10.0 && x.cog == 0.0));
    }

    #[test]
    fn dropout_matches_binomial_rate() {
        let mut s = scenario(0.5, 0.0);
        s.classes.truncate(1);
        s.classes[0].count = 1;
        s.routes[0].waypoints = vec![(45.01, 5.2), (45.99, 5.2), (45.01, 5.3), (45.99, 5.3), (45.01, 5.4), (45.99, 5.4)];
        s.classes[0].duration_h = (23.9, 23.9);
        let t = &s.generate().unwrap()[0].track;
        // first and last kept, 142 interior steps thinned independently
        let kept = t.messages.len() as f64 - 2.0;
        let (n, p) = (142.0, 0.5);
        assert!((kept - n * p).abs() <= 3.0 * (n * p * (1.0 - p)).sqrt(), "{kept}");
    }

    #[test]
    fn same_seed_same_tracks_and_class_speeds() {
        let s = scenario(0.1, 0.3);
        let a = s.generate().unwrap();
        assert_eq!(a, s.generate().unwrap());
        let tug: Vec<f64> = a.iter().filter(|t| t.label == VesselType::Tug).flat_map(|t| t.track.messages.iter().map(|m| m.sog)).collect();
        let mean = tug.iter().sum::<f64>() / tug.len() as f64;
        assert!((5.0 - 0.3 * 3.0..6.0 + 0.3 * 3.0).contains(&mean));
    }

    #[test]
    fn generated_tracks_survive_the_pipeline() {
        let s = scenario(0.05, 0.2);
        let tracks = s.generate().unwrap();
        let msgs: Vec<AisMessage> = tracks.iter().flat_map(|t| t.track.messages.clone()).collect();
        let n = tracks.len();
        let (clean, stats) = clean_tracks(ParseReport { messages: msgs, skipped: 0 }, &s.roi, &IngestConfig::default());
        assert_eq!(stats.dropped_invalid, 0);
        // 24 h tugs stay whole; nothing is rejected
        assert_eq!(clean.len(), n);
    }

    #[test]
    fn anomalies() {
        let s = scenario(0.0, 0.0);
        let t = &s.generate().unwrap()[0].track;
        for a in [
            Anomaly::Translate { km: 0.0 },
            Anomaly::UTurn { minutes: 0.0 },
            Anomaly::SpeedSpike { knots: 0.0 },
            Anomaly::ZoneSwap { north_km: 0.0, east_km: 0.0 },
        ] {
            assert_eq!(&inject_anomaly(t, a, &s.roi).unwrap(), t);
        }
        // northbound: starboard is east
        let moved = inject_anomaly(t, Anomaly::Translate { km: 10.0 }, &s.roi).unwrap();
        let proj = LocalProjection::new(45.5, 5.75);
        for (a, b) in t.messages.iter().zip(&moved.messages) {
            let (ax, ay) = proj.to_km(a.lat, a.lon);
            let (bx, by) = proj.to_km(b.lat, b.lon);
            assert!((bx - ax - 10.0).abs() < 1e-6 && (by - ay).abs() < 1e-6);
            assert_eq!(a.timestamp, b.timestamp);
        }
        let u = inject_anomaly(t, Anomaly::UTurn { minutes: 30.0 }, &s.roi).unwrap();
        let reversed = u.messages.iter().filter(|m| (m.cog - 180.0).abs() < 1e-9).count();
        assert_eq!(reversed, 3);
        assert!(max_turn(&u) > 170.0);
        assert!(matches!(inject_anomaly(t, Anomaly::ZoneSwap { north_km: 0.0, east_km: 500.0 }, &s.roi), Err(Error::Domain(_))));
    }

    #[test]
    fn scenario_file_round_trip() {
        let text = "\
[scenario]
seed = 3
[roi]
lat_min = 45
lat_max = 46
lon_min = 5
lon_max = 6.5
[noise]
pos_km = 0.1
[dropout]
p = 0.1
gap_min = 1
gap_max = 2
[route.north]
waypoints = 45.1 5.5, 45.9 5.5
[loop.pond]
center = 45.5 6.0
radius_km = 3
[class.cargo]
type = cargo
count = 2
speed = 10 12
duration_h = 4 6
behaviors = north, pond
";
        let s = Scenario::parse(text).unwrap();
        assert_eq!(s.routes[0].waypoints, vec![(45.1, 5.5), (45.9, 5.5)]);
        assert_eq!(s.classes[0].behaviors, vec!["north", "pond"]);
        assert_eq!(s.generate().unwrap().len(), 2);
        assert!(Scenario::parse(&text.replace("behaviors = north, pond", "behaviors = nowhere")).is_err());
        assert!(Scenario::parse(&text.replace("45.9 5.5", "47.9 5.5")).is_err());
        assert!(Scenario::parse(&format!("{text}bogus = 1\n")).is_err());
    }
}
