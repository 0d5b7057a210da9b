//! AIS record parsing, validation, track building and resampling.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{interp_angle, KM_PER_DEG_LAT};

pub const CSV_HEADER: &str = "mmsi,timestamp,lat,lon,sog,cog,vessel_type";
pub const TRACK_CSV_HEADER: &str = "track_id,mmsi,timestamp,lat,lon,sog,cog,vessel_type";

const HOUR: i64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VesselType {
    Cargo,
    Passenger,
    Tanker,
    Tug,
    Other,
}

impl VesselType {
    /// The four classes the type identifier distinguishes.
    pub const CLASSES: [VesselType; 4] = [VesselType::Cargo, VesselType::Passenger, VesselType::Tanker, VesselType::Tug];

    pub fn as_str(self) -> &'static str {
        match self {
            VesselType::Cargo => "cargo",
            VesselType::Passenger => "passenger",
            VesselType::Tanker => "tanker",
            VesselType::Tug => "tug",
            VesselType::Other => "other",
        }
    }

    /// Position in [`CLASSES`](Self::CLASSES), if any.
    pub fn class_index(self) -> Option<usize> {
        VesselType::CLASSES.iter().position(|&c| c == self)
    }
}

impl fmt::Display for VesselType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VesselType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cargo" => Ok(VesselType::Cargo),
            "passenger" => Ok(VesselType::Passenger),
            "tanker" => Ok(VesselType::Tanker),
            "tug" => Ok(VesselType::Tug),
            "other" => Ok(VesselType::Other),
            other => Err(Error::Format(format!("unknown vessel type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AisMessage {
    pub mmsi: u64,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    /// Knots.
    pub sog: f64,
    /// Degrees clockwise from north.
    pub cog: f64,
    pub vessel_type: Option<VesselType>,
}

/// Time-ordered messages of one vessel.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub mmsi: u64,
    pub messages: Vec<AisMessage>,
}

impl Track {
    pub fn duration(&self) -> i64 {
        match (self.messages.first(), self.messages.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0,
        }
    }

    pub fn vessel_type(&self) -> Option<VesselType> {
        self.messages.iter().find_map(|m| m.vessel_type)
    }

    pub fn max_gap(&self) -> i64 {
        self.messages.windows(2).map(|w| w[1].timestamp - w[0].timestamp).max().unwrap_or(0)
    }
}

/// Region of interest and four-hot bin geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiConfig {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_bins: usize,
    pub lon_bins: usize,
    pub sog_bins: usize,
    pub cog_bins: usize,
    /// Knots; messages at or above are infeasible.
    pub sog_max: f64,
    /// Resampling period, seconds.
    pub dt: i64,
}

impl RoiConfig {
    /// Bin counts from target resolutions: position in km, SOG in knots,
    /// COG in degrees.
    pub fn from_resolution(
        lat: (f64, f64),
        lon: (f64, f64),
        pos_km: f64,
        sog_knots: f64,
        cog_deg: f64,
        sog_max: f64,
    ) -> Result<Self> {
        let center = 0.5 * (lat.0 + lat.1);
        let height = (lat.1 - lat.0) * KM_PER_DEG_LAT;
        let width = (lon.1 - lon.0) * KM_PER_DEG_LAT * center.to_radians().cos();
        let bins = |extent: f64, res: f64| ((extent / res) - 1e-9).ceil().max(1.0) as usize;
        let roi = RoiConfig {
            lat_min: lat.0,
            lat_max: lat.1,
            lon_min: lon.0,
            lon_max: lon.1,
            lat_bins: bins(height, pos_km),
            lon_bins: bins(width, pos_km),
            sog_bins: bins(sog_max, sog_knots),
            cog_bins: bins(360.0, cog_deg),
            sog_max,
            dt: 600,
        };
        roi.check()?;
        Ok(roi)
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.lat_min < self.lat_max
            && self.lon_min < self.lon_max
            && self.lat_min >= -90.0
            && self.lat_max <= 90.0
            && self.lon_min >= -180.0
            && self.lon_max <= 180.0
            && self.sog_max > 0.0
            && self.dt > 0;
        if !ok {
            return Err(Error::Config(format!("invalid ROI bounds: {self:?}")));
        }
        if [self.lat_bins, self.lon_bins, self.sog_bins, self.cog_bins].contains(&0) {
            return Err(Error::Config("all bin counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.lat_min + self.lat_max), 0.5 * (self.lon_min + self.lon_max))
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }
}

/// Track-construction thresholds (seconds unless noted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub gap_split: i64,
    pub min_duration: i64,
    pub max_duration: i64,
    pub max_train_gap: i64,
    /// Knots.
    pub stationary_sog: f64,
    pub stationary_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            gap_split: 2 * HOUR,
            min_duration: 4 * HOUR,
            max_duration: 24 * HOUR,
            max_train_gap: HOUR,
            stationary_sog: 0.1,
            stationary_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    pub messages: Vec<AisMessage>,
    pub skipped: usize,
}

fn parse_row(fields: &[&str]) -> Option<AisMessage> {
    if fields.len() != 7 {
        return None;
    }
    let f = |i: usize| fields[i].trim().parse::<f64>().ok().filter(|v| v.is_finite());
    let vessel_type = match fields[6].trim() {
        "" => None,
        s => Some(s.parse().ok()?),
    };
    Some(AisMessage {
        mmsi: fields[0].trim().parse().ok()?,
        timestamp: fields[1].trim().parse().ok()?,
        lat: f(2)?,
        lon: f(3)?,
        sog: f(4)?,
        cog: f(5)?,
        vessel_type,
    })
}

/// Reads `mmsi,timestamp,lat,lon,sog,cog,vessel_type` rows. Malformed rows
/// are skipped and counted.
pub fn parse_csv<R: Read>(reader: R) -> Result<ParseReport> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::Format("missing CSV header".into())),
    };
    if header.trim() != CSV_HEADER {
        return Err(Error::Format(format!("expected header {CSV_HEADER:?}, got {:?}", header.trim())));
    }
    let mut report = ParseReport::default();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match parse_row(&fields) {
            Some(m) => report.messages.push(m),
            None => report.skipped += 1,
        }
    }
    Ok(report)
}

fn write_row<W: Write>(w: &mut W, m: &AisMessage) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{:.6},{:.6},{:.3},{:.3},{}",
        m.mmsi,
        m.timestamp,
        m.lat,
        m.lon,
        m.sog,
        m.cog,
        m.vessel_type.map(VesselType::as_str).unwrap_or("")
    )
}

pub fn write_csv<W: Write>(mut w: W, msgs: &[AisMessage]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for m in msgs {
        write_row(&mut w, m)?;
    }
    Ok(())
}

/// Track files carry a leading `track_id` column.
pub fn write_tracks_csv<W: Write>(mut w: W, tracks: &[Track]) -> Result<()> {
    writeln!(w, "{TRACK_CSV_HEADER}")?;
    for t in tracks {
        for m in &t.messages {
            write!(w, "{},", t.id)?;
            write_row(&mut w, m)?;
        }
    }
    Ok(())
}

/// Reads a track file; rows of one `track_id` must be contiguous.
pub fn read_tracks_csv<R: Read>(reader: R) -> Result<Vec<Track>> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines.next().transpose()?.ok_or_else(|| Error::Format("missing track CSV header".into()))?;
    if header.trim() != TRACK_CSV_HEADER {
        return Err(Error::Format(format!("expected header {TRACK_CSV_HEADER:?}, got {:?}", header.trim())));
    }
    let mut tracks: Vec<Track> = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("malformed track row {}", n + 2));
        let id: u64 = fields.first().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let msg = parse_row(&fields[1..]).ok_or_else(bad)?;
        match tracks.last_mut() {
            Some(t) if t.id == id => t.messages.push(msg),
            _ => {
                if tracks.iter().any(|t| t.id == id) {
                    return Err(Error::Format(format!("track {id} rows are not contiguous")));
                }
                tracks.push(Track { id, mmsi: msg.mmsi, messages: vec![msg] });
            }
        }
    }
    Ok(tracks)
}

/// Drops infeasible positions and kinematics.
pub fn validate(msgs: Vec<AisMessage>, roi: &RoiConfig) -> Vec<AisMessage> {
    msgs.into_iter()
        .filter(|m| {
            m.timestamp > 0
                && roi.contains(m.lat, m.lon)
                && m.sog >= 0.0
                && m.sog < roi.sog_max
                && (0.0..360.0).contains(&m.cog)
        })
        .collect()
}

/// Groups by vessel, orders by time, splits at long silences and cuts the
/// result into pieces of `[min_duration, max_duration]`.
pub fn build_tracks(msgs: Vec<AisMessage>, cfg: &IngestConfig) -> Vec<Track> {
    let mut by_vessel: BTreeMap<u64, Vec<AisMessage>> = BTreeMap::new();
    for m in msgs {
        by_vessel.entry(m.mmsi).or_default().push(m);
    }
    let mut out = Vec::new();
    for (mmsi, mut list) in by_vessel {
        // stable: first occurrence of a timestamp survives dedup
        list.sort_by_key(|m| m.timestamp);
        list.dedup_by_key(|m| m.timestamp);

        let mut segments: Vec<Vec<AisMessage>> = vec![Vec::new()];
        for m in list {
            let cur = segments.last_mut().expect("non-empty");
            if let Some(prev) = cur.last() {
                if m.timestamp - prev.timestamp > cfg.gap_split {
                    segments.push(vec![m]);
                    continue;
                }
            }
            cur.push(m);
        }
        for seg in segments {
            let mut piece: Vec<AisMessage> = Vec::new();
            for m in seg {
                if let Some(first) = piece.first() {
                    if m.timestamp - first.timestamp > cfg.max_duration {
                        push_piece(&mut out, mmsi, std::mem::take(&mut piece), cfg);
                    }
                }
                piece.push(m);
            }
            push_piece(&mut out, mmsi, piece, cfg);
        }
    }
    for (i, t) in out.iter_mut().enumerate() {
        t.id = i as u64;
    }
    out
}

fn push_piece(out: &mut Vec<Track>, mmsi: u64, messages: Vec<AisMessage>, cfg: &IngestConfig) {
    let track = Track { id: 0, mmsi, messages };
    if !track.messages.is_empty() && track.duration() >= cfg.min_duration {
        out.push(track);
    }
}

pub fn is_stationary(track: &Track, cfg: &IngestConfig) -> bool {
    if track.messages.is_empty() {
        return false;
    }
    let slow = track.messages.iter().filter(|m| m.sog < cfg.stationary_sog).count();
    slow as f64 / track.messages.len() as f64 > cfg.stationary_fraction
}

/// Drops moored / anchored tracks.
pub fn remove_stationary(tracks: Vec<Track>, cfg: &IngestConfig) -> Vec<Track> {
    tracks.into_iter().filter(|t| !is_stationary(t, cfg)).collect()
}

fn lerp(a: f64, b: f64, frac: f64) -> f64 {
    a + frac * (b - a)
}

/// Interpolates position and speed linearly and course along the shortest arc.
pub fn interpolate(a: &AisMessage, b: &AisMessage, t: i64) -> AisMessage {
    let span = (b.timestamp - a.timestamp) as f64;
    let frac = if span > 0.0 { (t - a.timestamp) as f64 / span } else { 0.0 };
    AisMessage {
        mmsi: a.mmsi,
        timestamp: t,
        lat: lerp(a.lat, b.lat, frac),
        lon: lerp(a.lon, b.lon, frac),
        sog: lerp(a.sog, b.sog, frac),
        cog: interp_angle(a.cog, b.cog, frac),
        vessel_type: a.vessel_type.or(b.vessel_type),
    }
}

/// Regular `dt` resampling of a training track. Tracks with any
/// inter-message gap above `max_train_gap` are rejected (`None`).
pub fn resample_train(track: &Track, roi: &RoiConfig, cfg: &IngestConfig) -> Option<Track> {
    let msgs = &track.messages;
    let first = msgs.first()?;
    if track.max_gap() > cfg.max_train_gap {
        return None;
    }
    let t_end = msgs.last()?.timestamp;
    let mut out = Vec::new();
    let mut seg = 0;
    let mut t = first.timestamp;
    while t <= t_end {
        while seg + 1 < msgs.len() && msgs[seg + 1].timestamp < t {
            seg += 1;
        }
        let m = if seg + 1 < msgs.len() {
            interpolate(&msgs[seg], &msgs[seg + 1], t)
        } else {
            AisMessage { timestamp: t, ..msgs[seg] }
        };
        out.push(m);
        t += roi.dt;
    }
    Some(Track { id: track.id, mmsi: track.mmsi, messages: out })
}

/// A track placed on a regular time grid; `None` marks a missing step.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTrack {
    pub id: u64,
    pub mmsi: u64,
    pub t0: i64,
    pub dt: i64,
    pub steps: Vec<Option<AisMessage>>,
}

impl GridTrack {
    pub fn time_of(&self, step: usize) -> i64 {
        self.t0 + step as i64 * self.dt
    }

    pub fn observed(&self) -> usize {
        self.steps.iter().filter(|s| s.is_some()).count()
    }

    pub fn vessel_type(&self) -> Option<VesselType> {
        self.steps.iter().flatten().find_map(|m| m.vessel_type)
    }

    /// Messages in step order, dropping missing steps.
    pub fn to_track(&self) -> Track {
        Track { id: self.id, mmsi: self.mmsi, messages: self.steps.iter().flatten().copied().collect() }
    }

    /// Copy with steps in `range` marked missing.
    pub fn with_gap(&self, range: std::ops::Range<usize>) -> GridTrack {
        let mut g = self.clone();
        for s in range {
            if let Some(slot) = g.steps.get_mut(s) {
                *slot = None;
            }
        }
        g
    }
}

/// Snaps messages to the grid `t0 + k·dt` anchored at the first message;
/// each slot takes the message nearest its time within ±dt/2 (earliest on
/// ties). Slot count is `ceil(span/dt) + 1`.
pub fn align_to_grid(track: &Track, dt: i64) -> GridTrack {
    let Some(first) = track.messages.first() else {
        return GridTrack { id: track.id, mmsi: track.mmsi, t0: 0, dt, steps: Vec::new() };
    };
    let t0 = first.timestamp;
    let span = track.duration();
    let n = ((span + dt - 1) / dt) as usize + 1;
    let mut steps: Vec<Option<AisMessage>> = vec![None; n];
    let mut best: Vec<i64> = vec![i64::MAX; n];
    for m in &track.messages {
        let offset = m.timestamp - t0;
        let k = ((offset + dt / 2) / dt) as usize;
        if k >= n {
            continue;
        }
        let err = (offset - k as i64 * dt).abs();
        if err <= dt / 2 && err < best[k] {
            best[k] = err;
            steps[k] = Some(*m);
        }
    }
    GridTrack { id: track.id, mmsi: track.mmsi, t0, dt, steps }
}

/// Counters reported by `preprocess --stats`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineStats {
    pub parsed: usize,
    pub malformed: usize,
    pub dropped_invalid: usize,
    pub tracks_built: usize,
    pub dropped_stationary: usize,
    pub tracks_emitted: usize,
}

/// Validation, track building and stationary removal in one pass.
pub fn clean_tracks(report: ParseReport, roi: &RoiConfig, cfg: &IngestConfig) -> (Vec<Track>, PipelineStats) {
    let mut stats = PipelineStats { parsed: report.messages.len(), malformed: report.skipped, ..Default::default() };
    let valid = validate(report.messages, roi);
    stats.dropped_invalid = stats.parsed - valid.len();
    let tracks = build_tracks(valid, cfg);
    stats.tracks_built = tracks.len();
    let tracks = remove_stationary(tracks, cfg);
    stats.dropped_stationary = stats.tracks_built - tracks.len();
    stats.tracks_emitted = tracks.len();
    (tracks, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roi() -> RoiConfig {
        RoiConfig {
            lat_min: 47.0,
            lat_max: 48.0,
            lon_min: -6.0,
            lon_max: -4.0,
            lat_bins: 100,
            lon_bins: 150,
            sog_bins: 30,
            cog_bins: 72,
            sog_max: 30.0,
            dt: 600,
        }
    }

    fn msg(mmsi: u64, t: i64, sog: f64) -> AisMessage {
        AisMessage { mmsi, timestamp: t, lat: 47.5, lon: -5.0, sog, cog: 90.0, vessel_type: None }
    }

    #[test]
    fn parses_a_row() {
        let data = format!("{CSV_HEADER}\n123,1600000000,47.5,-5.2,12.0,90.0,cargo\n");
        let r = parse_csv(data.as_bytes()).unwrap();
        assert_eq!(r.skipped, 0);
        assert_eq!(
            r.messages,
            vec![AisMessage {
                mmsi: 123,
                timestamp: 1_600_000_000,
                lat: 47.5,
                lon: -5.2,
                sog: 12.0,
                cog: 90.0,
                vessel_type: Some(VesselType::Cargo)
            }]
        );
    }

    #[test]
    fn malformed_rows_are_counted() {
        let data = format!("{CSV_HEADER}\n1,1600000000,abc,-5.2,12.0,90.0,\n2,1600000000,47.1,-5.2,12.0,90.0,\n");
        let r = parse_csv(data.as_bytes()).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.messages.len(), 1);
        assert_eq!(r.messages[0].vessel_type, None);
    }

    #[test]
    fn header_only_and_missing_header() {
        assert!(parse_csv(format!("{CSV_HEADER}\n").as_bytes()).unwrap().messages.is_empty());
        assert!(matches!(parse_csv("1,2,3\n".as_bytes()), Err(Error::Format(_))));
        assert!(matches!(parse_csv("".as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn validate_drops_infeasible() {
        let ok = msg(1, 100, 10.0);
        let fast = AisMessage { sog: 45.0, ..ok };
        let outside = AisMessage { lat: 49.0, ..ok };
        let bad_cog = AisMessage { cog: 360.0, ..ok };
        assert_eq!(validate(vec![ok, fast, outside, bad_cog], &roi()), vec![ok]);
    }

    #[test]
    fn long_track_is_cut_at_24h() {
        let msgs: Vec<_> = (0..=180).map(|k| msg(7, 1_000_000 + k * 600, 10.0)).collect();
        let tracks = build_tracks(msgs, &IngestConfig::default());
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].duration(), 24 * HOUR);
        // second piece starts at the next fix: 30h - 24h - 10min
        assert_eq!(tracks[1].duration(), 6 * HOUR - 600);
    }

    #[test]
    fn short_track_is_discarded() {
        let msgs: Vec<_> = (0..=18).map(|k| msg(7, 1_000_000 + k * 600, 10.0)).collect();
        assert!(build_tracks(msgs, &IngestConfig::default()).is_empty());
    }

    #[test]
    fn interleaved_vessels_and_duplicates() {
        let mut msgs = Vec::new();
        for k in 0..=30 {
            msgs.push(msg(1, 1_000_000 + k * 600, 10.0));
            msgs.push(msg(2, 1_000_000 + k * 600, 11.0));
        }
        msgs.push(AisMessage { sog: 3.0, ..msg(1, 1_000_000, 10.0) });
        let tracks = build_tracks(msgs, &IngestConfig::default());
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].messages.len(), 31);
        assert_eq!(tracks[0].messages[0].sog, 10.0);
        assert!(tracks.iter().all(|t| t.messages.iter().all(|m| m.mmsi == t.mmsi)));
    }

    #[test]
    fn gap_split_then_minimum_length() {
        // 5h, 3h silence, 5h
        let mut msgs: Vec<_> = (0..=30).map(|k| msg(1, 1_000_000 + k * 600, 10.0)).collect();
        msgs.extend((0..=30).map(|k| msg(1, 1_000_000 + 8 * HOUR + k * 600, 10.0)));
        let tracks = build_tracks(msgs, &IngestConfig::default());
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.duration() == 5 * HOUR));
    }

    #[test]
    fn stationary_rule() {
        let cfg = IngestConfig::default();
        let mk = |slow: usize| Track {
            id: 0,
            mmsi: 1,
            messages: (0..100).map(|k| msg(1, 1 + k as i64, if k < slow { 0.05 } else { 8.0 })).collect(),
        };
        assert!(is_stationary(&mk(85), &cfg));
        assert!(!is_stationary(&mk(50), &cfg));
        assert!(!is_stationary(&mk(0), &cfg));
        assert_eq!(remove_stationary(vec![mk(85), mk(50)], &cfg).len(), 1);
    }

    #[test]
    fn resample_midpoint_and_circular_course() {
        let a = AisMessage { lat: 47.0, lon: -5.0, cog: 350.0, ..msg(1, 1000, 10.0) };
        let b = AisMessage { lat: 47.2, lon: -4.8, cog: 10.0, sog: 12.0, ..msg(1, 2200, 10.0) };
        let t = Track { id: 3, mmsi: 1, messages: vec![a, b] };
        let r = resample_train(&t, &roi(), &IngestConfig::default()).unwrap();
        assert_eq!(r.messages.len(), 3);
        let mid = r.messages[1];
        assert_eq!(mid.timestamp, 1600);
        assert!((mid.lat - 47.1).abs() < 1e-12 && (mid.lon + 4.9).abs() < 1e-12);
        assert!((mid.sog - 11.0).abs() < 1e-12);
        assert!(mid.cog.abs() < 1e-9 || (mid.cog - 360.0).abs() < 1e-9);
    }

    #[test]
    fn resample_rejects_long_gap() {
        let t = Track { id: 0, mmsi: 1, messages: vec![msg(1, 1000, 5.0), msg(1, 4700, 5.0)] };
        assert!(resample_train(&t, &roi(), &IngestConfig::default()).is_none());
        let t = Track { id: 0, mmsi: 1, messages: vec![msg(1, 1000, 5.0), msg(1, 4600, 5.0)] };
        assert!(resample_train(&t, &roi(), &IngestConfig::default()).is_some());
    }

    #[test]
    fn grid_alignment_marks_missing_steps() {
        let msgs: Vec<_> = [0, 610, 1790, 4200].iter().map(|&t| msg(1, 5000 + t, 5.0)).collect();
        let g = align_to_grid(&Track { id: 0, mmsi: 1, messages: msgs }, 600);
        assert_eq!(g.steps.len(), 8);
        let present: Vec<bool> = g.steps.iter().map(Option::is_some).collect();
        assert_eq!(present, vec![true, true, false, true, false, false, false, true]);
    }

    #[test]
    fn track_csv_round_trip() {
        let t = Track { id: 4, mmsi: 9, messages: vec![msg(9, 1000, 5.0), msg(9, 1600, 5.5)] };
        let mut buf = Vec::new();
        write_tracks_csv(&mut buf, std::slice::from_ref(&t)).unwrap();
        assert_eq!(read_tracks_csv(buf.as_slice()).unwrap(), vec![t]);
    }

    proptest! {
        #[test]
        fn pipeline_output_invariants(
            seed_times in proptest::collection::vec((1u64..4, 0i64..200_000, 0.0f64..20.0), 1..400)
        ) {
            let cfg = IngestConfig::default();
            let msgs: Vec<_> = seed_times.iter().map(|&(id, t, s)| msg(id, 1_000_000 + t, s)).collect();
            let report = ParseReport { messages: msgs, skipped: 0 };
            let (tracks, _) = clean_tracks(report, &roi(), &cfg);
            for t in &tracks {
                prop_assert!(t.duration() >= cfg.min_duration && t.duration() <= cfg.max_duration);
                prop_assert!(t.messages.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
                if let Some(r) = resample_train(t, &roi(), &cfg) {
                    prop_assert!(r.messages.windows(2).all(|w| w[1].timestamp - w[0].timestamp == 600));
                    prop_assert!(r.duration() >= cfg.min_duration);
                }
            }
            // idempotent on clean output
            let flat: Vec<_> = tracks.iter().flat_map(|t| t.messages.clone()).collect();
            let (again, _) = clean_tracks(ParseReport { messages: flat, skipped: 0 }, &roi(), &cfg);
            let a: Vec<_> = tracks.iter().map(|t| &t.messages).collect();
            let b: Vec<_> = again.iter().map(|t| &t.messages).collect();
            prop_assert_eq!(a, b);
        }
    }
}
