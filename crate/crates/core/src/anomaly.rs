//! Abnormal-behaviour detection from stepwise log-likelihoods.
//!
//! Two detectors share one scoring pass:
//!
//! * a global threshold on a track's mean per-step log-likelihood;
//! * an *a contrario* detector. The map is cut into square cells, each
//!   holding the mean and standard deviation of validation scores. A step
//!   is an *abnormal evolution* when it scores below `m_i - k_sigma·std_i`
//!   of its cell, and a 4-hour window is flagged when the number of false
//!   alarms `NFA = N · P[Bin(n, p0) ≥ k]` drops below `epsilon`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::embedding::{stepwise_loglik_track, VrnnModel};
use crate::error::{Error, Result};
use crate::geo::LocalProjection;
use crate::ingest::{GridTrack, RoiConfig};
use crate::nn::tensor::logsumexp;
use crate::rng::substream;
use crate::stats::{mean, percentile, Welford};

pub const DEFAULT_CELL_KM: f64 = 10.0;
pub const DEFAULT_MIN_COUNT: usize = 20;
pub const DEFAULT_K_SIGMA: f64 = 2.0;
/// Four hours of 10-minute steps.
pub const DEFAULT_WINDOW_STEPS: usize = 24;

/// One scored step of a track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredStep {
    pub step: usize,
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub logp: f64,
}

/// Stepwise log-likelihoods of one grid track.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackScores {
    pub track_id: u64,
    pub t0: i64,
    pub dt: i64,
    /// Grid length, including missing steps.
    pub len: usize,
    pub steps: Vec<ScoredStep>,
}

impl TrackScores {
    pub fn mean_logp(&self) -> Option<f64> {
        mean(&self.steps.iter().map(|s| s.logp).collect::<Vec<_>>())
    }
}

/// Scores one grid track with `n_samples` particles drawn from the
/// `"score"` sub-stream of `seed`, indexed by track id.
pub fn score_track(model: &VrnnModel, grid: &GridTrack, n_samples: usize, seed: u64) -> Result<TrackScores> {
    let mut rng = substream(seed, "score", grid.id);
    let lp = stepwise_loglik_track(model, grid, n_samples, &mut rng)?;
    let mut steps = Vec::with_capacity(lp.len());
    let mut it = lp.into_iter();
    for (k, m) in grid.steps.iter().enumerate() {
        if let Some(m) = m {
            let (t, logp) = it.next().expect("one score per observed step");
            debug_assert_eq!(t, grid.time_of(k));
            steps.push(ScoredStep { step: k, timestamp: t, lat: m.lat, lon: m.lon, logp });
        }
    }
    Ok(TrackScores { track_id: grid.id, t0: grid.t0, dt: grid.dt, len: grid.steps.len(), steps })
}

/// Scores many tracks in parallel; output order follows input order.
pub fn score_tracks(model: &VrnnModel, grids: &[GridTrack], n_samples: usize, seed: u64) -> Result<Vec<TrackScores>> {
    grids.par_iter().map(|g| score_track(model, g, n_samples, seed)).collect()
}

/// Square cells on an equirectangular projection anchored at the ROI
/// centre. Index `i` counts cells east and `j` cells north of the ROI's
/// south-west corner; points on an edge belong to the larger index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGrid {
    pub roi: RoiConfig,
    pub cell_km: f64,
    proj: LocalProjection,
    origin: (f64, f64),
}

impl CellGrid {
    pub fn new(roi: RoiConfig, cell_km: f64) -> Result<Self> {
        if !(cell_km > 0.0 && cell_km.is_finite()) {
            return Err(Error::Config(format!("cell size must be positive, got {cell_km}")));
        }
        let (clat, clon) = roi.center();
        let proj = LocalProjection::new(clat, clon);
        let origin = proj.to_km(roi.lat_min, roi.lon_min);
        Ok(CellGrid { roi, cell_km, proj, origin })
    }

    pub fn cell_of(&self, lat: f64, lon: f64) -> (i64, i64) {
        let (x, y) = self.proj.to_km(lat, lon);
        (((x - self.origin.0) / self.cell_km).floor() as i64, ((y - self.origin.1) / self.cell_km).floor() as i64)
    }

    /// Corner coordinates `(lat, lon)` of a cell, counter-clockwise from south-west.
    pub fn cell_corners(&self, cell: (i64, i64)) -> [(f64, f64); 4] {
        let x0 = self.origin.0 + cell.0 as f64 * self.cell_km;
        let y0 = self.origin.1 + cell.1 as f64 * self.cell_km;
        let c = self.cell_km;
        [(x0, y0), (x0 + c, y0), (x0 + c, y0 + c), (x0, y0 + c)].map(|(x, y)| self.proj.from_km(x, y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellEntry {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellConfig {
    pub cell_km: f64,
    pub min_count: usize,
    pub k_sigma: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig { cell_km: DEFAULT_CELL_KM, min_count: DEFAULT_MIN_COUNT, k_sigma: DEFAULT_K_SIGMA }
    }
}

/// Per-cell score statistics plus the validation abnormal-evolution rate.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub grid: CellGrid,
    pub min_count: usize,
    /// `k_sigma` that `p0` was measured with.
    pub k_sigma: f64,
    /// Fraction of scoreable validation steps that are abnormal evolutions.
    pub p0: f64,
    pub cells: BTreeMap<(i64, i64), CellEntry>,
}

impl CellStats {
    pub fn scoreable(&self, lat: f64, lon: f64) -> Option<&CellEntry> {
        self.cells.get(&self.grid.cell_of(lat, lon)).filter(|e| e.count >= self.min_count)
    }

    pub fn scoreable_cells(&self) -> usize {
        self.cells.values().filter(|e| e.count >= self.min_count).count()
    }

    /// `Some(true)` for an abnormal evolution, `None` in unscoreable cells.
    pub fn is_abnormal(&self, s: &ScoredStep, k_sigma: f64) -> Option<bool> {
        self.scoreable(s.lat, s.lon).map(|e| s.logp < e.mean - k_sigma * e.std)
    }

    /// CSV with `#`-prefixed geometry lines, then `cell_i,cell_j,mean,std,count`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let r = &self.grid.roi;
        writeln!(w, "# lat_min={:?} lat_max={:?} lon_min={:?} lon_max={:?}", r.lat_min, r.lat_max, r.lon_min, r.lon_max)?;
        writeln!(w, "# cell_km={:?} min_count={} k_sigma={:?} p0={:?}", self.grid.cell_km, self.min_count, self.k_sigma, self.p0)?;
        writeln!(w, "cell_i,cell_j,mean,std,count")?;
        for ((i, j), e) in &self.cells {
            writeln!(w, "{i},{j},{:?},{:?},{}", e.mean, e.std, e.count)?;
        }
        Ok(())
    }

    /// Reads [`write_csv`](Self::write_csv) output. Bin counts of `roi`
    /// are irrelevant here; its bounds must match the file.
    pub fn read_csv<R: BufRead>(reader: R, roi: &RoiConfig) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut cells = BTreeMap::new();
        let mut saw_header = false;
        for (ln, line) in reader.lines().enumerate() {
            let line = line?;
            let bad = || Error::Format(format!("cell stats line {}: {line:?}", ln + 1));
            if let Some(rest) = line.strip_prefix('#') {
                for tok in rest.split_whitespace() {
                    let (k, v) = tok.split_once('=').ok_or_else(bad)?;
                    kv.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            if !saw_header {
                if line.trim() != "cell_i,cell_j,mean,std,count" {
                    return Err(bad());
                }
                saw_header = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let entry = CellEntry {
                mean: f[2].parse().map_err(|_| bad())?,
                std: f[3].parse().map_err(|_| bad())?,
                count: f[4].parse().map_err(|_| bad())?,
            };
            cells.insert((f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?), entry);
        }
        let get = |k: &str| -> Result<f64> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("cell stats header missing {k}")))
        };
        for (k, v) in [("lat_min", roi.lat_min), ("lat_max", roi.lat_max), ("lon_min", roi.lon_min), ("lon_max", roi.lon_max)] {
            if get(k)? != v {
                return Err(Error::Format(format!("cell stats field {k} differs from configuration")));
            }
        }
        Ok(CellStats {
            grid: CellGrid::new(*roi, get("cell_km")?)?,
            min_count: get("min_count")? as usize,
            k_sigma: get("k_sigma")?,
            p0: get("p0")?,
            cells,
        })
    }
}

/// Accumulates per-cell statistics from already-scored validation tracks.
pub fn fit_cells_from_scores(scores: &[TrackScores], roi: &RoiConfig, cfg: &CellConfig) -> Result<CellStats> {
    if scores.iter().all(|s| s.steps.is_empty()) {
        return Err(Error::Config("fit_cells needs a non-empty validation set".into()));
    }
    let grid = CellGrid::new(*roi, cfg.cell_km)?;
    let mut acc: BTreeMap<(i64, i64), Welford> = BTreeMap::new();
    for s in scores.iter().flat_map(|t| &t.steps) {
        acc.entry(grid.cell_of(s.lat, s.lon)).or_default().push(s.logp);
    }
    let cells = acc.into_iter().map(|(k, w)| (k, CellEntry { mean: w.mean, std: w.std(), count: w.count })).collect();
    let mut stats = CellStats { grid, min_count: cfg.min_count, k_sigma: cfg.k_sigma, p0: 0.0, cells };
    let flags: Vec<bool> = scores.iter().flat_map(|t| &t.steps).filter_map(|s| stats.is_abnormal(s, cfg.k_sigma)).collect();
    let n = flags.len();
    let k = flags.iter().filter(|&&f| f).count();
    // a zero rate would make a single abnormal step infinitely surprising
    stats.p0 = if n == 0 { 0.5 } else { (k as f64 / n as f64).clamp(0.5 / n as f64, 1.0 - 0.5 / n as f64) };
    Ok(stats)
}

/// Scores validation tracks and fits [`CellStats`].
pub fn fit_cells(
    model: &VrnnModel,
    validation: &[GridTrack],
    cfg: &CellConfig,
    n_samples: usize,
    seed: u64,
) -> Result<CellStats> {
    if validation.is_empty() {
        return Err(Error::Config("fit_cells needs a non-empty validation set".into()));
    }
    fit_cells_from_scores(&score_tracks(model, validation, n_samples, seed)?, &model.roi, cfg)
}

/// `P[X ≥ k]` for `X ~ Binomial(n, p)`, summed in log space.
pub fn binomial_tail(n: usize, k: usize, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut ln_choose = 0.0;
    let mut terms = Vec::with_capacity(n - k + 1);
    for j in 0..=n {
        if j >= k {
            terms.push(ln_choose + j as f64 * lp + (n - j) as f64 * lq);
        }
        if j < n {
            ln_choose += ((n - j) as f64).ln() - ((j + 1) as f64).ln();
        }
    }
    logsumexp(&terms).exp().min(1.0)
}

/// `N · P[Bin(n, p0) ≥ k]`.
pub fn nfa(n_tests: usize, n: usize, k: usize, p0: f64) -> f64 {
    n_tests as f64 * binomial_tail(n, k, p0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Normal,
    Abnormal,
    Unscored,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Normal => "normal",
            Verdict::Abnormal => "abnormal",
            Verdict::Unscored => "unscored",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    GlobalLoglik {
        mean_logp: f64,
        threshold: f64,
    },
    Nfa {
        nfa: f64,
        n: usize,
        k: usize,
        n_tests: usize,
        p0: f64,
        /// Windows of this track with NFA below epsilon.
        flagged_windows: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub track_id: u64,
    pub t_start: i64,
    pub t_end: i64,
    pub verdict: Verdict,
    pub evidence: Option<Evidence>,
    /// One flag per grid step; missing steps are unscored.
    pub flags: Vec<Verdict>,
}

impl Detection {
    pub fn flagged_windows(&self) -> usize {
        match self.evidence {
            Some(Evidence::Nfa { flagged_windows, .. }) => flagged_windows,
            _ => 0,
        }
    }
}

/// Default global threshold: 5th percentile of validation per-track means.
pub fn default_global_threshold(validation: &[TrackScores]) -> Option<f64> {
    let means: Vec<f64> = validation.iter().filter_map(TrackScores::mean_logp).collect();
    percentile(&means, 5.0)
}

pub fn detect_global(scores: &TrackScores, threshold: f64) -> Detection {
    let mut flags = vec![Verdict::Unscored; scores.len];
    for s in &scores.steps {
        flags[s.step] = if s.logp < threshold { Verdict::Abnormal } else { Verdict::Normal };
    }
    let t_end = scores.t0 + scores.len.saturating_sub(1) as i64 * scores.dt;
    let (verdict, evidence) = match scores.mean_logp() {
        None => (Verdict::Unscored, None),
        Some(m) => (
            if m < threshold { Verdict::Abnormal } else { Verdict::Normal },
            Some(Evidence::GlobalLoglik { mean_logp: m, threshold }),
        ),
    };
    Detection { track_id: scores.track_id, t_start: scores.t0, t_end, verdict, evidence, flags }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrarioConfig {
    pub k_sigma: f64,
    pub epsilon: f64,
    pub window_steps: usize,
    /// Size of the tested family; defaults to this track's window count.
    pub n_tests: Option<usize>,
}

impl Default for ContrarioConfig {
    fn default() -> Self {
        ContrarioConfig { k_sigma: DEFAULT_K_SIGMA, epsilon: 1.0, window_steps: DEFAULT_WINDOW_STEPS, n_tests: None }
    }
}

/// Number of sliding windows (stride one step) over a grid of `len` steps.
pub fn window_count(len: usize, window_steps: usize) -> usize {
    len.saturating_sub(window_steps.max(1)) + 1
}

/// Total window count over a set of tracks: the family size when the whole
/// set is tested together.
pub fn family_size(scores: &[TrackScores], window_steps: usize) -> usize {
    scores.iter().map(|s| window_count(s.len, window_steps.max(1).min(s.len.max(1)))).sum()
}

pub fn detect_contrario(cells: &CellStats, scores: &TrackScores, cfg: &ContrarioConfig) -> Detection {
    let len = scores.len;
    let mut flags = vec![Verdict::Unscored; len];
    for s in &scores.steps {
        if let Some(ab) = cells.is_abnormal(s, cfg.k_sigma) {
            flags[s.step] = if ab { Verdict::Abnormal } else { Verdict::Normal };
        }
    }
    let w = cfg.window_steps.max(1).min(len.max(1));
    let n_windows = window_count(len, w);
    let n_tests = cfg.n_tests.unwrap_or(n_windows);
    let mut best: Option<(f64, usize, usize, usize)> = None;
    let mut flagged = 0;
    for start in 0..n_windows {
        let win = &flags[start..(start + w).min(len)];
        let n = win.iter().filter(|f| **f != Verdict::Unscored).count();
        if n == 0 {
            continue;
        }
        let k = win.iter().filter(|f| **f == Verdict::Abnormal).count();
        let v = nfa(n_tests, n, k, cells.p0);
        if v < cfg.epsilon {
            flagged += 1;
        }
        if best.map_or(true, |b| v < b.0) {
            best = Some((v, n, k, start));
        }
    }
    let at = |k: usize| scores.t0 + k as i64 * scores.dt;
    match best {
        None => Detection {
            track_id: scores.track_id,
            t_start: at(0),
            t_end: at(len.saturating_sub(1)),
            verdict: Verdict::Unscored,
            evidence: None,
            flags,
        },
        Some((v, n, k, start)) => Detection {
            track_id: scores.track_id,
            t_start: at(start),
            t_end: at((start + w).min(len) - 1),
            verdict: if v < cfg.epsilon { Verdict::Abnormal } else { Verdict::Normal },
            evidence: Some(Evidence::Nfa { nfa: v, n, k, n_tests, p0: cells.p0, flagged_windows: flagged }),
            flags,
        },
    }
}

/// One GeoJSON `Feature` per detection: a LineString over the track's
/// observed positions (`[lon, lat]`) with the verdict and evidence.
pub fn detections_geojson(items: &[(&Detection, &TrackScores)]) -> serde_json::Value {
    let features: Vec<_> = items
        .iter()
        .map(|(d, s)| {
            let coords: Vec<[f64; 2]> = s.steps.iter().map(|p| [p.lon, p.lat]).collect();
            json!({
                "type": "Feature",
                "geometry": { "type": "LineString", "coordinates": coords },
                "properties": {
                    "track_id": d.track_id,
                    "verdict": d.verdict,
                    "t_start": d.t_start,
                    "t_end": d.t_end,
                    "evidence": d.evidence,
                }
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

/// One polygon per cell with its mean, std, count and scoreability.
pub fn cells_geojson(stats: &CellStats) -> serde_json::Value {
    let features: Vec<_> = stats
        .cells
        .iter()
        .map(|(&(i, j), e)| {
            let mut ring: Vec<[f64; 2]> = stats.grid.cell_corners((i, j)).iter().map(|&(lat, lon)| [lon, lat]).collect();
            ring.push(ring[0]);
            json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": {
                    "cell_i": i,
                    "cell_j": j,
                    "mean": e.mean,
                    "std": e.std,
                    "count": e.count,
                    "scoreable": e.count >= stats.min_count,
                }
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roi() -> RoiConfig {
        RoiConfig {
            lat_min: 45.0,
            lat_max: 46.0,
            lon_min: 5.0,
            lon_max: 6.0,
            lat_bins: 10,
            lon_bins: 10,
            sog_bins: 10,
            cog_bins: 12,
            sog_max: 30.0,
            dt: 600,
        }
    }

    fn step(k: usize, lat: f64, lon: f64, logp: f64) -> ScoredStep {
        ScoredStep { step: k, timestamp: 600 * k as i64, lat, lon, logp }
    }

    fn scores(id: u64, v: Vec<ScoredStep>) -> TrackScores {
        let len = v.iter().map(|s| s.step + 1).max().unwrap_or(0);
        TrackScores { track_id: id, t0: 0, dt: 600, len, steps: v }
    }

    #[test]
    fn binomial_tail_matches_exact_rationals() {
        // values computed with exact rational arithmetic
        assert!((binomial_tail(24, 12, 0.05) / 3.748169298028424e-10 - 1.0).abs() < 1e-9);
        assert!((binomial_tail(24, 1, 0.05) - 0.7080109756612273).abs() < 1e-12);
        assert!((binomial_tail(24, 3, 0.05) - 0.11594458835933916).abs() < 1e-12);
        assert!((binomial_tail(10, 5, 0.3) - 0.1502683326).abs() < 1e-10);
        assert!((binomial_tail(24, 24, 0.05) / 5.960464477539062e-32 - 1.0).abs() < 1e-9);
        assert_eq!(binomial_tail(24, 0, 0.05), 1.0);
        assert_eq!(binomial_tail(3, 4, 0.5), 0.0);
        assert!(nfa(1000, 24, 12, 0.05) < 1.0);
    }

    #[test]
    fn binomial_tail_matches_enumeration() {
        let n = 10;
        for &p in &[0.05f64, 0.3, 0.77] {
            let mut by_k = vec![0.0; n + 1];
            for mask in 0u32..(1 << n) {
                let k = mask.count_ones() as usize;
                by_k[k] += p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
            }
            for k in 0..=n {
                let brute: f64 = by_k[k..].iter().sum();
                assert!((binomial_tail(n, k, p) - brute).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_points_take_the_larger_index() {
        let g = CellGrid::new(roi(), 10.0).unwrap();
        assert_eq!(g.cell_of(45.0, 5.0), (0, 0));
        let (lat, _) = g.cell_corners((0, 1))[0];
        assert_eq!(g.cell_of(lat + 1e-12, 5.0).1, 1);
        let c = g.cell_corners((2, 3))[0];
        assert_eq!(g.cell_of(c.0 + 1e-9, c.1 + 1e-9), (2, 3));
    }

    #[test]
    fn single_cell_arithmetic_and_min_count() {
        let s = scores(0, vec![step(0, 45.01, 5.01, -10.0), step(1, 45.01, 5.01, -10.0)]);
        let cfg = CellConfig::default();
        let stats = fit_cells_from_scores(&[s.clone()], &roi(), &cfg).unwrap();
        let e = stats.cells[&(0, 0)];
        assert_eq!((e.mean, e.std, e.count), (-10.0, 0.0, 2));
        assert!(stats.scoreable(45.01, 5.01).is_none());
        let d = detect_contrario(&stats, &s, &ContrarioConfig::default());
        assert_eq!(d.verdict, Verdict::Unscored);
        assert!(fit_cells_from_scores(&[], &roi(), &cfg).is_err());
    }

    fn fitted() -> (CellStats, Vec<ScoredStep>) {
        let steps: Vec<ScoredStep> = (0..40).map(|k| step(k, 45.01, 5.01, -10.0 - (k % 4) as f64)).collect();
        let stats = fit_cells_from_scores(&[scores(0, steps.clone())], &roi(), &CellConfig::default()).unwrap();
        (stats, steps)
    }

    #[test]
    fn steps_at_cell_means_are_normal() {
        let (stats, _) = fitted();
        let m = stats.cells[&(0, 0)].mean;
        let t = scores(1, (0..30).map(|k| step(k, 45.01, 5.01, m)).collect());
        let d = detect_contrario(&stats, &t, &ContrarioConfig::default());
        assert_eq!(d.verdict, Verdict::Normal);
        assert!(matches!(d.evidence, Some(Evidence::Nfa { k: 0, .. })));
    }

    #[test]
    fn low_scores_are_flagged_and_monotone() {
        let (stats, _) = fitted();
        let m = stats.cells[&(0, 0)].mean;
        let mk = |bad: usize| scores(2, (0..30).map(|k| step(k, 45.01, 5.01, if k < bad { m - 100.0 } else { m })).collect());
        let cfg = ContrarioConfig::default();
        let mut last = f64::INFINITY;
        let mut was_abnormal = false;
        for bad in 0..=30 {
            let d = detect_contrario(&stats, &mk(bad), &cfg);
            let Some(Evidence::Nfa { nfa, .. }) = d.evidence else { panic!() };
            assert!(nfa <= last);
            last = nfa;
            if was_abnormal {
                assert_eq!(d.verdict, Verdict::Abnormal);
            }
            was_abnormal = d.verdict == Verdict::Abnormal;
        }
        assert!(was_abnormal);
    }

    #[test]
    fn short_tracks_use_one_window() {
        assert_eq!(window_count(10, 24), 1);
        assert_eq!(window_count(24, 24), 1);
        assert_eq!(window_count(30, 24), 7);
    }

    #[test]
    fn global_threshold() {
        let s = scores(3, vec![step(0, 45.1, 5.1, -5.0), step(2, 45.1, 5.1, -7.0)]);
        assert_eq!(detect_global(&s, f64::NEG_INFINITY).verdict, Verdict::Normal);
        let d = detect_global(&s, -5.5);
        assert_eq!(d.verdict, Verdict::Abnormal);
        assert_eq!(d.flags, vec![Verdict::Normal, Verdict::Unscored, Verdict::Abnormal]);
        let v: Vec<TrackScores> = (0..101).map(|i| scores(i, vec![step(0, 45.1, 5.1, -(i as f64))])).collect();
        assert_eq!(default_global_threshold(&v), Some(-95.0));
    }

    #[test]
    fn csv_round_trip() {
        let (stats, _) = fitted();
        let mut buf = Vec::new();
        stats.write_csv(&mut buf).unwrap();
        let back = CellStats::read_csv(buf.as_slice(), &roi()).unwrap();
        assert_eq!(back, stats);
        let mut other = roi();
        other.lat_max = 47.0;
        assert!(CellStats::read_csv(buf.as_slice(), &other).is_err());
    }
}
