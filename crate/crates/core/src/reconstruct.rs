//! Gap filling by particle sampling from the Embedding block, with a
//! constant-velocity fallback when the model is not confident.

use serde::Serialize;

use crate::embedding::{encode_grid, stepwise_loglik, Cloud, VrnnModel};
use crate::error::{Error, Result};
use crate::fourhot::{decode, FourHotVector};
use crate::geo::{heading_vector, LocalProjection, KM_PER_NM};
use crate::ingest::{interpolate, AisMessage, GridTrack, RoiConfig};
use crate::rng::substream;
use crate::stats::{mean, percentile};

/// Observed steps scored when deciding whether to trust the model (one hour).
pub const CONFIDENCE_STEPS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMethod {
    Observed,
    Model,
    Cv,
}

impl FillMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FillMethod::Observed => "observed",
            FillMethod::Model => "model",
            FillMethod::Cv => "cv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructConfig {
    pub n_particles: usize,
    pub seed: u64,
    /// Confidence threshold on the mean stepwise log-likelihood; `None`
    /// always uses the model.
    pub tau: Option<f64>,
    pub confidence_steps: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig { n_particles: 50, seed: 0, tau: None, confidence_steps: CONFIDENCE_STEPS }
    }
}

/// A gap-free grid track plus how each step was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub track: GridTrack,
    pub methods: Vec<FillMethod>,
}

impl Reconstruction {
    pub fn message(&self, step: usize) -> &AisMessage {
        self.track.steps[step].as_ref().expect("reconstructions are gap-free")
    }
}

/// Maximal runs of missing steps, as half-open ranges.
pub fn missing_runs(grid: &GridTrack) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut start = None;
    for (k, s) in grid.steps.iter().enumerate() {
        match (s.is_none(), start) {
            (true, None) => start = Some(k),
            (false, Some(a)) => {
                runs.push(a..k);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        runs.push(a..grid.steps.len());
    }
    runs
}

fn clamp_to_roi(mut m: AisMessage, roi: Option<&RoiConfig>) -> AisMessage {
    if let Some(r) = roi {
        let shrink = |lo: f64, hi: f64| (hi - lo) * 1e-9;
        m.lat = m.lat.clamp(r.lat_min, r.lat_max - shrink(r.lat_min, r.lat_max));
        m.lon = m.lon.clamp(r.lon_min, r.lon_max - shrink(r.lon_min, r.lon_max));
    }
    m
}

/// Constant-speed straight-line extrapolation over `seconds` (negative
/// seconds run backwards along the course).
pub fn dead_reckon(from: &AisMessage, seconds: i64) -> AisMessage {
    let proj = LocalProjection::new(from.lat, from.lon);
    let dist = from.sog * KM_PER_NM * seconds as f64 / 3600.0;
    let (e, n) = heading_vector(from.cog);
    let (lat, lon) = proj.from_km(e * dist, n * dist);
    AisMessage { timestamp: from.timestamp + seconds, lat, lon, ..*from }
}

fn cv_fill_inner(grid: &GridTrack, roi: Option<&RoiConfig>) -> Result<Reconstruction> {
    if grid.observed() == 0 {
        return Err(Error::Unsupported("cannot fill a track with no observations".into()));
    }
    let mut track = grid.clone();
    let mut methods: Vec<FillMethod> =
        grid.steps.iter().map(|s| if s.is_some() { FillMethod::Observed } else { FillMethod::Cv }).collect();
    for run in missing_runs(grid) {
        let before = run.start.checked_sub(1).and_then(|k| grid.steps[k]);
        let after = grid.steps.get(run.end).copied().flatten();
        for k in run.clone() {
            let t = grid.time_of(k);
            let m = match (before, after) {
                (Some(a), Some(b)) => interpolate(&a, &b, t),
                (Some(a), None) => dead_reckon(&a, t - a.timestamp),
                (None, Some(b)) => dead_reckon(&b, t - b.timestamp),
                (None, None) => unreachable!("track has observations"),
            };
            track.steps[k] = Some(clamp_to_roi(m, roi));
            methods[k] = FillMethod::Cv;
        }
    }
    Ok(Reconstruction { track, methods })
}

/// Constant-velocity fill: linear in position and speed, shortest-arc in
/// course between the bracketing observations; dead reckoning from the
/// nearest observation when the gap is one-sided.
pub fn cv_fill(grid: &GridTrack) -> Result<Reconstruction> {
    cv_fill_inner(grid, None)
}

/// `Cv` when the mean of the last `k` observed prefix scores falls below
/// `tau` (or there are none), otherwise `Model`.
pub fn confidence_switch(prefix_scores: &[f64], k: usize, tau: f64) -> FillMethod {
    let tail = &prefix_scores[prefix_scores.len().saturating_sub(k.max(1))..];
    match mean(tail) {
        Some(m) if m >= tau => FillMethod::Model,
        _ => FillMethod::Cv,
    }
}

/// Default threshold: the 10th percentile of validation stepwise scores.
pub fn default_tau(validation_scores: &[f64]) -> Option<f64> {
    percentile(validation_scores, 10.0)
}

/// Particle paths through the whole grid; returns the best particle's codes.
fn best_particle_path(
    model: &VrnnModel,
    codes: &[Option<FourHotVector>],
    n: usize,
    rng: &mut crate::rng::Rng,
) -> Vec<FourHotVector> {
    let mut cloud = Cloud::new(model, n);
    let mut paths: Vec<Vec<FourHotVector>> = vec![Vec::with_capacity(codes.len()); n];
    let mut offset = vec![0.0; n];
    for code in codes {
        match code {
            Some(x) => {
                cloud.observe(model, x, rng);
                paths.iter_mut().for_each(|p| p.push(*x));
                let before = cloud.log_w.clone();
                if let Some(idx) = cloud.maybe_resample(rng) {
                    paths = idx.iter().map(|&i| paths[i].clone()).collect();
                    offset = idx.iter().map(|&i| offset[i] + before[i]).collect();
                }
            }
            None => {
                let drawn = cloud.predict(model, rng);
                paths.iter_mut().zip(drawn).for_each(|(p, x)| p.push(x));
            }
        }
    }
    let best = offset
        .iter()
        .zip(&cloud.log_w)
        .map(|(o, w)| o + w)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) })
        .0;
    paths.swap_remove(best)
}

/// Fills every missing step of `grid` from the highest-weight particle
/// path. With `cfg.tau` set, gaps whose prefix scores below it fall back to
/// [`cv_fill`].
pub fn reconstruct_gap(model: &VrnnModel, grid: &GridTrack, cfg: &ReconstructConfig) -> Result<Reconstruction> {
    let runs = missing_runs(grid);
    if runs.is_empty() {
        let methods = vec![FillMethod::Observed; grid.steps.len()];
        return Ok(Reconstruction { track: grid.clone(), methods });
    }
    if grid.steps[0].is_none() {
        return Err(Error::Unsupported("gap at track start has no observed prefix".into()));
    }
    let codes = encode_grid(grid, model)?;
    let n = cfg.n_particles.max(1);
    let path = best_particle_path(model, &codes, n, &mut substream(cfg.seed, "particles", grid.id));

    let cv = cv_fill_inner(grid, Some(&model.roi))?;
    let scores = match cfg.tau {
        Some(_) => stepwise_loglik(model, &codes, n, &mut substream(cfg.seed, "confidence", grid.id)),
        None => Vec::new(),
    };
    let vt = grid.vessel_type();
    let mut track = grid.clone();
    let mut methods = cv.methods.clone();
    for run in runs {
        let method = match cfg.tau {
            None => FillMethod::Model,
            Some(tau) => {
                let prefix: Vec<f64> = scores[..run.start].iter().flatten().copied().collect();
                confidence_switch(&prefix, cfg.confidence_steps, tau)
            }
        };
        for k in run {
            methods[k] = method;
            track.steps[k] = Some(match method {
                FillMethod::Cv => cv.track.steps[k].expect("cv fill is gap-free"),
                _ => {
                    let kin = decode(&path[k], &model.roi)?;
                    AisMessage {
                        mmsi: grid.mmsi,
                        timestamp: grid.time_of(k),
                        lat: kin.lat,
                        lon: kin.lon,
                        sog: kin.sog,
                        cog: kin.cog,
                        vessel_type: vt,
                    }
                }
            });
        }
    }
    Ok(Reconstruction { track, methods })
}

/// Great-circle-free position error in km (local equirectangular).
pub fn position_error_km(a: &AisMessage, b: &AisMessage) -> f64 {
    LocalProjection::new(a.lat, a.lon).distance_km((a.lat, a.lon), (b.lat, b.lon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::KM_PER_DEG_LAT;

    fn msg(t: i64, lat: f64, lon: f64, sog: f64, cog: f64) -> AisMessage {
        AisMessage { mmsi: 1, timestamp: t, lat, lon, sog, cog, vessel_type: None }
    }

    /// Due north at 10 knots from (45, 5), one message every 10 minutes.
    fn straight(n: usize) -> GridTrack {
        let step_deg = 10.0 * KM_PER_NM / 6.0 / KM_PER_DEG_LAT;
        let steps = (0..n).map(|k| Some(msg(600 * k as i64, 45.0 + step_deg * k as f64, 5.0, 10.0, 0.0))).collect();
        GridTrack { id: 3, mmsi: 1, t0: 0, dt: 600, steps }
    }

    #[test]
    fn cv_recovers_straight_motion() {
        let truth = straight(30);
        let filled = cv_fill(&truth.with_gap(10..22)).unwrap();
        for k in 10..22 {
            assert!(position_error_km(filled.message(k), truth.steps[k].as_ref().unwrap()) < 1e-9);
            assert_eq!(filled.methods[k], FillMethod::Cv);
        }
        assert_eq!(filled.methods[9], FillMethod::Observed);
    }

    #[test]
    fn cv_dead_reckons_one_sided_gaps() {
        let truth = straight(20);
        let filled = cv_fill(&truth.with_gap(12..20)).unwrap();
        for k in 12..20 {
            assert!(position_error_km(filled.message(k), truth.steps[k].as_ref().unwrap()) < 1e-6);
        }
        let filled = cv_fill(&truth.with_gap(0..5)).unwrap();
        assert!(position_error_km(filled.message(0), truth.steps[0].as_ref().unwrap()) < 1e-6);
    }

    #[test]
    fn cv_midpoint_error_is_the_corner_cut() {
        // east 6 steps then north 6 steps, 1 km per step on a local plane
        let p = LocalProjection::new(45.0, 5.0);
        let pts: Vec<(f64, f64)> = (0..=12).map(|k| if k <= 6 { (k as f64, 0.0) } else { (6.0, (k - 6) as f64) }).collect();
        let steps = pts
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| {
                let (lat, lon) = p.from_km(x, y);
                Some(msg(600 * k as i64, lat, lon, 3.24, 0.0))
            })
            .collect();
        let truth = GridTrack { id: 0, mmsi: 1, t0: 0, dt: 600, steps };
        let filled = cv_fill(&truth.with_gap(1..12)).unwrap();
        let e = position_error_km(filled.message(6), truth.steps[6].as_ref().unwrap());
        // the chord from (0,0) to (6,6) passes (3,3); the corner is (6,0)
        assert!((e - 18f64.sqrt()).abs() < 1e-3, "{e}");
    }

    #[test]
    fn switch_rules() {
        assert_eq!(confidence_switch(&[-0.1, -0.2, 0.0], 6, -50.0), FillMethod::Model);
        assert_eq!(confidence_switch(&[-0.1; 8], 6, -50.0), FillMethod::Model);
        let uniform = 80.0 * 0.5f64.ln();
        assert_eq!(confidence_switch(&[uniform; 10], 6, -50.0), FillMethod::Cv);
        assert_eq!(confidence_switch(&[], 6, -50.0), FillMethod::Cv);
        // only the last k count
        let mut s = vec![-500.0; 5];
        s.extend([-1.0; 6]);
        assert_eq!(confidence_switch(&s, 6, -50.0), FillMethod::Model);
    }

    #[test]
    fn missing_runs_finds_all_gaps() {
        let g = straight(10).with_gap(2..4).with_gap(7..10);
        assert_eq!(missing_runs(&g), vec![2..4, 7..10]);
    }

    fn small_model() -> VrnnModel {
        let roi = RoiConfig {
            lat_min: 44.9,
            lat_max: 46.0,
            lon_min: 4.5,
            lon_max: 5.5,
            lat_bins: 20,
            lon_bins: 10,
            sog_bins: 10,
            cog_bins: 12,
            sog_max: 20.0,
            dt: 600,
        };
        VrnnModel::new(roi, 8, 4, 11).unwrap()
    }

    #[test]
    fn model_fill_shapes_and_determinism() {
        let m = small_model();
        let truth = straight(30);
        let cfg = ReconstructConfig { n_particles: 1, ..Default::default() };
        let gapped = truth.with_gap(10..22);
        let a = reconstruct_gap(&m, &gapped, &cfg).unwrap();
        assert_eq!(a.methods.iter().filter(|&&x| x == FillMethod::Model).count(), 12);
        assert_eq!(a.track.observed(), 30);
        assert_eq!(a, reconstruct_gap(&m, &gapped, &cfg).unwrap());
        for s in a.track.steps.iter().flatten() {
            assert!(m.roi.contains(s.lat, s.lon));
        }
        assert_eq!(reconstruct_gap(&m, &truth, &cfg).unwrap().track, truth);
        assert!(matches!(reconstruct_gap(&m, &truth.with_gap(0..3), &cfg), Err(Error::Unsupported(_))));
    }

    #[test]
    fn confident_threshold_routes_to_cv() {
        let m = small_model();
        let gapped = straight(30).with_gap(10..22);
        let cfg = ReconstructConfig { n_particles: 4, tau: Some(0.0), ..Default::default() };
        let r = reconstruct_gap(&m, &gapped, &cfg).unwrap();
        assert!(r.methods[10..22].iter().all(|&x| x == FillMethod::Cv));
        let cfg = ReconstructConfig { tau: Some(f64::NEG_INFINITY), ..cfg };
        let r = reconstruct_gap(&m, &gapped, &cfg).unwrap();
        assert!(r.methods[10..22].iter().all(|&x| x == FillMethod::Model));
    }
}
