//! Stage glue shared by the `aisvrnn` binary and the integration tests.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::classifier::{split_by_day, DAY_STEPS};
use crate::config::RunConfig;
use crate::embedding::VrnnModel;
use crate::error::{Error, Result};
use crate::fourhot::{encode, FourHotVector};
use crate::ingest::{align_to_grid, resample_train, GridTrack, IngestConfig, RoiConfig, Track};
use crate::rng::substream;

/// Shuffles with the `"split"` sub-stream and cuts train / validation /
/// test by the given fractions. Each part is returned sorted by id.
pub fn split_tracks(tracks: Vec<Track>, fractions: [f64; 3], seed: u64) -> [Vec<Track>; 3] {
    let mut tracks = tracks;
    tracks.sort_by_key(|t| t.id);
    tracks.shuffle(&mut substream(seed, "split", 0));
    let n = tracks.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let mut test = tracks.split_off((n_train + n_val).min(n));
    let mut val = tracks.split_off(n_train.min(n));
    let mut train = tracks;
    for part in [&mut train, &mut val, &mut test] {
        part.sort_by_key(|t| t.id);
    }
    [train, val, test]
}

/// Resampled and encoded training sequences. Tracks rejected by
/// [`resample_train`] are skipped.
pub fn training_codes(tracks: &[Track], roi: &RoiConfig, ingest: &IngestConfig) -> Result<Vec<Vec<FourHotVector>>> {
    tracks
        .par_iter()
        .filter_map(|t| resample_train(t, roi, ingest))
        .map(|t| t.messages.iter().map(|m| encode(m, roi)).collect::<Result<Vec<_>>>())
        .collect()
}

pub fn grids(tracks: &[Track], dt: i64) -> Vec<GridTrack> {
    tracks.iter().map(|t| align_to_grid(t, dt)).collect()
}

/// One grid per (track, day) pair, for the classifier.
pub fn day_grids(tracks: &[Track], dt: i64) -> Vec<GridTrack> {
    debug_assert_eq!(dt * DAY_STEPS as i64, 86_400);
    tracks.iter().flat_map(|t| split_by_day(&align_to_grid(t, dt))).collect()
}

pub fn new_model(cfg: &RunConfig) -> Result<VrnnModel> {
    VrnnModel::new(cfg.roi, cfg.hidden_dim, cfg.latent_dim, cfg.seed)
}

/// Loads a checkpoint and refuses it when its ROI differs from the config.
pub fn load_model(path: &std::path::Path, cfg: &RunConfig) -> Result<VrnnModel> {
    VrnnModel::load_for_roi(path, &cfg.roi)
}

/// Fails unless every track id is unique.
pub fn check_unique_ids(tracks: &[Track]) -> Result<()> {
    let mut ids: Vec<u64> = tracks.iter().map(|t| t.id).collect();
    ids.sort_unstable();
    match ids.windows(2).find(|w| w[0] == w[1]) {
        Some(w) => Err(Error::Format(format!("duplicate track id {}", w[0]))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracks(n: u64) -> Vec<Track> {
        (0..n).map(|id| Track { id, mmsi: id, messages: Vec::new() }).collect()
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let [a, b, c] = split_tracks(tracks(101), [0.6, 0.3, 0.1], 4);
        assert_eq!((a.len(), b.len(), c.len()), (61, 30, 10));
        let mut ids: Vec<u64> = a.iter().chain(&b).chain(&c).map(|t| t.id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..101).collect::<Vec<_>>());
        assert_eq!(split_tracks(tracks(101), [0.6, 0.3, 0.1], 4)[1], b);
        assert_ne!(split_tracks(tracks(101), [0.6, 0.3, 0.1], 5)[1], b);
        let [a, b, c] = split_tracks(tracks(3), [1.0, 0.0, 0.0], 0);
        assert_eq!((a.len(), b.len(), c.len()), (3, 0, 0));
    }
}
