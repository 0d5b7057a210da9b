//! "Four-hot" codes: one equal-width one-hot block per attribute
//! (latitude, longitude, SOG, COG), concatenated.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AisMessage, RoiConfig};

/// Attribute blocks in code order.
pub const BLOCKS: usize = 4;

/// A four-hot code stored as the bin index of each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FourHotVector {
    pub bins: [usize; BLOCKS],
}

/// Decoded bin-centre kinematics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub lat: f64,
    pub lon: f64,
    pub sog: f64,
    pub cog: f64,
}

impl RoiConfig {
    pub fn block_sizes(&self) -> [usize; BLOCKS] {
        [self.lat_bins, self.lon_bins, self.sog_bins, self.cog_bins]
    }

    pub fn block_offsets(&self) -> [usize; BLOCKS] {
        let s = self.block_sizes();
        [0, s[0], s[0] + s[1], s[0] + s[1] + s[2]]
    }

    /// Total code length `L`.
    pub fn code_len(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    fn block_range(&self, block: usize) -> (f64, f64) {
        match block {
            0 => (self.lat_min, self.lat_max),
            1 => (self.lon_min, self.lon_max),
            2 => (0.0, self.sog_max),
            _ => (0.0, 360.0),
        }
    }
}

/// `floor((v - min)·bins/(max - min))` clamped to `[0, bins-1]`.
pub fn bin_index(value: f64, min: f64, max: f64, bins: usize) -> usize {
    let raw = ((value - min) * bins as f64 / (max - min)).floor();
    raw.clamp(0.0, (bins - 1) as f64) as usize
}

pub fn bin_center(index: usize, min: f64, max: f64, bins: usize) -> f64 {
    min + (index as f64 + 0.5) * (max - min) / bins as f64
}

impl FourHotVector {
    /// Positions of the four set bits in the length-`L` code.
    pub fn active(&self, roi: &RoiConfig) -> [usize; BLOCKS] {
        let off = roi.block_offsets();
        [off[0] + self.bins[0], off[1] + self.bins[1], off[2] + self.bins[2], off[3] + self.bins[3]]
    }

    pub fn to_bits(&self, roi: &RoiConfig) -> Vec<u8> {
        let mut bits = vec![0u8; roi.code_len()];
        for i in self.active(roi) {
            bits[i] = 1;
        }
        bits
    }

    /// Parses a dense bit vector; each block must hold exactly one 1.
    pub fn from_bits(bits: &[u8], roi: &RoiConfig) -> Result<Self> {
        if bits.len() != roi.code_len() {
            return Err(Error::Format(format!("code length {} vs {}", bits.len(), roi.code_len())));
        }
        let sizes = roi.block_sizes();
        let off = roi.block_offsets();
        let mut out = [0usize; BLOCKS];
        for b in 0..BLOCKS {
            let block = &bits[off[b]..off[b] + sizes[b]];
            let ones: Vec<usize> = block.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i).collect();
            if ones.len() != 1 || block[ones[0]] != 1 {
                return Err(Error::Format(format!("block {b} has {} set bits", ones.len())));
            }
            out[b] = ones[0];
        }
        Ok(FourHotVector { bins: out })
    }
}

pub fn encode_values(lat: f64, lon: f64, sog: f64, cog: f64, roi: &RoiConfig) -> Result<FourHotVector> {
    let values = [lat, lon, sog, cog];
    let sizes = roi.block_sizes();
    let mut bins = [0usize; BLOCKS];
    for b in 0..BLOCKS {
        let (lo, hi) = roi.block_range(b);
        let v = values[b];
        if !v.is_finite() || v < lo || v > hi {
            return Err(Error::Domain(format!("attribute {b} value {v} outside [{lo}, {hi}]")));
        }
        // 360° is north again
        let v = if b == 3 && v == 360.0 { 0.0 } else { v };
        bins[b] = bin_index(v, lo, hi, sizes[b]);
    }
    Ok(FourHotVector { bins })
}

pub fn encode(msg: &AisMessage, roi: &RoiConfig) -> Result<FourHotVector> {
    encode_values(msg.lat, msg.lon, msg.sog, msg.cog, roi)
}

pub fn decode(v: &FourHotVector, roi: &RoiConfig) -> Result<Kinematics> {
    let sizes = roi.block_sizes();
    if v.bins.iter().zip(&sizes).any(|(&i, &n)| i >= n) {
        return Err(Error::Format(format!("bin indices {:?} exceed block sizes {:?}", v.bins, sizes)));
    }
    let c = |b: usize| {
        let (lo, hi) = roi.block_range(b);
        bin_center(v.bins[b], lo, hi, sizes[b])
    };
    Ok(Kinematics { lat: c(0), lon: c(1), sog: c(2), cog: c(3) })
}

/// Draws one bin from non-negative block weights (normalised here).
pub fn sample_block<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Numeric("block weights must be finite and non-negative".into()));
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numeric("all-zero block weights".into()));
    }
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

/// `lat_bins × lon_bins` counts of visited position cells (row = lat bin).
pub fn accumulate_image(track: &[FourHotVector], roi: &RoiConfig) -> Vec<Vec<u32>> {
    let mut img = vec![vec![0u32; roi.lon_bins]; roi.lat_bins];
    for v in track {
        img[v.bins[0]][v.bins[1]] += 1;
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
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

    #[test]
    fn lower_edge_and_upper_edge() {
        let v = encode_values(47.0, -6.0, 0.0, 0.0, &roi()).unwrap();
        assert_eq!(v.bins, [0, 0, 0, 0]);
        let v = encode_values(48.0, -4.0, 30.0, 359.9, &roi()).unwrap();
        assert_eq!(v.bins, [99, 149, 29, 71]);
    }

    #[test]
    fn sog_one_knot_bins() {
        let v = encode_values(47.5, -5.0, 12.0, 90.0, &roi()).unwrap();
        assert_eq!(v.bins[2], 12);
        assert_eq!(v.bins[3], 18);
    }

    #[test]
    fn out_of_range_is_domain_error() {
        assert!(matches!(encode_values(46.9, -5.0, 1.0, 1.0, &roi()), Err(Error::Domain(_))));
        assert!(matches!(encode_values(47.5, -5.0, 31.0, 1.0, &roi()), Err(Error::Domain(_))));
    }

    #[test]
    fn decode_bin_center() {
        let k = decode(&FourHotVector { bins: [0, 0, 0, 0] }, &roi()).unwrap();
        assert!((k.sog - 0.5).abs() < 1e-12);
        assert!((k.cog - 2.5).abs() < 1e-12);
    }

    #[test]
    fn malformed_bits_are_rejected() {
        let r = roi();
        let mut bits = FourHotVector { bins: [3, 4, 5, 6] }.to_bits(&r);
        assert_eq!(FourHotVector::from_bits(&bits, &r).unwrap().bins, [3, 4, 5, 6]);
        bits[7] = 1;
        assert!(matches!(FourHotVector::from_bits(&bits, &r), Err(Error::Format(_))));
    }

    #[test]
    fn deterministic_and_statistical_sampling() {
        let mut rng = substream(5, "fourhot", 0);
        for _ in 0..100 {
            assert_eq!(sample_block(&[0.0, 0.0, 3.0, 0.0], &mut rng).unwrap(), 2);
        }
        assert!(sample_block(&[0.0, 0.0], &mut rng).is_err());

        let bins = 10;
        let n = 100_000;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            counts[sample_block(&vec![1.0; bins], &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / bins as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{c}");
        }

        let mut ones = 0usize;
        for _ in 0..n {
            ones += sample_block(&[0.2, 0.8], &mut rng).unwrap();
        }
        let sigma = (n as f64 * 0.16).sqrt();
        assert!((ones as f64 - 0.8 * n as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn image_counts_timesteps() {
        let r = roi();
        let one = vec![FourHotVector { bins: [10, 20, 0, 0] }];
        let img = accumulate_image(&one, &r);
        assert_eq!(img[10][20], 1);
        assert_eq!(img.iter().flatten().sum::<u32>(), 1);
    }

    #[test]
    fn diagonal_track_forms_staircase() {
        let r = roi();
        let track: Vec<_> = (0..60)
            .map(|k| encode_values(47.1 + 0.012 * k as f64, -5.8 + 0.02 * k as f64, 10.0, 45.0, &r).unwrap())
            .collect();
        let img = accumulate_image(&track, &r);
        assert_eq!(img.iter().flatten().map(|&c| c as usize).sum::<usize>(), track.len());
        let mut cells: Vec<(usize, usize)> = Vec::new();
        for (i, row) in img.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c > 0 {
                    cells.push((i, j));
                }
            }
        }
        cells.sort();
        assert!(cells.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
    }

    proptest! {
        #[test]
        fn round_trip_within_half_bin(lat in 47.0f64..=48.0, lon in -6.0f64..=-4.0, sog in 0.0f64..30.0, cog in 0.0f64..360.0) {
            let r = roi();
            let v = encode_values(lat, lon, sog, cog, &r).unwrap();
            prop_assert_eq!(v.to_bits(&r).iter().filter(|&&b| b == 1).count(), 4);
            let k = decode(&v, &r).unwrap();
            prop_assert!((k.lat - lat).abs() <= 0.5 / 100.0 + 1e-12);
            prop_assert!((k.lon - lon).abs() <= 0.5 * 2.0 / 150.0 + 1e-12);
            prop_assert!((k.sog - sog).abs() <= 0.5 + 1e-12);
            prop_assert!((k.cog - cog).abs() <= 2.5 + 1e-12);
            let again = encode_values(k.lat, k.lon, k.sog, k.cog, &r).unwrap();
            prop_assert_eq!(again, v);
        }

        #[test]
        fn bin_index_is_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bin_index(lo, -10.0, 10.0, 7) <= bin_index(hi, -10.0, 10.0, 7));
        }
    }
}
