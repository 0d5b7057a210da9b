//! Flat `key = value` configuration files with `[section]` headers.
//!
//! ```text
//! # comment
//! [roi]
//! lat_min = 45.0
//! ```
//!
//! Values are raw strings; typed access goes through [`Reader`], which
//! rejects keys and sections nobody asked for.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::anomaly::{CellConfig, ContrarioConfig};
use crate::classifier::{ClassifierTrainConfig, CnnConfig};
use crate::embedding::TrainConfig;
use crate::error::{Error, Result};
use crate::ingest::{IngestConfig, RoiConfig};
use crate::reconstruct::ReconstructConfig;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed file: section name -> key -> value. Keys before any header live
/// in the section `""`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
    order: Vec<String>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let ln = i + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if name.is_empty() || ini.sections.contains_key(&name) {
                    return Err(Error::Config(format!("line {ln}: empty or repeated section [{name}]")));
                }
                ini.sections.insert(name.clone(), BTreeMap::new());
                ini.order.push(name.clone());
                current = name;
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {ln}: expected `key = value`, got {raw:?}")))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {ln}: empty key")));
            }
            if !ini.sections.contains_key(&current) {
                ini.order.push(current.clone());
            }
            let sec = ini.sections.entry(current.clone()).or_default();
            if sec.contains_key(&key) {
                return Err(Error::Config(format!("line {ln}: duplicate key `{key}` in [{current}]")));
            }
            sec.insert(key, Entry { value: v.trim().to_string(), line: ln });
        }
        Ok(ini)
    }

    /// Section names in file order.
    pub fn section_names(&self) -> &[String] {
        &self.order
    }
}

/// Consuming typed view over an [`Ini`].
#[derive(Debug)]
pub struct Reader {
    ini: Ini,
}

impl Reader {
    pub fn new(ini: Ini) -> Self {
        Reader { ini }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(Reader::new(Ini::parse(text)?))
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.ini.sections.contains_key(section)
    }

    /// Names of sections starting with `prefix`, in file order.
    pub fn sections_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.ini.order.iter().filter(|s| s.starts_with(prefix)).cloned().collect()
    }

    pub fn take_raw(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let e = self.ini.sections.get_mut(section)?.remove(key)?;
        Some((e.value, e.line))
    }

    pub fn take<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>> {
        match self.take_raw(section, key) {
            None => Ok(None),
            Some((v, ln)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {ln}: bad value {v:?} for [{section}] {key}"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T> {
        Ok(self.take(section, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, section: &str, key: &str) -> Result<T> {
        self.take(section, key)?.ok_or_else(|| Error::Config(format!("missing [{section}] {key}")))
    }

    /// Whitespace-separated numbers.
    pub fn take_list(&mut self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take_raw(section, key) {
            None => Ok(None),
            Some((v, ln)) => v
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {ln}: bad number list {v:?} for [{section}] {key}"))),
        }
    }

    /// Errors on any key that was never taken.
    pub fn finish(self) -> Result<()> {
        for name in &self.ini.order {
            if let Some((k, e)) = self.ini.sections[name].iter().min_by_key(|(_, e)| e.line) {
                return Err(Error::Config(format!("line {}: unknown key `{k}` in [{name}]", e.line)));
            }
        }
        Ok(())
    }
}

/// Reads an ROI from `section`: bounds plus either explicit bin counts or
/// resolutions (`pos_res_km`, `sog_res_knots`, `cog_res_deg`).
pub fn parse_roi(r: &mut Reader, section: &str) -> Result<RoiConfig> {
    let lat = (r.require(section, "lat_min")?, r.require(section, "lat_max")?);
    let lon = (r.require(section, "lon_min")?, r.require(section, "lon_max")?);
    let sog_max: f64 = r.take_or(section, "sog_max", 30.0)?;
    let dt: i64 = r.take_or(section, "dt", 600)?;
    let mut roi = match r.take::<usize>(section, "lat_bins")? {
        Some(lat_bins) => RoiConfig {
            lat_min: lat.0,
            lat_max: lat.1,
            lon_min: lon.0,
            lon_max: lon.1,
            lat_bins,
            lon_bins: r.require(section, "lon_bins")?,
            sog_bins: r.require(section, "sog_bins")?,
            cog_bins: r.require(section, "cog_bins")?,
            sog_max,
            dt,
        },
        None => RoiConfig::from_resolution(
            lat,
            lon,
            r.take_or(section, "pos_res_km", 1.0)?,
            r.take_or(section, "sog_res_knots", 1.0)?,
            r.take_or(section, "cog_res_deg", 5.0)?,
            sog_max,
        )?,
    };
    roi.dt = dt;
    roi.check()?;
    Ok(roi)
}

/// Everything a pipeline run needs besides per-command file paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub workdir: PathBuf,
    pub roi: RoiConfig,
    pub ingest: IngestConfig,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub train: TrainConfig,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub n_samples: usize,
    pub cells: CellConfig,
    pub contrario: ContrarioConfig,
    pub reconstruct: ReconstructConfig,
    pub cnn: CnnConfig,
    pub cnn_train: ClassifierTrainConfig,
}

const HOUR: f64 = 3600.0;

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let mut r = Reader::parse(text)?;
        let seed: u64 = r.take_or("run", "seed", 0)?;
        let workdir: String = r.take_or("run", "workdir", ".".to_string())?;

        let roi = parse_roi(&mut r, "roi")?;

        let d = IngestConfig::default();
        let hours = |r: &mut Reader, key: &str, default: i64| -> Result<i64> {
            Ok((r.take_or("ingest", key, default as f64 / HOUR)? * HOUR).round() as i64)
        };
        let ingest = IngestConfig {
            gap_split: hours(&mut r, "gap_split_h", d.gap_split)?,
            min_duration: hours(&mut r, "min_duration_h", d.min_duration)?,
            max_duration: hours(&mut r, "max_duration_h", d.max_duration)?,
            max_train_gap: hours(&mut r, "max_train_gap_h", d.max_train_gap)?,
            stationary_sog: r.take_or("ingest", "stationary_sog", d.stationary_sog)?,
            stationary_fraction: r.take_or("ingest", "stationary_fraction", d.stationary_fraction)?,
        };

        let hidden_dim: usize = r.take_or("model", "hidden_dim", 32)?;
        let latent_dim: usize = r.take_or("model", "latent_dim", hidden_dim)?;

        let t = TrainConfig::default();
        let train = TrainConfig {
            epochs: r.take_or("train", "epochs", t.epochs)?,
            batch_size: r.take_or("train", "batch_size", t.batch_size)?,
            lr: r.take_or("train", "lr", t.lr)?,
            seed,
            clip_norm: r.take("train", "clip_norm")?,
        };

        let split = [
            r.take_or("split", "train", 0.6)?,
            r.take_or("split", "validation", 0.3)?,
            r.take_or("split", "test", 0.1)?,
        ];

        let n_samples = r.take_or("score", "n_samples", 50)?;

        let cd = CellConfig::default();
        let cells = CellConfig {
            cell_km: r.take_or("detect", "cell_km", cd.cell_km)?,
            min_count: r.take_or("detect", "min_count", cd.min_count)?,
            k_sigma: r.take_or("detect", "k_sigma", cd.k_sigma)?,
        };
        let ad = ContrarioConfig::default();
        let contrario = ContrarioConfig {
            k_sigma: cells.k_sigma,
            epsilon: r.take_or("detect", "epsilon", ad.epsilon)?,
            window_steps: r.take_or("detect", "window_steps", ad.window_steps)?,
            n_tests: r.take("detect", "n_tests")?,
        };

        let rd = ReconstructConfig::default();
        let reconstruct = ReconstructConfig {
            n_particles: r.take_or("reconstruct", "n_particles", rd.n_particles)?,
            seed,
            tau: r.take("reconstruct", "tau")?,
            confidence_steps: r.take_or("reconstruct", "confidence_steps", rd.confidence_steps)?,
        };

        let cn = CnnConfig::default();
        let cnn = CnnConfig {
            channels1: r.take_or("classifier", "channels1", cn.channels1)?,
            channels2: r.take_or("classifier", "channels2", cn.channels2)?,
            kernel: r.take_or("classifier", "kernel", cn.kernel)?,
            pool: r.take_or("classifier", "pool", cn.pool)?,
        };
        let ct = ClassifierTrainConfig::default();
        let cnn_train = ClassifierTrainConfig {
            epochs: r.take_or("classifier", "epochs", ct.epochs)?,
            batch_size: r.take_or("classifier", "batch_size", ct.batch_size)?,
            lr: r.take_or("classifier", "lr", ct.lr)?,
            seed,
        };
        r.finish()?;

        let cfg = RunConfig {
            seed,
            workdir: PathBuf::from(workdir),
            roi,
            ingest,
            hidden_dim,
            latent_dim,
            train,
            split,
            n_samples,
            cells,
            contrario,
            reconstruct,
            cnn,
            cnn_train,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden_dim == 0 || self.latent_dim == 0 {
            return bad("model dims must be >= 1".into());
        }
        if self.train.batch_size == 0 || !(self.train.lr >= 0.0 && self.train.lr.is_finite()) {
            return bad("train.batch_size must be >= 1 and train.lr finite and >= 0".into());
        }
        if self.split.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must lie in [0,1] and sum to 1", self.split));
        }
        if self.n_samples == 0 || self.reconstruct.n_particles == 0 {
            return bad("score.n_samples and reconstruct.n_particles must be >= 1".into());
        }
        if !(self.cells.cell_km > 0.0) || !(self.cells.k_sigma >= 0.0) || !(self.contrario.epsilon > 0.0) {
            return bad("detect.cell_km and detect.epsilon must be > 0, detect.k_sigma >= 0".into());
        }
        if self.contrario.window_steps == 0 {
            return bad("detect.window_steps must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[roi]\nlat_min = 45\nlat_max = 46\nlon_min = 5\nlon_max = 6\n";

    #[test]
    fn parses_sections_comments_and_defaults() {
        let text = format!("# top\n[run]\nseed = 9\n{MINIMAL}sog_max = 25\n[model]\nhidden_dim = 16\n");
        let c = RunConfig::from_str(&text).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!((c.hidden_dim, c.latent_dim), (16, 16));
        assert_eq!(c.roi.sog_bins, 25);
        assert_eq!(c.roi.cog_bins, 72);
        assert_eq!(c.ingest, IngestConfig::default());
        assert_eq!(c.train.lr, 3e-4);
        assert_eq!(c.reconstruct.seed, 9);
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        let e = RunConfig::from_str(&format!("{MINIMAL}colour = red\n")).unwrap_err();
        assert!(e.to_string().contains("unknown key `colour`"), "{e}");
        let e = RunConfig::from_str(&format!("{MINIMAL}[extra]\nx = 1\n")).unwrap_err();
        assert!(e.to_string().contains("[extra]"), "{e}");
    }

    #[test]
    fn malformed_input() {
        assert!(RunConfig::from_str("[roi]\nlat_min 45\n").is_err());
        assert!(RunConfig::from_str(&format!("{MINIMAL}lat_min = 1\n")).is_err());
        assert!(RunConfig::from_str("[roi]\nlat_min = 45\n").is_err());
        assert!(RunConfig::from_str(&format!("{MINIMAL}[split]\ntrain = 0.9\n")).is_err());
        assert!(RunConfig::from_str(&format!("{MINIMAL}[train]\nlr = abc\n")).is_err());
    }

    #[test]
    fn lists_and_prefixed_sections() {
        let mut r = Reader::parse("[route.a]\nwaypoints = 1 2, 3 4\n[route.b]\n[other]\n").unwrap();
        assert_eq!(r.sections_with_prefix("route."), vec!["route.a", "route.b"]);
        assert_eq!(r.take_list("route.a", "waypoints").unwrap(), Some(vec![1.0, 2.0, 3.0, 4.0]));
        r.finish().unwrap();
    }
}
