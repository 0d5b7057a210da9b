use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::model::{VrnnModel, VrnnParams, PARAM_NAMES};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::ingest::RoiConfig;
use crate::nn::{Activation, Dense, Lstm, ParamSet};

const KIND: &str = "vrnn";

fn roi_meta(roi: &RoiConfig) -> Vec<(String, String)> {
    vec![
        ("lat_min".into(), format!("{:?}", roi.lat_min)),
        ("lat_max".into(), format!("{:?}", roi.lat_max)),
        ("lon_min".into(), format!("{:?}", roi.lon_min)),
        ("lon_max".into(), format!("{:?}", roi.lon_max)),
        ("lat_bins".into(), roi.lat_bins.to_string()),
        ("lon_bins".into(), roi.lon_bins.to_string()),
        ("sog_bins".into(), roi.sog_bins.to_string()),
        ("cog_bins".into(), roi.cog_bins.to_string()),
        ("sog_max".into(), format!("{:?}", roi.sog_max)),
        ("dt".into(), roi.dt.to_string()),
    ]
}

pub(crate) fn roi_from(ck: &Checkpoint) -> Result<RoiConfig> {
    Ok(RoiConfig {
        lat_min: ck.parse("lat_min")?,
        lat_max: ck.parse("lat_max")?,
        lon_min: ck.parse("lon_min")?,
        lon_max: ck.parse("lon_max")?,
        lat_bins: ck.parse("lat_bins")?,
        lon_bins: ck.parse("lon_bins")?,
        sog_bins: ck.parse("sog_bins")?,
        cog_bins: ck.parse("cog_bins")?,
        sog_max: ck.parse("sog_max")?,
        dt: ck.parse("dt")?,
    })
}

/// Names the first ROI field on which two configurations disagree.
pub fn roi_mismatch(a: &RoiConfig, b: &RoiConfig) -> Option<&'static str> {
    let fa = roi_meta(a);
    let fb = roi_meta(b);
    let names = ["lat_min", "lat_max", "lon_min", "lon_max", "lat_bins", "lon_bins", "sog_bins", "cog_bins", "sog_max", "dt"];
    fa.iter().zip(&fb).zip(names).find(|((x, y), _)| x.1 != y.1).map(|(_, n)| n)
}

impl VrnnModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = roi_meta(&self.roi);
        meta.push(("hidden_dim".into(), self.hidden_dim.to_string()));
        meta.push(("latent_dim".into(), self.latent_dim.to_string()));
        meta.push(("seed".into(), self.seed.to_string()));
        meta.push(("param_count".into(), self.param_count().to_string()));
        let tensors = PARAM_NAMES.iter().map(|n| n.to_string()).zip(self.params.tensors().into_iter().cloned()).collect();
        Checkpoint { kind: KIND.into(), meta, tensors }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.kind != KIND {
            return Err(Error::Format(format!("checkpoint kind {:?} is not {KIND:?}", ck.kind)));
        }
        let roi = roi_from(&ck)?;
        roi.check().map_err(|e| Error::Format(e.to_string()))?;
        let hidden_dim: usize = ck.parse("hidden_dim")?;
        let latent_dim: usize = ck.parse("latent_dim")?;
        let seed: u64 = ck.parse("seed")?;
        let shapes = VrnnParams::shapes(roi.code_len(), hidden_dim, latent_dim);
        let mut t = ck.take_tensors(&PARAM_NAMES, &shapes)?.into_iter();
        let mut dense = |act: Activation| Dense::from_parts(t.next().unwrap(), t.next().unwrap(), act);
        use Activation::*;
        let params = VrnnParams {
            phi_x: dense(Relu)?,
            phi_z: dense(Relu)?,
            prior_hidden: dense(Relu)?,
            prior_mu: dense(Identity)?,
            prior_sigma: dense(Softplus)?,
            post_hidden: dense(Relu)?,
            post_mu: dense(Identity)?,
            post_sigma: dense(Softplus)?,
            emit_hidden: dense(Relu)?,
            emit_logits: dense(Identity)?,
            lstm: Lstm::from_parts(t.next().unwrap(), t.next().unwrap())?,
        };
        Ok(VrnnModel { roi, hidden_dim, latent_dim, seed, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_checkpoint().write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        VrnnModel::from_checkpoint(Checkpoint::read(File::open(path)?)?)
    }

    /// Loads and rejects checkpoints trained on a different ROI geometry.
    pub fn load_for_roi(path: impl AsRef<Path>, roi: &RoiConfig) -> Result<Self> {
        let m = VrnnModel::load(path)?;
        if let Some(field) = roi_mismatch(&m.roi, roi) {
            return Err(Error::Format(format!("checkpoint ROI field {field} differs from configuration")));
        }
        Ok(m)
    }
}
