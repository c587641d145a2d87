//! `MGLCCP1` denoiser checkpoint.
//!
//! ```text
//! "MGLCCP1" | u32 version | u64 len + JSON metadata
//! u32 layer count
//! per layer: u32 inputs | u32 outputs | u8 activation | f32 weights (row-major) | f32 biases
//! ```

use std::io::{Read, Write};
use std::path::Path;

use mglc_core::diffusion::{Checkpoint, DenoiserConfig, DenoiserNet, NoiseSchedule, ScheduleConfig, TrainingMeta};
use mglc_core::grid::{GridSpec, NormCodec};
use mglc_core::tinynet::{Activation, LayerShape, Network};
use serde::{Deserialize, Serialize};

use super::{Reader, Writer};
use crate::Result;

pub const MAGIC: &[u8; 7] = b"MGLCCP1";
pub const VERSION: u32 = 1;

/// Refuse to allocate absurd layers from a corrupt header.
const MAX_LAYER_PARAMS: u64 = 1 << 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    grid: GridSpec,
    schedule: ScheduleConfig,
    codec: NormCodec,
    denoiser: DenoiserConfig,
    training: TrainingMeta,
}

pub fn write_to<W: Write>(w: W, ck: &Checkpoint) -> std::io::Result<W> {
    let mut w = Writer::new(w);
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.json(&Metadata {
        grid: *ck.grid(),
        schedule: ck.schedule.config(),
        codec: ck.codec,
        denoiser: ck.denoiser.config(),
        training: ck.meta.clone(),
    })?;
    let net = ck.denoiser.network();
    w.u32(net.layers().len() as u32)?;
    for (l, shape) in net.layers().iter().enumerate() {
        w.u32(shape.inputs as u32)?;
        w.u32(shape.outputs as u32)?;
        w.u8(shape.activation.tag())?;
        let (weights, bias) = net.layer_params(l);
        w.f32s(weights)?;
        w.f32s(bias)?;
    }
    w.finish()
}

pub fn read_from<R: Read>(r: R, path: &Path) -> Result<Checkpoint> {
    let mut r = Reader::new(r, path);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.corrupt(format!("unsupported checkpoint version {version}")));
    }
    let meta: Metadata = r.json()?;
    let count = r.u32()? as usize;
    let mut layers = Vec::new();
    let mut params = Vec::new();
    for l in 0..count {
        let inputs = r.u32()? as usize;
        let outputs = r.u32()? as usize;
        let tag = r.u8()?;
        let activation =
            Activation::from_tag(tag).ok_or_else(|| r.corrupt(format!("layer {l}: unknown activation tag {tag}")))?;
        if (inputs as u64 + 1) * outputs as u64 > MAX_LAYER_PARAMS {
            return Err(r.corrupt(format!("layer {l}: implausible shape {inputs}x{outputs}")));
        }
        params.extend(r.f32s(inputs * outputs + outputs)?);
        layers.push(LayerShape { inputs, outputs, activation });
    }
    r.end()?;
    let net = Network::from_parts(layers, params).map_err(|e| r.corrupt(format!("weights: {e}")))?;
    let denoiser =
        DenoiserNet::from_network(meta.grid, meta.denoiser, net).map_err(|e| r.corrupt(format!("weights: {e}")))?;
    let schedule = NoiseSchedule::new(meta.schedule).map_err(|e| r.corrupt(format!("schedule: {e}")))?;
    if meta.codec.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(r.corrupt("codec scales must be positive and finite"));
    }
    let mut ck = Checkpoint::new(denoiser, schedule, meta.codec);
    ck.meta = meta.training;
    Ok(ck)
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    super::save_with(path, |w| write_to(w, ck))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    super::load_with(path, read_from)
}
