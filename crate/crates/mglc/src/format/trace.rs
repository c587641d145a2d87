//! `MGLCTR1` synthesis trace.
//!
//! ```text
//! "MGLCTR1" | u32 step count | u64 len + JSON metadata
//! per step: encoded x_t (f32) | encoded x_{0|t} (f32)
//! final field, raw units (f32)
//! ```
//!
//! Fields are stored as `f32`, so a loaded trace equals the saved one up to
//! single-precision rounding of its grids.

use std::io::{Read, Write};
use std::path::Path;

use mglc_core::dynamics::ControllerParams;
use mglc_core::grid::{GridField, GridSpec, NormCodec};
use mglc_core::guidance::{GuidanceCoeffs, StepRecord, SynthesisTrace};
use serde::{Deserialize, Serialize};

use super::{Reader, Writer};
use crate::Result;

pub const MAGIC: &[u8; 7] = b"MGLCTR1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepMeta {
    t: usize,
    t_prev: usize,
    psi: [f64; 2],
    loss: Option<f64>,
    /// `[c_t, a_t]`.
    coeffs: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    system: String,
    restart: usize,
    psi_init: [f64; 2],
    controller: ControllerParams,
    grid: GridSpec,
    codec: NormCodec,
    steps: Vec<StepMeta>,
}

pub fn write_to<W: Write>(w: W, trace: &SynthesisTrace) -> std::io::Result<W> {
    let mut w = Writer::new(w);
    w.bytes(MAGIC)?;
    w.u32(trace.steps.len() as u32)?;
    w.json(&Metadata {
        system: trace.system.clone(),
        restart: trace.restart,
        psi_init: trace.psi_init,
        controller: trace.controller,
        grid: *trace.final_field.spec(),
        codec: trace.codec,
        steps: trace
            .steps
            .iter()
            .map(|s| StepMeta {
                t: s.t,
                t_prev: s.t_prev,
                psi: s.psi,
                loss: s.loss,
                coeffs: s.coeffs.map(|c| [c.c, c.a]),
            })
            .collect(),
    })?;
    for s in &trace.steps {
        w.f64_as_f32(s.x_t.as_slice())?;
        w.f64_as_f32(s.x0.as_slice())?;
    }
    w.f64_as_f32(trace.final_field.as_slice())?;
    w.finish()
}

pub fn read_from<R: Read>(r: R, path: &Path) -> Result<SynthesisTrace> {
    let mut r = Reader::new(r, path);
    r.magic(MAGIC)?;
    let count = r.u32()? as usize;
    let meta: Metadata = r.json()?;
    if meta.steps.len() != count {
        return Err(r.corrupt("step count disagrees with metadata"));
    }
    let grid = meta.grid;
    grid.validate().map_err(|e| r.corrupt(format!("grid: {e}")))?;
    let field = |r: &mut Reader<'_, R>| -> Result<GridField> {
        let data = r.f32s(grid.field_len())?.into_iter().map(f64::from).collect();
        GridField::from_vec(grid, data).map_err(|e| r.corrupt(e.to_string()))
    };
    let mut steps = Vec::with_capacity(count);
    for s in meta.steps {
        let x_t = field(&mut r)?;
        let x0 = field(&mut r)?;
        steps.push(StepRecord {
            t: s.t,
            t_prev: s.t_prev,
            psi: s.psi,
            loss: s.loss,
            coeffs: s.coeffs.map(|[c, a]| GuidanceCoeffs { c, a }),
            x_t,
            x0,
        });
    }
    let final_field = field(&mut r)?;
    r.end()?;
    Ok(SynthesisTrace {
        system: meta.system,
        restart: meta.restart,
        psi_init: meta.psi_init,
        controller: meta.controller,
        steps,
        final_field,
        codec: meta.codec,
    })
}

pub fn save(path: &Path, trace: &SynthesisTrace) -> Result<()> {
    super::save_with(path, |w| write_to(w, trace))
}

pub fn load(path: &Path) -> Result<SynthesisTrace> {
    super::load_with(path, read_from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mglc_core::diffusion::{NoiseSchedule, ScheduleConfig};
    use mglc_core::dynamics::pendulum;
    use mglc_core::guidance::{synthesize_with, SynthesisConfig};

    fn small() -> SynthesisTrace {
        let grid = GridSpec::square(4.0, 4);
        let sched = NoiseSchedule::new(ScheduleConfig { steps: 20, sampling_steps: 5 }).unwrap();
        let zero = |x: &GridField, _t: usize| Ok(GridField::zeros(*x.spec()));
        let codec = NormCodec { scales: [2.0, 30.0, 10.0], offsets: [0.0; 3] };
        synthesize_with(&pendulum(), &zero, &sched, &codec, &grid, &SynthesisConfig::default(), 1).unwrap()
    }

    #[test]
    fn round_trip_is_stable() {
        let trace = small();
        let bytes = write_to(Vec::new(), &trace).unwrap();
        let back = read_from(bytes.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back.steps.len(), trace.steps.len());
        assert_eq!(back.controller, trace.controller);
        assert_eq!(back.steps[2].psi, trace.steps[2].psi);
        assert_eq!(back.steps[2].coeffs, trace.steps[2].coeffs);
        for (a, b) in back.final_field.as_slice().iter().zip(trace.final_field.as_slice()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(write_to(Vec::new(), &back).unwrap(), bytes);
    }

    #[test]
    fn rejects_wrong_magic() {
        let mut bytes = write_to(Vec::new(), &small()).unwrap();
        bytes[6] = b'9';
        let err = read_from(bytes.as_slice(), Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }
}
