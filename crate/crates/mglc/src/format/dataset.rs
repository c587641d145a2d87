//! `MGLCDS1` dataset container.
//!
//! ```text
//! "MGLCDS1" | u32 record count | u64 len + JSON metadata
//! per record: u8 family tag | spec values (f64) | 3·G·G channel values (f32)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use mglc_core::grid::{GridField, NormCodec};
use mglc_core::lyapunov::{Dataset, DatasetConfig, DatasetRecord, Family, RecordSpec};
use serde::{Deserialize, Serialize};

use super::{Reader, Writer};
use crate::Result;

pub const MAGIC: &[u8; 7] = b"MGLCDS1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    config: DatasetConfig,
    codec: NormCodec,
    /// Family-1 candidates drawn per record (1 for family 2).
    attempts: Vec<usize>,
}

pub fn write_to<W: Write>(w: W, ds: &Dataset) -> std::io::Result<W> {
    let mut w = Writer::new(w);
    w.bytes(MAGIC)?;
    w.u32(ds.records.len() as u32)?;
    w.json(&Metadata {
        config: ds.config.clone(),
        codec: ds.codec,
        attempts: ds.records.iter().map(|r| r.attempts).collect(),
    })?;
    for r in &ds.records {
        w.u8(r.family().tag())?;
        w.f64s(&r.spec.to_values())?;
        w.f64_as_f32(r.field.as_slice())?;
    }
    w.finish()
}

pub fn read_from<R: Read>(r: R, path: &Path) -> Result<Dataset> {
    let mut r = Reader::new(r, path);
    r.magic(MAGIC)?;
    let count = r.u32()? as usize;
    let meta: Metadata = r.json()?;
    let cfg = meta.config;
    if count != cfg.len() || meta.attempts.len() != count {
        return Err(r.corrupt("record count disagrees with metadata"));
    }
    cfg.grid.validate().map_err(|e| r.corrupt(format!("grid: {e}")))?;
    let hidden = cfg.lyapunov.hidden;
    let mut records = Vec::with_capacity(count);
    for (index, &attempts) in meta.attempts.iter().enumerate() {
        let tag = r.u8()?;
        let family = Family::from_tag(tag).ok_or_else(|| r.corrupt(format!("record {index}: unknown family tag {tag}")))?;
        let values = r.f64s(RecordSpec::value_count(family, hidden))?;
        let spec = RecordSpec::from_values(family, hidden, &values).map_err(|e| r.corrupt(format!("record {index}: {e}")))?;
        let data = r.f32s(cfg.grid.field_len())?.into_iter().map(f64::from).collect();
        let field = GridField::from_vec(cfg.grid, data).map_err(|e| r.corrupt(format!("record {index}: {e}")))?;
        records.push(DatasetRecord { spec, field, seed: cfg.seed, index: index as u64, attempts });
    }
    r.end()?;
    Ok(Dataset { config: cfg, records, codec: meta.codec })
}

pub fn save(path: &Path, ds: &Dataset) -> Result<()> {
    super::save_with(path, |w| write_to(w, ds))
}

pub fn load(path: &Path) -> Result<Dataset> {
    super::load_with(path, read_from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mglc_core::grid::GridSpec;
    use mglc_core::lyapunov::build_dataset;

    fn small() -> Dataset {
        build_dataset(&DatasetConfig { n1: 1, n2: 3, grid: GridSpec::square(4.0, 8), seed: 2, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = small();
        let bytes = write_to(Vec::new(), &ds).unwrap();
        let back = read_from(bytes.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, ds);
        assert_eq!(write_to(Vec::new(), &back).unwrap(), bytes);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let bytes = write_to(Vec::new(), &small()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = read_from(bad.as_slice(), Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
        let err = read_from(&bytes[..bytes.len() - 3], Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let mut long = bytes.clone();
        long.push(0);
        assert!(read_from(long.as_slice(), Path::new("mem")).is_err());
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn rejects_unknown_family() {
        let ds = small();
        let mut bytes = write_to(Vec::new(), &ds).unwrap();
        let meta_len = u64::from_le_bytes(bytes[11..19].try_into().unwrap()) as usize;
        bytes[19 + meta_len] = 9;
        let err = read_from(bytes.as_slice(), Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("family tag"), "{err}");
    }
}
