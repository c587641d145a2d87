//! Regular grids over the 2-D state domain and the three-channel fields the
//! denoiser operates on.
//!
//! A [`GridField`] stores channel 0 = `f1(X)`, channel 1 = `f2(X)` and
//! channel 2 = `V(X)`. Each channel is a row-major `G × G` block where row `i`
//! follows the y axis and column `j` follows the x axis, so grid point
//! `(i, j)` sits at `(x_min + j·Δx, y_min + i·Δy)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Number of channels in every field: two vector-field components and `V`.
pub const CHANNELS: usize = 3;

/// Index of the Lyapunov channel.
pub const LYAPUNOV_CHANNEL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Points per axis.
    pub resolution: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::square(4.0, 32)
    }
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, resolution: usize) -> Result<Self> {
        let spec = Self { x_min, x_max, y_min, y_max, resolution };
        spec.validate()?;
        Ok(spec)
    }

    /// `[-half_width, half_width]²` with `resolution` points per axis. Not
    /// validated; call [`GridSpec::validate`] before use.
    pub const fn square(half_width: f64, resolution: usize) -> Self {
        Self {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [self.x_min, self.x_max, self.y_min, self.y_max];
        if bounds.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("grid bounds must be finite"));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::Config("grid bounds must satisfy min < max"));
        }
        if self.resolution < 4 {
            return Err(Error::Config("grid resolution must be at least 4"));
        }
        if !(self.x_min < 0.0 && 0.0 < self.x_max && self.y_min < 0.0 && 0.0 < self.y_max) {
            return Err(Error::Config("the origin must lie strictly inside the grid domain"));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.resolution - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.resolution - 1) as f64
    }

    /// Number of grid points, `G²`.
    pub fn len(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn is_empty(&self) -> bool {
        self.resolution == 0
    }

    /// State at row `i` (y) and column `j` (x).
    #[inline]
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.x_min + j as f64 * self.dx(),
            self.y_min + i as f64 * self.dy(),
        ]
    }

    /// State at flat row-major index `g`.
    #[inline]
    pub fn point_at(&self, g: usize) -> [f64; 2] {
        self.point(g / self.resolution, g % self.resolution)
    }

    /// Values held by one field: `3 · G²`.
    pub fn field_len(&self) -> usize {
        CHANNELS * self.len()
    }
}

/// All grid points in row-major order.
pub fn make_grid(spec: &GridSpec) -> Result<Vec<[f64; 2]>> {
    spec.validate()?;
    Ok((0..spec.len()).map(|g| spec.point_at(g)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    spec: GridSpec,
    data: Vec<f64>,
}

impl GridField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { data: vec![0.0; spec.field_len()], spec }
    }

    /// Wraps channel-major data. All entries must be finite.
    pub fn from_vec(spec: GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.field_len() {
            return Err(Error::Shape { expected: spec.field_len(), found: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "grid field", index });
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.spec.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.spec.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        let g = self.spec.resolution;
        self.data[c * g * g + i * g + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rounds every value to the nearest `f32`, the precision used on disk.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

/// Channel selection for [`field_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelMask(pub [bool; CHANNELS]);

impl ChannelMask {
    pub const ALL: Self = Self([true, true, true]);
    /// The two vector-field channels, excluding `V`.
    pub const VECTOR_FIELD: Self = Self([true, true, false]);
}

/// Squared Euclidean distance over the selected channels.
pub fn field_distance(a: &GridField, b: &GridField, mask: ChannelMask) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::GridMismatch);
    }
    let mut total = 0.0;
    for c in (0..CHANNELS).filter(|&c| mask.0[c]) {
        total += a
            .channel(c)
            .iter()
            .zip(b.channel(c))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    Ok(total)
}

/// Per-channel affine map `raw ↦ (raw − offset) / scale` into the model's
/// pixel range.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NormCodec {
    pub scales: [f64; CHANNELS],
    pub offsets: [f64; CHANNELS],
}

impl NormCodec {
    pub fn identity() -> Self {
        Self { scales: [1.0; CHANNELS], offsets: [0.0; CHANNELS] }
    }

    /// Max-abs scaling with zero offset, fitted over every record.
    pub fn fit<'a, I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a GridField>,
    {
        let mut scales = [0.0f64; CHANNELS];
        let mut seen = 0usize;
        for field in records {
            for c in 0..CHANNELS {
                for (k, &v) in field.channel(c).iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            context: "codec fitting",
                            index: c * field.spec.len() + k,
                        });
                    }
                    scales[c] = scales[c].max(v.abs());
                }
            }
            seen += 1;
        }
        if seen == 0 {
            return Err(Error::EmptyDataset);
        }
        if let Some(c) = scales.iter().position(|&s| s == 0.0) {
            return Err(Error::ZeroChannel(c));
        }
        Ok(Self { scales, offsets: [0.0; CHANNELS] })
    }

    #[inline]
    pub fn encode_value(&self, c: usize, raw: f64) -> f64 {
        (raw - self.offsets[c]) / self.scales[c]
    }

    #[inline]
    pub fn decode_value(&self, c: usize, encoded: f64) -> f64 {
        encoded * self.scales[c] + self.offsets[c]
    }

    /// No clamping: fields outside the fitting set may land outside `[-1, 1]`.
    pub fn encode(&self, field: &GridField) -> GridField {
        self.map(field, Self::encode_value)
    }

    pub fn decode(&self, field: &GridField) -> GridField {
        self.map(field, Self::decode_value)
    }

    fn map(&self, field: &GridField, op: fn(&Self, usize, f64) -> f64) -> GridField {
        let n = field.spec.len();
        let data = field
            .data
            .iter()
            .enumerate()
            .map(|(k, &v)| op(self, k / n, v))
            .collect();
        GridField { spec: field.spec, data }
    }
}

/// Convenience wrapper matching [`NormCodec::fit`].
pub fn fit_codec<'a, I>(records: I) -> Result<NormCodec>
where
    I: IntoIterator<Item = &'a GridField>,
{
    NormCodec::fit(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> GridSpec {
        GridSpec::new(-1.0, 1.0, -1.0, 1.0, 4).unwrap()
    }

    #[test]
    fn grid_includes_endpoints_and_centre() {
        // G = 3 would violate the resolution floor, so check affine spacing
        // on G = 5, which contains the centre.
        let spec = GridSpec::new(-1.0, 1.0, -1.0, 1.0, 5).unwrap();
        let pts = make_grid(&spec).unwrap();
        assert_eq!(pts.len(), 25);
        assert_eq!(pts[0], [-1.0, -1.0]);
        assert_eq!(pts[12], [0.0, 0.0]);
        assert_eq!(pts[24], [1.0, 1.0]);
        // row-major: second point moves along x
        assert_eq!(pts[1], [-0.5, -1.0]);
        assert_eq!(pts[5], [-1.0, -0.5]);
    }

    #[test]
    fn default_grid_spacing() {
        let spec = GridSpec::default();
        let pts = make_grid(&spec).unwrap();
        assert_eq!(pts.len(), 1024);
        assert!((spec.dx() - 8.0 / 31.0).abs() < 1e-15);
        assert!((pts[1][0] - pts[0][0] - 8.0 / 31.0).abs() < 1e-12);
        assert_eq!(pts[1023], [4.0, 4.0]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(GridSpec::new(-1.0, 1.0, -1.0, 1.0, 1).is_err());
        assert!(GridSpec::new(-1.0, 1.0, -1.0, 1.0, 3).is_err());
        assert!(GridSpec::new(1.0, -1.0, -1.0, 1.0, 8).is_err());
        assert!(GridSpec::new(0.0, 1.0, -1.0, 1.0, 8).is_err());
        assert!(make_grid(&GridSpec::square(1.0, 1)).is_err());
    }

    fn field_with(spec: GridSpec, f: impl Fn(usize) -> f64) -> GridField {
        GridField::from_vec(spec, (0..spec.field_len()).map(f).collect()).unwrap()
    }

    #[test]
    fn codec_uses_max_abs_per_channel() {
        let spec = small();
        let n = spec.len();
        let mut a = field_with(spec, |_| 0.5);
        a.channel_mut(0)[0] = -2.0;
        a.channel_mut(0)[1] = 1.0;
        let codec = NormCodec::fit([&a]).unwrap();
        assert_eq!(codec.scales[0], 2.0);
        let enc = codec.encode(&a);
        assert_eq!(enc.channel(0)[0], -1.0);
        assert_eq!(enc.channel(0)[1], 0.5);

        let mut b = field_with(spec, |_| 1.0);
        b.channel_mut(1)[n - 1] = 3.0;
        let mut c = field_with(spec, |_| 1.0);
        c.channel_mut(1)[0] = -5.0;
        let codec = NormCodec::fit([&b, &c]).unwrap();
        assert_eq!(codec.scales[1], 5.0);
    }

    #[test]
    fn codec_errors() {
        let spec = small();
        let mut bad = field_with(spec, |_| 1.0);
        bad.as_mut_slice()[3] = f64::NAN;
        assert!(matches!(NormCodec::fit([&bad]), Err(Error::NonFinite { .. })));
        assert_eq!(NormCodec::fit(core::iter::empty()), Err(Error::EmptyDataset));
        let mut zero_v = field_with(spec, |_| 1.0);
        zero_v.channel_mut(2).fill(0.0);
        assert_eq!(NormCodec::fit([&zero_v]), Err(Error::ZeroChannel(2)));
    }

    #[test]
    fn encode_is_not_clamped_and_zero_is_fixed() {
        let spec = small();
        let data = field_with(spec, |k| (k % 7) as f64 - 3.0);
        let codec = NormCodec::fit([&data]).unwrap();
        let zero = GridField::zeros(spec);
        assert_eq!(codec.encode(&zero), zero);
        let mut big = GridField::zeros(spec);
        big.channel_mut(0)[0] = 2.0 * codec.scales[0];
        assert_eq!(codec.encode(&big).channel(0)[0], 2.0);
    }

    #[test]
    fn distance_semantics() {
        let spec = small();
        let a = field_with(spec, |k| k as f64);
        assert_eq!(field_distance(&a, &a, ChannelMask::ALL).unwrap(), 0.0);
        let mut b = a.clone();
        b.channel_mut(1)[3] += 2.0;
        assert_eq!(field_distance(&a, &b, ChannelMask::ALL).unwrap(), 4.0);
        let mut v = a.clone();
        v.channel_mut(2)[0] += 10.0;
        assert_eq!(field_distance(&a, &v, ChannelMask::VECTOR_FIELD).unwrap(), 0.0);
        let other = GridField::zeros(GridSpec::new(-2.0, 2.0, -1.0, 1.0, 4).unwrap());
        assert_eq!(field_distance(&a, &other, ChannelMask::ALL), Err(Error::GridMismatch));
    }

    #[test]
    fn from_vec_checks_shape_and_finiteness() {
        let spec = small();
        assert!(matches!(
            GridField::from_vec(spec, vec![0.0; 5]),
            Err(Error::Shape { .. })
        ));
        let mut data = vec![0.0; spec.field_len()];
        data[7] = f64::INFINITY;
        assert!(matches!(
            GridField::from_vec(spec, data),
            Err(Error::NonFinite { index: 7, .. })
        ));
    }

    proptest! {
        #[test]
        fn codec_round_trip_and_containment(
            values in proptest::collection::vec(-1e3f64..1e3, 48 * 2),
        ) {
            let spec = small();
            let a = GridField::from_vec(spec, values[..48].to_vec()).unwrap();
            let b = GridField::from_vec(spec, values[48..].to_vec()).unwrap();
            prop_assume!(NormCodec::fit([&a, &b]).is_ok());
            let codec = NormCodec::fit([&a, &b]).unwrap();
            for f in [&a, &b] {
                let enc = codec.encode(f);
                prop_assert!(enc.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
                let back = codec.decode(&enc);
                for (x, y) in f.as_slice().iter().zip(back.as_slice()) {
                    prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
                }
            }
        }

        #[test]
        fn distance_is_symmetric_and_nonnegative(
            values in proptest::collection::vec(-10f64..10.0, 48 * 2),
        ) {
            let spec = small();
            let a = GridField::from_vec(spec, values[..48].to_vec()).unwrap();
            let b = GridField::from_vec(spec, values[48..].to_vec()).unwrap();
            let ab = field_distance(&a, &b, ChannelMask::ALL).unwrap();
            let ba = field_distance(&b, &a, ChannelMask::ALL).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(ab == 0.0, a == b);
        }
    }
}
