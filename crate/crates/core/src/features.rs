//! Binary feature file: everything analysis produces and synthesis consumes.
//!
//! Layout (little-endian, reals as f32, counts as u32):
//!
//! ```text
//! "GMWF" u16 version
//! sample_rate hop win fft K n_states n_scales  a_0:f32  n_frames flags
//! GMM     n_frames × (gain, K × (w, μ, σ))
//! HMM     P[n×n], means[n×d], vars[n×d], path[n_frames]:u32,
//!         residuals[n_frames×d] if flags bit 0
//! CWT     scales[M], W[M×n_frames], ε[n_frames], mean_level
//! ENERGY  n_frames
//! ```
//!
//! `d = 1 + K`: log-gain followed by the K weights.

use std::fmt;
use std::path::Path;

use crate::cwt::CwtDecomposition;
use crate::error::{Error, Result};
use crate::gmm::{Component, GmmEnvelope};

pub const MAGIC: &[u8; 4] = b"GMWF";
pub const VERSION: u16 = 1;
pub const FLAG_HMM_RESIDUALS: u32 = 1;

const HEADER_BYTES: usize = 4 + 2 + 4 * 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct DecodeError {
    pub block: &'static str,
    pub offset: usize,
    pub reason: String,
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "malformed feature file: {} block at byte {}: {}",
            self.block, self.offset, self.reason
        )
    }
}

/// One frame of mixture parameters as stored: gain, then `[w, μ, σ]` per component.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmRecord {
    pub gain: f32,
    pub components: Vec<[f32; 3]>,
}

impl GmmRecord {
    pub fn from_gmm(g: &GmmEnvelope) -> Self {
        GmmRecord {
            gain: g.gain as f32,
            components: g
                .components
                .iter()
                .map(|c| [c.weight as f32, c.mean_hz as f32, c.sigma_hz as f32])
                .collect(),
        }
    }

    pub fn to_gmm(&self) -> GmmEnvelope {
        GmmEnvelope {
            gain: self.gain as f64,
            components: self
                .components
                .iter()
                .map(|c| Component {
                    weight: c[0] as f64,
                    mean_hz: c[1] as f64,
                    sigma_hz: c[2] as f64,
                })
                .collect(),
        }
    }
}

/// Row-major matrices; `dim` is the observation dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmBlock {
    pub dim: usize,
    pub transition: Vec<f32>,
    pub means: Vec<f32>,
    pub vars: Vec<f32>,
    pub path: Vec<u32>,
    pub residuals: Option<Vec<f32>>,
}

impl HmmBlock {
    pub fn mean(&self, state: usize) -> &[f32] {
        &self.means[state * self.dim..(state + 1) * self.dim]
    }

    pub fn residual(&self, frame: usize) -> Option<&[f32]> {
        self.residuals
            .as_ref()
            .map(|r| &r[frame * self.dim..(frame + 1) * self.dim])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CwtBlock {
    pub scales: Vec<f32>,
    /// Row-major, one row per scale.
    pub coefficients: Vec<f32>,
    pub residual: Vec<f32>,
    pub mean_level: f32,
}

impl CwtBlock {
    pub fn from_decomposition(d: &CwtDecomposition) -> Self {
        CwtBlock {
            scales: d.scales.iter().map(|&a| a as f32).collect(),
            coefficients: d.coefficients.iter().flatten().map(|&w| w as f32).collect(),
            residual: d.residual.iter().map(|&e| e as f32).collect(),
            mean_level: d.mean_level as f32,
        }
    }

    pub fn to_decomposition(&self, frame_hop_s: f64) -> CwtDecomposition {
        let n = self.residual.len();
        CwtDecomposition {
            scales: self.scales.iter().map(|&a| a as f64).collect(),
            coefficients: if n == 0 {
                vec![Vec::new(); self.scales.len()]
            } else {
                self.coefficients
                    .chunks(n)
                    .map(|row| row.iter().map(|&w| w as f64).collect())
                    .collect()
            },
            residual: self.residual.iter().map(|&e| e as f64).collect(),
            mean_level: self.mean_level as f64,
            frame_hop_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub sample_rate_hz: u32,
    pub hop_samples: u32,
    pub win_samples: u32,
    pub fft_size: u32,
    pub n_components: u32,
    pub n_states: u32,
    pub scale0_s: f32,
    pub frames: Vec<GmmRecord>,
    pub hmm: HmmBlock,
    pub cwt: CwtBlock,
    /// Per-frame RMS of the analysed signal.
    pub energy: Vec<f32>,
}

impl FeatureFile {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_scales(&self) -> usize {
        self.cwt.scales.len()
    }

    pub fn frame_hop_s(&self) -> f64 {
        self.hop_samples as f64 / self.sample_rate_hz as f64
    }

    pub fn flags(&self) -> u32 {
        if self.hmm.residuals.is_some() {
            FLAG_HMM_RESIDUALS
        } else {
            0
        }
    }

    /// Checks every block size against the header counts.
    pub fn validate(&self) -> Result<()> {
        let t = self.n_frames();
        let k = self.n_components as usize;
        let n = self.n_states as usize;
        let m = self.n_scales();
        let bad = |what: &str| Err(Error::invalid(format!("feature file: {what}")));
        if self.frames.iter().any(|f| f.components.len() != k) {
            return bad("GMM record with wrong component count");
        }
        let h = &self.hmm;
        if h.dim != 1 + k {
            return bad("HMM dimension must be 1 + K");
        }
        if h.transition.len() != n * n || h.means.len() != n * h.dim || h.vars.len() != n * h.dim {
            return bad("HMM parameter sizes do not match n_states");
        }
        if h.path.len() != t || h.path.iter().any(|&s| s as usize >= n) {
            return bad("HMM state path does not match frames/states");
        }
        if h.residuals.as_ref().is_some_and(|r| r.len() != t * h.dim) {
            return bad("HMM residuals have the wrong length");
        }
        if self.cwt.coefficients.len() != m * t || self.cwt.residual.len() != t {
            return bad("CWT block does not match frame count");
        }
        if self.energy.len() != t {
            return bad("energy track does not match frame count");
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        for v in [
            self.sample_rate_hz,
            self.hop_samples,
            self.win_samples,
            self.fft_size,
            self.n_components,
            self.n_states,
            self.n_scales() as u32,
        ] {
            w.u32(v);
        }
        w.f32(self.scale0_s);
        w.u32(self.n_frames() as u32);
        w.u32(self.flags());
        for f in &self.frames {
            w.f32(f.gain);
            for c in &f.components {
                w.f32s(c);
            }
        }
        w.f32s(&self.hmm.transition);
        w.f32s(&self.hmm.means);
        w.f32s(&self.hmm.vars);
        for &s in &self.hmm.path {
            w.u32(s);
        }
        if let Some(r) = &self.hmm.residuals {
            w.f32s(r);
        }
        w.f32s(&self.cwt.scales);
        w.f32s(&self.cwt.coefficients);
        w.f32s(&self.cwt.residual);
        w.f32(self.cwt.mean_level);
        w.f32s(&self.energy);
        Ok(w.0)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader {
            bytes,
            pos: 0,
            block: "header",
        };
        if r.take(4)? != MAGIC {
            return Err(r.error_at(0, "bad magic"));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let sample_rate_hz = r.u32()?;
        let hop_samples = r.u32()?;
        let win_samples = r.u32()?;
        let fft_size = r.u32()?;
        let n_components = r.u32()?;
        let n_states = r.u32()?;
        let n_scales = r.u32()? as usize;
        let scale0_s = r.f32()?;
        let t = r.u32()? as usize;
        let flags_at = r.pos;
        let flags = r.u32()?;
        if flags & !FLAG_HMM_RESIDUALS != 0 {
            return Err(r.error_at(flags_at, format!("unknown flags {flags:#x}")));
        }
        if sample_rate_hz == 0 || hop_samples == 0 || win_samples == 0 || n_states == 0 {
            return Err(r.error_at(6, "zero rate, hop, window or state count"));
        }
        let k = n_components as usize;
        let n = n_states as usize;
        let d = 1 + k;
        debug_assert_eq!(r.pos, HEADER_BYTES);

        r.block = "GMM";
        r.expect(t.saturating_mul(4 * (1 + 3 * k)))?;
        let mut frames = Vec::with_capacity(t);
        for _ in 0..t {
            let gain = r.f32()?;
            let mut components = Vec::with_capacity(k);
            for _ in 0..k {
                components.push([r.f32()?, r.f32()?, r.f32()?]);
            }
            frames.push(GmmRecord { gain, components });
        }

        r.block = "HMM";
        let transition = r.f32s(n * n)?;
        let means = r.f32s(n * d)?;
        let vars = r.f32s(n * d)?;
        r.expect(4 * t)?;
        let mut path = Vec::with_capacity(t);
        for _ in 0..t {
            let at = r.pos;
            let s = r.u32()?;
            if s >= n_states {
                return Err(r.error_at(at, format!("state {s} out of range")));
            }
            path.push(s);
        }
        let residuals = if flags & FLAG_HMM_RESIDUALS != 0 {
            Some(r.f32s(t * d)?)
        } else {
            None
        };

        r.block = "CWT";
        let scales = r.f32s(n_scales)?;
        let coefficients = r.f32s(n_scales * t)?;
        let residual = r.f32s(t)?;
        let mean_level = r.f32()?;

        r.block = "energy";
        let energy = r.f32s(t)?;

        if r.pos != bytes.len() {
            r.block = "trailer";
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(FeatureFile {
            sample_rate_hz,
            hop_samples,
            win_samples,
            fft_size,
            n_components,
            n_states,
            scale0_s,
            frames,
            hmm: HmmBlock {
                dim: d,
                transition,
                means,
                vars,
                path,
                residuals,
            },
            cwt: CwtBlock {
                scales,
                coefficients,
                residual,
                mean_level,
            },
            energy,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::decode(&bytes)?)
    }

    /// Writes to a temporary file beside `path`, then renames it into place.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode()?)
    }
}

/// Writes `bytes` through a sibling temporary file so a partial file never
/// appears at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32s(&mut self, vs: &[f32]) {
        for &v in vs {
            self.f32(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    block: &'static str,
}

impl Reader<'_> {
    fn error_at(&self, offset: usize, reason: impl Into<String>) -> DecodeError {
        DecodeError {
            block: self.block,
            offset,
            reason: reason.into(),
        }
    }

    /// Fails early if fewer than `n` bytes remain.
    fn expect(&self, n: usize) -> Result<(), DecodeError> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(self.error_at(self.pos, format!("truncated: need {n} bytes, {left} left")));
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&[u8], DecodeError> {
        self.expect(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, DecodeError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DecodeError> {
        self.expect(n.saturating_mul(4))?;
        (0..n).map(|_| self.f32()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_file(residuals: bool) -> FeatureFile {
        let t = 3;
        let k = 2;
        let d = 1 + k;
        FeatureFile {
            sample_rate_hz: 16_000,
            hop_samples: 80,
            win_samples: 400,
            fft_size: 1024,
            n_components: k as u32,
            n_states: 2,
            scale0_s: 0.02,
            frames: (0..t)
                .map(|i| GmmRecord {
                    gain: i as f32 + 0.5,
                    components: vec![[0.25, 500.0, 100.0], [0.75, 2500.0 + i as f32, 300.0]],
                })
                .collect(),
            hmm: HmmBlock {
                dim: d,
                transition: vec![0.9, 0.1, 0.2, 0.8],
                means: (0..2 * d).map(|i| i as f32 * 0.1).collect(),
                vars: vec![1.0; 2 * d],
                path: vec![0, 1, 1],
                residuals: residuals.then(|| (0..t * d).map(|i| -(i as f32)).collect()),
            },
            cwt: CwtBlock {
                scales: vec![0.02, 0.04],
                coefficients: (0..2 * t).map(|i| i as f32 / 7.0).collect(),
                residual: vec![1e-3, -2e-3, f32::MIN_POSITIVE],
                mean_level: 4.7,
            },
            energy: vec![0.0, 0.1, 0.2],
        }
    }

    #[test]
    fn round_trip_is_identity() {
        for res in [false, true] {
            let f = sample_file(res);
            let bytes = f.encode().unwrap();
            assert_eq!(&bytes[..4], b"GMWF");
            assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
            assert_eq!(FeatureFile::decode(&bytes).unwrap(), f);
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = sample_file(true).encode().unwrap();
        let len = bytes.len();
        bytes.push(0);
        let e = FeatureFile::decode(&bytes).unwrap_err();
        assert_eq!(e.offset, len);
        assert!(e.to_string().contains("trailing"));
    }

    #[test]
    fn truncation_names_block() {
        let bytes = sample_file(false).encode().unwrap();
        let gmm_end = HEADER_BYTES + 3 * 4 * 7;
        let e = FeatureFile::decode(&bytes[..gmm_end + 5]).unwrap_err();
        assert_eq!(e.block, "HMM");
        let e = FeatureFile::decode(&bytes[..HEADER_BYTES + 3]).unwrap_err();
        assert_eq!(e.block, "GMM");
        assert_eq!(e.offset, HEADER_BYTES);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample_file(false).encode().unwrap();
        bytes[4] = 2;
        let e = FeatureFile::decode(&bytes).unwrap_err();
        assert!(e.reason.contains("version"));
        bytes[0] = b'X';
        assert!(FeatureFile::decode(&bytes).unwrap_err().reason.contains("magic"));
    }

    #[test]
    fn out_of_range_state_rejected() {
        let f = sample_file(false);
        let mut bytes = f.encode().unwrap();
        let path_at = HEADER_BYTES + 3 * 4 * 7 + 4 * (4 + 6 + 6);
        bytes[path_at] = 9;
        let e = FeatureFile::decode(&bytes).unwrap_err();
        assert_eq!((e.block, e.offset), ("HMM", path_at));
    }

    #[test]
    fn inconsistent_file_not_encoded() {
        let mut f = sample_file(false);
        f.energy.pop();
        assert!(f.encode().is_err());
    }

    #[test]
    fn atomic_write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.gmwf");
        let f = sample_file(true);
        f.write(&path).unwrap();
        assert_eq!(FeatureFile::read(&path).unwrap(), f);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
