//! Mel-cepstral distortion and F0 error.

use std::fmt::Write;

use rayon::prelude::*;

use crate::contf0::ContF0Track;
use crate::error::{Error, Result};
use crate::spectral::MelCepstrum;

/// `10 / ln 10`: the dB factor in the distortion formula.
pub const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10;

#[derive(Debug, Clone, PartialEq)]
pub struct McdReport {
    pub mean_mcd_db: f64,
    pub per_frame_mcd_db: Vec<f64>,
    pub n_frames: usize,
    /// Highest coefficient index compared.
    pub order: usize,
}

impl McdReport {
    /// `key=value` summary lines, then one `frame=<i> mcd_db=<v>` row per frame
    /// when `rows` is set. Values are printed to full precision.
    pub fn to_text(&self, rows: bool) -> String {
        let mut s = String::new();
        writeln!(s, "mean_mcd_db={}", self.mean_mcd_db).unwrap();
        writeln!(s, "n_frames={}", self.n_frames).unwrap();
        writeln!(s, "order={}", self.order).unwrap();
        if rows {
            for (i, v) in self.per_frame_mcd_db.iter().enumerate() {
                writeln!(s, "frame={i} mcd_db={v}").unwrap();
            }
        }
        s
    }
}

/// Per frame `(10/ln 10) sqrt(Σ_{m=1}^{M} (c_org(m) - c_syn(m))²)`; c(0) is excluded.
pub fn mcd(org: &[MelCepstrum], syn: &[MelCepstrum]) -> Result<McdReport> {
    if org.len() != syn.len() {
        return Err(Error::FrameCountMismatch {
            expected: org.len(),
            found: syn.len(),
        });
    }
    let order = org.first().map_or(0, |c| c.order());
    if org.iter().chain(syn).any(|c| c.order() != order) {
        return Err(Error::LengthMismatch("mel-cepstra differ in order".into()));
    }
    let per_frame: Vec<f64> = org
        .par_iter()
        .zip(syn)
        .map(|(a, b)| {
            let d2: f64 = a.coeffs[1..]
                .iter()
                .zip(&b.coeffs[1..])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            MCD_SCALE * d2.sqrt()
        })
        .collect();
    let mean = if per_frame.is_empty() {
        0.0
    } else {
        per_frame.iter().sum::<f64>() / per_frame.len() as f64
    };
    Ok(McdReport {
        mean_mcd_db: mean,
        n_frames: per_frame.len(),
        per_frame_mcd_db: per_frame,
        order,
    })
}

/// Root-mean-square F0 difference in Hz.
pub fn f0_rmse(reference: &ContF0Track, test: &ContF0Track) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::FrameCountMismatch {
            expected: reference.len(),
            found: test.len(),
        });
    }
    if reference.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = reference
        .f0_hz
        .iter()
        .zip(&test.f0_hz)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / reference.len() as f64).sqrt())
}
