//! Mono 16-bit PCM WAV input/output and fixed-hop framing.

use std::io::{Seek, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Canonical analysis rate.
pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// 5 ms at 16 kHz.
pub const HOP_SAMPLES: usize = 80;
/// 25 ms at 16 kHz.
pub const WIN_SAMPLES: usize = 400;

/// Mono audio with samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Waveform {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Fails unless the waveform is at `rate` Hz. No resampling is done anywhere.
    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate_hz != rate {
            return Err(Error::SampleRate {
                found: self.sample_rate_hz,
                expected: rate,
            });
        }
        Ok(())
    }
}

/// Reads a 16-bit PCM mono WAV file. Samples are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::NotWav {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Multichannel(spec.channels));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}-bit {:?}; only 16-bit integer PCM is supported",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::NotWav {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Quantizes one sample to 16-bit PCM, hard-clipping outside [-1, 1].
pub fn quantize(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a 16-bit mono WAV. The file appears at `path` only once complete.
pub fn write_wav(waveform: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = std::io::Cursor::new(Vec::new());
    write_wav_to(waveform, &mut buf).map_err(|e| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::io(path, std::io::Error::other(other)),
    })?;
    crate::features::write_atomic(path, buf.get_ref())
}

/// Writes the waveform as a RIFF/WAVE stream (PCM, 16-bit, mono).
pub fn write_wav_to<W: Write + Seek>(waveform: &Waveform, out: W) -> hound::Result<()> {
    if let Some(bad) = waveform.samples.iter().find(|s| !s.is_finite()) {
        return Err(hound::Error::IoError(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("non-finite sample {bad}"),
        )));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::new(out, spec)?;
    {
        let mut w16 = writer.get_i16_writer(waveform.samples.len() as u32);
        for &s in &waveform.samples {
            w16.write_sample(quantize(s));
        }
        w16.flush()?;
    }
    writer.finalize()
}

/// Overlapping fixed-length analysis windows. Frame `i` starts at sample `i * hop_samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Vec<f64>>,
    pub hop_samples: usize,
    pub win_samples: usize,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Number of frames needed so every one of `len` samples lies in some frame.
pub fn frame_count(len: usize, hop: usize, win: usize) -> usize {
    if len <= win {
        1
    } else {
        (len - win).div_ceil(hop) + 1
    }
}

fn check_framing(hop: usize, win: usize) -> Result<()> {
    if hop == 0 || win == 0 {
        return Err(Error::invalid("hop and window length must be positive"));
    }
    if hop > win {
        return Err(Error::invalid(format!("hop {hop} exceeds window {win}")));
    }
    Ok(())
}

/// Splits the waveform into windows of `win` samples every `hop` samples,
/// zero-padding the tail so the last samples are covered.
pub fn frame_signal(waveform: &Waveform, hop: usize, win: usize) -> Result<FrameSequence> {
    check_framing(hop, win)?;
    if waveform.is_empty() {
        return Err(Error::invalid("cannot frame an empty waveform"));
    }
    let x = &waveform.samples;
    let n = frame_count(x.len(), hop, win);
    let frames = (0..n)
        .map(|i| {
            let start = i * hop;
            let mut frame = vec![0.0; win];
            let end = (start + win).min(x.len());
            frame[..end - start].copy_from_slice(&x[start..end]);
            frame
        })
        .collect();
    Ok(FrameSequence {
        frames,
        hop_samples: hop,
        win_samples: win,
    })
}
