//! Analysis/synthesis vocoder built on Gaussian-mixture spectral envelopes,
//! an HMM over the mixture parameters, and a wavelet-decomposed continuous F0.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audio;
pub mod contf0;
pub mod cwt;
pub mod dsp;
pub mod error;
pub mod features;
pub mod gmm;
pub mod hmm;
pub mod metrics;
pub mod pipeline;
pub mod spectral;
pub mod synthesis;

pub use audio::{frame_signal, read_wav, write_wav, FrameSequence, Waveform};
pub use contf0::{ContF0Track, PitchObservation, PitchSettings};
pub use cwt::CwtDecomposition;
pub use error::{Error, Result};
pub use features::{DecodeError, FeatureFile};
pub use gmm::{Component, GmmEnvelope};
pub use hmm::{Emission, HmmModel, ObservationSequence};
pub use metrics::McdReport;
pub use pipeline::{analyze, copy_synthesis, mcd_between, AnalysisOptions, CopySynthesis};
pub use spectral::{MelCepstrum, SpectralEnvelope};
pub use synthesis::{apply_anchor_distortion, synthesize, ExcitationPlan, SynthesisOptions};
