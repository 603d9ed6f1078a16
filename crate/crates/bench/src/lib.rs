//! Benchmarks only; see `benches/vocoder.rs`.

use std::path::PathBuf;

/// Path of a WAV fixture bundled with the core crate.
pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../core/tests/fixtures/{name}.wav"))
}
