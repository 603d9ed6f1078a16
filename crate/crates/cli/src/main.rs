use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmwave_core::pipeline::{copy_synthesis, mcd_between, AnalysisOptions};
use gmwave_core::synthesis::{DEFAULT_SEED, DEFAULT_SPLIT_HZ};
use gmwave_core::{analyze, read_wav, synthesize, write_wav, FeatureFile, Result, SynthesisOptions};

#[derive(Parser)]
#[command(name = "gmwave", version, about = "GMM/HMM envelope and wavelet-F0 vocoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a 16 kHz mono WAV into a feature file.
    Analyze {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Mixture components per frame.
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 10)]
        scales: usize,
        /// Smallest wavelet scale in seconds.
        #[arg(long, default_value_t = 0.02)]
        scale0: f64,
        #[arg(long, default_value_t = 1024)]
        fft: usize,
    },
    /// Resynthesize a waveform from a feature file.
    Synth {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Pulse/noise boundary in Hz.
        #[arg(long, default_value_t = DEFAULT_SPLIT_HZ)]
        split_hz: f64,
        /// Drop the wavelet residual from the F0 reconstruction.
        #[arg(long)]
        no_f0_residual: bool,
        /// Use HMM state means instead of per-frame mixtures.
        #[arg(long)]
        hmm_restore: bool,
    },
    /// Analyze, resynthesize and report the distortion against the input.
    Copysynth {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Average the upper mixture components first (degraded reference).
        #[arg(long)]
        anchor: bool,
    },
    /// Mel-cepstral distortion between two WAV files of equal duration.
    Mcd { reference: PathBuf, test: PathBuf },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze {
            input,
            output,
            k,
            states,
            scales,
            scale0,
            fft,
        } => {
            let options = AnalysisOptions {
                components: k,
                states,
                scales,
                scale0_s: scale0,
                fft_size: fft,
                ..AnalysisOptions::default()
            };
            let features = analyze(&read_wav(input)?, &options)?;
            features.write(&output)?;
            println!("n_frames={}", features.n_frames());
        }
        Command::Synth {
            input,
            output,
            seed,
            split_hz,
            no_f0_residual,
            hmm_restore,
        } => {
            let options = SynthesisOptions {
                seed,
                voicing_split_hz: split_hz,
                f0_residual: !no_f0_residual,
                hmm_restore,
                ..SynthesisOptions::default()
            };
            let wave = synthesize(&FeatureFile::read(input)?, &options)?;
            write_wav(&wave, &output)?;
            println!("n_samples={}", wave.len());
        }
        Command::Copysynth { input, output, anchor } => {
            let wave = read_wav(input)?;
            let result = copy_synthesis(&wave, &AnalysisOptions::default(), &SynthesisOptions::default(), anchor)?;
            write_wav(&result.output, &output)?;
            print!("{}", result.report.to_text(false));
        }
        Command::Mcd { reference, test } => {
            let report = mcd_between(&read_wav(reference)?, &read_wav(test)?, &AnalysisOptions::default())?;
            print!("{}", report.to_text(true));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
