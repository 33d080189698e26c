//! WAV reading and writing through `hound`.

use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use mdxkit_core::{AudioBuffer, SAMPLE_RATE};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum WavError {
    #[error("unsupported sample rate {0} Hz (expected 44100)")]
    UnsupportedSampleRate(u32),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed WAV file: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<hound::Error> for WavError {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Self::Io(io),
            hound::Error::Unsupported => Self::UnsupportedFormat("unsupported WAV encoding".into()),
            other => Self::MalformedFile(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavFormat {
    Pcm16,
    /// Lossless for `f64` samples that are exactly representable in `f32`.
    #[default]
    Float32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Duplicate mono files to both channels instead of rejecting them.
    pub allow_mono: bool,
}

pub fn load_wav(path: &Path, options: LoadOptions) -> Result<AudioBuffer, WavError> {
    let reader = WavReader::open(path)?;
    decode(reader, options)
}

pub fn decode_wav(bytes: &[u8], options: LoadOptions) -> Result<AudioBuffer, WavError> {
    decode(WavReader::new(Cursor::new(bytes))?, options)
}

fn decode<R: Read>(reader: WavReader<R>, options: LoadOptions) -> Result<AudioBuffer, WavError> {
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(WavError::UnsupportedSampleRate(spec.sample_rate));
    }
    let channels = usize::from(spec.channels);
    match channels {
        2 => {}
        1 if options.allow_mono => {}
        1 => return Err(WavError::UnsupportedFormat("mono input (enable allow_mono to duplicate it)".into())),
        n => return Err(WavError::UnsupportedFormat(format!("{n} channels"))),
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => {
            reader.into_samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()?
        }
        (SampleFormat::Int, bits @ (16 | 24)) => {
            let scale = f64::from(1u32 << (bits - 1));
            reader.into_samples::<i32>().map(|s| s.map(|v| f64::from(v) / scale)).collect::<Result<_, _>>()?
        }
        (format, bits) => return Err(WavError::UnsupportedFormat(format!("{format:?} {bits}-bit"))),
    };
    if samples.len() % channels != 0 {
        return Err(WavError::MalformedFile("sample count is not a multiple of the channel count".into()));
    }
    let (left, right) =
        if channels == 1 { (samples.clone(), samples) } else { samples.chunks_exact(2).map(|f| (f[0], f[1])).unzip() };
    AudioBuffer::new(left, right).map_err(|e| WavError::MalformedFile(e.to_string()))
}

fn spec(format: WavFormat) -> WavSpec {
    let (bits_per_sample, sample_format) = match format {
        WavFormat::Pcm16 => (16, SampleFormat::Int),
        WavFormat::Float32 => (32, SampleFormat::Float),
    };
    WavSpec { channels: 2, sample_rate: SAMPLE_RATE, bits_per_sample, sample_format }
}

fn encode<W: Write + Seek>(buffer: &AudioBuffer, format: WavFormat, mut writer: WavWriter<W>) -> Result<(), WavError> {
    for (&l, &r) in buffer.left().iter().zip(buffer.right()) {
        for s in [l, r] {
            match format {
                WavFormat::Pcm16 => writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
                WavFormat::Float32 => writer.write_sample(s as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Writes a stereo 44.1 kHz file, creating parent directories.
pub fn save_wav(buffer: &AudioBuffer, path: &Path, format: WavFormat) -> Result<(), WavError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    encode(buffer, format, WavWriter::create(path, spec(format))?)
}

pub fn encode_wav(buffer: &AudioBuffer, format: WavFormat) -> Result<Vec<u8>, WavError> {
    let mut out = Cursor::new(Vec::new());
    encode(buffer, format, WavWriter::new(&mut out, spec(format))?)?;
    Ok(out.into_inner())
}
