//! WAV input/output and the binary tensor container for feature sequences.
//!
//! Tensor layout (little endian): magic `ASBT`, `u32` version, `u32` rank,
//! `rank × u64` dimensions, then the `f64` values in row-major order.

use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::dsp::{MultichannelWave, SAMPLE_RATE};
use crate::error::{Error, Result};

const TENSOR_MAGIC: &[u8; 4] = b"ASBT";
const TENSOR_VERSION: u32 = 1;

/// Reads a 16-bit PCM or 32-bit float WAV file at 16 kHz.
pub fn read_wav(path: &Path) -> Result<MultichannelWave> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidInput(format!(
            "{}: sample rate {} Hz is not supported (expected {SAMPLE_RATE} Hz, resample first)",
            path.display(),
            spec.sample_rate
        )));
    }
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (format, bits) => {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported sample format {format:?} with {bits} bits",
                path.display()
            )))
        }
    };
    let len = interleaved.len() / channels;
    if len == 0 {
        return Err(Error::InvalidInput(format!("{}: no samples", path.display())));
    }
    let samples = Array2::from_shape_fn((channels, len), |(c, n)| interleaved[n * channels + c]);
    MultichannelWave::new(samples, spec.sample_rate)
}

/// Writes 32-bit float WAV.
pub fn write_wav(path: &Path, wave: &MultichannelWave) -> Result<()> {
    let spec = hound::WavSpec {
        channels: wave.channels() as u16,
        sample_rate: wave.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for n in 0..wave.len() {
        for c in 0..wave.channels() {
            writer.write_sample(wave.samples[[c, n]] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn encode_tensor(tensor: &ArrayD<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * tensor.ndim() + 8 * tensor.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in tensor.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<ArrayD<f64>> {
    let bad = |msg: &str| Error::InvalidInput(format!("tensor container: {msg}"));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let chunk = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(chunk)
    };
    if take(4)? != TENSOR_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
    }
    let count: usize = shape.iter().product();
    let data: Vec<f64> = take(count * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if bytes.len() != 12 + 8 * rank + 8 * count {
        return Err(bad("trailing bytes"));
    }
    ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| bad(&e.to_string()))
}

pub fn write_tensor(path: &Path, tensor: &ArrayD<f64>) -> Result<()> {
    std::fs::write(path, encode_tensor(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tensor_round_trip(rows in 0usize..6, cols in 0usize..6, seed in proptest::num::f64::NORMAL) {
            let t = Array2::from_shape_fn((rows, cols), |(i, j)| seed * (i as f64 + 1.0) - j as f64).into_dyn();
            let back = decode_tensor(&encode_tensor(&t)).unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn corrupt_tensors_are_rejected() {
        let t = Array2::<f64>::ones((2, 3)).into_dyn();
        let bytes = encode_tensor(&t);
        assert!(decode_tensor(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_tensor(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(decode_tensor(&magic).is_err());
    }

    #[test]
    fn wav_round_trip_float() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples = Array2::from_shape_fn((3, 500), |(c, n)| ((c * 7 + n) % 11) as f64 / 16.0 - 0.3);
        let wave = MultichannelWave::new(samples, SAMPLE_RATE).unwrap();
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in back.samples.iter().zip(wave.samples.iter()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn wav_pcm16_and_rate_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for v in [16384i16, -16384, 0, 32767] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let wave = read_wav(&path).unwrap();
        assert_eq!(wave.samples.row(0).to_vec(), vec![0.5, 0.0]);
        assert_eq!(wave.samples.row(1).to_vec(), vec![-0.5, 32767.0 / 32768.0]);

        let path = dir.path().join("c.wav");
        let spec = hound::WavSpec {
            sample_rate: 44100,
            ..spec
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(1i16).unwrap();
        w.write_sample(1i16).unwrap();
        w.finalize().unwrap();
        assert!(read_wav(&path).is_err());
    }
}
