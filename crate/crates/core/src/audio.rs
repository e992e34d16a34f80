//! Multichannel audio files: WAV (via `hound`) and raw planar float32.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Read a WAV file into `[channel][sample]`, scaling integer PCM to [-1, 1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<(u32, Vec<Vec<f64>>)> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    let ch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    Ok((spec.sample_rate, deinterleave(&interleaved, ch)))
}

fn deinterleave(x: &[f64], ch: usize) -> Vec<Vec<f64>> {
    let n = x.len() / ch.max(1);
    (0..ch).map(|c| (0..n).map(|t| x[t * ch + c]).collect()).collect()
}

/// Write `[channel][sample]` as 32-bit float WAV. The file appears atomically.
pub fn write_wav_f32(path: impl AsRef<Path>, sample_rate: u32, channels: &[Vec<f64>]) -> Result<()> {
    let ch = channels.len();
    if ch == 0 || ch > u16::MAX as usize {
        return Err(Error::Config(format!("cannot write {ch} channels")));
    }
    let n = channels[0].len();
    if let Some(bad) = channels.iter().find(|c| c.len() != n) {
        return Err(Error::SizeMismatch { what: "channel length", expected: n, actual: bad.len() });
    }
    let spec = WavSpec {
        channels: ch as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut buf = std::io::Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut buf, spec)?;
        for t in 0..n {
            for c in channels {
                w.write_sample(c[t] as f32)?;
            }
        }
        w.finalize()?;
    }
    write_atomic(path, buf.get_ref())
}

/// Read a raw little-endian float32 file laid out channel after channel.
pub fn read_raw_f32(path: impl AsRef<Path>, channels: usize) -> Result<Vec<Vec<f64>>> {
    if channels == 0 {
        return Err(Error::Config("raw input needs at least one channel".into()));
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() % (4 * channels) != 0 {
        return Err(Error::SizeMismatch {
            what: "raw float32 bytes (multiple of 4 * channels)",
            expected: bytes.len() / (4 * channels) * 4 * channels,
            actual: bytes.len(),
        });
    }
    let n = bytes.len() / 4 / channels;
    let samples: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if n == 0 {
        return Ok(vec![Vec::new(); channels]);
    }
    Ok(samples.chunks(n).map(<[f64]>::to_vec).collect())
}

/// Write planar little-endian float32.
pub fn write_raw_f32(path: impl AsRef<Path>, channels: &[Vec<f64>]) -> Result<()> {
    let mut out = Vec::with_capacity(channels.iter().map(Vec::len).sum::<usize>() * 4);
    for c in channels {
        for v in c {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    write_atomic(path, &out)
}

/// Write through a temporary sibling file and rename over the target.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    tmp.set_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}
