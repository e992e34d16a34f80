use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// One-sided short-time spectra of a single channel, `[frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self { frames, bins, data: vec![Complex64::new(0.0, 0.0); frames * bins] }
    }

    pub fn frame(&self, f: usize) -> &[Complex64] {
        &self.data[f * self.bins..(f + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [Complex64] {
        &mut self.data[f * self.bins..(f + 1) * self.bins]
    }

    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }
}

/// Periodic Hann window.
pub fn hann(win: usize) -> Vec<f64> {
    (0..win).map(|t| 0.5 - 0.5 * (2.0 * PI * t as f64 / win as f64).cos()).collect()
}

pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win {
        0
    } else {
        1 + (len - win) / hop
    }
}

fn check_params(len: usize, win: usize, hop: usize) -> Result<()> {
    if !win.is_power_of_two() || win < 2 {
        return Err(Error::Config(format!("window length {win} must be a power of two")));
    }
    if hop == 0 || hop > win {
        return Err(Error::Config(format!("hop {hop} must be in 1..={win}")));
    }
    if len < win {
        return Err(Error::Domain(format!("signal of {len} samples is shorter than one window of {win}")));
    }
    Ok(())
}

/// Reusable windowed FFT of fixed length.
pub struct FrameTransform {
    win: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl FrameTransform {
    pub fn new(win: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(win);
        Self { win, window: hann(win), fft }
    }

    pub fn bins(&self) -> usize {
        self.win / 2 + 1
    }

    /// Spectrum of the frame starting at `start`, written to `out[..bins]`.
    pub fn transform(&self, x: &[f64], start: usize, buf: &mut Vec<Complex64>, out: &mut [Complex64]) {
        buf.clear();
        buf.extend(x[start..start + self.win].iter().zip(&self.window).map(|(v, w)| Complex64::new(v * w, 0.0)));
        self.fft.process(buf);
        out.copy_from_slice(&buf[..self.bins()]);
    }
}

/// Hann-windowed STFT of one channel.
pub fn stft_channel(x: &[f64], win: usize, hop: usize) -> Result<Spectrogram> {
    check_params(x.len(), win, hop)?;
    let t = FrameTransform::new(win);
    let frames = frame_count(x.len(), win, hop);
    let mut s = Spectrogram::zeros(frames, t.bins());
    let mut buf = Vec::with_capacity(win);
    for f in 0..frames {
        t.transform(x, f * hop, &mut buf, s.frame_mut(f));
    }
    Ok(s)
}

/// Hann-windowed STFT of every channel, `[mic][frame][bin]`.
pub fn stft(signals: &[Vec<f64>], win: usize, hop: usize) -> Result<Vec<Spectrogram>> {
    signals.iter().map(|x| stft_channel(x, win, hop)).collect()
}

/// Channel average of a set of spectrograms.
pub fn omni_component(spectra: &[Spectrogram]) -> Result<Spectrogram> {
    let first = spectra.first().ok_or_else(|| Error::Degenerate("no channels".into()))?;
    let mut out = Spectrogram::zeros(first.frames, first.bins);
    for s in spectra {
        if s.frames != first.frames || s.bins != first.bins {
            return Err(Error::SizeMismatch { what: "spectrogram frames", expected: first.frames, actual: s.frames });
        }
        for (o, v) in out.data.iter_mut().zip(&s.data) {
            *o += v;
        }
    }
    let q = spectra.len() as f64;
    for o in &mut out.data {
        *o /= q;
    }
    Ok(out)
}

/// Sample-wise channel average.
pub fn omni_signal(signals: &[Vec<f64>]) -> Vec<f64> {
    let n = signals.iter().map(Vec::len).min().unwrap_or(0);
    let q = signals.len().max(1) as f64;
    (0..n).map(|t| signals.iter().map(|s| s[t]).sum::<f64>() / q).collect()
}
