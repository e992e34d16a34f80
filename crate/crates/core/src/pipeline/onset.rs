use serde::{Deserialize, Serialize};

use super::stft::Spectrogram;
use crate::error::{Error, Result};

/// Spectral-flux onset detector with a frequency maximum filter on the
/// reference frame and adaptive peak picking. Time spans are in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnsetConfig {
    /// Log compression `ln(1 + lambda |X| / max|X|)`.
    pub lambda: f64,
    /// Width of the maximum filter over frequency, bins (odd).
    pub max_filter_bins: usize,
    /// Frame lag of the reference spectrum; `None` gives `win / (2 hop)`.
    pub lag_frames: Option<usize>,
    pub pre_max_ms: f64,
    pub post_max_ms: f64,
    pub pre_avg_ms: f64,
    pub post_avg_ms: f64,
    /// Minimum spacing between onsets.
    pub combine_ms: f64,
    /// Peak must exceed the local mean by `delta * max(flux)`.
    pub delta: f64,
    /// Absolute flux floor for a peak.
    pub min_flux: f64,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            max_filter_bins: 3,
            lag_frames: None,
            pre_max_ms: 30.0,
            post_max_ms: 30.0,
            pre_avg_ms: 100.0,
            post_avg_ms: 70.0,
            combine_ms: 50.0,
            delta: 0.1,
            min_flux: 0.5,
        }
    }
}

impl OnsetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || self.max_filter_bins % 2 == 0 || !(self.delta >= 0.0) || !(self.min_flux >= 0.0) {
            return Err(Error::Config("onset: lambda > 0, odd max_filter_bins and delta >= 0 required".into()));
        }
        let spans = [self.pre_max_ms, self.post_max_ms, self.pre_avg_ms, self.post_avg_ms, self.combine_ms];
        if spans.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("onset: time spans must be non-negative".into()));
        }
        if self.lag_frames == Some(0) {
            return Err(Error::Config("onset: lag_frames must be at least 1".into()));
        }
        Ok(())
    }
}

/// Positive spectral flux per frame over bins `lo..hi`.
pub fn spectral_flux(spec: &Spectrogram, lo: usize, hi: usize, lag: usize, cfg: &OnsetConfig) -> Vec<f64> {
    let mut flux = vec![0.0; spec.frames];
    let peak = (0..spec.frames)
        .flat_map(|f| spec.frame(f)[lo..hi].iter().map(|v| v.norm()))
        .fold(0.0, f64::max);
    if !(peak > 0.0) {
        return flux;
    }
    let log: Vec<Vec<f64>> = (0..spec.frames)
        .map(|f| spec.frame(f)[lo..hi].iter().map(|v| (cfg.lambda * v.norm() / peak).ln_1p()).collect())
        .collect();
    let half = cfg.max_filter_bins / 2;
    for f in lag..spec.frames {
        let reference = &log[f - lag];
        let cur = &log[f];
        flux[f] = (0..cur.len())
            .map(|k| {
                let a = k.saturating_sub(half);
                let b = (k + half + 1).min(reference.len());
                let r = reference[a..b].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (cur[k] - r).max(0.0)
            })
            .sum();
    }
    flux
}

/// Frames where the flux is a local maximum clearly above its local mean.
pub fn pick_peaks(flux: &[f64], frame_rate: f64, cfg: &OnsetConfig) -> Vec<usize> {
    let frames = |ms: f64| (ms * 1e-3 * frame_rate).round() as usize;
    let (pre_max, post_max) = (frames(cfg.pre_max_ms), frames(cfg.post_max_ms));
    let (pre_avg, post_avg) = (frames(cfg.pre_avg_ms), frames(cfg.post_avg_ms));
    let combine = frames(cfg.combine_ms);
    let top = flux.iter().cloned().fold(0.0, f64::max);
    let mut out: Vec<usize> = Vec::new();
    if !(top > 0.0) || top < cfg.min_flux {
        return out;
    }
    let n = flux.len();
    for t in 0..n {
        let v = flux[t];
        if !(v > 0.0) || v < cfg.min_flux {
            continue;
        }
        let (a, b) = (t.saturating_sub(pre_max), (t + post_max + 1).min(n));
        if flux[a..b].iter().any(|&x| x > v) {
            continue;
        }
        let (a, b) = (t.saturating_sub(pre_avg), (t + post_avg + 1).min(n));
        let mean = flux[a..b].iter().sum::<f64>() / (b - a) as f64;
        if v < mean + cfg.delta * top {
            continue;
        }
        if out.last().is_some_and(|&last| t - last <= combine) {
            continue;
        }
        out.push(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::stft::stft_channel;

    fn onsets(x: &[f64], fs: f64, win: usize, hop: usize) -> Vec<usize> {
        let s = stft_channel(x, win, hop).unwrap();
        let cfg = OnsetConfig::default();
        let flux = spectral_flux(&s, 1, s.bins, win / (2 * hop), &cfg);
        pick_peaks(&flux, fs / hop as f64, &cfg)
    }

    #[test]
    fn click_train_onsets_follow_clicks() {
        let fs = 48_000.0;
        let (win, hop) = (1024, 64);
        let mut x = vec![0.0; 48_000];
        let clicks: Vec<usize> = (0..10).map(|i| 2000 + i * 4800).collect();
        for &c in &clicks {
            for j in 0..8 {
                x[c + j] = if j % 2 == 0 { 1.0 } else { -0.7 };
            }
        }
        let got = onsets(&x, fs, win, hop);
        assert_eq!(got.len(), clicks.len(), "{got:?}");
        for (f, c) in got.iter().zip(&clicks) {
            // frame time is the window centre
            let expect = (*c as f64 - (win / 2) as f64) / hop as f64;
            assert!((*f as f64 - expect).abs() <= 1.0 + 1e-9, "frame {f} vs {expect}");
        }
    }

    #[test]
    fn steady_tone_and_silence_have_no_onsets() {
        let fs = 48_000.0;
        let tone: Vec<f64> = (0..24_000).map(|t| (2.0 * std::f64::consts::PI * 3000.0 * t as f64 / fs).sin()).collect();
        assert!(onsets(&tone, fs, 1024, 64).len() <= 1);
        assert!(onsets(&vec![0.0; 24_000], fs, 1024, 64).is_empty());
    }

    #[test]
    fn flux_is_scale_invariant() {
        let fs = 48_000.0;
        let mut x = vec![0.0; 12_000];
        for (t, v) in x.iter_mut().enumerate().skip(5000) {
            *v = ((t * 7919 % 211) as f64 / 105.0 - 1.0) * 0.3;
        }
        let s = stft_channel(&x, 1024, 64).unwrap();
        let y: Vec<f64> = x.iter().map(|v| v * 123.0).collect();
        let sy = stft_channel(&y, 1024, 64).unwrap();
        let cfg = OnsetConfig::default();
        let a = spectral_flux(&s, 1, s.bins, 8, &cfg);
        let b = spectral_flux(&sy, 1, sy.bins, 8, &cfg);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9 * u.abs().max(1.0));
        }
        assert_eq!(pick_peaks(&a, fs / 64.0, &cfg), pick_peaks(&b, fs / 64.0, &cfg));
    }
}
