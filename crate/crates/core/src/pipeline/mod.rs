//! End-to-end localisation: time-frequency bin selection, per-bin SRPD
//! refinement and labelling, and aggregation of the local estimates.

pub mod onset;
pub mod post;
pub mod stft;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::higrid::{higrid_run_sv, EntropyScope, RefinementPolicy, SrpdMap};
use crate::nnl::{nnl_label, NnlConfig};
use crate::sph::{wavenumber, ArrayGeometry, ShdTransform, SPEED_OF_SOUND};
use crate::sphere::Direction;
use crate::srpd::{steering_vector, CdCache, DEFAULT_SUB_DEPTH, DEFAULT_THRESHOLD};

pub use onset::OnsetConfig;
pub use post::{post_process, DoaEstimate, Histogram, PostConfig};
pub use stft::{omni_component, omni_signal, stft, stft_channel, Spectrogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub win: usize,
    pub hop: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    pub speed_of_sound: f64,
    pub max_level: u8,
    pub start_level: u8,
    pub sub_depth: u8,
    /// Eigen-energy fraction kept per pixel.
    pub eig_threshold: f64,
    pub scope: EntropyScope,
    pub seed: u64,
    pub onset: OnsetConfig,
    /// Consecutive frames analysed from each onset.
    pub frames_per_onset: usize,
    /// Bins whose energy exceeds this multiple of the frame's in-band mean are kept.
    pub energy_ratio: f64,
    pub nnl: NnlConfig,
    pub post: PostConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            win: 1024,
            hop: 64,
            f_lo: 2608.0,
            f_hi: 5216.0,
            speed_of_sound: SPEED_OF_SOUND,
            max_level: 3,
            start_level: 0,
            sub_depth: DEFAULT_SUB_DEPTH,
            eig_threshold: DEFAULT_THRESHOLD,
            scope: EntropyScope::default(),
            seed: 0,
            onset: OnsetConfig::default(),
            frames_per_onset: 4,
            energy_ratio: 1.0,
            nnl: NnlConfig::default(),
            post: PostConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.win.is_power_of_two() || self.win < 16 {
            return Err(Error::Config(format!("win {} must be a power of two >= 16", self.win)));
        }
        if self.hop == 0 || self.hop > self.win {
            return Err(Error::Config(format!("hop {} must be in 1..={}", self.hop, self.win)));
        }
        if !(self.f_lo >= 0.0 && self.f_lo < self.f_hi) || !self.f_hi.is_finite() {
            return Err(Error::Config(format!("band [{}, {}] is invalid", self.f_lo, self.f_hi)));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::Config("speed_of_sound must be positive".into()));
        }
        if !(self.eig_threshold > 0.0 && self.eig_threshold <= 1.0) {
            return Err(Error::Config(format!("eig_threshold {} outside (0, 1]", self.eig_threshold)));
        }
        if self.frames_per_onset == 0 {
            return Err(Error::Config("frames_per_onset must be at least 1".into()));
        }
        if !(self.energy_ratio >= 0.0) {
            return Err(Error::Config("energy_ratio must be non-negative".into()));
        }
        self.policy(0).validate()?;
        self.onset.validate()?;
        self.post.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    fn policy(&self, seed: u64) -> RefinementPolicy {
        RefinementPolicy { max_level: self.max_level, start_level: self.start_level, seed, scope: self.scope }
    }

    /// Inclusive range of one-sided bins whose centre lies in the band.
    pub fn band_bins(&self, fs: f64) -> (usize, usize) {
        let df = fs / self.win as f64;
        let lo = (self.f_lo / df).ceil() as usize;
        let hi = ((self.f_hi / df).floor() as usize).min(self.win / 2);
        (lo, hi)
    }
}

/// Selected time-frequency bins, sorted by (frame, bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfSelection {
    pub bins: Vec<(usize, usize)>,
    pub onset_frames: Vec<usize>,
    pub f_lo: f64,
    pub f_hi: f64,
    pub energy_ratio: f64,
}

impl TfSelection {
    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Onset frames of the omnidirectional spectrogram, then the in-band bins of
/// those frames whose energy is above `energy_ratio` times the frame's in-band mean.
pub fn select_bins(omni: &Spectrogram, fs: f64, cfg: &PipelineConfig) -> Result<TfSelection> {
    cfg.validate()?;
    let (lo, hi) = cfg.band_bins(fs);
    let mut sel = TfSelection {
        bins: Vec::new(),
        onset_frames: Vec::new(),
        f_lo: cfg.f_lo,
        f_hi: cfg.f_hi,
        energy_ratio: cfg.energy_ratio,
    };
    if lo > hi || hi >= omni.bins {
        return Ok(sel);
    }
    let lag = cfg.onset.lag_frames.unwrap_or((cfg.win / (2 * cfg.hop)).max(1));
    let flux = onset::spectral_flux(omni, lo, hi + 1, lag, &cfg.onset);
    sel.onset_frames = onset::pick_peaks(&flux, fs / cfg.hop as f64, &cfg.onset);
    let mut frames: Vec<usize> = sel
        .onset_frames
        .iter()
        .flat_map(|&f| f..(f + cfg.frames_per_onset).min(omni.frames))
        .collect();
    frames.sort_unstable();
    frames.dedup();
    for f in frames {
        let row = &omni.frame(f)[lo..=hi];
        let mean = row.iter().map(|v| v.norm_sqr()).sum::<f64>() / row.len() as f64;
        if !(mean > 0.0) {
            continue;
        }
        for (k, v) in row.iter().enumerate() {
            if v.norm_sqr() / mean > cfg.energy_ratio {
                sel.bins.push((f, lo + k));
            }
        }
    }
    Ok(sel)
}

/// Local estimates from one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinResult {
    pub frame: usize,
    pub bin: usize,
    pub centroids: Vec<Direction>,
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub doas: Vec<DoaEstimate>,
    pub selection: TfSelection,
    pub per_bin: Vec<BinResult>,
    pub evaluations: u64,
}

impl Localization {
    pub fn n_sources(&self) -> usize {
        self.doas.len()
    }

    pub fn centroids(&self) -> Vec<Direction> {
        self.per_bin.iter().flat_map(|b| b.centroids.iter().copied()).collect()
    }
}

/// Per-bin refinement seed, decorrelated across bins.
pub fn bin_seed(seed: u64, frame: usize, bin: usize) -> u64 {
    let mut z = seed ^ ((frame as u64) << 20 | bin as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Cross-density cache matching a configuration and array.
pub fn build_cache(cfg: &PipelineConfig, geom: &ArrayGeometry) -> Result<CdCache> {
    CdCache::build(cfg.max_level, geom.max_order, cfg.sub_depth, cfg.eig_threshold)
}

/// Localise and count sources in a multichannel recording.
pub fn localize(
    signals: &[Vec<f64>],
    fs: f64,
    geom: &ArrayGeometry,
    cfg: &PipelineConfig,
    cache: &CdCache,
) -> Result<Localization> {
    cfg.validate()?;
    if signals.len() != geom.mic_count() {
        return Err(Error::SizeMismatch { what: "signal channels", expected: geom.mic_count(), actual: signals.len() });
    }
    if cache.order != geom.max_order {
        return Err(Error::SizeMismatch { what: "cache order", expected: geom.max_order, actual: cache.order });
    }
    if cache.max_level < cfg.max_level {
        return Err(Error::Config(format!(
            "cache covers levels up to {}, configuration needs {}",
            cache.max_level, cfg.max_level
        )));
    }
    let len = signals.iter().map(Vec::len).min().unwrap_or(0);
    let omni = stft_channel(&omni_signal(signals), cfg.win, cfg.hop)?;
    let selection = select_bins(&omni, fs, cfg)?;

    let mut frames: Vec<usize> = selection.bins.iter().map(|b| b.0).collect();
    frames.dedup();
    let transform = stft::FrameTransform::new(cfg.win);
    // [frame][mic][bin] for the frames that carry selected bins
    let spectra: Vec<Vec<Vec<Complex64>>> = frames
        .par_iter()
        .map(|&f| {
            let mut buf = Vec::with_capacity(cfg.win);
            signals
                .iter()
                .map(|x| {
                    let mut out = vec![Complex64::new(0.0, 0.0); transform.bins()];
                    transform.transform(&x[..len], f * cfg.hop, &mut buf, &mut out);
                    out
                })
                .collect()
        })
        .collect();

    let shd = ShdTransform::new(geom);
    let df = fs / cfg.win as f64;
    let per_bin: Vec<BinResult> = selection
        .bins
        .par_iter()
        .map(|&(frame, bin)| -> Result<BinResult> {
            let fi = frames.binary_search(&frame).expect("frame transformed");
            let pressures: Vec<Complex64> = spectra[fi].iter().map(|mic| mic[bin]).collect();
            let k = wavenumber(bin as f64 * df, cfg.speed_of_sound);
            let frame_shd = shd.apply(&pressures, k)?;
            let sv = steering_vector(&frame_shd, geom.radius_m)?;
            let map = higrid_run_sv(&sv, cache, &cfg.policy(bin_seed(cfg.seed, frame, bin)))?;
            let centroids = if map.silent {
                Vec::new()
            } else {
                nnl_label(&map, &cfg.nnl)?.iter().map(|c| c.direction()).collect()
            };
            Ok(BinResult { frame, bin, centroids, evaluations: map.evaluations })
        })
        .collect::<Result<_>>()?;

    let centroids: Vec<Direction> = per_bin.iter().flat_map(|b| b.centroids.iter().copied()).collect();
    let doas = post_process(&centroids, &cfg.post)?;
    let evaluations = per_bin.iter().map(|b| b.evaluations).sum();
    Ok(Localization { doas, selection, per_bin, evaluations })
}

/// Refined SRPD map of one time-frequency bin.
pub fn bin_map(
    signals: &[Vec<f64>],
    fs: f64,
    geom: &ArrayGeometry,
    cfg: &PipelineConfig,
    cache: &CdCache,
    frame: usize,
    bin: usize,
) -> Result<SrpdMap> {
    cfg.validate()?;
    if signals.len() != geom.mic_count() {
        return Err(Error::SizeMismatch { what: "signal channels", expected: geom.mic_count(), actual: signals.len() });
    }
    let len = signals.iter().map(Vec::len).min().unwrap_or(0);
    let frames = stft::frame_count(len, cfg.win, cfg.hop);
    if frame >= frames {
        return Err(Error::Domain(format!("frame {frame} outside 0..{frames}")));
    }
    if bin > cfg.win / 2 {
        return Err(Error::Domain(format!("bin {bin} above {}", cfg.win / 2)));
    }
    let transform = stft::FrameTransform::new(cfg.win);
    let mut buf = Vec::with_capacity(cfg.win);
    let mut out = vec![Complex64::new(0.0, 0.0); transform.bins()];
    let pressures: Vec<Complex64> = signals
        .iter()
        .map(|x| {
            transform.transform(&x[..len], frame * cfg.hop, &mut buf, &mut out);
            out[bin]
        })
        .collect();
    let k = wavenumber(bin as f64 * fs / cfg.win as f64, cfg.speed_of_sound);
    let sv = steering_vector(&ShdTransform::new(geom).apply(&pressures, k)?, geom.radius_m)?;
    let mut map = higrid_run_sv(&sv, cache, &cfg.policy(bin_seed(cfg.seed, frame, bin)))?;
    map.bin = Some((frame, bin));
    Ok(map)
}

/// Serialised localisation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaOutput {
    pub doas: Vec<DoaRecord>,
    pub n_sources: usize,
    pub bins_processed: usize,
    pub evaluations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaRecord {
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub support: u64,
}

impl From<&Localization> for DoaOutput {
    fn from(l: &Localization) -> Self {
        Self {
            doas: l
                .doas
                .iter()
                .map(|d| DoaRecord { theta_deg: d.theta.to_degrees(), phi_deg: d.phi.to_degrees(), support: d.support })
                .collect(),
            n_sources: l.doas.len(),
            bins_processed: l.selection.bins.len(),
            evaluations: l.evaluations,
            seed: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_defaults_and_rejection() {
        let c = PipelineConfig::from_json(r#"{"max_level": 2, "onset": {"delta": 0.2}}"#).unwrap();
        assert_eq!(c.max_level, 2);
        assert_eq!(c.win, 1024);
        assert_eq!(c.onset.delta, 0.2);
        assert!(PipelineConfig::from_json(r#"{"windw": 512}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"f_lo": 6000}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"hop": 0}"#).is_err());
    }

    #[test]
    fn band_bins_by_centre_frequency() {
        let c = PipelineConfig::default();
        let (lo, hi) = c.band_bins(48_000.0);
        let df = 48_000.0 / 1024.0;
        assert!(lo as f64 * df >= 2608.0 && (lo - 1) as f64 * df < 2608.0);
        assert!(hi as f64 * df <= 5216.0 && (hi + 1) as f64 * df > 5216.0);
    }

    #[test]
    fn silence_selects_nothing() {
        let c = PipelineConfig::default();
        let omni = stft_channel(&vec![0.0; 20_000], c.win, c.hop).unwrap();
        let s = select_bins(&omni, 48_000.0, &c).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn bin_seeds_differ() {
        assert_ne!(bin_seed(0, 1, 2), bin_seed(0, 2, 1));
        assert_eq!(bin_seed(5, 3, 4), bin_seed(5, 3, 4));
    }
}
