use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::healpix::{pix_containing, uniform_level};
use crate::higrid::SrpdMap;
use crate::nnl::{nnl_label, NnlConfig};
use crate::sphere::{norm, normalize, Direction};

pub const THETA_BINS: usize = 180;
pub const PHI_BINS: usize = 360;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostConfig {
    /// Histogram cells holding fewer centroids are cleared.
    pub min_count: u32,
    /// Gaussian smoothing width, histogram cells.
    pub sigma: f64,
    /// HEALPix level the smoothed histogram is accumulated on.
    pub cast_level: u8,
    pub nnl: NnlConfig,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self { min_count: 2, sigma: 1.0, cast_level: 3, nnl: NnlConfig::default() }
    }
}

impl PostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("post.sigma must be positive, got {}", self.sigma)));
        }
        if self.cast_level > 8 {
            return Err(Error::Config(format!("post.cast_level {} is above 8", self.cast_level)));
        }
        Ok(())
    }
}

/// 1-degree (inclination x azimuth) grid of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub values: Vec<f64>,
}

impl Default for Histogram {
    fn default() -> Self {
        Self { values: vec![0.0; THETA_BINS * PHI_BINS] }
    }
}

impl Histogram {
    pub fn cell_of(d: Direction) -> (usize, usize) {
        let t = (d.theta.to_degrees().floor() as usize).min(THETA_BINS - 1);
        let p = (d.phi.to_degrees().floor() as usize) % PHI_BINS;
        (t, p)
    }

    pub fn cell_center(t: usize, p: usize) -> Direction {
        Direction::from_degrees(t as f64 + 0.5, p as f64 + 0.5)
    }

    pub fn from_directions<'a>(dirs: impl IntoIterator<Item = &'a Direction>) -> Self {
        let mut h = Self::default();
        for d in dirs {
            let (t, p) = Self::cell_of(*d);
            h.values[t * PHI_BINS + p] += 1.0;
        }
        h
    }

    pub fn get(&self, t: usize, p: usize) -> f64 {
        self.values[t * PHI_BINS + p]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i / PHI_BINS, i % PHI_BINS, *v))
    }

    /// The 3x3 neighbourhood with azimuth wrapped and inclination clamped.
    fn neighbourhood(&self, t: usize, p: usize) -> [f64; 9] {
        let mut out = [0.0; 9];
        let mut i = 0;
        for dt in -1i64..=1 {
            let tt = (t as i64 + dt).clamp(0, THETA_BINS as i64 - 1) as usize;
            for dp in -1i64..=1 {
                let pp = (p as i64 + dp).rem_euclid(PHI_BINS as i64) as usize;
                out[i] = self.get(tt, pp);
                i += 1;
            }
        }
        out
    }

    /// Clear cells with fewer than `min` counts.
    pub fn remove_sparse(&self, min: f64) -> Self {
        Self { values: self.values.iter().map(|&v| if v < min { 0.0 } else { v }).collect() }
    }

    /// 3x3 median filter. Cells that are maxima of their neighbourhood keep
    /// their value so isolated peaks are not erased.
    pub fn median3(&self) -> Self {
        let mut out = Self::default();
        for t in 0..THETA_BINS {
            for p in 0..PHI_BINS {
                let mut nb = self.neighbourhood(t, p);
                let v = nb[4];
                let is_peak = v > 0.0 && nb.iter().all(|&x| x <= v);
                nb.sort_by(f64::total_cmp);
                out.values[t * PHI_BINS + p] = if is_peak { v } else { nb[4] };
            }
        }
        out
    }

    /// Normalised 3x3 Gaussian filter.
    pub fn gaussian3(&self, sigma: f64) -> Self {
        let w1 = (-0.5 / (sigma * sigma)).exp();
        let w2 = (-1.0 / (sigma * sigma)).exp();
        let kernel = [w2, w1, w2, w1, 1.0, w1, w2, w1, w2];
        let norm: f64 = kernel.iter().sum();
        let mut out = Self::default();
        for t in 0..THETA_BINS {
            for p in 0..PHI_BINS {
                let nb = self.neighbourhood(t, p);
                out.values[t * PHI_BINS + p] = nb.iter().zip(&kernel).map(|(a, b)| a * b).sum::<f64>() / norm;
            }
        }
        out
    }
}

/// A final direction estimate with the number of local estimates behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub direction: [f64; 3],
    pub theta: f64,
    pub phi: f64,
    pub support: u64,
}

impl DoaEstimate {
    pub fn from_vector(v: [f64; 3], support: u64) -> Self {
        let d = Direction::from_vector(v);
        Self { direction: v, theta: d.theta, phi: d.phi, support }
    }

    pub fn direction(&self) -> Direction {
        Direction::new(self.theta, self.phi)
    }
}

/// Smoothed histogram cast on a uniform HEALPix level.
pub fn cast_to_healpix(h: &Histogram, level: u8) -> Result<SrpdMap> {
    let mut mass = vec![0.0; 12 << (2 * level as u32)];
    for (t, p, v) in h.nonzero() {
        let c = Histogram::cell_center(t, p);
        mass[pix_containing(level, c.theta, c.phi).index as usize] += v;
    }
    SrpdMap::from_leaves(uniform_level(level).map(|n| (n, mass[n.index as usize])), level)
}

/// Aggregate local direction estimates into final DOAs.
pub fn post_process(centroids: &[Direction], cfg: &PostConfig) -> Result<Vec<DoaEstimate>> {
    cfg.validate()?;
    if centroids.is_empty() {
        return Ok(Vec::new());
    }
    let raw = Histogram::from_directions(centroids).remove_sparse(cfg.min_count as f64);
    if raw.total() == 0.0 {
        return Ok(Vec::new());
    }
    let smooth = raw.median3().gaussian3(cfg.sigma);
    let map = cast_to_healpix(&smooth, cfg.cast_level)?;
    if map.iter().all(|(_, v)| v == 0.0) {
        return Ok(Vec::new());
    }
    let clusters = nnl_label(&map, &cfg.nnl)?;
    // label each pixel, then take centroids over the 1-degree cells inside each region
    let mut label = vec![usize::MAX; map.len()];
    for (i, c) in clusters.iter().enumerate() {
        for n in &c.members {
            label[n.index as usize] = i;
        }
    }
    let pixel = |t: usize, p: usize| {
        let c = Histogram::cell_center(t, p);
        pix_containing(cfg.cast_level, c.theta, c.phi).index as usize
    };
    let mut sums = vec![[0.0f64; 3]; clusters.len()];
    for (t, p, v) in smooth.nonzero() {
        let l = label[pixel(t, p)];
        if l != usize::MAX {
            let u = Histogram::cell_center(t, p).to_unit();
            for k in 0..3 {
                sums[l][k] += v * u[k];
            }
        }
    }
    let mut support = vec![0.0; clusters.len()];
    for (t, p, v) in raw.nonzero() {
        let l = label[pixel(t, p)];
        if l != usize::MAX {
            support[l] += v;
        }
    }
    let mut out: Vec<DoaEstimate> = sums
        .iter()
        .zip(&support)
        .filter(|(s, n)| **n > 0.0 && norm(**s) > 0.0)
        .map(|(s, n)| DoaEstimate::from_vector(normalize(*s), n.round() as u64))
        .collect();
    out.sort_by(|a, b| b.support.cmp(&a.support).then(a.theta.total_cmp(&b.theta)).then(a.phi.total_cmp(&b.phi)));
    Ok(out)
}
