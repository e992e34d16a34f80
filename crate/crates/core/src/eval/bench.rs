use std::f64::consts::{FRAC_PI_4, PI};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::healpix::npix;
use crate::higrid::{higrid_run_sv, uniform_map, EntropyScope, RefinementPolicy};
use crate::scene::{random_direction, random_directions};
use crate::sph::{plane_wave_shd, wavenumber, PlaneWaveSource, SPEED_OF_SOUND};
use crate::srpd::{steering_vector, CdCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub levels: Vec<u8>,
    /// Numbers of unit-amplitude coherent plane waves.
    pub source_counts: Vec<usize>,
    /// Additional random-amplitude waves (magnitude uniform in [0, max_amplitude]).
    pub diffuse_counts: Vec<usize>,
    pub diffuse_max_amplitude: f64,
    pub repetitions: usize,
    pub freq_hz: f64,
    pub radius_m: f64,
    pub min_sep: f64,
    pub scope: EntropyScope,
    pub seed: u64,
    /// Record wall-clock times (not reproducible).
    pub timing: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            levels: vec![1, 2, 3, 4],
            source_counts: (1..=12).collect(),
            diffuse_counts: vec![0],
            diffuse_max_amplitude: 0.5,
            repetitions: 50,
            freq_hz: 3000.0,
            radius_m: 0.042,
            min_sep: FRAC_PI_4,
            scope: EntropyScope::Frontier,
            seed: 0,
            timing: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|l| *l == 0 || *l > 8) {
            return Err(Error::Config("bench levels must be in 1..=8".into()));
        }
        if self.source_counts.is_empty() || self.source_counts.contains(&0) || self.repetitions == 0 {
            return Err(Error::Config("bench needs positive source counts and repetitions".into()));
        }
        if self.diffuse_counts.is_empty() {
            return Err(Error::Config("bench diffuse_counts must not be empty (use [0])".into()));
        }
        if !(self.freq_hz > 0.0) || !(self.radius_m > 0.0) || !(self.diffuse_max_amplitude >= 0.0) {
            return Err(Error::Config("bench frequency, radius and amplitude must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self {
            mean,
            std: var.sqrt(),
            min: v.iter().cloned().fold(f64::INFINITY, f64::min),
            max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub level: u8,
    pub sources: usize,
    pub diffuse: usize,
    pub repetitions: usize,
    pub higrid_evaluations: Stats,
    pub full_evaluations: u64,
    /// HiGRID over full-grid evaluation counts.
    pub count_ratio: Stats,
    pub higrid_seconds: Option<Stats>,
    pub full_seconds: Option<Stats>,
    pub time_ratio: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub order: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Flat CSV of the rows; timing columns are empty when not recorded.
    pub fn to_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Flat {
            level: u8,
            sources: usize,
            diffuse: usize,
            repetitions: usize,
            higrid_evaluations_mean: f64,
            full_evaluations: u64,
            count_ratio_mean: f64,
            count_ratio_std: f64,
            time_ratio_mean: Option<f64>,
            time_ratio_std: Option<f64>,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(Flat {
                level: r.level,
                sources: r.sources,
                diffuse: r.diffuse,
                repetitions: r.repetitions,
                higrid_evaluations_mean: r.higrid_evaluations.mean,
                full_evaluations: r.full_evaluations,
                count_ratio_mean: r.count_ratio.mean,
                count_ratio_std: r.count_ratio.std,
                time_ratio_mean: r.time_ratio.map(|t| t.mean),
                time_ratio_std: r.time_ratio.map(|t| t.std),
            })
            .map_err(|e| Error::Numerical(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn row(&self, level: u8, sources: usize, diffuse: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.level == level && r.sources == sources && r.diffuse == diffuse)
    }
}

fn case_seed(seed: u64, sources: usize, diffuse: usize, rep: usize) -> u64 {
    seed ^ ((sources as u64) << 48 | (diffuse as u64) << 32 | rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Unit coherent waves at random separated directions plus random-amplitude waves.
pub fn bench_scene(sources: usize, diffuse: usize, cfg: &BenchConfig, rep: usize) -> Result<Vec<PlaneWaveSource>> {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed(cfg.seed, sources, diffuse, rep));
    let mut waves: Vec<PlaneWaveSource> = random_directions(sources, cfg.min_sep, &mut rng)?
        .into_iter()
        .map(PlaneWaveSource::unit)
        .collect();
    for _ in 0..diffuse {
        let direction = random_direction(&mut rng);
        let mag = rng.random_range(0.0..=cfg.diffuse_max_amplitude);
        let phase = rng.random_range(0.0..2.0 * PI);
        waves.push(PlaneWaveSource { amplitude: Complex64::from_polar(mag, phase), direction });
    }
    Ok(waves)
}

/// HiGRID against the exhaustive grid on identical frames, single-threaded.
pub fn bench_cost(cfg: &BenchConfig, cache: &CdCache) -> Result<BenchReport> {
    cfg.validate()?;
    let top = *cfg.levels.iter().max().expect("validated");
    if cache.max_level < top {
        return Err(Error::Config(format!("cache covers levels up to {}, bench needs {top}", cache.max_level)));
    }
    let k = wavenumber(cfg.freq_hz, SPEED_OF_SOUND);
    let mut rows = Vec::new();
    for &level in &cfg.levels {
        for &s in &cfg.source_counts {
            for &d in &cfg.diffuse_counts {
                let full = npix(level);
                let (mut counts, mut ratios) = (Vec::new(), Vec::new());
                let (mut th, mut tf, mut tr) = (Vec::new(), Vec::new(), Vec::new());
                for rep in 0..cfg.repetitions {
                    let waves = bench_scene(s, d, cfg, rep)?;
                    let frame = plane_wave_shd(&waves, k, cache.order, cfg.radius_m)?;
                    let policy = RefinementPolicy {
                        max_level: level,
                        start_level: 0,
                        seed: case_seed(cfg.seed ^ 0x5EED, s, d, rep),
                        scope: cfg.scope,
                    };
                    let t0 = Instant::now();
                    let sv = steering_vector(&frame, cfg.radius_m)?;
                    let map = higrid_run_sv(&sv, cache, &policy)?;
                    let t1 = Instant::now();
                    let sv = steering_vector(&frame, cfg.radius_m)?;
                    let exhaustive = uniform_map(&sv, cache, level)?;
                    let t2 = Instant::now();
                    debug_assert_eq!(exhaustive.evaluations, full);
                    counts.push(map.evaluations as f64);
                    ratios.push(map.evaluations as f64 / full as f64);
                    let (a, b) = ((t1 - t0).as_secs_f64(), (t2 - t1).as_secs_f64());
                    th.push(a);
                    tf.push(b);
                    tr.push(a / b.max(1e-12));
                }
                let timed = |v: &[f64]| cfg.timing.then(|| Stats::of(v));
                rows.push(BenchRow {
                    level,
                    sources: s,
                    diffuse: d,
                    repetitions: cfg.repetitions,
                    higrid_evaluations: Stats::of(&counts),
                    full_evaluations: full,
                    count_ratio: Stats::of(&ratios),
                    higrid_seconds: timed(&th),
                    full_seconds: timed(&tf),
                    time_ratio: timed(&tr),
                });
            }
        }
    }
    Ok(BenchReport { config: cfg.clone(), order: cache.order, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_shape_and_determinism() {
        let cache = CdCache::build(2, 4, 2, 0.99).unwrap();
        let cfg = BenchConfig { levels: vec![1, 2], source_counts: vec![1, 3], diffuse_counts: vec![0, 2], repetitions: 3, ..Default::default() };
        let a = bench_cost(&cfg, &cache).unwrap();
        assert_eq!(a.rows.len(), 8);
        for r in &a.rows {
            assert_eq!(r.full_evaluations, npix(r.level));
            assert!(r.count_ratio.min > 0.0 && r.higrid_seconds.is_none());
            // the level-0 grid plus at least one refinement
            assert!(r.higrid_evaluations.min >= 12.0);
        }
        assert_eq!(a, bench_cost(&cfg, &cache).unwrap());
        assert!(bench_cost(&BenchConfig { levels: vec![3], ..cfg }, &cache).is_err());
    }

    #[test]
    fn scene_waves() {
        let cfg = BenchConfig::default();
        let w = bench_scene(3, 4, &cfg, 0).unwrap();
        assert_eq!(w.len(), 7);
        assert!(w[..3].iter().all(|p| p.amplitude == Complex64::new(1.0, 0.0)));
        assert!(w[3..].iter().all(|p| p.amplitude.norm() <= 0.5));
        for i in 0..3 {
            for j in 0..i {
                assert!(w[i].direction.angle_to(w[j].direction) > FRAC_PI_4);
            }
        }
    }
}
