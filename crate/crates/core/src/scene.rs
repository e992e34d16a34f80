//! Plane-wave scene synthesis on a rigid sphere and calibrated sensor noise.

use std::f64::consts::{FRAC_PI_4, PI};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sph::{i_pow, mode_strengths, sh_vector, wavenumber, ArrayGeometry, PlaneWaveSource};
use crate::sphere::{cross, dot, normalize, Direction};

/// Extra synthesis orders above `ceil(k r_a)`.
pub const SYNTH_ORDER_MARGIN: usize = 8;
/// Smallest margin accepted by [`synth_pressures`].
pub const MIN_SYNTH_ORDER_MARGIN: usize = 4;

/// Synthesis order used for a given `k r_a`.
pub fn synth_order(k: f64, r_a: f64) -> usize {
    (k * r_a).ceil() as usize + SYNTH_ORDER_MARGIN
}

fn min_synth_order(k: f64, r_a: f64) -> usize {
    (k * r_a).ceil() as usize + MIN_SYNTH_ORDER_MARGIN
}

fn check_synth_order(k: f64, r_a: f64, n_synth: usize) -> Result<()> {
    if n_synth < min_synth_order(k, r_a) {
        return Err(Error::Config(format!(
            "synthesis order {n_synth} too low for k r_a = {:.3} (need at least {})",
            k * r_a,
            min_synth_order(k, r_a)
        )));
    }
    Ok(())
}

/// Pressure on the surface of the rigid sphere at each microphone, summed
/// over plane waves, as an explicit sum over spherical harmonics.
pub fn synth_pressures(
    sources: &[PlaneWaveSource],
    geom: &ArrayGeometry,
    k: f64,
    n_synth: usize,
) -> Result<Vec<Complex64>> {
    let r_a = geom.radius_m;
    check_synth_order(k, r_a, n_synth)?;
    let b = mode_strengths(n_synth, k, r_a, r_a)?;
    let mut out = vec![Complex64::new(0.0, 0.0); geom.mic_count()];
    for s in sources {
        let ys = sh_vector(n_synth, s.direction.theta, s.direction.phi);
        for (p, mic) in out.iter_mut().zip(&geom.mics) {
            let yq = sh_vector(n_synth, mic.theta, mic.phi);
            let mut acc = Complex64::new(0.0, 0.0);
            for n in 0..=n_synth {
                let lo = n * n;
                let hi = (n + 1) * (n + 1);
                let inner: Complex64 = ys[lo..hi].iter().zip(&yq[lo..hi]).map(|(a, c)| a.conj() * c).sum();
                acc += i_pow(n) * b[n] * inner;
            }
            *p += s.amplitude * acc * (4.0 * PI);
        }
    }
    Ok(out)
}

/// Rigid-sphere transfer from a unit plane wave to a surface point at angle
/// `gamma` from the arrival direction, `sum_n i^n (2n+1) b_n P_n(cos gamma)`.
#[derive(Debug, Clone)]
pub struct SphereTransfer {
    weights: Vec<Complex64>,
}

impl SphereTransfer {
    pub fn new(k: f64, r_a: f64, n_synth: usize) -> Result<Self> {
        check_synth_order(k, r_a, n_synth)?;
        let b = mode_strengths(n_synth, k, r_a, r_a)?;
        let weights = (0..=n_synth).map(|n| i_pow(n) * b[n] * (2 * n + 1) as f64).collect();
        Ok(Self { weights })
    }

    /// Zero-frequency limit: the sphere is transparent.
    pub fn dc() -> Self {
        Self { weights: vec![Complex64::new(1.0, 0.0)] }
    }

    pub fn at_cos(&self, cos_gamma: f64) -> Complex64 {
        let x = cos_gamma.clamp(-1.0, 1.0);
        let (mut p0, mut p1) = (1.0, x);
        let mut acc = self.weights[0] * p0;
        if self.weights.len() > 1 {
            acc += self.weights[1] * p1;
        }
        for (n, w) in self.weights.iter().enumerate().skip(2) {
            let p2 = ((2 * n - 1) as f64 * x * p1 - (n - 1) as f64 * p0) / n as f64;
            acc += w * p2;
            p0 = p1;
            p1 = p2;
        }
        acc
    }
}

/// Same pressures as [`synth_pressures`] through the Legendre addition theorem.
pub fn synth_pressures_legendre(
    sources: &[PlaneWaveSource],
    geom: &ArrayGeometry,
    k: f64,
    n_synth: usize,
) -> Result<Vec<Complex64>> {
    let t = SphereTransfer::new(k, geom.radius_m, n_synth)?;
    Ok(geom
        .mics
        .iter()
        .map(|mic| {
            let u = Direction::new(mic.theta, mic.phi).to_unit();
            sources
                .iter()
                .map(|s| s.amplitude * t.at_cos(dot(u, s.direction.to_unit())))
                .sum()
        })
        .collect())
}

/// Source signal description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSignal {
    /// `cos(2 pi f t + phase)` over the whole scene.
    Tone {
        freq_hz: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Band-limited Gaussian noise with raised-cosine edges.
    NoiseBurst {
        onset_s: f64,
        duration_s: f64,
        f_lo: f64,
        f_hi: f64,
    },
    /// Same waveform as another source (coherent copy).
    CopyOf { source: usize },
    /// First channel of a WAV file at the scene rate.
    Wav { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSource {
    /// Drawn at random (respecting `min_sep`) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    pub signal: SourceSignal,
    #[serde(default = "unit_gain")]
    pub gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

/// A further plane wave carrying a scaled, delayed copy of a source signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtraComponent {
    pub direction: Direction,
    pub amplitude: Complex64,
    pub source: usize,
    #[serde(default)]
    pub delay_s: f64,
}

fn default_fs() -> f64 {
    48_000.0
}

fn default_min_sep() -> f64 {
    FRAC_PI_4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "default_fs")]
    pub fs: f64,
    pub duration_s: f64,
    pub sources: Vec<SceneSource>,
    #[serde(default)]
    pub extra_components: Vec<ExtraComponent>,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Minimum pairwise separation for randomly placed sources, radians.
    #[serde(default = "default_min_sep")]
    pub min_sep: f64,
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialises")
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) || !self.fs.is_finite() {
            return Err(Error::Config(format!("fs must be positive, got {}", self.fs)));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::Config(format!("duration_s must be positive, got {}", self.duration_s)));
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() || snr == f64::NEG_INFINITY {
                return Err(Error::Config(format!("snr_db must be finite or +inf, got {snr}")));
            }
        }
        if !(self.min_sep >= 0.0) || self.min_sep > PI {
            return Err(Error::Config(format!("min_sep {} outside [0, pi]", self.min_sep)));
        }
        let nyq = self.fs / 2.0;
        for (i, s) in self.sources.iter().enumerate() {
            if let Some(d) = s.direction {
                check_direction(d).map_err(|e| Error::Config(format!("source {i}: {e}")))?;
            }
            if !s.gain.is_finite() {
                return Err(Error::Config(format!("source {i}: gain must be finite")));
            }
            match &s.signal {
                SourceSignal::Tone { freq_hz, phase } => {
                    if !(*freq_hz >= 0.0 && *freq_hz < nyq) || !phase.is_finite() {
                        return Err(Error::Config(format!("source {i}: tone at {freq_hz} Hz outside [0, fs/2)")));
                    }
                }
                SourceSignal::NoiseBurst { onset_s, duration_s, f_lo, f_hi } => {
                    if !(*onset_s >= 0.0) || !(*duration_s > 0.0) {
                        return Err(Error::Config(format!("source {i}: burst timing must be non-negative")));
                    }
                    if !(*f_lo >= 0.0 && f_lo < f_hi && *f_hi <= nyq) {
                        return Err(Error::Config(format!("source {i}: burst band [{f_lo}, {f_hi}] invalid")));
                    }
                }
                SourceSignal::CopyOf { source } => {
                    let ok = *source < self.sources.len()
                        && *source != i
                        && !matches!(self.sources[*source].signal, SourceSignal::CopyOf { .. });
                    if !ok {
                        return Err(Error::Config(format!(
                            "source {i}: copy_of must name another non-copy source"
                        )));
                    }
                }
                SourceSignal::Wav { .. } => {}
            }
        }
        for (j, e) in self.extra_components.iter().enumerate() {
            check_direction(e.direction).map_err(|err| Error::Config(format!("extra component {j}: {err}")))?;
            if e.source >= self.sources.len() {
                return Err(Error::Config(format!("extra component {j}: no source {}", e.source)));
            }
            if !e.amplitude.re.is_finite() || !e.amplitude.im.is_finite() || !e.delay_s.is_finite() {
                return Err(Error::Config(format!("extra component {j}: non-finite amplitude or delay")));
            }
        }
        Ok(())
    }

    /// Directions of all sources, drawing the unspecified ones at random.
    pub fn resolve_directions(&self) -> Result<Vec<Direction>> {
        let missing = self.sources.iter().filter(|s| s.direction.is_none()).count();
        let fixed: Vec<Direction> = self.sources.iter().filter_map(|s| s.direction).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(DIRECTION_STREAM);
        let drawn = random_directions_avoiding(missing, self.min_sep, &fixed, &mut rng)?;
        let mut drawn = drawn.into_iter();
        Ok(self
            .sources
            .iter()
            .map(|s| s.direction.unwrap_or_else(|| drawn.next().expect("one draw per missing direction")))
            .collect())
    }
}

fn check_direction(d: Direction) -> std::result::Result<(), String> {
    if !(0.0..=PI).contains(&d.theta) || !d.phi.is_finite() {
        return Err(format!("direction ({}, {}) invalid", d.theta, d.phi));
    }
    Ok(())
}

const DIRECTION_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const SIGNAL_STREAM_BASE: u64 = 16;

/// A fully resolved scene: ground-truth directions and synthesised signals.
#[derive(Debug, Clone)]
pub struct SceneRender {
    pub directions: Vec<Direction>,
    /// `[mic][sample]`
    pub signals: Vec<Vec<f64>>,
}

/// Uniform random unit vector.
pub fn random_direction(rng: &mut impl Rng) -> Direction {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    Direction::new(z.acos(), phi)
}

const TRIES_PER_POINT: usize = 2000;
const RESTARTS: usize = 200;

/// `count` uniform directions with pairwise separation greater than `min_sep`.
pub fn random_directions(count: usize, min_sep: f64, rng: &mut impl Rng) -> Result<Vec<Direction>> {
    random_directions_avoiding(count, min_sep, &[], rng)
}

fn random_directions_avoiding(
    count: usize,
    min_sep: f64,
    fixed: &[Direction],
    rng: &mut impl Rng,
) -> Result<Vec<Direction>> {
    // caps of angular radius min_sep/2 around each point must not overlap
    let cap = 2.0 * PI * (1.0 - (min_sep / 2.0).cos());
    let total = count + fixed.len();
    if total > 1 && total as f64 * cap > 4.0 * PI {
        return Err(Error::Infeasible(format!(
            "{total} directions cannot be separated by more than min_sep = {:.2} degrees",
            min_sep.to_degrees()
        )));
    }
    let clear = |d: Direction, taken: &[Direction]| taken.iter().all(|t| t.angle_to(d) > min_sep);
    if fixed.iter().enumerate().any(|(i, a)| !clear(*a, &fixed[..i])) && count > 0 {
        return Err(Error::Infeasible(format!(
            "fixed source directions are closer than min_sep = {:.2} degrees",
            min_sep.to_degrees()
        )));
    }
    'restart: for _ in 0..RESTARTS {
        let mut taken = fixed.to_vec();
        for _ in 0..count {
            let mut placed = false;
            for _ in 0..TRIES_PER_POINT {
                let d = random_direction(rng);
                if clear(d, &taken) {
                    taken.push(d);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'restart;
            }
        }
        return Ok(taken.split_off(fixed.len()));
    }
    Err(Error::Infeasible(format!(
        "could not place {count} directions with separation > min_sep = {:.2} degrees after {RESTARTS} restarts",
        min_sep.to_degrees()
    )))
}

/// Noise-burst scene with `count` sources at random directions. Each source
/// emits one 100 ms burst of 2-6 kHz noise; bursts start 150 ms apart.
pub fn random_scenario(count: usize, min_sep: f64, seed: u64) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DIRECTION_STREAM);
    let dirs = random_directions(count, min_sep, &mut rng)?;
    let (lead, step, burst) = (0.05, 0.15, 0.1);
    let duration = lead + step * count as f64 + 0.1;
    let sources = dirs
        .into_iter()
        .enumerate()
        .map(|(i, d)| SceneSource {
            direction: Some(d),
            signal: SourceSignal::NoiseBurst {
                onset_s: lead + step * i as f64,
                duration_s: burst,
                f_lo: 2000.0,
                f_hi: 6000.0,
            },
            gain: 1.0,
        })
        .collect();
    Ok(SceneSpec {
        fs: default_fs(),
        duration_s: duration,
        sources,
        extra_components: Vec::new(),
        snr_db: None,
        seed,
        min_sep,
    })
}

/// Two sources emitting the same noise burst from directions `separation`
/// radians apart, both drawn at random.
pub fn coherent_pair_scenario(separation: f64, seed: u64) -> Result<SceneSpec> {
    if !(separation > 0.0 && separation <= PI) {
        return Err(Error::Domain(format!("separation {separation} outside (0, pi]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DIRECTION_STREAM);
    let a = random_direction(&mut rng);
    let u = a.to_unit();
    // any unit vector orthogonal to `a`, rotated about `a` by a random angle
    let helper = if u[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let e1 = normalize(cross(u, helper));
    let e2 = cross(u, e1);
    let psi = rng.random_range(0.0..2.0 * PI);
    let (s, c) = separation.sin_cos();
    let v: [f64; 3] = std::array::from_fn(|k| c * u[k] + s * (psi.cos() * e1[k] + psi.sin() * e2[k]));
    let burst = SourceSignal::NoiseBurst { onset_s: 0.05, duration_s: 0.25, f_lo: 2000.0, f_hi: 6000.0 };
    Ok(SceneSpec {
        fs: default_fs(),
        duration_s: 0.4,
        sources: vec![
            SceneSource { direction: Some(a), signal: burst, gain: 1.0 },
            SceneSource { direction: Some(Direction::from_vector(v)), signal: SourceSignal::CopyOf { source: 0 }, gain: 1.0 },
        ],
        extra_components: Vec::new(),
        snr_db: None,
        seed,
        min_sep: separation.min(default_min_sep()),
    })
}

const FADE_S: f64 = 0.005;

fn raised_cosine_gate(n: usize, fs: f64, start: f64, len: f64) -> Vec<f64> {
    let fade = FADE_S * fs;
    let (a, b) = (start * fs, (start + len) * fs);
    (0..n)
        .map(|t| {
            let t = t as f64;
            if t < a || t >= b {
                0.0
            } else {
                let edge = (t - a).min(b - 1.0 - t);
                if edge >= fade {
                    1.0
                } else {
                    0.5 - 0.5 * (PI * edge / fade).cos()
                }
            }
        })
        .collect()
}

fn band_noise(n: usize, fs: f64, f_lo: f64, f_hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = n.next_power_of_two().max(2);
    let mut buf: Vec<Complex64> = (0..len).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (i, v) in buf.iter_mut().enumerate() {
        let f = i.min(len - i) as f64 * fs / len as f64;
        if f < f_lo || f > f_hi {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let x: Vec<f64> = buf[..n].iter().map(|c| c.re).collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter().map(|v| v / rms).collect()
    } else {
        x
    }
}

/// Dry waveform of every source (gain applied), length `scene.samples()`.
pub fn source_waveforms(scene: &SceneSpec) -> Result<Vec<Vec<f64>>> {
    let n = scene.samples();
    let fs = scene.fs;
    let mut out: Vec<Option<Vec<f64>>> = vec![None; scene.sources.len()];
    for (i, s) in scene.sources.iter().enumerate() {
        let w = match &s.signal {
            SourceSignal::Tone { freq_hz, phase } => (0..n)
                .map(|t| (2.0 * PI * freq_hz * t as f64 / fs + phase).cos())
                .collect(),
            SourceSignal::NoiseBurst { onset_s, duration_s, f_lo, f_hi } => {
                let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
                rng.set_stream(SIGNAL_STREAM_BASE + i as u64);
                let noise = band_noise(n, fs, *f_lo, *f_hi, &mut rng);
                let gate = raised_cosine_gate(n, fs, *onset_s, *duration_s);
                noise.iter().zip(&gate).map(|(a, b)| a * b).collect()
            }
            SourceSignal::Wav { path } => {
                let (rate, ch) = crate::audio::read_wav(path)?;
                if (rate as f64 - fs).abs() > 0.5 {
                    return Err(Error::Config(format!("{path}: sample rate {rate} differs from scene fs {fs}")));
                }
                let mut x = ch.into_iter().next().unwrap_or_default();
                x.resize(n, 0.0);
                x
            }
            SourceSignal::CopyOf { .. } => continue,
        };
        out[i] = Some(w);
    }
    for (i, s) in scene.sources.iter().enumerate() {
        if let SourceSignal::CopyOf { source } = s.signal {
            out[i] = out[source].clone();
        }
    }
    let out = out.into_iter().zip(&scene.sources).map(|(w, s)| {
        w.expect("every source rendered").into_iter().map(|v| v * s.gain).collect()
    });
    Ok(out.collect())
}

/// One plane wave of a time-domain scene.
struct Component<'a> {
    direction: Direction,
    /// scale applied on positive frequencies (conjugated on negative ones)
    amplitude: Complex64,
    delay_s: f64,
    signal: &'a [f64],
}

/// Multichannel rigid-sphere microphone signals for a scene, without sensor noise.
///
/// The whole waveform is transformed once; each positive-frequency bin is
/// multiplied by the per-microphone transfer at that bin's wavenumber.
pub fn synth_time_signals(
    scene: &SceneSpec,
    directions: &[Direction],
    waveforms: &[Vec<f64>],
    geom: &ArrayGeometry,
    speed_of_sound: f64,
) -> Result<Vec<Vec<f64>>> {
    if directions.len() != scene.sources.len() {
        return Err(Error::SizeMismatch {
            what: "source directions",
            expected: scene.sources.len(),
            actual: directions.len(),
        });
    }
    if waveforms.len() != scene.sources.len() {
        return Err(Error::SizeMismatch {
            what: "source waveforms",
            expected: scene.sources.len(),
            actual: waveforms.len(),
        });
    }
    let n = scene.samples();
    for w in waveforms {
        if w.len() != n {
            return Err(Error::SizeMismatch { what: "waveform samples", expected: n, actual: w.len() });
        }
    }
    let mut comps: Vec<Component> = directions
        .iter()
        .zip(waveforms)
        .map(|(d, w)| Component { direction: *d, amplitude: Complex64::new(1.0, 0.0), delay_s: 0.0, signal: w })
        .collect();
    for e in &scene.extra_components {
        comps.push(Component {
            direction: e.direction,
            amplitude: e.amplitude,
            delay_s: e.delay_s,
            signal: &waveforms[e.source],
        });
    }
    let q = geom.mic_count();
    if n == 0 {
        return Ok(vec![Vec::new(); q]);
    }
    // padding keeps the sphere's acausal lead from wrapping around
    let len = (n + 1024).next_power_of_two();
    let half = len / 2;
    let r_a = geom.radius_m;
    let transfers: Vec<SphereTransfer> = (0..=half)
        .map(|bin| {
            let f = bin as f64 * scene.fs / len as f64;
            if bin == 0 {
                Ok(SphereTransfer::dc())
            } else {
                let k = wavenumber(f, speed_of_sound);
                SphereTransfer::new(k, r_a, synth_order(k, r_a))
            }
        })
        .collect::<Result<_>>()?;
    let mic_units: Vec<[f64; 3]> = geom.mics.iter().map(|m| Direction::new(m.theta, m.phi).to_unit()).collect();

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut spectra = vec![vec![Complex64::new(0.0, 0.0); half + 1]; q];
    for c in &comps {
        let mut buf: Vec<Complex64> = c.signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(len, Complex64::new(0.0, 0.0));
        fwd.process(&mut buf);
        let u = c.direction.to_unit();
        for (mic, spec) in mic_units.iter().zip(spectra.iter_mut()) {
            let cos_g = dot(*mic, u);
            for bin in 0..=half {
                let w = 2.0 * PI * bin as f64 * scene.fs / len as f64;
                let delay = Complex64::from_polar(1.0, -w * c.delay_s);
                spec[bin] += buf[bin] * c.amplitude * delay * transfers[bin].at_cos(cos_g);
            }
        }
    }
    let mut out = Vec::with_capacity(q);
    for spec in spectra {
        let mut full = vec![Complex64::new(0.0, 0.0); len];
        full[0] = Complex64::new(spec[0].re, 0.0);
        full[half] = Complex64::new(spec[half].re, 0.0);
        for bin in 1..half {
            full[bin] = spec[bin];
            full[len - bin] = spec[bin].conj();
        }
        inv.process(&mut full);
        out.push(full[..n].iter().map(|c| c.re / len as f64).collect());
    }
    Ok(out)
}

/// Energy of the channel-average signal.
pub fn omni_energy(signals: &[Vec<f64>]) -> f64 {
    let q = signals.len();
    if q == 0 {
        return 0.0;
    }
    let n = signals.iter().map(Vec::len).min().unwrap_or(0);
    (0..n)
        .map(|t| {
            let m = signals.iter().map(|s| s[t]).sum::<f64>() / q as f64;
            m * m
        })
        .sum()
}

/// Add independent white Gaussian noise to every channel so that each
/// channel's noise energy sits `snr_db` below the omnidirectional energy.
/// `snr_db = +inf` leaves the signals untouched.
pub fn add_noise(signals: &[Vec<f64>], snr_db: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if snr_db == f64::INFINITY {
        return Ok(signals.to_vec());
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("snr_db must be finite or +inf, got {snr_db}")));
    }
    let target = omni_energy(signals) / 10f64.powf(snr_db / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    Ok(signals
        .iter()
        .map(|ch| {
            let noise: Vec<f64> = (0..ch.len()).map(|_| rng.sample(StandardNormal)).collect();
            let e: f64 = noise.iter().map(|v| v * v).sum();
            let g = if e > 0.0 { (target / e).sqrt() } else { 0.0 };
            ch.iter().zip(&noise).map(|(x, v)| x + g * v).collect()
        })
        .collect())
}

/// Resolve directions, synthesise, and add noise when the scene asks for it.
pub fn render_scene(scene: &SceneSpec, geom: &ArrayGeometry, speed_of_sound: f64) -> Result<SceneRender> {
    scene.validate()?;
    let directions = scene.resolve_directions()?;
    let waveforms = source_waveforms(scene)?;
    let clean = synth_time_signals(scene, &directions, &waveforms, geom, speed_of_sound)?;
    let signals = match scene.snr_db {
        Some(snr) => add_noise(&clean, snr, scene.seed)?,
        None => clean,
    };
    Ok(SceneRender { directions, signals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sph::{plane_wave_shd, shd_from_mics, SPEED_OF_SOUND};

    fn geom() -> ArrayGeometry {
        ArrayGeometry::em32_like()
    }

    #[test]
    fn harmonic_sum_matches_addition_theorem() {
        let g = geom();
        let k = wavenumber(3000.0, SPEED_OF_SOUND);
        let srcs = [
            PlaneWaveSource { amplitude: Complex64::new(0.7, -0.2), direction: Direction::new(1.1, 4.0) },
            PlaneWaveSource::unit(Direction::new(0.2, 0.5)),
        ];
        let n = synth_order(k, g.radius_m);
        let a = synth_pressures(&srcs, &g, k, n).unwrap();
        let b = synth_pressures_legendre(&srcs, &g, k, n).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-12 * y.norm().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn truncation_converges() {
        // k r_a close to 2.3
        let g = geom();
        let k = 2.3 / g.radius_m;
        let src = [PlaneWaveSource::unit(Direction::new(0.9, 2.0))];
        let base = (k * g.radius_m).ceil() as usize;
        let p8 = synth_pressures(&src, &g, k, base + SYNTH_ORDER_MARGIN).unwrap();
        let p9 = synth_pressures(&src, &g, k, base + SYNTH_ORDER_MARGIN + 1).unwrap();
        let d = p8.iter().zip(&p9).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(d < 1e-6, "successive difference {d}");
        let p4 = synth_pressures(&src, &g, k, base + 4).unwrap();
        let p5 = synth_pressures(&src, &g, k, base + 5).unwrap();
        let d4 = p4.iter().zip(&p5).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(d4 > d);
        assert!(synth_pressures(&src, &g, k, base + 3).is_err());
    }

    #[test]
    fn transfer_reduces_to_free_field_for_small_sphere() {
        // a vanishing sphere leaves the incident wave e^{i k r cos gamma} -> 1
        let t = SphereTransfer::new(1e-3, 1e-3, 12).unwrap();
        for c in [-1.0, 0.0, 0.4, 1.0] {
            assert!((t.at_cos(c) - Complex64::new(1.0, 0.0)).norm() < 2e-3);
        }
        assert_eq!(SphereTransfer::dc().at_cos(0.3), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn zero_amplitude_and_superposition() {
        let g = geom();
        let k = wavenumber(4000.0, SPEED_OF_SOUND);
        let n = synth_order(k, g.radius_m);
        let zero = [PlaneWaveSource { amplitude: Complex64::new(0.0, 0.0), direction: Direction::new(1.0, 1.0) }];
        assert!(synth_pressures(&zero, &g, k, n).unwrap().iter().all(|p| p.norm() == 0.0));
        let a = PlaneWaveSource::unit(Direction::new(0.4, 5.0));
        let b = PlaneWaveSource { amplitude: Complex64::new(0.0, 2.0), direction: Direction::new(2.5, 1.0) };
        let pa = synth_pressures(&[a], &g, k, n).unwrap();
        let pb = synth_pressures(&[b], &g, k, n).unwrap();
        let pab = synth_pressures(&[a, b], &g, k, n).unwrap();
        for i in 0..pab.len() {
            assert!((pab[i] - pa[i] - pb[i]).norm() < 1e-12);
        }
    }

    fn three_waves() -> Vec<PlaneWaveSource> {
        [(3.0 * PI / 5.0, PI / 2.0), (PI / 5.0, 2.0 * PI / 3.0), (PI / 3.0, 9.0 * PI / 5.0)]
            .iter()
            .map(|&(t, p)| PlaneWaveSource::unit(Direction::new(t, p)))
            .collect()
    }

    #[test]
    fn three_wave_frame_round_trip_through_microphones() {
        let g = geom();
        let k = wavenumber(3000.0, SPEED_OF_SOUND);
        let srcs = three_waves();
        let p = synth_pressures(&srcs, &g, k, synth_order(k, g.radius_m)).unwrap();
        let got = shd_from_mics(&p, &g, k).unwrap();
        let want = plane_wave_shd(&srcs, k, 4, g.radius_m).unwrap();
        let err: f64 = got.coeffs.iter().zip(&want.coeffs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = want.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm < 0.05, "relative aliasing error {}", err / norm);
    }

    #[test]
    fn three_wave_srp_map_has_three_lobes() {
        use crate::healpix::uniform_level;
        use crate::sph::srp_scan;
        let g = geom();
        let k = wavenumber(3000.0, SPEED_OF_SOUND);
        let p = synth_pressures(&three_waves(), &g, k, synth_order(k, g.radius_m)).unwrap();
        let frame = shd_from_mics(&p, &g, k).unwrap();
        let nodes: Vec<_> = uniform_level(3).collect();
        let dirs: Vec<Direction> = nodes.iter().map(|n| n.center()).collect();
        let v = srp_scan(&frame, g.radius_m, &dirs).unwrap();
        let top = v.iter().cloned().fold(0.0, f64::max);
        let peaks: Vec<f64> = nodes
            .iter()
            .map(|n| v[n.index as usize])
            .zip(&nodes)
            .filter(|(x, n)| n.neighbors().iter().all(|m| v[m.index as usize] < *x))
            .map(|(x, _)| x / top)
            .collect();
        // main lobes stand well above the sidelobes (< 0.2 of the maximum)
        let peaks = peaks.iter().filter(|x| **x > 0.5).count();
        assert_eq!(peaks, 3);
    }

    #[test]
    fn random_directions_respect_separation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let d = random_directions(4, FRAC_PI_4, &mut rng).unwrap();
            for i in 0..4 {
                for j in 0..i {
                    assert!(d[i].angle_to(d[j]) > FRAC_PI_4);
                }
            }
        }
        assert_eq!(random_directions(1, PI, &mut rng).unwrap().len(), 1);
        assert!(matches!(random_directions(40, FRAC_PI_4, &mut rng), Err(Error::Infeasible(_))));
    }

    #[test]
    fn random_directions_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = [0.0; 3];
        let n = 10_000;
        for _ in 0..n {
            let u = random_direction(&mut rng).to_unit();
            for k in 0..3 {
                s[k] += u[k];
            }
        }
        let m = crate::sphere::norm(s) / n as f64;
        assert!(m < 0.05, "mean direction norm {m}");
    }

    #[test]
    fn noise_hits_requested_snr() {
        let scene = random_scenario(2, FRAC_PI_4, 5).unwrap();
        let r = render_scene(&scene, &geom(), SPEED_OF_SOUND).unwrap();
        let e_omni = omni_energy(&r.signals);
        for seed in 0..10 {
            let noisy = add_noise(&r.signals, 10.0, seed).unwrap();
            for (a, b) in noisy.iter().zip(&r.signals) {
                let e: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                let snr = 10.0 * (e_omni / e).log10();
                assert!((snr - 10.0).abs() < 0.1, "snr {snr}");
            }
        }
        assert_eq!(add_noise(&r.signals, 20.0, 1).unwrap(), add_noise(&r.signals, 20.0, 1).unwrap());
        assert_eq!(add_noise(&r.signals, f64::INFINITY, 1).unwrap(), r.signals);
    }

    #[test]
    fn tone_matches_single_bin_pressures() {
        let g = geom();
        let fs = 48_000.0;
        let win = 1024;
        let bin = 64;
        let f = bin as f64 * fs / win as f64;
        let d = Direction::new(1.3, 2.2);
        let scene = SceneSpec {
            fs,
            duration_s: 0.2,
            sources: vec![SceneSource { direction: Some(d), signal: SourceSignal::Tone { freq_hz: f, phase: 0.3 }, gain: 1.0 }],
            extra_components: vec![],
            snr_db: None,
            seed: 0,
            min_sep: FRAC_PI_4,
        };
        let w = source_waveforms(&scene).unwrap();
        let x = synth_time_signals(&scene, &[d], &w, &g, SPEED_OF_SOUND).unwrap();
        let k = wavenumber(f, SPEED_OF_SOUND);
        let expect = synth_pressures(&[PlaneWaveSource::unit(d)], &g, k, synth_order(k, g.radius_m)).unwrap();
        // single DFT bin over a window in the middle of the signal
        let start = 4096;
        let dft = |s: &[f64]| -> Complex64 {
            (0..win)
                .map(|t| {
                    let h = 0.5 - 0.5 * (2.0 * PI * t as f64 / win as f64).cos();
                    Complex64::from_polar(h * s[start + t], -2.0 * PI * (bin * t) as f64 / win as f64)
                })
                .sum()
        };
        let reference = dft(&w[0]);
        for (q, ch) in x.iter().enumerate() {
            let h = dft(ch) / reference;
            assert!((h - expect[q]).norm() < 1e-3 * expect[q].norm().max(1.0), "mic {q}: {h} vs {}", expect[q]);
        }
    }

    #[test]
    fn silence_and_linearity() {
        let g = geom();
        let mut scene = random_scenario(2, FRAC_PI_4, 9).unwrap();
        scene.duration_s = 0.1;
        scene.sources[1].signal = SourceSignal::CopyOf { source: 0 };
        let dirs = scene.resolve_directions().unwrap();
        let w = source_waveforms(&scene).unwrap();
        assert_eq!(w[0], w[1]);
        let both = synth_time_signals(&scene, &dirs, &w, &g, SPEED_OF_SOUND).unwrap();
        let mut one = scene.clone();
        one.sources.truncate(1);
        let a = synth_time_signals(&one, &dirs[..1], &w[..1], &g, SPEED_OF_SOUND).unwrap();
        let b = synth_time_signals(&one, &dirs[1..], &w[1..], &g, SPEED_OF_SOUND).unwrap();
        for q in 0..g.mic_count() {
            for t in 0..both[q].len() {
                assert!((both[q][t] - a[q][t] - b[q][t]).abs() < 1e-10);
            }
        }
        let silent: Vec<Vec<f64>> = vec![vec![0.0; w[0].len()]; 2];
        let z = synth_time_signals(&scene, &dirs, &silent, &g, SPEED_OF_SOUND).unwrap();
        assert!(z.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn scene_json_and_validation() {
        let text = r#"{
            "duration_s": 0.5,
            "seed": 4,
            "sources": [
                {"direction": {"theta": 1.0, "phi": 2.0}, "signal": {"kind": "tone", "freq_hz": 3000.0}},
                {"signal": {"kind": "copy_of", "source": 0}, "gain": 0.5}
            ],
            "extra_components": [{"direction": {"theta": 2.0, "phi": 0.1}, "amplitude": [0.2, 0.1], "source": 0}]
        }"#;
        let s = SceneSpec::from_json(text).unwrap();
        assert_eq!(s.fs, 48_000.0);
        let d = s.resolve_directions().unwrap();
        assert_eq!(d[0], Direction::new(1.0, 2.0));
        assert!(d[1].angle_to(d[0]) > FRAC_PI_4);
        assert_eq!(SceneSpec::from_json(&s.to_json()).unwrap(), s);
        assert!(SceneSpec::from_json(r#"{"duration_s": 1, "sources": [], "bogus": 1}"#).is_err());
        let bad_copy = r#"{"duration_s": 1, "sources": [{"signal": {"kind": "copy_of", "source": 0}}]}"#;
        assert!(SceneSpec::from_json(bad_copy).is_err());
        let crowded = r#"{"duration_s": 1, "min_sep": 1.5, "sources": [
            {"signal": {"kind": "tone", "freq_hz": 100}}, {"signal": {"kind": "tone", "freq_hz": 100}},
            {"signal": {"kind": "tone", "freq_hz": 100}}, {"signal": {"kind": "tone", "freq_hz": 100}},
            {"signal": {"kind": "tone", "freq_hz": 100}}, {"signal": {"kind": "tone", "freq_hz": 100}},
            {"signal": {"kind": "tone", "freq_hz": 100}}, {"signal": {"kind": "tone", "freq_hz": 100}}]}"#;
        let c = SceneSpec::from_json(crowded).unwrap();
        assert!(matches!(c.resolve_directions(), Err(Error::Infeasible(_))));
    }
}
