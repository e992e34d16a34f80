use std::fmt;
use std::path::{Path, PathBuf};

use higrid::audio::{read_raw_f32, read_wav, write_atomic, write_wav_f32};
use higrid::eval::plot::map_rows;
use higrid::eval::{bench_cost, emit_plot_data, run_experiment, BenchConfig, EvalReport};
use higrid::higrid::SrpdMap;
use higrid::pipeline::{bin_map, localize as run_localize, DoaOutput, PipelineConfig};
use higrid::scene::{random_scenario, render_scene, SceneSpec};
use higrid::sph::ArrayGeometry;
use higrid::srpd::CdCache;
use higrid::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{BenchArgs, CacheArgs, EvalArgs, LocalizeArgs, MapArgs, PipelineFlags, SimulateArgs};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Lib(Error),
    /// The command ran but found nothing to report.
    Empty(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Empty(_) => 3,
            Failure::Lib(e) => match e {
                Error::Numerical(_) | Error::IllConditioned(_) | Error::Degenerate(_) => 4,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Empty(m) => f.write_str(m),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = Result<(), Failure>;

fn required(p: Option<&PathBuf>, cfg: Option<&PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    p.or(cfg).cloned().ok_or_else(|| Failure::Usage(format!("missing {what}")))
}

fn load_geometry(path: Option<&PathBuf>) -> Result<ArrayGeometry, Failure> {
    Ok(match path {
        Some(p) => ArrayGeometry::load(p)?,
        None => ArrayGeometry::em32_like(),
    })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serialises");
    s.push('\n');
    s
}

fn write_output(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn merged_pipeline(flags: &PipelineFlags, cfg: &RunConfig) -> Result<PipelineConfig, Failure> {
    let mut p = cfg.pipeline.clone();
    if let Some(v) = flags.seed {
        p.seed = v;
    }
    if let Some(v) = flags.win {
        p.win = v;
    }
    if let Some(v) = flags.hop {
        p.hop = v;
    }
    if let Some(v) = flags.f_lo {
        p.f_lo = v;
    }
    if let Some(v) = flags.f_hi {
        p.f_hi = v;
    }
    if let Some(v) = flags.max_level {
        p.max_level = v;
    }
    if let Some(v) = flags.speed_of_sound {
        p.speed_of_sound = v;
    }
    p.validate()?;
    Ok(p)
}

fn cache_for(path: Option<&PathBuf>, p: &PipelineConfig, max_level: u8, order: usize) -> Result<CdCache, Failure> {
    Ok(match path {
        Some(path) => CdCache::load_or_build(path, max_level, order, p.sub_depth, p.eig_threshold)?,
        None => CdCache::build(max_level, order, p.sub_depth, p.eig_threshold)?,
    })
}

fn read_input(path: &Path, fs: Option<f64>, geom: &ArrayGeometry) -> Result<(f64, Vec<Vec<f64>>), Failure> {
    let is_wav = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        let (rate, signals) = read_wav(path)?;
        Ok((fs.unwrap_or(rate as f64), signals))
    } else {
        let fs = fs.ok_or_else(|| Failure::Usage("raw float32 input needs --fs".into()))?;
        Ok((fs, read_raw_f32(path, geom.mic_count())?))
    }
}

/// Ground truth written next to a simulated recording.
#[derive(Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub fs: f64,
    pub channels: usize,
    pub samples: usize,
    pub snr_db: Option<f64>,
    pub doas: Vec<TruthRecord>,
    pub scene: SceneSpec,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthRecord {
    pub theta_deg: f64,
    pub phi_deg: f64,
}

pub fn simulate(a: &SimulateArgs, cfg: &RunConfig) -> Outcome {
    let out = required(a.out.as_ref(), cfg.output.as_ref(), "--out")?;
    let mut scene = match (a.sources, a.scene.as_ref().or(cfg.scene.as_ref())) {
        (Some(n), _) => random_scenario(n, a.min_sep_deg.to_radians(), a.seed.unwrap_or(0))?,
        (None, Some(p)) => SceneSpec::load(p)?,
        (None, None) => return Err(Failure::Usage("give --scene or --sources".into())),
    };
    if let Some(s) = a.seed {
        scene.seed = s;
    }
    if a.snr_db.is_some() {
        scene.snr_db = a.snr_db;
    }
    if scene.fs.fract() != 0.0 || scene.fs > u32::MAX as f64 {
        return Err(Failure::Usage(format!("sample rate {} is not a whole number of hertz", scene.fs)));
    }
    let geom = load_geometry(a.geometry.as_ref().or(cfg.geometry.as_ref()))?;
    let render = render_scene(&scene, &geom, cfg.pipeline.speed_of_sound)?;
    write_wav_f32(&out, scene.fs as u32, &render.signals)?;
    let sidecar = Sidecar {
        seed: scene.seed,
        fs: scene.fs,
        channels: render.signals.len(),
        samples: render.signals.first().map_or(0, Vec::len),
        snr_db: scene.snr_db,
        doas: render
            .directions
            .iter()
            .map(|d| TruthRecord { theta_deg: d.theta.to_degrees(), phi_deg: d.phi.to_degrees() })
            .collect(),
        scene,
    };
    write_atomic(out.with_extension("json"), to_json(&sidecar).as_bytes())?;
    Ok(())
}

pub fn localize(a: &LocalizeArgs, cfg: &RunConfig) -> Outcome {
    let input = required(a.input.as_ref(), cfg.input.as_ref(), "--input")?;
    let p = merged_pipeline(&a.pipeline, cfg)?;
    let geom = load_geometry(a.pipeline.geometry.as_ref().or(cfg.geometry.as_ref()))?;
    let (fs, signals) = read_input(&input, a.fs, &geom)?;
    if signals.len() != geom.mic_count() {
        return Err(Error::SizeMismatch { what: "input channels vs geometry mics", expected: geom.mic_count(), actual: signals.len() }.into());
    }
    let cache = cache_for(a.pipeline.cache.as_ref().or(cfg.cache.as_ref()), &p, p.max_level, geom.max_order)?;
    let loc = run_localize(&signals, fs, &geom, &p, &cache)?;
    let mut out = DoaOutput::from(&loc);
    out.seed = Some(p.seed);
    write_output(a.out.as_deref().or(cfg.output.as_deref()), &to_json(&out))?;
    if loc.selection.is_empty() {
        return Err(Failure::Empty("no time-frequency bins selected".into()));
    }
    Ok(())
}

pub fn bench(a: &BenchArgs, cfg: &RunConfig) -> Outcome {
    let mut b: BenchConfig = cfg.bench.clone();
    if let Some(v) = &a.levels {
        b.levels = v.clone();
    }
    if let Some(v) = &a.sources {
        b.source_counts = v.clone();
    }
    if let Some(v) = &a.diffuse {
        b.diffuse_counts = v.clone();
    }
    if let Some(v) = a.repetitions {
        b.repetitions = v;
    }
    if let Some(v) = a.freq {
        b.freq_hz = v;
    }
    if let Some(v) = a.seed {
        b.seed = v;
    }
    b.timing |= a.timing;
    let geometry = a.geometry.as_ref().or(cfg.geometry.as_ref());
    let order = match geometry {
        Some(p) => {
            let g = ArrayGeometry::load(p)?;
            b.radius_m = g.radius_m;
            g.max_order
        }
        None => ArrayGeometry::em32_like().max_order,
    };
    b.validate()?;
    let top = *b.levels.iter().max().expect("validated");
    let cache = cache_for(a.cache.as_ref().or(cfg.cache.as_ref()), &cfg.pipeline, top, order)?;
    let report = bench_cost(&b, &cache)?;
    if let Some(p) = &a.csv {
        write_atomic(p, report.to_csv()?.as_bytes())?;
    }
    write_output(a.out.as_deref().or(cfg.output.as_deref()), &to_json(&report))
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    seed: u64,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn eval(a: &EvalArgs, cfg: &RunConfig) -> Outcome {
    let p = merged_pipeline(&a.pipeline, cfg)?;
    let o = &cfg.eval;
    let scenes: Vec<SceneSpec> = match a.batch.as_ref().or(o.batch.as_ref()) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path).map_err(Error::from)?).map_err(Error::from)?,
        None => {
            let sources = a.sources.unwrap_or(o.sources);
            let trials = a.trials.unwrap_or(o.trials);
            let min_sep = a.min_sep_deg.map_or(o.min_sep, f64::to_radians);
            let snr = a.snr_db.or(o.snr_db);
            (0..trials as u64)
                .map(|i| {
                    let mut s = random_scenario(sources, min_sep, p.seed.wrapping_mul(1_000_003).wrapping_add(i))?;
                    s.snr_db = snr;
                    Ok(s)
                })
                .collect::<higrid::Result<_>>()?
        }
    };
    if scenes.is_empty() {
        return Err(Failure::Usage("the batch holds no scenes".into()));
    }
    for s in &scenes {
        s.validate()?;
    }
    let geom = load_geometry(a.pipeline.geometry.as_ref().or(cfg.geometry.as_ref()))?;
    let cache = cache_for(a.pipeline.cache.as_ref().or(cfg.cache.as_ref()), &p, p.max_level, geom.max_order)?;
    let report = run_experiment(&scenes, &geom, &p, &cache)?;
    if let Some(path) = &a.csv {
        write_atomic(path, report.summary_csv()?.as_bytes())?;
    }
    write_output(a.out.as_deref().or(cfg.output.as_deref()), &to_json(&EvalOutput { seed: p.seed, report: &report }))
}

/// Map file written by `map`.
#[derive(Debug, Serialize, Deserialize)]
pub struct MapOutput {
    pub seed: u64,
    pub frame: usize,
    pub bin: usize,
    pub freq_hz: f64,
    pub map: SrpdMap,
}

pub fn map(a: &MapArgs, cfg: &RunConfig) -> Outcome {
    let input = required(a.input.as_ref(), cfg.input.as_ref(), "--input")?;
    let out = required(a.out.as_ref(), cfg.output.as_ref(), "--out")?;
    let p = merged_pipeline(&a.pipeline, cfg)?;
    let geom = load_geometry(a.pipeline.geometry.as_ref().or(cfg.geometry.as_ref()))?;
    let (fs, signals) = read_input(&input, a.fs, &geom)?;
    if signals.len() != geom.mic_count() {
        return Err(Error::SizeMismatch { what: "input channels vs geometry mics", expected: geom.mic_count(), actual: signals.len() }.into());
    }
    if !(a.freq > 0.0 && a.freq <= fs / 2.0) {
        return Err(Failure::Usage(format!("--freq {} outside (0, {}]", a.freq, fs / 2.0)));
    }
    let df = fs / p.win as f64;
    let bin = (a.freq / df).round() as usize;
    let cache = cache_for(a.pipeline.cache.as_ref().or(cfg.cache.as_ref()), &p, p.max_level, geom.max_order)?;
    let m = bin_map(&signals, fs, &geom, &p, &cache, a.frame, bin)?;
    let plot = a.plot.clone().unwrap_or_else(|| {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "map".into());
        out.with_file_name(format!("{stem}_mollweide.csv"))
    });
    emit_plot_data(&map_rows(&m), &plot)?;
    let silent = m.silent;
    let record = MapOutput { seed: p.seed, frame: a.frame, bin, freq_hz: bin as f64 * df, map: m };
    write_atomic(&out, to_json(&record).as_bytes())?;
    if silent {
        return Err(Failure::Empty("the selected bin carries no energy".into()));
    }
    Ok(())
}

pub fn cache_build(a: &CacheArgs, cfg: &RunConfig) -> Outcome {
    let out = required(a.out.as_ref(), cfg.cache.as_ref(), "--out")?;
    let order = match (a.order, a.geometry.as_ref().or(cfg.geometry.as_ref())) {
        (Some(n), _) => n,
        (None, Some(p)) => ArrayGeometry::load(p)?.max_order,
        (None, None) => ArrayGeometry::em32_like().max_order,
    };
    let max_level = a.max_level.unwrap_or(cfg.pipeline.max_level);
    let sub_depth = a.sub_depth.unwrap_or(cfg.pipeline.sub_depth);
    let threshold = a.threshold.unwrap_or(cfg.pipeline.eig_threshold);
    let cache = CdCache::build(max_level, order, sub_depth, threshold)?;
    cache.save(&out)?;
    eprintln!("cache: order {order}, levels 0..={max_level}, {} pixels", cache.len());
    Ok(())
}
