use std::f64::consts::FRAC_PI_4;
use std::path::{Path, PathBuf};

use higrid::eval::BenchConfig;
use higrid::pipeline::PipelineConfig;
use serde::Deserialize;

/// Options of the `eval` command that can come from the run configuration.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// JSON list of scene specifications; generated scenes are used when absent.
    pub batch: Option<PathBuf>,
    pub sources: usize,
    pub trials: usize,
    pub snr_db: Option<f64>,
    /// Radians.
    pub min_sep: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { batch: None, sources: 4, trials: 10, snr_db: None, min_sep: FRAC_PI_4 }
    }
}

/// Run configuration file. Every key is optional; command-line flags win.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub bench: BenchConfig,
    pub eval: EvalOptions,
}

impl RunConfig {
    /// Load a configuration; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> higrid::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut c: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut c.geometry, &mut c.scene, &mut c.input, &mut c.cache, &mut c.output, &mut c.eval.batch]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        c.pipeline.validate()?;
        c.bench.validate()?;
        Ok(c)
    }

    pub fn load_opt(path: Option<&Path>) -> higrid::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
