use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assign::hungarian_assign;
use super::metrics::doa_error;
use crate::error::{Error, Result};
use crate::pipeline::{localize, Localization, PipelineConfig};
use crate::scene::{render_scene, SceneSpec};
use crate::sph::ArrayGeometry;
use crate::srpd::CdCache;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub est: usize,
    pub truth: usize,
    pub error_deg: f64,
    pub extreme: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub id: usize,
    pub seed: u64,
    pub s_act: usize,
    pub s_est: usize,
    /// `s_est - s_act`.
    pub delta_s: i64,
    pub truth_deg: Vec<[f64; 2]>,
    pub estimates_deg: Vec<[f64; 2]>,
    pub matches: Vec<MatchRecord>,
    pub mean_error_deg: Option<f64>,
    pub extreme_count: usize,
    pub bins_processed: usize,
    pub evaluations: u64,
    /// Reason the trial produced no usable result.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: Vec<TrialReport>,
    pub failed_trials: Vec<usize>,
    /// Mean over all non-extreme matched pairs of successful trials.
    pub mean_error_deg: Option<f64>,
    /// Mean `s_est` over successful trials.
    pub s_avg: Option<f64>,
    pub s_act_mean: Option<f64>,
    pub negative_disparity: usize,
    pub positive_disparity: usize,
    pub extreme_count: usize,
}

fn deg(d: crate::sphere::Direction) -> [f64; 2] {
    [d.theta.to_degrees(), d.phi.to_degrees()]
}

fn failed(id: usize, scene: &SceneSpec, reason: String) -> TrialReport {
    TrialReport {
        id,
        seed: scene.seed,
        s_act: scene.sources.len(),
        s_est: 0,
        delta_s: -(scene.sources.len() as i64),
        truth_deg: Vec::new(),
        estimates_deg: Vec::new(),
        matches: Vec::new(),
        mean_error_deg: None,
        extreme_count: 0,
        bins_processed: 0,
        evaluations: 0,
        failure: Some(reason),
    }
}

/// Score one localisation result against the rendered directions.
pub fn score_trial(id: usize, scene: &SceneSpec, truth: &[crate::sphere::Direction], loc: &Localization) -> Result<TrialReport> {
    let est: Vec<[f64; 3]> = loc.doas.iter().map(|d| d.direction().to_unit()).collect();
    let tru: Vec<[f64; 3]> = truth.iter().map(|d| d.to_unit()).collect();
    let matches = if est.is_empty() || tru.is_empty() { Vec::new() } else { hungarian_assign(&est, &tru)? };
    let errs = doa_error(&matches.iter().map(|m| (est[m.est], tru[m.truth])).collect::<Vec<_>>());
    Ok(TrialReport {
        id,
        seed: scene.seed,
        s_act: truth.len(),
        s_est: loc.doas.len(),
        delta_s: loc.doas.len() as i64 - truth.len() as i64,
        truth_deg: truth.iter().map(|d| deg(*d)).collect(),
        estimates_deg: loc.doas.iter().map(|d| deg(d.direction())).collect(),
        matches: matches
            .iter()
            .zip(&errs.pairs)
            .map(|(m, e)| MatchRecord { est: m.est, truth: m.truth, error_deg: e.error_deg, extreme: e.extreme })
            .collect(),
        mean_error_deg: errs.mean_deg,
        extreme_count: errs.extreme_count,
        bins_processed: loc.selection.bins.len(),
        evaluations: loc.evaluations,
        failure: None,
    })
}

/// Render, localise and score one scene. Errors become a failed trial.
pub fn run_trial(id: usize, scene: &SceneSpec, geom: &ArrayGeometry, cfg: &PipelineConfig, cache: &CdCache) -> TrialReport {
    let attempt = || -> Result<TrialReport> {
        let render = render_scene(scene, geom, cfg.speed_of_sound)?;
        let loc = localize(&render.signals, scene.fs, geom, cfg, cache)?;
        if loc.selection.is_empty() {
            let mut t = failed(id, scene, "no time-frequency bins selected".into());
            t.truth_deg = render.directions.iter().map(|d| deg(*d)).collect();
            return Ok(t);
        }
        score_trial(id, scene, &render.directions, &loc)
    };
    attempt().unwrap_or_else(|e| failed(id, scene, e.to_string()))
}

/// Run a batch of scenes in parallel; the report lists trials in batch order.
pub fn run_experiment(scenes: &[SceneSpec], geom: &ArrayGeometry, cfg: &PipelineConfig, cache: &CdCache) -> Result<EvalReport> {
    cfg.validate()?;
    let trials: Vec<TrialReport> = scenes.par_iter().enumerate().map(|(i, s)| run_trial(i, s, geom, cfg, cache)).collect();
    Ok(summarize(trials))
}

pub fn summarize(trials: Vec<TrialReport>) -> EvalReport {
    let ok: Vec<&TrialReport> = trials.iter().filter(|t| t.failure.is_none()).collect();
    let errors: Vec<f64> = ok.iter().flat_map(|t| t.matches.iter().filter(|m| !m.extreme).map(|m| m.error_deg)).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    EvalReport {
        failed_trials: trials.iter().filter(|t| t.failure.is_some()).map(|t| t.id).collect(),
        mean_error_deg: mean(&errors),
        s_avg: mean(&ok.iter().map(|t| t.s_est as f64).collect::<Vec<_>>()),
        s_act_mean: mean(&ok.iter().map(|t| t.s_act as f64).collect::<Vec<_>>()),
        negative_disparity: ok.iter().filter(|t| t.delta_s < 0).count(),
        positive_disparity: ok.iter().filter(|t| t.delta_s > 0).count(),
        extreme_count: ok.iter().map(|t| t.extreme_count).sum(),
        trials,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One CSV line per trial.
    pub fn summary_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            id: usize,
            seed: u64,
            s_act: usize,
            s_est: usize,
            delta_s: i64,
            mean_error_deg: Option<f64>,
            extreme_count: usize,
            bins_processed: usize,
            failed: bool,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for t in &self.trials {
            w.serialize(Row {
                id: t.id,
                seed: t.seed,
                s_act: t.s_act,
                s_est: t.s_est,
                delta_s: t.delta_s,
                mean_error_deg: t.mean_error_deg,
                extreme_count: t.extreme_count,
                bins_processed: t.bins_processed,
                failed: t.failure.is_some(),
            })
            .map_err(|e| Error::Numerical(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::build_cache;
    use crate::scene::random_scenario;

    #[test]
    fn single_source_and_silent_trials() {
        let geom = ArrayGeometry::em32_like();
        let cfg = PipelineConfig::default();
        let cache = build_cache(&cfg, &geom).unwrap();
        let one = random_scenario(1, std::f64::consts::FRAC_PI_4, 3).unwrap();
        let mut silent = one.clone();
        silent.sources[0].gain = 0.0;
        let r = run_experiment(&[one, silent], &geom, &cfg, &cache).unwrap();
        assert_eq!(r.trials.len(), 2);
        let t = &r.trials[0];
        assert!(t.failure.is_none());
        assert_eq!((t.matches.len(), t.delta_s), (1, 0));
        assert!(t.matches[0].error_deg < 3.0);
        assert_eq!(r.failed_trials, vec![1]);
        assert!(r.trials[1].failure.as_deref().unwrap().contains("no time-frequency bins"));
        assert_eq!(r.s_avg, Some(1.0));
        assert_eq!(r.negative_disparity, 0);
        let csv = r.summary_csv().unwrap();
        assert_eq!(csv.lines().count(), 3);
    }
}
