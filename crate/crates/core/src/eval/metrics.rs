use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::sphere::angle_between;

/// Errors above this are outliers and stay out of the mean.
pub const EXTREME_ERROR: f64 = FRAC_PI_4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub error_deg: f64,
    pub extreme: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaErrors {
    pub pairs: Vec<PairError>,
    /// Mean over non-extreme pairs; `None` when there are none.
    pub mean_deg: Option<f64>,
    pub extreme_count: usize,
}

/// Per-pair great-circle errors in degrees and their mean.
pub fn doa_error(pairs: &[([f64; 3], [f64; 3])]) -> DoaErrors {
    let pairs: Vec<PairError> = pairs
        .iter()
        .map(|(a, b)| {
            let angle = angle_between(*a, *b);
            PairError { error_deg: angle.to_degrees(), extreme: angle > EXTREME_ERROR }
        })
        .collect();
    let kept: Vec<f64> = pairs.iter().filter(|p| !p.extreme).map(|p| p.error_deg).collect();
    let mean_deg = (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64);
    DoaErrors { extreme_count: pairs.len() - kept.len(), pairs, mean_deg }
}
