//! Thresholding and neighbouring-nodes labelling of SRPD maps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::healpix::HealpixNode;
use crate::higrid::SrpdMap;
use crate::sphere::{norm, Direction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnlConfig {
    /// Weight pixel centres by their SRPD when forming centroids.
    pub weighted_centroid: bool,
    /// Clusters with fewer pixels are discarded.
    pub min_cluster_size: usize,
}

impl Default for NnlConfig {
    fn default() -> Self {
        Self { weighted_centroid: true, min_cluster_size: 1 }
    }
}

/// Connected set of highest-level pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<HealpixNode>,
    pub centroid: [f64; 3],
    pub mass: f64,
}

impl Cluster {
    pub fn direction(&self) -> Direction {
        Direction::from_vector(self.centroid)
    }
}

/// Mean of all leaf values.
pub fn threshold(map: &SrpdMap) -> Result<f64> {
    if map.is_empty() {
        return Err(Error::Degenerate("threshold of an empty map".into()));
    }
    Ok(map.leaves.iter().map(|l| l.value).sum::<f64>() / map.len() as f64)
}

/// Leaves at the map's maximum level that survive the mean threshold.
pub fn surviving_leaves(map: &SrpdMap) -> Result<BTreeMap<HealpixNode, f64>> {
    let thr = threshold(map)?;
    Ok(map
        .iter()
        .filter(|(n, v)| n.level == map.max_level && !(*v < thr))
        .collect())
}

/// Label connected regions of surviving maximum-level leaves.
pub fn nnl_label(map: &SrpdMap, cfg: &NnlConfig) -> Result<Vec<Cluster>> {
    let live = surviving_leaves(map)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &seed in live.keys() {
        if !seen.insert(seed) {
            continue;
        }
        let mut members = vec![seed];
        let mut queue = VecDeque::from([seed]);
        while let Some(n) = queue.pop_front() {
            for nb in n.neighbors() {
                if live.contains_key(&nb) && seen.insert(nb) {
                    members.push(nb);
                    queue.push_back(nb);
                }
            }
        }
        if members.len() < cfg.min_cluster_size {
            continue;
        }
        members.sort();
        let weighted: Vec<(HealpixNode, f64)> = members.iter().map(|n| (*n, live[n])).collect();
        let c = centroid(&weighted, cfg.weighted_centroid)?;
        let mass = weighted.iter().map(|(_, v)| v).sum();
        out.push(Cluster { members, centroid: c, mass });
    }
    Ok(out)
}

/// Normalised mean of pixel-centre unit vectors, optionally value-weighted.
pub fn centroid(members: &[(HealpixNode, f64)], weighted: bool) -> Result<[f64; 3]> {
    if members.is_empty() {
        return Err(Error::Degenerate("centroid of an empty cluster".into()));
    }
    let mut s = [0.0; 3];
    let mut mass = 0.0;
    for (n, v) in members {
        let w = if weighted { *v } else { 1.0 };
        let u = n.center().to_unit();
        for k in 0..3 {
            s[k] += w * u[k];
        }
        mass += w;
    }
    if !(mass > 0.0) {
        return Err(Error::Degenerate("cluster has zero mass".into()));
    }
    let r = norm(s);
    if !(r > 1e-12 * mass) {
        return Err(Error::Degenerate("cluster centroid is undefined".into()));
    }
    Ok([s[0] / r, s[1] / r, s[2] / r])
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::healpix::{pix_containing, uniform_level, QuadTree};
    use crate::sphere::dot;

    fn level_map(level: u8, f: impl Fn(HealpixNode) -> f64) -> SrpdMap {
        SrpdMap::from_leaves(uniform_level(level).map(|n| (n, f(n))), level).unwrap()
    }

    #[test]
    fn threshold_is_mean() {
        let mut t = QuadTree::uniform(0, 0.0);
        t.refine(HealpixNode::new(0, 0).unwrap(), [1.0, 2.0, 3.0, 4.0]).unwrap();
        let leaves: Vec<_> = t.iter().map(|(n, v)| (*n, *v)).filter(|(n, _)| n.level == 1).collect();
        let vals: Vec<f64> = leaves.iter().map(|x| x.1).collect();
        assert_eq!(vals.iter().sum::<f64>() / 4.0, 2.5);
        let m = level_map(1, |_| 3.0);
        assert_eq!(threshold(&m).unwrap(), 3.0);
        // uniform maps keep every leaf under the strict comparison
        assert_eq!(surviving_leaves(&m).unwrap().len(), 48);
    }

    #[test]
    fn single_bright_pixel() {
        let hot = HealpixNode::new(2, 77).unwrap();
        let m = level_map(2, |n| if n == hot { 10.0 } else { 0.1 });
        let c = nnl_label(&m, &NnlConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members, vec![hot]);
        let u = hot.center().to_unit();
        assert!(c[0].centroid.iter().zip(&u).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn two_regions_and_wrap() {
        let a = Direction::new(1.2, 0.5);
        let b = Direction::new(2.0, 3.5);
        let m = level_map(3, |n| {
            let c = n.center();
            if c.angle_to(a) < 0.2 || c.angle_to(b) < 0.2 { 5.0 } else { 0.0 }
        });
        assert_eq!(nnl_label(&m, &NnlConfig::default()).unwrap().len(), 2);
        // band straddling phi = 0
        let band = level_map(3, |n| {
            let c = n.center();
            if (c.theta - 1.5).abs() < 0.15 && (c.phi < 0.4 || c.phi > 2.0 * std::f64::consts::PI - 0.4) { 1.0 } else { 0.0 }
        });
        assert_eq!(nnl_label(&band, &NnlConfig::default()).unwrap().len(), 1);
    }

    #[test]
    fn symmetric_pair_centroid_bisects() {
        let n1 = pix_containing(4, 1.0, 0.3);
        let n2 = HealpixNode { level: 4, index: n1.index };
        let mirror = {
            let c = n1.center();
            pix_containing(4, c.theta, -c.phi)
        };
        let c = centroid(&[(n2, 1.0), (mirror, 1.0)], true).unwrap();
        // mirror plane is y = 0
        assert!(c[1].abs() < 1e-12);
        assert!((norm(c) - 1.0).abs() < 1e-12);
        assert!(centroid(&[(n2, 0.0)], true).is_err());
        assert!(centroid(&[(n2, 0.0)], false).is_ok());
    }

    #[test]
    fn labels_are_scale_invariant_and_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..768).map(|_| rng.random::<f64>().powi(4)).collect();
        let m = level_map(3, |n| vals[n.index as usize]);
        let m2 = level_map(3, |n| 7.5 * vals[n.index as usize]);
        let a = nnl_label(&m, &NnlConfig::default()).unwrap();
        let b = nnl_label(&m2, &NnlConfig::default()).unwrap();
        let sets = |c: &[Cluster]| c.iter().map(|x| x.members.clone()).collect::<Vec<_>>();
        assert_eq!(sets(&a), sets(&b));
        let total: usize = a.iter().map(|c| c.members.len()).sum();
        assert_eq!(total, surviving_leaves(&m).unwrap().len());
        for c in &a {
            assert!((dot(c.centroid, c.centroid) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn only_max_level_leaves_form_clusters() {
        let mut t = QuadTree::uniform(1, 1.0);
        t.refine(HealpixNode::new(1, 5).unwrap(), [9.0, 9.0, 0.0, 0.0]).unwrap();
        let m = SrpdMap::from_leaves(t.iter().map(|(n, v)| (*n, *v)), 2).unwrap();
        let c = nnl_label(&m, &NnlConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members.len(), 2);
        let min2 = NnlConfig { min_cluster_size: 3, ..Default::default() };
        assert!(nnl_label(&m, &min2).unwrap().is_empty());
        let none = SrpdMap::from_leaves(QuadTree::uniform(1, 1.0).iter().map(|(n, v)| (*n, *v)), 3).unwrap();
        assert!(nnl_label(&none, &NnlConfig::default()).unwrap().is_empty());
    }
}
