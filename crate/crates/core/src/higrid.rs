//! Entropy-guided hierarchical grid refinement.
//!
//! Starting from a uniform coarse grid, each frontier pixel is split into its
//! four children when doing so lowers the total spatial entropy
//! `H = -sum gamma_i log(gamma_i / A_i)`, `gamma_i = P_i / sum_j P_j`, of the
//! whole leaf partition.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::healpix::{uniform_level, HealpixNode, QuadTree};
use crate::sph::ShdFrame;
use crate::srpd::{srpd_eval, steering_vector, CdCache, SteeringVector};

/// Parameters of one refinement run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementPolicy {
    pub max_level: u8,
    /// Level of the initial uniform grid.
    pub start_level: u8,
    pub seed: u64,
    pub scope: EntropyScope,
}

/// Which leaves enter the entropy that decides a refinement.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyScope {
    /// The whole current partition of the sphere.
    Grid,
    /// The frontier pixels of the current level not yet visited.
    #[default]
    Frontier,
}

impl Default for RefinementPolicy {
    fn default() -> Self {
        Self { max_level: 3, start_level: 0, seed: 0, scope: EntropyScope::default() }
    }
}

impl RefinementPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_level < 1 || self.start_level >= self.max_level {
            return Err(Error::Config(format!(
                "need 0 <= start_level < max_level and max_level >= 1, got start {} max {}",
                self.start_level, self.max_level
            )));
        }
        Ok(())
    }
}

/// Multiresolution SRPD map of one time-frequency bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrpdMap {
    /// `(frame, frequency bin)` when the map comes from a recording.
    pub bin: Option<(usize, usize)>,
    pub max_level: u8,
    /// Number of SRPD evaluations spent building the map.
    pub evaluations: u64,
    /// Leaf count after each refinement level `start_level+1..=max_level`.
    pub level_leaf_counts: Vec<usize>,
    /// Set when the frame carried no energy and no refinement was done.
    pub silent: bool,
    pub leaves: Vec<MapLeaf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapLeaf {
    pub level: u8,
    pub index: u64,
    pub value: f64,
}

impl MapLeaf {
    pub fn node(&self) -> HealpixNode {
        HealpixNode { level: self.level, index: self.index }
    }
}

impl SrpdMap {
    /// Map over an explicit tiling; leaves are stored sorted by node.
    pub fn from_leaves(leaves: impl IntoIterator<Item = (HealpixNode, f64)>, max_level: u8) -> Result<Self> {
        let tree = QuadTree::from_leaves(leaves)?;
        tree.check_tiling()?;
        Ok(Self::from_tree(&tree, max_level))
    }

    fn from_tree(tree: &QuadTree<f64>, max_level: u8) -> Self {
        Self {
            bin: None,
            max_level,
            evaluations: 0,
            level_leaf_counts: Vec::new(),
            silent: false,
            leaves: tree.iter().map(|(n, v)| MapLeaf { level: n.level, index: n.index, value: *v }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (HealpixNode, f64)> + '_ {
        self.leaves.iter().map(|l| (l.node(), l.value))
    }

    pub fn value(&self, node: HealpixNode) -> Option<f64> {
        self.leaves.binary_search_by(|l| l.node().cmp(&node)).ok().map(|i| self.leaves[i].value)
    }

    /// Number of leaves at each level present in the map.
    pub fn level_histogram(&self) -> BTreeMap<u8, usize> {
        let mut h = BTreeMap::new();
        for l in &self.leaves {
            *h.entry(l.level).or_insert(0) += 1;
        }
        h
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        QuadTree::from_leaves(m.iter())?.check_tiling()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Total spatial entropy of a set of `(area, value)` leaves.
pub fn spatial_entropy<'a>(leaves: impl IntoIterator<Item = (&'a HealpixNode, &'a f64)>) -> Result<f64> {
    let mut acc = EntropyAccumulator::default();
    for (n, v) in leaves {
        acc.add(n.area(), *v)?;
    }
    acc.entropy()
}

/// Information gain of replacing `leaf` by its children with the given values,
/// computed by two full entropy evaluations.
pub fn info_gain(leaves: &QuadTree<f64>, leaf: HealpixNode, child_values: [f64; 4]) -> Result<f64> {
    let before = spatial_entropy(leaves.iter())?;
    let mut after = leaves.clone();
    after.refine(leaf, child_values)?;
    Ok(before - spatial_entropy(after.iter())?)
}

/// Running sums `T = sum P` and `G = sum P log(P / A)`, giving
/// `H = log T - G / T`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EntropyAccumulator {
    pub total: f64,
    pub weighted_log: f64,
}

fn plogp(value: f64, area: f64) -> f64 {
    if value > 0.0 {
        value * (value / area).ln()
    } else {
        0.0
    }
}

impl EntropyAccumulator {
    pub fn add(&mut self, area: f64, value: f64) -> Result<()> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::Domain(format!("SRPD value must be finite and non-negative, got {value}")));
        }
        self.total += value;
        self.weighted_log += plogp(value, area);
        Ok(())
    }

    pub fn entropy(&self) -> Result<f64> {
        if !(self.total > 0.0) {
            return Err(Error::Degenerate("spatial entropy of an all-zero map".into()));
        }
        Ok(self.total.ln() - self.weighted_log / self.total)
    }

    /// Sums after refining a leaf of `area` and `value` into four children.
    pub fn refined(&self, area: f64, value: f64, children: [f64; 4]) -> Self {
        let ca = area / 4.0;
        Self {
            total: self.total - value + children.iter().sum::<f64>(),
            weighted_log: self.weighted_log - plogp(value, area)
                + children.iter().map(|&c| plogp(c, ca)).sum::<f64>(),
        }
    }

    /// Information gain `H(before) - H(after)` of a refinement, incrementally.
    pub fn gain(&self, area: f64, value: f64, children: [f64; 4]) -> Result<f64> {
        Ok(self.entropy()? - self.refined(area, value, children).entropy()?)
    }

    /// Sums with one leaf taken out.
    pub fn removed(&self, area: f64, value: f64) -> Self {
        Self { total: self.total - value, weighted_log: self.weighted_log - plogp(value, area) }
    }
}

/// Run the refinement for one SHD frame.
pub fn higrid_run(frame: &ShdFrame, r_a: f64, cache: &CdCache, policy: &RefinementPolicy) -> Result<SrpdMap> {
    let sv = steering_vector(frame, r_a)?;
    higrid_run_sv(&sv, cache, policy)
}

/// Run the refinement for a precomputed steering vector.
pub fn higrid_run_sv(sv: &SteeringVector, cache: &CdCache, policy: &RefinementPolicy) -> Result<SrpdMap> {
    policy.validate()?;
    if cache.max_level < policy.max_level {
        return Err(Error::Config(format!(
            "cache covers levels up to {} but refinement needs {}",
            cache.max_level, policy.max_level
        )));
    }
    if sv.order != cache.order {
        return Err(Error::SizeMismatch { what: "steering vector order", expected: cache.order, actual: sv.order });
    }
    if sv.coeffs.iter().all(|c| c.norm_sqr() == 0.0) {
        let mut map = SrpdMap::from_tree(&QuadTree::uniform(1, 0.0), policy.max_level);
        map.silent = true;
        return Ok(map);
    }
    let eval = |n: HealpixNode| -> Result<f64> { Ok(srpd_eval(sv, cache.entry(n)?)?.max(0.0)) };

    let mut evaluations = 0u64;
    let mut leaves = Vec::new();
    for n in uniform_level(policy.start_level) {
        leaves.push((n, eval(n)?));
        evaluations += 1;
    }
    let mut acc = EntropyAccumulator::default();
    for (n, v) in &leaves {
        acc.add(n.area(), *v)?;
    }
    let mut frontier: Vec<(HealpixNode, f64)> = leaves.clone();
    let mut tree = QuadTree::from_leaves(leaves)?;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut level_leaf_counts = Vec::new();

    for _level in policy.start_level + 1..=policy.max_level {
        frontier.shuffle(&mut rng);
        let mut pending = EntropyAccumulator::default();
        for (n, v) in &frontier {
            pending.add(n.area(), *v)?;
        }
        let mut next = Vec::new();
        for (node, value) in frontier.drain(..) {
            let ch = node.children();
            let mut vals = [0.0; 4];
            for (v, c) in vals.iter_mut().zip(&ch) {
                *v = eval(*c)?;
            }
            evaluations += 4;
            let base = match policy.scope {
                EntropyScope::Grid => acc,
                EntropyScope::Frontier => pending,
            };
            let after = base.refined(node.area(), value, vals);
            let accept = base.total > 0.0 && after.total > 0.0 && after.entropy()? < base.entropy()?;
            if accept {
                tree.refine(node, vals)?;
                acc = acc.refined(node.area(), value, vals);
                next.extend(ch.into_iter().zip(vals));
            }
            pending = pending.removed(node.area(), value);
        }
        debug_assert!(tree.check_tiling().is_ok());
        level_leaf_counts.push(tree.len());
        frontier = next;
    }

    let mut map = SrpdMap::from_tree(&tree, policy.max_level);
    map.evaluations = evaluations;
    map.level_leaf_counts = level_leaf_counts;
    Ok(map)
}

/// SRPD of every pixel at one level (the exhaustive baseline).
pub fn uniform_map(sv: &SteeringVector, cache: &CdCache, level: u8) -> Result<SrpdMap> {
    let mut leaves = Vec::new();
    for n in uniform_level(level) {
        leaves.push((n, srpd_eval(sv, cache.entry(n)?)?.max(0.0)));
    }
    let mut map = SrpdMap::from_tree(&QuadTree::from_leaves(leaves)?, level);
    map.evaluations = map.leaves.len() as u64;
    Ok(map)
}
