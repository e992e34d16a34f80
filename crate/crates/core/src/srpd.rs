//! Steered response power density over HEALPix pixels.
//!
//! For a pixel `S_i` of area `A_i` the cross spatial density matrix is
//! `Q_ab = (1/A_i) \int_{S_i} Y_a conj(Y_b) dS`, and the density of a frame with
//! steering vector `c_a = p_nm / (4 pi i^n b_n)` is
//! `P_i = sum_ab c_a conj(c_b) Q_ab = (1/A_i) \int_{S_i} |y_N|^2 dS`.
//! It is evaluated through the eigendecomposition of `Q^T = conj(Q)`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::healpix::{descendant_centers, npix, HealpixNode};
use crate::sph::legendre::{sh_count, sh_vector_into};
use crate::sph::{pwd_weights, ShdFrame, MAX_ORDER};

/// Default energy-ratio threshold for eigen truncation.
pub const DEFAULT_THRESHOLD: f64 = 0.99;
/// Default quadrature depth below the deepest cached level.
pub const DEFAULT_SUB_DEPTH: u8 = 4;

/// Cross spatial density matrix of one pixel with its eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossDensity {
    pub node: HealpixNode,
    pub order: usize,
    /// Row-major `dim x dim`, `q[a * dim + b] = Q_ab`.
    pub q: Vec<Complex64>,
    /// Eigenvalues of `Q^T`, descending.
    pub eigvals: Vec<f64>,
    /// Eigenvectors of `Q^T`, column `j` stored at `[j * dim, (j + 1) * dim)`.
    pub eigvecs: Vec<Complex64>,
    /// Number of retained components.
    pub m: usize,
    pub threshold: f64,
}

impl CrossDensity {
    pub fn dim(&self) -> usize {
        sh_count(self.order)
    }

    /// Build from a Hermitian matrix, decomposing and truncating.
    pub fn from_matrix(node: HealpixNode, order: usize, q: Vec<Complex64>, threshold: f64) -> Result<Self> {
        let dim = sh_count(order);
        if q.len() != dim * dim {
            return Err(Error::SizeMismatch { what: "cross density", expected: dim * dim, actual: q.len() });
        }
        check_threshold(threshold)?;
        let mat = DMatrix::<Complex64>::from_fn(dim, dim, |r, c| q[r * dim + c].conj());
        let eig = mat.symmetric_eigen();
        let mut order_idx: Vec<usize> = (0..dim).collect();
        order_idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigvals: Vec<f64> = order_idx.iter().map(|&j| eig.eigenvalues[j]).collect();
        let mut eigvecs = Vec::with_capacity(dim * dim);
        for &j in &order_idx {
            eigvecs.extend(eig.eigenvectors.column(j).iter().copied());
        }
        let m = retained_count(&eigvals, threshold);
        Ok(Self { node, order, q, eigvals, eigvecs, m, threshold })
    }

    /// Energy ratio `L_M = sum_{j<M} lambda_j^2 / sum lambda_j^2`.
    pub fn energy_ratio(&self, m: usize) -> f64 {
        energy_ratio(&self.eigvals, m)
    }

    /// Same decomposition truncated at another threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        let mut out = self.clone();
        out.threshold = threshold;
        out.m = retained_count(&self.eigvals, threshold);
        Ok(out)
    }

    fn column(&self, j: usize) -> &[Complex64] {
        let dim = self.dim();
        &self.eigvecs[j * dim..(j + 1) * dim]
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Config(format!("energy-ratio threshold must lie in (0, 1], got {t}")));
    }
    Ok(())
}

fn energy_ratio(eigvals: &[f64], m: usize) -> f64 {
    let total: f64 = eigvals.iter().map(|l| l * l).sum();
    if total == 0.0 {
        return 1.0;
    }
    eigvals[..m.min(eigvals.len())].iter().map(|l| l * l).sum::<f64>() / total
}

/// Smallest `M >= 1` whose energy ratio reaches `threshold`.
fn retained_count(eigvals: &[f64], threshold: f64) -> usize {
    let total: f64 = eigvals.iter().map(|l| l * l).sum();
    let mut acc = 0.0;
    for (j, l) in eigvals.iter().enumerate() {
        acc += l * l;
        // tiny slack so threshold 1.0 does not depend on summation order
        if acc >= threshold * total * (1.0 - 1e-14) {
            return j + 1;
        }
    }
    eigvals.len()
}

/// Quadrature of `mean Y_a conj(Y_b)` over a set of equal-area sample points.
fn gram_mean(order: usize, node: HealpixNode, depth: u8) -> Vec<Complex64> {
    let dim = sh_count(order);
    let pts = descendant_centers(node, depth);
    let mut q = vec![Complex64::new(0.0, 0.0); dim * dim];
    let mut y = vec![Complex64::new(0.0, 0.0); dim];
    for d in &pts {
        sh_vector_into(order, d.theta, d.phi, &mut y);
        for a in 0..dim {
            let ya = y[a];
            for b in a..dim {
                q[a * dim + b] += ya * y[b].conj();
            }
        }
    }
    let inv = 1.0 / pts.len() as f64;
    for a in 0..dim {
        for b in a..dim {
            let v = q[a * dim + b] * inv;
            q[a * dim + b] = v;
            q[b * dim + a] = v.conj();
        }
        q[a * dim + a].im = 0.0;
    }
    q
}

/// Cross density of one pixel by equal-weight quadrature over its
/// `4^sub_depth` descendant centres at level `level + sub_depth`.
pub fn cross_density(node: HealpixNode, order: usize, sub_depth: u8) -> Result<CrossDensity> {
    cross_density_with(node, order, sub_depth, DEFAULT_THRESHOLD)
}

pub fn cross_density_with(node: HealpixNode, order: usize, sub_depth: u8, threshold: f64) -> Result<CrossDensity> {
    check_order(order)?;
    if sub_depth < 2 {
        return Err(Error::Config(format!("sub_depth must be at least 2, got {sub_depth}")));
    }
    CrossDensity::from_matrix(node, order, gram_mean(order, node, sub_depth), threshold)
}

fn check_order(order: usize) -> Result<()> {
    if order > MAX_ORDER {
        return Err(Error::Config(format!("order {order} exceeds the supported maximum {MAX_ORDER}")));
    }
    Ok(())
}

/// Steering vector `p_nm / (4 pi i^n b_n(k r_a))` of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub coeffs: Vec<Complex64>,
    pub order: usize,
}

impl SteeringVector {
    /// Squared norm, equal to `\int |y_N|^2 dOmega`.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

pub fn steering_vector(frame: &ShdFrame, r_a: f64) -> Result<SteeringVector> {
    Ok(SteeringVector { coeffs: pwd_weights(frame, r_a)?, order: frame.order })
}

/// SRPD `sum_{j<M} lambda_j |v_j^H c|^2` with the retained components.
pub fn srpd_eval(sv: &SteeringVector, cd: &CrossDensity) -> Result<f64> {
    srpd_eval_rank(sv, cd, cd.m)
}

/// SRPD using the leading `rank` components (clamped to the dimension).
pub fn srpd_eval_rank(sv: &SteeringVector, cd: &CrossDensity, rank: usize) -> Result<f64> {
    let dim = cd.dim();
    if sv.coeffs.len() != dim {
        return Err(Error::SizeMismatch { what: "steering vector", expected: dim, actual: sv.coeffs.len() });
    }
    let mut total = 0.0;
    for j in 0..rank.min(dim) {
        let proj: Complex64 = cd.column(j).iter().zip(&sv.coeffs).map(|(v, c)| v.conj() * c).sum();
        total += cd.eigvals[j] * proj.norm_sqr();
    }
    Ok(total)
}

/// Table of cross densities for every pixel of levels `0..=max_level`.
///
/// Every entry integrates over the same absolute sample level
/// `max_level + sub_depth`, so a parent matrix is exactly the mean of its
/// children.
#[derive(Debug, Clone, PartialEq)]
pub struct CdCache {
    pub order: usize,
    pub max_level: u8,
    pub sub_depth: u8,
    pub threshold: f64,
    levels: Vec<Vec<CrossDensity>>,
}

const CACHE_MAGIC: &[u8; 8] = b"HGRIDCD\0";
const CACHE_VERSION: u32 = 1;

impl CdCache {
    pub fn build(max_level: u8, order: usize, sub_depth: u8, threshold: f64) -> Result<Self> {
        check_order(order)?;
        check_threshold(threshold)?;
        if max_level > 6 {
            return Err(Error::Config(format!("cache level {max_level} exceeds 6")));
        }
        if sub_depth < 2 {
            return Err(Error::Config(format!("sub_depth must be at least 2, got {sub_depth}")));
        }
        let dim = sh_count(order);
        let mut mats: Vec<Vec<Vec<Complex64>>> = vec![Vec::new(); max_level as usize + 1];
        mats[max_level as usize] = (0..npix(max_level))
            .into_par_iter()
            .map(|i| gram_mean(order, HealpixNode { level: max_level, index: i }, sub_depth))
            .collect();
        for level in (0..max_level as usize).rev() {
            let finer = &mats[level + 1];
            let coarse: Vec<Vec<Complex64>> = (0..npix(level as u8) as usize)
                .into_par_iter()
                .map(|i| {
                    let mut q = vec![Complex64::new(0.0, 0.0); dim * dim];
                    for c in &finer[4 * i..4 * i + 4] {
                        for (a, b) in q.iter_mut().zip(c) {
                            *a += b;
                        }
                    }
                    q.iter_mut().for_each(|v| *v *= 0.25);
                    q
                })
                .collect();
            mats[level] = coarse;
        }
        let levels = mats
            .into_iter()
            .enumerate()
            .map(|(level, qs)| {
                qs.into_par_iter()
                    .enumerate()
                    .map(|(i, q)| {
                        CrossDensity::from_matrix(HealpixNode { level: level as u8, index: i as u64 }, order, q, threshold)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { order, max_level, sub_depth, threshold, levels })
    }

    pub fn get(&self, node: HealpixNode) -> Option<&CrossDensity> {
        self.levels.get(node.level as usize)?.get(node.index as usize)
    }

    pub fn entry(&self, node: HealpixNode) -> Result<&CrossDensity> {
        self.get(node).ok_or(Error::PixelOutOfRange { level: node.level, index: node.index })
    }

    pub fn level(&self, level: u8) -> &[CrossDensity] {
        self.levels.get(level as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &CrossDensity> {
        self.levels.iter().flatten()
    }

    /// Canonical little-endian serialization.
    ///
    /// Layout: magic `HGRIDCD\0`, u32 version, u32 order, u8 max_level,
    /// u8 sub_depth, f64 threshold, u64 entry count; then per entry u8 level,
    /// u64 index, u32 M, `dim` f64 eigenvalues, `dim*dim` eigenvector entries
    /// and `dim*dim` matrix entries, each complex as (re, im) f64 pairs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = sh_count(self.order);
        let mut out = Vec::with_capacity(32 + self.len() * (17 + dim * 8 + dim * dim * 32));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.order as u32).to_le_bytes());
        out.push(self.max_level);
        out.push(self.sub_depth);
        out.extend_from_slice(&self.threshold.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for cd in self.iter() {
            out.push(cd.node.level);
            out.extend_from_slice(&cd.node.index.to_le_bytes());
            out.extend_from_slice(&(cd.m as u32).to_le_bytes());
            for l in &cd.eigvals {
                out.extend_from_slice(&l.to_le_bytes());
            }
            for z in cd.eigvecs.iter().chain(&cd.q) {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != CACHE_MAGIC {
            return Err(Error::CacheFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::CacheFormat(format!("unsupported version {version}")));
        }
        let order = r.u32()? as usize;
        check_order(order).map_err(|e| Error::CacheFormat(e.to_string()))?;
        let max_level = r.u8()?;
        let sub_depth = r.u8()?;
        let threshold = r.f64()?;
        let count = r.u64()?;
        let expected: u64 = (0..=max_level).map(npix).sum();
        if max_level > 6 || count != expected {
            return Err(Error::CacheFormat(format!("entry count {count} does not match level {max_level}")));
        }
        let dim = sh_count(order);
        let mut levels: Vec<Vec<CrossDensity>> = vec![Vec::new(); max_level as usize + 1];
        for _ in 0..count {
            let level = r.u8()?;
            let index = r.u64()?;
            let m = r.u32()? as usize;
            let slot = levels
                .get_mut(level as usize)
                .ok_or_else(|| Error::CacheFormat(format!("entry level {level} out of range")))?;
            if index != slot.len() as u64 || m == 0 || m > dim {
                return Err(Error::CacheFormat(format!("entry ({level}, {index}) out of order or invalid")));
            }
            let eigvals = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let eigvecs = (0..dim * dim).map(|_| r.c64()).collect::<Result<Vec<_>>>()?;
            let q = (0..dim * dim).map(|_| r.c64()).collect::<Result<Vec<_>>>()?;
            slot.push(CrossDensity { node: HealpixNode { level, index }, order, q, eigvals, eigvecs, m, threshold });
        }
        if r.pos != bytes.len() {
            return Err(Error::CacheFormat("trailing bytes".into()));
        }
        Ok(Self { order, max_level, sub_depth, threshold, levels })
    }

    /// Write atomically through a temporary file in the same directory.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::audio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Load a compatible cache (same order and quadrature, at least `max_level`)
    /// from `path`, or build one and store it there.
    pub fn load_or_build(path: impl AsRef<Path>, max_level: u8, order: usize, sub_depth: u8, threshold: f64) -> Result<Self> {
        let path = path.as_ref();
        if let Ok(c) = Self::load(path) {
            if c.max_level >= max_level && c.order == order && c.sub_depth == sub_depth && c.threshold == threshold {
                return Ok(c);
            }
        }
        let c = Self::build(max_level, order, sub_depth, threshold)?;
        c.save(path)?;
        Ok(c)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::CacheFormat("truncated file".into()));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn c64(&mut self) -> Result<Complex64> {
        Ok(Complex64::new(self.f64()?, self.f64()?))
    }
}
