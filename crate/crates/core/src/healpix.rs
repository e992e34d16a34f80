//! HEALPix pixelisation in the nested scheme, and the quadtree of leaves that
//! the refinement search operates on.
//!
//! Pixel geometry follows the reference construction: 12 base faces, each an
//! `nside x nside` grid of `(ix, iy)` cells, with `nside = 2^level`. Nested
//! indices interleave the bits of `ix` (even bits) and `iy` (odd bits) below
//! the face number, so the children of `(l, m)` are `(l+1, 4m..4m+3)`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{normalize, wrap_azimuth, Direction};

/// Deepest level supported by the 64-bit nested index.
pub const MAX_LEVEL: u8 = 24;

const JRLL: [i64; 12] = [2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4];
const JPLL: [i64; 12] = [1, 3, 5, 7, 0, 2, 4, 6, 1, 3, 5, 7];

// Neighbour offsets in (x, y), ordered SW, W, NW, N, NE, E, SE, S of the face grid.
const NB_XOFFSET: [i64; 8] = [-1, -1, 0, 1, 1, 1, 0, -1];
const NB_YOFFSET: [i64; 8] = [0, 1, 1, 1, 0, -1, -1, -1];
const NB_FACEARRAY: [[i64; 12]; 9] = [
    [8, 9, 10, 11, -1, -1, -1, -1, 10, 11, 8, 9],
    [5, 6, 7, 4, 8, 9, 10, 11, 9, 10, 11, 8],
    [-1, -1, -1, -1, 5, 6, 7, 4, -1, -1, -1, -1],
    [4, 5, 6, 7, 11, 8, 9, 10, 11, 8, 9, 10],
    [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11],
    [1, 2, 3, 0, 0, 1, 2, 3, 5, 6, 7, 4],
    [-1, -1, -1, -1, 7, 4, 5, 6, -1, -1, -1, -1],
    [3, 0, 1, 2, 3, 0, 1, 2, 4, 5, 6, 7],
    [2, 3, 0, 1, -1, -1, -1, -1, 0, 1, 2, 3],
];
const NB_SWAPARRAY: [[u8; 3]; 9] = [
    [0, 0, 3],
    [0, 0, 6],
    [0, 0, 0],
    [0, 0, 5],
    [0, 0, 0],
    [5, 0, 0],
    [0, 0, 0],
    [6, 0, 0],
    [3, 0, 0],
];

/// One pixel of the nested HEALPix grid: resolution level and index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HealpixNode {
    pub level: u8,
    pub index: u64,
}

#[inline]
pub fn nside(level: u8) -> u64 {
    1u64 << level
}

/// Number of pixels at `level`, `12 * 4^level`.
#[inline]
pub fn npix(level: u8) -> u64 {
    12 * nside(level) * nside(level)
}

/// Pixel area in steradians on the unit sphere.
pub fn pix_area(level: u8) -> f64 {
    4.0 * PI / npix(level) as f64
}

/// Angular resolution `sqrt(3/pi) * pi / (3 * 2^level)`, radians.
pub fn angular_resolution(level: u8) -> f64 {
    (3.0 / PI).sqrt() * PI / (3.0 * nside(level) as f64)
}

fn spread_bits(v: u64) -> u64 {
    let mut out = 0;
    for b in 0..32 {
        out |= ((v >> b) & 1) << (2 * b);
    }
    out
}

fn compress_bits(v: u64) -> u64 {
    let mut out = 0;
    for b in 0..32 {
        out |= ((v >> (2 * b)) & 1) << b;
    }
    out
}

impl HealpixNode {
    pub fn new(level: u8, index: u64) -> Result<Self> {
        if level > MAX_LEVEL || index >= npix(level) {
            return Err(Error::PixelOutOfRange { level, index });
        }
        Ok(Self { level, index })
    }

    pub fn area(self) -> f64 {
        pix_area(self.level)
    }

    /// `(ix, iy, face)` coordinates of the pixel.
    pub fn xyf(self) -> (u64, u64, usize) {
        let shift = 2 * self.level as u32;
        let face = (self.index >> shift) as usize;
        let ipf = self.index & ((1u64 << shift) - 1);
        (compress_bits(ipf), compress_bits(ipf >> 1), face)
    }

    pub fn from_xyf(level: u8, ix: u64, iy: u64, face: usize) -> Self {
        let index = ((face as u64) << (2 * level as u32)) | spread_bits(ix) | (spread_bits(iy) << 1);
        Self { level, index }
    }

    pub fn children(self) -> [HealpixNode; 4] {
        let l = self.level + 1;
        let b = 4 * self.index;
        [0, 1, 2, 3].map(|k| HealpixNode { level: l, index: b + k })
    }

    pub fn parent(self) -> Result<HealpixNode> {
        if self.level == 0 {
            return Err(Error::NoParent);
        }
        Ok(HealpixNode { level: self.level - 1, index: self.index / 4 })
    }

    /// Ancestor at a coarser `level` (or self when equal).
    pub fn ancestor_at(self, level: u8) -> Option<HealpixNode> {
        if level > self.level {
            return None;
        }
        let shift = 2 * (self.level - level) as u32;
        Some(HealpixNode { level, index: self.index >> shift })
    }

    pub fn is_ancestor_of(self, other: HealpixNode) -> bool {
        self.level < other.level && other.ancestor_at(self.level) == Some(self)
    }

    pub fn center(self) -> Direction {
        pix_center(self)
    }

    pub fn neighbors(self) -> Vec<HealpixNode> {
        neighbors(self)
    }
}

/// Continuous face coordinates `(x, y)` in `[0,1]^2` to a direction.
pub fn face_point(face: usize, x: f64, y: f64) -> Direction {
    let jr = JRLL[face] as f64 - x - y;
    let (nr, z, sth) = if jr < 1.0 {
        let tmp = jr * jr / 3.0;
        (jr, 1.0 - tmp, (tmp * (2.0 - tmp)).max(0.0).sqrt())
    } else if jr > 3.0 {
        let nr = 4.0 - jr;
        let tmp = nr * nr / 3.0;
        (nr, tmp - 1.0, (tmp * (2.0 - tmp)).max(0.0).sqrt())
    } else {
        let z = (2.0 - jr) * 2.0 / 3.0;
        (1.0, z, ((1.0 - z) * (1.0 + z)).sqrt())
    };
    let tmp = JPLL[face] as f64 * nr + x - y;
    let phi = if nr < 1e-15 { 0.0 } else { PI / 4.0 * tmp / nr };
    Direction { theta: sth.atan2(z), phi: wrap_azimuth(phi) }
}

/// Centre of a pixel.
pub fn pix_center(node: HealpixNode) -> Direction {
    let (ix, iy, face) = node.xyf();
    let ns = nside(node.level) as f64;
    face_point(face, (ix as f64 + 0.5) / ns, (iy as f64 + 0.5) / ns)
}

/// Checked variant of [`pix_center`].
pub fn pix_center_checked(level: u8, index: u64) -> Result<Direction> {
    Ok(pix_center(HealpixNode::new(level, index)?))
}

/// Centres of all descendants of `node` at `depth` levels below it, in nested order.
pub fn descendant_centers(node: HealpixNode, depth: u8) -> Vec<Direction> {
    let (ix, iy, face) = node.xyf();
    let sub = 1u64 << depth;
    let ns = (nside(node.level) * sub) as f64;
    let mut out = Vec::with_capacity((sub * sub) as usize);
    let base = HealpixNode::from_xyf(node.level + depth, ix * sub, iy * sub, face).index;
    for k in 0..sub * sub {
        let (dx, dy) = (compress_bits(k), compress_bits(k >> 1));
        debug_assert_eq!(
            HealpixNode::from_xyf(node.level + depth, ix * sub + dx, iy * sub + dy, face).index,
            base + k
        );
        out.push(face_point(
            face,
            ((ix * sub + dx) as f64 + 0.5) / ns,
            ((iy * sub + dy) as f64 + 0.5) / ns,
        ));
    }
    out
}

/// Pixel containing a point, by the floor construction (no tie handling).
fn raw_containing(level: u8, theta: f64, phi: f64) -> HealpixNode {
    let ns = nside(level);
    let nsf = ns as f64;
    let z = theta.cos();
    let za = z.abs();
    let mut tt = wrap_azimuth(phi) / FRAC_PI_2;
    if tt >= 4.0 {
        tt = 0.0;
    }
    if za <= 2.0 / 3.0 {
        let temp1 = nsf * (0.5 + tt);
        let temp2 = nsf * z * 0.75;
        let jp = (temp1 - temp2).floor() as i64;
        let jm = (temp1 + temp2).floor() as i64;
        let ifp = jp >> level;
        let ifm = jm >> level;
        let face = if ifp == ifm {
            (ifp | 4) as usize
        } else if ifp < ifm {
            ifp as usize
        } else {
            (ifm + 8) as usize
        };
        let mask = ns as i64 - 1;
        let ix = (jm & mask) as u64;
        let iy = (ns as i64 - (jp & mask) - 1) as u64;
        HealpixNode::from_xyf(level, ix, iy, face)
    } else {
        let ntt = (tt.floor() as i64).min(3);
        let tp = tt - ntt as f64;
        // 1 - |z| evaluated without cancellation near the poles
        let one_minus_za = if z >= 0.0 {
            2.0 * (theta / 2.0).sin().powi(2)
        } else {
            2.0 * (theta / 2.0).cos().powi(2)
        };
        let tmp = nsf * (3.0 * one_minus_za).sqrt();
        let jp = ((tp * tmp).floor() as i64).min(ns as i64 - 1).max(0) as u64;
        let jm = (((1.0 - tp) * tmp).floor() as i64).min(ns as i64 - 1).max(0) as u64;
        if z >= 0.0 {
            HealpixNode::from_xyf(level, ns - jm - 1, ns - jp - 1, ntt as usize)
        } else {
            HealpixNode::from_xyf(level, jp, jm, ntt as usize + 8)
        }
    }
}

/// Angular distance under which a point counts as lying on a pixel boundary.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// The level-`level` pixel whose region contains `(theta, phi)`.
///
/// A point within [`BOUNDARY_TOLERANCE`] of a pixel boundary belongs to the
/// lowest-index pixel among those touching it. Poles therefore map to the
/// lowest-index polar-cap pixel.
pub fn pix_containing(level: u8, theta: f64, phi: f64) -> HealpixNode {
    let theta = theta.clamp(0.0, PI);
    let base = raw_containing(level, theta, phi);
    let u = Direction { theta, phi }.to_unit();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let e_theta = [ct * cp, ct * sp, -st];
    let e_phi = [-sp, cp, 0.0];
    let mut best = base;
    for k in 0..8 {
        let a = (k as f64 + 0.5) * PI / 4.0;
        let (sa, ca) = a.sin_cos();
        let v = normalize([
            u[0] + BOUNDARY_TOLERANCE * (ca * e_theta[0] + sa * e_phi[0]),
            u[1] + BOUNDARY_TOLERANCE * (ca * e_theta[1] + sa * e_phi[1]),
            u[2] + BOUNDARY_TOLERANCE * (ca * e_theta[2] + sa * e_phi[2]),
        ]);
        let d = Direction::from_vector(v);
        let cand = raw_containing(level, d.theta, d.phi);
        if cand.index < best.index {
            best = cand;
        }
    }
    best
}

/// Edge- and corner-adjacent pixels at the same level, sorted by index.
/// Seven or eight entries except at level 0, where faces share several corners.
pub fn neighbors(node: HealpixNode) -> Vec<HealpixNode> {
    let (ix, iy, face) = node.xyf();
    let ns = nside(node.level) as i64;
    let (ix, iy) = (ix as i64, iy as i64);
    let mut out = Vec::with_capacity(8);
    for i in 0..8 {
        let mut x = ix + NB_XOFFSET[i];
        let mut y = iy + NB_YOFFSET[i];
        let mut nbnum = 4i64;
        if x < 0 {
            x += ns;
            nbnum -= 1;
        } else if x >= ns {
            x -= ns;
            nbnum += 1;
        }
        if y < 0 {
            y += ns;
            nbnum -= 3;
        } else if y >= ns {
            y -= ns;
            nbnum += 3;
        }
        let f = NB_FACEARRAY[nbnum as usize][face];
        if f < 0 {
            continue;
        }
        let bits = NB_SWAPARRAY[nbnum as usize][face >> 2];
        if bits & 1 != 0 {
            x = ns - x - 1;
        }
        if bits & 2 != 0 {
            y = ns - y - 1;
        }
        if bits & 4 != 0 {
            std::mem::swap(&mut x, &mut y);
        }
        let nb = HealpixNode::from_xyf(node.level, x as u64, y as u64, f as usize);
        if nb != node {
            out.push(nb);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// All pixels of a uniform level, in index order.
pub fn uniform_level(level: u8) -> impl Iterator<Item = HealpixNode> {
    (0..npix(level)).map(move |index| HealpixNode { level, index })
}

/// A quadtree over the 12 base pixels, represented by its leaves and a
/// per-leaf payload.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadTree<T> {
    leaves: BTreeMap<HealpixNode, T>,
}

impl<T: Clone> QuadTree<T> {
    /// Uniform tree with every leaf at `level`.
    pub fn uniform(level: u8, value: T) -> Self {
        Self { leaves: uniform_level(level).map(|n| (n, value.clone())).collect() }
    }
}

impl<T> QuadTree<T> {
    pub fn from_leaves(leaves: impl IntoIterator<Item = (HealpixNode, T)>) -> Result<Self> {
        let tree = Self { leaves: leaves.into_iter().collect() };
        tree.check_tiling()?;
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn get(&self, node: &HealpixNode) -> Option<&T> {
        self.leaves.get(node)
    }

    pub fn contains(&self, node: &HealpixNode) -> bool {
        self.leaves.contains_key(node)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&HealpixNode, &T)> {
        self.leaves.iter()
    }

    pub fn into_leaves(self) -> BTreeMap<HealpixNode, T> {
        self.leaves
    }

    /// Replace `leaf` by its four children. Returns the removed payload.
    pub fn refine(&mut self, leaf: HealpixNode, children: [T; 4]) -> Result<T> {
        let old = self
            .leaves
            .remove(&leaf)
            .ok_or_else(|| Error::Domain(format!("{leaf:?} is not a leaf")))?;
        for (c, v) in leaf.children().into_iter().zip(children) {
            self.leaves.insert(c, v);
        }
        Ok(old)
    }

    pub fn max_level(&self) -> u8 {
        self.leaves.keys().map(|n| n.level).max().unwrap_or(0)
    }

    /// Leaves must be disjoint (no leaf is an ancestor of another) and cover
    /// the sphere (total area `4 pi`).
    pub fn check_tiling(&self) -> Result<()> {
        let area: f64 = self.leaves.keys().map(|n| n.area()).sum();
        if (area - 4.0 * PI).abs() > 1e-12 {
            return Err(Error::Domain(format!("leaves cover {area} sr, not 4 pi")));
        }
        for n in self.leaves.keys() {
            let mut p = *n;
            while let Ok(up) = p.parent() {
                if self.leaves.contains_key(&up) {
                    return Err(Error::Domain(format!("{up:?} is an ancestor of leaf {n:?}")));
                }
                p = up;
            }
        }
        Ok(())
    }
}
