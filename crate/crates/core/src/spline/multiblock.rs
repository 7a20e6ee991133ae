//! Conforming multi-block volumes and the global DOF map.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::spline::volume::BSplineVolume;

/// Absolute tolerance for coincident interface control points.
pub const MERGE_TOL: f64 = 1e-9;

/// Face `b` of one block glued to face `a` of another.
///
/// `orientation` maps in-plane indices of face `a` to face `b`: bit 0 swaps the
/// two in-plane axes, bit 1 reverses `b`'s first axis, bit 2 its second axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interface {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub orientation: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiBlockVolume {
    blocks: Vec<BSplineVolume>,
    interfaces: Vec<Interface>,
    dof_map: Vec<Vec<usize>>,
    num_dofs: usize,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Index on face `b` matching in-plane index `(s, t)` on face `a`.
fn map_face_index(s: usize, t: usize, orientation: u8, dims_b: [usize; 2]) -> (usize, usize) {
    let (mut f, mut g) = if orientation & 1 == 1 { (t, s) } else { (s, t) };
    if orientation & 2 != 0 {
        f = dims_b[0] - 1 - f;
    }
    if orientation & 4 != 0 {
        g = dims_b[1] - 1 - g;
    }
    (f, g)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn knots_match(a: &[f64], b: &[f64], reversed: bool) -> bool {
    a.len() == b.len()
        && a.iter().enumerate().all(|(i, &x)| {
            let y = if reversed { 1.0 - b[b.len() - 1 - i] } else { b[i] };
            (x - y).abs() <= 1e-12
        })
}

/// Checks one interface and returns the matched pairs of local indices.
fn match_interface(blocks: &[BSplineVolume], it: &Interface) -> Result<Vec<(usize, usize)>> {
    let (ba, fa) = it.a;
    let (bb, fb) = it.b;
    for &(blk, face) in &[it.a, it.b] {
        if blk >= blocks.len() || face >= 6 {
            return Err(Error::Domain(format!("interface refers to missing block face ({blk}, {face})")));
        }
    }
    if it.orientation > 7 {
        return Err(Error::Domain(format!("interface orientation {} out of range 0..=7", it.orientation)));
    }
    let (ia, da) = blocks[ba].face_indices(fa);
    let (ib, db) = blocks[bb].face_indices(fb);
    let swap = it.orientation & 1 == 1;
    let expect_b = if swap { [da[1], da[0]] } else { da };
    if expect_b != db {
        return Err(Error::Domain(format!(
            "interface ({ba},{fa})-({bb},{fb}) is non-conforming: face grids {da:?} and {db:?}"
        )));
    }
    let ka = blocks[ba].face_knots(fa);
    let kb = blocks[bb].face_knots(fb);
    let (kb0, kb1) = if swap { (kb[1], kb[0]) } else { (kb[0], kb[1]) };
    let (rev0, rev1) = if swap {
        (it.orientation & 4 != 0, it.orientation & 2 != 0)
    } else {
        (it.orientation & 2 != 0, it.orientation & 4 != 0)
    };
    if ka[0].degree() != kb0.degree()
        || ka[1].degree() != kb1.degree()
        || !knots_match(ka[0].knots(), kb0.knots(), rev0)
        || !knots_match(ka[1].knots(), kb1.knots(), rev1)
    {
        return Err(Error::Domain(format!(
            "interface ({ba},{fa})-({bb},{fb}) is non-conforming: knot vectors differ"
        )));
    }
    let pa = blocks[ba].control();
    let pb = blocks[bb].control();
    let mut pairs = Vec::with_capacity(ia.len());
    for t in 0..da[1] {
        for s in 0..da[0] {
            let (f, g) = map_face_index(s, t, it.orientation, db);
            let la = ia[s + da[0] * t];
            let lb = ib[f + db[0] * g];
            let d = dist(pa[la], pb[lb]);
            if d > MERGE_TOL {
                return Err(Error::Domain(format!(
                    "interface ({ba},{fa})-({bb},{fb}) is non-conforming: control points differ by {d:.3e}"
                )));
            }
            pairs.push((la, lb));
        }
    }
    Ok(pairs)
}

impl MultiBlockVolume {
    pub fn new(blocks: Vec<BSplineVolume>, interfaces: Vec<Interface>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Domain("a model needs at least one block".into()));
        }
        let d0 = blocks[0].degrees();
        for (b, blk) in blocks.iter().enumerate() {
            if blk.degrees() != d0 {
                return Err(Error::Domain(format!(
                    "block {b} has degrees {:?}, expected {d0:?} like block 0",
                    blk.degrees()
                )));
            }
        }
        let offsets: Vec<usize> = blocks
            .iter()
            .scan(0, |acc, b| {
                let o = *acc;
                *acc += b.num_control();
                Some(o)
            })
            .collect();
        let total: usize = blocks.iter().map(|b| b.num_control()).sum();
        let mut uf = UnionFind::new(total);
        let mut seen = BTreeSet::new();
        for it in &interfaces {
            if it.a == it.b {
                return Err(Error::Domain(format!("interface glues face {:?} to itself", it.a)));
            }
            for f in [it.a, it.b] {
                if !seen.insert(f) {
                    return Err(Error::Domain(format!("face {f:?} appears in more than one interface")));
                }
            }
            for (la, lb) in match_interface(&blocks, it)? {
                uf.union(offsets[it.a.0] + la, offsets[it.b.0] + lb);
            }
        }
        let mut global = vec![usize::MAX; total];
        let mut num_dofs = 0;
        for g in 0..total {
            let r = uf.find(g);
            if global[r] == usize::MAX {
                global[r] = num_dofs;
                num_dofs += 1;
            }
            global[g] = global[r];
        }
        let dof_map = blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| global[offsets[b]..offsets[b] + blk.num_control()].to_vec())
            .collect();
        Ok(MultiBlockVolume { blocks, interfaces, dof_map, num_dofs })
    }

    /// Glues every pair of faces whose control grids coincide.
    pub fn with_detected_interfaces(blocks: Vec<BSplineVolume>) -> Result<Self> {
        let interfaces = detect_interfaces(&blocks);
        Self::new(blocks, interfaces)
    }

    pub fn single(block: BSplineVolume) -> Self {
        Self::new(vec![block], Vec::new()).expect("a single block is always valid")
    }

    pub fn blocks(&self) -> &[BSplineVolume] {
        &self.blocks
    }

    pub fn interfaces(&self) -> &[Interface] {
        &self.interfaces
    }

    pub fn degrees(&self) -> [usize; 3] {
        self.blocks[0].degrees()
    }

    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    pub fn dof_map(&self) -> &[Vec<usize>] {
        &self.dof_map
    }

    pub fn global_index(&self, block: usize, local: usize) -> usize {
        self.dof_map[block][local]
    }

    pub fn num_elements(&self) -> usize {
        self.blocks.iter().map(|b| b.num_elements().iter().product::<usize>()).sum()
    }

    /// Faces not glued to another block, as `(block, face)`.
    pub fn exterior_faces(&self) -> Vec<(usize, usize)> {
        let glued: BTreeSet<(usize, usize)> = self.interfaces.iter().flat_map(|i| [i.a, i.b]).collect();
        (0..self.blocks.len())
            .flat_map(|b| (0..6).map(move |f| (b, f)))
            .filter(|f| !glued.contains(f))
            .collect()
    }

    pub fn is_exterior(&self, face: (usize, usize)) -> bool {
        face.0 < self.blocks.len() && face.1 < 6 && self.exterior_faces().contains(&face)
    }

    /// Refines every block; the interfaces stay conforming.
    pub fn h_refine(&self, levels: usize) -> Result<MultiBlockVolume> {
        let blocks = self.blocks.iter().map(|b| b.h_refine(levels)).collect::<Result<Vec<_>>>()?;
        Self::new(blocks, self.interfaces.clone())
    }

    /// Same structure, new control points (one list per block).
    pub fn with_control(&self, control: Vec<Vec<[f64; 3]>>) -> Result<MultiBlockVolume> {
        if control.len() != self.blocks.len() {
            return Err(Error::Domain("control point lists do not match the block count".into()));
        }
        let blocks = self
            .blocks
            .iter()
            .zip(control)
            .map(|(b, c)| BSplineVolume::new(b.knots().clone(), c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks, self.interfaces.clone())
    }

    /// Applies `f` to every control point.
    pub fn map_control(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<MultiBlockVolume> {
        self.with_control(self.blocks.iter().map(|b| b.control().iter().map(|&p| f(p)).collect()).collect())
    }
}

/// Finds all coincident face pairs and their orientation codes.
pub fn detect_interfaces(blocks: &[BSplineVolume]) -> Vec<Interface> {
    let mut out = Vec::new();
    let mut used = BTreeSet::new();
    for ba in 0..blocks.len() {
        for fa in 0..6 {
            if used.contains(&(ba, fa)) {
                continue;
            }
            'search: for bb in ba + 1..blocks.len() {
                for fb in 0..6 {
                    if used.contains(&(bb, fb)) {
                        continue;
                    }
                    for o in 0..8u8 {
                        let it = Interface { a: (ba, fa), b: (bb, fb), orientation: o };
                        if match_interface(blocks, &it).is_ok() {
                            used.insert((ba, fa));
                            used.insert((bb, fb));
                            out.push(it);
                            break 'search;
                        }
                    }
                }
            }
        }
    }
    out
}
