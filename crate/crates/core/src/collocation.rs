//! Dirichlet data by collocation at boundary Greville points.
//!
//! One site per boundary control variable makes the collocation matrix square.
//! Its sparsity graph is block triangular (corner sites only see corner
//! functions, edge sites only edge functions), so it is factored per strongly
//! connected component with a banded LU inside each component.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::spline::multiblock::MultiBlockVolume;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollocationSite {
    pub block: usize,
    pub param: [f64; 3],
}

/// Geometry-independent collocation setup for a set of Dirichlet faces.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSystem {
    /// Sorted global indices of the constrained control variables.
    pub boundary_dofs: Vec<usize>,
    /// `sites[i]` is the collocation site of `boundary_dofs[i]`.
    pub sites: Vec<CollocationSite>,
    /// Basis values: row = site, column = position in `boundary_dofs`.
    pub matrix: CsrMatrix,
}

impl CollocationSystem {
    /// Boundary dofs of `faces` and their sites, without evaluating any basis.
    pub fn sites_for(model: &MultiBlockVolume, faces: &[(usize, usize)]) -> Result<(Vec<usize>, Vec<CollocationSite>)> {
        for &f in faces {
            if !model.is_exterior(f) {
                return Err(Error::Domain(format!(
                    "Dirichlet face (block {}, face {}) is not an exterior face of the model",
                    f.0, f.1
                )));
            }
        }
        let mut owner: Vec<Option<(usize, usize)>> = vec![None; model.num_dofs()];
        let mut set = BTreeSet::new();
        for &(b, f) in faces {
            let (local, _) = model.blocks()[b].face_indices(f);
            for l in local {
                let g = model.global_index(b, l);
                set.insert(g);
                owner[g].get_or_insert((b, l));
            }
        }
        let boundary_dofs: Vec<usize> = set.into_iter().collect();
        let greville: Vec<[Vec<f64>; 3]> =
            model.blocks().iter().map(|b| [0, 1, 2].map(|d| b.knots()[d].greville())).collect();
        let sites = boundary_dofs
            .iter()
            .map(|&g| {
                let (b, l) = owner[g].expect("every boundary dof has an owner");
                let [nu, nv, _] = model.blocks()[b].counts();
                let (i, j, k) = (l % nu, (l / nu) % nv, l / (nu * nv));
                CollocationSite { block: b, param: [greville[b][0][i], greville[b][1][j], greville[b][2][k]] }
            })
            .collect();
        Ok((boundary_dofs, sites))
    }

    pub fn build(model: &MultiBlockVolume, faces: &[(usize, usize)]) -> Result<CollocationSystem> {
        let (boundary_dofs, sites) = Self::sites_for(model, faces)?;
        let mut position = vec![usize::MAX; model.num_dofs()];
        for (i, &g) in boundary_dofs.iter().enumerate() {
            position[g] = i;
        }
        let mut triplets = Vec::new();
        for (row, (&g, site)) in boundary_dofs.iter().zip(&sites).enumerate() {
            let (b, param) = (site.block, site.param);
            let blk = &model.blocks()[b];
            let basis = [0, 1, 2].map(|d| blk.knots()[d].basis(param[d]));
            for (c, &wv) in basis[2].1.iter().enumerate() {
                for (bb, &vv) in basis[1].1.iter().enumerate() {
                    for (a, &uv) in basis[0].1.iter().enumerate() {
                        let val = uv * vv * wv;
                        if val == 0.0 {
                            continue;
                        }
                        let loc = blk.index(basis[0].0 + a, basis[1].0 + bb, basis[2].0 + c);
                        let col = position[model.global_index(b, loc)];
                        if col == usize::MAX {
                            return Err(Error::Config(format!(
                                "collocation site of dof {g} touches a basis function off the Dirichlet boundary"
                            )));
                        }
                        triplets.push((row, col, val));
                    }
                }
            }
        }
        let matrix = CsrMatrix::from_triplets(boundary_dofs.len(), triplets);
        Ok(CollocationSystem { boundary_dofs, sites, matrix })
    }

    /// Physical collocation points.
    pub fn points(&self, model: &MultiBlockVolume) -> Vec<[f64; 3]> {
        self.sites.iter().map(|s| model.blocks()[s.block].evaluate(s.param)).collect()
    }

    /// Right-hand side `h(x_i)` for boundary data `t0`.
    pub fn rhs(&self, model: &MultiBlockVolume, t0: &dyn Fn([f64; 3]) -> f64) -> Vec<f64> {
        self.points(model).into_iter().map(t0).collect()
    }

    /// Stable digest of the site set and boundary dof set.
    pub fn signature(&self) -> Vec<u8> {
        signature(&self.boundary_dofs, &self.sites)
    }
}

/// Bytes identifying a boundary dof set and its sites.
pub fn signature(boundary_dofs: &[usize], sites: &[CollocationSite]) -> Vec<u8> {
    let mut out = Vec::with_capacity(boundary_dofs.len() * 40);
    for (g, s) in boundary_dofs.iter().zip(sites) {
        out.extend_from_slice(&(*g as u64).to_le_bytes());
        out.extend_from_slice(&(s.block as u64).to_le_bytes());
        for p in s.param {
            out.extend_from_slice(&p.to_bits().to_le_bytes());
        }
    }
    out
}

/// Banded LU with partial pivoting. Row `i` stores columns `i−kl ..= i+kl+ku`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLu {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    pub data: Vec<f64>,
    pub pivots: Vec<usize>,
}

impl BandLu {
    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    fn at(&self, i: usize, j: usize) -> usize {
        i * self.width() + (j + self.kl - i)
    }

    /// Factors the dense `n × n` matrix given by `entries` (row, col, value).
    pub fn factor(n: usize, entries: &[(usize, usize, f64)]) -> Result<BandLu> {
        let (mut kl, mut ku) = (0, 0);
        for &(r, c, _) in entries {
            if r > c {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        }
        let mut lu = BandLu { n, kl, ku, data: vec![0.0; n * (2 * kl + ku + 1)], pivots: vec![0; n] };
        for &(r, c, v) in entries {
            let p = lu.at(r, c);
            lu.data[p] += v;
        }
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.data[lu.at(k, k)].abs();
            for i in k + 1..=last {
                let v = lu.data[lu.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Config(format!("singular collocation matrix at pivot {k}")));
            }
            lu.pivots[k] = p;
            let cmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=cmax {
                    let (a, b) = (lu.at(k, j), lu.at(p, j));
                    lu.data.swap(a, b);
                }
            }
            let piv = lu.data[lu.at(k, k)];
            for i in k + 1..=last {
                let ik = lu.at(i, k);
                let l = lu.data[ik] / piv;
                lu.data[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=cmax {
                    let (ij, kj) = (lu.at(i, j), lu.at(k, j));
                    lu.data[ij] -= l * lu.data[kj];
                }
            }
        }
        Ok(lu)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + self.kl).min(n.saturating_sub(1)) {
                b[i] -= self.data[self.at(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                s -= self.data[self.at(k, j)] * b[j];
            }
            b[k] = s / self.data[self.at(k, k)];
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

static FACTORIZATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of collocation factorizations performed by this process.
pub fn factorizations() -> usize {
    FACTORIZATIONS.load(Ordering::SeqCst)
}

/// One diagonal block of the block-triangular form.
#[derive(Debug, Clone, PartialEq)]
pub struct LuBlock {
    /// Positions (into the boundary dof list) of the block's unknowns, sorted.
    pub members: Vec<usize>,
    pub lu: BandLu,
}

/// Factored collocation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationLu {
    pub n: usize,
    /// Blocks in solve order.
    pub blocks: Vec<LuBlock>,
    /// Copy of the collocation matrix for the off-diagonal couplings.
    pub matrix: CsrMatrix,
}

impl CollocationLu {
    pub fn factor(m: &CsrMatrix) -> Result<CollocationLu> {
        FACTORIZATIONS.fetch_add(1, Ordering::SeqCst);
        let n = m.n;
        let mut graph = DiGraph::<(), ()>::with_capacity(n, m.nnz());
        let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
        for r in 0..n {
            for &c in m.row(r).0 {
                if c != r {
                    graph.add_edge(nodes[r], nodes[c], ());
                }
            }
        }
        // Tarjan yields components in reverse topological order: dependencies first.
        let comps = tarjan_scc(&graph);
        let mut blocks = Vec::with_capacity(comps.len());
        let mut local = vec![usize::MAX; n];
        for comp in comps {
            let mut members: Vec<usize> = comp.iter().map(|v| v.index()).collect();
            members.sort_unstable();
            for (i, &g) in members.iter().enumerate() {
                local[g] = i;
            }
            let mut entries = Vec::new();
            for (i, &g) in members.iter().enumerate() {
                let (cs, vs) = m.row(g);
                for (&c, &v) in cs.iter().zip(vs) {
                    if local[c] != usize::MAX {
                        entries.push((i, local[c], v));
                    }
                }
            }
            let lu = BandLu::factor(members.len(), &entries).map_err(|_| {
                Error::Config(format!(
                    "collocation matrix is singular on the site group starting at boundary dof {}",
                    members[0]
                ))
            })?;
            for &g in &members {
                local[g] = usize::MAX;
            }
            blocks.push(LuBlock { members, lu });
        }
        Ok(CollocationLu { n, blocks, matrix: m.clone() })
    }

    /// Solves `M b = h` using the stored factors only.
    pub fn solve(&self, h: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        let mut done = vec![false; self.n];
        let mut rhs = Vec::new();
        for blk in &self.blocks {
            rhs.clear();
            for &g in &blk.members {
                let (cs, vs) = self.matrix.row(g);
                let mut s = h[g];
                for (&c, &v) in cs.iter().zip(vs) {
                    if done[c] {
                        s -= v * x[c];
                    }
                }
                rhs.push(s);
            }
            blk.lu.solve_in_place(&mut rhs);
            for (&g, &v) in blk.members.iter().zip(&rhs) {
                x[g] = v;
                done[g] = true;
            }
        }
        x
    }

    pub fn nnz(&self) -> usize {
        self.blocks.iter().map(|b| b.lu.nnz()).sum()
    }

    pub fn largest_block(&self) -> usize {
        self.blocks.iter().map(|b| b.members.len()).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::knots::KnotVector;
    use crate::spline::volume::BSplineVolume;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(p: usize, ne: usize) -> MultiBlockVolume {
        MultiBlockVolume::single(BSplineVolume::from_greville(
            [KnotVector::uniform(p, ne), KnotVector::uniform(p, ne + 1), KnotVector::uniform(p, ne)],
            |x| [x[0], 2.0 * x[1], x[2] + 0.1 * x[0] * x[1]],
        ))
    }

    fn all_faces(m: &MultiBlockVolume) -> Vec<(usize, usize)> {
        m.exterior_faces()
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 25;
        let mut entries = Vec::new();
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(2)..(i + 4).min(n) {
                let v = if i == j { 0.1 } else { rng.gen_range(-1.0..1.0) };
                entries.push((i, j, v));
                dense[(i, j)] = v;
            }
        }
        let lu = BandLu::factor(n, &entries).unwrap();
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let mut x = b.clone();
        lu.solve_in_place(&mut x);
        let oracle = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((x[i] - oracle[i]).abs() < 1e-10 * (1.0 + oracle[i].abs()));
        }
    }

    #[test]
    fn constant_data_gives_constant_controls() {
        let m = cube(3, 2);
        let sys = CollocationSystem::build(&m, &all_faces(&m)).unwrap();
        let lu = CollocationLu::factor(&sys.matrix).unwrap();
        let b = lu.solve(&sys.rhs(&m, &|_| 4.25));
        assert!(b.iter().all(|v| (v - 4.25).abs() < 1e-12));
        let zero = lu.solve(&sys.rhs(&m, &|_| 0.0));
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_data_on_identity_cube_gives_greville_abscissae() {
        let kv = KnotVector::uniform(2, 3);
        let m = MultiBlockVolume::single(BSplineVolume::from_greville([kv.clone(), kv.clone(), kv.clone()], |x| x));
        let sys = CollocationSystem::build(&m, &all_faces(&m)).unwrap();
        let lu = CollocationLu::factor(&sys.matrix).unwrap();
        let b = lu.solve(&sys.rhs(&m, &|x| x[0]));
        for (v, s) in b.iter().zip(&sys.sites) {
            assert!((v - s.param[0]).abs() < 1e-12);
        }
        let resid: Vec<f64> = sys.matrix.mul(&b).iter().zip(sys.rhs(&m, &|x| x[0])).map(|(a, h)| a - h).collect();
        assert!(resid.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn block_triangular_solve_matches_dense() {
        let m = cube(3, 3);
        let sys = CollocationSystem::build(&m, &[(0, 0), (0, 2), (0, 5)]).unwrap();
        let lu = CollocationLu::factor(&sys.matrix).unwrap();
        assert!(lu.blocks.len() > 1);
        let n = sys.matrix.n;
        let mut dense = DMatrix::zeros(n, n);
        for r in 0..n {
            let (cs, vs) = sys.matrix.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                dense[(r, c)] = v;
            }
        }
        let h = sys.rhs(&m, &|x| (x[0] * 3.0).sin() + x[1] * x[2]);
        let x = lu.solve(&h);
        let oracle = dense.lu().solve(&DVector::from_vec(h)).unwrap();
        for i in 0..n {
            assert!((x[i] - oracle[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn interface_faces_are_rejected() {
        let kv = KnotVector::uniform(1, 1);
        let a = BSplineVolume::from_greville([kv.clone(), kv.clone(), kv.clone()], |x| x);
        let b = BSplineVolume::from_greville([kv.clone(), kv.clone(), kv.clone()], |x| [x[0] + 1.0, x[1], x[2]]);
        let m = MultiBlockVolume::with_detected_interfaces(vec![a, b]).unwrap();
        assert!(CollocationSystem::build(&m, &[(0, 1)]).is_err());
        let sys = CollocationSystem::build(&m, &m.exterior_faces()).unwrap();
        assert_eq!(sys.boundary_dofs.len(), 12);
    }
}
