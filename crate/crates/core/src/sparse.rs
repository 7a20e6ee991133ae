//! Compressed sparse row matrices and the symmetric solvers used on them.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the union pattern of dense element blocks. `elements[e]`
    /// lists the global indices of element `e`.
    pub fn from_connectivity(n: usize, elements: &[Vec<usize>]) -> CsrMatrix {
        let mut node_elems: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (e, idx) in elements.iter().enumerate() {
            for &g in idx {
                node_elems[g].push(e as u32);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut mark = vec![usize::MAX; n];
        let mut row = Vec::new();
        for (r, elems) in node_elems.iter().enumerate() {
            row.clear();
            for &e in elems {
                for &g in &elements[e as usize] {
                    if mark[g] != r {
                        mark[g] = r;
                        row.push(g);
                    }
                }
            }
            row.sort_unstable();
            cols.extend_from_slice(&row);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        CsrMatrix { n, row_ptr, cols, vals: vec![0.0; nnz] }
    }

    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> CsrMatrix {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((r, c));
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> CsrMatrix {
        CsrMatrix::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].binary_search(&c).ok().map(|k| a + k)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate().take(self.n) {
            let (cols, vals) = self.row(r);
            *yr = cols.iter().zip(vals).map(|(&c, v)| v * x[c]).sum();
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A − Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Adds a dense row-major block at global indices `idx`.
    pub fn add_block(&mut self, idx: &[usize], block: &[f64]) {
        let n = idx.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by_key(|&a| idx[a]);
        for (a, &ga) in idx.iter().enumerate() {
            let (start, end) = (self.row_ptr[ga], self.row_ptr[ga + 1]);
            let mut pos = start;
            for &b in &order {
                let gb = idx[b];
                while pos < end && self.cols[pos] < gb {
                    pos += 1;
                }
                debug_assert!(pos < end && self.cols[pos] == gb, "entry outside the pattern");
                self.vals[pos] += block[a * n + b];
            }
        }
    }

    /// Principal submatrix on `keep` (sorted global indices), renumbered.
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (i, &g) in keep.iter().enumerate() {
            map[g] = i;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for &g in keep {
            let (cs, vs) = self.row(g);
            for (&c, &v) in cs.iter().zip(vs) {
                if map[c] != usize::MAX {
                    cols.push(map[c]);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { n: keep.len(), row_ptr, cols, vals }
    }

    /// Order-independent-of-threads digest: sum of `|v|·(1 + (r·n + c) mod 9973)` over sorted entries.
    pub fn checksum(&self) -> f64 {
        let mut s = 0.0;
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                s += v * (1 + (r * self.n + c) % 9973) as f64;
            }
        }
        s
    }

    /// SHA-256 over `(row, col, value bits)` of the sorted entries; equal digests mean bitwise-equal matrices.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                h.update((r as u64).to_le_bytes());
                h.update((c as u64).to_le_bytes());
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub method: &'static str,
    pub iterations: usize,
    pub relative_residual: f64,
    pub history: Vec<f64>,
}

/// Jacobi-preconditioned conjugate gradients.
pub fn pcg_jacobi(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.n;
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| d <= 0.0 || !d.is_finite()) {
        return Err(Error::Solver(format!("non-positive diagonal entry {} at row {i}", diag[i])));
    }
    let inv: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
    let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    let mut history = Vec::new();
    if bnorm == 0.0 {
        return Ok((x, SolveReport { method: "pcg-jacobi", iterations: 0, relative_residual: 0.0, history }));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Solver(format!("matrix is not positive definite (pᵀAp = {pap:e} at iteration {it})")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = r.iter().map(|x| x * x).sum::<f64>().sqrt() / bnorm;
        history.push(rel);
        if rel <= tol {
            return Ok((x, SolveReport { method: "pcg-jacobi", iterations: it, relative_residual: rel, history }));
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let tail: Vec<String> = history.iter().rev().take(5).rev().map(|r| format!("{r:.3e}")).collect();
    Err(Error::Solver(format!(
        "conjugate gradients did not reach {tol:e} in {max_iter} iterations; last residuals [{}]",
        tail.join(", ")
    )))
}

/// Reverse Cuthill–McKee ordering of a structurally symmetric matrix.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n;
    let degree: Vec<usize> = (0..n).map(|r| a.row_ptr[r + 1] - a.row_ptr[r]).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(a.row(v).0.iter().copied().filter(|&c| !visited[c]));
            nbrs.sort_by_key(|&i| (degree[i], i));
            for &c in &nbrs {
                visited[c] = true;
                queue.push_back(c);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope (skyline) Cholesky factor of a permuted SPD matrix.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    /// Envelope size of `a` under `perm` (entries stored by the factor).
    pub fn envelope(a: &CsrMatrix, perm: &[usize]) -> usize {
        let mut inv = vec![0; a.n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        (0..a.n)
            .map(|i| {
                let f = a.row(perm[i]).0.iter().map(|&c| inv[c]).min().unwrap_or(i).min(i);
                i - f + 1
            })
            .sum()
    }

    pub fn factor(a: &CsrMatrix, perm: Vec<usize>) -> Result<SkylineCholesky> {
        let n = a.n;
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let mut first = vec![0; n];
        let mut start = vec![0; n + 1];
        for i in 0..n {
            first[i] = a.row(perm[i]).0.iter().map(|&c| inv[c]).min().unwrap_or(i).min(i);
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for i in 0..n {
            let (cs, vs) = a.row(perm[i]);
            for (&c, &v) in cs.iter().zip(vs) {
                let j = inv[c];
                if j <= i {
                    data[start[i] + j - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = data[start[i] + j - fi];
                let ri = &data[start[i] + lo - fi..start[i] + j - fi];
                let rj = &data[start[j] + lo - fj..start[j] + j - fj];
                s -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::Solver(format!("matrix is not positive definite at pivot {i}")));
                    }
                    data[start[i] + i - fi] = s.sqrt();
                } else {
                    data[start[i] + j - fi] = s / data[start[j] + j - fj];
                }
            }
        }
        Ok(SkylineCholesky { perm, first, start, data })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, v) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= v * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }
}

/// Symmetric positive definite solve: envelope Cholesky below `direct_limit`
/// unknowns when the envelope fits `envelope_limit`, Jacobi PCG otherwise.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], direct_limit: usize, envelope_limit: usize) -> Result<(Vec<f64>, SolveReport)> {
    if a.n == 0 {
        return Ok((Vec::new(), SolveReport { method: "empty", iterations: 0, relative_residual: 0.0, history: vec![] }));
    }
    if a.n < direct_limit {
        let perm = reverse_cuthill_mckee(a);
        if SkylineCholesky::envelope(a, &perm) <= envelope_limit {
            let f = SkylineCholesky::factor(a, perm)?;
            let x = f.solve(b);
            let r: Vec<f64> = a.mul(&x).iter().zip(b).map(|(ax, b)| b - ax).collect();
            let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rel = if bn == 0.0 { 0.0 } else { r.iter().map(|v| v * v).sum::<f64>().sqrt() / bn };
            return Ok((x, SolveReport { method: "skyline-cholesky", iterations: 0, relative_residual: rel, history: vec![] }));
        }
    }
    let cap = ((10.0 * (a.n as f64).sqrt()).ceil() as usize).max(10);
    pcg_jacobi(a, b, 1e-10, cap)
}
