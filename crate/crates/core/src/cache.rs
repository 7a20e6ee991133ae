//! Geometry-independent precomputations shared by every model with the same
//! degrees, knots, topology, approximation settings and Dirichlet faces.
//!
//! Entries live in memory and optionally in a directory as
//! `<hash>.bin` (16-byte header, little-endian f64 items) plus `<hash>.manifest.json`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::{build_reusable, ApproxConfig, ApproxDegrees, ReusableApprox};
use crate::bernstein::BernsteinTensor;
use crate::collocation::{signature, BandLu, CollocationLu, CollocationSite, CollocationSystem, LuBlock};
use crate::element::{ElementTables, PairTables};
use crate::error::{Error, Result};
use crate::geometry::{DCoefficientTable, GradientTable};
use crate::sparse::CsrMatrix;
use crate::spline::knots::ExtractionOperator;
use crate::spline::multiblock::MultiBlockVolume;

pub const CACHE_DIR_ENV: &str = "QFIGA_CACHE_DIR";
const MAGIC: &[u8; 12] = b"QFIGA-CACHE\0";
const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub degrees: [usize; 3],
    pub approx_degrees: [usize; 3],
    pub subdivisions: usize,
    /// Per block and direction: interior knots (f64 bit patterns) with multiplicities.
    pub knots: Vec<[Vec<(u64, usize)>; 3]>,
    /// Digest of the interface list and global dof map.
    pub topology: String,
    /// Digest of the collocation sites and boundary dof set; empty without Dirichlet faces.
    pub boundary: String,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl CacheKey {
    pub fn new(model: &MultiBlockVolume, config: ApproxConfig, faces: &[(usize, usize)]) -> Result<CacheKey> {
        let degrees = model.degrees();
        let knots = model
            .blocks()
            .iter()
            .map(|b| {
                [0, 1, 2].map(|d| b.knots()[d].interior_signature().into_iter().map(|(k, m)| (k.to_bits(), m)).collect())
            })
            .collect();
        let mut topo = Vec::new();
        for i in model.interfaces() {
            for v in [i.a.0, i.a.1, i.b.0, i.b.1, i.orientation as usize] {
                topo.extend_from_slice(&(v as u64).to_le_bytes());
            }
        }
        for map in model.dof_map() {
            topo.extend_from_slice(&(map.len() as u64).to_le_bytes());
            for &g in map {
                topo.extend_from_slice(&(g as u64).to_le_bytes());
            }
        }
        let boundary = if faces.is_empty() {
            String::new()
        } else {
            let (dofs, sites) = CollocationSystem::sites_for(model, faces)?;
            sha_hex(&signature(&dofs, &sites))
        };
        Ok(CacheKey {
            degrees,
            approx_degrees: config.degrees(degrees).0,
            subdivisions: config.subdivisions,
            knots,
            topology: sha_hex(&topo),
            boundary,
        })
    }

    pub fn hash(&self) -> String {
        sha_hex(serde_json::to_string(self).expect("key serializes").as_bytes())
    }

    pub fn config(&self) -> ApproxConfig {
        ApproxConfig { degree_bump: self.approx_degrees[0] + 3 - 3 * self.degrees[0], subdivisions: self.subdivisions }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementRef {
    pub block: usize,
    pub index: [usize; 3],
}

/// Element list, connectivity and global sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyStructure {
    pub extraction: Vec<[ExtractionOperator; 3]>,
    pub elements: Vec<ElementRef>,
    /// Global dof indices of the functions active on each element, local order `u` fastest.
    pub connectivity: Vec<Vec<usize>>,
    /// Stiffness pattern with zero values.
    pub pattern: CsrMatrix,
}

impl AssemblyStructure {
    fn extraction(model: &MultiBlockVolume) -> Vec<[ExtractionOperator; 3]> {
        model.blocks().iter().map(|b| b.extraction_operators()).collect()
    }

    fn connectivity(model: &MultiBlockVolume, extraction: &[[ExtractionOperator; 3]]) -> (Vec<ElementRef>, Vec<Vec<usize>>) {
        let mut elements = Vec::new();
        let mut conn = Vec::new();
        for (b, blk) in model.blocks().iter().enumerate() {
            let ex = &extraction[b];
            let ne = [ex[0].num_elements(), ex[1].num_elements(), ex[2].num_elements()];
            for k in 0..ne[2] {
                for j in 0..ne[1] {
                    for i in 0..ne[0] {
                        let e = [i, j, k];
                        elements.push(ElementRef { block: b, index: e });
                        conn.push(blk.element_local_indices(e, ex).into_iter().map(|l| model.global_index(b, l)).collect());
                    }
                }
            }
        }
        (elements, conn)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationData {
    pub system: CollocationSystem,
    pub lu: CollocationLu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemStats {
    pub name: String,
    /// Stored scalars.
    pub len: usize,
    pub nnz: usize,
    pub bytes: usize,
    pub build_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub items: Vec<ItemStats>,
}

impl CacheStats {
    pub fn total_nnz(&self) -> usize {
        self.items.iter().map(|i| i.nnz).sum()
    }

    pub fn total_bytes(&self) -> usize {
        self.items.iter().map(|i| i.bytes).sum()
    }

    pub fn total_build_ms(&self) -> f64 {
        self.items.iter().map(|i| i.build_ms).sum()
    }

    /// Plain-text table; build times are machine-dependent and optional.
    pub fn report(&self, timings: bool) -> String {
        let mut s = String::new();
        for i in &self.items {
            s.push_str(&format!("{:<20} len {:>12} nnz {:>12} bytes {:>13}", i.name, i.len, i.nnz, i.bytes));
            if timings {
                s.push_str(&format!(" build {:>10.3} ms", i.build_ms));
            }
            s.push('\n');
        }
        s.push_str(&format!(
            "{:<20} len {:>12} nnz {:>12} bytes {:>13}",
            "total",
            self.items.iter().map(|i| i.len).sum::<usize>(),
            self.total_nnz(),
            self.total_bytes()
        ));
        if timings {
            s.push_str(&format!(" build {:>10.3} ms", self.total_build_ms()));
        }
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub hash: String,
    pub tables: ElementTables,
    pub approx: ReusableApprox,
    pub gradients: GradientTable,
    pub structure: AssemblyStructure,
    pub collocation: Option<CollocationData>,
    pub stats: CacheStats,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t0 = Instant::now();
    let v = f()?;
    Ok((v, t0.elapsed().as_secs_f64() * 1e3))
}

impl CacheEntry {
    /// Builds every item from scratch.
    pub fn build(model: &MultiBlockVolume, config: ApproxConfig, faces: &[(usize, usize)]) -> Result<CacheEntry> {
        let key = CacheKey::new(model, config, faces)?;
        let d = model.degrees();
        let (d_table, t_d) = timed(|| DCoefficientTable::build(d))?;
        let (tables, t_k) = timed(|| ElementTables::with_jacobian_table(d, config, d_table))?;
        let (approx, t_a) = timed(|| build_reusable(config.degrees(d), d))?;
        let (gradients, t_g) = timed(|| Ok(GradientTable::build(d)))?;
        let (extraction, t_x) = timed(|| Ok(AssemblyStructure::extraction(model)))?;
        let ((elements, connectivity), t_c) = timed(|| Ok(AssemblyStructure::connectivity(model, &extraction)))?;
        let (pattern, t_p) = timed(|| Ok(CsrMatrix::from_connectivity(model.num_dofs(), &connectivity)))?;
        let structure = AssemblyStructure { extraction, elements, connectivity, pattern };
        let (collocation, t_m, t_l) = if faces.is_empty() {
            (None, 0.0, 0.0)
        } else {
            let (system, t_m) = timed(|| CollocationSystem::build(model, faces))?;
            let (lu, t_l) = timed(|| CollocationLu::factor(&system.matrix))?;
            (Some(CollocationData { system, lu }), t_m, t_l)
        };
        let mut entry = CacheEntry {
            hash: key.hash(),
            key,
            tables,
            approx,
            gradients,
            structure,
            collocation,
            stats: CacheStats::default(),
        };
        let times = [t_d, t_k, t_a, t_g, t_x, t_c, t_p, t_m, t_l];
        entry.stats = entry.compute_stats(&times);
        Ok(entry)
    }

    fn compute_stats(&self, times: &[f64]) -> CacheStats {
        let items = encode_items(self)
            .into_iter()
            .zip(times)
            .map(|((name, payload), &t)| ItemStats {
                name: name.to_string(),
                len: payload.len(),
                nnz: payload.iter().filter(|&&x| x != 0.0).count(),
                bytes: 8 * payload.len(),
                build_ms: t,
            })
            .collect();
        CacheStats { items }
    }

    pub fn config(&self) -> ApproxConfig {
        self.key.config()
    }

    /// Serialized size of the `.bin` file.
    pub fn serialized_bytes(&self) -> usize {
        HEADER_BYTES + self.stats.total_bytes()
    }

    /// Hard error unless `model` has the structure this entry was built for.
    pub fn check_model(&self, model: &MultiBlockVolume, faces: &[(usize, usize)]) -> Result<()> {
        let key = CacheKey::new(model, self.config(), faces)?;
        if key != self.key {
            return Err(Error::Config(format!(
                "cache entry {} does not match the model structure (model key {})",
                &self.hash[..12],
                &key.hash()[..12]
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Flat f64 encoding of the items.

#[derive(Default)]
struct Enc(Vec<f64>);

impl Enc {
    fn n(&mut self, v: usize) {
        self.0.push(v as f64);
    }
    fn f(&mut self, v: f64) {
        self.0.push(v);
    }
    fn slice(&mut self, v: &[f64]) {
        self.n(v.len());
        self.0.extend_from_slice(v);
    }
    fn idx(&mut self, v: &[usize]) {
        self.n(v.len());
        self.0.extend(v.iter().map(|&x| x as f64));
    }
    fn deg(&mut self, d: [usize; 3]) {
        d.iter().for_each(|&x| self.n(x));
    }
}

struct Dec<'a> {
    data: &'a [f64],
    pos: usize,
    item: &'a str,
}

impl<'a> Dec<'a> {
    fn new(data: &'a [f64], item: &'a str) -> Self {
        Dec { data, pos: 0, item }
    }
    fn err(&self) -> Error {
        Error::Format(format!("cache item {} is truncated or corrupt at offset {}", self.item, self.pos))
    }
    fn f(&mut self) -> Result<f64> {
        let v = *self.data.get(self.pos).ok_or_else(|| self.err())?;
        self.pos += 1;
        Ok(v)
    }
    fn n(&mut self) -> Result<usize> {
        let v = self.f()?;
        if v < 0.0 || v.fract() != 0.0 || v > 1e15 {
            return Err(self.err());
        }
        Ok(v as usize)
    }
    fn slice(&mut self) -> Result<Vec<f64>> {
        let len = self.n()?;
        let end = self.pos.checked_add(len).filter(|&e| e <= self.data.len()).ok_or_else(|| self.err())?;
        let v = self.data[self.pos..end].to_vec();
        self.pos = end;
        Ok(v)
    }
    fn idx(&mut self) -> Result<Vec<usize>> {
        let len = self.n()?;
        (0..len).map(|_| self.n()).collect()
    }
    fn deg(&mut self) -> Result<[usize; 3]> {
        Ok([self.n()?, self.n()?, self.n()?])
    }
    fn done(&self) -> Result<()> {
        if self.pos == self.data.len() {
            Ok(())
        } else {
            Err(self.err())
        }
    }
}

fn enc_csr(e: &mut Enc, m: &CsrMatrix) {
    e.n(m.n);
    e.idx(&m.row_ptr);
    e.idx(&m.cols);
    e.slice(&m.vals);
}

fn dec_csr(d: &mut Dec) -> Result<CsrMatrix> {
    Ok(CsrMatrix { n: d.n()?, row_ptr: d.idx()?, cols: d.idx()?, vals: d.slice()? })
}

const ITEM_NAMES: [&str; 9] = [
    "jacobian_table",
    "kernel_tables",
    "approx_l_q_sigma",
    "basis_gradients",
    "extraction",
    "connectivity",
    "pattern",
    "collocation_matrix",
    "collocation_lu",
];

fn encode_items(entry: &CacheEntry) -> Vec<(&'static str, Vec<f64>)> {
    let t = &entry.tables;
    let mut items = Vec::with_capacity(ITEM_NAMES.len());

    let mut e = Enc::default();
    e.slice(t.d_table.weights());
    items.push(e.0);

    let mut e = Enc::default();
    e.deg(t.spline);
    e.deg(t.approx.0);
    e.n(t.subdivisions);
    for d in 0..3 {
        e.slice(&t.gram[d]);
        e.slice(&t.jac_moments[d]);
        e.slice(&t.mass_inverse[d]);
        e.slice(&t.split[d][0]);
        e.slice(&t.split[d][1]);
    }
    e.n(t.pairs.len());
    for p in &t.pairs {
        e.n(p.pair.0);
        e.n(p.pair.1);
        e.deg(p.grad_degrees);
        e.deg(p.metric_degrees);
        for d in 0..3 {
            e.slice(&p.metric_moments[d]);
            e.slice(&p.skeleton[d]);
        }
    }
    items.push(e.0);

    let a = &entry.approx;
    let mut e = Enc::default();
    e.deg(a.approx.0);
    e.deg(a.spline);
    e.deg(a.numerator);
    for d in 0..3 {
        e.slice(&a.l1[d]);
        e.slice(&a.q1[d]);
    }
    e.f(a.sigma);
    items.push(e.0);

    let mut e = Enc::default();
    e.deg(entry.gradients.degrees);
    e.n(entry.gradients.grads.len());
    for g in &entry.gradients.grads {
        for t in g {
            e.deg(t.degrees());
            e.slice(t.coeffs());
        }
    }
    items.push(e.0);

    let s = &entry.structure;
    let mut e = Enc::default();
    e.n(s.extraction.len());
    for ex in &s.extraction {
        for op in ex {
            e.n(op.degree);
            e.idx(&op.first_basis);
            let spans: Vec<f64> = op.spans.iter().flatten().copied().collect();
            e.slice(&spans);
            e.n(op.matrices.len());
            for m in &op.matrices {
                e.slice(m);
            }
        }
    }
    items.push(e.0);

    let mut e = Enc::default();
    e.n(s.elements.len());
    for (el, conn) in s.elements.iter().zip(&s.connectivity) {
        e.n(el.block);
        e.deg(el.index);
        e.idx(conn);
    }
    items.push(e.0);

    let mut e = Enc::default();
    e.n(s.pattern.n);
    e.idx(&s.pattern.row_ptr);
    e.idx(&s.pattern.cols);
    items.push(e.0);

    let mut e = Enc::default();
    let mut e2 = Enc::default();
    if let Some(c) = &entry.collocation {
        e.idx(&c.system.boundary_dofs);
        for site in &c.system.sites {
            e.n(site.block);
            site.param.iter().for_each(|&x| e.f(x));
        }
        enc_csr(&mut e, &c.system.matrix);
        e2.n(c.lu.n);
        e2.n(c.lu.blocks.len());
        for b in &c.lu.blocks {
            e2.idx(&b.members);
            e2.n(b.lu.n);
            e2.n(b.lu.kl);
            e2.n(b.lu.ku);
            e2.slice(&b.lu.data);
            e2.idx(&b.lu.pivots);
        }
    }
    items.push(e.0);
    items.push(e2.0);

    ITEM_NAMES.into_iter().zip(items).collect()
}

fn decode_items(key: CacheKey, hash: String, stats: CacheStats, payloads: &[&[f64]]) -> Result<CacheEntry> {
    if payloads.len() != ITEM_NAMES.len() {
        return Err(Error::Format(format!("cache file holds {} items, expected {}", payloads.len(), ITEM_NAMES.len())));
    }
    let mut d = Dec::new(payloads[0], ITEM_NAMES[0]);
    let weights = d.slice()?;
    d.done()?;
    let d_table = DCoefficientTable::from_raw(key.degrees, weights)?;

    let mut d = Dec::new(payloads[1], ITEM_NAMES[1]);
    let spline = d.deg()?;
    let approx = ApproxDegrees(d.deg()?);
    let subdivisions = d.n()?;
    let mut gram: [Vec<f64>; 3] = Default::default();
    let mut jac_moments: [Vec<f64>; 3] = Default::default();
    let mut mass_inverse: [Vec<f64>; 3] = Default::default();
    let mut split: [[Vec<f64>; 2]; 3] = Default::default();
    for k in 0..3 {
        gram[k] = d.slice()?;
        jac_moments[k] = d.slice()?;
        mass_inverse[k] = d.slice()?;
        split[k] = [d.slice()?, d.slice()?];
    }
    let np = d.n()?;
    let mut pairs = Vec::with_capacity(np.min(6));
    for _ in 0..np {
        let pair = (d.n()?, d.n()?);
        let grad_degrees = d.deg()?;
        let metric_degrees = d.deg()?;
        let mut metric_moments: [Vec<f64>; 3] = Default::default();
        let mut skeleton: [Vec<f64>; 3] = Default::default();
        for k in 0..3 {
            metric_moments[k] = d.slice()?;
            skeleton[k] = d.slice()?;
        }
        pairs.push(PairTables { pair, grad_degrees, metric_degrees, metric_moments, skeleton });
    }
    d.done()?;
    let tables =
        ElementTables { spline, approx, subdivisions, d_table, gram, jac_moments, mass_inverse, split, pairs };

    let mut d = Dec::new(payloads[2], ITEM_NAMES[2]);
    let a_deg = ApproxDegrees(d.deg()?);
    let a_spline = d.deg()?;
    let numerator = d.deg()?;
    let mut l1: [Vec<f64>; 3] = Default::default();
    let mut q1: [Vec<f64>; 3] = Default::default();
    for k in 0..3 {
        l1[k] = d.slice()?;
        q1[k] = d.slice()?;
    }
    let sigma = d.f()?;
    d.done()?;
    let approx_sys = ReusableApprox { approx: a_deg, spline: a_spline, numerator, l1, q1, sigma };

    let mut d = Dec::new(payloads[3], ITEM_NAMES[3]);
    let g_deg = d.deg()?;
    let ng = d.n()?;
    let mut grads = Vec::with_capacity(ng.min(1 << 16));
    for _ in 0..ng {
        let mut one = Vec::with_capacity(3);
        for _ in 0..3 {
            let deg = d.deg()?;
            one.push(BernsteinTensor::new(deg, d.slice()?)?);
        }
        grads.push(one.try_into().expect("three gradient components"));
    }
    d.done()?;
    let gradients = GradientTable { degrees: g_deg, grads };

    let mut d = Dec::new(payloads[4], ITEM_NAMES[4]);
    let nb = d.n()?;
    let mut extraction = Vec::with_capacity(nb.min(1 << 16));
    for _ in 0..nb {
        let mut ops = Vec::with_capacity(3);
        for _ in 0..3 {
            let degree = d.n()?;
            let first_basis = d.idx()?;
            let spans = d.slice()?.chunks(2).map(|c| [c[0], c[1]]).collect();
            let nm = d.n()?;
            let matrices = (0..nm).map(|_| d.slice()).collect::<Result<Vec<_>>>()?;
            ops.push(ExtractionOperator { degree, first_basis, spans, matrices });
        }
        extraction.push(ops.try_into().expect("three directions"));
    }
    d.done()?;

    let mut d = Dec::new(payloads[5], ITEM_NAMES[5]);
    let ne = d.n()?;
    let mut elements = Vec::with_capacity(ne.min(1 << 24));
    let mut connectivity = Vec::with_capacity(ne.min(1 << 24));
    for _ in 0..ne {
        elements.push(ElementRef { block: d.n()?, index: d.deg()? });
        connectivity.push(d.idx()?);
    }
    d.done()?;

    let mut d = Dec::new(payloads[6], ITEM_NAMES[6]);
    let n = d.n()?;
    let row_ptr = d.idx()?;
    let cols = d.idx()?;
    d.done()?;
    let nnz = cols.len();
    let pattern = CsrMatrix { n, row_ptr, cols, vals: vec![0.0; nnz] };
    let structure = AssemblyStructure { extraction, elements, connectivity, pattern };

    let collocation = if payloads[7].is_empty() {
        None
    } else {
        let mut d = Dec::new(payloads[7], ITEM_NAMES[7]);
        let boundary_dofs = d.idx()?;
        let mut sites = Vec::with_capacity(boundary_dofs.len());
        for _ in 0..boundary_dofs.len() {
            sites.push(CollocationSite { block: d.n()?, param: [d.f()?, d.f()?, d.f()?] });
        }
        let matrix = dec_csr(&mut d)?;
        d.done()?;
        let mut d = Dec::new(payloads[8], ITEM_NAMES[8]);
        let n = d.n()?;
        let nblocks = d.n()?;
        let mut blocks = Vec::with_capacity(nblocks.min(1 << 20));
        for _ in 0..nblocks {
            let members = d.idx()?;
            let lu = BandLu { n: d.n()?, kl: d.n()?, ku: d.n()?, data: d.slice()?, pivots: d.idx()? };
            blocks.push(LuBlock { members, lu });
        }
        d.done()?;
        let lu = CollocationLu { n, blocks, matrix: matrix.clone() };
        Some(CollocationData { system: CollocationSystem { boundary_dofs, sites, matrix }, lu })
    };

    Ok(CacheEntry { key, hash, tables, approx: approx_sys, gradients, structure, collocation, stats })
}

// ---------------------------------------------------------------------------
// Persistence.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub name: String,
    /// Byte offset in the `.bin` file.
    pub offset: usize,
    pub len: usize,
    pub nnz: usize,
    pub bytes: usize,
    pub build_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub hash: String,
    pub key: CacheKey,
    pub items: Vec<ManifestItem>,
    pub total_bytes: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

pub fn bin_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("{hash}.bin"))
}

pub fn manifest_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("{hash}.manifest.json"))
}

/// Writes the entry's `.bin` and manifest into `dir`.
pub fn write_entry(entry: &CacheEntry, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let items = encode_items(entry);
    let mut bytes = Vec::with_capacity(entry.serialized_bytes());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let mut manifest_items = Vec::with_capacity(items.len());
    for ((name, payload), st) in items.iter().zip(&entry.stats.items) {
        manifest_items.push(ManifestItem {
            name: name.to_string(),
            offset: bytes.len(),
            len: payload.len(),
            nnz: st.nnz,
            bytes: 8 * payload.len(),
            build_ms: st.build_ms,
        });
        for v in payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        hash: entry.hash.clone(),
        key: entry.key.clone(),
        total_bytes: bytes.len(),
        items: manifest_items,
    };
    let bp = bin_path(dir, &entry.hash);
    std::fs::write(&bp, &bytes).map_err(|e| io_err(&bp, e))?;
    let mp = manifest_path(dir, &entry.hash);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&mp, text).map_err(|e| io_err(&mp, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        pointer: String::new(),
        message: e.to_string(),
    })
}

/// Loads the entry for `key` from `dir`; `Ok(None)` when absent.
pub fn read_entry(dir: &Path, key: &CacheKey) -> Result<Option<CacheEntry>> {
    let hash = key.hash();
    let mp = manifest_path(dir, &hash);
    if !mp.exists() {
        return Ok(None);
    }
    let manifest = read_manifest(&mp)?;
    if manifest.key != *key || manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("{} belongs to a different key or format", mp.display())));
    }
    let bp = bin_path(dir, &hash);
    let bytes = std::fs::read(&bp).map_err(|e| io_err(&bp, e))?;
    if bytes.len() != manifest.total_bytes || bytes.len() < HEADER_BYTES || &bytes[..12] != MAGIC {
        return Err(Error::Format(format!("{} has a bad header or size", bp.display())));
    }
    let version = u32::from_le_bytes(bytes[12..16].try_into().expect("four bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("{} has format version {version}", bp.display())));
    }
    let mut payloads = Vec::with_capacity(manifest.items.len());
    for it in &manifest.items {
        let end = it.offset + 8 * it.len;
        if end > bytes.len() {
            return Err(Error::Format(format!("item {} overruns {}", it.name, bp.display())));
        }
        let v: Vec<f64> = bytes[it.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        payloads.push(v);
    }
    let stats = CacheStats {
        items: manifest
            .items
            .iter()
            .map(|i| ItemStats { name: i.name.clone(), len: i.len, nnz: i.nnz, bytes: i.bytes, build_ms: i.build_ms })
            .collect(),
    };
    let refs: Vec<&[f64]> = payloads.iter().map(|v| v.as_slice()).collect();
    decode_items(key.clone(), hash, stats, &refs).map(Some)
}

/// Manifests of every entry stored in `dir`.
pub fn list_dir(dir: &Path) -> Result<Vec<Manifest>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    paths.sort();
    for p in paths {
        out.push(read_manifest(&p)?);
    }
    Ok(out)
}

/// Removes every cache file from `dir`, returning how many were deleted.
pub fn clear_dir(dir: &Path) -> Result<usize> {
    if !dir.exists() {
        return Ok(0);
    }
    let mut n = 0;
    for e in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let p = e.map_err(|e| io_err(dir, e))?.path();
        let name = p.to_string_lossy();
        if name.ends_with(".bin") || name.ends_with(".manifest.json") {
            std::fs::remove_file(&p).map_err(|e| io_err(&p, e))?;
            n += 1;
        }
    }
    Ok(n)
}

// ---------------------------------------------------------------------------

type Slot = Arc<Mutex<Option<Arc<CacheEntry>>>>;

/// Content-addressed store of [`CacheEntry`] values.
#[derive(Debug, Default)]
pub struct ReuseCache {
    dir: Option<PathBuf>,
    slots: Mutex<HashMap<String, Slot>>,
    builds: AtomicUsize,
    hits: AtomicUsize,
    loads: AtomicUsize,
}

impl ReuseCache {
    pub fn in_memory() -> ReuseCache {
        ReuseCache::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> ReuseCache {
        ReuseCache { dir: Some(dir.into()), ..Default::default() }
    }

    /// Persistent when the cache directory variable is set, in-memory otherwise.
    pub fn from_env() -> ReuseCache {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => ReuseCache::with_dir(PathBuf::from(d)),
            _ => ReuseCache::in_memory(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Builder invocations so far.
    pub fn builds(&self) -> usize {
        self.builds.load(Ordering::SeqCst)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn disk_loads(&self) -> usize {
        self.loads.load(Ordering::SeqCst)
    }

    /// Drops in-memory entries (files are left alone).
    pub fn forget(&self) {
        self.slots.lock().expect("cache lock").clear();
    }

    pub fn get_or_build(
        &self,
        model: &MultiBlockVolume,
        config: ApproxConfig,
        faces: &[(usize, usize)],
    ) -> Result<Arc<CacheEntry>> {
        let key = CacheKey::new(model, config, faces)?;
        let hash = key.hash();
        let slot = {
            let mut slots = self.slots.lock().expect("cache lock");
            slots.entry(hash.clone()).or_default().clone()
        };
        let mut guard = slot.lock().expect("cache slot lock");
        if let Some(e) = guard.as_ref() {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(e.clone());
        }
        if let Some(dir) = &self.dir {
            match read_entry(dir, &key) {
                Ok(Some(e)) => {
                    self.loads.fetch_add(1, Ordering::SeqCst);
                    let e = Arc::new(e);
                    *guard = Some(e.clone());
                    return Ok(e);
                }
                Ok(None) => {}
                Err(err) => warn!("ignoring unreadable cache entry {hash}: {err}"),
            }
        }
        self.builds.fetch_add(1, Ordering::SeqCst);
        let entry = Arc::new(CacheEntry::build(model, config, faces)?);
        if let Some(dir) = &self.dir {
            if let Err(err) = write_entry(&entry, dir) {
                warn!("cache directory unusable, keeping entry {hash} in memory only: {err}");
            }
        }
        *guard = Some(entry.clone());
        Ok(entry)
    }
}
