//! Solution export: CSV samples and legacy VTK structured grids.

use std::io::{self, Write};

use crate::assembly::SolutionField;

fn lerp(span: [f64; 2], s: f64) -> f64 {
    if s >= 1.0 {
        span[1]
    } else {
        span[0] + s * (span[1] - span[0])
    }
}

/// `x,y,z,T` rows on an `n³` grid (including element corners) per element, elements in block order.
pub fn write_csv(sol: &SolutionField, n: usize, mut out: impl Write) -> io::Result<()> {
    let n = n.max(2);
    writeln!(out, "x,y,z,T")?;
    for (b, vol) in sol.model.blocks().iter().enumerate() {
        let spans: Vec<Vec<[f64; 2]>> = vol.extraction_operators().iter().map(|e| e.spans.clone()).collect();
        for sw in &spans[2] {
            for sv in &spans[1] {
                for su in &spans[0] {
                    for k in 0..n {
                        for j in 0..n {
                            for i in 0..n {
                                let f = |q: usize| q as f64 / (n - 1) as f64;
                                let t = [lerp(*su, f(i)), lerp(*sv, f(j)), lerp(*sw, f(k))];
                                let x = vol.evaluate(t);
                                let v = sol.evaluate(b, t);
                                writeln!(out, "{:.15e},{:.15e},{:.15e},{:.15e}", x[0], x[1], x[2], v)?;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn csv_string(sol: &SolutionField, n: usize) -> String {
    let mut buf = Vec::new();
    write_csv(sol, n, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// One block as a legacy-VTK structured grid with `per_element` intervals per element span.
pub fn write_vtk_block(sol: &SolutionField, block: usize, per_element: usize, mut out: impl Write) -> io::Result<()> {
    let vol = &sol.model.blocks()[block];
    let per = per_element.max(1);
    let params: Vec<Vec<f64>> = vol
        .knots()
        .iter()
        .map(|kv| {
            let bp = kv.breakpoints();
            let mut t = Vec::with_capacity((bp.len() - 1) * per + 1);
            for w in bp.windows(2) {
                for s in 0..per {
                    t.push(w[0] + (w[1] - w[0]) * s as f64 / per as f64);
                }
            }
            t.push(*bp.last().expect("clamped knots"));
            t
        })
        .collect();
    let dims = [params[0].len(), params[1].len(), params[2].len()];
    let total = dims[0] * dims[1] * dims[2];
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "temperature block {block}")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_GRID")?;
    writeln!(out, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2])?;
    writeln!(out, "POINTS {total} double")?;
    let mut values = Vec::with_capacity(total);
    for &w in &params[2] {
        for &v in &params[1] {
            for &u in &params[0] {
                let x = vol.evaluate([u, v, w]);
                writeln!(out, "{:.12e} {:.12e} {:.12e}", x[0], x[1], x[2])?;
                values.push(sol.evaluate(block, [u, v, w]));
            }
        }
    }
    writeln!(out, "POINT_DATA {total}")?;
    writeln!(out, "SCALARS T double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in values {
        writeln!(out, "{v:.12e}")?;
    }
    Ok(())
}
