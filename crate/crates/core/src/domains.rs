//! Built-in verification domains and manufactured solutions.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::problem::{field, HeatProblem};
use crate::spline::knots::KnotVector;
use crate::spline::multiblock::MultiBlockVolume;
use crate::spline::volume::{det3, BSplineVolume};

type Map = Box<dyn Fn([f64; 3]) -> [f64; 3]>;

fn knots(p: usize, n: [usize; 3]) -> [KnotVector; 3] {
    n.map(|e| KnotVector::uniform(p, e))
}

/// `[0,1]³` with the identity parameterization.
pub fn unit_cube(p: usize, elements: [usize; 3]) -> MultiBlockVolume {
    MultiBlockVolume::single(BSplineVolume::from_greville(knots(p, elements), |x| x))
}

/// `[0,1]² × [0,thickness]`.
pub fn slab(p: usize, elements: [usize; 2], thickness: f64) -> MultiBlockVolume {
    MultiBlockVolume::single(BSplineVolume::from_greville(knots(p, [elements[0], elements[1], 1]), |x| {
        [x[0], x[1], thickness * x[2]]
    }))
}

fn jacobian_sign(f: &dyn Fn([f64; 3]) -> [f64; 3]) -> f64 {
    let h = 1e-6;
    let c = [0.5; 3];
    let mut m = [[0.0; 3]; 3];
    for d in 0..3 {
        let (mut a, mut b) = (c, c);
        a[d] += h;
        b[d] -= h;
        let (fa, fb) = (f(a), f(b));
        for r in 0..3 {
            m[r][d] = (fa[r] - fb[r]) / (2.0 * h);
        }
    }
    det3(&m)
}

fn oriented(f: Map) -> Map {
    if jacobian_sign(&f) < 0.0 {
        Box::new(move |x| f([x[1], x[0], x[2]]))
    } else {
        f
    }
}

/// Shell `9 ≤ |x| ≤ 11` in the positive octant, as three blocks meeting at the
/// centroid direction of the spherical triangle.
pub fn hollow_sphere_octant(p: usize, elements: [usize; 3]) -> Result<MultiBlockVolume> {
    let v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mid = |a: [f64; 3], b: [f64; 3]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])];
    let g = [1.0 / 3.0; 3];
    let mut blocks = Vec::with_capacity(3);
    for i in 0..3 {
        let a = v[i];
        let m1 = mid(v[i], v[(i + 1) % 3]);
        let m2 = mid(v[i], v[(i + 2) % 3]);
        let map: Map = Box::new(move |t: [f64; 3]| {
            let (u, s) = (t[0], t[1]);
            let mut q = [0.0; 3];
            for c in 0..3 {
                q[c] = (1.0 - u) * (1.0 - s) * a[c] + u * (1.0 - s) * m1[c] + u * s * g[c] + (1.0 - u) * s * m2[c];
            }
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
            let r = 9.0 + 2.0 * t[2];
            [r * q[0] / n, r * q[1] / n, r * q[2] / n]
        });
        let map = oriented(map);
        blocks.push(BSplineVolume::interpolate(knots(p, elements), map)?);
    }
    MultiBlockVolume::with_detected_interfaces(blocks)
}

/// Curved image of `[0,2]×[0,1]²` split at `x = 1` into two conforming blocks.
pub fn curved_two_block(p: usize, elements: [usize; 3]) -> Result<MultiBlockVolume> {
    let blocks = (0..2)
        .map(|b| {
            BSplineVolume::interpolate(knots(p, elements), move |t| {
                let (x, y, z) = (b as f64 + t[0], t[1], t[2]);
                [
                    x + 0.08 * (PI * y).sin(),
                    y + 0.08 * (0.5 * PI * x).sin() * (1.0 + z),
                    z + 0.05 * x * y,
                ]
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = MultiBlockVolume::with_detected_interfaces(blocks)?;
    if m.interfaces().len() != 1 {
        return Err(Error::Internal(format!("expected one interface, found {}", m.interfaces().len())));
    }
    Ok(m)
}

/// Smooth deformation of the control net by `amplitude` times the model size;
/// knots, degrees and topology are unchanged.
pub fn perturbed(model: &MultiBlockVolume, amplitude: f64) -> Result<MultiBlockVolume> {
    let pts = model.blocks().iter().flat_map(|b| b.control().iter().copied());
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for p in pts {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let l = (0..3).map(|d| hi[d] - lo[d]).fold(0.0, f64::max);
    let a = amplitude * l;
    model.map_control(move |p| {
        let s = [0, 1, 2].map(|d| (p[d] - lo[d]) / l);
        [
            p[0] + a * (PI * s[1]).sin() * s[2],
            p[1] + a * (PI * s[2]).sin() * s[0],
            p[2] + a * (PI * s[0]).sin() * s[1],
        ]
    })
}

pub fn cube_exact(x: [f64; 3]) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
}

/// `ΔT = −3π² T` on the unit cube; zero on every face.
pub fn cube_problem(model: MultiBlockVolume) -> HeatProblem {
    let faces = model.exterior_faces();
    HeatProblem::new(model, field(|x| -3.0 * PI * PI * cube_exact(x)))
        .with_dirichlet(faces, field(cube_exact))
        .with_exact(field(cube_exact))
}

pub fn sphere_exact(x: [f64; 3]) -> f64 {
    let q = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    x[0].sin() * x[1].sin() * x[2].sin() * (q - 121.0) * (q - 81.0)
}

/// Laplacian of [`sphere_exact`].
pub fn sphere_source(x: [f64; 3]) -> f64 {
    let q = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let (s0, s1, s2) = (x[0].sin(), x[1].sin(), x[2].sin());
    let (c0, c1, c2) = (x[0].cos(), x[1].cos(), x[2].cos());
    let s = s0 * s1 * s2;
    let pq = (q - 121.0) * (q - 81.0);
    let cross = x[0] * c0 * s1 * s2 + x[1] * s0 * c1 * s2 + x[2] * s0 * s1 * c2;
    -3.0 * s * pq + 2.0 * (4.0 * q - 404.0) * cross + s * (20.0 * q - 1212.0)
}

pub fn sphere_problem(model: MultiBlockVolume) -> HeatProblem {
    let faces = model.exterior_faces();
    HeatProblem::new(model, field(sphere_source))
        .with_dirichlet(faces, field(sphere_exact))
        .with_exact(field(sphere_exact))
}

pub fn slab_exact(x: [f64; 3]) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).sin()
}

/// Planar problem `ΔT = −2π² sin πx sin πy`; the top and bottom faces stay natural.
pub fn slab_problem(model: MultiBlockVolume) -> HeatProblem {
    HeatProblem::new(model, field(|x| -2.0 * PI * PI * slab_exact(x)))
        .with_dirichlet(vec![(0, 0), (0, 1), (0, 2), (0, 3)], field(slab_exact))
        .with_exact(field(slab_exact))
}

/// Harmonic affine field `c0 + c1 x + c2 y + c3 z` as boundary data and exact solution.
pub fn linear_problem(model: MultiBlockVolume, c: [f64; 4]) -> HeatProblem {
    let t = field(move |x| c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[2]);
    let faces = model.exterior_faces();
    HeatProblem::new(model, field(|_| 0.0)).with_dirichlet(faces, t.clone()).with_exact(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_cube;

    fn laplacian(f: fn([f64; 3]) -> f64, x: [f64; 3]) -> f64 {
        let h = 1e-3;
        let mut s = -6.0 * f(x);
        for d in 0..3 {
            let (mut a, mut b) = (x, x);
            a[d] += h;
            b[d] -= h;
            s += f(a) + f(b);
        }
        s / (h * h)
    }

    #[test]
    fn sphere_source_is_the_laplacian() {
        for x in [[5.0, 6.0, 4.0], [1.0, 2.0, 9.5], [7.0, 0.5, 6.5]] {
            let (a, b) = (sphere_source(x), laplacian(sphere_exact, x));
            assert!((a - b).abs() <= 1e-4 * a.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn sphere_blocks_are_valid_and_glued() {
        let m = hollow_sphere_octant(2, [2, 2, 1]).unwrap();
        assert_eq!(m.interfaces().len(), 3);
        for b in m.blocks() {
            for t in [[0.1, 0.2, 0.3], [0.9, 0.9, 0.9], [0.5, 0.5, 0.0]] {
                let x = b.evaluate(t);
                let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                assert!((8.9..=11.1).contains(&r) && x.iter().all(|&c| c >= -1e-9), "{x:?} {r}");
            }
        }
        // Shell volume (1/8)(4/3)π(11³ − 9³) within the interpolation error.
        let exact = PI / 6.0 * (1331.0 - 729.0);
        let vol: f64 = m
            .blocks()
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.extract_bezier(i))
            .map(|e| integrate_cube(6, |u| det3(&e.jacobian_matrix(u))))
            .sum();
        assert!((vol - exact).abs() < 1e-2 * exact, "{vol} {exact}");
        assert!(vol > 0.0);
    }

    #[test]
    fn interpolation_reproduces_samples() {
        let f = |t: [f64; 3]| [t[0].exp(), (t[1] * 2.0).sin(), t[0] * t[2]];
        let v = BSplineVolume::interpolate(knots(3, [3, 2, 2]), f).unwrap();
        for &w in &v.knots()[2].greville() {
            for &u in &v.knots()[0].greville() {
                let t = [u, v.knots()[1].greville()[1], w];
                let (a, b) = (v.evaluate(t), f(t));
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn perturbation_keeps_structure() {
        let m = curved_two_block(2, [2, 1, 1]).unwrap();
        let q = perturbed(&m, 0.05).unwrap();
        assert_eq!(q.interfaces(), m.interfaces());
        assert_eq!(q.num_dofs(), m.num_dofs());
        assert_ne!(q.blocks()[0].control(), m.blocks()[0].control());
    }

    #[test]
    fn two_block_domain_has_one_interface() {
        let m = curved_two_block(2, [2, 2, 2]).unwrap();
        assert_eq!(m.interfaces().len(), 1);
        assert_eq!(m.exterior_faces().len(), 10);
    }
}
