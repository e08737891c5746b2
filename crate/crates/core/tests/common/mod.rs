//! Brute-force reference implementations and random instance generators
//! shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use lesionseg_core::phantom::Ellipsoid;
use lesionseg_core::{BinaryPlane, Dims, Pixel, Plane, Shape};
use rand::Rng;

pub fn random_shape<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> Shape {
    Shape::new(rng.gen_range(lo..=hi), rng.gen_range(lo..=hi))
}

/// Union of random discs and rectangles.
pub fn random_blobs<R: Rng>(rng: &mut R, shape: Shape, n: usize) -> BinaryPlane {
    let mut m = BinaryPlane::filled(shape, false);
    for _ in 0..n {
        let ci = rng.gen_range(0..shape.height) as i64;
        let cj = rng.gen_range(0..shape.width) as i64;
        let max_r = (shape.height.min(shape.width) / 3).max(2) as i64;
        let r = rng.gen_range(1..=max_r);
        let disc = rng.gen_bool(0.6);
        let (ri, rj) = (r, rng.gen_range(1..=max_r));
        for i in 0..shape.height as i64 {
            for j in 0..shape.width as i64 {
                let (di, dj) = (i - ci, j - cj);
                let inside = if disc {
                    di * di + dj * dj <= r * r
                } else {
                    di.abs() <= ri && dj.abs() <= rj
                };
                if inside {
                    m[Pixel::new(i as usize, j as usize)] = true;
                }
            }
        }
    }
    m
}

pub fn random_noise<R: Rng>(rng: &mut R, shape: Shape, density: f64) -> BinaryPlane {
    Plane::from_fn(shape, |_| rng.gen_bool(density))
}

/// Mixed instance: blobs with salt-and-pepper flips.
pub fn random_mask<R: Rng>(rng: &mut R, shape: Shape) -> BinaryPlane {
    let n = rng.gen_range(0..6);
    let mut m = random_blobs(rng, shape, n);
    let flips = rng.gen_range(0..=shape.len() / 20);
    for _ in 0..flips {
        let p = Pixel::new(rng.gen_range(0..shape.height), rng.gen_range(0..shape.width));
        m[p] = !m[p];
    }
    m
}

const N4: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const N8: [(i64, i64); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

fn step(shape: Shape, p: Pixel, (di, dj): (i64, i64)) -> Option<Pixel> {
    let i = p.i as i64 + di;
    let j = p.j as i64 + dj;
    (i >= 0 && j >= 0 && (i as usize) < shape.height && (j as usize) < shape.width).then(|| Pixel::new(i as usize, j as usize))
}

/// Breadth-first flood fill. Components come out in row-major order of their
/// first pixel; pixels within a component are sorted.
pub fn flood_fill(mask: &BinaryPlane, eight: bool) -> Vec<Vec<Pixel>> {
    let shape = mask.shape();
    let mut seen = vec![false; shape.len()];
    let mut out = Vec::new();
    let nbrs: &[(i64, i64)] = if eight { &N8 } else { &N4 };
    for idx in 0..shape.len() {
        let start = shape.pixel(idx);
        if !mask[start] || seen[idx] {
            continue;
        }
        seen[idx] = true;
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            for &d in nbrs {
                if let Some(q) = step(shape, p, d) {
                    if mask[q] && !seen[shape.index(q)] {
                        seen[shape.index(q)] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out
}

/// Squared distance to the nearest source, by exhaustive minimum.
pub fn brute_sq_edt(sources: &[Pixel], shape: Shape) -> Plane<f64> {
    Plane::from_fn(shape, |p| {
        sources.iter().map(|&s| p.dist2(s)).min().expect("sources nonempty") as f64
    })
}

/// Pixels with a 4-neighbour outside the set or outside the frame.
pub fn brute_border(pixels: &[Pixel], shape: Shape) -> Vec<Pixel> {
    let member = |q: Pixel| pixels.contains(&q);
    let mut out: Vec<Pixel> = pixels
        .iter()
        .copied()
        .filter(|&p| N4.iter().any(|&d| step(shape, p, d).is_none_or(|q| !member(q))))
        .collect();
    out.sort();
    out
}

/// Exhaustive argmax of min(border distance, previous-click distance), both
/// squared, first maximum in row-major order. `None` when every pixel is border.
pub fn brute_click_point(pixels: &[Pixel], shape: Shape, prev: &[Pixel]) -> Option<(Pixel, f64)> {
    let border = brute_border(pixels, shape);
    if border.len() == pixels.len() {
        return None;
    }
    let mut sorted = pixels.to_vec();
    sorted.sort();
    let mut best: Option<(Pixel, u64)> = None;
    for &p in &sorted {
        let d_border = border.iter().map(|&b| p.dist2(b)).min().unwrap();
        let d_prev = prev.iter().map(|&c| p.dist2(c)).min().unwrap_or(u64::MAX);
        let score = d_border.min(d_prev);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((p, score));
        }
    }
    best.map(|(p, s)| (p, s as f64))
}

/// Region pixel nearest to the mean coordinate, first in row-major order on ties.
pub fn brute_center(pixels: &[Pixel]) -> Pixel {
    let n = pixels.len() as f64;
    let mi = pixels.iter().map(|p| p.i as f64).sum::<f64>() / n;
    let mj = pixels.iter().map(|p| p.j as f64).sum::<f64>() / n;
    let mut sorted = pixels.to_vec();
    sorted.sort();
    let d = |p: &Pixel| (p.i as f64 - mi).powi(2) + (p.j as f64 - mj).powi(2);
    let mut best = sorted[0];
    for p in &sorted {
        if d(p) < d(&best) {
            best = *p;
        }
    }
    best
}

pub fn count_iou(a: &[u8], b: &[u8]) -> f64 {
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.iter().zip(b) {
        if x == 1 && y == 1 {
            inter += 1;
        }
        if x == 1 || y == 1 {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Voxels of the volume that lie inside at least one ellipsoid.
pub fn lattice_count(dims: Dims, shapes: &[Ellipsoid]) -> usize {
    let mut n = 0;
    for k in 0..dims.n_slices {
        for i in 0..dims.height {
            for j in 0..dims.width {
                let hit = shapes.iter().any(|e| {
                    let a = (i as f64 - e.center[0]) / e.radii[0];
                    let b = (j as f64 - e.center[1]) / e.radii[1];
                    let c = (k as f64 - e.center[2]) / e.radii[2];
                    a * a + b * b + c * c <= 1.0
                });
                n += hit as usize;
            }
        }
    }
    n
}

pub fn gaussian(p: Pixel, c: Pixel, sigma: f64, clip: f64) -> f64 {
    let d2 = p.dist2(c) as f64;
    if d2.sqrt() < clip {
        (-d2 / (2.0 * sigma * sigma)).exp()
    } else {
        0.0
    }
}
