//! Geometry kernels on binary slice masks: connected components, region
//! borders, Euclidean distance transforms and click-point selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plane::{offset, BinaryPlane, Pixel, Plane, Shape, NEIGHBORS_4, NEIGHBORS_8};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegionError {
    #[error("region must contain at least one pixel")]
    EmptyRegion,
    #[error("pixel {0:?} lies outside the frame")]
    OutOfFrame(Pixel),
    #[error("distance transform needs at least one source point")]
    EmptyPoints,
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Shape, Shape),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &NEIGHBORS_4,
            Connectivity::Eight => &NEIGHBORS_8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub i_min: usize,
    pub i_max: usize,
    pub j_min: usize,
    pub j_max: usize,
}

impl BBox {
    pub fn shape(&self) -> Shape {
        Shape::new(self.i_max - self.i_min + 1, self.j_max - self.j_min + 1)
    }
}

/// A connected set of foreground pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub label: u32,
    frame: Shape,
    /// Sorted row-major.
    pixels: Vec<Pixel>,
    /// Pixels with a 4-neighbour outside the region or outside the frame. Sorted.
    border: Vec<Pixel>,
    bbox: BBox,
}

impl Region {
    /// Builds a region from an arbitrary pixel set inside `frame`.
    /// Connectivity of the set is not checked.
    pub fn from_pixels(
        label: u32,
        frame: Shape,
        pixels: impl IntoIterator<Item = Pixel>,
    ) -> Result<Self, RegionError> {
        let mut pixels: Vec<Pixel> = pixels.into_iter().collect();
        pixels.sort_unstable();
        pixels.dedup();
        if pixels.is_empty() {
            return Err(RegionError::EmptyRegion);
        }
        if let Some(&p) = pixels.iter().find(|&&p| !frame.contains(p)) {
            return Err(RegionError::OutOfFrame(p));
        }
        let mut bbox = BBox {
            i_min: usize::MAX,
            i_max: 0,
            j_min: usize::MAX,
            j_max: 0,
        };
        for p in &pixels {
            bbox.i_min = bbox.i_min.min(p.i);
            bbox.i_max = bbox.i_max.max(p.i);
            bbox.j_min = bbox.j_min.min(p.j);
            bbox.j_max = bbox.j_max.max(p.j);
        }
        // Membership grid over the bounding box.
        let local = bbox.shape();
        let mut inside = vec![false; local.len()];
        for p in &pixels {
            inside[local.index(Pixel::new(p.i - bbox.i_min, p.j - bbox.j_min))] = true;
        }
        let member = |q: Pixel| {
            q.i >= bbox.i_min
                && q.i <= bbox.i_max
                && q.j >= bbox.j_min
                && q.j <= bbox.j_max
                && inside[local.index(Pixel::new(q.i - bbox.i_min, q.j - bbox.j_min))]
        };
        let border = pixels
            .iter()
            .copied()
            .filter(|&p| {
                NEIGHBORS_4
                    .iter()
                    .any(|&d| offset(frame, p, d).is_none_or(|q| !member(q)))
            })
            .collect();
        Ok(Self {
            label,
            frame,
            pixels,
            border,
            bbox,
        })
    }

    pub fn frame(&self) -> Shape {
        self.frame
    }

    pub fn pixels(&self) -> &[Pixel] {
        &self.pixels
    }

    pub fn border(&self) -> &[Pixel] {
        &self.border
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn contains(&self, p: Pixel) -> bool {
        self.pixels.binary_search(&p).is_ok()
    }

    pub fn is_all_border(&self) -> bool {
        self.border.len() == self.pixels.len()
    }

    pub fn to_mask(&self) -> BinaryPlane {
        let mut m = BinaryPlane::filled(self.frame, false);
        for &p in &self.pixels {
            m[p] = true;
        }
        m
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels connected foreground components with a two-pass union-find scan.
///
/// Returns a plane of labels (0 = background, regions numbered from 1 in
/// row-major order of their first pixel) and the number of regions.
pub fn label_components(mask: &BinaryPlane, connectivity: Connectivity) -> (Plane<u32>, usize) {
    let shape = mask.shape();
    let mut provisional = Plane::filled(shape, u32::MAX);
    let mut sets = DisjointSet::new();
    // Neighbours already visited in a row-major scan.
    let prior: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
    };
    for idx in 0..shape.len() {
        let p = shape.pixel(idx);
        if !mask[p] {
            continue;
        }
        let mut current: Option<u32> = None;
        for &d in prior {
            let Some(q) = offset(shape, p, d) else { continue };
            let lq = provisional[q];
            if lq == u32::MAX {
                continue;
            }
            match current {
                None => current = Some(lq),
                Some(c) => sets.union(c, lq),
            }
        }
        provisional[p] = current.unwrap_or_else(|| sets.make());
    }

    let mut remap = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let mut labels = Plane::filled(shape, 0u32);
    for idx in 0..shape.len() {
        let p = shape.pixel(idx);
        let l = provisional[p];
        if l == u32::MAX {
            continue;
        }
        let root = sets.find(l) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        labels[p] = remap[root];
    }
    (labels, next as usize)
}

/// Partitions the foreground of `mask` into connected regions.
pub fn connected_components(mask: &BinaryPlane, connectivity: Connectivity) -> Vec<Region> {
    let shape = mask.shape();
    let (labels, n) = label_components(mask, connectivity);
    let mut buckets: Vec<Vec<Pixel>> = vec![Vec::new(); n];
    for (p, &l) in labels.iter() {
        if l > 0 {
            buckets[(l - 1) as usize].push(p);
        }
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(idx, pixels)| {
            Region::from_pixels(idx as u32 + 1, shape, pixels).expect("component is nonempty")
        })
        .collect()
}

/// Region containing `seed`, if `seed` is foreground.
pub fn component_at(mask: &BinaryPlane, seed: Pixel, connectivity: Connectivity) -> Option<Region> {
    if !mask.get(seed).copied().unwrap_or(false) {
        return None;
    }
    let shape = mask.shape();
    let mut seen = BinaryPlane::filled(shape, false);
    let mut stack = vec![seed];
    let mut pixels = Vec::new();
    seen[seed] = true;
    while let Some(p) = stack.pop() {
        pixels.push(p);
        for &d in connectivity.offsets() {
            if let Some(q) = offset(shape, p, d) {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    Some(Region::from_pixels(0, shape, pixels).expect("seed is foreground"))
}

const UNREACHED: f64 = f64::INFINITY;

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas). `f` and `out` have equal length.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // Skip leading unreachable samples so the envelope starts at a finite one.
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.fill(UNREACHED);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let vk = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + vk * vk)) / (2.0 * qf - 2.0 * vk);
            if s <= z[k] {
                // k never underflows: z[0] is -inf.
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *slot = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel of `shape` to the
/// nearest source pixel. Values are integral.
pub fn squared_distance_transform(
    sources: impl IntoIterator<Item = Pixel>,
    shape: Shape,
) -> Result<Plane<f64>, RegionError> {
    let mut grid = Plane::filled(shape, UNREACHED);
    let mut any = false;
    for p in sources {
        if !shape.contains(p) {
            return Err(RegionError::OutOfFrame(p));
        }
        grid[p] = 0.0;
        any = true;
    }
    if !any {
        return Err(RegionError::EmptyPoints);
    }
    let (h, w) = (shape.height, shape.width);
    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    // Columns first, then rows.
    for j in 0..w {
        for i in 0..h {
            f[i] = grid[Pixel::new(i, j)];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for i in 0..h {
            grid[Pixel::new(i, j)] = out[i];
        }
    }
    for i in 0..h {
        let row = &mut grid.as_mut_slice()[i * w..(i + 1) * w];
        f[..w].copy_from_slice(row);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        row.copy_from_slice(&out[..w]);
    }
    Ok(grid)
}

/// Euclidean distance from every pixel of the domain to the nearest point.
pub fn distance_transform(
    points: impl IntoIterator<Item = Pixel>,
    shape: Shape,
) -> Result<Plane<f64>, RegionError> {
    Ok(squared_distance_transform(points, shape)?.map(|d| d.sqrt()))
}

/// The region pixel nearest to the mean pixel coordinate (row-major ties).
pub fn center_of_mass(region: &Region) -> Pixel {
    let n = region.area() as f64;
    let (si, sj) = region
        .pixels()
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.i as f64, b + p.j as f64));
    let (mi, mj) = (si / n, sj / n);
    let mut best = region.pixels()[0];
    let mut best_d = f64::INFINITY;
    for &p in region.pixels() {
        let d = (p.i as f64 - mi).powi(2) + (p.j as f64 - mj).powi(2);
        if d < best_d {
            best_d = d;
            best = p;
        }
    }
    best
}

/// Picks the click point farthest from both the region border and the
/// previous clicks.
///
/// Each pixel scores `min(distance to nearest border pixel, distance to
/// nearest previous click)`; the highest score wins with row-major ties.
/// Returns `None` when the region has no interior (every pixel is border).
pub fn farthest_point(region: &Region, prev_clicks: &[Pixel]) -> Option<Pixel> {
    farthest_point_scored(region, prev_clicks).map(|(p, _)| p)
}

/// [`farthest_point`] together with the winning squared score.
pub fn farthest_point_scored(region: &Region, prev_clicks: &[Pixel]) -> Option<(Pixel, f64)> {
    if region.is_all_border() {
        return None;
    }
    let bbox = region.bbox();
    let local = bbox.shape();
    let to_local = |p: Pixel| Pixel::new(p.i - bbox.i_min, p.j - bbox.j_min);
    let border_d2 = squared_distance_transform(region.border().iter().map(|&p| to_local(p)), local)
        .expect("border is nonempty");

    let mut best: Option<(Pixel, f64)> = None;
    for &p in region.pixels() {
        let mut score = border_d2[to_local(p)];
        for &c in prev_clicks {
            score = score.min(p.dist2(c) as f64);
        }
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((p, score));
        }
    }
    best
}

/// Mislabeled connected regions of a prediction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ErrorRegions {
    /// gt = 1, pred = 0.
    pub false_negative: Vec<Region>,
    /// gt = 0, pred = 1.
    pub false_positive: Vec<Region>,
}

impl ErrorRegions {
    pub fn is_empty(&self) -> bool {
        self.false_negative.is_empty() && self.false_positive.is_empty()
    }
}

pub fn error_regions(
    gt: &BinaryPlane,
    pred: &BinaryPlane,
    connectivity: Connectivity,
) -> Result<ErrorRegions, RegionError> {
    if gt.shape() != pred.shape() {
        return Err(RegionError::ShapeMismatch(gt.shape(), pred.shape()));
    }
    Ok(ErrorRegions {
        false_negative: connected_components(&gt.and_not(pred), connectivity),
        false_positive: connected_components(&pred.and_not(gt), connectivity),
    })
}

/// Largest region by area; ties go to the smallest label.
pub fn largest_region(regions: &[Region]) -> Option<&Region> {
    regions.iter().fold(None, |best: Option<&Region>, r| match best {
        Some(b) if b.area() > r.area() || (b.area() == r.area() && b.label <= r.label) => Some(b),
        _ => Some(r),
    })
}
