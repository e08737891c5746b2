//! Dense 2D planes and pixel coordinates.

use serde::{Deserialize, Serialize};

/// A pixel coordinate. `i` is the row (height axis), `j` the column.
///
/// Ordering is row-major (`i` first, then `j`), which is the tie-break
/// order used by every selection routine in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pixel {
    pub i: usize,
    pub j: usize,
}

impl Pixel {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    /// Squared Euclidean distance in pixel units.
    pub fn dist2(self, other: Pixel) -> u64 {
        let di = self.i.abs_diff(other.i) as u64;
        let dj = self.j.abs_diff(other.j) as u64;
        di * di + dj * dj
    }

    pub fn dist(self, other: Pixel) -> f64 {
        (self.dist2(other) as f64).sqrt()
    }
}

/// Height and width of a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub const fn len(self) -> usize {
        self.height * self.width
    }

    pub const fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn contains(self, p: Pixel) -> bool {
        p.i < self.height && p.j < self.width
    }

    pub fn index(self, p: Pixel) -> usize {
        p.i * self.width + p.j
    }

    pub fn pixel(self, index: usize) -> Pixel {
        Pixel::new(index / self.width, index % self.width)
    }
}

/// Row-major 2D array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane<T> {
    shape: Shape,
    data: Vec<T>,
}

/// Binary slice mask.
pub type BinaryPlane = Plane<bool>;

impl<T: Clone> Plane<T> {
    pub fn filled(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }
}

impl<T> Plane<T> {
    /// Wraps row-major data. Returns `None` when the length does not match.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Option<Self> {
        (data.len() == shape.len()).then_some(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(Pixel) -> T) -> Self {
        let data = (0..shape.len()).map(|idx| f(shape.pixel(idx))).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, p: Pixel) -> Option<&T> {
        self.shape.contains(p).then(|| &self.data[self.shape.index(p)])
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Plane<U> {
        Plane {
            shape: self.shape,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Iterates `(pixel, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (Pixel, &T)> + '_ {
        let shape = self.shape;
        self.data
            .iter()
            .enumerate()
            .map(move |(idx, v)| (shape.pixel(idx), v))
    }
}

impl<T> std::ops::Index<Pixel> for Plane<T> {
    type Output = T;

    fn index(&self, p: Pixel) -> &T {
        assert!(self.shape.contains(p), "pixel {p:?} outside {:?}", self.shape);
        &self.data[self.shape.index(p)]
    }
}

impl<T> std::ops::IndexMut<Pixel> for Plane<T> {
    fn index_mut(&mut self, p: Pixel) -> &mut T {
        assert!(self.shape.contains(p), "pixel {p:?} outside {:?}", self.shape);
        let idx = self.shape.index(p);
        &mut self.data[idx]
    }
}

impl BinaryPlane {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    pub fn foreground(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.iter().filter(|(_, &b)| b).map(|(p, _)| p)
    }

    /// Pixel-wise `self ∧ ¬other`. Shapes must match.
    pub fn and_not(&self, other: &BinaryPlane) -> BinaryPlane {
        debug_assert_eq!(self.shape, other.shape);
        Plane {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && !b)
                .collect(),
        }
    }
}

/// 8-neighbourhood offsets in row-major order.
pub(crate) const NEIGHBORS_8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

pub(crate) const NEIGHBORS_4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

pub(crate) fn offset(shape: Shape, p: Pixel, (di, dj): (isize, isize)) -> Option<Pixel> {
    let i = p.i.checked_add_signed(di)?;
    let j = p.j.checked_add_signed(dj)?;
    let q = Pixel::new(i, j);
    shape.contains(q).then_some(q)
}
