//! Run-length encoding of binary slice masks.
//!
//! Wire form: `{"shape":[H,W],"runs":[start,length,start,length,...]}` over
//! the row-major flattening. Runs are strictly increasing and never touch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plane::{BinaryPlane, Plane, Shape};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RleError {
    #[error("runs array has odd length {0}")]
    OddLength(usize),
    #[error("run {index} has zero length")]
    EmptyRun { index: usize },
    #[error("run {index} overlaps or touches the previous run")]
    Unordered { index: usize },
    #[error("run {index} extends past the end of the mask")]
    OutOfBounds { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub shape: [usize; 2],
    pub runs: Vec<usize>,
}

impl Rle {
    pub fn encode(mask: &BinaryPlane) -> Self {
        let mut runs = Vec::new();
        let mut start = None;
        for (idx, &b) in mask.as_slice().iter().enumerate() {
            match (b, start) {
                (true, None) => start = Some(idx),
                (false, Some(s)) => {
                    runs.extend([s, idx - s]);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.extend([s, mask.as_slice().len() - s]);
        }
        Self {
            shape: [mask.height(), mask.width()],
            runs,
        }
    }

    pub fn decode(&self) -> Result<BinaryPlane, RleError> {
        if !self.runs.len().is_multiple_of(2) {
            return Err(RleError::OddLength(self.runs.len()));
        }
        let shape = Shape::new(self.shape[0], self.shape[1]);
        let mut data = vec![false; shape.len()];
        let mut end_prev: Option<usize> = None;
        for (index, pair) in self.runs.chunks_exact(2).enumerate() {
            let (start, len) = (pair[0], pair[1]);
            if len == 0 {
                return Err(RleError::EmptyRun { index });
            }
            if end_prev.is_some_and(|e| start <= e) {
                return Err(RleError::Unordered { index });
            }
            let end = start.checked_add(len).filter(|&e| e <= data.len());
            let Some(end) = end else {
                return Err(RleError::OutOfBounds { index });
            };
            data[start..end].fill(true);
            end_prev = Some(end);
        }
        Ok(Plane::from_vec(shape, data).expect("sized from shape"))
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}
