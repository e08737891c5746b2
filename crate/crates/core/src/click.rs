//! Expert clicks, the per-scan click cache, and Gaussian click-mask encoding.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plane::{Pixel, Plane, Shape};

#[derive(Debug, Error, PartialEq)]
pub enum ClickError {
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("clip radius must be positive, got {0}")]
    BadClipRadius(f64),
    #[error("click at {position:?} on slice {slice} is outside {shape:?} x {n_slices} slices")]
    OutOfBounds {
        slice: usize,
        position: Pixel,
        shape: Shape,
        n_slices: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

impl Polarity {
    pub fn opposite(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Click {
    pub slice: usize,
    pub position: Pixel,
    pub polarity: Polarity,
}

/// Gaussian click-encoding parameters, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickEncoding {
    pub sigma: f64,
    pub clip_radius: f64,
}

impl Default for ClickEncoding {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            clip_radius: 30.0,
        }
    }
}

impl ClickEncoding {
    pub fn validate(&self) -> Result<(), ClickError> {
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(ClickError::BadSigma(self.sigma));
        }
        if self.clip_radius.is_nan() || self.clip_radius <= 0.0 {
            return Err(ClickError::BadClipRadius(self.clip_radius));
        }
        Ok(())
    }
}

/// Sum of clipped Gaussians centred on a set of same-polarity clicks.
/// Values are unbounded above where Gaussians overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickMask {
    pub plane: Plane<f64>,
    pub sigma: f64,
    pub clip_radius: f64,
}

impl ClickMask {
    pub fn zeros(shape: Shape, enc: ClickEncoding) -> Self {
        Self {
            plane: Plane::filled(shape, 0.0),
            sigma: enc.sigma,
            clip_radius: enc.clip_radius,
        }
    }
}

pub fn encode_clicks(clicks: &[Pixel], shape: Shape, enc: ClickEncoding) -> Result<ClickMask, ClickError> {
    enc.validate()?;
    let mut mask = ClickMask::zeros(shape, enc);
    let two_sigma2 = 2.0 * enc.sigma * enc.sigma;
    let clip2 = enc.clip_radius * enc.clip_radius;
    // Pixels strictly inside clip_radius lie within this many rows/cols.
    let reach = enc.clip_radius.ceil() as usize;
    for &c in clicks {
        let i_lo = c.i.saturating_sub(reach);
        let i_hi = (c.i + reach).min(shape.height.saturating_sub(1));
        let j_lo = c.j.saturating_sub(reach);
        let j_hi = (c.j + reach).min(shape.width.saturating_sub(1));
        for i in i_lo..=i_hi {
            for j in j_lo..=j_hi {
                let p = Pixel::new(i, j);
                let d2 = p.dist2(c) as f64;
                if d2 < clip2 {
                    mask.plane[p] += (-d2 / two_sigma2).exp();
                }
            }
        }
    }
    Ok(mask)
}

/// Clicks recorded on one slice.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceClicks {
    pub positive: Vec<Pixel>,
    pub negative: Vec<Pixel>,
}

impl SliceClicks {
    pub fn of(&self, polarity: Polarity) -> &[Pixel] {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }

    fn of_mut(&mut self, polarity: Polarity) -> &mut Vec<Pixel> {
        match polarity {
            Polarity::Positive => &mut self.positive,
            Polarity::Negative => &mut self.negative,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty() && self.negative.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddOutcome {
    Accepted,
    /// The slice already holds the maximum number of clicks of this polarity.
    AtCap,
    Duplicate,
}

impl AddOutcome {
    pub fn is_accepted(self) -> bool {
        self == AddOutcome::Accepted
    }
}

/// Cache settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    /// Per slice, per polarity.
    pub max_per_polarity: usize,
    pub reset_probability: f64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            max_per_polarity: 12,
            reset_probability: 0.0,
        }
    }
}

/// All clicks placed on one scan, keyed by slice.
#[derive(Debug, Clone)]
pub struct ClickCache {
    shape: Shape,
    n_slices: usize,
    config: CacheConfig,
    slices: BTreeMap<usize, SliceClicks>,
    rng: ChaCha8Rng,
}

static EMPTY: SliceClicks = SliceClicks {
    positive: Vec::new(),
    negative: Vec::new(),
};

impl ClickCache {
    pub fn new(shape: Shape, n_slices: usize, config: CacheConfig, rng_seed: u64) -> Self {
        Self {
            shape,
            n_slices,
            config,
            slices: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn config(&self) -> CacheConfig {
        self.config
    }

    pub fn slice(&self, k: usize) -> &SliceClicks {
        self.slices.get(&k).unwrap_or(&EMPTY)
    }

    pub fn len(&self) -> usize {
        self.slices
            .values()
            .map(|s| s.positive.len() + s.negative.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn at_cap(&self, k: usize, polarity: Polarity) -> bool {
        self.slice(k).of(polarity).len() >= self.config.max_per_polarity
    }

    pub fn add(&mut self, click: Click) -> Result<AddOutcome, ClickError> {
        if click.slice >= self.n_slices || !self.shape.contains(click.position) {
            return Err(ClickError::OutOfBounds {
                slice: click.slice,
                position: click.position,
                shape: self.shape,
                n_slices: self.n_slices,
            });
        }
        let cap = self.config.max_per_polarity;
        let list = self.slices.entry(click.slice).or_default().of_mut(click.polarity);
        if list.contains(&click.position) {
            return Ok(AddOutcome::Duplicate);
        }
        if list.len() >= cap {
            return Ok(AddOutcome::AtCap);
        }
        list.push(click.position);
        Ok(AddOutcome::Accepted)
    }

    /// Clears the whole cache with the configured probability.
    pub fn maybe_reset(&mut self) -> bool {
        let p = self.config.reset_probability;
        let reset = p >= 1.0 || (p > 0.0 && self.rng.gen_bool(p));
        if reset {
            self.slices.clear();
        }
        reset
    }

    /// Positive and negative click masks for slice `k`.
    pub fn masks_for_slice(&self, k: usize, enc: ClickEncoding) -> Result<(ClickMask, ClickMask), ClickError> {
        let s = self.slice(k);
        Ok((
            encode_clicks(&s.positive, self.shape, enc)?,
            encode_clicks(&s.negative, self.shape, enc)?,
        ))
    }
}
