//! Value types shared across the engine: feature vectors, token grids and
//! annotated latent frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default latent dimension at desk scale.
pub const DEFAULT_DIM: usize = 64;
/// Default number of tokens per frame at desk scale.
pub const DEFAULT_TOKENS_PER_FRAME: usize = 64;

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// A single latent feature vector with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("feature vector must be non-empty".into()));
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl TryFrom<Vec<f32>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f32> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

impl AsRef<[f32]> for FeatureVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// The tokens of one frame, stored row-major as `len() x dim()` values.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    dim: usize,
    data: Vec<f32>,
}

impl TokenGrid {
    /// Builds a grid from flat row-major storage.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("token dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len() % dim,
            });
        }
        if data.is_empty() {
            return Err(Error::TooFewTokens { needed: 1, actual: 0 });
        }
        check_finite(&data)?;
        Ok(Self { dim, data })
    }

    /// Builds a grid from a list of equally sized tokens.
    pub fn from_tokens<T: AsRef<[f32]>>(tokens: &[T]) -> Result<Self> {
        let first = tokens.first().ok_or(Error::TooFewTokens { needed: 1, actual: 0 })?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(dim * tokens.len());
        for t in tokens {
            let t = t.as_ref();
            if t.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: t.len(),
                });
            }
            data.extend_from_slice(t);
        }
        Self::new(dim, data)
    }

    /// Skips validation; callers guarantee a non-empty, finite, well-shaped buffer.
    pub(crate) fn from_raw(dim: usize, data: Vec<f32>) -> Self {
        debug_assert!(dim > 0 && !data.is_empty() && data.len().is_multiple_of(dim));
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of tokens in the grid.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tokens(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &TokenGrid) -> bool {
        self.dim == other.dim && self.data.len() == other.data.len()
    }

    pub(crate) fn check_shape(&self, other: &TokenGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected_tokens: self.len(),
                expected_dim: self.dim,
                actual_tokens: other.len(),
                actual_dim: other.dim,
            })
        }
    }
}

/// An object instance visible in a frame.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectSighting {
    pub id: u32,
    pub category: String,
}

/// An out-of-place object inserted into a frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleMark {
    pub label: String,
    pub location: String,
    /// 1-based position of this insertion in the stream's needle sequence.
    pub order_index: u8,
}

/// Ground-truth annotation carried alongside each frame.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub scene_id: u32,
    #[serde(default)]
    pub objects: Vec<ObjectSighting>,
    #[serde(default)]
    pub needle: Option<NeedleMark>,
}

/// One timestep of a stream. One frame corresponds to one second of video.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentFrame {
    pub timestamp: u64,
    pub grid: TokenGrid,
    pub annotation: FrameAnnotation,
}
