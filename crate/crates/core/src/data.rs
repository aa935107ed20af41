//! Keypoint tracks observed across images.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, NormalizedPoint};

/// Pixel observations indexed `[track][image]`; `None` marks an invisible point.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    n_images: usize,
    tracks: Vec<Vec<Option<Vector2<f64>>>>,
}

impl CorrespondenceSet {
    pub fn new(n_images: usize, tracks: Vec<Vec<Option<Vector2<f64>>>>) -> Result<Self> {
        if n_images == 0 {
            return Err(Error::InvalidInput("correspondence set needs at least one image".into()));
        }
        for (j, t) in tracks.iter().enumerate() {
            if t.len() != n_images {
                return Err(Error::InvalidInput(format!("track {j} has {} entries, expected {n_images}", t.len())));
            }
            if t.iter().flatten().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(Error::NonFinite("correspondence pixel"));
            }
        }
        Ok(Self { n_images, tracks })
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    pub fn n_tracks(&self) -> usize {
        self.tracks.len()
    }

    pub fn get(&self, track: usize, image: usize) -> Option<Vector2<f64>> {
        self.tracks[track][image]
    }

    pub fn track(&self, track: usize) -> &[Option<Vector2<f64>>] {
        &self.tracks[track]
    }

    pub fn is_visible(&self, track: usize, image: usize) -> bool {
        self.tracks[track][image].is_some()
    }

    pub fn observation_count(&self) -> usize {
        self.tracks.iter().map(|t| t.iter().flatten().count()).sum()
    }

    /// Normalized coordinates; fails if any visible observation falls outside the sanity bound.
    pub fn normalized(&self, k: &CameraIntrinsics) -> Result<Vec<Vec<Option<NormalizedPoint>>>> {
        self.tracks
            .iter()
            .map(|t| t.iter().map(|p| p.map(|q| k.normalize(q)).transpose()).collect())
            .collect()
    }
}
