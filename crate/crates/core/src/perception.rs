//! Synthetic stereo camera and detection losses.
//!
//! The camera sits at the body origin looking along body +x. Camera
//! coordinates are (right, down, forward) = body (y, z, x), so a point in
//! front of the rig has positive camera depth.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::RigidBodyState;

/// Smallest camera depth accepted by the projection, m.
pub const MIN_DEPTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PerceptionError {
    #[error("target is behind or too close to the camera (depth {depth} m)")]
    BehindCamera { depth: f64 },
    #[error("disparity {disparity} px is at or below the {min} px floor")]
    DegenerateDisparity { disparity: f64, min: f64 },
    #[error("observation is not valid")]
    InvalidObservation,
    #[error("probability {0} outside (0, 1)")]
    DomainError(f64),
    #[error("boxes do not intersect")]
    DisjointBoxes,
    #[error("box corners are not ordered")]
    InvalidBox,
    #[error("anchor set is empty")]
    EmptyAnchorSet,
    #[error("no positive anchors")]
    NoPositiveAnchors,
    #[error("invalid camera rig: {0}")]
    InvalidRig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraRig {
    /// Focal lengths, px.
    pub f_u: f64,
    pub f_v: f64,
    /// Principal point, px.
    pub c_u: f64,
    pub c_v: f64,
    /// Stereo baseline, m.
    pub baseline: f64,
    pub width: u32,
    pub height: u32,
    /// Disparity floor below which depth is not reconstructed, px.
    pub min_disparity: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            f_u: 500.0,
            f_v: 500.0,
            c_u: 640.0,
            c_v: 480.0,
            baseline: 0.15,
            width: 1280,
            height: 960,
            min_disparity: 0.5,
        }
    }
}

impl CameraRig {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !(self.f_u > 0.0 && self.f_v > 0.0) {
            return Err(PerceptionError::InvalidRig("focal lengths must be positive"));
        }
        if !(self.baseline > 0.0) {
            return Err(PerceptionError::InvalidRig("baseline must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(PerceptionError::InvalidRig("image must be non-empty"));
        }
        if !(self.min_disparity >= 0.0) {
            return Err(PerceptionError::InvalidRig("disparity floor must be >= 0"));
        }
        Ok(())
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        (0.0..self.width as f64).contains(&u) && (0.0..self.height as f64).contains(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoObservation {
    /// Left-image pixel coordinates.
    pub u: f64,
    pub v: f64,
    /// Disparity, px.
    pub disparity: f64,
    pub valid: bool,
}

/// Noise and dropout applied by [`observe`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PixelNoise {
    /// Standard deviation on u, v and disparity, px.
    pub sigma: f64,
    /// Probability that a frame is reported invalid.
    pub dropout: f64,
}

pub fn body_to_camera(p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(p.y, p.z, p.x)
}

pub fn camera_to_body(p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(p.z, p.x, p.y)
}

/// Noiseless pinhole projection of a camera-frame point.
pub fn project(p_cam: &Vector3<f64>, rig: &CameraRig) -> Result<StereoObservation, PerceptionError> {
    let z = p_cam.z;
    if !(z > MIN_DEPTH) {
        return Err(PerceptionError::BehindCamera { depth: z });
    }
    let u = rig.c_u + rig.f_u * p_cam.x / z;
    let v = rig.c_v + rig.f_v * p_cam.y / z;
    Ok(StereoObservation {
        u,
        v,
        disparity: rig.f_u * rig.baseline / z,
        valid: rig.in_image(u, v),
    })
}

/// Camera-frame position of an earth-frame point seen from `state`.
pub fn earth_to_camera(target: &Vector3<f64>, state: &RigidBodyState) -> Vector3<f64> {
    body_to_camera(&(state.body_to_earth().transpose() * (target - state.position)))
}

/// Project `target` into the left image, adding Gaussian pixel noise.
///
/// Exactly three normal draws and one uniform draw are consumed per call,
/// regardless of the noise level, so runs differing only in `sigma` share
/// their random stream.
pub fn observe<R: Rng>(
    target: &Vector3<f64>,
    state: &RigidBodyState,
    rig: &CameraRig,
    noise: &PixelNoise,
    rng: &mut R,
) -> Result<StereoObservation, PerceptionError> {
    let exact = project(&earth_to_camera(target, state), rig)?;
    let mut n = || -> f64 { rng.sample(StandardNormal) };
    let (nu, nv, ny) = (n(), n(), n());
    let dropped = rng.random::<f64>() < noise.dropout;
    let u = exact.u + noise.sigma * nu;
    let v = exact.v + noise.sigma * nv;
    Ok(StereoObservation {
        u,
        v,
        disparity: exact.disparity + noise.sigma * ny,
        valid: !dropped && rig.in_image(u, v),
    })
}

/// Invert the stereo projection to a camera-frame point.
pub fn reconstruct(obs: &StereoObservation, rig: &CameraRig) -> Result<Vector3<f64>, PerceptionError> {
    if !obs.valid {
        return Err(PerceptionError::InvalidObservation);
    }
    if !(obs.disparity > rig.min_disparity) {
        return Err(PerceptionError::DegenerateDisparity {
            disparity: obs.disparity,
            min: rig.min_disparity,
        });
    }
    let z = rig.f_u * rig.baseline / obs.disparity;
    Ok(Vector3::new(
        (obs.u - rig.c_u) * z / rig.f_u,
        (obs.v - rig.c_v) * z / rig.f_v,
        z,
    ))
}

/// Earth-frame vector from the vehicle to the observed point.
pub fn relative_position(
    obs: &StereoObservation,
    state: &RigidBodyState,
    rig: &CameraRig,
) -> Result<Vector3<f64>, PerceptionError> {
    Ok(state.body_to_earth() * camera_to_body(&reconstruct(obs, rig)?))
}

/// `-nu (1 - p_t)^tau ln p_t` with `p_t = p` for positives and `1 - p`
/// otherwise.
pub fn focal_loss(p: f64, positive: bool, nu: f64, tau: f64) -> Result<f64, PerceptionError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(PerceptionError::DomainError(p));
    }
    let pt = if positive { p } else { 1.0 - p };
    Ok(-nu * (1.0 - pt).powf(tau) * pt.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, PerceptionError> {
        if !(x1 < x2 && y1 < y2) {
            return Err(PerceptionError::InvalidBox);
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn intersection_area(&self, other: &Self) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let i = self.intersection_area(other);
        i / (self.area() + other.area() - i)
    }
}

/// `-ln IoU`.
pub fn iou_loss(predicted: &BoundingBox, truth: &BoundingBox) -> Result<f64, PerceptionError> {
    for b in [predicted, truth] {
        if !(b.x1 < b.x2 && b.y1 < b.y2) {
            return Err(PerceptionError::InvalidBox);
        }
    }
    if predicted.intersection_area(truth) <= 0.0 {
        return Err(PerceptionError::DisjointBoxes);
    }
    Ok(-predicted.iou(truth).ln())
}

/// Classification output for one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifiedAnchor {
    pub probability: f64,
    pub positive: bool,
}

/// Two-step classification loss: the focal loss averaged over each step's
/// anchors, summed across the two steps.
pub fn stc_loss(
    first: &[ClassifiedAnchor],
    second: &[ClassifiedAnchor],
    nu: f64,
    tau: f64,
) -> Result<f64, PerceptionError> {
    let mean = |set: &[ClassifiedAnchor]| -> Result<f64, PerceptionError> {
        if set.is_empty() {
            return Err(PerceptionError::EmptyAnchorSet);
        }
        let mut sum = 0.0;
        for a in set {
            sum += focal_loss(a.probability, a.positive, nu, tau)?;
        }
        Ok(sum / set.len() as f64)
    };
    Ok(mean(first)? + mean(second)?)
}

/// Box regression output for one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressedAnchor {
    pub predicted: BoundingBox,
    pub truth: BoundingBox,
    pub positive: bool,
}

/// Two-step regression loss: the IoU loss over positive anchors only,
/// averaged per step over the positive count and summed across steps.
pub fn str_loss(first: &[RegressedAnchor], second: &[RegressedAnchor]) -> Result<f64, PerceptionError> {
    let mean = |set: &[RegressedAnchor]| -> Result<f64, PerceptionError> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for a in set.iter().filter(|a| a.positive) {
            sum += iou_loss(&a.predicted, &a.truth)?;
            count += 1;
        }
        if count == 0 {
            return Err(PerceptionError::NoPositiveAnchors);
        }
        Ok(sum / count as f64)
    };
    Ok(mean(first)? + mean(second)?)
}
