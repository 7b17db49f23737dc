//! Skeleton topologies, coordinate conventions, root-relative transforms and
//! left/right flip augmentation.
//!
//! 2D poses live in normalized image units (both axes divided by image width,
//! centered so x spans [-1, 1]); 3D poses are millimeters relative to the root
//! joint. Flipping operates in these normalized/root-relative spaces, so no
//! image geometry is needed at flip time.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Joint topology: joint count, root joint, and the left/right joint pairing
/// used by horizontal flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub name: String,
    pub joint_count: usize,
    pub root_index: usize,
    /// (left_index, right_index) pairs swapped by a horizontal flip.
    pub flip_pairs: Vec<(usize, usize)>,
    pub joint_names: Vec<String>,
}

impl SkeletonSpec {
    /// The 17-joint convention used for Human3.6M-style data.
    pub fn h36m_17() -> Self {
        let names = [
            "hip", "r_hip", "r_knee", "r_foot", "l_hip", "l_knee", "l_foot", "spine", "thorax",
            "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
        ];
        SkeletonSpec {
            name: "h36m_17".to_string(),
            joint_count: 17,
            root_index: 0,
            flip_pairs: vec![(4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16)],
            joint_names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The 15-joint convention used for HumanEva-style data.
    pub fn eva_15() -> Self {
        let names = [
            "pelvis", "thorax", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow",
            "r_wrist", "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle", "head",
        ];
        SkeletonSpec {
            name: "eva_15".to_string(),
            joint_count: 15,
            root_index: 0,
            flip_pairs: vec![(2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13)],
            joint_names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Look up a built-in skeleton by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "h36m_17" => Some(Self::h36m_17()),
            "eva_15" => Some(Self::eva_15()),
            _ => None,
        }
    }

    /// Check the structural invariants: indices in range, flip-pair indices
    /// pairwise distinct, and the root joint not part of any pair.
    pub fn validate(&self) -> Result<()> {
        let j = self.joint_count;
        if j == 0 {
            return Err(Error::config("skeleton joint_count must be positive"));
        }
        if self.root_index >= j {
            return Err(Error::config(format!(
                "skeleton root_index {} out of range for {} joints",
                self.root_index, j
            )));
        }
        if self.joint_names.len() != j {
            return Err(Error::config(format!(
                "skeleton has {} joint names for {} joints",
                self.joint_names.len(),
                j
            )));
        }
        let mut seen = vec![false; j];
        for &(l, r) in &self.flip_pairs {
            if l >= j || r >= j {
                return Err(Error::config(format!(
                    "flip pair ({l}, {r}) out of range for {j} joints"
                )));
            }
            if l == r || seen[l] || seen[r] {
                return Err(Error::config(format!(
                    "flip pair ({l}, {r}) repeats a joint index"
                )));
            }
            seen[l] = true;
            seen[r] = true;
            if l == self.root_index || r == self.root_index {
                return Err(Error::config("root joint cannot be part of a flip pair"));
            }
        }
        Ok(())
    }
}

/// A single 2D pose in normalized image units.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose2D {
    pub coords: Vec<[f64; 2]>,
}

/// A single root-relative 3D pose in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub coords: Vec<[f64; 3]>,
}

impl Pose2D {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite 2D pose coordinates"));
        }
        Ok(Pose2D { coords })
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len()
    }

    /// Horizontal flip: negate x for every joint, then swap left/right rows.
    pub fn flipped(&self, spec: &SkeletonSpec) -> Result<Pose2D> {
        let mut coords = self.coords.clone();
        flip_rows(&mut coords, spec, self.coords.len())?;
        Ok(Pose2D { coords })
    }
}

impl Pose3D {
    pub fn new(coords: Vec<[f64; 3]>) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite 3D pose coordinates"));
        }
        Ok(Pose3D { coords })
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len()
    }

    pub fn flipped(&self, spec: &SkeletonSpec) -> Result<Pose3D> {
        let mut coords = self.coords.clone();
        flip_rows(&mut coords, spec, self.coords.len())?;
        Ok(Pose3D { coords })
    }
}

fn flip_rows<const D: usize>(
    rows: &mut [[f64; D]],
    spec: &SkeletonSpec,
    joints: usize,
) -> Result<()> {
    if joints != spec.joint_count {
        return Err(Error::shape(format!(
            "pose has {joints} joints, skeleton '{}' expects {}",
            spec.name, spec.joint_count
        )));
    }
    for row in rows.iter_mut() {
        row[0] = -row[0];
    }
    for &(l, r) in &spec.flip_pairs {
        rows.swap(l, r);
    }
    Ok(())
}

/// Map pixel coordinates into normalized image units. Both axes are divided
/// by the image width so the aspect ratio is preserved and a horizontal flip
/// is exactly `x -> -x` in normalized space:
/// `x' = 2x/w - 1`, `y' = 2y/w - h/w`.
pub fn normalize_2d(coords: &[[f64; 2]], image_width: f64, image_height: f64) -> Result<Pose2D> {
    if !(image_width > 0.0) || !(image_height > 0.0) {
        return Err(Error::config("image dimensions must be positive"));
    }
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite pixel coordinates"));
    }
    let w = image_width;
    let h = image_height;
    let coords = coords
        .iter()
        .map(|&[x, y]| [2.0 * x / w - 1.0, 2.0 * y / w - h / w])
        .collect();
    Ok(Pose2D { coords })
}

/// Inverse of [`normalize_2d`]: recover pixel coordinates.
pub fn denormalize_2d(pose: &Pose2D, image_width: f64, image_height: f64) -> Vec<[f64; 2]> {
    let w = image_width;
    let h = image_height;
    pose.coords
        .iter()
        .map(|&[x, y]| [(x + 1.0) * w / 2.0, (y + h / w) * w / 2.0])
        .collect()
}

/// Express absolute 3D coordinates relative to the root joint. The root row
/// of the output is exactly zero.
pub fn root_relative(coords: &[[f64; 3]], spec: &SkeletonSpec) -> Result<Pose3D> {
    if coords.len() != spec.joint_count {
        return Err(Error::shape(format!(
            "pose has {} joints, skeleton '{}' expects {}",
            coords.len(),
            spec.name,
            spec.joint_count
        )));
    }
    let root = coords[spec.root_index];
    let coords = coords
        .iter()
        .map(|&[x, y, z]| [x - root[0], y - root[1], z - root[2]])
        .collect();
    Ok(Pose3D { coords })
}
