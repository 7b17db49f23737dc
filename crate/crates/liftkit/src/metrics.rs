//! Evaluation protocols for lifted poses, all root-relative: position error
//! (MPJPE), position error after similarity alignment (P-MPJPE), position
//! error after optimal global scaling (N-MPJPE), and velocity error (MPJVE).

use serde::Serialize;

use crate::linalg::umeyama_align;
use crate::skeleton::Pose3D;
use crate::{Error, Result};

/// Aggregated metrics over a sequence. Position errors are millimeters;
/// `mpjve` is millimeters per frame-step (multiply by fps for mm/s).
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mpjpe: f64,
    pub p_mpjpe: f64,
    pub n_mpjpe: f64,
    pub mpjve: f64,
    pub frame_count: usize,
}

impl EvalReport {
    /// MPJVE converted to mm/s given a frame rate.
    pub fn mpjve_per_second(&self, fps: f64) -> f64 {
        self.mpjve * fps
    }

    /// Check the report invariants: finite non-negative values, and alignment
    /// never increasing the error.
    pub fn validate(&self) -> Result<()> {
        let vals = [self.mpjpe, self.p_mpjpe, self.n_mpjpe, self.mpjve];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::numerical("evaluation report has invalid values"));
        }
        if self.p_mpjpe > self.mpjpe + 1e-9 {
            return Err(Error::numerical("p_mpjpe exceeds mpjpe"));
        }
        if self.n_mpjpe > self.mpjpe + 1e-9 {
            return Err(Error::numerical("n_mpjpe exceeds mpjpe"));
        }
        Ok(())
    }

    /// Flat `key=value` text record, one field per line.
    pub fn to_flat_text(&self) -> String {
        format!(
            "mpjpe={}\np_mpjpe={}\nn_mpjpe={}\nmpjve={}\nframe_count={}\n",
            self.mpjpe, self.p_mpjpe, self.n_mpjpe, self.mpjve, self.frame_count
        )
    }
}

fn check_same_shape(pred: &Pose3D, gt: &Pose3D) -> Result<usize> {
    let j = pred.joint_count();
    if j != gt.joint_count() {
        return Err(Error::shape(format!(
            "poses differ in joint count: {} vs {}",
            j,
            gt.joint_count()
        )));
    }
    if j == 0 {
        return Err(Error::shape("empty pose"));
    }
    Ok(j)
}

fn mean_joint_distance(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt()
        })
        .sum();
    total / pred.len() as f64
}

/// Protocol 1: mean Euclidean distance between corresponding joints.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    check_same_shape(pred, gt)?;
    Ok(mean_joint_distance(&pred.coords, &gt.coords))
}

/// Protocol 2: MPJPE after fitting a similarity transform from `pred` onto
/// `gt` (fitted per pose).
pub fn p_mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let t = umeyama_align(&pred.coords, &gt.coords, true)?;
    let aligned: Vec<[f64; 3]> = pred.coords.iter().map(|p| t.apply(*p)).collect();
    Ok(mean_joint_distance(&aligned, &gt.coords))
}

/// N-MPJPE: MPJPE after applying the least-squares optimal global scale
/// `s* = sum(pred . gt) / sum(pred . pred)` to the prediction.
pub fn n_mpjpe(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let mut dot = 0.0f64;
    let mut norm = 0.0f64;
    for (p, g) in pred.coords.iter().zip(&gt.coords) {
        for d in 0..3 {
            dot += p[d] * g[d];
            norm += p[d] * p[d];
        }
    }
    if norm == 0.0 {
        return Err(Error::numerical("cannot scale an all-zero prediction"));
    }
    let s = dot / norm;
    let scaled: Vec<[f64; 3]> = pred
        .coords
        .iter()
        .map(|p| [s * p[0], s * p[1], s * p[2]])
        .collect();
    Ok(mean_joint_distance(&scaled, &gt.coords))
}

/// Protocol 3: mean per-joint velocity error over consecutive frame pairs,
/// in millimeters per frame-step.
pub fn mpjve(pred_seq: &[Pose3D], gt_seq: &[Pose3D]) -> Result<f64> {
    if pred_seq.len() != gt_seq.len() {
        return Err(Error::shape(format!(
            "sequences differ in length: {} vs {}",
            pred_seq.len(),
            gt_seq.len()
        )));
    }
    let t = pred_seq.len();
    if t < 2 {
        return Err(Error::config("velocity error needs at least 2 frames"));
    }
    let j = check_same_shape(&pred_seq[0], &gt_seq[0])?;
    let mut total = 0.0f64;
    for i in 1..t {
        check_same_shape(&pred_seq[i], &gt_seq[i])?;
        for k in 0..j {
            let mut sq = 0.0;
            for d in 0..3 {
                let dp = pred_seq[i].coords[k][d] - pred_seq[i - 1].coords[k][d];
                let dg = gt_seq[i].coords[k][d] - gt_seq[i - 1].coords[k][d];
                sq += (dp - dg) * (dp - dg);
            }
            total += sq.sqrt();
        }
    }
    Ok(total / ((t - 1) as f64 * j as f64))
}

/// All protocols over an aligned pair of sequences: position metrics averaged
/// per frame, velocity over consecutive frames.
pub fn evaluate_sequence(pred_seq: &[Pose3D], gt_seq: &[Pose3D]) -> Result<EvalReport> {
    if pred_seq.len() != gt_seq.len() {
        return Err(Error::shape(format!(
            "sequences differ in length: {} vs {}",
            pred_seq.len(),
            gt_seq.len()
        )));
    }
    let t = pred_seq.len();
    if t < 2 {
        return Err(Error::config("sequence evaluation needs at least 2 frames"));
    }
    let mut sum_mpjpe = 0.0;
    let mut sum_p = 0.0;
    let mut sum_n = 0.0;
    for (pred, gt) in pred_seq.iter().zip(gt_seq) {
        sum_mpjpe += mpjpe(pred, gt)?;
        sum_p += p_mpjpe(pred, gt)?;
        sum_n += n_mpjpe(pred, gt)?;
    }
    let report = EvalReport {
        mpjpe: sum_mpjpe / t as f64,
        p_mpjpe: sum_p / t as f64,
        n_mpjpe: sum_n / t as f64,
        mpjve: mpjve(pred_seq, gt_seq)?,
        frame_count: t,
    };
    debug_assert!(report.validate().is_ok(), "report invariants violated: {report:?}");
    Ok(report)
}
