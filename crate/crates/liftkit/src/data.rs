//! Pose-sequence ingestion, sliding-window extraction, flip augmentation
//! plumbing, and a synthetic articulated-motion generator for desk-scale
//! experiments.
//!
//! The on-disk format is JSON Lines: a header record
//! `{"format_version": 1, "skeleton": ..., "fps": ..., "subject": ..., "action": ...}`
//! followed by one record per frame
//! `{"t": ..., "kp2d": [[x, y], ...], "kp3d": [[x, y, z], ...]}` where `kp3d`
//! is optional (inference-only data). A file may hold several sequences; each
//! new header starts the next one. 2D keypoints are in normalized image
//! units, 3D keypoints are root-relative millimeters.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{rotation_from_axis_angle, Mat3};
use crate::skeleton::{normalize_2d, Pose2D, Pose3D, SkeletonSpec};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// A recorded motion: per-frame 2D keypoints, optional 3D targets, and the
/// skeleton convention they follow.
#[derive(Debug, Clone)]
pub struct PoseSequence {
    pub subject: String,
    pub action: String,
    pub fps: Option<f64>,
    /// T x J x 2, normalized image units.
    pub frames_2d: Vec<Vec<[f64; 2]>>,
    /// T x J x 3, root-relative millimeters.
    pub frames_3d: Option<Vec<Vec<[f64; 3]>>>,
    pub skeleton: SkeletonSpec,
}

impl PoseSequence {
    pub fn len(&self) -> usize {
        self.frames_2d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames_2d.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        if self.frames_2d.is_empty() {
            return Err(Error::data("sequence has no frames"));
        }
        let j = self.skeleton.joint_count;
        if let Some(bad) = self.frames_2d.iter().position(|f| f.len() != j) {
            return Err(Error::data(format!(
                "frame {bad} has {} 2D joints, skeleton '{}' expects {j}",
                self.frames_2d[bad].len(),
                self.skeleton.name
            )));
        }
        if let Some(frames_3d) = &self.frames_3d {
            if frames_3d.len() != self.frames_2d.len() {
                return Err(Error::data(format!(
                    "sequence has {} 2D frames but {} 3D frames",
                    self.frames_2d.len(),
                    frames_3d.len()
                )));
            }
            if let Some(bad) = frames_3d.iter().position(|f| f.len() != j) {
                return Err(Error::data(format!(
                    "frame {bad} has {} 3D joints, skeleton '{}' expects {j}",
                    frames_3d[bad].len(),
                    self.skeleton.name
                )));
            }
        }
        Ok(())
    }
}

/// One training/inference sample: `n` consecutive 2D frames centered on the
/// frame being lifted, plus that frame's 3D target when available.
#[derive(Debug, Clone)]
pub struct Window {
    /// n x J x 2
    pub inputs: Vec<Vec<[f64; 2]>>,
    /// The center frame's root-relative 3D pose, J x 3.
    pub target: Option<Vec<[f64; 3]>>,
    /// Index of the center frame in the source sequence.
    pub center_index: usize,
}

impl Window {
    /// Row-major `n x 2J` layout fed to the model: per frame, joints in
    /// order with x before y.
    pub fn flat_inputs(&self) -> Vec<f64> {
        self.inputs
            .iter()
            .flat_map(|frame| frame.iter().flat_map(|c| [c[0], c[1]]))
            .collect()
    }

    pub fn flat_target(&self) -> Option<Vec<f64>> {
        self.target
            .as_ref()
            .map(|t| t.iter().flat_map(|c| [c[0], c[1], c[2]]).collect())
    }
}

/// One window per source frame, with out-of-range indices clamped to the
/// first/last frame (edge replication).
pub fn extract_windows(seq: &PoseSequence, n: usize) -> Result<Vec<Window>> {
    if n % 2 == 0 || n == 0 {
        return Err(Error::config(format!("receptive field must be odd, got {n}")));
    }
    seq.validate()?;
    let t_len = seq.len() as isize;
    let half = (n / 2) as isize;
    let mut windows = Vec::with_capacity(seq.len());
    for t in 0..t_len {
        let inputs = (t - half..=t + half)
            .map(|u| seq.frames_2d[u.clamp(0, t_len - 1) as usize].clone())
            .collect();
        let target = seq.frames_3d.as_ref().map(|f| f[t as usize].clone());
        windows.push(Window { inputs, target, center_index: t as usize });
    }
    Ok(windows)
}

/// Horizontal flip of every input frame and of the target.
pub fn flip_window(w: &Window, spec: &SkeletonSpec) -> Result<Window> {
    let mut inputs = Vec::with_capacity(w.inputs.len());
    for frame in &w.inputs {
        inputs.push(Pose2D::new(frame.clone())?.flipped(spec)?.coords);
    }
    let target = match &w.target {
        Some(t) => Some(Pose3D::new(t.clone())?.flipped(spec)?.coords),
        None => None,
    };
    Ok(Window { inputs, target, center_index: w.center_index })
}

/// Fixed pinhole camera looking down +z; the synthetic subject stands around
/// `subject_distance_mm` in front of it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Camera {
    pub focal_px: f64,
    pub center_px: [f64; 2],
    pub image_width: f64,
    pub image_height: f64,
    pub subject_distance_mm: f64,
}

impl Default for Camera {
    fn default() -> Self {
        // Focal length chosen so the subject fills most of the frame, like a
        // person-cropped detection: normalized keypoints span roughly [-1, 1].
        Camera {
            focal_px: 2200.0,
            center_px: [500.0, 500.0],
            image_width: 1000.0,
            image_height: 1000.0,
            subject_distance_mm: 4000.0,
        }
    }
}

impl Camera {
    /// Perspective projection of a camera-frame point (mm) to pixels.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [
            self.focal_px * p[0] / p[2] + self.center_px[0],
            self.focal_px * p[1] / p[2] + self.center_px[1],
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionParams {
    /// Bone lengths are drawn uniformly from this range (mm).
    pub bone_length_range: (f64, f64),
    /// Peak joint swing amplitude (radians).
    pub max_swing: f64,
    /// Amplitude of the root's orbit around its rest position (mm).
    pub root_travel: f64,
    pub camera: Camera,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams {
            bone_length_range: (120.0, 420.0),
            max_swing: 0.5,
            root_travel: 250.0,
            camera: Camera::default(),
        }
    }
}

/// Everything the generator knows about a synthetic sequence, for tests that
/// verify projection and rigidity from first principles.
#[derive(Debug)]
pub struct SynthDetails {
    pub sequence: PoseSequence,
    /// Camera-frame absolute positions, T x J x 3 (mm).
    pub absolute: Vec<Vec<[f64; 3]>>,
    pub camera: Camera,
    /// Kinematic tree: parent of each joint, None for the root.
    pub parents: Vec<Option<usize>>,
    /// Bone length to the parent, 0 for the root.
    pub bone_lengths: Vec<f64>,
}

/// Deterministic articulated motion: a random kinematic tree with fixed bone
/// lengths, sinusoidal joint-angle trajectories, and a slowly orbiting root,
/// projected by a fixed pinhole camera.
pub fn synth_sequence(
    seed: u64,
    frames: usize,
    skeleton: &SkeletonSpec,
    params: &MotionParams,
) -> Result<PoseSequence> {
    Ok(synth_sequence_detailed(seed, frames, skeleton, params)?.sequence)
}

pub fn synth_sequence_detailed(
    seed: u64,
    frames: usize,
    skeleton: &SkeletonSpec,
    params: &MotionParams,
) -> Result<SynthDetails> {
    if frames == 0 {
        return Err(Error::config("synthetic sequence needs at least 1 frame"));
    }
    skeleton.validate()?;
    let j = skeleton.joint_count;
    let root = skeleton.root_index;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Attach joints in index order (root first) to a random earlier joint.
    let mut order: Vec<usize> = vec![root];
    order.extend((0..j).filter(|&k| k != root));
    let mut parents: Vec<Option<usize>> = vec![None; j];
    let mut attached: Vec<usize> = vec![root];
    for &joint in order.iter().skip(1) {
        parents[joint] = Some(attached[rng.gen_range(0..attached.len())]);
        attached.push(joint);
    }

    let (lo, hi) = params.bone_length_range;
    let mut bone_lengths = vec![0.0f64; j];
    let mut rest_dir = vec![[0.0f64; 3]; j];
    let mut swing = vec![(0.0f64, 0.0f64, 0.0f64); j]; // amplitude, frequency, phase
    let mut axes = vec![[0.0f64; 3]; j];
    for &joint in order.iter().skip(1) {
        bone_lengths[joint] = rng.gen_range(lo..hi);
        rest_dir[joint] = random_unit(&mut rng);
        axes[joint] = random_unit(&mut rng);
        swing[joint] = (
            rng.gen_range(0.2..params.max_swing.max(0.21)),
            rng.gen_range(0.02..0.12), // radians of phase per frame
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
    }
    let orbit_axis = random_unit(&mut rng);
    let orbit_freq = rng.gen_range(0.01..0.05);
    let orbit_phase = rng.gen_range(0.0..std::f64::consts::TAU);

    let camera = params.camera.clone();
    let rest_center = [0.0, 0.0, camera.subject_distance_mm];

    let mut absolute = Vec::with_capacity(frames);
    let mut frames_2d = Vec::with_capacity(frames);
    let mut frames_3d = Vec::with_capacity(frames);
    for t in 0..frames {
        let tf = t as f64;
        let mut pos = vec![[0.0f64; 3]; j];
        let mut world_rot = vec![Mat3::identity(); j];
        let orbit = (orbit_freq * tf + orbit_phase).sin() * params.root_travel;
        pos[root] = [
            rest_center[0] + orbit * orbit_axis[0],
            rest_center[1] + orbit * orbit_axis[1],
            rest_center[2] + orbit * orbit_axis[2],
        ];
        for &joint in order.iter().skip(1) {
            let parent = parents[joint].unwrap();
            let (amp, freq, phase) = swing[joint];
            let angle = amp * (freq * tf + phase).sin();
            let local = rotation_from_axis_angle([
                axes[joint][0] * angle,
                axes[joint][1] * angle,
                axes[joint][2] * angle,
            ]);
            world_rot[joint] = world_rot[parent].matmul(&local);
            let offset = world_rot[joint].mul_vec([
                rest_dir[joint][0] * bone_lengths[joint],
                rest_dir[joint][1] * bone_lengths[joint],
                rest_dir[joint][2] * bone_lengths[joint],
            ]);
            pos[joint] = [
                pos[parent][0] + offset[0],
                pos[parent][1] + offset[1],
                pos[parent][2] + offset[2],
            ];
        }

        let pixels: Vec<[f64; 2]> = pos.iter().map(|&p| camera.project(p)).collect();
        let normalized = normalize_2d(&pixels, camera.image_width, camera.image_height)?;
        let relative: Vec<[f64; 3]> = pos
            .iter()
            .map(|p| [p[0] - pos[root][0], p[1] - pos[root][1], p[2] - pos[root][2]])
            .collect();

        frames_2d.push(normalized.coords);
        frames_3d.push(relative);
        absolute.push(pos);
    }

    let sequence = PoseSequence {
        subject: "synth".to_string(),
        action: format!("motion{seed}"),
        fps: Some(50.0),
        frames_2d,
        frames_3d: Some(frames_3d),
        skeleton: skeleton.clone(),
    };
    sequence.validate()?;
    Ok(SynthDetails { sequence, absolute, camera, parents, bone_lengths })
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0f64..1.0),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 0.1 && norm <= 1.0 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    format_version: u32,
    skeleton: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
    subject: String,
    action: String,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: usize,
    kp2d: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kp3d: Option<Vec<[f64; 3]>>,
}

/// Parse a pose-sequence file. Skeletons are resolved against the built-ins
/// plus any `custom` specs (from the run config).
pub fn load_sequences(path: &Path, custom: &[SkeletonSpec]) -> Result<Vec<PoseSequence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut sequences: Vec<PoseSequence> = Vec::new();
    let mut current: Option<(PoseSequence, bool)> = None; // (sequence, has_3d)

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::data_at(line_no, format!("invalid JSON: {e}")))?;

        if value.get("format_version").is_some() {
            let header: HeaderRecord = serde_json::from_value(value)
                .map_err(|e| Error::data_at(line_no, format!("bad header: {e}")))?;
            if header.format_version != FORMAT_VERSION {
                return Err(Error::data_at(
                    line_no,
                    format!("unsupported format_version {}", header.format_version),
                ));
            }
            let skeleton = SkeletonSpec::builtin(&header.skeleton)
                .or_else(|| custom.iter().find(|s| s.name == header.skeleton).cloned())
                .ok_or_else(|| {
                    Error::data_at(line_no, format!("unknown skeleton name '{}'", header.skeleton))
                })?;
            if let Some((seq, _)) = current.take() {
                seq.validate()?;
                sequences.push(seq);
            }
            current = Some((
                PoseSequence {
                    subject: header.subject,
                    action: header.action,
                    fps: header.fps,
                    frames_2d: Vec::new(),
                    frames_3d: None,
                    skeleton,
                },
                false,
            ));
        } else {
            let frame: FrameRecord = serde_json::from_value(value)
                .map_err(|e| Error::data_at(line_no, format!("bad frame record: {e}")))?;
            let Some((seq, has_3d)) = current.as_mut() else {
                return Err(Error::data_at(line_no, "frame record before any header"));
            };
            if frame.t != seq.frames_2d.len() {
                return Err(Error::data_at(
                    line_no,
                    format!(
                        "frame index {} out of order (expected {})",
                        frame.t,
                        seq.frames_2d.len()
                    ),
                ));
            }
            if frame.kp2d.len() != seq.skeleton.joint_count {
                return Err(Error::data_at(
                    line_no,
                    format!(
                        "frame has {} 2D joints, skeleton '{}' expects {}",
                        frame.kp2d.len(),
                        seq.skeleton.name,
                        seq.skeleton.joint_count
                    ),
                ));
            }
            if seq.frames_2d.is_empty() {
                *has_3d = frame.kp3d.is_some();
            } else if frame.kp3d.is_some() != *has_3d {
                return Err(Error::data_at(
                    line_no,
                    "kp3d must be present on all frames of a sequence or none",
                ));
            }
            if let Some(kp3d) = frame.kp3d {
                if kp3d.len() != seq.skeleton.joint_count {
                    return Err(Error::data_at(
                        line_no,
                        format!(
                            "frame has {} 3D joints, skeleton '{}' expects {}",
                            kp3d.len(),
                            seq.skeleton.name,
                            seq.skeleton.joint_count
                        ),
                    ));
                }
                seq.frames_3d.get_or_insert_with(Vec::new).push(kp3d);
            }
            seq.frames_2d.push(frame.kp2d);
        }
    }
    if let Some((seq, _)) = current.take() {
        seq.validate()?;
        sequences.push(seq);
    }
    if sequences.is_empty() {
        return Err(Error::data("file contains no sequences"));
    }
    Ok(sequences)
}

pub fn save_sequences(path: &Path, sequences: &[PoseSequence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for seq in sequences {
        seq.validate()?;
        let header = HeaderRecord {
            format_version: FORMAT_VERSION,
            skeleton: seq.skeleton.name.clone(),
            fps: seq.fps,
            subject: seq.subject.clone(),
            action: seq.action.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (t, kp2d) in seq.frames_2d.iter().enumerate() {
            let record = FrameRecord {
                t,
                kp2d: kp2d.clone(),
                kp3d: seq.frames_3d.as_ref().map(|f| f[t].clone()),
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_seq(t: usize, with_3d: bool) -> PoseSequence {
        let skeleton = SkeletonSpec::h36m_17();
        let j = skeleton.joint_count;
        let frames_2d = (0..t)
            .map(|k| (0..j).map(|q| [k as f64 * 0.01 + q as f64, -(q as f64)]).collect())
            .collect();
        let frames_3d = with_3d.then(|| {
            (0..t)
                .map(|k| {
                    (0..j)
                        .map(|q| [k as f64 + q as f64, q as f64 * 2.0, -(k as f64)])
                        .collect()
                })
                .collect()
        });
        PoseSequence {
            subject: "s1".into(),
            action: "walk".into(),
            fps: Some(50.0),
            frames_2d,
            frames_3d,
            skeleton,
        }
    }

    #[test]
    fn window_per_frame_with_edge_replication() {
        let seq = small_seq(1, true);
        let windows = extract_windows(&seq, 27).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].inputs.len(), 27);
        for frame in &windows[0].inputs {
            assert_eq!(frame, &seq.frames_2d[0]);
        }
    }

    #[test]
    fn interior_window_is_verbatim() {
        let seq = small_seq(100, true);
        let windows = extract_windows(&seq, 27).unwrap();
        assert_eq!(windows.len(), 100);
        let w = &windows[50];
        for (offset, frame) in w.inputs.iter().enumerate() {
            assert_eq!(frame, &seq.frames_2d[50 - 13 + offset]);
        }
        assert_eq!(w.target.as_ref().unwrap(), &seq.frames_3d.as_ref().unwrap()[50]);
    }

    #[test]
    fn boundary_window_clamps_to_first_frame() {
        let seq = small_seq(40, true);
        let windows = extract_windows(&seq, 27).unwrap();
        let w = &windows[0];
        // 13 replicated copies of frame 0, then frames 0..=13.
        for k in 0..13 {
            assert_eq!(w.inputs[k], seq.frames_2d[0]);
        }
        for (k, frame) in w.inputs.iter().enumerate().skip(13) {
            assert_eq!(frame, &seq.frames_2d[k - 13]);
        }
    }

    #[test]
    fn every_target_matches_center_frame() {
        let seq = small_seq(9, true);
        let windows = extract_windows(&seq, 5).unwrap();
        for (t, w) in windows.iter().enumerate() {
            assert_eq!(w.center_index, t);
            assert_eq!(w.target.as_ref().unwrap(), &seq.frames_3d.as_ref().unwrap()[t]);
            assert_eq!(&w.inputs[2], &seq.frames_2d[t]);
        }
    }

    #[test]
    fn even_receptive_field_rejected() {
        let seq = small_seq(5, false);
        assert!(extract_windows(&seq, 4).is_err());
    }

    #[test]
    fn windows_without_targets_for_2d_only_data() {
        let seq = small_seq(5, false);
        let windows = extract_windows(&seq, 3).unwrap();
        assert!(windows.iter().all(|w| w.target.is_none()));
    }

    #[test]
    fn flip_window_is_involution_and_flips_target() {
        let seq = small_seq(8, true);
        let spec = seq.skeleton.clone();
        let windows = extract_windows(&seq, 5).unwrap();
        let w = &windows[3];
        let flipped = flip_window(w, &spec).unwrap();
        let target = Pose3D::new(w.target.clone().unwrap()).unwrap();
        assert_eq!(flipped.target.as_ref().unwrap(), &target.flipped(&spec).unwrap().coords);
        let back = flip_window(&flipped, &spec).unwrap();
        assert_eq!(back.inputs, w.inputs);
        assert_eq!(back.target, w.target);
    }

    #[test]
    fn flat_inputs_layout() {
        let seq = small_seq(3, true);
        let windows = extract_windows(&seq, 3).unwrap();
        let flat = windows[1].flat_inputs();
        assert_eq!(flat.len(), 3 * 2 * 17);
        assert_eq!(flat[0], windows[1].inputs[0][0][0]);
        assert_eq!(flat[1], windows[1].inputs[0][0][1]);
        assert_eq!(flat[2], windows[1].inputs[0][1][0]);
    }

    #[test]
    fn synth_is_deterministic_per_seed() {
        let spec = SkeletonSpec::h36m_17();
        let a = synth_sequence(7, 20, &spec, &MotionParams::default()).unwrap();
        let b = synth_sequence(7, 20, &spec, &MotionParams::default()).unwrap();
        assert_eq!(a.frames_2d, b.frames_2d);
        assert_eq!(a.frames_3d, b.frames_3d);
        let c = synth_sequence(8, 20, &spec, &MotionParams::default()).unwrap();
        assert_ne!(a.frames_2d, c.frames_2d);
    }

    #[test]
    fn synth_bone_lengths_are_rigid() {
        let spec = SkeletonSpec::eva_15();
        let details = synth_sequence_detailed(3, 50, &spec, &MotionParams::default()).unwrap();
        for frame in &details.absolute {
            for (joint, parent) in details.parents.iter().enumerate() {
                let Some(p) = parent else { continue };
                let d = [
                    frame[joint][0] - frame[*p][0],
                    frame[joint][1] - frame[*p][1],
                    frame[joint][2] - frame[*p][2],
                ];
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                assert!(
                    (len - details.bone_lengths[joint]).abs() < 1e-9,
                    "joint {joint}: {len} vs {}",
                    details.bone_lengths[joint]
                );
            }
        }
    }

    #[test]
    fn synth_2d_is_projection_of_absolute_3d() {
        let spec = SkeletonSpec::h36m_17();
        let details = synth_sequence_detailed(11, 30, &spec, &MotionParams::default()).unwrap();
        let cam = &details.camera;
        for (t, frame) in details.absolute.iter().enumerate() {
            let pixels: Vec<[f64; 2]> = frame.iter().map(|&p| cam.project(p)).collect();
            let expect = normalize_2d(&pixels, cam.image_width, cam.image_height).unwrap();
            for (a, b) in details.sequence.frames_2d[t].iter().zip(&expect.coords) {
                assert!((a[0] - b[0]).abs() < 1e-9);
                assert!((a[1] - b[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn synth_3d_is_root_relative() {
        let spec = SkeletonSpec::h36m_17();
        let seq = synth_sequence(5, 10, &spec, &MotionParams::default()).unwrap();
        for frame in seq.frames_3d.as_ref().unwrap() {
            assert_eq!(frame[spec.root_index], [0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn save_load_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.jsonl");
        let spec = SkeletonSpec::h36m_17();
        let seqs = vec![
            synth_sequence(1, 7, &spec, &MotionParams::default()).unwrap(),
            small_seq(4, false),
        ];
        save_sequences(&path, &seqs).unwrap();
        let loaded = load_sequences(&path, &[]).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in seqs.iter().zip(&loaded) {
            assert_eq!(a.subject, b.subject);
            assert_eq!(a.action, b.action);
            assert_eq!(a.fps, b.fps);
            assert_eq!(a.frames_2d, b.frames_2d);
            assert_eq!(a.frames_3d, b.frames_3d);
            assert_eq!(a.skeleton, b.skeleton);
        }
    }

    #[test]
    fn unknown_skeleton_is_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.jsonl");
        std::fs::write(
            &path,
            "{\"format_version\":1,\"skeleton\":\"martian_12\",\"subject\":\"s\",\"action\":\"a\"}\n",
        )
        .unwrap();
        let err = load_sequences(&path, &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("martian_12"), "{msg}");
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn custom_skeleton_resolves_from_registry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.jsonl");
        let custom = SkeletonSpec {
            name: "tiny_3".into(),
            joint_count: 3,
            root_index: 0,
            flip_pairs: vec![(1, 2)],
            joint_names: vec!["r".into(), "l".into(), "rr".into()],
        };
        std::fs::write(
            &path,
            concat!(
                "{\"format_version\":1,\"skeleton\":\"tiny_3\",\"subject\":\"s\",\"action\":\"a\"}\n",
                "{\"t\":0,\"kp2d\":[[0.0,0.0],[0.1,0.2],[-0.1,0.2]]}\n",
            ),
        )
        .unwrap();
        assert!(load_sequences(&path, &[]).is_err());
        let loaded = load_sequences(&path, &[custom.clone()]).unwrap();
        assert_eq!(loaded[0].skeleton, custom);
        assert!(loaded[0].frames_3d.is_none(), "2D-only data must be accepted");
    }

    #[test]
    fn malformed_records_give_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"format_version\":1,\"skeleton\":\"eva_15\",\"subject\":\"s\",\"action\":\"a\"}\n",
                "{\"t\":5,\"kp2d\":[[0.0,0.0]]}\n",
            ),
        )
        .unwrap();
        let err = load_sequences(&path, &[]).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        std::fs::write(&path, "{\"t\":0,\"kp2d\":[]}\n").unwrap();
        let err = load_sequences(&path, &[]).unwrap_err();
        assert!(err.to_string().contains("before any header"), "{err}");
    }
}
