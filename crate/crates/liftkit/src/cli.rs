//! Command implementations behind the `liftkit` binary: training, evaluation,
//! sequence lifting, parameter auditing, and synthetic data generation.
//!
//! Every command is deterministic given its flags and seed. Exit codes:
//! 0 success, 1 usage/config error, 2 data error, 3 numerical failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{load_sequences, save_sequences, synth_sequence, MotionParams, PoseSequence};
use crate::metrics::{evaluate_sequence, EvalReport};
use crate::model::{
    count_is_head_invariant, parameter_count, parameter_millions, LiftFormerModel, ModelConfig,
};
use crate::skeleton::{Pose3D, SkeletonSpec};
use crate::training::{lift_sequence, train, TrainConfig};
use crate::{Error, Result};

/// Top-level run configuration file: UTF-8 JSON with a required `version`
/// field. Unknown keys are rejected with the offending key named.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Custom skeletons usable by name from data files.
    #[serde(default)]
    pub skeletons: Vec<SkeletonSpec>,
    /// Default data path; the --data flag overrides it.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Default output directory; the --out flag overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

pub const RUN_CONFIG_VERSION: u32 = 1;

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != RUN_CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported config version {} (expected {RUN_CONFIG_VERSION})",
                self.version
            )));
        }
        self.model.validate()?;
        self.train.validate()?;
        for s in &self.skeletons {
            s.validate()?;
        }
        Ok(())
    }
}

/// Train on a data file and write `model.lft`, `train_log.jsonl` and
/// `eval.json` into the output directory. Nothing is written until training
/// has finished, so failures leave no partial outputs.
pub fn cmd_train(
    config_path: &Path,
    data_override: Option<&Path>,
    out_override: Option<&Path>,
    json: bool,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let data_path = data_override
        .map(Path::to_path_buf)
        .or(config.data.clone())
        .ok_or_else(|| Error::config("no data path: pass --data or set \"data\" in the config"))?;
    let out_dir = out_override
        .map(Path::to_path_buf)
        .or(config.out_dir.clone())
        .ok_or_else(|| Error::config("no output dir: pass --out or set \"out_dir\" in the config"))?;

    let sequences = load_sequences(&data_path, &config.skeletons)?;
    let model = LiftFormerModel::<f32>::build(&config.model, config.train.resolved_seed())?;

    let mut log_lines: Vec<String> = Vec::new();
    let outcome = train(&model, &sequences, &config.train, |entry| {
        log_lines.push(serde_json::to_string(entry).expect("log entries serialize"));
    })?;

    fs::create_dir_all(&out_dir)?;
    let checkpoint_path = out_dir.join("model.lft");
    model.save_checkpoint(&checkpoint_path)?;
    let mut log_file = fs::File::create(out_dir.join("train_log.jsonl"))?;
    for line in &log_lines {
        writeln!(log_file, "{line}")?;
    }

    let summary = json!({
        "checkpoint": checkpoint_path,
        "steps": outcome.log.len(),
        "final_train_loss": outcome.final_train_loss,
        "best_val_mpjpe": outcome.best_val_mpjpe,
        "val_windows": outcome.val_windows,
    });
    fs::write(out_dir.join("eval.json"), serde_json::to_string_pretty(&summary)?)?;
    if json {
        println!("{summary}");
    } else {
        println!("trained {} steps, final loss {:.3} mm", outcome.log.len(), outcome.final_train_loss);
        if let Some(v) = outcome.best_val_mpjpe {
            println!("best validation mpjpe {v:.3} mm over {} windows", outcome.val_windows);
        }
        println!("checkpoint written to {}", checkpoint_path.display());
    }
    Ok(())
}

/// Frame-count weighted average of per-sequence reports.
fn weighted_average(reports: &[EvalReport]) -> EvalReport {
    let frames: usize = reports.iter().map(|r| r.frame_count).sum();
    let steps: usize = reports.iter().map(|r| r.frame_count - 1).sum();
    let wpos = |f: &dyn Fn(&EvalReport) -> f64| -> f64 {
        reports.iter().map(|r| f(r) * r.frame_count as f64).sum::<f64>() / frames as f64
    };
    EvalReport {
        mpjpe: wpos(&|r| r.mpjpe),
        p_mpjpe: wpos(&|r| r.p_mpjpe),
        n_mpjpe: wpos(&|r| r.n_mpjpe),
        mpjve: reports
            .iter()
            .map(|r| r.mpjve * (r.frame_count - 1) as f64)
            .sum::<f64>()
            / steps.max(1) as f64,
        frame_count: frames,
    }
}

fn poses_of(frames: &[Vec<[f64; 3]>]) -> Result<Vec<Pose3D>> {
    frames.iter().map(|f| Pose3D::new(f.clone())).collect()
}

/// Evaluate a checkpoint against ground-truth 3D data, reporting all
/// protocols per action plus the frame-weighted overall average.
pub fn cmd_eval(checkpoint: &Path, data_path: &Path, json: bool) -> Result<()> {
    let model = LiftFormerModel::<f32>::load_checkpoint(checkpoint)?;
    let sequences = load_sequences(data_path, &[])?;

    let mut per_action: BTreeMap<String, Vec<EvalReport>> = BTreeMap::new();
    let mut all_reports = Vec::new();
    for seq in &sequences {
        let Some(frames_3d) = &seq.frames_3d else {
            return Err(Error::data(format!(
                "sequence '{}/{}' has no 3D ground truth",
                seq.subject, seq.action
            )));
        };
        let predicted = lift_sequence(&model, seq)?;
        let gt = poses_of(frames_3d)?;
        let report = evaluate_sequence(&predicted, &gt)?;
        per_action.entry(seq.action.clone()).or_default().push(report.clone());
        all_reports.push(report);
    }

    let action_reports: BTreeMap<String, EvalReport> = per_action
        .iter()
        .map(|(action, reports)| (action.clone(), weighted_average(reports)))
        .collect();
    let average = weighted_average(&all_reports);

    if json {
        println!(
            "{}",
            json!({ "actions": action_reports, "average": average })
        );
    } else {
        println!(
            "{:<16} {:>10} {:>10} {:>10} {:>10} {:>8}",
            "action", "mpjpe", "p_mpjpe", "n_mpjpe", "mpjve", "frames"
        );
        for (action, r) in &action_reports {
            println!(
                "{:<16} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>8}",
                action, r.mpjpe, r.p_mpjpe, r.n_mpjpe, r.mpjve, r.frame_count
            );
        }
        println!(
            "{:<16} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>8}",
            "Avg", average.mpjpe, average.p_mpjpe, average.n_mpjpe, average.mpjve,
            average.frame_count
        );
    }
    Ok(())
}

/// Lift 2D sequences to 3D and write a pose file with `kp3d` filled in.
/// `causal` overrides the checkpoint's attention-mask setting.
pub fn cmd_lift(
    checkpoint: &Path,
    data_path: &Path,
    out_path: &Path,
    causal: Option<bool>,
    json: bool,
) -> Result<()> {
    let mut model = LiftFormerModel::<f32>::load_checkpoint(checkpoint)?;
    if let Some(causal) = causal {
        model.set_causal(causal);
    }
    let sequences = load_sequences(data_path, &[])?;
    let mut lifted_sequences = Vec::with_capacity(sequences.len());
    let mut total_frames = 0usize;
    for seq in &sequences {
        let lifted = lift_sequence(&model, seq)?;
        total_frames += lifted.len();
        let mut out = seq.clone();
        out.frames_3d = Some(lifted.into_iter().map(|p| p.coords).collect());
        lifted_sequences.push(out);
    }
    save_sequences(out_path, &lifted_sequences)?;
    if json {
        println!(
            "{}",
            json!({
                "output": out_path,
                "sequences": lifted_sequences.len(),
                "frames": total_frames,
                "causal": model.config().causal,
            })
        );
    } else {
        println!(
            "lifted {} frames across {} sequences into {}",
            total_frames,
            lifted_sequences.len(),
            out_path.display()
        );
    }
    Ok(())
}

/// Reference parameter budgets from the hyperparameter ablations: hidden
/// dimension / blocks sweep at two decimals, weight-sharing sweep at one.
fn reference_budget_rows() -> Vec<(ModelConfig, f64, u32)> {
    let base = ModelConfig::default();
    let row = |hidden_dim: usize, heads: usize, blocks: usize, share: bool| ModelConfig {
        hidden_dim,
        heads,
        blocks,
        share_attention: share,
        ..base.clone()
    };
    vec![
        (row(128, 8, 6, false), 3.57, 2),
        (row(256, 8, 6, false), 7.91, 2),
        (row(512, 8, 6, false), 18.96, 2),
        (row(768, 8, 6, false), 33.15, 2),
        (row(512, 4, 6, false), 18.96, 2),
        (row(512, 16, 6, false), 18.96, 2),
        (row(512, 8, 4, false), 12.65, 2),
        (row(512, 8, 8, false), 25.26, 2),
        (row(512, 8, 6, true), 13.7, 1),
        (row(512, 8, 4, true), 9.5, 1),
        (row(256, 8, 2, true), 2.4, 1),
    ]
}

fn round_millions(millions: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (millions * scale).round() / scale
}

/// Print the exact parameter count for one configuration, or audit the whole
/// reference table with PASS/FAIL per row.
#[allow(clippy::too_many_arguments)]
pub fn cmd_count_params(
    hidden_dim: usize,
    heads: usize,
    blocks: usize,
    ffn_dim: usize,
    joints: usize,
    share: bool,
    paper_table: bool,
    json: bool,
) -> Result<()> {
    if paper_table {
        let mut rows = Vec::new();
        let mut all_pass = true;
        for (config, expected, decimals) in reference_budget_rows() {
            let exact = parameter_count(&config);
            let millions = round_millions(parameter_millions(&config), decimals);
            let pass = millions == expected && count_is_head_invariant(&config);
            all_pass &= pass;
            rows.push(json!({
                "hidden_dim": config.hidden_dim,
                "heads": config.heads,
                "blocks": config.blocks,
                "share_attention": config.share_attention,
                "exact": exact,
                "millions": millions,
                "expected_millions": expected,
                "pass": pass,
            }));
            if !json {
                println!(
                    "d={:<4} h={:<2} E={} share={:<5} params={:<10} {:>6.2}M expected {:>6}M  {}",
                    config.hidden_dim,
                    config.heads,
                    config.blocks,
                    config.share_attention,
                    exact,
                    millions,
                    expected,
                    if pass { "PASS" } else { "FAIL" }
                );
            }
        }
        if json {
            println!("{}", json!({ "rows": rows, "all_pass": all_pass }));
        } else {
            println!("{}", if all_pass { "ALL PASS" } else { "FAILURES PRESENT" });
        }
        if !all_pass {
            return Err(Error::numerical("reference parameter budgets not reproduced"));
        }
        return Ok(());
    }

    let config = ModelConfig {
        hidden_dim,
        heads,
        blocks,
        ffn_dim,
        joints,
        share_attention: share,
        ..ModelConfig::default()
    };
    config.validate()?;
    let exact = parameter_count(&config);
    let millions = parameter_millions(&config);
    if json {
        println!(
            "{}",
            json!({
                "exact": exact,
                "millions": round_millions(millions, 2),
                "head_invariant": count_is_head_invariant(&config),
            })
        );
    } else {
        println!("parameters: {exact} ({:.2}M)", millions);
    }
    Ok(())
}

/// Generate a deterministic synthetic motion file.
pub fn cmd_synth(
    seed: Option<u64>,
    frames: usize,
    skeleton_name: &str,
    out_path: &Path,
    json: bool,
) -> Result<()> {
    let seed = seed
        .or_else(|| std::env::var("LIFTKIT_SEED").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    let skeleton = SkeletonSpec::builtin(skeleton_name)
        .ok_or_else(|| Error::config(format!("unknown skeleton name '{skeleton_name}'")))?;
    let sequence = synth_sequence(seed, frames, &skeleton, &MotionParams::default())?;
    save_sequences(out_path, std::slice::from_ref(&sequence))?;
    if json {
        println!(
            "{}",
            json!({
                "output": out_path,
                "seed": seed,
                "frames": sequence.len(),
                "skeleton": skeleton.name,
            })
        );
    } else {
        println!(
            "wrote {} frames of skeleton '{}' (seed {seed}) to {}",
            sequence.len(),
            skeleton.name,
            out_path.display()
        );
    }
    Ok(())
}

/// Re-export used by integration tests to build inputs in-process.
pub fn write_synthetic_dataset(
    path: &Path,
    seeds: &[u64],
    frames: usize,
    skeleton: &SkeletonSpec,
) -> Result<Vec<PoseSequence>> {
    let sequences: Vec<PoseSequence> = seeds
        .iter()
        .map(|&s| synth_sequence(s, frames, skeleton, &MotionParams::default()))
        .collect::<Result<_>>()?;
    save_sequences(path, &sequences)?;
    Ok(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_rejects_unknown_keys_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, "{\"version\":1,\"modle\":{}}").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("modle"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn run_config_defaults_and_version_gate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, "{\"version\":1}").unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.model, ModelConfig::default());

        std::fs::write(&path, "{\"version\":9}").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn run_config_validates_nested_sections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, "{\"version\":1,\"model\":{\"heads\":5}}").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn reference_table_all_rows_pass() {
        for (config, expected, decimals) in reference_budget_rows() {
            let millions = round_millions(parameter_millions(&config), decimals);
            assert_eq!(millions, expected, "{config:?}");
            assert!(count_is_head_invariant(&config));
        }
    }

    #[test]
    fn weighted_average_reweights_by_frames() {
        let a = EvalReport { mpjpe: 10.0, p_mpjpe: 8.0, n_mpjpe: 9.0, mpjve: 1.0, frame_count: 3 };
        let b = EvalReport { mpjpe: 20.0, p_mpjpe: 16.0, n_mpjpe: 18.0, mpjve: 2.0, frame_count: 7 };
        let avg = weighted_average(&[a, b]);
        assert!((avg.mpjpe - (10.0 * 3.0 + 20.0 * 7.0) / 10.0).abs() < 1e-12);
        assert!((avg.mpjve - (1.0 * 2.0 + 2.0 * 6.0) / 8.0).abs() < 1e-12);
        assert_eq!(avg.frame_count, 10);
    }
}
