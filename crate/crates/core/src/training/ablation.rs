use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_model, fit, TrainConfig};
use crate::body::{random_shape, PoseParams};
use crate::error::Result;
use crate::oracle::EvalReport;

/// One configuration of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub sweep: String,
    pub label: String,
    pub is_default: bool,
    pub config: TrainConfig,
}

/// A trained configuration scored on held-out bodies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub sweep: String,
    pub label: String,
    pub is_default: bool,
    pub rank: usize,
    pub width: usize,
    pub padding: f64,
    pub points_per_part: usize,
    pub param_count: usize,
    pub report: EvalReport,
}

/// Rank, width, padding and cloud-size sweeps around `base`, each varying
/// one knob.
pub fn standard_sweeps(base: &TrainConfig) -> Vec<AblationEntry> {
    let mut out = Vec::new();
    let mut push = |sweep: &str, label: String, is_default: bool, config: TrainConfig| {
        out.push(AblationEntry {
            sweep: sweep.into(),
            label,
            is_default,
            config,
        });
    };
    for r in [0, 1, 5, 10, 20, 40, 80] {
        push(
            "rank",
            format!("R={r}"),
            r == 80,
            TrainConfig {
                rank: r,
                ..base.clone()
            },
        );
    }
    for w in [32, 40, 50, 64] {
        push(
            "width",
            format!("width={w}"),
            w == 64,
            TrainConfig {
                width: w,
                ..base.clone()
            },
        );
    }
    for p in [
        0.05, 0.075, 0.1, 0.125, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0,
    ] {
        push(
            "padding",
            format!("padding={p}"),
            p == 0.125,
            TrainConfig {
                padding: p,
                ..base.clone()
            },
        );
    }
    for n in [250, 500, 750, 1000, 1250, 1500, 1750, 2000] {
        push(
            "points",
            format!("points={n}"),
            n == 1000,
            TrainConfig {
                points_per_part: n,
                ..base.clone()
            },
        );
    }
    out
}

/// Mean of several reports (IoU, errors and time averaged; point counts summed).
pub fn mean_report(reports: &[EvalReport]) -> EvalReport {
    let n = reports.len().max(1) as f64;
    let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    EvalReport {
        iou_mean: avg(|r| r.iou_mean),
        iou_surf: avg(|r| r.iou_surf),
        iou_unif: avg(|r| r.iou_unif),
        mse_sdf: avg(|r| r.mse_sdf),
        mse_abs_sdf: avg(|r| r.mse_abs_sdf),
        query_time: avg(|r| r.query_time),
        points_evaluated: reports.iter().map(|r| r.points_evaluated).sum(),
    }
}

/// Trains every entry and scores it on `eval_bodies` bodies drawn from `eval_seed`.
pub fn ablation_matrix(
    entries: &[AblationEntry],
    eval_bodies: usize,
    eval_seed: u64,
) -> Result<Vec<AblationRow>> {
    entries
        .iter()
        .map(|e| {
            let ckpt = fit(e.config.clone(), |_| {})?;
            let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
            let reports = (0..eval_bodies)
                .map(|_| {
                    let beta = random_shape(&mut rng);
                    let theta = PoseParams::random(&mut rng, e.config.joint_range);
                    evaluate_model(
                        &ckpt.model,
                        &beta,
                        &theta,
                        e.config.padding,
                        e.config.points_per_part,
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AblationRow {
                sweep: e.sweep.clone(),
                label: e.label.clone(),
                is_default: e.is_default,
                rank: e.config.rank,
                width: e.config.width,
                padding: e.config.padding,
                points_per_part: e.config.points_per_part,
                param_count: ckpt.model.param_count(),
                report: mean_report(&reports),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_and_padding_sweeps_mark_one_default() {
        let entries = standard_sweeps(&TrainConfig::default());
        let widths: Vec<usize> = entries
            .iter()
            .filter(|e| e.sweep == "width")
            .map(|e| e.config.width)
            .collect();
        assert_eq!(widths, vec![32, 40, 50, 64]);
        let pad_default: Vec<_> = entries
            .iter()
            .filter(|e| e.sweep == "padding" && e.is_default)
            .collect();
        assert_eq!(pad_default.len(), 1);
        assert_eq!(pad_default[0].config.padding, 0.125);
    }

    #[test]
    fn tiny_matrix_reports_closed_form_parameter_counts() {
        let base = TrainConfig {
            batch_size: 1,
            total_steps: 1,
            width: 8,
            points_per_part: 16,
            ..Default::default()
        };
        let entries: Vec<_> = [0, 2]
            .iter()
            .map(|&r| AblationEntry {
                sweep: "rank".into(),
                label: format!("R={r}"),
                is_default: false,
                config: TrainConfig {
                    rank: r,
                    ..base.clone()
                },
            })
            .collect();
        let rows = ablation_matrix(&entries, 1, 7).unwrap();
        assert!(rows[0].param_count < rows[1].param_count);
        let enc = 3 * 128 + 128 + 9 * (128 * 128 + 128);
        for row in &rows {
            let spec = crate::volsdf::DecoderSpec {
                width: 8,
                rank: row.rank,
                use_gamma: true,
            };
            assert_eq!(row.param_count, enc + spec.bank_param_count());
            assert_eq!(row.report.points_evaluated, 60_000);
        }
    }
}
