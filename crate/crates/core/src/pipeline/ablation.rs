//! Component ablation harness over the toy benchmark.
//!
//! Six variants: the plain source-trained baseline, the coarse-alignment
//! model alone, and the four combinations that add the category-level
//! stages with individual components removed. Runs are independent per
//! (variant, seed) pair and execute in parallel.

use serde::Serialize;

use crate::par;
use crate::Result;

use super::config::TrainingConfig;
use super::train::{run_pipeline, Datasets, StepReport};

/// Ablation rows, mirroring the component-removal study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Jittered source training only (no alignment, no self-training).
    SourceOnly,
    /// Coarse photometric alignment only (single outer step).
    GpaOnly,
    /// Alignment + self-training + consistency, no triplet.
    GpaTcr,
    /// Alignment + self-training + triplet, no consistency.
    GpaCtl,
    /// Self-training with both regularizers but no alignment.
    CtlTcr,
    /// The whole pipeline.
    Full,
}

pub const ABLATION_VARIANTS: [AblationVariant; 6] = [
    AblationVariant::SourceOnly,
    AblationVariant::GpaOnly,
    AblationVariant::GpaTcr,
    AblationVariant::GpaCtl,
    AblationVariant::CtlTcr,
    AblationVariant::Full,
];

impl AblationVariant {
    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::SourceOnly => "source_only",
            AblationVariant::GpaOnly => "gpa_only",
            AblationVariant::GpaTcr => "gpa_tcr",
            AblationVariant::GpaCtl => "gpa_ctl",
            AblationVariant::CtlTcr => "ctl_tcr",
            AblationVariant::Full => "full",
        }
    }

    /// Specialize a base config for this variant. The two coarse-stage-only
    /// variants collapse to a single outer step.
    pub fn configure(&self, base: &TrainingConfig, seed: u64) -> TrainingConfig {
        let mut cfg = base.clone();
        cfg.seed = seed;
        match self {
            AblationVariant::SourceOnly => {
                cfg.toggles.use_gpa = false;
                cfg.toggles.use_ctl = false;
                cfg.toggles.use_tcr = false;
                cfg.k_steps = 1;
            }
            AblationVariant::GpaOnly => {
                cfg.toggles.use_gpa = true;
                cfg.toggles.use_ctl = false;
                cfg.toggles.use_tcr = false;
                cfg.k_steps = 1;
            }
            AblationVariant::GpaTcr => {
                cfg.toggles.use_gpa = true;
                cfg.toggles.use_ctl = false;
                cfg.toggles.use_tcr = true;
            }
            AblationVariant::GpaCtl => {
                cfg.toggles.use_gpa = true;
                cfg.toggles.use_ctl = true;
                cfg.toggles.use_tcr = false;
            }
            AblationVariant::CtlTcr => {
                cfg.toggles.use_gpa = false;
                cfg.toggles.use_ctl = true;
                cfg.toggles.use_tcr = true;
            }
            AblationVariant::Full => {
                cfg.toggles.use_gpa = true;
                cfg.toggles.use_ctl = true;
                cfg.toggles.use_tcr = true;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub miou: f64,
    pub reports: Vec<StepReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
}

impl AblationResult {
    /// Seed-averaged mIoU per variant, in variant declaration order.
    pub fn seed_means(&self) -> Vec<(&'static str, f64)> {
        ABLATION_VARIANTS
            .iter()
            .map(|v| {
                let scores: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.variant == v.name())
                    .map(|r| r.miou)
                    .collect();
                (v.name(), scores.iter().sum::<f64>() / scores.len() as f64)
            })
            .collect()
    }

    pub fn mean_of(&self, variant: AblationVariant) -> f64 {
        self.seed_means()
            .into_iter()
            .find(|(n, _)| *n == variant.name())
            .map(|(_, m)| m)
            .expect("variant present")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,seed,miou\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6}\n", r.variant, r.seed, r.miou));
        }
        out
    }
}

/// Run every variant for every seed. Each (variant, seed) run has its own
/// derived randomness, so execution order does not matter.
pub fn ablate(base: &TrainingConfig, data: &Datasets, seeds: &[u64]) -> Result<AblationResult> {
    let jobs: Vec<(AblationVariant, u64)> = ABLATION_VARIANTS
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let outcomes: Vec<Result<AblationRow>> = par::map_indexed(jobs.len(), |j| {
        let (variant, seed) = jobs[j];
        let cfg = variant.configure(base, seed);
        let out = run_pipeline(&cfg, data, None, false)?;
        Ok(AblationRow {
            variant: variant.name(),
            seed,
            miou: out.reports.last().expect("at least one step").miou,
            reports: out.reports,
        })
    });
    let mut rows = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        rows.push(o?);
    }
    Ok(AblationResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_configuration_matches_the_component_table() {
        let base = TrainingConfig::default();
        let c = AblationVariant::SourceOnly.configure(&base, 1);
        assert!(!c.toggles.use_gpa && !c.toggles.use_ctl && !c.toggles.use_tcr);
        assert_eq!(c.k_steps, 1);
        let c = AblationVariant::GpaOnly.configure(&base, 1);
        assert!(c.toggles.use_gpa && !c.toggles.use_ctl && !c.toggles.use_tcr);
        assert_eq!(c.k_steps, 1);
        let c = AblationVariant::GpaTcr.configure(&base, 1);
        assert!(c.toggles.use_gpa && !c.toggles.use_ctl && c.toggles.use_tcr);
        assert_eq!(c.k_steps, base.k_steps);
        let c = AblationVariant::GpaCtl.configure(&base, 1);
        assert!(c.toggles.use_gpa && c.toggles.use_ctl && !c.toggles.use_tcr);
        let c = AblationVariant::CtlTcr.configure(&base, 1);
        assert!(!c.toggles.use_gpa && c.toggles.use_ctl && c.toggles.use_tcr);
        let c = AblationVariant::Full.configure(&base, 1);
        assert!(c.toggles.use_gpa && c.toggles.use_ctl && c.toggles.use_tcr);
    }

    #[test]
    fn csv_has_one_row_per_variant_seed_pair() {
        let result = AblationResult {
            rows: vec![
                AblationRow {
                    variant: "full",
                    seed: 1,
                    miou: 0.5,
                    reports: vec![],
                },
                AblationRow {
                    variant: "full",
                    seed: 2,
                    miou: 0.7,
                    reports: vec![],
                },
            ],
        };
        let csv = result.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("variant,seed,miou"));
        let means = result.seed_means();
        let full = means.iter().find(|(n, _)| *n == "full").unwrap();
        assert!((full.1 - 0.6).abs() < 1e-12);
    }
}
