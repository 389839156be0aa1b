//! Built-in layer shapes and the externally reported figures they are
//! compared against.

use serde::Serialize;

use crate::scheduler::{cycle_report, CycleReport, DeconvShape, TilingParams};

/// Low-resolution pixel count of the FSRCNN deconvolution workload, chosen
/// so the cycle models reproduce the reported S = 2 row exactly.
pub const FSRCNN_LR_PIXELS: usize = 9_362;

/// Relative tolerance for reported values that carry more digits than the
/// one-thousand unit resolves.
pub const REPORTED_TOLERANCE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CyclePreset {
    pub label: &'static str,
    pub shape: DeconvShape,
    pub tiling: TilingParams,
    /// Reported proposed and baseline cycles, in thousands.
    pub reported_proposed_k: Option<u64>,
    pub reported_baseline_k: Option<u64>,
}

pub fn dcgan_presets() -> Vec<CyclePreset> {
    let tiling = TilingParams {
        t_m: 4,
        t_n: 128,
        t_k: 3,
    };
    let layer = |label, m, n, h, base, prop| CyclePreset {
        label,
        shape: DeconvShape {
            out_maps: m,
            in_maps: n,
            h_in: h,
            w_in: h,
            kd: 5,
            stride: 2,
        },
        tiling,
        reported_proposed_k: Some(prop),
        reported_baseline_k: Some(base),
    };
    vec![
        layer("dcgan-1", 512, 1024, 4, 1_638, 458),
        layer("dcgan-2", 256, 512, 8, 1_638, 458),
        layer("dcgan-3", 128, 256, 16, 1_638, 458),
        layer("dcgan-4", 3, 128, 32, 102, 21),
    ]
}

pub fn fsrcnn_presets() -> Vec<CyclePreset> {
    [(2, 5, 1_376, 21_233), (3, 3, 589, 47_775), (4, 3, 786, 84_934)]
        .into_iter()
        .map(|(s, kc, prop, base)| CyclePreset {
            label: match s {
                2 => "fsrcnn-x2",
                3 => "fsrcnn-x3",
                _ => "fsrcnn-x4",
            },
            shape: DeconvShape {
                out_maps: 1,
                in_maps: 56,
                h_in: 1,
                w_in: FSRCNN_LR_PIXELS,
                kd: 9,
                stride: s,
            },
            tiling: TilingParams {
                t_m: 56,
                t_n: 9,
                t_k: kc,
            },
            reported_proposed_k: Some(prop),
            reported_baseline_k: Some(base),
        })
        .collect()
}

/// Agreement between a computed count and a figure reported in thousands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    Match,
    Discrepancy,
    NotReported,
}

pub fn agreement(computed: u64, reported_k: Option<u64>) -> Agreement {
    match reported_k {
        None => Agreement::NotReported,
        Some(k) => {
            let r = (k * 1000) as f64;
            let diff = (computed as f64 - r).abs();
            if diff < 1000.0 || diff <= REPORTED_TOLERANCE * r {
                Agreement::Match
            } else {
                Agreement::Discrepancy
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PresetRow {
    pub label: &'static str,
    pub shape: DeconvShape,
    pub tiling: TilingParams,
    pub report: CycleReport,
    pub proposed_vs_reported: Agreement,
    pub baseline_vs_reported: Agreement,
}

pub fn evaluate(preset: &CyclePreset) -> PresetRow {
    let report = cycle_report(&preset.shape, &preset.tiling);
    PresetRow {
        label: preset.label,
        shape: preset.shape,
        tiling: preset.tiling,
        proposed_vs_reported: agreement(report.proposed_cycles, preset.reported_proposed_k),
        baseline_vs_reported: agreement(report.baseline_cycles, preset.reported_baseline_k),
        report,
    }
}

/// A reported FSRCNN(x, y, z) variant with `K_D = 7`, `S = 2`, `α = 0.7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReportedVariant {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub dsp: u64,
    pub bram: u64,
}

const fn variant(x: usize, y: usize, z: usize, dsp: u64, bram: u64) -> ReportedVariant {
    ReportedVariant { x, y, z, dsp, bram }
}

pub const REPORTED_VARIANTS: [ReportedVariant; 12] = [
    variant(17, 5, 4, 1_514, 194),
    variant(21, 4, 4, 1_494, 205),
    variant(25, 3, 4, 1_511, 215),
    variant(20, 5, 3, 1_531, 194),
    variant(23, 4, 3, 1_507, 202),
    variant(26, 3, 3, 1_510, 210),
    variant(22, 5, 2, 1_497, 188),
    variant(24, 4, 2, 1_482, 193),
    variant(26, 3, 2, 1_492, 198),
    variant(25, 5, 1, 1_512, 188),
    variant(26, 4, 1, 1_480, 191),
    variant(28, 3, 1, 1_509, 200),
];

/// Input width assumed when comparing variant BRAM figures.
pub const VARIANT_INPUT_WIDTH: usize = 1_440;
