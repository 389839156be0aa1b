//! On-chip dataflow planning and FPGA resource models.
//!
//! Every layer gets its own processor (CLP) tiled so that it computes exactly
//! as fast as pixels arrive, which removes the need for a frame buffer. A
//! processor followed by a 1×1 layer is fused with it ("combined CLP") and the
//! 1×1 layer needs no line buffer. The deconvolution is planned as its
//! transformed convolution.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{FsrcnnConfig, Layer, NetworkSpec};
use crate::scheduler::TilingParams;
use crate::tdc::{derive_geometry, zero_analysis};

/// Usable bits of one BRAM-18K: 512 words × 32 bits, whatever the data width.
pub const BRAM_BITS: u64 = 512 * 32;

/// A layer as seen by its processor: post-transform for the deconvolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcessorShape {
    pub name: String,
    pub kernel: usize,
    pub out_maps: usize,
    pub in_maps: usize,
    /// Structural zeros introduced by the transform (0 for convolutions).
    pub num_zero: usize,
}

impl ProcessorShape {
    fn multiplies(&self) -> u64 {
        (self.out_maps * self.in_maps * self.kernel * self.kernel - self.num_zero) as u64
    }
}

fn deconv_processor(
    name: &str,
    kd: usize,
    s: usize,
    out_maps: usize,
    in_maps: usize,
) -> Result<ProcessorShape> {
    let geom = derive_geometry(kd, s)?;
    Ok(ProcessorShape {
        name: name.to_string(),
        kernel: geom.kc,
        out_maps: s * s * out_maps,
        in_maps,
        num_zero: zero_analysis(&geom, out_maps, in_maps).num_zero,
    })
}

pub fn processor_shapes(net: &NetworkSpec) -> Result<Vec<ProcessorShape>> {
    net.layers()
        .iter()
        .map(|l| match l {
            Layer::Conv(c) => Ok(ProcessorShape {
                name: c.name.clone(),
                kernel: c.kernel,
                out_maps: c.out_maps,
                in_maps: c.in_maps,
                num_zero: 0,
            }),
            Layer::Deconv(d) => deconv_processor(&d.name, d.kernel, d.scale, d.out_maps, d.in_maps),
        })
        .collect()
}

/// Processor shapes of FSRCNN(x, y, z) without materialising weights.
pub fn fsrcnn_shapes(cfg: &FsrcnnConfig, scale: usize) -> Result<Vec<ProcessorShape>> {
    cfg.validate()?;
    let mut shapes: Vec<ProcessorShape> = cfg
        .conv_shapes()
        .into_iter()
        .zip(cfg.conv_names())
        .map(|((kernel, out_maps, in_maps), name)| ProcessorShape {
            name,
            kernel,
            out_maps,
            in_maps,
            num_zero: 0,
        })
        .collect();
    shapes.push(deconv_processor("deconv", cfg.deconv_kernel, scale, 1, cfg.x)?);
    Ok(shapes)
}

/// `⌈M/T_m⌉ · ⌈K_C/T_k⌉²`.
pub fn ctt_ratio(out_maps: usize, t_m: usize, kernel: usize, t_k: usize) -> u64 {
    let k = kernel.div_ceil(t_k) as u64;
    out_maps.div_ceil(t_m) as u64 * k * k
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClpEntry {
    pub name: String,
    pub kernel: usize,
    pub out_maps: usize,
    pub in_maps: usize,
    pub tiling: TilingParams,
    pub combined_with_next: bool,
    pub buffered: bool,
    /// Samples held by this processor's line buffer (`K_C · W · N`).
    pub line_buffer_words: u64,
    pub line_buffer_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClpPlan {
    pub input_width: usize,
    pub bit_width: u32,
    pub layers: Vec<ClpEntry>,
}

impl ClpPlan {
    pub fn total_line_buffer_bits(&self) -> u64 {
        self.layers.iter().map(|l| l.line_buffer_bits).sum()
    }

    pub fn total_line_buffer_words(&self) -> u64 {
        self.layers.iter().map(|l| l.line_buffer_words).sum()
    }
}

pub fn plan_shapes(shapes: &[ProcessorShape], input_width: usize, bit_width: u32) -> ClpPlan {
    let mut layers = Vec::with_capacity(shapes.len());
    for (i, s) in shapes.iter().enumerate() {
        let combined_with_next = shapes.get(i + 1).is_some_and(|n| n.kernel == 1);
        // A 1×1 layer with a predecessor is the second half of a combined CLP.
        let buffered = !(i > 0 && s.kernel == 1);
        let words = if buffered {
            (s.kernel * input_width * s.in_maps) as u64
        } else {
            0
        };
        layers.push(ClpEntry {
            name: s.name.clone(),
            kernel: s.kernel,
            out_maps: s.out_maps,
            in_maps: s.in_maps,
            tiling: TilingParams {
                t_m: s.out_maps,
                t_n: s.in_maps,
                t_k: s.kernel,
            },
            combined_with_next,
            buffered,
            line_buffer_words: words,
            line_buffer_bits: words * bit_width as u64,
        });
    }
    ClpPlan {
        input_width,
        bit_width,
        layers,
    }
}

/// Plans one processor per layer at computation-to-transmission ratio 1.
pub fn plan_dataflow(net: &NetworkSpec, input_width: usize, bit_width: u32) -> Result<ClpPlan> {
    Ok(plan_shapes(&processor_shapes(net)?, input_width, bit_width))
}

/// `⌈total line-buffer bits / 16,384⌉`.
pub fn bram_count(plan: &ClpPlan) -> u64 {
    plan.total_line_buffer_bits().div_ceil(BRAM_BITS)
}

/// `Σ M·N·K_C² − num_zero` over the processors.
pub fn multiply_count_shapes(shapes: &[ProcessorShape]) -> u64 {
    shapes.iter().map(ProcessorShape::multiplies).sum()
}

pub fn multiply_count(net: &NetworkSpec) -> Result<u64> {
    Ok(multiply_count_shapes(&processor_shapes(net)?))
}

/// `α` is applied at a resolution of 10⁻⁶ so the ceiling is exact.
const ALPHA_SCALE: u64 = 1_000_000;

/// `⌈α·multiplies/2 + (1−α)·multiplies⌉`: a fraction `α` of the multipliers
/// share a DSP in pairs.
pub fn dsp_count(multiplies: u64, alpha: f64) -> Result<u64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let a = (alpha * ALPHA_SCALE as f64).round() as u64;
    // multiplies · (1 − α/2) = multiplies · (2·SCALE − a) / (2·SCALE)
    Ok((multiplies * (2 * ALPHA_SCALE - a)).div_ceil(2 * ALPHA_SCALE))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceReport {
    pub multiply_count: u64,
    pub dsp_count: u64,
    pub alpha: f64,
    pub bram_count: u64,
    pub total_line_buffer_bits: u64,
}

pub fn resource_report_shapes(
    shapes: &[ProcessorShape],
    alpha: f64,
    input_width: usize,
    bit_width: u32,
) -> Result<ResourceReport> {
    let plan = plan_shapes(shapes, input_width, bit_width);
    let multiplies = multiply_count_shapes(shapes);
    Ok(ResourceReport {
        multiply_count: multiplies,
        dsp_count: dsp_count(multiplies, alpha)?,
        alpha,
        bram_count: bram_count(&plan),
        total_line_buffer_bits: plan.total_line_buffer_bits(),
    })
}

pub fn resource_report(
    net: &NetworkSpec,
    alpha: f64,
    input_width: usize,
    bit_width: u32,
) -> Result<ResourceReport> {
    resource_report_shapes(&processor_shapes(net)?, alpha, input_width, bit_width)
}

#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub x: std::ops::RangeInclusive<usize>,
    pub y: std::ops::RangeInclusive<usize>,
    pub z: std::ops::RangeInclusive<usize>,
    pub kd: usize,
    pub scale: usize,
    pub alpha: f64,
    pub dsp_budget: u64,
    pub bram_budget: u64,
    pub input_width: usize,
    pub bit_width: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCandidate {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub resources: ResourceReport,
}

/// Enumerates FSRCNN(x, y, z) variants within budget, ordered by DSP count
/// then `x`.
pub fn search_models(space: &SearchSpace) -> Result<Vec<ModelCandidate>> {
    if space.x.is_empty() || space.y.is_empty() || space.z.is_empty() {
        return Err(Error::Config("search ranges must be non-empty".into()));
    }
    let mut grid = Vec::new();
    for x in space.x.clone() {
        for y in space.y.clone() {
            for z in space.z.clone() {
                grid.push((x, y, z));
            }
        }
    }
    let evaluated = grid
        .into_par_iter()
        .map(|(x, y, z)| {
            let cfg = FsrcnnConfig::new(x, y, z, space.kd, vec![space.scale])?;
            let shapes = fsrcnn_shapes(&cfg, space.scale)?;
            let resources =
                resource_report_shapes(&shapes, space.alpha, space.input_width, space.bit_width)?;
            Ok(ModelCandidate { x, y, z, resources })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut feasible: Vec<ModelCandidate> = evaluated
        .into_iter()
        .filter(|c| {
            c.resources.dsp_count <= space.dsp_budget && c.resources.bram_count <= space.bram_budget
        })
        .collect();
    feasible.sort_by_key(|c| (c.resources.dsp_count, c.x, c.y, c.z));
    Ok(feasible)
}
