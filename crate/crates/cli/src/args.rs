use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "tdcnet",
    version,
    about = "Deconvolution-to-convolution transform, accelerator models and SR inference"
)]
pub struct Cli {
    /// Report rendering.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Write the report to this file instead of standard output.
    #[arg(long, global = true, value_name = "FILE")]
    pub report: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rewrite the deconvolution weights of a weight file as convolution weights.
    Transform(TransformArgs),
    /// Check transformed convolution against the brute-force deconvolution.
    VerifyTdc(VerifyArgs),
    /// Show the load-balanced PE streams of a deconvolution layer.
    Schedule(ScheduleArgs),
    /// Cycle counts of the proposed and conventional deconvolution processors.
    Cycles(CyclesArgs),
    /// Multiplier, DSP and BRAM estimates.
    Resources(ResourcesArgs),
    /// Layer processor plan with line-buffer sizes.
    Plan(PlanArgs),
    /// Upscale an image.
    Infer(InferArgs),
    /// Mean PSNR of the fixed-point pipeline against float for several bit-widths.
    SweepBitwidth(SweepArgs),
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    /// Destination of the transformed weight document.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub kd: usize,
    #[arg(long)]
    pub stride: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub kd: usize,
    #[arg(long)]
    pub stride: usize,
    /// Number of PEs (defaults to S²).
    #[arg(long)]
    pub pe_count: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CycleModel {
    Fsrcnn,
    Dcgan,
    Custom,
}

#[derive(Debug, Args)]
pub struct CyclesArgs {
    #[arg(long, value_enum)]
    pub model: CycleModel,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub h_in: Option<usize>,
    #[arg(long)]
    pub w_in: Option<usize>,
    #[arg(long)]
    pub kd: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub tm: Option<usize>,
    #[arg(long)]
    pub tn: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NetModel {
    Fsrcnn,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = NetModel::Fsrcnn)]
    pub model: NetModel,
    #[arg(long, default_value_t = 56)]
    pub x: usize,
    #[arg(long, default_value_t = 12)]
    pub y: usize,
    #[arg(long, default_value_t = 4)]
    pub z: usize,
    #[arg(long, default_value_t = 9)]
    pub kd: usize,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    /// Take the network from a weight file instead of x/y/z/kd.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResourcesArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long, default_value_t = 13)]
    pub bits: u32,
    /// Input image width driving the line-buffer sizes.
    #[arg(long, default_value_t = 1920)]
    pub width: usize,
    /// Also evaluate the reported FSRCNN(x, y, z) variants.
    #[arg(long)]
    pub variants: bool,
    /// Search FSRCNN(x, y, z) variants that fit the budgets.
    #[arg(long)]
    pub search: bool,
    #[arg(long, default_value_t = 1540)]
    pub dsp_budget: u64,
    #[arg(long, default_value_t = 1590)]
    pub bram_budget: u64,
    /// Maximum number of search results kept.
    #[arg(long, default_value_t = 10)]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 13)]
    pub bits: u32,
    #[arg(long, default_value_t = 1920)]
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InferMode {
    Float,
    Fixed,
}

#[derive(Debug, Args)]
pub struct FixedArgs {
    /// Total bits of weights and activations in fixed mode.
    #[arg(long, default_value_t = 13)]
    pub bits: u32,
    /// Fractional bits (defaults to bits − 4).
    #[arg(long)]
    pub frac: Option<u32>,
    /// Narrow every product and partial sum instead of once per layer.
    #[arg(long)]
    pub per_stage: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    #[arg(long)]
    pub scale: usize,
    #[arg(long, value_enum, default_value_t = InferMode::Fixed)]
    pub mode: InferMode,
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Run row by row through line buffers.
    #[arg(long)]
    pub streaming: bool,
    #[command(flatten)]
    pub fixed: FixedArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    /// Bit-widths as a range `8..16` or a list `8,13,16`.
    #[arg(long, default_value = "8..16", value_parser = parse_bits)]
    pub bits: BitList,
    /// Directory of PPM/PGM images.
    #[arg(long, value_name = "DIR")]
    pub images: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitList(pub Vec<u32>);

pub fn parse_bits(s: &str) -> Result<BitList, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<u32>()
            .map_err(|_| format!("invalid bit-width {t:?}"))
    };
    let bits = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty range {s}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if let Some(b) = bits.iter().find(|&&b| !(4..=32).contains(&b)) {
        return Err(format!("bit-width {b} outside 4..=32"));
    }
    Ok(BitList(bits))
}
