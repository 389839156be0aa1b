use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use tdcnet_core::dataflow::{
    bram_count, fsrcnn_shapes, plan_dataflow, processor_shapes, resource_report_shapes,
    search_models, SearchSpace,
};
use tdcnet_core::model::WeightFile;
use tdcnet_core::pipeline::{infer, infer_streaming, read_image, write_image, Image, Mode};
use tdcnet_core::presets::{
    dcgan_presets, evaluate, fsrcnn_presets, CyclePreset, REPORTED_VARIANTS,
    VARIANT_INPUT_WIDTH,
};
use tdcnet_core::quant::{sweep_bitwidth, Accumulation, FixedArith, QFormat};
use tdcnet_core::scheduler::{build_layer_schedule, DeconvShape, TilingParams};
use tdcnet_core::tdc::{derive_geometry, transform_weights, zero_analysis};
use tdcnet_core::verify::verify_equivalence;
use tdcnet_core::{build_fsrcnn, DeconvLayerSpec, Error, FsrcnnConfig, NetworkSpec};

use crate::args::*;
use crate::report::InputDigest;

pub const TRANSFORMED_FORMAT: &str = "tdcnet-transformed-v1";

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable or malformed inputs.
    Usage(String),
    /// A check ran and found a mismatch.
    Verification(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Verification(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Verification(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Contract(_) | Error::Consistency(_) => Failure::Verification(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

pub type Sections = Vec<(&'static str, Value)>;

/// Sections of the report plus a failure that should still be reported.
pub struct Outcome {
    pub sections: Sections,
    pub failure: Option<Failure>,
}

impl From<Sections> for Outcome {
    fn from(sections: Sections) -> Self {
        Outcome {
            sections,
            failure: None,
        }
    }
}

fn read_input(path: &Path, digest: &mut InputDigest) -> Result<Vec<u8>, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    digest.add(&bytes);
    Ok(bytes)
}

fn load_weights(path: &Path, digest: &mut InputDigest) -> Result<WeightFile, Failure> {
    let bytes = read_input(path, digest)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Failure::Usage(format!("{} is not UTF-8", path.display())))?;
    Ok(WeightFile::from_json(&text)?)
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialise")
}

pub fn transform(a: &TransformArgs, digest: &mut InputDigest) -> Result<Outcome, Failure> {
    let file = load_weights(&a.weights, digest)?;
    let mut layers = Vec::new();
    let mut summary = Vec::new();
    for d in &file.deconv {
        let layer = DeconvLayerSpec::new(
            "deconv",
            d.kd,
            d.scale,
            1,
            file.config.x,
            d.weights.clone(),
            d.bias.clone(),
        )?;
        let geom = derive_geometry(d.kd, d.scale)?;
        let (conv, zeros) = transform_weights(&layer)?;
        summary.push(json!({
            "scale": d.scale,
            "kd": d.kd,
            "kc": geom.kc,
            "crop_offset": geom.crop_offset,
            "out_maps": conv.out_maps,
            "in_maps": conv.in_maps,
            "num_zero": zeros.num_zero,
            "zero_ratio": zeros.zero_ratio,
        }));
        layers.push(json!({
            "scale": d.scale,
            "kd": d.kd,
            "kc": geom.kc,
            "pad_before": conv.pad_before,
            "out_maps": conv.out_maps,
            "in_maps": conv.in_maps,
            "weights": conv.weights,
            "bias": conv.bias,
        }));
    }
    let doc = json!({ "format": TRANSFORMED_FORMAT, "layers": layers });
    let text = serde_json::to_string_pretty(&doc).expect("document serialises") + "\n";
    std::fs::write(&a.out, text)
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", a.out.display())))?;
    Ok(vec![(
        "transform",
        json!({ "output": a.out.display().to_string(), "layers": summary }),
    )]
    .into())
}

pub fn verify_tdc(a: &VerifyArgs) -> Result<Outcome, Failure> {
    let r = verify_equivalence(a.kd, a.stride, a.trials, a.seed)?;
    let failure = (r.failures > 0).then(|| {
        Failure::Verification(format!(
            "{} of {} trials differ from the reference (max error {})",
            r.failures, r.trials, r.max_abs_error
        ))
    });
    Ok(Outcome {
        sections: vec![("equivalence", to_value(&r))],
        failure,
    })
}

pub fn schedule(a: &ScheduleArgs) -> Result<Outcome, Failure> {
    let pe_count = a.pe_count.unwrap_or(a.stride * a.stride);
    if pe_count == 0 {
        return Err(Failure::Usage("--pe-count must be at least 1".into()));
    }
    let layer = DeconvLayerSpec::new(
        "deconv",
        a.kd,
        a.stride,
        a.m,
        a.n,
        vec![1.0; a.m * a.n * a.kd * a.kd],
        vec![0.0; a.m],
    )?;
    let sched = build_layer_schedule(&layer, pe_count)?;
    let zeros = zero_analysis(&sched.geometry, a.m, a.n);
    let first = &sched.groups[0];
    let streams: Vec<Value> = first
        .streams
        .iter()
        .enumerate()
        .map(|(pe, s)| {
            json!({
                "pe": pe,
                "macs": s.len(),
                "stream": s.iter().map(|i| json!({
                    "phase": i.phase_channel,
                    "y": i.input_pos.0,
                    "x": i.input_pos.1,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(vec![(
        "schedule",
        json!({
            "kd": a.kd,
            "stride": a.stride,
            "kc": sched.geometry.kc,
            "pe_count": pe_count,
            "depth": sched.depth,
            "unbalanced_depth": first.unbalanced_depth,
            "moved": first.moved,
            "per_filter_nonzero": zeros.per_filter_nonzero,
            "groups": sched.groups.len(),
            "streams": streams,
        }),
    )]
    .into())
}

fn cycle_rows(presets: &[CyclePreset]) -> Value {
    let rows: Vec<Value> = presets
        .iter()
        .map(|p| {
            let r = evaluate(p);
            let kc = derive_geometry(p.shape.kd, p.shape.stride).map_or(0, |g| g.kc);
            json!({
                "layer": r.label,
                "m": p.shape.out_maps,
                "n": p.shape.in_maps,
                "h_in": p.shape.h_in,
                "w_in": p.shape.w_in,
                "kd": p.shape.kd,
                "kc": kc,
                "stride": p.shape.stride,
                "t_m": p.tiling.t_m,
                "t_n": p.tiling.t_n,
                "baseline_cycles": r.report.baseline_cycles,
                "proposed_cycles": r.report.proposed_cycles,
                "speedup": r.report.speedup,
                "case": r.report.case,
                "predicted_speedup": r.report.predicted_speedup,
                "reported_baseline_k": p.reported_baseline_k,
                "reported_proposed_k": p.reported_proposed_k,
                "baseline_vs_reported": r.baseline_vs_reported,
                "proposed_vs_reported": r.proposed_vs_reported,
            })
        })
        .collect();
    Value::Array(rows)
}

pub fn cycles(a: &CyclesArgs) -> Result<Outcome, Failure> {
    let (name, presets) = match a.model {
        CycleModel::Dcgan => ("dcgan", dcgan_presets()),
        CycleModel::Fsrcnn => ("fsrcnn", fsrcnn_presets()),
        CycleModel::Custom => {
            let fields = [
                ("--m", a.m),
                ("--n", a.n),
                ("--h-in", a.h_in),
                ("--w-in", a.w_in),
                ("--kd", a.kd),
                ("--stride", a.stride),
                ("--tm", a.tm),
                ("--tn", a.tn),
            ];
            let missing: Vec<&str> = fields.iter().filter(|f| f.1.is_none()).map(|f| f.0).collect();
            if !missing.is_empty() {
                return Err(Failure::Usage(format!(
                    "--model custom requires {}",
                    missing.join(", ")
                )));
            }
            let v = |i: usize| fields[i].1.unwrap_or_default();
            let geom = derive_geometry(v(4), v(5))?;
            let preset = CyclePreset {
                label: "custom",
                shape: DeconvShape {
                    out_maps: v(0),
                    in_maps: v(1),
                    h_in: v(2),
                    w_in: v(3),
                    kd: v(4),
                    stride: v(5),
                },
                tiling: TilingParams::new(v(6), v(7), geom.kc)?,
                reported_proposed_k: None,
                reported_baseline_k: None,
            };
            ("custom", vec![preset])
        }
    };
    let rows = cycle_rows(&presets);
    let total = |key: &str| -> u64 {
        rows.as_array()
            .into_iter()
            .flatten()
            .filter_map(|r| r[key].as_u64())
            .sum()
    };
    let (tb, tp) = (total("baseline_cycles"), total("proposed_cycles"));
    let mut section = json!({ "model": name, "rows": rows });
    if a.model == CycleModel::Dcgan {
        section["totals"] = json!({
            "baseline_cycles": tb,
            "proposed_cycles": tp,
            "speedup": tb as f64 / tp as f64,
        });
    }
    if a.model == CycleModel::Fsrcnn {
        section["lr_pixels"] = json!(tdcnet_core::presets::FSRCNN_LR_PIXELS);
    }
    Ok(vec![("cycles", section)].into())
}

struct ModelChoice {
    net: NetworkSpec,
    description: Value,
}

fn resolve_model(m: &ModelArgs, digest: &mut InputDigest) -> Result<ModelChoice, Failure> {
    if let Some(path) = &m.weights {
        let file = load_weights(path, digest)?;
        let net = file.network(m.scale)?;
        let c = &file.config;
        return Ok(ModelChoice {
            net,
            description: json!({
                "source": path.display().to_string(),
                "x": c.x, "y": c.y, "z": c.z, "kd": c.deconv_kernel, "scale": m.scale,
            }),
        });
    }
    let NetModel::Fsrcnn = m.model;
    let cfg = FsrcnnConfig::new(m.x, m.y, m.z, m.kd, vec![m.scale])?;
    Ok(ModelChoice {
        net: build_fsrcnn(&cfg, m.scale)?,
        description: json!({
            "source": "fsrcnn",
            "x": m.x, "y": m.y, "z": m.z, "kd": m.kd, "scale": m.scale,
        }),
    })
}

pub fn resources(a: &ResourcesArgs, digest: &mut InputDigest) -> Result<Outcome, Failure> {
    let choice = resolve_model(&a.model, digest)?;
    let shapes = processor_shapes(&choice.net)?;
    let r = resource_report_shapes(&shapes, a.alpha, a.width, a.bits)?;
    let mut sections: Sections = vec![(
        "resources",
        json!({
            "model": choice.description,
            "multiply_count": r.multiply_count,
            "dsp_count": r.dsp_count,
            "alpha": r.alpha,
            "bram_count": r.bram_count,
            "total_line_buffer_bits": r.total_line_buffer_bits,
            "bit_width": a.bits,
            "input_width": a.width,
            "bram_scope": "line buffers only; weight buffers, chroma-path buffers and I/O FIFOs are excluded",
        }),
    )];
    if let Some(d) = choice.net.deconv() {
        let g = derive_geometry(d.kernel, d.scale)?;
        let z = zero_analysis(&g, d.out_maps, d.in_maps);
        sections.push((
            "zero_weights",
            json!({
                "kd": d.kernel,
                "stride": d.scale,
                "kc": g.kc,
                "num_zero": z.num_zero,
                "zero_ratio": z.zero_ratio,
                "per_filter_nonzero": z.per_filter_nonzero,
            }),
        ));
    }
    if a.variants {
        let mut rows = Vec::new();
        for v in REPORTED_VARIANTS {
            let cfg = FsrcnnConfig::new(v.x, v.y, v.z, 7, vec![2])?;
            let rr = resource_report_shapes(&fsrcnn_shapes(&cfg, 2)?, a.alpha, VARIANT_INPUT_WIDTH, a.bits)?;
            rows.push(json!({
                "x": v.x,
                "y": v.y,
                "z": v.z,
                "multiply_count": rr.multiply_count,
                "dsp_count": rr.dsp_count,
                "reported_dsp": v.dsp,
                "dsp_matches": rr.dsp_count == v.dsp,
                "bram_count": rr.bram_count,
                "reported_bram": v.bram,
                "bram_gap": v.bram as i64 - rr.bram_count as i64,
            }));
        }
        sections.push((
            "variants",
            json!({ "kd": 7, "scale": 2, "input_width": VARIANT_INPUT_WIDTH, "rows": rows }),
        ));
    }
    if a.search {
        let kd = a.model.kd;
        let space = SearchSpace {
            x: 8..=32,
            y: 2..=8,
            z: 1..=4,
            kd,
            scale: a.model.scale,
            alpha: a.alpha,
            dsp_budget: a.dsp_budget,
            bram_budget: a.bram_budget,
            input_width: a.width,
            bit_width: a.bits,
        };
        let found = search_models(&space)?;
        let rows: Vec<Value> = found
            .iter()
            .rev()
            .take(a.limit)
            .map(|c| {
                json!({
                    "x": c.x, "y": c.y, "z": c.z,
                    "multiply_count": c.resources.multiply_count,
                    "dsp_count": c.resources.dsp_count,
                    "bram_count": c.resources.bram_count,
                })
            })
            .collect();
        sections.push((
            "search",
            json!({
                "dsp_budget": a.dsp_budget,
                "bram_budget": a.bram_budget,
                "feasible": found.len(),
                "largest": rows,
            }),
        ));
    }
    Ok(sections.into())
}

pub fn plan(a: &PlanArgs, digest: &mut InputDigest) -> Result<Outcome, Failure> {
    let choice = resolve_model(&a.model, digest)?;
    let plan = plan_dataflow(&choice.net, a.width, a.bits)?;
    let mut v = to_value(&plan);
    v["model"] = choice.description;
    v["input_width"] = json!(a.width);
    v["bit_width"] = json!(a.bits);
    v["total_line_buffer_words"] = json!(plan.total_line_buffer_words());
    v["total_line_buffer_bits"] = json!(plan.total_line_buffer_bits());
    v["bram_count"] = json!(bram_count(&plan));
    Ok(vec![("plan", v)].into())
}

fn fixed_mode(f: &FixedArgs) -> Result<FixedArith, Failure> {
    let frac = match f.frac {
        Some(fr) => fr,
        None => f.bits.checked_sub(4).ok_or_else(|| {
            Failure::Usage(format!("--bits {} leaves no integer bits", f.bits))
        })?,
    };
    let q = QFormat::new(f.bits, frac)?;
    Ok(FixedArith {
        weights: q,
        activations: q,
        accumulation: if f.per_stage {
            Accumulation::PerStage
        } else {
            Accumulation::Wide
        },
    })
}

fn load_image(path: &Path, digest: &mut InputDigest) -> Result<Image, Failure> {
    read_input(path, digest)?;
    Ok(read_image(path)?)
}

fn image_json(img: &Image) -> Value {
    json!({ "width": img.width(), "height": img.height(), "channels": img.channels() })
}

pub fn infer_cmd(a: &InferArgs, digest: &mut InputDigest) -> Result<Outcome, Failure> {
    let file = load_weights(&a.weights, digest)?;
    let net = file.network(a.scale)?;
    let img = load_image(&a.input, digest)?;
    let mode = match a.mode {
        InferMode::Float => Mode::Float,
        InferMode::Fixed => Mode::Fixed(fixed_mode(&a.fixed)?),
    };
    let (out, stats) = if a.streaming {
        let (o, s) = infer_streaming(&img, &net, a.scale, &mode)?;
        (o, Some(s))
    } else {
        (infer(&img, &net, a.scale, &mode)?, None)
    };
    write_image(&a.out, &out)?;
    let mut section = json!({
        "scale": a.scale,
        "mode": match mode {
            Mode::Float => json!("float"),
            Mode::Fixed(f) => json!({ "fixed": to_value(&f) }),
        },
        "input": image_json(&img),
        "output": image_json(&out),
        "output_path": a.out.display().to_string(),
    });
    if let Some(s) = stats {
        section["streaming"] = to_value(&s);
    }
    Ok(vec![("inference", section)].into())
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "ppm" | "pgm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Usage(format!("no .ppm or .pgm images in {}", dir.display())));
    }
    Ok(files)
}

pub fn sweep(a: &SweepArgs, digest: &mut InputDigest) -> Result<Outcome, Failure> {
    let file = load_weights(&a.weights, digest)?;
    let net = file.network(a.scale)?;
    let files = image_files(&a.images)?;
    let images = files
        .iter()
        .map(|p| load_image(p, digest))
        .collect::<Result<Vec<_>, _>>()?;
    let points = sweep_bitwidth(&net, &images, &a.bits.0)?;
    Ok(vec![(
        "sweep",
        json!({
            "scale": a.scale,
            "images": images.len(),
            "frac_bits": "total_bits - 4",
            "points": points
                .iter()
                .map(|p| json!({ "bits": p.bits, "psnr_db": finite_or_null(p.psnr_db) }))
                .collect::<Vec<_>>(),
        }),
    )]
    .into())
}

/// JSON has no infinity; identical outputs are reported as `null`.
fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}
