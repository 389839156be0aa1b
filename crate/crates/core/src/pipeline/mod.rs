//! Super-resolution pipeline: the luma channel runs through the network,
//! chroma is upscaled bicubically, and the channels are recombined.

mod image_io;
mod stream;

pub use image_io::{decode_pnm, encode_pnm, read_image, write_image, Image};
pub use stream::{forward_streaming, LayerStats, LineBufferState, StreamStats};

use crate::error::{Error, Result};
use crate::exec::{forward, ExecNetwork, FloatArith};
use crate::model::{NetworkSpec, Tensor3};
use crate::quant::{quantize_exec, quantize_value, FixedArith};
use crate::reference::{bicubic_upscale, rgb_to_ycbcr, ycbcr_to_rgb, YCbCr};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Float,
    Fixed(FixedArith),
}

impl Mode {
    /// Fixed-point mode with the default 13-bit formats.
    pub fn fixed() -> Self {
        Mode::Fixed(FixedArith::default())
    }
}

/// Channel-major `f64` copy of an image (samples stay in 0..=255).
pub fn image_to_tensor(img: &Image) -> Tensor3 {
    Tensor3::from_fn(img.channels(), img.height(), img.width(), |c, y, x| {
        img.get(c, y, x) as f64
    })
    .expect("image dimensions are non-zero")
}

fn luma_chroma(img: &Image) -> (Tensor3, Option<(Tensor3, Tensor3)>) {
    let (h, w) = (img.height(), img.width());
    if img.channels() == 1 {
        return (image_to_tensor(img), None);
    }
    let px: Vec<YCbCr> = (0..h * w)
        .map(|i| rgb_to_ycbcr(img.get(0, i / w, i % w), img.get(1, i / w, i % w), img.get(2, i / w, i % w)))
        .collect();
    let plane = |f: fn(&YCbCr) -> f64| {
        Tensor3::from_vec(1, h, w, px.iter().map(f).collect()).expect("matching size")
    };
    (plane(|p| p.y), Some((plane(|p| p.cb), plane(|p| p.cr))))
}

fn check_network(net: &NetworkSpec, scale: usize) -> Result<()> {
    if net.scale() != scale {
        return Err(Error::Unsupported(format!(
            "network upscales by {}, requested scale {scale}",
            net.scale()
        )));
    }
    match net.in_maps() {
        Some(1) | None => Ok(()),
        Some(n) => Err(Error::Config(format!(
            "network takes {n} input maps; the pipeline feeds a single luma map"
        ))),
    }
}

/// Runs the network on a normalised luma plane and returns the upscaled
/// normalised plane, optionally streaming row by row.
pub fn upscale_luma(
    luma: &Tensor3,
    net: &NetworkSpec,
    mode: &Mode,
    streaming: bool,
) -> Result<(Tensor3, Option<StreamStats>)> {
    let float = ExecNetwork::from_spec(net)?;
    match mode {
        Mode::Float => {
            if streaming {
                let (t, s) = forward_streaming(&FloatArith, &float, luma)?;
                Ok((t, Some(s)))
            } else {
                Ok((forward(&FloatArith, &float, luma)?, None))
            }
        }
        Mode::Fixed(arith) => {
            let q = quantize_exec(&float, arith.weights, arith.activations, arith.accumulation);
            let fa = arith.activations;
            let raw = luma.map(|v| quantize_value(v, fa));
            let (out, stats) = if streaming {
                let (t, s) = forward_streaming(&q.arith, &q.exec, &raw)?;
                (t, Some(s))
            } else {
                (forward(&q.arith, &q.exec, &raw)?, None)
            };
            Ok((out.map(|r| fa.dequantize(r)), stats))
        }
    }
}

fn run(img: &Image, net: &NetworkSpec, scale: usize, mode: &Mode, streaming: bool) -> Result<(Image, Option<StreamStats>)> {
    check_network(net, scale)?;
    let (luma, chroma) = luma_chroma(img);
    let (hr, stats) = upscale_luma(&luma.map(|v| v / 255.0), net, mode, streaming)?;
    let y8 = hr.map(|v| (v * 255.0).round_ties_even().clamp(0.0, 255.0));
    let (h, w) = (y8.height(), y8.width());
    let out = match chroma {
        None => Image::new(w, h, 1, y8.data().iter().map(|&v| v as u8).collect())?,
        Some((cb, cr)) => {
            let cb = bicubic_upscale(&cb, scale)?;
            let cr = bicubic_upscale(&cr, scale)?;
            let mut data = Vec::with_capacity(3 * h * w);
            for y in 0..h {
                for x in 0..w {
                    data.extend(ycbcr_to_rgb(YCbCr {
                        y: y8.get(0, y, x),
                        cb: cb.get(0, y, x),
                        cr: cr.get(0, y, x),
                    }));
                }
            }
            Image::new(w, h, 3, data)?
        }
    };
    Ok((out, stats))
}

/// Upscales an 8-bit grey or RGB image by `scale`.
pub fn infer(img: &Image, net: &NetworkSpec, scale: usize, mode: &Mode) -> Result<Image> {
    Ok(run(img, net, scale, mode, false)?.0)
}

/// As [`infer`], executed row by row through per-layer line buffers.
pub fn infer_streaming(
    img: &Image,
    net: &NetworkSpec,
    scale: usize,
    mode: &Mode,
) -> Result<(Image, StreamStats)> {
    let (out, stats) = run(img, net, scale, mode, true)?;
    Ok((out, stats.expect("streaming run reports buffer usage")))
}
