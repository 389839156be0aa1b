//! Rewriting a transposed convolution as `S²` stride-1 convolutions.
//!
//! A `K_D × K_D` stride-`S` deconvolution is replaced by a `K_C × K_C`
//! convolution with `S²·M` output maps; map `S²·m + S·y_o + x_o` produces
//! phase `(y_o, x_o)` of every `S × S` output block, and a depth-to-space
//! shuffle interleaves the phases back into the upscaled map. Because each
//! output block is computed directly from a `K_C × K_C` input window there is
//! no overlapping sum to read back and update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{same_padding, ConvLayerSpec, DeconvLayerSpec, Tensor3};
use crate::reference::{conv2d, deconv2d_canvas, depth_to_space};

/// Derived quantities of one `(K_D, S)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TdcGeometry {
    pub kd: usize,
    pub stride: usize,
    /// Numerator of the overlap count `N_O = ⌊K_D/2⌋ / S`.
    pub overlap_num: usize,
    pub kc: usize,
    /// Whether the fractional part of `N_O` is at least one half.
    pub frac_ge_half: bool,
    /// Top-left corner of the upscaled output on the brute-force canvas.
    pub crop_offset: isize,
}

impl TdcGeometry {
    /// `N_O` as a float, for display only.
    pub fn overlap(&self) -> f64 {
        self.overlap_num as f64 / self.stride as f64
    }

    fn shift(&self) -> isize {
        self.frac_ge_half as isize
    }

    pub fn pad_before(&self) -> usize {
        same_padding(self.kc).0
    }
}

/// Computes `N_O`, `K_C` and the canvas alignment for a deconvolution.
pub fn derive_geometry(kd: usize, stride: usize) -> Result<TdcGeometry> {
    if stride < 2 {
        return Err(Error::Unsupported(format!(
            "stride must be at least 2, got {stride}"
        )));
    }
    if kd < stride {
        return Err(Error::Unsupported(format!(
            "kernel {kd} smaller than stride {stride}"
        )));
    }
    let half = kd / 2;
    let whole = half / stride;
    // frac(half / S) >= 1/2  <=>  2·(half mod S) >= S, evaluated exactly.
    let frac_ge_half = 2 * (half % stride) >= stride;
    let kc = if frac_ge_half { 2 * (whole + 1) } else { 2 * whole + 1 };
    let crop_offset = kd as isize - (stride * (kc / 2 + 1)) as isize + frac_ge_half as isize;
    Ok(TdcGeometry {
        kd,
        stride,
        overlap_num: half,
        kc,
        frac_ge_half,
        crop_offset,
    })
}

/// Result of mapping one (input, output) index pair back onto the
/// deconvolution kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoefficientMapping {
    pub relative: (isize, isize),
    pub kernel_index: (isize, isize),
}

impl CoefficientMapping {
    /// `(x_d, y_d)` when it lies inside the kernel; `None` marks a zero weight.
    pub fn resolved(&self, kd: usize) -> Option<(usize, usize)> {
        let (x, y) = self.kernel_index;
        let inside = |v: isize| v >= 0 && (v as usize) < kd;
        (inside(x) && inside(y)).then_some((x as usize, y as usize))
    }
}

/// Relative position and kernel index along one axis.
fn map_axis(geom: &TdcGeometry, i: usize, o: usize) -> (isize, isize) {
    let s = geom.stride as isize;
    let relative = geom.kd as isize + geom.shift() - s * i as isize;
    (relative, relative - (s - (o as isize % s)))
}

/// Full inverse coefficient mapping including the intermediate relative
/// position.
pub fn inverse_mapping(
    geom: &TdcGeometry,
    x_i: usize,
    y_i: usize,
    x_o: usize,
    y_o: usize,
) -> Result<CoefficientMapping> {
    if x_i >= geom.kc || y_i >= geom.kc || x_o >= geom.stride || y_o >= geom.stride {
        return Err(Error::Contract(format!(
            "index out of range: x_i={x_i} y_i={y_i} (K_C={}), x_o={x_o} y_o={y_o} (S={})",
            geom.kc, geom.stride
        )));
    }
    let (xr, xd) = map_axis(geom, x_i, x_o);
    let (yr, yd) = map_axis(geom, y_i, y_o);
    Ok(CoefficientMapping {
        relative: (xr, yr),
        kernel_index: (xd, yd),
    })
}

/// Deconvolution kernel index `(x_d, y_d)` feeding input `(x_i, y_i)` into
/// output phase `(x_o, y_o)`, or `None` when that weight is zero.
pub fn map_coefficient(
    geom: &TdcGeometry,
    x_i: usize,
    y_i: usize,
    x_o: usize,
    y_o: usize,
) -> Result<Option<(usize, usize)>> {
    Ok(inverse_mapping(geom, x_i, y_i, x_o, y_o)?.resolved(geom.kd))
}

/// Zero-weight statistics of the transformed layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroAnalysis {
    pub num_zero: usize,
    pub zero_ratio: f64,
    /// Nonzero count of each of the `S²` phase filters, per `(m, n)` pair,
    /// indexed by `S·y_o + x_o`.
    pub per_filter_nonzero: Vec<usize>,
}

pub fn zero_analysis(geom: &TdcGeometry, out_maps: usize, in_maps: usize) -> ZeroAnalysis {
    let (kc, s, kd) = (geom.kc, geom.stride, geom.kd);
    let total = kc * kc * s * s * out_maps * in_maps;
    let num_zero = (kc * kc * s * s - kd * kd) * out_maps * in_maps;
    let mut per_filter_nonzero = vec![0; s * s];
    for y_o in 0..s {
        for x_o in 0..s {
            for y_i in 0..kc {
                for x_i in 0..kc {
                    let hit = map_coefficient(geom, x_i, y_i, x_o, y_o)
                        .expect("indices enumerated in range")
                        .is_some();
                    per_filter_nonzero[s * y_o + x_o] += hit as usize;
                }
            }
        }
    }
    ZeroAnalysis {
        num_zero,
        zero_ratio: num_zero as f64 / total as f64,
        per_filter_nonzero,
    }
}

/// Rewrites a deconvolution layer as a `K_C × K_C` convolution with `S²·M`
/// output maps. Every phase map of output `m` carries `bias[m]`.
pub fn transform_weights(layer: &DeconvLayerSpec) -> Result<(ConvLayerSpec, ZeroAnalysis)> {
    layer.validate()?;
    let geom = derive_geometry(layer.kernel, layer.scale)?;
    let (kc, s) = (geom.kc, geom.stride);
    let (m_out, n_in) = (layer.out_maps, layer.in_maps);
    let maps = s * s * m_out;
    let mut weights = vec![0.0; maps * n_in * kc * kc];
    for m in 0..m_out {
        for n in 0..n_in {
            for y_o in 0..s {
                for x_o in 0..s {
                    let k = s * s * m + s * y_o + x_o;
                    for y_i in 0..kc {
                        for x_i in 0..kc {
                            if let Some((x_d, y_d)) = map_coefficient(&geom, x_i, y_i, x_o, y_o)? {
                                weights[((k * n_in + n) * kc + y_i) * kc + x_i] =
                                    layer.weight(m, n, y_d, x_d);
                            }
                        }
                    }
                }
            }
        }
    }
    let bias = (0..maps).map(|k| layer.bias[k / (s * s)]).collect();
    let conv = ConvLayerSpec::new(
        format!("{}_tdc", layer.name),
        kc,
        maps,
        n_in,
        weights,
        bias,
        None,
    )?;
    Ok((conv, zero_analysis(&geom, m_out, n_in)))
}

/// Upscales through the transformed convolution followed by depth-to-space.
pub fn tdc_deconv(input: &Tensor3, layer: &DeconvLayerSpec) -> Result<Tensor3> {
    let (conv, _) = transform_weights(layer)?;
    depth_to_space(&conv2d(input, &conv)?, layer.scale)
}

/// Finds, by exhaustive search on a random probe, the canvas offset at which
/// the transformed path reproduces the brute-force deconvolution, and checks
/// it against the closed form in [`TdcGeometry::crop_offset`].
pub fn find_crop_offset(kd: usize, stride: usize) -> Result<isize> {
    let geom = derive_geometry(kd, stride)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x7dc0_ffe7 ^ ((kd as u64) << 8) ^ stride as u64);
    let weights = (0..kd * kd)
        .map(|_| rng.random_range(1i32..=16) as f64)
        .collect();
    let probe = DeconvLayerSpec::new("probe", kd, stride, 1, 1, weights, vec![0.0])?;
    let (h, w) = (4, 4);
    let input = Tensor3::from_fn(1, h, w, |_, _, _| rng.random_range(1i32..=16) as f64)?;
    let fast = tdc_deconv(&input, &probe)?;
    let canvas = deconv2d_canvas(&input, &probe)?;
    let range = kd as isize;
    let mut matches = Vec::new();
    for c in -range..=range {
        if canvas.window(c, stride * h, stride * w)? == fast {
            matches.push(c);
        }
    }
    match matches.as_slice() {
        [c] if *c == geom.crop_offset => Ok(*c),
        [c] => Err(Error::Consistency(format!(
            "K_D={kd} S={stride}: search found offset {c}, closed form predicts {}",
            geom.crop_offset
        ))),
        _ => Err(Error::Consistency(format!(
            "K_D={kd} S={stride}: {} matching offsets {matches:?}",
            matches.len()
        ))),
    }
}
