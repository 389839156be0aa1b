//! Shared layer kernel for the float and fixed-point inference paths.
//!
//! Batch and streaming execution both compute every output sample with
//! [`conv_row`], so their results agree bit for bit as long as they hand the
//! kernel the same input rows.

use std::fmt::Debug;

use crate::error::{dim_err, Result};
use crate::model::{Layer, NetworkSpec, Tensor3};
use crate::reference::depth_to_space;
use crate::tdc::transform_weights;

/// Number representation used by the kernel.
pub trait Arith: Sync {
    type Sample: Copy + Default + PartialEq + Debug + Send + Sync;
    type Weight: Copy + Debug + Send + Sync;
    type Acc: Copy;

    fn init(&self, bias: Self::Weight) -> Self::Acc;
    fn mac(&self, acc: Self::Acc, weight: Self::Weight, x: Self::Sample) -> Self::Acc;
    /// Applies the optional PReLU slope and converts to an output sample.
    fn finish(&self, acc: Self::Acc, slope: Option<Self::Weight>) -> Self::Sample;
}

/// Plain `f64` arithmetic.
#[derive(Debug, Clone, Copy, Default)]
pub struct FloatArith;

impl Arith for FloatArith {
    type Sample = f64;
    type Weight = f64;
    type Acc = f64;

    #[inline]
    fn init(&self, bias: f64) -> f64 {
        bias
    }

    #[inline]
    fn mac(&self, acc: f64, weight: f64, x: f64) -> f64 {
        acc + weight * x
    }

    #[inline]
    fn finish(&self, acc: f64, slope: Option<f64>) -> f64 {
        match slope {
            Some(a) if acc < 0.0 => acc * a,
            _ => acc,
        }
    }
}

/// A stride-1 same-padded convolution ready for execution.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedConv<W> {
    pub name: String,
    pub kernel: usize,
    pub out_maps: usize,
    pub in_maps: usize,
    pub pad_before: usize,
    pub weights: Vec<W>,
    pub bias: Vec<W>,
    pub prelu: Option<Vec<W>>,
}

impl<W: Copy> PreparedConv<W> {
    pub fn map<U>(&self, mut f: impl FnMut(W) -> U) -> PreparedConv<U> {
        PreparedConv {
            name: self.name.clone(),
            kernel: self.kernel,
            out_maps: self.out_maps,
            in_maps: self.in_maps,
            pad_before: self.pad_before,
            weights: self.weights.iter().map(|&w| f(w)).collect(),
            bias: self.bias.iter().map(|&w| f(w)).collect(),
            prelu: self
                .prelu
                .as_ref()
                .map(|p| p.iter().map(|&w| f(w)).collect()),
        }
    }
}

/// Linear chain of prepared convolutions; when `scale > 1` the last layer is
/// a transformed deconvolution whose phase maps are shuffled into space.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecNetwork<W> {
    pub layers: Vec<PreparedConv<W>>,
    pub scale: usize,
}

impl ExecNetwork<f64> {
    pub fn from_spec(net: &NetworkSpec) -> Result<Self> {
        let mut layers = Vec::with_capacity(net.layer_count());
        for l in net.layers() {
            let conv = match l {
                Layer::Conv(c) => c.clone(),
                Layer::Deconv(d) => transform_weights(d)?.0,
            };
            layers.push(PreparedConv {
                name: conv.name,
                kernel: conv.kernel,
                out_maps: conv.out_maps,
                in_maps: conv.in_maps,
                pad_before: conv.pad_before,
                weights: conv.weights,
                bias: conv.bias,
                prelu: conv.prelu,
            });
        }
        Ok(Self {
            layers,
            scale: net.scale(),
        })
    }
}

impl<W: Copy> ExecNetwork<W> {
    pub fn map<U>(&self, mut f: impl FnMut(W) -> U) -> ExecNetwork<U> {
        ExecNetwork {
            layers: self.layers.iter().map(|l| l.map(&mut f)).collect(),
            scale: self.scale,
        }
    }

    pub fn in_maps(&self) -> Option<usize> {
        self.layers.first().map(|l| l.in_maps)
    }
}

/// Computes output row `oy` (layout `[m][x]`) of a `height × width` layer.
///
/// `fetch(n, iy)` returns input row `iy` of map `n`; it is only called for
/// rows inside the image. Per sample the sum runs over `n`, kernel row,
/// kernel column.
pub fn conv_row<'a, A: Arith>(
    arith: &A,
    layer: &PreparedConv<A::Weight>,
    oy: usize,
    height: usize,
    width: usize,
    fetch: impl Fn(usize, usize) -> &'a [A::Sample],
) -> Vec<A::Sample>
where
    A::Sample: 'a,
{
    let k = layer.kernel;
    let pad = layer.pad_before as isize;
    let rows: Vec<(usize, usize)> = (0..k)
        .filter_map(|ky| {
            let iy = oy as isize - pad + ky as isize;
            (iy >= 0 && (iy as usize) < height).then_some((ky, iy as usize))
        })
        .collect();
    let mut out = Vec::with_capacity(layer.out_maps * width);
    for m in 0..layer.out_maps {
        let slope = layer.prelu.as_ref().map(|p| p[m]);
        for ox in 0..width {
            let mut acc = arith.init(layer.bias[m]);
            for n in 0..layer.in_maps {
                let wbase = (m * layer.in_maps + n) * k;
                for &(ky, iy) in &rows {
                    let row = fetch(n, iy);
                    let wrow = &layer.weights[(wbase + ky) * k..(wbase + ky + 1) * k];
                    for (kx, &w) in wrow.iter().enumerate() {
                        let ix = ox as isize - pad + kx as isize;
                        if ix < 0 || ix as usize >= width {
                            continue;
                        }
                        acc = arith.mac(acc, w, row[ix as usize]);
                    }
                }
            }
            out.push(arith.finish(acc, slope));
        }
    }
    out
}

/// Whole-frame execution of one layer.
pub fn conv_layer<A: Arith>(
    arith: &A,
    layer: &PreparedConv<A::Weight>,
    input: &Tensor3<A::Sample>,
) -> Result<Tensor3<A::Sample>> {
    if input.channels() != layer.in_maps {
        return dim_err(format!(
            "{}: input has {} channels, layer expects {}",
            layer.name,
            input.channels(),
            layer.in_maps
        ));
    }
    let (h, w) = (input.height(), input.width());
    let mut out = Tensor3::zeros(layer.out_maps, h, w)?;
    for oy in 0..h {
        let row = conv_row(arith, layer, oy, h, w, |n, iy| input.row(n, iy));
        for m in 0..layer.out_maps {
            let o = out.offset(m, oy, 0);
            out.data_mut()[o..o + w].copy_from_slice(&row[m * w..(m + 1) * w]);
        }
    }
    Ok(out)
}

/// Runs every layer and returns each layer's output (before the final
/// depth-to-space).
pub fn forward_layers<A: Arith>(
    arith: &A,
    net: &ExecNetwork<A::Weight>,
    input: &Tensor3<A::Sample>,
) -> Result<Vec<Tensor3<A::Sample>>> {
    let mut outs: Vec<Tensor3<A::Sample>> = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let next = conv_layer(arith, layer, outs.last().unwrap_or(input))?;
        outs.push(next);
    }
    Ok(outs)
}

/// Batch forward pass including the final depth-to-space.
pub fn forward<A: Arith>(
    arith: &A,
    net: &ExecNetwork<A::Weight>,
    input: &Tensor3<A::Sample>,
) -> Result<Tensor3<A::Sample>> {
    let last = forward_layers(arith, net, input)?
        .pop()
        .unwrap_or_else(|| input.clone());
    if net.scale > 1 {
        depth_to_space(&last, net.scale)
    } else {
        Ok(last)
    }
}
