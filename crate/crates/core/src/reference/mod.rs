//! Floating-point reference implementations.
//!
//! These are deliberately plain loops: they are the oracles the transformed,
//! scheduled and fixed-point paths are checked against.

mod bicubic;
mod color;
mod metrics;

pub use bicubic::{bicubic_upscale, cubic_weight};
pub use color::{rgb_to_ycbcr, ycbcr_to_rgb, YCbCr};
pub use metrics::{mse, psnr};

use crate::error::{dim_err, Result};
use crate::model::{ConvLayerSpec, DeconvLayerSpec, Tensor3};

/// Stride-1 zero-padded convolution preserving `H × W`.
///
/// Per output sample the sum runs over `n`, then kernel row, then kernel
/// column, starting from the bias. PReLU is applied when the layer has slopes.
pub fn conv2d(input: &Tensor3, layer: &ConvLayerSpec) -> Result<Tensor3> {
    if input.channels() != layer.in_maps {
        return dim_err(format!(
            "{}: input has {} channels, layer expects {}",
            layer.name,
            input.channels(),
            layer.in_maps
        ));
    }
    let (h, w) = (input.height() as isize, input.width() as isize);
    let pad = layer.pad_before as isize;
    let k = layer.kernel;
    let mut out = Tensor3::zeros(layer.out_maps, input.height(), input.width())?;
    for m in 0..layer.out_maps {
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = layer.bias[m];
                for n in 0..layer.in_maps {
                    for ky in 0..k {
                        let iy = oy - pad + ky as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ox - pad + kx as isize;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            acc += layer.weight(m, n, ky, kx)
                                * input.get(n, iy as usize, ix as usize);
                        }
                    }
                }
                if let Some(slopes) = &layer.prelu {
                    if acc < 0.0 {
                        acc *= slopes[m];
                    }
                }
                out.set(m, oy as usize, ox as usize, acc);
            }
        }
    }
    Ok(out)
}

/// The full overlapping-sum surface of a transposed convolution, of size
/// `M × ((H−1)·S + K_D) × ((W−1)·S + K_D)`, zero outside its bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CanvasTensor {
    pub tensor: Tensor3,
}

impl CanvasTensor {
    /// Sample at a possibly out-of-range position; zero outside the canvas.
    pub fn get(&self, c: usize, y: isize, x: isize) -> f64 {
        let t = &self.tensor;
        if y < 0 || x < 0 || y as usize >= t.height() || x as usize >= t.width() {
            0.0
        } else {
            t.get(c, y as usize, x as usize)
        }
    }

    /// The `height × width` window whose top-left corner sits at
    /// `(offset, offset)` on the zero-extended canvas.
    pub fn window(&self, offset: isize, height: usize, width: usize) -> Result<Tensor3> {
        Tensor3::from_fn(self.tensor.channels(), height, width, |c, y, x| {
            self.get(c, offset + y as isize, offset + x as isize)
        })
    }

    /// Like [`CanvasTensor::window`] with `bias[c]` added to every pixel.
    pub fn crop_with_bias(
        &self,
        offset: isize,
        height: usize,
        width: usize,
        bias: &[f64],
    ) -> Result<Tensor3> {
        if bias.len() != self.tensor.channels() {
            return dim_err("bias length differs from canvas channel count");
        }
        Tensor3::from_fn(self.tensor.channels(), height, width, |c, y, x| {
            bias[c] + self.get(c, offset + y as isize, offset + x as isize)
        })
    }
}

/// Brute-force transposed convolution: every input pixel scatters a
/// `K_D × K_D` block at stride `S` and overlapping blocks are summed.
/// Biases are not applied.
pub fn deconv2d_canvas(input: &Tensor3, layer: &DeconvLayerSpec) -> Result<CanvasTensor> {
    if input.channels() != layer.in_maps {
        return dim_err(format!(
            "{}: input has {} channels, layer expects {}",
            layer.name,
            input.channels(),
            layer.in_maps
        ));
    }
    let (s, k) = (layer.scale, layer.kernel);
    let ch = (input.height() - 1) * s + k;
    let cw = (input.width() - 1) * s + k;
    let mut canvas = Tensor3::zeros(layer.out_maps, ch, cw)?;
    for m in 0..layer.out_maps {
        for n in 0..layer.in_maps {
            for i in 0..input.height() {
                for j in 0..input.width() {
                    let v = input.get(n, i, j);
                    for y in 0..k {
                        for x in 0..k {
                            let o = canvas.offset(m, s * i + y, s * j + x);
                            canvas.data_mut()[o] += v * layer.weight(m, n, y, x);
                        }
                    }
                }
            }
        }
    }
    Ok(CanvasTensor { tensor: canvas })
}

/// Interleaves `S²` phase channels into an `S`-times larger map: channel
/// `S²·m + S·y_o + x_o` at `(Y, X)` lands in channel `m` at
/// `(S·Y + y_o, S·X + x_o)`.
pub fn depth_to_space<T: Copy + Default>(t: &Tensor3<T>, scale: usize) -> Result<Tensor3<T>> {
    let s2 = scale * scale;
    if scale == 0 || !t.channels().is_multiple_of(s2) {
        return dim_err(format!(
            "depth_to_space: {} channels not divisible by {}",
            t.channels(),
            s2
        ));
    }
    let mut out = Tensor3::zeros(t.channels() / s2, t.height() * scale, t.width() * scale)?;
    for k in 0..t.channels() {
        let (m, yo, xo) = (k / s2, (k % s2) / scale, k % scale);
        for y in 0..t.height() {
            for x in 0..t.width() {
                out.set(m, scale * y + yo, scale * x + xo, t.get(k, y, x));
            }
        }
    }
    Ok(out)
}

/// Inverse of [`depth_to_space`].
pub fn space_to_depth<T: Copy + Default>(t: &Tensor3<T>, scale: usize) -> Result<Tensor3<T>> {
    if scale == 0 || !t.height().is_multiple_of(scale) || !t.width().is_multiple_of(scale) {
        return dim_err(format!(
            "space_to_depth: {}x{} not divisible by {}",
            t.height(),
            t.width(),
            scale
        ));
    }
    let s2 = scale * scale;
    Tensor3::from_fn(
        t.channels() * s2,
        t.height() / scale,
        t.width() / scale,
        |k, y, x| t.get(k / s2, scale * y + (k % s2) / scale, scale * x + k % scale),
    )
}

/// `v` for `v ≥ 0`, otherwise `slope[c]·v`.
pub fn prelu(t: &Tensor3, slopes: &[f64]) -> Result<Tensor3> {
    if slopes.len() != t.channels() {
        return dim_err(format!(
            "prelu: {} slopes for {} channels",
            slopes.len(),
            t.channels()
        ));
    }
    let plane = t.height() * t.width();
    let data = t
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if v >= 0.0 { v } else { slopes[i / plane] * v })
        .collect();
    Tensor3::from_vec(t.channels(), t.height(), t.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_int_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor3 {
        Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(-8i32..=8) as f64).unwrap()
    }

    fn rand_conv(rng: &mut ChaCha8Rng, k: usize, m: usize, n: usize) -> ConvLayerSpec {
        let w = (0..m * n * k * k).map(|_| rng.random_range(-4i32..=4) as f64).collect();
        let b = (0..m).map(|_| rng.random_range(-4i32..=4) as f64).collect();
        ConvLayerSpec::new("t", k, m, n, w, b, None).unwrap()
    }

    fn rand_deconv(rng: &mut ChaCha8Rng, k: usize, s: usize, m: usize, n: usize) -> DeconvLayerSpec {
        let w = (0..m * n * k * k).map(|_| rng.random_range(-4i32..=4) as f64).collect();
        DeconvLayerSpec::new("d", k, s, m, n, w, vec![0.0; m]).unwrap()
    }

    #[test]
    fn one_by_one_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = rand_int_tensor(&mut rng, 1, 4, 5);
        let layer = ConvLayerSpec::new("id", 1, 1, 1, vec![1.0], vec![0.0], None).unwrap();
        assert_eq!(conv2d(&input, &layer).unwrap(), input);
    }

    #[test]
    fn zero_padding_window_counts() {
        let input = Tensor3::from_vec(1, 3, 3, vec![1.0; 9]).unwrap();
        let layer = ConvLayerSpec::new("ones", 3, 1, 1, vec![1.0; 9], vec![0.0], None).unwrap();
        let out = conv2d(&input, &layer).unwrap();
        assert_eq!(
            out.data(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn conv_matches_independent_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = Tensor3::from_fn(2, 5, 5, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let w: Vec<f64> = (0..3 * 2 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let layer = ConvLayerSpec::new("r", 3, 3, 2, w.clone(), b.clone(), None).unwrap();
        let out = conv2d(&input, &layer).unwrap();

        // Oracle: explicitly zero-pad into a 7x7 buffer, then correlate.
        let mut padded = vec![[[0.0f64; 7]; 7]; 2];
        for (n, plane) in padded.iter_mut().enumerate() {
            for y in 0..5 {
                for x in 0..5 {
                    plane[y + 1][x + 1] = input.get(n, y, x);
                }
            }
        }
        for m in 0..3 {
            for y in 0..5 {
                for x in 0..5 {
                    let mut s = 0.0;
                    for (n, plane) in padded.iter().enumerate() {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                s += w[((m * 2 + n) * 3 + ky) * 3 + kx] * plane[y + ky][x + kx];
                            }
                        }
                    }
                    let expect = s + b[m];
                    let got = out.get(m, y, x);
                    assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let input = Tensor3::zeros(2, 3, 3).unwrap();
        let layer = ConvLayerSpec::zeros("c", 3, 1, 1, false).unwrap();
        assert!(conv2d(&input, &layer).is_err());
    }

    #[test]
    fn single_pixel_canvas_is_the_kernel() {
        let w: Vec<f64> = (1..=9).map(f64::from).collect();
        let layer = DeconvLayerSpec::new("d", 3, 2, 1, 1, w.clone(), vec![0.0]).unwrap();
        let input = Tensor3::from_vec(1, 1, 1, vec![2.5]).unwrap();
        let canvas = deconv2d_canvas(&input, &layer).unwrap();
        assert_eq!(canvas.tensor.shape(), (1, 3, 3));
        let expect: Vec<f64> = w.iter().map(|v| v * 2.5).collect();
        assert_eq!(canvas.tensor.data(), expect.as_slice());
    }

    #[test]
    fn two_blocks_overlap_on_one_column() {
        let w: Vec<f64> = (1..=9).map(f64::from).collect();
        let layer = DeconvLayerSpec::new("d", 3, 2, 1, 1, w.clone(), vec![0.0]).unwrap();
        let (p, q) = (3.0, -5.0);
        let input = Tensor3::from_vec(1, 1, 2, vec![p, q]).unwrap();
        let canvas = deconv2d_canvas(&input, &layer).unwrap();
        assert_eq!(canvas.tensor.width(), 5);
        for y in 0..3 {
            assert_eq!(canvas.tensor.get(0, y, 2), p * w[y * 3 + 2] + q * w[y * 3]);
        }
        let zero = Tensor3::zeros(1, 1, 2).unwrap();
        let c0 = deconv2d_canvas(&zero, &layer).unwrap();
        assert!(c0.tensor.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depth_to_space_examples() {
        let t = Tensor3::from_vec(4, 1, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let d = depth_to_space(&t, 2).unwrap();
        assert_eq!(d.shape(), (1, 2, 2));
        assert_eq!(d.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(depth_to_space(&t, 1).unwrap(), t);
        assert!(depth_to_space(&Tensor3::<f64>::zeros(3, 1, 1).unwrap(), 2).is_err());
    }

    #[test]
    fn depth_to_space_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in 1..=4 {
            let t = rand_int_tensor(&mut rng, 2 * s * s, 3, 2);
            let back = space_to_depth(&depth_to_space(&t, s).unwrap(), s).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn prelu_cases() {
        let t = Tensor3::from_vec(1, 1, 3, vec![-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(prelu(&t, &[0.25]).unwrap().data(), &[-0.5, 0.0, 3.0]);
        assert_eq!(prelu(&t, &[0.0]).unwrap().data(), &[0.0, 0.0, 3.0]);
        assert_eq!(prelu(&t, &[1.0]).unwrap(), t);
        assert!(prelu(&t, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn linearity_in_input_and_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (0.75, -1.5);
        let u = Tensor3::from_fn(2, 4, 3, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let v = Tensor3::from_fn(2, 4, 3, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let mix = Tensor3::from_vec(
            2,
            4,
            3,
            u.data().iter().zip(v.data()).map(|(x, y)| a * x + b * y).collect(),
        )
        .unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0);

        let conv = ConvLayerSpec::new(
            "c",
            3,
            2,
            2,
            (0..36).map(|_| rng.random_range(-1.0..1.0)).collect(),
            vec![0.0; 2],
            None,
        )
        .unwrap();
        let (fu, fv, fm) = (
            conv2d(&u, &conv).unwrap(),
            conv2d(&v, &conv).unwrap(),
            conv2d(&mix, &conv).unwrap(),
        );
        for i in 0..fm.len() {
            assert!(close(fm.data()[i], a * fu.data()[i] + b * fv.data()[i]));
        }

        let deconv = DeconvLayerSpec::new(
            "d",
            4,
            2,
            2,
            2,
            (0..64).map(|_| rng.random_range(-1.0..1.0)).collect(),
            vec![0.0; 2],
        )
        .unwrap();
        let (gu, gv, gm) = (
            deconv2d_canvas(&u, &deconv).unwrap().tensor,
            deconv2d_canvas(&v, &deconv).unwrap().tensor,
            deconv2d_canvas(&mix, &deconv).unwrap().tensor,
        );
        for i in 0..gm.len() {
            assert!(close(gm.data()[i], a * gu.data()[i] + b * gv.data()[i]));
        }

        // Linearity in the weights.
        let mut d2 = deconv.clone();
        for w in d2.weights.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        let mut dm = deconv.clone();
        for (i, w) in dm.weights.iter_mut().enumerate() {
            *w = a * deconv.weights[i] + b * d2.weights[i];
        }
        let (h1, h2, hm) = (
            deconv2d_canvas(&u, &deconv).unwrap().tensor,
            deconv2d_canvas(&u, &d2).unwrap().tensor,
            deconv2d_canvas(&u, &dm).unwrap().tensor,
        );
        for i in 0..hm.len() {
            assert!(close(hm.data()[i], a * h1.data()[i] + b * h2.data()[i]));
        }
    }

    #[test]
    fn canvas_mass_conservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (k, s) in [(3, 2), (5, 2), (7, 3), (4, 4)] {
            let (m, n) = (2, 3);
            let input = rand_int_tensor(&mut rng, n, 4, 3);
            let layer = rand_deconv(&mut rng, k, s, m, n);
            let canvas = deconv2d_canvas(&input, &layer).unwrap();
            let total: f64 = canvas.tensor.data().iter().sum();
            let mut expect = 0.0;
            for mi in 0..m {
                for ni in 0..n {
                    let sin: f64 = input.plane(ni).iter().sum();
                    let sw: f64 = (0..k * k).map(|i| layer.weight(mi, ni, i / k, i % k)).sum();
                    expect += sin * sw;
                }
            }
            assert_eq!(total, expect);
        }
    }

    #[test]
    fn deconv_is_adjoint_of_strided_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (k, s) in [(3, 2), (4, 2), (5, 3)] {
            let layer = rand_deconv(&mut rng, k, s, 1, 1);
            let (h, w) = (3, 3);
            let ch = (h - 1) * s + k;
            let cw = (w - 1) * s + k;
            // Columns of the deconvolution matrix: response to unit inputs.
            let mut deconv_mat = vec![vec![0.0; h * w]; ch * cw];
            #[allow(clippy::needless_range_loop)]
            for col in 0..h * w {
                let mut e = Tensor3::zeros(1, h, w).unwrap();
                e.data_mut()[col] = 1.0;
                let c = deconv2d_canvas(&e, &layer).unwrap();
                for (row, v) in c.tensor.data().iter().enumerate() {
                    deconv_mat[row][col] = *v;
                }
            }
            // Strided valid correlation from canvas-sized maps to h x w.
            let strided = |z: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; h * w];
                for i in 0..h {
                    for j in 0..w {
                        for y in 0..k {
                            for x in 0..k {
                                out[i * w + j] +=
                                    layer.weight(0, 0, y, x) * z[(s * i + y) * cw + s * j + x];
                            }
                        }
                    }
                }
                out
            };
            for row in 0..ch * cw {
                let mut e = vec![0.0; ch * cw];
                e[row] = 1.0;
                let col = strided(&e);
                for (c, v) in col.iter().enumerate() {
                    assert_eq!(*v, deconv_mat[row][c], "k={k} s={s}");
                }
            }
        }
    }

    #[test]
    fn conv_with_random_integer_layers_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = rand_int_tensor(&mut rng, 2, 5, 5);
        let layer = rand_conv(&mut rng, 3, 2, 2);
        assert_eq!(conv2d(&input, &layer).unwrap(), conv2d(&input, &layer).unwrap());
    }
}
