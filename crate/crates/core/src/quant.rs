//! Fixed-point formats, the quantized forward pass, the split-operand
//! product used to pack two MACs into one multiplier, and the bit-width
//! sweep.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{forward_layers, Arith, ExecNetwork};
use crate::model::{NetworkSpec, Tensor3};
use crate::pipeline::{image_to_tensor, infer, Image, Mode};
use crate::reference::psnr;

/// Signed two's-complement format with `frac_bits` fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct QFormat {
    pub total_bits: u32,
    pub frac_bits: u32,
}

impl QFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(2..=32).contains(&total_bits) || frac_bits >= total_bits {
            return Err(Error::Config(format!(
                "invalid fixed-point format: {total_bits} bits with {frac_bits} fractional"
            )));
        }
        Ok(Self {
            total_bits,
            frac_bits,
        })
    }

    /// Sign + 3 integer + 9 fractional bits.
    pub const fn default_13() -> Self {
        Self {
            total_bits: 13,
            frac_bits: 9,
        }
    }

    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    pub fn step(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        self.min_raw() as f64 * self.step()
    }

    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.step()
    }

    pub fn saturate(&self, raw: i64) -> i64 {
        raw.clamp(self.min_raw(), self.max_raw())
    }

    pub fn quantize(&self, v: f64) -> i64 {
        quantize_value(v, *self)
    }

    pub fn dequantize(&self, raw: i64) -> f64 {
        raw as f64 * self.step()
    }
}

impl Default for QFormat {
    fn default() -> Self {
        Self::default_13()
    }
}

/// `round(v·2^frac)` with ties to even, saturated to the format's range.
pub fn quantize_value(v: f64, q: QFormat) -> i64 {
    if v.is_nan() {
        return 0;
    }
    let scaled = (v * (q.frac_bits as f64).exp2()).round_ties_even();
    if scaled <= q.min_raw() as f64 {
        q.min_raw()
    } else if scaled >= q.max_raw() as f64 {
        q.max_raw()
    } else {
        scaled as i64
    }
}

/// Integer samples interpreted through one shared format.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    pub format: QFormat,
    pub raw: Tensor3<i64>,
}

impl QTensor {
    pub fn quantize(t: &Tensor3, format: QFormat) -> Self {
        Self {
            format,
            raw: t.map(|v| quantize_value(v, format)),
        }
    }

    pub fn from_raw(raw: Tensor3<i64>, format: QFormat) -> Result<Self> {
        if let Some(&bad) = raw
            .data()
            .iter()
            .find(|&&r| r < format.min_raw() || r > format.max_raw())
        {
            return Err(Error::Contract(format!(
                "raw value {bad} outside {}-bit range",
                format.total_bits
            )));
        }
        Ok(Self { format, raw })
    }

    pub fn dequantize(&self) -> Tensor3 {
        self.raw.map(|r| self.format.dequantize(r))
    }
}

/// `v / 2^shift` rounded half to even; a negative shift multiplies.
pub fn shift_round_half_even(v: i64, shift: i32) -> i64 {
    if shift <= 0 {
        return v << (-shift);
    }
    let q = v >> shift;
    let rem = v - (q << shift);
    let half = 1i64 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Where partial sums are narrowed to the activation format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Accumulation {
    /// 64-bit accumulator, one requantization per layer output.
    #[default]
    Wide,
    /// Every product and every running sum is requantized and saturated.
    PerStage,
}

/// Integer arithmetic on raw weights and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FixedArith {
    pub weights: QFormat,
    pub activations: QFormat,
    pub accumulation: Accumulation,
}

impl Default for FixedArith {
    fn default() -> Self {
        Self {
            weights: QFormat::default_13(),
            activations: QFormat::default_13(),
            accumulation: Accumulation::Wide,
        }
    }
}

impl FixedArith {
    fn fw(&self) -> i32 {
        self.weights.frac_bits as i32
    }

    fn fa(&self) -> i32 {
        self.activations.frac_bits as i32
    }

    fn narrow(&self, v: i64, shift: i32) -> i64 {
        self.activations.saturate(shift_round_half_even(v, shift))
    }
}

impl Arith for FixedArith {
    type Sample = i64;
    type Weight = i64;
    type Acc = i64;

    #[inline]
    fn init(&self, bias: i64) -> i64 {
        match self.accumulation {
            Accumulation::Wide => bias << self.fa(),
            Accumulation::PerStage => self.narrow(bias, self.fw() - self.fa()),
        }
    }

    #[inline]
    fn mac(&self, acc: i64, weight: i64, x: i64) -> i64 {
        match self.accumulation {
            Accumulation::Wide => acc + weight * x,
            Accumulation::PerStage => {
                let p = self.narrow(weight * x, self.fw());
                self.activations.saturate(acc + p)
            }
        }
    }

    #[inline]
    fn finish(&self, acc: i64, slope: Option<i64>) -> i64 {
        let (v, shift) = match self.accumulation {
            Accumulation::Wide => (acc, self.fw()),
            Accumulation::PerStage => (acc, 0),
        };
        match slope {
            Some(a) if acc < 0 => self.narrow(v * a, shift + self.fw()),
            _ => self.narrow(v, shift),
        }
    }
}

/// Network with every weight, bias and slope stored as a raw integer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNetwork {
    pub arith: FixedArith,
    pub exec: ExecNetwork<i64>,
}

impl QuantizedNetwork {
    /// Runs the integer network on raw activations (per-layer outputs).
    pub fn forward_layers(&self, input: &Tensor3<i64>) -> Result<Vec<Tensor3<i64>>> {
        forward_layers(&self.arith, &self.exec, input)
    }
}

pub fn quantize_network(
    net: &NetworkSpec,
    q_weights: QFormat,
    q_activations: QFormat,
    accumulation: Accumulation,
) -> Result<QuantizedNetwork> {
    let float = ExecNetwork::from_spec(net)?;
    Ok(quantize_exec(&float, q_weights, q_activations, accumulation))
}

pub fn quantize_exec(
    float: &ExecNetwork<f64>,
    q_weights: QFormat,
    q_activations: QFormat,
    accumulation: Accumulation,
) -> QuantizedNetwork {
    QuantizedNetwork {
        arith: FixedArith {
            weights: q_weights,
            activations: q_activations,
            accumulation,
        },
        exec: float.map(|w| quantize_value(w, q_weights)),
    }
}

/// Interval bounds for one layer output of the wide-accumulation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerBound {
    /// Bound on `|float output|`.
    pub magnitude: f64,
    /// Bound on `|dequantized fixed output − float output|`; infinite when
    /// saturation cannot be ruled out.
    pub error: f64,
}

/// Propagates worst-case error through the chain for inputs with
/// `|x| ≤ input_bound`, using the actual quantization error of every
/// coefficient.
pub fn error_bounds(
    float: &ExecNetwork<f64>,
    q_weights: QFormat,
    q_activations: QFormat,
    input_bound: f64,
) -> Vec<LayerBound> {
    let qw = |v: f64| q_weights.dequantize(quantize_value(v, q_weights));
    let half_step = q_activations.step() / 2.0;
    let mut x_bound = input_bound;
    let mut x_err = if input_bound <= q_activations.max_value() {
        half_step
    } else {
        f64::INFINITY
    };
    let mut out = Vec::with_capacity(float.layers.len());
    for l in &float.layers {
        let taps = l.in_maps * l.kernel * l.kernel;
        let mut mag = 0.0f64;
        let mut err = 0.0f64;
        for m in 0..l.out_maps {
            let w = &l.weights[m * taps..(m + 1) * taps];
            let sum_w: f64 = w.iter().map(|v| v.abs()).sum();
            let sum_wq: f64 = w.iter().map(|&v| qw(v).abs()).sum();
            let sum_dw: f64 = w.iter().map(|&v| (qw(v) - v).abs()).sum();
            let b = l.bias[m];
            let pre = b.abs() + x_bound * sum_w;
            let pre_err = (qw(b) - b).abs() + x_err * sum_wq + x_bound * sum_dw;
            let (gain, slope_err, float_gain) = match &l.prelu {
                Some(p) => (qw(p[m]).abs().max(1.0), (qw(p[m]) - p[m]).abs(), p[m].abs().max(1.0)),
                None => (1.0, 0.0, 1.0),
            };
            let e = gain * pre_err + slope_err * pre;
            let fixed_reach = gain * (pre + pre_err);
            let e = if fixed_reach + half_step > q_activations.max_value()
                || -fixed_reach - half_step < q_activations.min_value()
            {
                f64::INFINITY
            } else {
                e + half_step
            };
            mag = mag.max(float_gain * pre);
            err = err.max(e);
        }
        out.push(LayerBound {
            magnitude: mag,
            error: err,
        });
        x_bound = mag;
        x_err = err;
    }
    out
}

/// 13×13-bit product assembled from an 8×8, a 5×8 and a 13×5 partial
/// product.
pub fn double_mac_product(a: i32, b: i32) -> Result<i64> {
    const LO: i32 = -(1 << 12);
    const HI: i32 = (1 << 12) - 1;
    for v in [a, b] {
        if !(LO..=HI).contains(&v) {
            return Err(Error::Contract(format!("operand {v} outside 13-bit range")));
        }
    }
    let (a_h, a_l) = ((a >> 5) as i64, (a & 31) as i64);
    let (b_h, b_l) = ((b >> 5) as i64, (b & 31) as i64);
    debug_assert!((-128..128).contains(&a_h) && (-128..128).contains(&b_h));
    Ok(((a_h * b_h) << 10) + ((a_l * b_h) << 5) + a as i64 * b_l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub bits: u32,
    pub psnr_db: f64,
}

/// Mean PSNR of the fixed pipeline against the float pipeline for each
/// total bit-width (fractional bits = total − 4), in input order.
pub fn sweep_bitwidth(
    net: &NetworkSpec,
    images: &[Image],
    bits: &[u32],
) -> Result<Vec<SweepPoint>> {
    if images.is_empty() {
        return Err(Error::Config("bit-width sweep needs at least one image".into()));
    }
    let scale = net.scale();
    let border = scale;
    let reference = images
        .iter()
        .map(|img| infer(img, net, scale, &Mode::Float).map(|o| image_to_tensor(&o)))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::with_capacity(bits.len());
    for &b in bits {
        if b < 4 {
            return Err(Error::Config(format!("bit-width {b} leaves no sign or integer bits")));
        }
        let q = QFormat::new(b, b - 4)?;
        let mode = Mode::Fixed(FixedArith {
            weights: q,
            activations: q,
            accumulation: Accumulation::Wide,
        });
        let mut total = 0.0;
        for (img, want) in images.iter().zip(&reference) {
            let got = image_to_tensor(&infer(img, net, scale, &mode)?);
            total += psnr(&got, want, border)?;
        }
        points.push(SweepPoint {
            bits: b,
            psnr_db: total / images.len() as f64,
        });
    }
    Ok(points)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("bits,psnr_db\n");
    for p in points {
        s.push_str(&format!("{},{}\n", p.bits, p.psnr_db));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvLayerSpec, Layer};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantize_examples() {
        let q = QFormat::default_13();
        assert_eq!(quantize_value(0.5, q), 256);
        assert_eq!(quantize_value(1.0 / 3.0, q), 171);
        assert!((q.dequantize(171) - 0.333984375).abs() < 1e-12);
        assert_eq!(quantize_value(100.0, q), 4095);
        assert_eq!(quantize_value(-100.0, q), -4096);
        assert!((q.max_value() - 7.998046875).abs() < 1e-12);
        assert_eq!(q.min_value(), -8.0);
    }

    #[test]
    fn ties_go_to_even() {
        let q = QFormat::new(8, 0).unwrap();
        assert_eq!(quantize_value(2.5, q), 2);
        assert_eq!(quantize_value(3.5, q), 4);
        assert_eq!(quantize_value(-2.5, q), -2);
    }

    #[test]
    fn format_limits() {
        assert!(QFormat::new(1, 0).is_err());
        assert!(QFormat::new(33, 0).is_err());
        assert!(QFormat::new(8, 8).is_err());
        let q = QFormat::new(32, 31).unwrap();
        assert_eq!(q.min_raw(), i32::MIN as i64);
        assert_eq!(q.max_raw(), i32::MAX as i64);
    }

    #[test]
    fn shift_rounding() {
        assert_eq!(shift_round_half_even(5, 1), 2);
        assert_eq!(shift_round_half_even(7, 1), 4);
        assert_eq!(shift_round_half_even(-5, 1), -2);
        assert_eq!(shift_round_half_even(-7, 1), -4);
        assert_eq!(shift_round_half_even(-6, 2), -2);
        assert_eq!(shift_round_half_even(3, -2), 12);
        for v in -200i64..200 {
            for s in 1..5 {
                let want = (v as f64 / (1 << s) as f64).round_ties_even() as i64;
                assert_eq!(shift_round_half_even(v, s), want, "{v} >> {s}");
            }
        }
    }

    #[test]
    fn double_mac_examples() {
        assert_eq!(double_mac_product(0, 1234).unwrap(), 0);
        assert_eq!(double_mac_product(4095, 4095).unwrap(), 16_769_025);
        assert_eq!(double_mac_product(-4096, 4095).unwrap(), -16_773_120);
        assert!(double_mac_product(4096, 1).is_err());
        assert!(double_mac_product(1, -4097).is_err());
    }

    #[test]
    fn double_mac_boundary_rows() {
        for a in [-4096, -1, 0, 1, 4095] {
            for b in -4096..=4095 {
                assert_eq!(double_mac_product(a, b).unwrap(), a as i64 * b as i64);
            }
        }
    }

    proptest! {
        #[test]
        fn double_mac_matches_direct(a in -4096i32..=4095, b in -4096i32..=4095) {
            prop_assert_eq!(double_mac_product(a, b).unwrap(), a as i64 * b as i64);
        }

        #[test]
        fn quantize_error_within_half_step(v in -7.0f64..7.0, frac in 0u32..12) {
            let q = QFormat::new(frac + 4, frac).unwrap();
            let r = quantize_value(v, q);
            prop_assert!((q.dequantize(r) - v).abs() <= q.step() / 2.0);
            prop_assert_eq!(quantize_value(q.dequantize(r), q), r);
        }
    }

    fn random_conv_chain(rng: &mut ChaCha8Rng, integer: bool) -> NetworkSpec {
        let shapes = [(3, 3, 1), (1, 2, 3), (3, 2, 2)];
        let mut layers = Vec::new();
        for (i, &(k, m, n)) in shapes.iter().enumerate() {
            let mut l = ConvLayerSpec::zeros(format!("c{i}"), k, m, n, true).unwrap();
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = if integer {
                    rng.random_range(-2i32..=2) as f64 / 4.0
                } else {
                    rng.random_range(-0.3..0.3)
                };
            }
            for a in l.prelu.as_mut().unwrap() {
                *a = if integer { 0.25 } else { rng.random_range(0.0..0.5) };
            }
            layers.push(Layer::Conv(l));
        }
        NetworkSpec::new(layers).unwrap()
    }

    #[test]
    fn representable_weights_are_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_conv_chain(&mut rng, true);
        let float = ExecNetwork::from_spec(&net).unwrap();
        let wide = QFormat::new(32, 16).unwrap();
        let qn = quantize_exec(&float, wide, wide, Accumulation::Wide);
        let x = Tensor3::from_fn(1, 5, 6, |_, _, _| rng.random_range(0i32..4) as f64).unwrap();
        let want = forward_layers(&crate::exec::FloatArith, &float, &x).unwrap();
        let got = qn.forward_layers(&x.map(|v| quantize_value(v, wide))).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(&g.map(|r| wide.dequantize(r)), w);
        }
    }

    #[test]
    fn zero_network_gives_zero() {
        let l = ConvLayerSpec::zeros("z", 3, 2, 1, true).unwrap();
        let net = NetworkSpec::new(vec![Layer::Conv(l)]).unwrap();
        for bits in [5, 8, 13] {
            let q = QFormat::new(bits, bits - 4).unwrap();
            for acc in [Accumulation::Wide, Accumulation::PerStage] {
                let qn = quantize_network(&net, q, q, acc).unwrap();
                let x = Tensor3::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as i64).unwrap();
                let out = qn.forward_layers(&x).unwrap();
                assert!(out[0].data().iter().all(|&v| v == 0));
            }
        }
    }

    #[test]
    fn fixed_error_within_interval_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let net = random_conv_chain(&mut rng, false);
            let float = ExecNetwork::from_spec(&net).unwrap();
            let q = QFormat::default_13();
            let qn = quantize_exec(&float, q, q, Accumulation::Wide);
            let bounds = error_bounds(&float, q, q, 1.0);
            let x = Tensor3::from_fn(1, 6, 5, |_, _, _| rng.random_range(0.0..1.0)).unwrap();
            let want = forward_layers(&crate::exec::FloatArith, &float, &x).unwrap();
            let got = qn.forward_layers(&x.map(|v| quantize_value(v, q))).unwrap();
            for ((g, w), b) in got.iter().zip(&want).zip(&bounds) {
                assert!(b.error.is_finite());
                for (&r, &f) in g.data().iter().zip(w.data()) {
                    assert!((q.dequantize(r) - f).abs() <= b.error, "{} > {}", (q.dequantize(r) - f).abs(), b.error);
                    assert!(f.abs() <= b.magnitude + 1e-12);
                }
            }
        }
    }

    #[test]
    fn per_stage_mode_saturates_partial_sums() {
        let mut l = ConvLayerSpec::zeros("s", 3, 1, 1, false).unwrap();
        l.weights.iter_mut().for_each(|w| *w = 1.0);
        let net = NetworkSpec::new(vec![Layer::Conv(l)]).unwrap();
        let q = QFormat::new(8, 4).unwrap();
        let x = Tensor3::from_fn(1, 3, 3, |_, _, _| quantize_value(2.0, q)).unwrap();
        let wide = quantize_network(&net, q, q, Accumulation::Wide).unwrap();
        let stage = quantize_network(&net, q, q, Accumulation::PerStage).unwrap();
        let a = wide.forward_layers(&x).unwrap();
        let b = stage.forward_layers(&x).unwrap();
        assert_eq!(a[0].get(0, 1, 1), q.max_raw());
        assert_eq!(b[0].get(0, 1, 1), q.max_raw());
        assert_eq!(a[0].get(0, 0, 0), quantize_value(8.0, q).min(q.max_raw()));
    }

    #[test]
    fn csv_layout() {
        let csv = sweep_csv(&[SweepPoint { bits: 8, psnr_db: 30.5 }]);
        assert_eq!(csv, "bits,psnr_db\n8,30.5\n");
    }
}
