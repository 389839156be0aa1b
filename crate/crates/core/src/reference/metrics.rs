use crate::error::{dim_err, Result};
use crate::model::Tensor3;

/// Mean squared error over the interior left after cropping `border` pixels
/// from every side.
pub fn mse(a: &Tensor3, b: &Tensor3, border: usize) -> Result<f64> {
    if a.shape() != b.shape() {
        return dim_err(format!("shape {:?} vs {:?}", a.shape(), b.shape()));
    }
    let (c, h, w) = a.shape();
    if 2 * border >= h || 2 * border >= w {
        return dim_err(format!("border {border} leaves nothing of {h}x{w}"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y in border..h - border {
            for x in border..w - border {
                let d = a.get(ch, y, x) - b.get(ch, y, x);
                sum += d * d;
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// PSNR in dB for 8-bit-scaled samples; identical inputs give `+∞`.
pub fn psnr(a: &Tensor3, b: &Tensor3, border: usize) -> Result<f64> {
    let e = mse(a, b, border)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / e).log10())
}
