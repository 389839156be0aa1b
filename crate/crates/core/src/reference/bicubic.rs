use crate::error::{dim_err, Result};
use crate::model::Tensor3;

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = −0.5`.
pub fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (KEYS_A + 2.0) * t * t * t - (KEYS_A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        KEYS_A * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0)
    } else {
        0.0
    }
}

/// Per output coordinate: four clamped source indices and their weights.
fn taps(src_len: usize, scale: usize) -> Vec<([usize; 4], [f64; 4])> {
    let last = src_len as isize - 1;
    (0..src_len * scale)
        .map(|d| {
            let pos = (d as f64 + 0.5) / scale as f64 - 0.5;
            let base = pos.floor();
            let frac = pos - base;
            let base = base as isize;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let off = k as isize - 1;
                idx[k] = (base + off).clamp(0, last) as usize;
                w[k] = cubic_weight(frac - off as f64);
            }
            (idx, w)
        })
        .collect()
}

/// Bicubic upscaling of a single-channel plane by an integer factor, using
/// half-pixel centres and clamp-to-edge sampling.
pub fn bicubic_upscale(plane: &Tensor3, scale: usize) -> Result<Tensor3> {
    if plane.channels() != 1 {
        return dim_err(format!(
            "bicubic_upscale expects one channel, got {}",
            plane.channels()
        ));
    }
    if scale == 0 {
        return dim_err("scale must be at least 1");
    }
    if scale == 1 {
        return Ok(plane.clone());
    }
    let (h, w) = (plane.height(), plane.width());
    let tx = taps(w, scale);
    let ty = taps(h, scale);

    // Horizontal pass, then vertical.
    let mut horiz = vec![0.0; h * w * scale];
    for y in 0..h {
        let row = plane.row(0, y);
        for (ox, (idx, wt)) in tx.iter().enumerate() {
            horiz[y * w * scale + ox] = (0..4).map(|k| wt[k] * row[idx[k]]).sum();
        }
    }
    let ow = w * scale;
    Tensor3::from_fn(1, h * scale, ow, |_, oy, ox| {
        let (idx, wt) = &ty[oy];
        (0..4).map(|k| wt[k] * horiz[idx[k] * ow + ox]).sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..=20 {
            let f = i as f64 / 20.0;
            let s: f64 = (-1..=2).map(|k| cubic_weight(f - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(2.0), 0.0);
    }

    #[test]
    fn scale_one_is_identity() {
        let p = Tensor3::from_fn(1, 3, 4, |_, y, x| (y * 4 + x) as f64).unwrap();
        assert_eq!(bicubic_upscale(&p, 1).unwrap(), p);
    }

    #[test]
    fn constant_stays_constant() {
        let p = Tensor3::from_vec(1, 3, 3, vec![7.25; 9]).unwrap();
        let out = bicubic_upscale(&p, 3).unwrap();
        assert_eq!(out.shape(), (1, 9, 9));
        assert!(out.data().iter().all(|v| (v - 7.25).abs() < 1e-12));
    }

    #[test]
    fn reproduces_linear_ramp_in_the_interior() {
        let (h, w) = (4, 10);
        for scale in [2usize, 3, 4] {
            let p = Tensor3::from_fn(1, h, w, |_, _, x| 3.0 * x as f64 - 1.0).unwrap();
            let out = bicubic_upscale(&p, scale).unwrap();
            for oy in 0..h * scale {
                for ox in 0..w * scale {
                    let pos = (ox as f64 + 0.5) / scale as f64 - 0.5;
                    // Taps reach floor(pos)-1 .. floor(pos)+2; skip clamped ones.
                    if pos.floor() < 1.0 || pos.floor() + 2.0 > (w - 1) as f64 {
                        continue;
                    }
                    let expect = 3.0 * pos - 1.0;
                    assert!((out.get(0, oy, ox) - expect).abs() < 1e-9);
                }
            }
        }
    }
}
