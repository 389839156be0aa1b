//! ITU-R BT.601 studio-swing colour conversion.

/// Real-valued luma and chroma planes' samples for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YCbCr {
    pub y: f64,
    pub cb: f64,
    pub cr: f64,
}

const FORWARD: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];
const OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

/// `Y ∈ [16, 235]`, `Cb, Cr ∈ [16, 240]`, clamped.
pub fn rgb_to_ycbcr(r: u8, g: u8, b: u8) -> YCbCr {
    let rgb = [r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0];
    let mut out = [0.0; 3];
    for (i, row) in FORWARD.iter().enumerate() {
        out[i] = OFFSET[i] + row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
    }
    YCbCr {
        y: out[0].clamp(16.0, 235.0),
        cb: out[1].clamp(16.0, 240.0),
        cr: out[2].clamp(16.0, 240.0),
    }
}

fn inverse() -> [[f64; 3]; 3] {
    let m = FORWARD;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // Cofactor of m[j][i].
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

/// Inverse conversion; results are rounded half-to-even and clamped to 8 bits.
pub fn ycbcr_to_rgb(p: YCbCr) -> [u8; 3] {
    let inv = inverse();
    let d = [p.y - OFFSET[0], p.cb - OFFSET[1], p.cr - OFFSET[2]];
    let mut out = [0u8; 3];
    for (i, row) in inv.iter().enumerate() {
        let v = 255.0 * (row[0] * d[0] + row[1] * d[1] + row[2] * d[2]);
        out[i] = v.round_ties_even().clamp(0.0, 255.0) as u8;
    }
    out
}
