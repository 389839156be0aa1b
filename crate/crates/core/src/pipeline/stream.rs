//! Row-at-a-time execution with per-layer line buffers.
//!
//! Rows enter at the top and every layer fires an output row as soon as its
//! window is complete. A 1×1 layer that follows another layer is fed
//! directly by its predecessor and keeps no rows of its own.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{dim_err, Result};
use crate::exec::{conv_row, Arith, ExecNetwork, PreparedConv};
use crate::model::Tensor3;

/// Buffer usage observed for one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerStats {
    pub name: String,
    pub kernel: usize,
    pub buffered: bool,
    pub peak_rows: usize,
    pub peak_samples: usize,
    pub capacity_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StreamStats {
    pub height: usize,
    pub width: usize,
    pub layers: Vec<LayerStats>,
}

/// Ring of the most recent `K_C` input rows of one layer. Padding rows
/// occupy a slot like real rows but are never read.
#[derive(Debug)]
pub struct LineBufferState<S> {
    kernel: usize,
    row_len: usize,
    slots: VecDeque<(isize, Option<Vec<S>>)>,
    peak_rows: usize,
}

impl<S: Copy> LineBufferState<S> {
    pub fn new(kernel: usize, width: usize, maps: usize) -> Self {
        Self {
            kernel,
            row_len: width * maps,
            slots: VecDeque::with_capacity(kernel),
            peak_rows: 0,
        }
    }

    pub fn push(&mut self, index: isize, row: Option<Vec<S>>) {
        if self.slots.len() == self.kernel {
            self.slots.pop_front();
        }
        self.slots.push_back((index, row));
        self.peak_rows = self.peak_rows.max(self.slots.len());
    }

    /// Row `iy` of map `n`, which must still be held.
    pub fn fetch(&self, n: usize, iy: usize, width: usize) -> &[S] {
        let front = self.slots.front().map_or(0, |s| s.0);
        let (idx, row) = &self.slots[(iy as isize - front) as usize];
        debug_assert_eq!(*idx, iy as isize);
        &row.as_ref().expect("padding rows are never read")[n * width..(n + 1) * width]
    }

    pub fn rows(&self) -> usize {
        self.slots.len()
    }

    pub fn peak_rows(&self) -> usize {
        self.peak_rows
    }

    pub fn capacity_samples(&self) -> usize {
        self.kernel * self.row_len
    }
}

enum Stage<S> {
    Buffered(LineBufferState<S>),
    Direct,
}

struct Runner<'n, A: Arith> {
    arith: &'n A,
    layers: &'n [PreparedConv<A::Weight>],
    stages: Vec<Stage<A::Sample>>,
    height: usize,
    width: usize,
}

type Row<S> = (usize, Vec<S>);

impl<A: Arith> Runner<'_, A> {
    fn emit_buffered(&self, i: usize, oy: usize) -> Row<A::Sample> {
        let Stage::Buffered(buf) = &self.stages[i] else {
            unreachable!()
        };
        let w = self.width;
        let row = conv_row(self.arith, &self.layers[i], oy, self.height, w, |n, iy| {
            buf.fetch(n, iy, w)
        });
        (oy, row)
    }

    fn push(&mut self, i: usize, (t, row): Row<A::Sample>) -> Vec<Row<A::Sample>> {
        let layer = &self.layers[i];
        let (h, w) = (self.height, self.width);
        match &mut self.stages[i] {
            Stage::Direct => {
                let out = conv_row(self.arith, layer, t, h, w, |n, _| &row[n * w..(n + 1) * w]);
                vec![(t, out)]
            }
            Stage::Buffered(buf) => {
                let pad_before = layer.pad_before as isize;
                let pad_after = (layer.kernel - 1 - layer.pad_before) as isize;
                if t == 0 {
                    for p in -pad_before..0 {
                        buf.push(p, None);
                    }
                }
                buf.push(t as isize, Some(row));
                let oy = t as isize - pad_after;
                if oy >= 0 {
                    vec![self.emit_buffered(i, oy as usize)]
                } else {
                    Vec::new()
                }
            }
        }
    }

    fn flush(&mut self, i: usize) -> Vec<Row<A::Sample>> {
        let layer = &self.layers[i];
        let pad_after = layer.kernel - 1 - layer.pad_before;
        let h = self.height;
        let mut out = Vec::new();
        if let Stage::Buffered(_) = self.stages[i] {
            for t in h..h + pad_after {
                if let Stage::Buffered(buf) = &mut self.stages[i] {
                    buf.push(t as isize, None);
                }
                if let Some(oy) = t.checked_sub(pad_after).filter(|&oy| oy < h) {
                    out.push(self.emit_buffered(i, oy));
                }
            }
        }
        out
    }

    /// Passes rows produced by stage `from - 1` through the rest of the chain.
    fn propagate(&mut self, from: usize, mut rows: Vec<Row<A::Sample>>) -> Vec<Row<A::Sample>> {
        for i in from..self.layers.len() {
            let mut next = Vec::new();
            for r in rows {
                next.extend(self.push(i, r));
            }
            rows = next;
        }
        rows
    }
}

/// Streams `input` through `net` one row at a time. The result equals
/// [`crate::exec::forward`] exactly.
pub fn forward_streaming<A: Arith>(
    arith: &A,
    net: &ExecNetwork<A::Weight>,
    input: &Tensor3<A::Sample>,
) -> Result<(Tensor3<A::Sample>, StreamStats)> {
    let (c, h, w) = input.shape();
    let Some(first) = net.layers.first() else {
        return Ok((
            input.clone(),
            StreamStats {
                height: h,
                width: w,
                layers: Vec::new(),
            },
        ));
    };
    if first.in_maps != c {
        return dim_err(format!(
            "{}: input has {c} channels, layer expects {}",
            first.name, first.in_maps
        ));
    }
    let stages = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if i > 0 && l.kernel == 1 {
                Stage::Direct
            } else {
                Stage::Buffered(LineBufferState::new(l.kernel, w, l.in_maps))
            }
        })
        .collect();
    let mut runner = Runner {
        arith,
        layers: &net.layers,
        stages,
        height: h,
        width: w,
    };

    let last = net.layers.last().expect("non-empty");
    let s = net.scale.max(1);
    let out_maps = last.out_maps / (s * s);
    let mut out = Tensor3::zeros(out_maps, h * s, w * s)?;
    let mut sink = |rows: Vec<Row<A::Sample>>| {
        for (oy, row) in rows {
            for (k, phase) in row.chunks(w).enumerate() {
                let (m, yo, xo) = (k / (s * s), (k % (s * s)) / s, k % s);
                for (x, &v) in phase.iter().enumerate() {
                    out.set(m, s * oy + yo, s * x + xo, v);
                }
            }
        }
    };

    for y in 0..h {
        let mut row = Vec::with_capacity(c * w);
        for n in 0..c {
            row.extend_from_slice(input.row(n, y));
        }
        sink(runner.propagate(0, vec![(y, row)]));
    }
    for i in 0..net.layers.len() {
        let rows = runner.flush(i);
        sink(runner.propagate(i + 1, rows));
    }

    let layers = net
        .layers
        .iter()
        .zip(&runner.stages)
        .map(|(l, st)| match st {
            Stage::Buffered(buf) => LayerStats {
                name: l.name.clone(),
                kernel: l.kernel,
                buffered: true,
                peak_rows: buf.peak_rows(),
                peak_samples: buf.peak_rows() * w * l.in_maps,
                capacity_samples: buf.capacity_samples(),
            },
            Stage::Direct => LayerStats {
                name: l.name.clone(),
                kernel: l.kernel,
                buffered: false,
                peak_rows: 0,
                peak_samples: 0,
                capacity_samples: 0,
            },
        })
        .collect();
    Ok((
        out,
        StreamStats {
            height: h,
            width: w,
            layers,
        },
    ))
}
