//! Load-balanced PE scheduling of the transformed filters, a behavioural
//! DCLP simulator and the analytic cycle models.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DeconvLayerSpec, Tensor3};
use crate::tdc::{derive_geometry, map_coefficient, transform_weights, TdcGeometry};

/// One MAC slot in a PE's stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PEInstruction {
    /// Output index `S·y_o + x_o` within the current output map.
    pub phase_channel: usize,
    /// `(y_i, x_i)` inside the `K_C × K_C` window.
    pub input_pos: (usize, usize),
    pub weight: f64,
}

/// The `S²` phase filters of one `(m, n)` pair with their structural
/// support (the positions the inverse mapping resolves).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFilters {
    pub stride: usize,
    pub kc: usize,
    /// `[phase][y_i][x_i]`.
    pub weights: Vec<f64>,
    pub support: Vec<bool>,
}

impl PhaseFilters {
    /// Slices the filters of pair `(m, n)` out of a transformed layer's weights.
    pub fn from_transformed(
        geom: &TdcGeometry,
        weights: &[f64],
        in_maps: usize,
        m: usize,
        n: usize,
    ) -> Self {
        let (s, kc) = (geom.stride, geom.kc);
        let mut w = Vec::with_capacity(s * s * kc * kc);
        let mut support = Vec::with_capacity(s * s * kc * kc);
        for phase in 0..s * s {
            let k = s * s * m + phase;
            for y_i in 0..kc {
                for x_i in 0..kc {
                    w.push(weights[((k * in_maps + n) * kc + y_i) * kc + x_i]);
                    support.push(
                        map_coefficient(geom, x_i, y_i, phase % s, phase / s)
                            .expect("in range")
                            .is_some(),
                    );
                }
            }
        }
        PhaseFilters {
            stride: s,
            kc,
            weights: w,
            support,
        }
    }

    fn filter_len(&self) -> usize {
        self.kc * self.kc
    }

    pub fn nonzero_counts(&self) -> Vec<usize> {
        self.support
            .chunks(self.filter_len())
            .map(|c| c.iter().filter(|&&b| b).count())
            .collect()
    }

    fn instructions(&self, phase: usize) -> impl Iterator<Item = PEInstruction> + '_ {
        let len = self.filter_len();
        (0..len)
            .filter(move |i| self.support[phase * len + i])
            .map(move |i| PEInstruction {
                phase_channel: phase,
                input_pos: (i / self.kc, i % self.kc),
                weight: self.weights[phase * len + i],
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PESchedule {
    pub pe_count: usize,
    pub streams: Vec<Vec<PEInstruction>>,
    /// Longest stream: cycles per sliding window.
    pub depth: usize,
    /// Depth of the one-filter-per-PE assignment before rebalancing.
    pub unbalanced_depth: usize,
    /// Instructions moved by rebalancing.
    pub moved: usize,
}

impl PESchedule {
    pub fn instruction_count(&self) -> usize {
        self.streams.iter().map(Vec::len).sum()
    }
}

/// Distributes the supported MACs of one `(m, n)` group over `pe_count` PEs.
///
/// Filters are dealt round-robin in descending nonzero-count order, then
/// instructions are moved from PEs above `⌈total / pe_count⌉` to the least
/// loaded PE until no PE exceeds that bound.
pub fn build_schedule(filters: &PhaseFilters, pe_count: usize) -> Result<PESchedule> {
    if pe_count == 0 {
        return Err(Error::Config("pe_count must be at least 1".into()));
    }
    let counts = filters.nonzero_counts();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));

    let mut streams: Vec<Vec<PEInstruction>> = vec![Vec::new(); pe_count];
    for (rank, &phase) in order.iter().enumerate() {
        streams[rank % pe_count].extend(filters.instructions(phase));
    }
    let unbalanced_depth = streams.iter().map(Vec::len).max().unwrap_or(0);

    let total: usize = counts.iter().sum();
    let cap = total.div_ceil(pe_count);
    let mut moved = 0;
    loop {
        let (hi, hi_len) = streams
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.len()))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("pe_count >= 1");
        if hi_len <= cap {
            break;
        }
        let lo = streams
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.len().cmp(&b.1.len()).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .expect("pe_count >= 1");
        let instr = streams[hi].pop().expect("non-empty");
        streams[lo].push(instr);
        moved += 1;
    }
    let depth = streams.iter().map(Vec::len).max().unwrap_or(0);
    Ok(PESchedule {
        pe_count,
        streams,
        depth,
        unbalanced_depth,
        moved,
    })
}

/// Schedules for every `(m, n)` pair of one deconvolution layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DclpSchedule {
    pub geometry: TdcGeometry,
    pub out_maps: usize,
    pub in_maps: usize,
    pub pe_count: usize,
    pub depth: usize,
    /// Indexed `m·N + n`.
    pub groups: Vec<PESchedule>,
    /// Per phase channel `S²·m + k`.
    pub bias: Vec<f64>,
}

pub fn build_layer_schedule(layer: &DeconvLayerSpec, pe_count: usize) -> Result<DclpSchedule> {
    let geom = derive_geometry(layer.kernel, layer.scale)?;
    let (conv, _) = transform_weights(layer)?;
    let mut groups = Vec::with_capacity(layer.out_maps * layer.in_maps);
    for m in 0..layer.out_maps {
        for n in 0..layer.in_maps {
            let f = PhaseFilters::from_transformed(&geom, &conv.weights, layer.in_maps, m, n);
            groups.push(build_schedule(&f, pe_count)?);
        }
    }
    let depth = groups.iter().map(|g| g.depth).max().unwrap_or(0);
    Ok(DclpSchedule {
        geometry: geom,
        out_maps: layer.out_maps,
        in_maps: layer.in_maps,
        pe_count,
        depth,
        groups,
        bias: conv.bias,
    })
}

/// Executes the schedule window by window.
///
/// Returns the `S²M × H × W` phase maps (equal to the transformed
/// convolution's output) and the cycle count
/// `depth × H × W × ⌈N/T_n⌉ × ⌈S²M/pe_count⌉`, obtained by counting one
/// `depth`-cycle step per window, per input tile and per output pass.
pub fn simulate_dclp(input: &Tensor3, sched: &DclpSchedule, t_n: usize) -> Result<(Tensor3, u64)> {
    if input.channels() != sched.in_maps {
        return Err(Error::Dimension(format!(
            "schedule expects {} input maps, input has {}",
            sched.in_maps,
            input.channels()
        )));
    }
    if t_n == 0 {
        return Err(Error::Config("T_n must be at least 1".into()));
    }
    let s2 = sched.geometry.stride * sched.geometry.stride;
    let (h, w) = (input.height(), input.width());
    let pad = sched.geometry.pad_before() as isize;
    let mut out = Tensor3::from_fn(s2 * sched.out_maps, h, w, |k, _, _| sched.bias[k])?;

    let phase_maps = s2 * sched.out_maps;
    let passes = phase_maps.div_ceil(sched.pe_count);
    let n_tiles = sched.in_maps.div_ceil(t_n);
    let mut cycles = 0u64;
    for pass in 0..passes {
        let maps: Vec<usize> = (0..sched.out_maps)
            .filter(|m| s2 * m / sched.pe_count == pass)
            .collect();
        for tile in 0..n_tiles {
            let ns = tile * t_n..((tile + 1) * t_n).min(sched.in_maps);
            for oy in 0..h {
                for ox in 0..w {
                    cycles += sched.depth as u64;
                    for &m in &maps {
                        for n in ns.clone() {
                            let group = &sched.groups[m * sched.in_maps + n];
                            for stream in &group.streams {
                                for ins in stream {
                                    let iy = oy as isize - pad + ins.input_pos.0 as isize;
                                    let ix = ox as isize - pad + ins.input_pos.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let v = input.get(n, iy as usize, ix as usize);
                                    let o = out.offset(s2 * m + ins.phase_channel, oy, ox);
                                    out.data_mut()[o] += ins.weight * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((out, cycles))
}

/// Loop tiling of a layer processor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TilingParams {
    pub t_m: usize,
    pub t_n: usize,
    pub t_k: usize,
}

impl TilingParams {
    pub fn new(t_m: usize, t_n: usize, t_k: usize) -> Result<Self> {
        if t_m == 0 || t_n == 0 || t_k == 0 {
            return Err(Error::Config(format!(
                "tile sizes must be positive, got T_m={t_m} T_n={t_n} T_k={t_k}"
            )));
        }
        Ok(Self { t_m, t_n, t_k })
    }
}

/// Shape of a deconvolution layer for the cycle models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeconvShape {
    pub out_maps: usize,
    pub in_maps: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub kd: usize,
    pub stride: usize,
}

/// `⌈S²M/T_m⌉ · ⌈N/T_n⌉ · H_in · W_in · ⌈K_D²/S²⌉`.
#[allow(clippy::too_many_arguments)]
pub fn cycles_proposed(
    m: usize,
    n: usize,
    h_in: usize,
    w_in: usize,
    kd: usize,
    s: usize,
    t_m: usize,
    t_n: usize,
) -> u64 {
    let s2 = (s * s) as u64;
    let (m, n, t_m, t_n) = (m as u64, n as u64, t_m as u64, t_n as u64);
    (s2 * m).div_ceil(t_m)
        * n.div_ceil(t_n)
        * h_in as u64
        * w_in as u64
        * ((kd * kd) as u64).div_ceil(s2)
}

/// Conventional output-stationary count: `⌈M/T_m⌉ · ⌈N/T_n⌉ · H_out · W_out · K_D²`.
pub fn cycles_baseline(
    m: usize,
    n: usize,
    h_out: usize,
    w_out: usize,
    kd: usize,
    t_m: usize,
    t_n: usize,
) -> u64 {
    (m as u64).div_ceil(t_m as u64)
        * (n as u64).div_ceil(t_n as u64)
        * h_out as u64
        * w_out as u64
        * (kd * kd) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpeedupCase {
    /// `M ≤ T_m/S²`: all phase maps fit in one pass.
    Case1,
    /// `T_m/S² < M ≤ T_m`.
    Case2,
    /// `M > T_m`.
    Case3,
}

impl SpeedupCase {
    pub fn number(self) -> u8 {
        match self {
            SpeedupCase::Case1 => 1,
            SpeedupCase::Case2 => 2,
            SpeedupCase::Case3 => 3,
        }
    }
}

/// Which regime a layer falls in and its predicted speedup over the
/// conventional accelerator.
pub fn classify_case(m: usize, t_m: usize, s: usize, kd: usize) -> (SpeedupCase, f64) {
    let s2 = s * s;
    let kernel_gain = (kd * kd) as f64 / (kd * kd).div_ceil(s2) as f64;
    if m * s2 <= t_m {
        (SpeedupCase::Case1, s2 as f64 * kernel_gain)
    } else if m <= t_m {
        (
            SpeedupCase::Case2,
            s2 as f64 / (s2 * m).div_ceil(t_m) as f64 * kernel_gain,
        )
    } else {
        (
            SpeedupCase::Case3,
            (s2 * m.div_ceil(t_m)) as f64 / (s2 * m).div_ceil(t_m) as f64 * kernel_gain,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub proposed_cycles: u64,
    pub baseline_cycles: u64,
    pub speedup: f64,
    pub case: u8,
    pub predicted_speedup: f64,
}

pub fn cycle_report(shape: &DeconvShape, tiling: &TilingParams) -> CycleReport {
    let proposed = cycles_proposed(
        shape.out_maps,
        shape.in_maps,
        shape.h_in,
        shape.w_in,
        shape.kd,
        shape.stride,
        tiling.t_m,
        tiling.t_n,
    );
    let baseline = cycles_baseline(
        shape.out_maps,
        shape.in_maps,
        shape.h_in * shape.stride,
        shape.w_in * shape.stride,
        shape.kd,
        tiling.t_m,
        tiling.t_n,
    );
    let (case, predicted) = classify_case(shape.out_maps, tiling.t_m, shape.stride, shape.kd);
    CycleReport {
        proposed_cycles: proposed,
        baseline_cycles: baseline,
        speedup: baseline as f64 / proposed as f64,
        case: case.number(),
        predicted_speedup: predicted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::conv2d;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn counting_layer(kd: usize, s: usize) -> DeconvLayerSpec {
        let w = (1..=kd * kd).map(|v| v as f64).collect();
        DeconvLayerSpec::new("d", kd, s, 1, 1, w, vec![0.0]).unwrap()
    }

    fn single_group(kd: usize, s: usize, pes: usize) -> PESchedule {
        build_layer_schedule(&counting_layer(kd, s), pes)
            .unwrap()
            .groups
            .remove(0)
    }

    #[test]
    fn balances_five_by_two() {
        let sched = single_group(5, 2, 4);
        assert_eq!(sched.unbalanced_depth, 9);
        assert_eq!(sched.depth, 7);
        assert_eq!(sched.instruction_count(), 25);
    }

    #[test]
    fn no_moves_when_already_balanced() {
        let sched = single_group(9, 3, 9);
        assert_eq!(sched.depth, 9);
        assert_eq!(sched.moved, 0);
    }

    #[test]
    fn nine_by_four_sixteen_pes() {
        let layer = counting_layer(9, 4);
        let geom = derive_geometry(9, 4).unwrap();
        let (conv, _) = transform_weights(&layer).unwrap();
        let f = PhaseFilters::from_transformed(&geom, &conv.weights, 1, 0, 0);
        let mut counts = f.nonzero_counts();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(counts.iter().sum::<usize>(), 81);
        assert_eq!(counts[0], 9);
        assert_eq!(*counts.last().unwrap(), 4);
        assert_eq!(build_schedule(&f, 16).unwrap().depth, 6);
    }

    #[test]
    fn schedule_is_the_nonzero_multiset() {
        let layer = counting_layer(7, 3);
        let sched = single_group(7, 3, 4);
        let mut got: Vec<f64> = sched.streams.iter().flatten().map(|i| i.weight).collect();
        got.sort_by(f64::total_cmp);
        let mut expect = layer.weights.clone();
        expect.sort_by(f64::total_cmp);
        assert_eq!(got, expect);
        assert_eq!(sched.depth, 49usize.div_ceil(4));
    }

    #[test]
    fn zero_pes_rejected() {
        let f = PhaseFilters {
            stride: 2,
            kc: 1,
            weights: vec![1.0; 4],
            support: vec![true; 4],
        };
        assert!(build_schedule(&f, 0).is_err());
    }

    #[test]
    fn simulation_matches_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (m, n) = (2, 3);
        let w = (0..m * n * 25).map(|_| rng.random_range(-9i32..=9) as f64).collect();
        let b = (0..m).map(|_| rng.random_range(-9i32..=9) as f64).collect();
        let layer = DeconvLayerSpec::new("d", 5, 2, m, n, w, b).unwrap();
        let input =
            Tensor3::from_fn(n, 4, 4, |_, _, _| rng.random_range(-9i32..=9) as f64).unwrap();
        let sched = build_layer_schedule(&layer, 4).unwrap();
        let (out, cycles) = simulate_dclp(&input, &sched, 2).unwrap();
        let (conv, _) = transform_weights(&layer).unwrap();
        assert_eq!(out, conv2d(&input, &conv).unwrap());
        assert_eq!(cycles, cycles_proposed(m, n, 4, 4, 5, 2, 4, 2));
    }

    #[test]
    fn zero_input_keeps_cycle_count() {
        let layer = counting_layer(5, 2);
        let sched = build_layer_schedule(&layer, 4).unwrap();
        let zero = Tensor3::zeros(1, 3, 3).unwrap();
        let (out, cycles) = simulate_dclp(&zero, &sched, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let ones = Tensor3::from_vec(1, 3, 3, vec![1.0; 9]).unwrap();
        assert_eq!(cycles, simulate_dclp(&ones, &sched, 1).unwrap().1);
    }

    #[test]
    fn measured_cycles_product() {
        let sched = build_layer_schedule(&counting_layer(9, 3), 9).unwrap();
        let input = Tensor3::zeros(1, 2, 2).unwrap();
        assert_eq!(simulate_dclp(&input, &sched, 1).unwrap().1, 36);
        assert!(simulate_dclp(&Tensor3::zeros(2, 2, 2).unwrap(), &sched, 1).is_err());
    }

    #[test]
    fn analytic_models() {
        assert_eq!(cycles_proposed(512, 1024, 4, 4, 5, 2, 4, 128), 458_752);
        assert_eq!(cycles_proposed(3, 128, 32, 32, 5, 2, 4, 128), 21_504);
        assert_eq!(cycles_proposed(1, 56, 1, 9_362, 9, 2, 56, 9), 1_376_214);
        assert_eq!(cycles_baseline(512, 1024, 8, 8, 5, 4, 128), 1_638_400);
        assert_eq!(cycles_baseline(3, 128, 64, 64, 5, 4, 128), 102_400);
        assert_eq!(cycles_baseline(4, 8, 1, 1, 7, 4, 8), 49);
    }

    #[test]
    fn speedup_cases() {
        let (c, s) = classify_case(1, 56, 3, 9);
        assert_eq!((c, s), (SpeedupCase::Case1, 81.0));
        let (c, s) = classify_case(1, 56, 2, 9);
        assert_eq!(c, SpeedupCase::Case1);
        assert!((s - 4.0 * 81.0 / 21.0).abs() < 1e-12);
        assert!((s - 21_233_016.0 / 1_376_214.0).abs() < 1e-9);
        let (c, s) = classify_case(512, 4, 2, 5);
        assert_eq!(c, SpeedupCase::Case3);
        assert!((s - 25.0 / 7.0).abs() < 1e-12);
        let (c, _) = classify_case(20, 56, 2, 9);
        assert_eq!(c, SpeedupCase::Case2);
    }

    proptest! {
        #[test]
        fn proposed_cycles_nonincreasing_in_tiles(
            m in 1usize..64, n in 1usize..64, h in 1usize..8, w in 1usize..8,
            s in 2usize..5, extra in 0usize..8, t_m in 1usize..64, t_n in 1usize..64,
        ) {
            let kd = s + extra;
            let base = cycles_proposed(m, n, h, w, kd, s, t_m, t_n);
            prop_assert!(cycles_proposed(m, n, h, w, kd, s, t_m + 1, t_n) <= base);
            prop_assert!(cycles_proposed(m, n, h, w, kd, s, t_m, t_n + 1) <= base);
        }
    }
}
