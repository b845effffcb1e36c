//! CPU kernels for the network layers: 3×3 same-padded convolution, 1×1
//! convolution, 2×2 max pooling, and 2×2 stride-2 transposed convolution,
//! each with its reverse-mode counterpart.
//!
//! The per-plane inner loops are compiled three times — baseline, AVX2+FMA,
//! AVX-512 — and picked once per process from CPUID. Within one machine and
//! binary the selected path is fixed, so results stay bit-reproducible from
//! run to run. Plane-level parallelism writes disjoint output planes and
//! performs no cross-thread reductions, which keeps it deterministic too.

use std::sync::OnceLock;

use rayon::prelude::*;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimdLevel {
    Baseline,
    Avx2Fma,
    Avx512,
}

pub fn simd_level() -> SimdLevel {
    static LEVEL: OnceLock<SimdLevel> = OnceLock::new();
    *LEVEL.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                return SimdLevel::Avx512;
            }
            if std::arch::is_x86_feature_detected!("avx2")
                && std::arch::is_x86_feature_detected!("fma")
            {
                return SimdLevel::Avx2Fma;
            }
        }
        SimdLevel::Baseline
    })
}

/// Generates `fn $name(level, args…)` plus `$impl` re-codegen'd under
/// AVX2+FMA and AVX-512.
macro_rules! simd_variants {
    ($name:ident, $impl:ident, ($($arg:ident : $ty:ty),*)) => {
        #[cfg(target_arch = "x86_64")]
        mod $name {
            use super::*;
            #[target_feature(enable = "avx2,fma")]
            pub unsafe fn avx2($($arg: $ty),*) {
                $impl($($arg),*)
            }
            #[target_feature(enable = "avx512f,avx512vl,avx512bw,fma")]
            pub unsafe fn avx512($($arg: $ty),*) {
                $impl($($arg),*)
            }
        }
        #[inline]
        fn $name(level: SimdLevel, $($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            match level {
                SimdLevel::Avx512 => return unsafe { $name::avx512($($arg),*) },
                SimdLevel::Avx2Fma => return unsafe { $name::avx2($($arg),*) },
                SimdLevel::Baseline => {}
            }
            let _ = level;
            $impl($($arg),*)
        }
    };
}

/// acc[x] += w0·row[x−1] + w1·row[x] + w2·row[x+1], zero-padded at the edges.
#[inline(always)]
fn row_tap3(row: &[f32], acc: &mut [f32], w0: f32, w1: f32, w2: f32) {
    let w = row.len();
    if w == 1 {
        acc[0] += w1 * row[0];
        return;
    }
    acc[0] += w1 * row[0] + w2 * row[1];
    let interior = &mut acc[1..w - 1];
    let left = &row[0..w - 2];
    let mid = &row[1..w - 1];
    let right = &row[2..w];
    for (((d, &l), &m), &r) in interior.iter_mut().zip(left).zip(mid).zip(right) {
        *d += w0 * l + w1 * m + w2 * r;
    }
    acc[w - 1] += w0 * row[w - 2] + w1 * row[w - 1];
}

/// All nine taps of one input channel fused into a single pass: acc gets the
/// full 3×3 contribution from rows r0 (above), r1 (center), r2 (below).
#[inline(always)]
fn row_tap9(r0: &[f32], r1: &[f32], r2: &[f32], acc: &mut [f32], wb: &[f32]) {
    let w = r1.len();
    if w == 1 {
        acc[0] += wb[1] * r0[0] + wb[4] * r1[0] + wb[7] * r2[0];
        return;
    }
    acc[0] += wb[1] * r0[0] + wb[2] * r0[1] + wb[4] * r1[0] + wb[5] * r1[1] + wb[7] * r2[0]
        + wb[8] * r2[1];
    let n = w - 2;
    {
        let acc_i = &mut acc[1..1 + n];
        let (a0, a1, a2) = (&r0[..n], &r0[1..1 + n], &r0[2..2 + n]);
        let (b0, b1, b2) = (&r1[..n], &r1[1..1 + n], &r1[2..2 + n]);
        let (c0, c1, c2) = (&r2[..n], &r2[1..1 + n], &r2[2..2 + n]);
        for i in 0..n {
            acc_i[i] += wb[0] * a0[i]
                + wb[1] * a1[i]
                + wb[2] * a2[i]
                + wb[3] * b0[i]
                + wb[4] * b1[i]
                + wb[5] * b2[i]
                + wb[6] * c0[i]
                + wb[7] * c1[i]
                + wb[8] * c2[i];
        }
    }
    acc[w - 1] += wb[0] * r0[w - 2]
        + wb[1] * r0[w - 1]
        + wb[3] * r1[w - 2]
        + wb[4] * r1[w - 1]
        + wb[6] * r2[w - 2]
        + wb[7] * r2[w - 1];
}

const LANES: usize = 16;

/// Lane-parallel dot product with a fixed summation order.
#[inline(always)]
fn dot_lanes(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0f32; LANES];
    let a_chunks = a.chunks_exact(LANES);
    let a_rem = a_chunks.remainder();
    let b_chunks = b.chunks_exact(LANES);
    let b_rem = b_chunks.remainder();
    for (ca, cb) in a_chunks.zip(b_chunks) {
        for l in 0..LANES {
            lanes[l] += ca[l] * cb[l];
        }
    }
    let mut total = 0.0;
    for l in 0..LANES {
        total += lanes[l];
    }
    for (x, y) in a_rem.iter().zip(b_rem) {
        total += x * y;
    }
    total
}

/// Lane-parallel sum with a fixed summation order.
#[inline(always)]
fn sum_lanes(a: &[f32]) -> f32 {
    let mut lanes = [0f32; LANES];
    let chunks = a.chunks_exact(LANES);
    let rem = chunks.remainder();
    for ca in chunks {
        for l in 0..LANES {
            lanes[l] += ca[l];
        }
    }
    let mut total = 0.0;
    for l in 0..LANES {
        total += lanes[l];
    }
    for x in rem {
        total += x;
    }
    total
}

// ---------------------------------------------------------------------------
// 3×3 same-padded convolution
// ---------------------------------------------------------------------------

/// One output plane of a same-padded 3×3 convolution.
/// `weights` holds the `ic_n`×3×3 kernel block for this output channel.
#[inline(always)]
fn conv3x3_plane_impl(
    input: &[f32],
    ic_n: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    bias: f32,
    out_plane: &mut [f32],
) {
    let mut acc = vec![0f32; w];
    for y in 0..h {
        acc.fill(bias);
        let fused = y > 0 && y + 1 < h;
        for ic in 0..ic_n {
            let plane = &input[ic * h * w..(ic + 1) * h * w];
            let wb = &weights[ic * 9..ic * 9 + 9];
            if fused {
                row_tap9(
                    &plane[(y - 1) * w..y * w],
                    &plane[y * w..(y + 1) * w],
                    &plane[(y + 1) * w..(y + 2) * w],
                    &mut acc,
                    wb,
                );
            } else {
                for dy in 0..3usize {
                    let iy = (y + dy).wrapping_sub(1);
                    if iy >= h {
                        continue;
                    }
                    let row = &plane[iy * w..(iy + 1) * w];
                    row_tap3(row, &mut acc, wb[dy * 3], wb[dy * 3 + 1], wb[dy * 3 + 2]);
                }
            }
        }
        out_plane[y * w..(y + 1) * w].copy_from_slice(&acc);
    }
}

simd_variants!(
    conv3x3_plane,
    conv3x3_plane_impl,
    (
        input: &[f32],
        ic_n: usize,
        h: usize,
        w: usize,
        weights: &[f32],
        bias: f32,
        out_plane: &mut [f32]
    )
);

/// Same-padded 3×3 convolution; `weight` is `[oc][ic][3][3]` flattened.
pub fn conv3x3_forward(
    input: &Tensor,
    weight: &[f32],
    bias: &[f32],
    out: &mut Tensor,
    parallel: bool,
) {
    let (ic_n, h, w) = (input.ch, input.h, input.w);
    let oc_n = out.ch;
    debug_assert_eq!((out.h, out.w), (h, w));
    debug_assert_eq!(weight.len(), oc_n * ic_n * 9);
    let level = simd_level();
    let size = h * w;
    let run = |oc: usize, plane: &mut [f32]| {
        conv3x3_plane(
            level,
            &input.data,
            ic_n,
            h,
            w,
            &weight[oc * ic_n * 9..(oc + 1) * ic_n * 9],
            bias[oc],
            plane,
        );
    };
    if parallel && oc_n > 1 {
        out.data
            .par_chunks_mut(size)
            .enumerate()
            .for_each(|(oc, plane)| run(oc, plane));
    } else {
        for (oc, plane) in out.data.chunks_mut(size).enumerate() {
            run(oc, plane);
        }
    }
}

/// Weight and bias gradients for one output channel of the 3×3 convolution.
#[inline(always)]
fn conv3x3_wgrad_plane_impl(
    input: &[f32],
    ic_n: usize,
    h: usize,
    w: usize,
    dout_plane: &[f32],
    dweight: &mut [f32],
    dbias: &mut [f32],
) {
    dbias[0] = sum_lanes(dout_plane);
    for ic in 0..ic_n {
        let plane = &input[ic * h * w..(ic + 1) * h * w];
        let dw = &mut dweight[ic * 9..ic * 9 + 9];
        for dy in 0..3usize {
            let mut g0 = 0.0;
            let mut g1 = 0.0;
            let mut g2 = 0.0;
            for y in 0..h {
                let iy = (y + dy).wrapping_sub(1);
                if iy >= h {
                    continue;
                }
                let row = &plane[iy * w..(iy + 1) * w];
                let drow = &dout_plane[y * w..(y + 1) * w];
                // dx = 0 pairs dout[x] with in[x−1]
                g0 += dot_lanes(&drow[1..], &row[..w - 1]);
                g1 += dot_lanes(drow, row);
                g2 += dot_lanes(&drow[..w - 1], &row[1..]);
            }
            dw[dy * 3] = g0;
            dw[dy * 3 + 1] = g1;
            dw[dy * 3 + 2] = g2;
        }
    }
}

simd_variants!(
    conv3x3_wgrad_plane,
    conv3x3_wgrad_plane_impl,
    (
        input: &[f32],
        ic_n: usize,
        h: usize,
        w: usize,
        dout_plane: &[f32],
        dweight: &mut [f32],
        dbias: &mut [f32]
    )
);

/// Full backward pass of the 3×3 convolution. `dinput` is overwritten.
pub fn conv3x3_backward(
    input: &Tensor,
    weight: &[f32],
    dout: &Tensor,
    dinput: &mut Tensor,
    dweight: &mut [f32],
    dbias: &mut [f32],
    parallel: bool,
) {
    let (ic_n, h, w) = (input.ch, input.h, input.w);
    let oc_n = dout.ch;
    let size = h * w;
    let level = simd_level();

    // Weight/bias gradients, one output channel per task.
    let wgrad = |oc: usize, dw: &mut [f32], db: &mut [f32]| {
        conv3x3_wgrad_plane(level, &input.data, ic_n, h, w, dout.plane(oc), dw, db);
    };
    if parallel && oc_n > 1 {
        dweight
            .par_chunks_mut(ic_n * 9)
            .zip(dbias.par_chunks_mut(1))
            .enumerate()
            .for_each(|(oc, (dw, db))| wgrad(oc, dw, db));
    } else {
        for (oc, (dw, db)) in dweight
            .chunks_mut(ic_n * 9)
            .zip(dbias.chunks_mut(1))
            .enumerate()
        {
            wgrad(oc, dw, db);
        }
    }

    // Data gradient: convolution of dout with the 180°-rotated, transposed
    // kernel, which reuses the forward plane kernel.
    let mut flipped = vec![0f32; ic_n * oc_n * 9];
    for oc in 0..oc_n {
        for ic in 0..ic_n {
            for k in 0..9 {
                flipped[(ic * oc_n + oc) * 9 + k] = weight[(oc * ic_n + ic) * 9 + (8 - k)];
            }
        }
    }
    let zero_bias = 0.0f32;
    let run = |ic: usize, plane: &mut [f32]| {
        conv3x3_plane(
            level,
            &dout.data,
            oc_n,
            h,
            w,
            &flipped[ic * oc_n * 9..(ic + 1) * oc_n * 9],
            zero_bias,
            plane,
        );
    };
    if parallel && ic_n > 1 {
        dinput
            .data
            .par_chunks_mut(size)
            .enumerate()
            .for_each(|(ic, plane)| run(ic, plane));
    } else {
        for (ic, plane) in dinput.data.chunks_mut(size).enumerate() {
            run(ic, plane);
        }
    }
}

// ---------------------------------------------------------------------------
// 1×1 convolution
// ---------------------------------------------------------------------------

#[inline(always)]
fn conv1x1_plane_impl(
    input: &[f32],
    ic_n: usize,
    size: usize,
    weights: &[f32],
    bias: f32,
    out_plane: &mut [f32],
) {
    out_plane.fill(bias);
    for ic in 0..ic_n {
        let plane = &input[ic * size..(ic + 1) * size];
        let wv = weights[ic];
        for (o, &v) in out_plane.iter_mut().zip(plane) {
            *o += wv * v;
        }
    }
}

simd_variants!(
    conv1x1_plane,
    conv1x1_plane_impl,
    (
        input: &[f32],
        ic_n: usize,
        size: usize,
        weights: &[f32],
        bias: f32,
        out_plane: &mut [f32]
    )
);

/// 1×1 convolution; `weight` is `[oc][ic]` flattened.
pub fn conv1x1_forward(
    input: &Tensor,
    weight: &[f32],
    bias: &[f32],
    out: &mut Tensor,
    parallel: bool,
) {
    let (ic_n, size) = (input.ch, input.plane_size());
    let oc_n = out.ch;
    let level = simd_level();
    let run = |oc: usize, plane: &mut [f32]| {
        conv1x1_plane(
            level,
            &input.data,
            ic_n,
            size,
            &weight[oc * ic_n..(oc + 1) * ic_n],
            bias[oc],
            plane,
        );
    };
    if parallel && oc_n > 1 {
        out.data
            .par_chunks_mut(size)
            .enumerate()
            .for_each(|(oc, plane)| run(oc, plane));
    } else {
        for (oc, plane) in out.data.chunks_mut(size).enumerate() {
            run(oc, plane);
        }
    }
}

pub fn conv1x1_backward(
    input: &Tensor,
    weight: &[f32],
    dout: &Tensor,
    dinput: &mut Tensor,
    dweight: &mut [f32],
    dbias: &mut [f32],
) {
    let (ic_n, size) = (input.ch, input.plane_size());
    let oc_n = dout.ch;
    for oc in 0..oc_n {
        let dplane = dout.plane(oc);
        dbias[oc] = sum_lanes(dplane);
        for ic in 0..ic_n {
            dweight[oc * ic_n + ic] = dot_lanes(dplane, input.plane(ic));
        }
    }
    dinput.data.fill(0.0);
    for ic in 0..ic_n {
        let plane = dinput.plane_mut(ic);
        for oc in 0..oc_n {
            let wv = weight[oc * ic_n + ic];
            let dplane = dout.plane(oc);
            for x in 0..size {
                plane[x] += wv * dplane[x];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// 2×2 max pooling (stride 2)
// ---------------------------------------------------------------------------

/// Even input dims required. `argmax` records the flat in-plane index of the
/// winning cell for the backward scatter.
pub fn maxpool2_forward(input: &Tensor, out: &mut Tensor, argmax: &mut [u32]) {
    let (c_n, h, w) = (input.ch, input.h, input.w);
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    debug_assert_eq!((out.ch, out.h, out.w), (c_n, oh, ow));
    for c in 0..c_n {
        let plane = input.plane(c);
        let out_plane = out.plane_mut(c);
        let amax = &mut argmax[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..oh {
            let r0 = &plane[2 * y * w..(2 * y + 1) * w];
            let r1 = &plane[(2 * y + 1) * w..(2 * y + 2) * w];
            for x in 0..ow {
                let candidates = [
                    (r0[2 * x], (2 * y * w + 2 * x) as u32),
                    (r0[2 * x + 1], (2 * y * w + 2 * x + 1) as u32),
                    (r1[2 * x], ((2 * y + 1) * w + 2 * x) as u32),
                    (r1[2 * x + 1], ((2 * y + 1) * w + 2 * x + 1) as u32),
                ];
                let mut best = candidates[0];
                for cand in &candidates[1..] {
                    if cand.0 > best.0 {
                        best = *cand;
                    }
                }
                out_plane[y * ow + x] = best.0;
                amax[y * ow + x] = best.1;
            }
        }
    }
}

pub fn maxpool2_backward(dout: &Tensor, argmax: &[u32], dinput: &mut Tensor) {
    let (c_n, oh, ow) = (dout.ch, dout.h, dout.w);
    dinput.data.fill(0.0);
    for c in 0..c_n {
        let dplane = dout.plane(c);
        let amax = &argmax[c * oh * ow..(c + 1) * oh * ow];
        let target = dinput.plane_mut(c);
        for k in 0..oh * ow {
            target[amax[k] as usize] += dplane[k];
        }
    }
}

// ---------------------------------------------------------------------------
// 2×2 stride-2 transposed convolution
// ---------------------------------------------------------------------------

/// One output plane; `weights` holds the per-input-channel 2×2 kernels for
/// this output channel with stride `oc_n*4` between input channels.
///
/// The four stride-2 output phases are accumulated in contiguous buffers
/// (plain axpy loops) and interleaved once at the end.
#[inline(always)]
fn tconv_plane_impl(
    input: &[f32],
    ic_n: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    oc_stride: usize,
    bias: f32,
    out_plane: &mut [f32],
) {
    let size = h * w;
    let ow = 2 * w;
    let mut phases = vec![0f32; 4 * size];
    for ic in 0..ic_n {
        let plane = &input[ic * size..(ic + 1) * size];
        let wb = &weights[ic * oc_stride..ic * oc_stride + 4];
        for d in 0..4 {
            let wv = wb[d];
            let phase = &mut phases[d * size..(d + 1) * size];
            for (p, &v) in phase.iter_mut().zip(plane) {
                *p += wv * v;
            }
        }
    }
    let (p01, p23) = phases.split_at(2 * size);
    let (p0, p1) = p01.split_at(size);
    let (p2, p3) = p23.split_at(size);
    for y in 0..h {
        let (r0, r1) = out_plane[2 * y * ow..(2 * y + 2) * ow].split_at_mut(ow);
        let base = y * w;
        for x in 0..w {
            r0[2 * x] = p0[base + x] + bias;
            r0[2 * x + 1] = p1[base + x] + bias;
            r1[2 * x] = p2[base + x] + bias;
            r1[2 * x + 1] = p3[base + x] + bias;
        }
    }
}

simd_variants!(
    tconv_plane,
    tconv_plane_impl,
    (
        input: &[f32],
        ic_n: usize,
        h: usize,
        w: usize,
        weights: &[f32],
        oc_stride: usize,
        bias: f32,
        out_plane: &mut [f32]
    )
);

/// Transposed convolution, kernel 2×2, stride 2, doubling both spatial dims.
/// `weight` is `[ic][oc][2][2]` flattened.
pub fn tconv2_forward(
    input: &Tensor,
    weight: &[f32],
    bias: &[f32],
    out: &mut Tensor,
    parallel: bool,
) {
    let (ic_n, h, w) = (input.ch, input.h, input.w);
    let oc_n = out.ch;
    debug_assert_eq!((out.h, out.w), (2 * h, 2 * w));
    let size = 4 * h * w;
    let level = simd_level();
    let run = |oc: usize, plane: &mut [f32]| {
        tconv_plane(
            level,
            &input.data,
            ic_n,
            h,
            w,
            &weight[oc * 4..],
            oc_n * 4,
            bias[oc],
            plane,
        );
    };
    if parallel && oc_n > 1 {
        out.data
            .par_chunks_mut(size)
            .enumerate()
            .for_each(|(oc, plane)| run(oc, plane));
    } else {
        for (oc, plane) in out.data.chunks_mut(size).enumerate() {
            run(oc, plane);
        }
    }
}

/// Gradient of the transposed convolution for one input channel: both the
/// `[oc][2][2]` weight-gradient block and the data gradient plane.
#[inline(always)]
fn tconv_bwd_plane_impl(
    dout: &[f32],
    oc_n: usize,
    h: usize,
    w: usize,
    in_plane: &[f32],
    weights: &[f32],
    dweight: &mut [f32],
    din_plane: &mut [f32],
) {
    let ow = 2 * w;
    din_plane.fill(0.0);
    for oc in 0..oc_n {
        let dplane = &dout[oc * 4 * h * w..(oc + 1) * 4 * h * w];
        let wb = &weights[oc * 4..oc * 4 + 4];
        let dw = &mut dweight[oc * 4..oc * 4 + 4];
        let mut g = [0f32; 4];
        for y in 0..h {
            let row = &in_plane[y * w..(y + 1) * w];
            let din = &mut din_plane[y * w..(y + 1) * w];
            let d0 = &dplane[2 * y * ow..(2 * y + 1) * ow];
            let d1 = &dplane[(2 * y + 1) * ow..(2 * y + 2) * ow];
            for (((&v, di), p0), p1) in row
                .iter()
                .zip(din.iter_mut())
                .zip(d0.chunks_exact(2))
                .zip(d1.chunks_exact(2))
            {
                let (a, b, c, d) = (p0[0], p0[1], p1[0], p1[1]);
                g[0] += v * a;
                g[1] += v * b;
                g[2] += v * c;
                g[3] += v * d;
                *di += wb[0] * a + wb[1] * b + wb[2] * c + wb[3] * d;
            }
        }
        for k in 0..4 {
            dw[k] += g[k];
        }
    }
}

simd_variants!(
    tconv_bwd_plane,
    tconv_bwd_plane_impl,
    (
        dout: &[f32],
        oc_n: usize,
        h: usize,
        w: usize,
        in_plane: &[f32],
        weights: &[f32],
        dweight: &mut [f32],
        din_plane: &mut [f32]
    )
);

pub fn tconv2_backward(
    input: &Tensor,
    weight: &[f32],
    dout: &Tensor,
    dinput: &mut Tensor,
    dweight: &mut [f32],
    dbias: &mut [f32],
    parallel: bool,
) {
    let (ic_n, h, w) = (input.ch, input.h, input.w);
    let oc_n = dout.ch;
    let level = simd_level();
    for oc in 0..oc_n {
        dbias[oc] = sum_lanes(dout.plane(oc));
    }
    dweight.fill(0.0);
    let size = h * w;
    let run = |ic: usize, (dw, din): (&mut [f32], &mut [f32])| {
        tconv_bwd_plane(
            level,
            &dout.data,
            oc_n,
            h,
            w,
            input.plane(ic),
            &weight[ic * oc_n * 4..(ic + 1) * oc_n * 4],
            dw,
            din,
        );
    };
    if parallel && ic_n > 1 {
        dweight
            .par_chunks_mut(oc_n * 4)
            .zip(dinput.data.par_chunks_mut(size))
            .enumerate()
            .for_each(|(ic, pair)| run(ic, pair));
    } else {
        for (ic, pair) in dweight
            .chunks_mut(oc_n * 4)
            .zip(dinput.data.chunks_mut(size))
            .enumerate()
        {
            run(ic, pair);
        }
    }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

pub fn relu_forward(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `dout` by the post-activation values (zero where ReLU clipped).
pub fn relu_backward(dout: &mut Tensor, activated: &Tensor) {
    for (d, &a) in dout.data.iter_mut().zip(&activated.data) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, ch: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(
            ch,
            h,
            w,
            (0..ch * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    /// Straightforward quadruple-loop reference convolution.
    fn conv3x3_naive(input: &Tensor, weight: &[f32], bias: &[f32], oc_n: usize) -> Tensor {
        let (ic_n, h, w) = (input.ch, input.h, input.w);
        let mut out = Tensor::zeros(oc_n, h, w);
        for oc in 0..oc_n {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[oc];
                    for ic in 0..ic_n {
                        for dy in 0..3isize {
                            for dx in 0..3isize {
                                let iy = y as isize + dy - 1;
                                let ix = x as isize + dx - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += weight[((oc * ic_n + ic) * 9) as usize
                                    + (dy * 3 + dx) as usize]
                                    * input.plane(ic)[iy as usize * w + ix as usize];
                            }
                        }
                    }
                    out.plane_mut(oc)[y * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv3x3_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(ic, oc, h, w) in &[(1usize, 3usize, 5usize, 7usize), (4, 2, 8, 16), (3, 5, 6, 33)] {
            let input = random_tensor(&mut rng, ic, h, w);
            let weight: Vec<f32> = (0..oc * ic * 9).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let bias: Vec<f32> = (0..oc).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mut out = Tensor::zeros(oc, h, w);
            conv3x3_forward(&input, &weight, &bias, &mut out, false);
            let reference = conv3x3_naive(&input, &weight, &bias, oc);
            for (a, b) in out.data.iter().zip(&reference.data) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
            // parallel path must agree exactly
            let mut out_par = Tensor::zeros(oc, h, w);
            conv3x3_forward(&input, &weight, &bias, &mut out_par, true);
            assert_eq!(out.data, out_par.data);
        }
    }

    #[test]
    fn conv3x3_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (ic, oc, h, w) = (2usize, 3usize, 6usize, 9usize);
        let input = random_tensor(&mut rng, ic, h, w);
        let weight: Vec<f32> = (0..oc * ic * 9).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let bias: Vec<f32> = (0..oc).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let dout = random_tensor(&mut rng, oc, h, w);

        let mut dinput = Tensor::zeros(ic, h, w);
        let mut dweight = vec![0f32; weight.len()];
        let mut dbias = vec![0f32; oc];
        conv3x3_backward(&input, &weight, &dout, &mut dinput, &mut dweight, &mut dbias, false);

        // Loss L = Σ out·dout. Check dL/dθ by central differences in f64.
        let loss = |weight: &[f32], bias: &[f32], input: &Tensor| -> f64 {
            let out = conv3x3_naive(input, weight, bias, oc);
            out.data
                .iter()
                .zip(&dout.data)
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum()
        };
        let eps = 1e-3;
        for probe in [0usize, 7, weight.len() / 2, weight.len() - 1] {
            let mut wp = weight.clone();
            wp[probe] += eps;
            let mut wm = weight.clone();
            wm[probe] -= eps;
            let fd = (loss(&wp, &bias, &input) - loss(&wm, &bias, &input)) / (2.0 * eps as f64);
            assert!(
                (fd - dweight[probe] as f64).abs() < 2e-2 * fd.abs().max(1.0),
                "dW[{probe}]: fd {fd} vs {}",
                dweight[probe]
            );
        }
        for probe in [0usize, ic * h * w - 1, h * w / 2] {
            let mut ip = input.clone();
            ip.data[probe] += eps;
            let mut im = input.clone();
            im.data[probe] -= eps;
            let fd = (loss(&weight, &bias, &ip) - loss(&weight, &bias, &im)) / (2.0 * eps as f64);
            assert!(
                (fd - dinput.data[probe] as f64).abs() < 2e-2 * fd.abs().max(1.0),
                "dIn[{probe}]: fd {fd} vs {}",
                dinput.data[probe]
            );
        }
        for probe in 0..oc {
            let mut bp = bias.clone();
            bp[probe] += eps;
            let mut bm = bias.clone();
            bm[probe] -= eps;
            let fd = (loss(&weight, &bp, &input) - loss(&weight, &bm, &input)) / (2.0 * eps as f64);
            assert!((fd - dbias[probe] as f64).abs() < 2e-2 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn maxpool_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_tensor(&mut rng, 3, 8, 10);
        let mut out = Tensor::zeros(3, 4, 5);
        let mut argmax = vec![0u32; 3 * 4 * 5];
        maxpool2_forward(&input, &mut out, &mut argmax);
        for c in 0..3 {
            for k in 0..20 {
                assert_eq!(out.plane(c)[k], input.plane(c)[argmax[c * 20 + k] as usize]);
            }
        }
        let mut dout = Tensor::zeros(3, 4, 5);
        dout.data.iter_mut().for_each(|v| *v = 1.0);
        let mut dinput = Tensor::zeros(3, 8, 10);
        maxpool2_backward(&dout, &argmax, &mut dinput);
        assert_eq!(dinput.data.iter().sum::<f32>(), 60.0);
    }

    #[test]
    fn tconv_forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (ic, oc, h, w) = (3usize, 2usize, 4usize, 5usize);
        let input = random_tensor(&mut rng, ic, h, w);
        let weight: Vec<f32> = (0..ic * oc * 4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let bias: Vec<f32> = (0..oc).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let mut out = Tensor::zeros(oc, 2 * h, 2 * w);
        tconv2_forward(&input, &weight, &bias, &mut out, false);
        for o in 0..oc {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    let mut acc = bias[o];
                    for i in 0..ic {
                        let v = input.plane(i)[(y / 2) * w + x / 2];
                        acc += weight[(i * oc + o) * 4 + (y % 2) * 2 + x % 2] * v;
                    }
                    let got = out.plane(o)[y * 2 * w + x];
                    assert!((got - acc).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn tconv_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (ic, oc, h, w) = (2usize, 3usize, 3usize, 4usize);
        let input = random_tensor(&mut rng, ic, h, w);
        let weight: Vec<f32> = (0..ic * oc * 4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let bias = vec![0f32; oc];
        let dout = random_tensor(&mut rng, oc, 2 * h, 2 * w);

        let mut dinput = Tensor::zeros(ic, h, w);
        let mut dweight = vec![0f32; weight.len()];
        let mut dbias = vec![0f32; oc];
        tconv2_backward(&input, &weight, &dout, &mut dinput, &mut dweight, &mut dbias, false);

        let loss = |weight: &[f32], input: &Tensor| -> f64 {
            let mut out = Tensor::zeros(oc, 2 * h, 2 * w);
            tconv2_forward(input, weight, &bias, &mut out, false);
            out.data
                .iter()
                .zip(&dout.data)
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum()
        };
        let eps = 1e-3;
        for probe in [0usize, 5, weight.len() - 1] {
            let mut wp = weight.clone();
            wp[probe] += eps;
            let mut wm = weight.clone();
            wm[probe] -= eps;
            let fd = (loss(&wp, &input) - loss(&wm, &input)) / (2.0 * eps as f64);
            assert!((fd - dweight[probe] as f64).abs() < 2e-2 * fd.abs().max(1.0));
        }
        for probe in [0usize, h * w, ic * h * w - 1] {
            let mut ip = input.clone();
            ip.data[probe] += eps;
            let mut im = input.clone();
            im.data[probe] -= eps;
            let fd = (loss(&weight, &ip) - loss(&weight, &im)) / (2.0 * eps as f64);
            assert!((fd - dinput.data[probe] as f64).abs() < 2e-2 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn conv1x1_matches_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (ic, oc) = (4usize, 3usize);
        let input = random_tensor(&mut rng, ic, 5, 6);
        let weight: Vec<f32> = (0..oc * ic).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f32> = (0..oc).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut out = Tensor::zeros(oc, 5, 6);
        conv1x1_forward(&input, &weight, &bias, &mut out, false);
        for o in 0..oc {
            for k in 0..30 {
                let mut acc = bias[o];
                for i in 0..ic {
                    acc += weight[o * ic + i] * input.plane(i)[k];
                }
                assert!((out.plane(o)[k] - acc).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn relu_masks_gradient() {
        let mut t = Tensor::from_vec(1, 1, 4, vec![-1.0, 0.0, 2.0, -0.5]);
        relu_forward(&mut t);
        assert_eq!(t.data, vec![0.0, 0.0, 2.0, 0.0]);
        let mut d = Tensor::from_vec(1, 1, 4, vec![1.0, 1.0, 1.0, 1.0]);
        relu_backward(&mut d, &t);
        assert_eq!(d.data, vec![0.0, 0.0, 1.0, 0.0]);
    }
}
