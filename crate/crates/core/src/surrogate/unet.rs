//! U-Net assembly: encoder stages of paired 3×3 convolutions with 2×2 max
//! pooling between them, a mirrored decoder with 2×2 transposed-convolution
//! upsampling and skip concatenation, and a final 1×1 projection to two
//! output channels (field real and imaginary parts).
//!
//! Parameters live in one flat f32 arena; `Layout` names each tensor and maps
//! it to an arena range so checkpoints, gradients, and the optimizer all
//! share the same indexing.

use super::kernels;
use super::tensor::Tensor;

/// Architecture hyperparameters: `stages` encoder stages with channel widths
/// `base_width · 2^s`; the last stage is the bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetShape {
    pub stages: usize,
    pub base_width: usize,
}

/// Output channels: real and imaginary field parts.
pub const OUT_CHANNELS: usize = 2;

/// Spatial dims are padded up to a multiple of this before running the net.
pub const PAD_MULTIPLE: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorLayout {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub entries: Vec<TensorLayout>,
    pub total: usize,
    stages: usize,
}

impl UNetShape {
    pub fn validate(&self) -> Result<(), String> {
        if !(2..=5).contains(&self.stages) {
            return Err(format!("stage count {} outside 2..=5", self.stages));
        }
        if self.base_width == 0 {
            return Err("base width must be at least 1".into());
        }
        Ok(())
    }

    pub fn width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Deterministic tensor naming and arena layout, in forward order.
    pub fn layout(&self) -> Layout {
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, offset: &mut usize| {
            let len: usize = shape.iter().product();
            entries.push(TensorLayout {
                name,
                shape,
                offset: *offset,
                len,
            });
            *offset += len;
        };
        for s in 0..self.stages {
            let c_in = if s == 0 { 1 } else { self.width(s - 1) };
            let c = self.width(s);
            push(format!("enc{s}.conv_a.weight"), vec![c, c_in, 3, 3], &mut offset);
            push(format!("enc{s}.conv_a.bias"), vec![c], &mut offset);
            push(format!("enc{s}.conv_b.weight"), vec![c, c, 3, 3], &mut offset);
            push(format!("enc{s}.conv_b.bias"), vec![c], &mut offset);
        }
        for s in (0..self.stages - 1).rev() {
            let c = self.width(s);
            let c_deep = self.width(s + 1);
            push(format!("dec{s}.up.weight"), vec![c_deep, c, 2, 2], &mut offset);
            push(format!("dec{s}.up.bias"), vec![c], &mut offset);
            push(format!("dec{s}.conv_a.weight"), vec![c, 2 * c, 3, 3], &mut offset);
            push(format!("dec{s}.conv_a.bias"), vec![c], &mut offset);
            push(format!("dec{s}.conv_b.weight"), vec![c, c, 3, 3], &mut offset);
            push(format!("dec{s}.conv_b.bias"), vec![c], &mut offset);
        }
        push("head.weight".into(), vec![OUT_CHANNELS, self.width(0)], &mut offset);
        push("head.bias".into(), vec![OUT_CHANNELS], &mut offset);
        Layout {
            entries,
            total: offset,
            stages: self.stages,
        }
    }
}

impl Layout {
    /// Entry index helpers; the layout order is fixed by `UNetShape::layout`.
    fn enc(&self, s: usize, slot: usize) -> &TensorLayout {
        &self.entries[4 * s + slot]
    }

    /// Decoder stages are laid out in run order (deepest first).
    fn dec(&self, run: usize, slot: usize) -> &TensorLayout {
        &self.entries[4 * self.stages + 6 * run + slot]
    }

    fn head(&self, slot: usize) -> &TensorLayout {
        &self.entries[4 * self.stages + 6 * (self.stages - 1) + slot]
    }

    pub fn find(&self, name: &str) -> Option<&TensorLayout> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn slice<'a>(params: &'a [f32], t: &TensorLayout) -> &'a [f32] {
    &params[t.offset..t.offset + t.len]
}

fn slice_mut<'a>(params: &'a mut [f32], t: &TensorLayout) -> &'a mut [f32] {
    &mut params[t.offset..t.offset + t.len]
}

/// Everything the backward pass needs from a forward run.
pub struct Trace {
    /// Post-ReLU conv_a outputs per encoder stage.
    pub enc_a: Vec<Tensor>,
    /// Post-ReLU conv_b outputs per encoder stage (skip sources).
    pub enc_b: Vec<Tensor>,
    /// Pooled tensors (input to the next encoder stage).
    pub pooled: Vec<Tensor>,
    pub argmax: Vec<Vec<u32>>,
    /// Decoder tensors in run order (deepest stage first).
    pub ups: Vec<Tensor>,
    pub cats: Vec<Tensor>,
    pub dec_a: Vec<Tensor>,
    pub dec_b: Vec<Tensor>,
    /// Linear head output, 2×H×W.
    pub output: Tensor,
}

/// Run the network on an already-padded input (dims divisible by
/// 2^(stages−1)).
pub fn forward(shape: &UNetShape, params: &[f32], input: &Tensor, parallel: bool) -> Trace {
    let layout = shape.layout();
    let stages = shape.stages;
    let mut enc_a = Vec::with_capacity(stages);
    let mut enc_b = Vec::with_capacity(stages);
    let mut pooled = Vec::with_capacity(stages - 1);
    let mut argmax = Vec::with_capacity(stages - 1);

    let mut current = input;
    for s in 0..stages {
        let c = shape.width(s);
        let (h, w) = (current.h, current.w);
        let mut a = Tensor::zeros(c, h, w);
        kernels::conv3x3_forward(
            current,
            slice(params, layout.enc(s, 0)),
            slice(params, layout.enc(s, 1)),
            &mut a,
            parallel,
        );
        kernels::relu_forward(&mut a);
        let mut b = Tensor::zeros(c, h, w);
        kernels::conv3x3_forward(
            &a,
            slice(params, layout.enc(s, 2)),
            slice(params, layout.enc(s, 3)),
            &mut b,
            parallel,
        );
        kernels::relu_forward(&mut b);
        enc_a.push(a);
        enc_b.push(b);
        if s + 1 < stages {
            let src = enc_b.last().unwrap();
            let mut down = Tensor::zeros(c, h / 2, w / 2);
            let mut amax = vec![0u32; c * (h / 2) * (w / 2)];
            kernels::maxpool2_forward(src, &mut down, &mut amax);
            pooled.push(down);
            argmax.push(amax);
            current = pooled.last().unwrap();
        }
    }

    let mut ups = Vec::with_capacity(stages - 1);
    let mut cats = Vec::with_capacity(stages - 1);
    let mut dec_a = Vec::with_capacity(stages - 1);
    let mut dec_b = Vec::with_capacity(stages - 1);
    let mut deeper = enc_b.last().unwrap().clone();
    for run in 0..stages - 1 {
        let s = stages - 2 - run;
        let c = shape.width(s);
        let (h, w) = (deeper.h * 2, deeper.w * 2);
        let mut up = Tensor::zeros(c, h, w);
        kernels::tconv2_forward(
            &deeper,
            slice(params, layout.dec(run, 0)),
            slice(params, layout.dec(run, 1)),
            &mut up,
            parallel,
        );
        let cat = Tensor::concat(&up, &enc_b[s]);
        let mut a = Tensor::zeros(c, h, w);
        kernels::conv3x3_forward(
            &cat,
            slice(params, layout.dec(run, 2)),
            slice(params, layout.dec(run, 3)),
            &mut a,
            parallel,
        );
        kernels::relu_forward(&mut a);
        let mut b = Tensor::zeros(c, h, w);
        kernels::conv3x3_forward(
            &a,
            slice(params, layout.dec(run, 4)),
            slice(params, layout.dec(run, 5)),
            &mut b,
            parallel,
        );
        kernels::relu_forward(&mut b);
        ups.push(up);
        cats.push(cat);
        dec_a.push(a);
        deeper = b.clone();
        dec_b.push(b);
    }

    let last = dec_b.last().unwrap();
    let mut output = Tensor::zeros(OUT_CHANNELS, last.h, last.w);
    kernels::conv1x1_forward(
        last,
        slice(params, layout.head(0)),
        slice(params, layout.head(1)),
        &mut output,
        parallel,
    );

    Trace {
        enc_a,
        enc_b,
        pooled,
        argmax,
        ups,
        cats,
        dec_a,
        dec_b,
        output,
    }
}

/// Reverse-mode gradients of a scalar loss with `d_output = ∂loss/∂output`.
/// Returns a gradient arena matching the parameter layout.
pub fn backward(
    shape: &UNetShape,
    params: &[f32],
    input: &Tensor,
    trace: &Trace,
    d_output: &Tensor,
    parallel: bool,
) -> Vec<f32> {
    let layout = shape.layout();
    let stages = shape.stages;
    let mut grads = vec![0f32; layout.total];

    // Head.
    let head_in = trace.dec_b.last().unwrap();
    let mut d = Tensor::zeros(head_in.ch, head_in.h, head_in.w);
    {
        let t = layout.head(0);
        let tb = layout.head(1);
        let mut dweight = vec![0f32; t.len];
        let mut dbias = vec![0f32; tb.len];
        kernels::conv1x1_backward(
            head_in,
            slice(params, t),
            d_output,
            &mut d,
            &mut dweight,
            &mut dbias,
        );
        slice_mut(&mut grads, t).copy_from_slice(&dweight);
        slice_mut(&mut grads, tb).copy_from_slice(&dbias);
    }

    // Decoder, shallowest run stage first (reverse of run order).
    let mut skip_grads: Vec<Option<Tensor>> = (0..stages).map(|_| None).collect();
    for run in (0..stages - 1).rev() {
        let s = stages - 2 - run;
        let c = shape.width(s);
        kernels::relu_backward(&mut d, &trace.dec_b[run]);
        let a = &trace.dec_a[run];
        let mut d_a = Tensor::zeros(a.ch, a.h, a.w);
        {
            let t = layout.dec(run, 4);
            let tb = layout.dec(run, 5);
            let mut dweight = vec![0f32; t.len];
            let mut dbias = vec![0f32; tb.len];
            kernels::conv3x3_backward(
                a,
                slice(params, t),
                &d,
                &mut d_a,
                &mut dweight,
                &mut dbias,
                parallel,
            );
            slice_mut(&mut grads, t).copy_from_slice(&dweight);
            slice_mut(&mut grads, tb).copy_from_slice(&dbias);
        }
        kernels::relu_backward(&mut d_a, a);
        let cat = &trace.cats[run];
        let mut d_cat = Tensor::zeros(cat.ch, cat.h, cat.w);
        {
            let t = layout.dec(run, 2);
            let tb = layout.dec(run, 3);
            let mut dweight = vec![0f32; t.len];
            let mut dbias = vec![0f32; tb.len];
            kernels::conv3x3_backward(
                cat,
                slice(params, t),
                &d_a,
                &mut d_cat,
                &mut dweight,
                &mut dbias,
                parallel,
            );
            slice_mut(&mut grads, t).copy_from_slice(&dweight);
            slice_mut(&mut grads, tb).copy_from_slice(&dbias);
        }
        let (d_up, d_skip) = d_cat.split(c);
        skip_grads[s] = Some(d_skip);
        let deeper: &Tensor = if run == 0 {
            &trace.enc_b[stages - 1]
        } else {
            &trace.dec_b[run - 1]
        };
        let mut d_deeper = Tensor::zeros(deeper.ch, deeper.h, deeper.w);
        {
            let t = layout.dec(run, 0);
            let tb = layout.dec(run, 1);
            let mut dweight = vec![0f32; t.len];
            let mut dbias = vec![0f32; tb.len];
            kernels::tconv2_backward(
                deeper,
                slice(params, t),
                &d_up,
                &mut d_deeper,
                &mut dweight,
                &mut dbias,
                parallel,
            );
            slice_mut(&mut grads, t).copy_from_slice(&dweight);
            slice_mut(&mut grads, tb).copy_from_slice(&dbias);
        }
        d = d_deeper;
    }

    // Encoder, bottleneck first. At entry `d` is the gradient w.r.t. the
    // bottleneck output enc_b[stages−1].
    for s in (0..stages).rev() {
        if s < stages - 1 {
            // Here `d` is the gradient w.r.t. pooled[s].
            let b = &trace.enc_b[s];
            let mut d_b = Tensor::zeros(b.ch, b.h, b.w);
            kernels::maxpool2_backward(&d, &trace.argmax[s], &mut d_b);
            if let Some(skip) = &skip_grads[s] {
                for (dst, src) in d_b.data.iter_mut().zip(&skip.data) {
                    *dst += src;
                }
            }
            d = d_b;
        }
        kernels::relu_backward(&mut d, &trace.enc_b[s]);
        let a = &trace.enc_a[s];
        let mut d_a = Tensor::zeros(a.ch, a.h, a.w);
        {
            let t = layout.enc(s, 2);
            let tb = layout.enc(s, 3);
            let mut dweight = vec![0f32; t.len];
            let mut dbias = vec![0f32; tb.len];
            kernels::conv3x3_backward(
                a,
                slice(params, t),
                &d,
                &mut d_a,
                &mut dweight,
                &mut dbias,
                parallel,
            );
            slice_mut(&mut grads, t).copy_from_slice(&dweight);
            slice_mut(&mut grads, tb).copy_from_slice(&dbias);
        }
        kernels::relu_backward(&mut d_a, a);
        let enc_input: &Tensor = if s == 0 { input } else { &trace.pooled[s - 1] };
        let mut d_in = Tensor::zeros(enc_input.ch, enc_input.h, enc_input.w);
        {
            let t = layout.enc(s, 0);
            let tb = layout.enc(s, 1);
            let mut dweight = vec![0f32; t.len];
            let mut dbias = vec![0f32; tb.len];
            kernels::conv3x3_backward(
                enc_input,
                slice(params, t),
                &d_a,
                &mut d_in,
                &mut dweight,
                &mut dbias,
                parallel,
            );
            slice_mut(&mut grads, t).copy_from_slice(&dweight);
            slice_mut(&mut grads, tb).copy_from_slice(&dbias);
        }
        d = d_in;
    }

    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_expected_parameter_count() {
        let shape = UNetShape {
            stages: 4,
            base_width: 16,
        };
        let layout = shape.layout();
        // Totals per block, counted by hand from the declared shapes.
        let mut expected = 0usize;
        // encoders: (in→c) + (c→c) convs with biases
        for (c_in, c) in [(1usize, 16usize), (16, 32), (32, 64), (64, 128)] {
            expected += c * c_in * 9 + c + c * c * 9 + c;
        }
        // decoders, deepest first: up (c_deep→c) + (2c→c) + (c→c)
        for (c_deep, c) in [(128usize, 64usize), (64, 32), (32, 16)] {
            expected += c_deep * c * 4 + c + c * 2 * c * 9 + c + c * c * 9 + c;
        }
        expected += 2 * 16 + 2;
        assert_eq!(layout.total, expected);
        assert_eq!(layout.entries.len(), 4 * 4 + 6 * 3 + 2);
        assert!(layout.find("enc0.conv_a.weight").is_some());
        assert!(layout.find("dec0.up.weight").is_some());
        assert!(layout.find("head.bias").is_some());
        // Entries tile the arena exactly.
        let mut cursor = 0;
        for e in &layout.entries {
            assert_eq!(e.offset, cursor);
            cursor += e.len;
        }
        assert_eq!(cursor, layout.total);
    }

    #[test]
    fn forward_output_shape_matches_input() {
        let shape = UNetShape {
            stages: 3,
            base_width: 4,
        };
        let layout = shape.layout();
        let params = vec![0.01f32; layout.total];
        let input = Tensor::zeros(1, 32, 48);
        let trace = forward(&shape, &params, &input, false);
        assert_eq!(
            (trace.output.ch, trace.output.h, trace.output.w),
            (2, 32, 48)
        );
    }

    #[test]
    fn forward_is_deterministic_and_parallel_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let shape = UNetShape {
            stages: 2,
            base_width: 4,
        };
        let layout = shape.layout();
        let params: Vec<f32> = (0..layout.total).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let input = Tensor::from_vec(
            1,
            16,
            16,
            (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let a = forward(&shape, &params, &input, false);
        let b = forward(&shape, &params, &input, false);
        let c = forward(&shape, &params, &input, true);
        assert_eq!(a.output.data, b.output.data);
        assert_eq!(a.output.data, c.output.data);
    }
}
