//! Minimal CHW float tensor used by the network kernels.

/// Dense row-major (channel, height, width) tensor of f32.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub ch: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(ch: usize, h: usize, w: usize) -> Self {
        Self {
            ch,
            h,
            w,
            data: vec![0.0; ch * h * w],
        }
    }

    pub fn from_vec(ch: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), ch * h * w, "tensor buffer length mismatch");
        Self { ch, h, w, data }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f32] {
        let size = self.h * self.w;
        &self.data[c * size..(c + 1) * size]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let size = self.h * self.w;
        &mut self.data[c * size..(c + 1) * size]
    }

    pub fn plane_size(&self) -> usize {
        self.h * self.w
    }

    /// Concatenate along the channel axis.
    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!((a.h, a.w), (b.h, b.w), "concat spatial dims differ");
        let mut data = Vec::with_capacity((a.ch + b.ch) * a.h * a.w);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            ch: a.ch + b.ch,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Split the leading `front` channels off a concatenated tensor.
    pub fn split(&self, front: usize) -> (Tensor, Tensor) {
        let size = self.h * self.w;
        let (a, b) = self.data.split_at(front * size);
        (
            Tensor::from_vec(front, self.h, self.w, a.to_vec()),
            Tensor::from_vec(self.ch - front, self.h, self.w, b.to_vec()),
        )
    }
}
