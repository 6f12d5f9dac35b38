use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::autodiff::Tensor;

/// Glorot-uniform `[out×in]` weights.
pub(crate) fn xavier<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("valid shape")
}

/// Convolution kernel `[Co×Ci×kh×kw]` with Glorot fans over the receptive field.
pub(crate) fn conv_kernel<R: Rng>(rng: &mut R, co: usize, ci: usize, kh: usize, kw: usize) -> Tensor {
    xavier(rng, &[co, ci, kh, kw], ci * kh * kw, co * kh * kw)
}
