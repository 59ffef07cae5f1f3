//! Frame stacking and downsampling applied before the encoder.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LEFT_CONTEXT: usize = 3;
pub const STRIDE: usize = 3;

/// Stacks each frame with its three left neighbours and keeps every third
/// stacked frame: `[T x D] -> [ceil(T/3) x 4D]`. Frames before the start
/// replicate frame 0.
pub fn stack_and_downsample(frames: &Tensor) -> Result<Tensor> {
    stack_frames(frames, LEFT_CONTEXT, STRIDE)
}

/// General form of [`stack_and_downsample`]: output row `k` is
/// `frames[t-left] ++ ... ++ frames[t]` for `t = k * stride`.
pub fn stack_frames(frames: &Tensor, left: usize, stride: usize) -> Result<Tensor> {
    if frames.shape().len() != 2 {
        return Err(Error::shape("stack_and_downsample", frames.shape(), &[]));
    }
    if stride == 0 {
        return Err(Error::validation("stride", "must be positive"));
    }
    let (t_in, d) = (frames.rows(), frames.cols());
    let t_out = t_in.div_ceil(stride);
    let width = (left + 1) * d;
    let mut out = Vec::with_capacity(t_out * width);
    for k in 0..t_out {
        let t = k * stride;
        for j in (0..=left).rev() {
            out.extend_from_slice(frames.row(t.saturating_sub(j)));
        }
    }
    Tensor::matrix(t_out, width, out)
}

/// Number of output frames for `t` input frames.
pub fn output_frames(t: usize) -> usize {
    t.div_ceil(STRIDE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_frames_example() {
        // rows a, b, c, d with D = 1
        let f = Tensor::matrix(4, 1, alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = stack_and_downsample(&f).unwrap();
        assert_eq!(s.shape(), &[2, 4]);
        assert_eq!(s.values(), &[1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn short_inputs() {
        let f = Tensor::matrix(1, 2, alloc::vec![5.0, 6.0]).unwrap();
        let s = stack_and_downsample(&f).unwrap();
        assert_eq!(s.shape(), &[1, 8]);
        assert_eq!(s.values(), &[5.0, 6.0, 5.0, 6.0, 5.0, 6.0, 5.0, 6.0]);
        assert!(stack_and_downsample(&Tensor::vector(alloc::vec![1.0])).is_err());
    }

    proptest! {
        #[test]
        fn shape_and_current_frame(t in 1usize..40, d in 1usize..5) {
            let vals: Vec<f64> = (0..t * d).map(|i| i as f64).collect();
            let f = Tensor::matrix(t, d, vals).unwrap();
            let s = stack_and_downsample(&f).unwrap();
            prop_assert_eq!(s.shape(), &[t.div_ceil(3), 4 * d]);
            for k in 0..s.rows() {
                prop_assert_eq!(&s.row(k)[3 * d..], f.row(3 * k));
            }
        }
    }
}
