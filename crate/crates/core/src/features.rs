//! Per-frame visual feature extraction: 3x3 convolution with 16 filters,
//! ReLU, 2x2 max pooling, and flattening into an `m x d` matrix.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{xavier, Bound, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

pub const FILTERS: usize = 16;
pub const KERNEL: usize = 3;

/// A clip of `m` frames, `m x C x H x W`, pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    frames: Tensor<f32>,
    pub fps: f32,
}

impl FrameStack {
    pub fn new(frames: Tensor<f32>, fps: f32) -> Result<Self> {
        let &[_, c, h, w] = frames.shape() else {
            return Err(Error::invalid(
                "frame_stack",
                format!("expected m x C x H x W, got {:?}", frames.shape()),
            ));
        };
        if c == 0 || h < KERNEL || w < KERNEL {
            return Err(Error::invalid(
                "frame_stack",
                format!("frame {c}x{h}x{w} too small for a {KERNEL}x{KERNEL} kernel"),
            ));
        }
        if let Some(bad) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(
                "frame_stack",
                format!("pixel {bad} outside [0, 1]"),
            ));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(C, H, W)` of each frame.
    pub fn frame_dims(&self) -> (usize, usize, usize) {
        let s = self.frames.shape();
        (s[1], s[2], s[3])
    }

    /// The first `m` frames.
    pub fn prefix(&self, m: usize) -> Result<FrameStack> {
        let (c, h, w) = self.frame_dims();
        let per = c * h * w;
        if m > self.len() {
            return Err(Error::invalid("frame_stack", format!("prefix {m} of {}", self.len())));
        }
        let frames = Tensor::new(vec![m, c, h, w], self.frames.data()[..m * per].to_vec())?;
        Ok(Self {
            frames,
            fps: self.fps,
        })
    }
}

/// Explains the flattened feature width `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub channels_out: usize,
    pub h_pooled: usize,
    pub w_pooled: usize,
}

impl FeatureLayout {
    /// Layout after a valid 3x3 convolution and 2x2 pooling of `h x w` frames.
    pub fn for_frame(h: usize, w: usize) -> Result<Self> {
        if h < KERNEL + 1 || w < KERNEL + 1 {
            return Err(Error::invalid(
                "feature_layout",
                format!("frame {h}x{w} leaves nothing to pool"),
            ));
        }
        Ok(Self {
            channels_out: FILTERS,
            h_pooled: (h - KERNEL).div_ceil(2),
            w_pooled: (w - KERNEL).div_ceil(2),
        })
    }

    pub fn dim(&self) -> usize {
        self.channels_out * self.h_pooled * self.w_pooled
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeatureMatrix {
    /// `m x d`
    pub x_e: Var,
    pub layout: FeatureLayout,
}

/// Valid 3x3 cross-correlation of one `C x H x W` frame followed by ReLU.
pub fn conv2d_relu<T: Real>(g: &mut Graph<T>, frame: Var, kernels: Var, bias: Var) -> Result<Var> {
    let &[c, h, w] = g.shape(frame) else {
        return Err(Error::invalid("conv2d_relu", format!("expected C x H x W, got {:?}", g.shape(frame))));
    };
    let x = g.reshape(frame, &[1, c, h, w])?;
    let y = g.conv2d(x, kernels, bias)?;
    let y = g.relu(y);
    let s = g.shape(y).to_vec();
    g.reshape(y, &s[1..])
}

pub fn maxpool2x2<T: Real>(g: &mut Graph<T>, map: Var) -> Result<Var> {
    g.maxpool2x2(map)
}

/// Runs every frame through conv → ReLU → pool → flatten and stacks the
/// rows in frame order.
pub fn extract_features<T: Real>(
    g: &mut Graph<T>,
    frames: Var,
    kernels: Var,
    bias: Var,
) -> Result<FeatureMatrix> {
    let &[m, _, h, w] = g.shape(frames) else {
        return Err(Error::invalid("extract_features", format!("expected m x C x H x W, got {:?}", g.shape(frames))));
    };
    if m == 0 {
        return Err(Error::invalid("extract_features", "empty video"));
    }
    let layout = FeatureLayout::for_frame(h, w)?;
    let y = g.conv2d(frames, kernels, bias)?;
    let y = g.relu(y);
    let y = g.maxpool2x2(y)?;
    debug_assert_eq!(g.shape(y), [m, layout.channels_out, layout.h_pooled, layout.w_pooled]);
    let x_e = g.reshape(y, &[m, layout.dim()])?;
    Ok(FeatureMatrix { x_e, layout })
}

/// Learnable front end shared by every model variant.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    kernels: ParamId,
    bias: ParamId,
    pub layout: FeatureLayout,
}

impl FeatureExtractor {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        (c, h, w): (usize, usize, usize),
    ) -> Result<Self> {
        let layout = FeatureLayout::for_frame(h, w)?;
        let fan_in = c * KERNEL * KERNEL;
        let kernels = store.add(
            "features.kernels",
            xavier(rng, &[FILTERS, c, KERNEL, KERNEL], fan_in, FILTERS * KERNEL * KERNEL),
        );
        let bias = store.add("features.bias", Tensor::zeros(&[FILTERS]));
        Ok(Self {
            kernels,
            bias,
            layout,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, frames: Var) -> Result<FeatureMatrix> {
        extract_features(g, frames, p[self.kernels], p[self.bias])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_resolution_layout() {
        // 52x65 -> valid conv 50x63 -> pool 25x31
        let l = FeatureLayout::for_frame(52, 65).unwrap();
        assert_eq!((l.h_pooled, l.w_pooled), (25, 31));
        assert_eq!(l.dim(), 16 * 25 * 31);
        let desk = FeatureLayout::for_frame(16, 16).unwrap();
        assert_eq!(desk.dim(), 16 * 7 * 7);
    }

    #[test]
    fn frame_stack_validation() {
        assert!(FrameStack::new(Tensor::zeros(&[2, 1, 2, 5]), 30.0).is_err());
        assert!(FrameStack::new(Tensor::zeros(&[2, 0, 5, 5]), 30.0).is_err());
        assert!(FrameStack::new(Tensor::full(&[1, 1, 3, 3], 1.5), 30.0).is_err());
        let ok = FrameStack::new(Tensor::full(&[4, 1, 3, 3], 0.5), 30.0).unwrap();
        assert_eq!(ok.prefix(2).unwrap().len(), 2);
    }
}
