//! Non-overlapping window tiling of feature maps.
//!
//! Tiles are `w x w`, anchored at the top-left corner; the map is zero-padded
//! on the bottom and right up to a multiple of `w`. A window side larger than
//! the map is clipped to the map, so a large `w` yields one global window
//! with no padding.

use serde::Serialize;

use crate::error::{config_err, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WindowLayout {
    pub height: usize,
    pub width: usize,
    /// Tile side along each axis after clipping to the map.
    pub win_h: usize,
    pub win_w: usize,
    pub rows: usize,
    pub cols: usize,
    pub pad_bottom: usize,
    pub pad_right: usize,
}

impl WindowLayout {
    pub fn new(height: usize, width: usize, window: usize) -> Result<Self> {
        if window == 0 {
            return config_err("window size must be >= 1");
        }
        let win_h = window.min(height);
        let win_w = window.min(width);
        let rows = height.div_ceil(win_h);
        let cols = width.div_ceil(win_w);
        Ok(WindowLayout {
            height,
            width,
            win_h,
            win_w,
            rows,
            cols,
            pad_bottom: rows * win_h - height,
            pad_right: cols * win_w - width,
        })
    }

    pub fn num_windows(&self) -> usize {
        self.rows * self.cols
    }

    /// Token slots per window, `l = w^2` including padding.
    pub fn tokens_per_window(&self) -> usize {
        self.win_h * self.win_w
    }

    /// Map coordinate of a window token, or `None` if it is padding.
    #[inline]
    pub fn pixel(&self, window: usize, token: usize) -> Option<(usize, usize)> {
        let (r, c) = (window / self.cols, window % self.cols);
        let y = r * self.win_h + token / self.win_w;
        let x = c * self.win_w + token % self.win_w;
        (y < self.height && x < self.width).then_some((y, x))
    }

    /// Window index containing map pixel `(y, x)`.
    pub fn window_of(&self, y: usize, x: usize) -> usize {
        (y / self.win_h) * self.cols + x / self.win_w
    }

    /// Map pixels of a window, padding excluded, in token order.
    pub fn valid_pixels(&self, window: usize) -> Vec<(usize, usize)> {
        (0..self.tokens_per_window()).filter_map(|t| self.pixel(window, t)).collect()
    }

    /// `sum over windows of (valid tokens)^2`: the number of query/key pairs.
    pub fn attention_pairs(&self) -> u64 {
        (0..self.num_windows()).map(|w| (self.valid_pixels(w).len() as u64).pow(2)).sum()
    }
}

/// Windowed view: `[batch][window][channel][token]`, padding stored as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows<T> {
    pub layout: WindowLayout,
    pub batch: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Windows<T> {
    pub fn tokens(&self, n: usize, window: usize, channel: usize) -> &[T] {
        let l = self.layout.tokens_per_window();
        let base = ((n * self.layout.num_windows() + window) * self.channels + channel) * l;
        &self.data[base..base + l]
    }
}

pub fn window_partition<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<Windows<T>> {
    let s = x.shape();
    let layout = WindowLayout::new(s.h, s.w, window)?;
    let l = layout.tokens_per_window();
    let mut data = vec![T::default(); s.n * layout.num_windows() * s.c * l];
    for n in 0..s.n {
        for win in 0..layout.num_windows() {
            for c in 0..s.c {
                let base = ((n * layout.num_windows() + win) * s.c + c) * l;
                for t in 0..l {
                    if let Some((y, xx)) = layout.pixel(win, t) {
                        data[base + t] = x.at(n, c, y, xx);
                    }
                }
            }
        }
    }
    Ok(Windows { layout, batch: s.n, channels: s.c, data })
}

/// Inverse of [`window_partition`]; padding is dropped.
pub fn window_merge<T: Scalar>(w: &Windows<T>) -> Tensor<T> {
    let layout = w.layout;
    let shape = Shape::new(w.batch, w.channels, layout.height, layout.width);
    let mut out = Tensor::zeros(shape);
    for n in 0..w.batch {
        for win in 0..layout.num_windows() {
            for c in 0..w.channels {
                for (t, v) in w.tokens(n, win, c).iter().enumerate() {
                    if let Some((y, x)) = layout.pixel(win, t) {
                        out.set(n, c, y, x, *v);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn global_window() {
        let l = WindowLayout::new(4, 4, 4).unwrap();
        assert_eq!((l.rows, l.cols, l.pad_bottom, l.pad_right), (1, 1, 0, 0));
        let clipped = WindowLayout::new(7, 7, 100).unwrap();
        assert_eq!((clipped.num_windows(), clipped.tokens_per_window()), (1, 49));
    }

    #[test]
    fn exact_tiling() {
        let l = WindowLayout::new(4, 4, 2).unwrap();
        assert_eq!(l.num_windows(), 4);
        assert_eq!(l.tokens_per_window(), 4);
        assert!((0..4).all(|w| l.valid_pixels(w).len() == 4));
        assert_eq!(l.attention_pairs(), 64);
    }

    #[test]
    fn padded_round_trip() {
        let mut rng = Rng::new(9);
        let x = Tensor::<f64>::from_fn(Shape::new(2, 3, 5, 5), |_, _, _, _| rng.normal());
        let w = window_partition(&x, 4).unwrap();
        let l = w.layout;
        assert_eq!((l.rows * l.win_h, l.cols * l.win_w), (8, 8));
        assert_eq!(l.num_windows(), 4);
        assert_eq!((l.pad_bottom, l.pad_right), (3, 3));
        assert_eq!(window_merge(&w), x);
        // padded slots are zero
        assert_eq!(w.tokens(0, 3, 0)[5], 0.0);
    }

    #[test]
    fn zero_window_rejected() {
        assert!(WindowLayout::new(4, 4, 0).is_err());
    }
}
