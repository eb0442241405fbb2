//! View extraction: the input window a convolution or pooling step reads
//! at one output position.

use crate::error::{check_len, KernelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Padding {
    Same,
    Valid,
}

/// Filter extent, strides and padding of a sliding-window operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Window {
    pub filter_h: usize,
    pub filter_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub padding: Padding,
}

/// Number of output positions along one axis.
///
/// `SAME` yields `ceil(dim / stride)`, `VALID` yields
/// `ceil((dim - filter + 1) / stride)` and `None` when the filter does not fit.
pub fn output_extent(dim: usize, filter: usize, stride: usize, padding: Padding) -> Option<usize> {
    if dim == 0 || filter == 0 || stride == 0 {
        return None;
    }
    match padding {
        Padding::Same => Some(dim.div_ceil(stride)),
        Padding::Valid => {
            if filter > dim {
                None
            } else {
                Some((dim - filter + 1).div_ceil(stride))
            }
        }
    }
}

impl Window {
    /// Output `(height, width)` for an input of `(height, width)`.
    pub fn output_dims(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        Some((
            output_extent(height, self.filter_h, self.stride_h, self.padding)?,
            output_extent(width, self.filter_w, self.stride_w, self.padding)?,
        ))
    }

    /// Offset subtracted from window coordinates; centres the filter under `SAME`.
    pub fn shift(&self) -> (usize, usize) {
        match self.padding {
            Padding::Same => ((self.filter_h - 1) / 2, (self.filter_w - 1) / 2),
            Padding::Valid => (0, 0),
        }
    }

    pub fn area(&self) -> usize {
        self.filter_h * self.filter_w
    }
}

/// Copies the `[filter_h, filter_w, channels]` window for output position
/// `(row, col)` into `view`. Positions that fall outside the input read as
/// `fill`.
///
/// `input` is an `[height, width, channels]` row-major block.
#[allow(clippy::too_many_arguments)]
pub fn extract_view(
    input: &[i8],
    height: usize,
    width: usize,
    channels: usize,
    row: usize,
    col: usize,
    window: &Window,
    fill: i8,
    view: &mut [i8],
) -> Result<(), KernelError> {
    check_len("input", height * width * channels, input.len())?;
    check_len("view", window.area() * channels, view.len())?;
    let (out_h, out_w) = window
        .output_dims(height, width)
        .ok_or(KernelError::Geometry("window does not fit the input"))?;
    if row >= out_h || col >= out_w {
        return Err(KernelError::Position { row, col });
    }
    let (shift_h, shift_w) = window.shift();
    let base_h = (window.stride_h * row) as isize - shift_h as isize;
    let base_w = (window.stride_w * col) as isize - shift_w as isize;
    for k in 0..window.filter_h {
        let h = base_h + k as isize;
        for l in 0..window.filter_w {
            let w = base_w + l as isize;
            let dst = &mut view[(k * window.filter_w + l) * channels..][..channels];
            if h >= 0 && (h as usize) < height && w >= 0 && (w as usize) < width {
                let src = (h as usize * width + w as usize) * channels;
                dst.copy_from_slice(&input[src..src + channels]);
            } else {
                dst.fill(fill);
            }
        }
    }
    Ok(())
}
