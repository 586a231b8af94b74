// Loop kernels for convolution and pooling. Convolution lowers to GEMM via
// im2col; pooling is a direct window scan.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `floor((extent + 2 * padding - kernel) / stride) + 1`, or `None` when the
/// window never fits.
pub fn conv_output_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if kernel == 0 || stride == 0 {
        return None;
    }
    let padded = extent + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl Conv2dGeometry {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let out_height = conv_output_extent(height, kernel, stride, padding);
        let out_width = conv_output_extent(width, kernel, stride, padding);
        match (out_height, out_width) {
            (Some(out_height), Some(out_width)) if in_channels > 0 && out_channels > 0 => Ok(Self {
                in_channels,
                out_channels,
                height,
                width,
                kernel,
                stride,
                padding,
                out_height,
                out_width,
            }),
            _ => Err(Error::Config(format!(
                "conv kernel {kernel} stride {stride} padding {padding} on {in_channels}x{height}x{width} \
                 yields no positive output extent"
            ))),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_plane()
    }

    // Input offset for (channel, ky, kx) at output (oy, ox), or None in padding.
    #[inline]
    fn source(&self, c: usize, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<usize> {
        let y = (oy * self.stride + ky) as isize - self.padding as isize;
        let x = (ox * self.stride + kx) as isize - self.padding as isize;
        if y < 0 || x < 0 || y as usize >= self.height || x as usize >= self.width {
            return None;
        }
        Some((c * self.height + y as usize) * self.width + x as usize)
    }

    /// Lower one `C x H x W` sample into a `(C*K*K) x (H'*W')` column matrix.
    pub(crate) fn im2col<T: Scalar>(&self, input: &[T], cols: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.in_channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_height {
                        for ox in 0..self.out_width {
                            dst[oy * self.out_width + ox] = self
                                .source(c, ky, kx, oy, ox)
                                .map_or(T::zero(), |i| input[i]);
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a column matrix back onto a sample gradient.
    pub(crate) fn col2im<T: Scalar>(&self, cols: &[T], grad: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.in_channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_height {
                        for ox in 0..self.out_width {
                            if let Some(i) = self.source(c, ky, kx, oy, ox) {
                                grad[i] += src[oy * self.out_width + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Cross-correlation of a batch: `input` is `N x C x H x W`, `weight`
    /// is `O x C x K x K`, `bias` has `O` entries.
    pub(crate) fn forward<T: Scalar>(
        &self,
        batch: usize,
        input: &[T],
        weight: &[T],
        bias: &[T],
    ) -> Vec<T> {
        let (plane, patch) = (self.out_plane(), self.patch_len());
        let mut out = vec![T::zero(); batch * self.out_len()];
        let mut cols = vec![T::zero(); patch * plane];
        for n in 0..batch {
            self.im2col(
                &input[n * self.in_len()..(n + 1) * self.in_len()],
                &mut cols,
            );
            let dst = &mut out[n * self.out_len()..(n + 1) * self.out_len()];
            for (o, row) in dst.chunks_exact_mut(plane).enumerate() {
                row.fill(bias[o]);
            }
            T::gemm(
                self.out_channels,
                patch,
                plane,
                T::one(),
                weight,
                (patch as isize, 1),
                &cols,
                (plane as isize, 1),
                T::one(),
                dst,
                (plane as isize, 1),
            );
        }
        out
    }

    /// Accumulates input, weight and bias gradients for a batch.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward<T: Scalar>(
        &self,
        batch: usize,
        input: &[T],
        weight: &[T],
        grad_out: &[T],
        grad_input: Option<&mut [T]>,
        grad_weight: Option<&mut [T]>,
        grad_bias: Option<&mut [T]>,
    ) {
        let (plane, patch) = (self.out_plane(), self.patch_len());
        let mut cols = vec![T::zero(); patch * plane];
        if let Some(gb) = grad_bias {
            for n in 0..batch {
                let go = &grad_out[n * self.out_len()..(n + 1) * self.out_len()];
                for (o, row) in go.chunks_exact(plane).enumerate() {
                    gb[o] += row.iter().copied().sum::<T>();
                }
            }
        }
        if let Some(gw) = grad_weight {
            for n in 0..batch {
                self.im2col(
                    &input[n * self.in_len()..(n + 1) * self.in_len()],
                    &mut cols,
                );
                let go = &grad_out[n * self.out_len()..(n + 1) * self.out_len()];
                // gw[O, patch] += go[O, plane] * cols^T
                T::gemm(
                    self.out_channels,
                    plane,
                    patch,
                    T::one(),
                    go,
                    (plane as isize, 1),
                    &cols,
                    (1, plane as isize),
                    T::one(),
                    gw,
                    (patch as isize, 1),
                );
            }
        }
        if let Some(gi) = grad_input {
            for n in 0..batch {
                let go = &grad_out[n * self.out_len()..(n + 1) * self.out_len()];
                // cols[patch, plane] = weight^T * go
                T::gemm(
                    patch,
                    self.out_channels,
                    plane,
                    T::one(),
                    weight,
                    (1, patch as isize),
                    go,
                    (plane as isize, 1),
                    T::zero(),
                    &mut cols,
                    (plane as isize, 1),
                );
                self.col2im(&cols, &mut gi[n * self.in_len()..(n + 1) * self.in_len()]);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl PoolGeometry {
    /// Pooling without padding; each extent must satisfy
    /// `(extent - kernel).is_multiple_of(stride)`.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let fits = |extent: usize| {
            kernel > 0 && stride > 0 && extent >= kernel && (extent - kernel).is_multiple_of(stride)
        };
        if channels == 0 || !fits(height) || !fits(width) {
            return Err(Error::Config(format!(
                "maxpool kernel {kernel} stride {stride} does not tile {height}x{width}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            out_height: (height - kernel) / stride + 1,
            out_width: (width - kernel) / stride + 1,
        })
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.channels * self.out_height * self.out_width
    }

    /// Window maxima plus the flat input index each maximum came from. Ties
    /// resolve to the first element in row-major window order.
    pub(crate) fn forward<T: Scalar>(&self, batch: usize, input: &[T]) -> (Vec<T>, Vec<usize>) {
        let total = batch * self.out_len();
        let mut out = Vec::with_capacity(total);
        let mut argmax = Vec::with_capacity(total);
        for n in 0..batch {
            for c in 0..self.channels {
                let base = (n * self.channels + c) * self.height * self.width;
                for oy in 0..self.out_height {
                    for ox in 0..self.out_width {
                        let mut best = base + oy * self.stride * self.width + ox * self.stride;
                        for ky in 0..self.kernel {
                            for kx in 0..self.kernel {
                                let i = base
                                    + (oy * self.stride + ky) * self.width
                                    + ox * self.stride
                                    + kx;
                                if input[i] > input[best] {
                                    best = i;
                                }
                            }
                        }
                        out.push(input[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        (out, argmax)
    }
}
