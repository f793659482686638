use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};

use crate::error::{Error, Result};

/// Floating-point element type of the network engine. Training runs in
/// `f32`; gradient verification uses `f64`.
pub trait Real: Float + NumAssign + Sum + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` with arbitrary strides (row stride,
    /// column stride) for each operand; `a` is `m x k`, `b` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite conversion")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline]
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: extents checked above; `c` does not alias `a` or `b`
                // because it is borrowed mutably.
                unsafe {
                    $gemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc);
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Dense `(batch, channels, height, width)` array, row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Self { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: [1, 1, 1, 1], data: vec![value] }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn item(&self, n: usize) -> &[T] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Single scalar value of a one-element tensor.
    pub fn value(&self) -> T {
        assert_eq!(self.data.len(), 1, "value() on a non-scalar tensor");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| v.f64()).sum::<f64>() / self.data.len() as f64
    }

    /// Stacks equally shaped batch-1 tensors along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Shape("stack of nothing".into()))?;
        let mut shape = first.shape;
        if items.iter().any(|t| t.shape[1..] != shape[1..]) {
            return Err(Error::Shape("stack of differently shaped tensors".into()));
        }
        shape[0] = items.iter().map(|t| t.shape[0]).sum();
        let data = items.iter().flat_map(|t| t.data.iter().copied()).collect();
        Ok(Self { shape, data })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::of(v.f64())).collect() }
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    ((len.checked_sub(1)?) * stride + kernel).checked_sub(2 * pad)
}

/// Geometry shared by im2col and col2im: a `(channels, height, width)` image
/// seen through `kernel`x`kernel` windows.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Patches {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Patches {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        let out_h = conv_out_len(height, kernel, stride, pad);
        let out_w = conv_out_len(width, kernel, stride, pad);
        match (out_h, out_w) {
            (Some(out_h), Some(out_w)) => Ok(Self { channels, height, width, kernel, stride, pad, out_h, out_w }),
            _ => Err(Error::Shape(format!("kernel {kernel} does not fit a {height}x{width} input"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds `image` (`channels x height x width`) into `col`
    /// (`rows x cols`); padding reads as zero.
    pub fn im2col<T: Real>(&self, image: &[T], col: &mut [T]) {
        let k = self.kernel;
        let cols = self.cols();
        for ch in 0..self.channels {
            let plane = &image[ch * self.height * self.width..(ch + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy as usize >= self.height {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, slot) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *slot = if ix < 0 || ix as usize >= self.width { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Patches::im2col`]: accumulates `col` back into `image`.
    pub fn col2im<T: Real>(&self, col: &[T], image: &mut [T]) {
        let k = self.kernel;
        let cols = self.cols();
        for ch in 0..self.channels {
            let plane = &mut image[ch * self.height * self.width..(ch + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ch * k + ky) * k + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.width {
                                dst[ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}
