//! Dense tensor storage, the raw tensor dump format and the central
//! finite-difference gradient oracle.

use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor extents must be positive, got {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("finite difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("objective is not finite when perturbing flat index {index} ({direction})")]
    NonFiniteObjective { index: usize, direction: &'static str },
    #[error("malformed tensor dump: {0}")]
    BadDump(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Scalar element of a [`Tensor`].
pub trait Real: Copy + Default + PartialOrd + fmt::Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn is_finite(self) -> bool;
}

impl Real for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Real for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

/// Row-major dense tensor with positive extents.
///
/// Oracle paths use `Tensor<f64>`; the streaming convolution runs in `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NumericsError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NumericsError::ZeroExtent(shape));
        }
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(NumericsError::ShapeMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Like [`Tensor::new`] but additionally rejects NaN and infinities.
    pub fn new_finite(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NumericsError> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite(i));
        }
        Self::new(shape, data)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, NumericsError> {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![T::default(); n])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self, NumericsError> {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Flat row-major offset of a multi-index. Panics when out of bounds.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for shape {:?}", self.shape);
            off = off * d + i;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(Real::to_f64)
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        self.map(|v| v.to_f64() as f32)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, NumericsError> {
        Self::new(shape, self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Writes `tensor` in the raw dump format: an ASCII header line
/// `STE <ndim> <d0> <d1> ...` followed by little-endian `f32` values.
pub fn write_dump<T: Real, W: Write>(mut out: W, tensor: &Tensor<T>) -> Result<(), NumericsError> {
    let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
    writeln!(out, "STE {} {}", tensor.ndim(), dims.join(" "))?;
    let mut bytes = Vec::with_capacity(tensor.len() * 4);
    for v in tensor.data() {
        bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_dump<R: BufRead>(mut input: R) -> Result<Tensor<f32>, NumericsError> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let mut fields = header.split_ascii_whitespace();
    if fields.next() != Some("STE") {
        return Err(NumericsError::BadDump("missing STE magic".into()));
    }
    let ndim: usize = fields
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| NumericsError::BadDump("bad rank".into()))?;
    let shape = fields
        .map(|s| s.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| NumericsError::BadDump(format!("bad extent: {e}")))?;
    if shape.len() != ndim {
        return Err(NumericsError::BadDump(format!(
            "header declares rank {ndim} but lists {} extents",
            shape.len()
        )));
    }
    if shape.is_empty() || shape.contains(&0) {
        return Err(NumericsError::ZeroExtent(shape));
    }
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 4];
    input
        .read_exact(&mut bytes)
        .map_err(|_| NumericsError::BadDump(format!("expected {n} f32 values")))?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(NumericsError::BadDump("trailing bytes after payload".into()));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function.
///
/// Each coordinate is perturbed by `±eps` in turn; a non-finite objective at
/// any perturbation is reported with the offending flat index.
pub fn finite_diff_grad<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>, NumericsError>
where
    F: Fn(&Tensor<f64>) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(NumericsError::BadStep(eps));
    }
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let plus = f(&probe);
        if !plus.is_finite() {
            return Err(NumericsError::NonFiniteObjective {
                index: i,
                direction: "+eps",
            });
        }
        probe.data[i] = orig - eps;
        let minus = f(&probe);
        if !minus.is_finite() {
            return Err(NumericsError::NonFiniteObjective {
                index: i,
                direction: "-eps",
            });
        }
        probe.data[i] = orig;
        *g = (plus - minus) / (2.0 * eps);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Relative error `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`; falls back to the absolute
/// error when both norms are below `1e-8`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}
