//! Dense row-major tensors, their element types, and the text file format.
//!
//! ```text
//! shape: 2 3
//! dtype: i32
//! 1 2 3
//! 4 5 6
//! ```
//!
//! Values follow the two header lines in row-major order, separated by any
//! whitespace. Lines starting with `#` are ignored.

use std::fmt;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    I32,
    F32,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::I32 => "i32",
            DType::F32 => "f32",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "i32" => Some(DType::I32),
            "f32" => Some(DType::F32),
            _ => None,
        }
    }
}

/// Scalar element of a tensor.
///
/// Integer arithmetic wraps so that results are exact and independent of
/// evaluation order. Oracles accumulate in `Acc`, which is wider for floats.
pub trait Element: Copy + PartialEq + fmt::Debug + Default + Send + Sync + 'static {
    const DTYPE: DType;
    type Acc: Copy;

    fn zero_acc() -> Self::Acc;
    fn acc_mul_add(acc: Self::Acc, a: Self, b: Self) -> Self::Acc;
    fn from_acc(acc: Self::Acc) -> Self;
    /// `self + a · b` in the element type.
    fn mul_add(self, a: Self, b: Self) -> Self;
    fn add(self, other: Self) -> Self;
    /// Large sentinel written into pad cells in poisoning mode.
    fn poison() -> Self;
    fn random<R: Rng>(rng: &mut R) -> Self;
    fn parse_value(s: &str) -> Option<Self>;
    fn format_value(self) -> String;
    /// Whether `actual` is acceptably close to `expected`.
    fn close(actual: Self, expected: Self) -> bool;
    fn abs_diff(a: Self, b: Self) -> f64;
}

impl Element for i32 {
    const DTYPE: DType = DType::I32;
    type Acc = i32;

    fn zero_acc() -> i32 {
        0
    }
    fn acc_mul_add(acc: i32, a: i32, b: i32) -> i32 {
        acc.wrapping_add(a.wrapping_mul(b))
    }
    fn from_acc(acc: i32) -> i32 {
        acc
    }
    fn mul_add(self, a: i32, b: i32) -> i32 {
        self.wrapping_add(a.wrapping_mul(b))
    }
    fn add(self, other: i32) -> i32 {
        self.wrapping_add(other)
    }
    fn poison() -> i32 {
        1 << 24
    }
    fn random<R: Rng>(rng: &mut R) -> i32 {
        rng.gen_range(-64..=64)
    }
    fn parse_value(s: &str) -> Option<i32> {
        s.parse().ok()
    }
    fn format_value(self) -> String {
        self.to_string()
    }
    fn close(actual: i32, expected: i32) -> bool {
        actual == expected
    }
    fn abs_diff(a: i32, b: i32) -> f64 {
        (f64::from(a) - f64::from(b)).abs()
    }
}

/// Relative tolerance of float comparisons.
pub const F32_RELATIVE_TOLERANCE: f64 = 1e-4;

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    type Acc = f64;

    fn zero_acc() -> f64 {
        0.0
    }
    fn acc_mul_add(acc: f64, a: f32, b: f32) -> f64 {
        acc + f64::from(a) * f64::from(b)
    }
    fn from_acc(acc: f64) -> f32 {
        acc as f32
    }
    fn mul_add(self, a: f32, b: f32) -> f32 {
        self + a * b
    }
    fn add(self, other: f32) -> f32 {
        self + other
    }
    fn poison() -> f32 {
        1.0e6
    }
    fn random<R: Rng>(rng: &mut R) -> f32 {
        rng.gen_range(-1.0f32..1.0)
    }
    fn parse_value(s: &str) -> Option<f32> {
        s.parse().ok()
    }
    fn format_value(self) -> String {
        format!("{self:?}")
    }
    fn close(actual: f32, expected: f32) -> bool {
        let (x, y) = (f64::from(actual), f64::from(expected));
        (x - y).abs() <= F32_RELATIVE_TOLERANCE * y.abs().max(1.0)
    }
    fn abs_diff(a: f32, b: f32) -> f64 {
        (f64::from(a) - f64::from(b)).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::default(); n],
        }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> T) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; t.shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < t.shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        t
    }

    pub fn random<R: Rng>(shape: Vec<usize>, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(|_| T::random(rng)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            debug_assert!(i < n);
            acc * n + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn to_text(&self) -> String {
        let dims: Vec<String> = self.shape.iter().map(usize::to_string).collect();
        let mut out = format!("shape: {}\ndtype: {}\n", dims.join(" "), T::DTYPE.name());
        let row = self.shape.last().copied().unwrap_or(1).max(1);
        for chunk in self.data.chunks(row) {
            let values: Vec<String> = chunk.iter().map(|v| v.format_value()).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }
}

/// A tensor of either element type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    I32(Tensor<i32>),
    F32(Tensor<f32>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::I32(_) => DType::I32,
            AnyTensor::F32(_) => DType::F32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::I32(t) => t.shape(),
            AnyTensor::F32(t) => t.shape(),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            AnyTensor::I32(t) => t.to_text(),
            AnyTensor::F32(t) => t.to_text(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = |line: Option<&str>, key: &str| -> Result<String> {
            line.and_then(|l| l.strip_prefix(key))
                .and_then(|rest| rest.trim_start().strip_prefix(':'))
                .map(|v| v.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("tensor: expected '{key}:' header")))
        };
        let shape: Vec<usize> = header(lines.next(), "shape")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("tensor: bad extent '{s}'"))))
            .collect::<Result<_>>()?;
        let dtype_name = header(lines.next(), "dtype")?;
        let dtype =
            DType::parse(&dtype_name).ok_or_else(|| Error::Parse(format!("tensor: unknown dtype '{dtype_name}'")))?;
        let values: Vec<&str> = lines.flat_map(str::split_whitespace).collect();
        fn collect<T: Element>(shape: Vec<usize>, values: &[&str]) -> Result<Tensor<T>> {
            let data = values
                .iter()
                .map(|s| T::parse_value(s).ok_or_else(|| Error::Parse(format!("tensor: bad value '{s}'"))))
                .collect::<Result<Vec<T>>>()?;
            Tensor::from_vec(shape, data).map_err(|e| Error::Parse(format!("tensor: {e}")))
        }
        Ok(match dtype {
            DType::I32 => AnyTensor::I32(collect(shape, &values)?),
            DType::F32 => AnyTensor::F32(collect(shape, &values)?),
        })
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AnyTensor::parse(&text)
}

pub fn write_tensor(tensor: &AnyTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, tensor.to_text()).map_err(|e| Error::io(path, e))
}

/// Result of comparing an output against its oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub elements: usize,
    pub mismatches: usize,
    pub max_abs_diff: f64,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// Elementwise comparison: exact for integers, relative tolerance for floats.
pub fn compare<T: Element>(actual: &Tensor<T>, expected: &Tensor<T>) -> Result<Comparison> {
    if actual.shape() != expected.shape() {
        return Err(Error::ShapeMismatch(format!(
            "output shape {:?} differs from oracle shape {:?}",
            actual.shape(),
            expected.shape()
        )));
    }
    let mut c = Comparison {
        elements: actual.len(),
        mismatches: 0,
        max_abs_diff: 0.0,
    };
    for (&a, &e) in actual.data().iter().zip(expected.data()) {
        c.max_abs_diff = c.max_abs_diff.max(T::abs_diff(a, e));
        if !T::close(a, e) {
            c.mismatches += 1;
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let t = Tensor::<i32>::from_fn(vec![2, 3], |i| (i[0] * 3 + i[1]) as i32 - 2);
        let back = AnyTensor::parse(&t.to_text()).unwrap();
        assert_eq!(back, AnyTensor::I32(t));
        let f = Tensor::<f32>::from_vec(vec![3], vec![0.1, -2.5e-8, 3.0]).unwrap();
        assert_eq!(AnyTensor::parse(&f.to_text()).unwrap(), AnyTensor::F32(f));
    }

    #[test]
    fn malformed_text() {
        for bad in [
            "",
            "shape: 2\n",
            "shape: 2\ndtype: i64\n1 2",
            "shape: 2\ndtype: i32\n1",
            "shape: 2\ndtype: i32\n1 x",
            "dtype: i32\nshape: 2\n1 2",
        ] {
            assert!(matches!(AnyTensor::parse(bad), Err(Error::Parse(_))), "{bad:?}");
        }
        assert!(AnyTensor::parse("# note\nshape: 1 2\ndtype: f32\n\n1.5\n2").is_ok());
    }

    #[test]
    fn float_tolerance_is_relative_above_one() {
        assert!(f32::close(1000.05, 1000.0));
        assert!(!f32::close(1000.2, 1000.0));
        assert!(f32::close(0.00005, 0.0));
        assert!(!f32::close(0.0002, 0.0));
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::<i32>::from_fn(vec![2, 3, 4], |i| (i[0] * 100 + i[1] * 10 + i[2]) as i32);
        assert_eq!(t.data()[12 + 2 * 4 + 3], 123);
        assert_eq!(t.get(&[1, 2, 3]), 123);
    }
}
