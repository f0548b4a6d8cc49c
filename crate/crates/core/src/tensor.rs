//! Dense row-major matrices and the handful of kernels the networks need.
//!
//! There is no implicit broadcasting: every binary operation requires equal
//! shapes, and the one column-broadcast used by dense layers
//! ([`Mat::add_column`]) is an explicit, separately named operation.
//! Sample batches are stored column-wise, so an input batch of `n` vectors of
//! dimension `d` is a `d × n` matrix.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Mat<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    /// Linear output; used for the last decoder layer.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationMode {
    Value,
    Derivative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms<T> {
    pub l1: T,
    pub l2: T,
    pub dot_self: T,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Mat::from_vec", (rows, cols), (data.len(), 1)));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Build from nested rows. Panics on ragged input; intended for literals.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged rows");
            data.extend_from_slice(row.as_ref());
        }
        Mat { rows: r, cols: c, data }
    }

    /// Column vector (`n × 1`).
    pub fn column(values: &[T]) -> Self {
        Mat {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// Stack equal-length vectors as the columns of a matrix.
    pub fn from_columns<V: AsRef<[T]>>(columns: &[V]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let cols = columns.len();
        let mut m = Self::zeros(rows, cols);
        for (j, col) in columns.iter().enumerate() {
            let col = col.as_ref();
            if col.len() != rows {
                return Err(Error::shape("Mat::from_columns", (rows, 1), (col.len(), 1)));
            }
            for (i, &v) in col.iter().enumerate() {
                m.data[i * cols + j] = v;
            }
        }
        Ok(m)
    }

    /// Uniform entries in `[-limit, limit]`.
    pub fn random_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| T::lit(rng.gen_range(-limit..=limit)))
            .collect();
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Gather a subset of columns, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Mat<T> {
        let mut out = Mat::zeros(self.rows, idx.len());
        for r in 0..self.rows {
            let src = self.row(r);
            let dst = &mut out.data[r * idx.len()..(r + 1) * idx.len()];
            for (d, &c) in dst.iter_mut().zip(idx) {
                *d = src[c];
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat<T> {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Mat<T> {
        self.map(|v| v * s)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn matmul(&self, other: &Mat<T>) -> Result<Mat<T>> {
        matmul(self, other)
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn matmul_tn(&self, other: &Mat<T>) -> Result<Mat<T>> {
        if self.rows != other.rows {
            return Err(Error::shape("matmul_tn", self.shape(), other.shape()));
        }
        let (m, n) = (self.cols, other.cols);
        let mut out = Mat::zeros(m, n);
        for p in 0..self.rows {
            let arow = self.row(p);
            let brow = other.row(p);
            for (i, &a) in arow.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Mat<T>) -> Result<Mat<T>> {
        if self.cols != other.cols {
            return Err(Error::shape("matmul_nt", self.shape(), other.shape()));
        }
        matmul(self, &other.transpose())
    }

    pub fn elementwise(&self, other: &Mat<T>, op: ElementwiseOp) -> Result<Mat<T>> {
        elementwise(self, other, op)
    }

    pub fn add(&self, other: &Mat<T>) -> Result<Mat<T>> {
        elementwise(self, other, ElementwiseOp::Add)
    }

    pub fn sub(&self, other: &Mat<T>) -> Result<Mat<T>> {
        elementwise(self, other, ElementwiseOp::Sub)
    }

    pub fn hadamard(&self, other: &Mat<T>) -> Result<Mat<T>> {
        elementwise(self, other, ElementwiseOp::Mul)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Mat<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add_assign", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Add a `rows × 1` column to every column of `self`.
    pub fn add_column(&self, column: &Mat<T>) -> Result<Mat<T>> {
        if column.cols != 1 || column.rows != self.rows {
            return Err(Error::shape("add_column", self.shape(), column.shape()));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let b = column.data[r];
            for v in &mut out.data[r * self.cols..(r + 1) * self.cols] {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Sum across columns, giving a `rows × 1` column.
    pub fn row_sums(&self) -> Mat<T> {
        let data = (0..self.rows).map(|r| self.row(r).iter().copied().sum()).collect();
        Mat {
            rows: self.rows,
            cols: 1,
            data,
        }
    }

    pub fn norms(&self) -> Norms<T> {
        norms(self)
    }
}

/// Standard matrix product.
pub fn matmul<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Mat::zeros(m, n);
    for i in 0..m {
        let orow = &mut out.data[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

pub fn elementwise<T: Scalar>(a: &Mat<T>, b: &Mat<T>, op: ElementwiseOp) -> Result<Mat<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("elementwise {op:?}"), a.shape(), b.shape()));
    }
    let f = match op {
        ElementwiseOp::Add => |x: T, y: T| x + y,
        ElementwiseOp::Sub => |x: T, y: T| x - y,
        ElementwiseOp::Mul => |x: T, y: T| x * y,
    };
    Ok(Mat {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

/// L1 norm, L2 norm and squared L2 norm over all entries.
pub fn norms<T: Scalar>(v: &Mat<T>) -> Norms<T> {
    let mut l1 = T::zero();
    let mut sq = T::zero();
    for &x in &v.data {
        l1 += x.abs();
        sq += x * x;
    }
    Norms {
        l1,
        l2: sq.sqrt(),
        dot_self: sq,
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    #[inline]
    pub fn value<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at `z`; relu′(0) is 0.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (T::one() - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Activation::Identity => T::one(),
        }
    }
}

pub fn activation<T: Scalar>(z: &Mat<T>, kind: Activation, mode: ActivationMode) -> Mat<T> {
    match mode {
        ActivationMode::Value => z.map(|v| kind.value(v)),
        ActivationMode::Derivative => z.map(|v| kind.derivative(v)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_product(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
        let mut out = Mat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let m = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(Mat::identity(2).matmul(&m).unwrap(), m);
        let r = Mat::from_rows(&[[1.0, 2.0]]).matmul(&Mat::from_rows(&[[3.0], [4.0]])).unwrap();
        assert_eq!(r, Mat::from_rows(&[[11.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mat::<f64>::random_uniform(5, 7, 1.0, &mut rng);
        let b = Mat::<f64>::random_uniform(7, 3, 1.0, &mut rng);
        let got = a.matmul(&b).unwrap();
        let want = naive_product(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-14);
        }
        let tn = a.transpose().matmul_tn(&b).unwrap();
        let nt = a.matmul_nt(&b.transpose()).unwrap();
        for ((x, y), w) in tn.data().iter().zip(nt.data()).zip(want.data()) {
            assert!((x - w).abs() < 1e-14 && (y - w).abs() < 1e-14);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Mat::<f64>::zeros(2, 3).matmul(&Mat::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(err, Error::Shape { left: (2, 3), right: (2, 3), .. }));
    }

    #[test]
    fn elementwise_identities() {
        let x = Mat::from_rows(&[[1.5, -2.0], [0.25, 9.0]]);
        assert_eq!(x.add(&Mat::zeros(2, 2)).unwrap(), x);
        assert_eq!(x.sub(&x).unwrap(), Mat::zeros(2, 2));
        let p = Mat::from_rows(&[[2.0, 3.0]]).hadamard(&Mat::from_rows(&[[4.0, 5.0]])).unwrap();
        assert_eq!(p, Mat::from_rows(&[[8.0, 15.0]]));
        assert!(x.add(&Mat::zeros(1, 4)).is_err());
    }

    #[test]
    fn norms_hand_values() {
        let z = Mat::<f64>::zeros(4, 1).norms();
        assert_eq!((z.l1, z.l2, z.dot_self), (0.0, 0.0, 0.0));
        let n = Mat::column(&[3.0, -4.0]).norms();
        assert_eq!((n.l1, n.l2, n.dot_self), (7.0, 5.0, 25.0));
    }

    fn kahan(values: impl Iterator<Item = f64>) -> f64 {
        let (mut sum, mut c) = (0.0f64, 0.0f64);
        for v in values {
            let y = v - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        sum
    }

    #[test]
    fn norms_match_compensated_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = Mat::<f64>::random_uniform(100, 1, 10.0, &mut rng);
        let n = v.norms();
        let l1 = kahan(v.data().iter().map(|x| x.abs()));
        let sq = kahan(v.data().iter().map(|x| x * x));
        assert!((n.l1 - l1).abs() <= 1e-12 * l1);
        assert!((n.dot_self - sq).abs() <= 1e-12 * sq);
        assert!((n.l2 - sq.sqrt()).abs() <= 1e-12 * sq.sqrt());
    }

    #[test]
    fn activation_values() {
        let z = Mat::column(&[-1.0, 0.0, 2.0]);
        assert_eq!(activation(&z, Activation::Relu, ActivationMode::Value).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(activation(&z, Activation::Relu, ActivationMode::Derivative).data(), &[0.0, 0.0, 1.0]);
        assert_eq!(Activation::Sigmoid.value(0.0f64), 0.5);
        assert_eq!(Activation::Sigmoid.derivative(0.0f64), 0.25);
    }

    #[test]
    fn tanh_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..200 {
            let z: f64 = rng.gen_range(-4.0..4.0);
            let fd = (Activation::Tanh.value(z + h) - Activation::Tanh.value(z - h)) / (2.0 * h);
            assert!((fd - Activation::Tanh.derivative(z)).abs() < 1e-7);
        }
    }

    #[test]
    fn every_activation_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-5;
        for kind in [Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Identity] {
            for _ in 0..1000 {
                let mut z: f64 = rng.gen_range(-6.0..6.0);
                if kind == Activation::Relu && z.abs() < 1e-3 {
                    z += 0.5;
                }
                let fd = (kind.value(z + h) - kind.value(z - h)) / (2.0 * h);
                assert!((fd - kind.derivative(z)).abs() < 1e-6, "{kind:?} at {z}");
            }
        }
    }

    #[test]
    fn single_precision_works() {
        let a = Mat::<f32>::from_rows(&[[1.0, 2.0]]);
        let b = Mat::<f32>::from_rows(&[[3.0], [4.0]]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0f32]);
    }

    fn arb_mat(r: usize, c: usize) -> impl Strategy<Value = Mat<f64>> {
        proptest::collection::vec(-3.0f64..3.0, r * c).prop_map(move |d| Mat::from_vec(r, c, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(a in arb_mat(3, 4), b in arb_mat(4, 5), c in arb_mat(5, 2)) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.norms().l2.max(1.0);
            let diff = left.sub(&right).unwrap().norms().l2;
            prop_assert!(diff <= 1e-10 * scale);
        }

        #[test]
        fn squared_l2_equals_dot_self(v in arb_mat(17, 1)) {
            let n = v.norms();
            prop_assert!((n.l2 * n.l2 - n.dot_self).abs() <= 1e-12 * n.dot_self.max(1e-300));
        }
    }
}
