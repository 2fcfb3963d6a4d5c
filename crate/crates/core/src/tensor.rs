//! Dense 4-D tensors and the matrix kernels behind every layer.
//!
//! Layout is row-major `(n, c, h, w)` with `w` fastest, so the innermost
//! spatial loop of a convolution walks contiguous memory. Tensors are
//! immutable values once built; all operations here are pure functions and
//! safe to call concurrently.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense 4-D array of scalars.
///
/// Matrices are represented as `(1, 1, rows, cols)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); len],
        }
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::BadDataLength {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(Self { shape, data })
    }

    /// Matrix constructor: shape `(1, 1, rows, cols)`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec([1, 1, rows, cols], data)
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline(always)]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(
            n < self.shape[0] && c < self.shape[1] && h < self.shape[2] && w < self.shape[3],
            "index ({n},{c},{h},{w}) out of bounds for {:?}",
            self.shape
        );
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.idx(n, c, h, w)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.idx(n, c, h, w);
        self.data[i] = v;
    }

    /// Reinterpret the same data under a new shape without copying.
    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if self.data.len() != expected {
            return Err(Error::BadDataLength {
                shape,
                len: self.data.len(),
                expected,
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Elementwise map. Shape-preserving, no error paths.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference, in f64.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Widen to the `f64` shadow representation.
    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v.as_f64()).collect(),
        }
    }
}

/// Matrix product `A[m x k] * B[k x n] -> [m x n]` on `(1,1,r,c)` tensors.
///
/// Summation over `k` runs left to right for every output element, so
/// results are bit-reproducible and independent of the kernel strategy.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [an, ac, m, ka] = a.shape();
    let [bn, bc, kb, n] = b.shape();
    if an != 1 || ac != 1 || bn != 1 || bc != 1 || ka != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros([1, 1, m, n]);
    gemm(a.data(), b.data(), out.data_mut(), m, ka, n);
    Ok(out)
}

/// `A[m x k] * B^T` where `B` is stored `[n x k]`. Both operands row-major.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [an, ac, m, ka] = a.shape();
    let [bn, bc, n, kb] = b.shape();
    if an != 1 || ac != 1 || bn != 1 || bc != 1 || ka != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros([1, 1, m, n]);
    gemm_nt(a.data(), b.data(), out.data_mut(), m, ka, n);
    Ok(out)
}

/// Accumulating kernel: `C += A[m x k] * B[k x n]`, all row-major slices.
///
/// The `i-k-j` ordering keeps the inner loop contiguous in both `B` and `C`
/// (autovectorizes well) while each `C[i][j]` still accumulates over `k` in
/// increasing order, matching the naive triple loop bit for bit. The `k`
/// loop is unrolled by 4 to cut traffic on the `C` row; the unrolled body
/// adds the four products left to right, so the per-element rounding
/// sequence is unchanged.
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n][..n];
        let mut kk = 0;
        while kk + 4 <= k {
            let (a0, a1, a2, a3) = (a_row[kk], a_row[kk + 1], a_row[kk + 2], a_row[kk + 3]);
            let b0 = &b[kk * n..(kk + 1) * n][..n];
            let b1 = &b[(kk + 1) * n..(kk + 2) * n][..n];
            let b2 = &b[(kk + 2) * n..(kk + 3) * n][..n];
            let b3 = &b[(kk + 3) * n..(kk + 4) * n][..n];
            for j in 0..n {
                c_row[j] = c_row[j] + a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            kk += 4;
        }
        while kk < k {
            let a_ik = a_row[kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + a_ik * bv;
            }
            kk += 1;
        }
    }
}

/// Accumulating kernel: `C += A[m x k] * B^T` with `B` stored `[n x k]`.
///
/// Each output is a dot product over contiguous rows of both operands,
/// evaluated with eight fixed-order partial sums so the loop vectorizes.
/// The lane split changes rounding relative to a strict sequential sum but
/// is fully deterministic.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    const LANES: usize = 8;
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut lanes = [T::zero(); LANES];
            let mut ac = a_row.chunks_exact(LANES);
            let mut bc = b_row.chunks_exact(LANES);
            for (av, bv) in (&mut ac).zip(&mut bc) {
                for l in 0..LANES {
                    lanes[l] = lanes[l] + av[l] * bv[l];
                }
            }
            let mut acc = T::zero();
            for &lane in &lanes {
                acc = acc + lane;
            }
            for (&av, &bv) in ac.remainder().iter().zip(bc.remainder()) {
                acc = acc + av * bv;
            }
            c_row[j] = c_row[j] + acc;
        }
    }
}

/// Accumulating kernel: `C += A^T * B` with `A` stored `[k x m]`, `B` `[k x n]`.
///
/// Used for weight gradients (`k` is the batch axis); the reduction over `k`
/// runs in fixed order so accumulation is deterministic.
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n][..n];
        let mut kk = 0;
        while kk + 4 <= k {
            let (a0, a1, a2, a3) = (
                a[kk * m + i],
                a[(kk + 1) * m + i],
                a[(kk + 2) * m + i],
                a[(kk + 3) * m + i],
            );
            let b0 = &b[kk * n..(kk + 1) * n][..n];
            let b1 = &b[(kk + 1) * n..(kk + 2) * n][..n];
            let b2 = &b[(kk + 2) * n..(kk + 3) * n][..n];
            let b3 = &b[(kk + 3) * n..(kk + 4) * n][..n];
            for j in 0..n {
                c_row[j] = c_row[j] + a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            kk += 4;
        }
        while kk < k {
            let a_ki = a[kk * m + i];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + a_ki * bv;
            }
            kk += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor<f64> {
        let data = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    /// Independent oracle: plain triple-nested-loop product.
    fn matmul_naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let [_, _, m, k] = a.shape();
        let [_, _, _, n] = b.shape();
        let mut out = Tensor::zeros([1, 1, m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.at(0, 0, i, p) * b.at(0, 0, p, j);
                }
                out.set(0, 0, i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::matrix(2, 2, vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap(), m);
    }

    #[test]
    fn matmul_annihilator() {
        let m = Tensor::matrix(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let zero = Tensor::zeros([1, 1, 2, 2]);
        assert_eq!(matmul(&m, &zero).unwrap(), zero);
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = SplitMix64::new(11);
        let a = random_matrix(5, 4, &mut rng);
        let b = random_matrix(4, 3, &mut rng);
        let got = matmul(&a, &b).unwrap();
        let want = matmul_naive(&a, &b);
        assert!(got.max_abs_diff(&want) < 1e-6);
    }

    #[test]
    fn matmul_dimension_mismatch_names_shapes() {
        let a = Tensor::<f32>::zeros([1, 1, 2, 3]);
        let b = Tensor::<f32>::zeros([1, 1, 4, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("[1, 1, 2, 3]") && msg.contains("[1, 1, 4, 2]"),
            "{msg}"
        );
    }

    #[test]
    fn matmul_nt_matches_explicit_transpose() {
        let mut rng = SplitMix64::new(5);
        let a = random_matrix(4, 6, &mut rng);
        let b = random_matrix(3, 6, &mut rng); // B^T is 6x3
        let mut bt = Tensor::zeros([1, 1, 6, 3]);
        for i in 0..3 {
            for j in 0..6 {
                bt.set(0, 0, j, i, b.at(0, 0, i, j));
            }
        }
        let got = matmul_nt(&a, &b).unwrap();
        let want = matmul_naive(&a, &bt);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn gemm_tn_matches_explicit_transpose() {
        let mut rng = SplitMix64::new(6);
        let a = random_matrix(5, 3, &mut rng); // A^T is 3x5
        let b = random_matrix(5, 4, &mut rng);
        let mut at = Tensor::zeros([1, 1, 3, 5]);
        for i in 0..5 {
            for j in 0..3 {
                at.set(0, 0, j, i, a.at(0, 0, i, j));
            }
        }
        let mut got = Tensor::zeros([1, 1, 3, 4]);
        gemm_tn(a.data(), b.data(), got.data_mut(), 3, 5, 4);
        let want = matmul_naive(&at, &b);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn map_identity_and_relu() {
        let t = Tensor::matrix(1, 2, vec![-1.0f32, 2.0]).unwrap();
        assert_eq!(t.map(|v| v), t);
        let relu = t.map(|v| v.max(0.0));
        assert_eq!(relu.data(), &[0.0, 2.0]);
    }

    #[test]
    fn map_sigmoid_stays_in_open_unit_interval() {
        // +-12 keeps f32 sigmoid away from rounding to the 0/1 boundary.
        let mut rng = SplitMix64::new(9);
        let data: Vec<f32> = (0..64).map(|_| rng.uniform(-12.0, 12.0) as f32).collect();
        let t = Tensor::from_vec([1, 1, 8, 8], data).unwrap();
        let s = t.map(crate::nn::layers::sigmoid_scalar);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor::from_vec([1, 1, 2, 2], vec![0.0f32; 3]).unwrap_err();
        assert!(matches!(err, Error::BadDataLength { .. }));
    }

    proptest! {
        #[test]
        fn matmul_associativity(seed in 0u64..1000, m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5) {
            let mut rng = SplitMix64::new(seed);
            let a = random_matrix(m, k, &mut rng);
            let b = random_matrix(k, n, &mut rng);
            let c = random_matrix(n, p, &mut rng);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (&l, &r) in left.data().iter().zip(right.data()) {
                let denom = l.abs().max(r.abs()).max(1.0);
                prop_assert!((l - r).abs() / denom < 1e-4);
            }
        }

        #[test]
        fn map_composition_is_exact(seed in 0u64..1000) {
            let mut rng = SplitMix64::new(seed);
            let data: Vec<f32> = (0..24).map(|_| rng.uniform(-2.0, 2.0) as f32).collect();
            let t = Tensor::from_vec([2, 3, 2, 2], data).unwrap();
            let f = |v: f32| v * 0.5 - 1.0;
            let g = |v: f32| v.max(0.0);
            prop_assert_eq!(t.map(f).map(g), t.map(|v| g(f(v))));
        }

        #[test]
        fn matmul_output_finite_for_finite_inputs(seed in 0u64..1000) {
            let mut rng = SplitMix64::new(seed);
            let a = random_matrix(3, 4, &mut rng);
            let b = random_matrix(4, 2, &mut rng);
            prop_assert!(matmul(&a, &b).unwrap().is_all_finite());
        }
    }
}
