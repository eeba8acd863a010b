//! Dense row-major float tensors plus the reverse-mode autodiff graph built
//! on top of them. `Tensor` itself is a plain value type; gradients live in
//! [`graph::Graph`] nodes, one per recorded operation.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
mod scalar;

pub use scalar::Scalar;

use crate::rng::Rng;

/// Dense n-dimensional array of floats, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Self {
        let numel: usize = shape.iter().product();
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor shape {shape:?} has a zero extent"
        );
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {shape:?} implies {numel} elements, got {}",
            data.len()
        );
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![S::ZERO; numel])
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![v; numel])
    }

    pub fn scalar(v: S) -> Self {
        Tensor::new(&[1], vec![v])
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| S::from_f64(rng.normal_f64() * std))
            .collect();
        Tensor::new(shape, data)
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Number of rows when viewed as a 2-d matrix (product of all leading
    /// dims); the last dim is the row width.
    pub fn rows(&self) -> usize {
        assert!(!self.shape.is_empty());
        self.numel() / self.shape[self.shape.len() - 1]
    }

    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.data.len(),
            "reshape to {shape:?} incompatible with {} elements",
            self.data.len()
        );
        self.shape = shape.to_vec();
        self
    }

    /// Element access by multi-index, for tests and small hand-written loops.
    pub fn at(&self, idx: &[usize]) -> S {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in idx.iter().zip(self.shape.iter()).enumerate() {
            assert!(ix < dim, "index {ix} out of range for dim {i} (extent {dim})");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise cast through f64.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            &self.shape,
            self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        )
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor::new(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_data_len() {
        let t = Tensor::<f32>::new(&[2, 3], vec![0.0; 6]);
        assert_eq!(t.numel(), 6);
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    #[should_panic(expected = "implies 6 elements, got 5")]
    fn mismatched_data_len_panics() {
        let _ = Tensor::<f32>::new(&[2, 3], vec![0.0; 5]);
    }

    #[test]
    fn at_uses_row_major_order() {
        let t = Tensor::<f64>::new(&[2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(t.at(&[0, 2]), 2.0);
        assert_eq!(t.at(&[1, 0]), 3.0);
    }

    #[test]
    fn randn_is_deterministic_per_seed() {
        let mut a = Rng::seed_from(9);
        let mut b = Rng::seed_from(9);
        let ta = Tensor::<f32>::randn(&[4, 4], 1.0, &mut a);
        let tb = Tensor::<f32>::randn(&[4, 4], 1.0, &mut b);
        assert_eq!(ta, tb);
    }
}
