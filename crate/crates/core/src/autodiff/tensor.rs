use super::AutodiffError;

/// Dense row-major tensor of rank 0, 1 or 2.
///
/// Rank-1 tensors of length `d` behave as `1 × d` row vectors in every
/// matrix operation; a rank-0 tensor is a `1 × 1` scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, AutodiffError> {
        if shape.len() > 2 || shape.iter().any(|&s| s == 0) {
            return Err(AutodiffError::InvalidShape { shape, len: values.len() });
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(AutodiffError::InvalidShape { shape, len: values.len() });
        }
        Ok(Self { shape, values, requires_grad: false, grad: Vec::new() })
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), values: vec![value], requires_grad: false, grad: Vec::new() }
    }

    pub fn vector(values: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], values)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AutodiffError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AutodiffError::Contract("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, AutodiffError> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    /// Marks the tensor as a trainable leaf and allocates a zeroed gradient.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = vec![0.0; self.values.len()];
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.values[row * c..(row + 1) * c]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.requires_grad.then_some(self.grad.as_slice())
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Adds `delta` into the gradient accumulator.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<(), AutodiffError> {
        if !self.requires_grad {
            return Err(AutodiffError::Contract("accumulating into a tensor without grad".into()));
        }
        if delta.len() != self.grad.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "accumulate_grad",
                left: self.shape.clone(),
                right: vec![delta.len()],
            });
        }
        for (g, d) in self.grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        if self.requires_grad {
            Some(self.grad.as_mut_slice())
        } else {
            None
        }
    }

    /// Transposed copy of a rank-2 tensor (rank-1 becomes a column).
    pub fn transposed(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.values[i * c + j];
            }
        }
        Tensor { shape: vec![c, r], values: out, requires_grad: false, grad: Vec::new() }
    }

    /// Plain (non-recorded) matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, AutodiffError> {
        if self.cols() != other.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let out = super::kernels::matmul(&self.values, &other.values, self.rows(), self.cols(), other.cols());
        Tensor::matrix(self.rows(), other.cols(), out)
    }
}
