use crate::error::{Error, Result};

/// A named trainable array with a gradient slot of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub requires_grad: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, value.len(), "parameter shape/value mismatch");
        Param {
            name: name.into(),
            shape,
            grad: vec![0.0; n],
            value,
            requires_grad: true,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![v; n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Row `i` of a 2D parameter.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_width();
        &self.value[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_width();
        &mut self.value[i * w..(i + 1) * w]
    }

    pub fn grad_row(&self, i: usize) -> &[f64] {
        let w = self.row_width();
        &self.grad[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn row_width(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

/// A batch of feature maps, `[batch, channels, d, h, w]` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub batch: usize,
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(batch: usize, channels: usize, dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let n = batch * channels * dims.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "feature map {batch}x{channels}x{dims:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(FeatureMap {
            batch,
            channels,
            dims,
            data,
        })
    }

    pub fn zeros(batch: usize, channels: usize, dims: [usize; 3]) -> Self {
        let n = batch * channels * dims.iter().product::<usize>();
        FeatureMap {
            batch,
            channels,
            dims,
            data: vec![0.0; n],
        }
    }

    /// Dense `[batch, features]` matrix.
    pub fn vectors(batch: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(batch, features, [1, 1, 1], data)
    }

    pub fn volume(&self) -> usize {
        self.dims.iter().product()
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.channels * self.volume()
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.sample_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Reinterprets the per-sample layout without moving data.
    pub fn reshaped(mut self, channels: usize, dims: [usize; 3]) -> Result<Self> {
        if channels * dims.iter().product::<usize>() != self.sample_len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {}x{:?} into {channels}x{dims:?}",
                self.channels, self.dims
            )));
        }
        self.channels = channels;
        self.dims = dims;
        Ok(self)
    }
}
