use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Prng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(x W^T + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Weights ~ N(0, 1/fan_in), zero bias.
    pub fn new(input: usize, output: usize, activation: Activation, prng: &mut Prng) -> Self {
        let std = (1.0 / input.max(1) as f64).sqrt();
        Self {
            weight: prng.gaussian(output, input).scale(std),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer inputs and pre-activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrads>,
}

impl Mlp {
    /// Dense stack through `dims`; `hidden` activation between layers, `output`
    /// on the last one.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, prng: &mut Prng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                DenseLayer::new(dims[k], dims[k + 1], act, prng)
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::DimMismatch {
                    op: "Mlp::from_layers",
                    left: w[0].weight.shape(),
                    right: w[1].weight.shape(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_dim)
    }

    /// Zeroes the last layer so the network outputs exactly zero.
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.as_mut_slice().fill(0.0);
            last.bias.fill(0.0);
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimMismatch {
                op: "mlp_forward",
                left: x.shape(),
                right: (self.input_dim(), self.output_dim()),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut p = cur.matmul_t(&layer.weight)?;
            p.add_row_vector(&layer.bias)?;
            let act = layer.activation;
            let next = p.map(|v| act.apply(v));
            inputs.push(cur);
            pre.push(p);
            cur = next;
        }
        Ok((cur, MlpCache { inputs, pre }))
    }

    /// Forward pass without recording a cache.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.0)
    }

    pub fn backward(&self, cache: &MlpCache, upstream: &Matrix) -> Result<(Matrix, MlpGrads)> {
        self.check_cache(cache, upstream)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            let dpre = if act == Activation::Identity {
                g
            } else {
                g.zip_map(&cache.pre[k], |gv, p| gv * act.derivative(p))?
            };
            let dw = dpre.t_matmul(&cache.inputs[k])?;
            let db = dpre.column_sums();
            g = dpre.matmul(&layer.weight)?;
            grads.push(DenseGrads {
                weight: dw,
                bias: db,
            });
        }
        grads.reverse();
        Ok((g, MlpGrads { layers: grads }))
    }

    fn check_cache(&self, cache: &MlpCache, upstream: &Matrix) -> Result<()> {
        let mismatch = |detail: String| Error::CacheMismatch {
            op: "mlp_backward",
            detail,
        };
        if cache.inputs.len() != self.layers.len() || cache.pre.len() != self.layers.len() {
            return Err(mismatch(format!(
                "cache has {} layers, network has {}",
                cache.pre.len(),
                self.layers.len()
            )));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if cache.inputs[k].cols() != layer.input_dim()
                || cache.pre[k].cols() != layer.output_dim()
            {
                return Err(mismatch(format!("layer {k} shape differs from cache")));
            }
        }
        let rows = cache.pre.last().map_or(0, Matrix::rows);
        if upstream.shape() != (rows, self.output_dim()) {
            return Err(mismatch(format!(
                "upstream {:?} vs cached output {:?}",
                upstream.shape(),
                (rows, self.output_dim())
            )));
        }
        Ok(())
    }
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| DenseGrads {
                    weight: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: vec![0.0; l.output_dim()],
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight).expect("gradient shapes");
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

impl ParamSet for Mlp {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        for l in &self.layers {
            f(l.weight.shape(), l.weight.as_slice());
            f((1, l.bias.len()), &l.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        for l in &mut self.layers {
            let s = l.weight.shape();
            f(s, l.weight.as_mut_slice());
            f((1, l.bias.len()), &mut l.bias);
        }
    }
}

impl ParamSet for MlpGrads {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        for l in &self.layers {
            f(l.weight.shape(), l.weight.as_slice());
            f((1, l.bias.len()), &l.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        for l in &mut self.layers {
            let s = l.weight.shape();
            f(s, l.weight.as_mut_slice());
            f((1, l.bias.len()), &mut l.bias);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_map() {
        let mlp = Mlp {
            layers: vec![DenseLayer::zeros(3, 2, Activation::Identity)],
        };
        let x = Prng::new(1).gaussian(4, 3);
        assert_eq!(mlp.apply(&x).unwrap(), Matrix::zeros(4, 2));
    }

    #[test]
    fn identity_layer_passes_input() {
        let mlp = Mlp {
            layers: vec![DenseLayer {
                weight: Matrix::identity(3),
                bias: vec![0.0; 3],
                activation: Activation::Identity,
            }],
        };
        let x = Prng::new(2).gaussian(5, 3);
        let (y, cache) = mlp.forward(&x).unwrap();
        assert_eq!(y, x);
        let up = Prng::new(3).gaussian(5, 3);
        let (gx, _) = mlp.backward(&cache, &up).unwrap();
        assert_eq!(gx, up);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut p = Prng::new(4);
        let mlp = Mlp::new(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut p);
        let x = p.gaussian(6, 3);
        let (_, cache) = mlp.forward(&x).unwrap();
        let (gx, grads) = mlp.backward(&cache, &Matrix::zeros(6, 2)).unwrap();
        assert_eq!(gx.max_abs(), 0.0);
        assert!(grads.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_width_checked() {
        let mut p = Prng::new(5);
        let mlp = Mlp::new(&[3, 2], Activation::Tanh, Activation::Identity, &mut p);
        assert!(matches!(
            mlp.forward(&Matrix::zeros(1, 4)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn mismatched_cache_rejected() {
        let mut p = Prng::new(6);
        let a = Mlp::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut p);
        let b = Mlp::new(&[3, 2], Activation::Tanh, Activation::Identity, &mut p);
        let (_, cache) = b.forward(&p.gaussian(2, 3)).unwrap();
        assert!(matches!(
            a.backward(&cache, &Matrix::zeros(2, 2)),
            Err(Error::CacheMismatch { .. })
        ));
        let (_, cache) = a.forward(&p.gaussian(2, 3)).unwrap();
        assert!(matches!(
            a.backward(&cache, &Matrix::zeros(3, 2)),
            Err(Error::CacheMismatch { .. })
        ));
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert_eq!(Activation::Relu.derivative(0.5), 1.0);
    }

    #[test]
    fn flat_round_trip() {
        let mut p = Prng::new(7);
        let mut mlp = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut p);
        let flat = mlp.to_flat();
        assert_eq!(flat.len(), 2 * 3 + 3 + 3 + 1);
        let doubled: Vec<f64> = flat.iter().map(|v| v * 2.0).collect();
        mlp.assign_flat(&doubled);
        assert_eq!(mlp.to_flat(), doubled);
        assert_eq!(mlp.shapes(), vec![(3, 2), (1, 3), (1, 3), (1, 1)]);
    }
}
