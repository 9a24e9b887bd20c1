//! Invertible affine coupling layers.
//!
//! A layer splits its input `h` into an identity half `h1` and a transformed
//! half `h2`:
//!
//! ```text
//! z1 = h1
//! z2 = h2 * exp(s~(h1)) + t(h1),     s~(x) = clamp * tanh(s(x) / clamp)
//! ```
//!
//! and inverts as `h2 = (z2 - t(z1)) * exp(-s~(z1))`. The parity flag picks
//! which half passes through; stacks alternate it so every coordinate gets
//! transformed once the depth reaches two.

use super::dense::{Activation, Mlp, MlpCache, MlpGrads};
use super::ParamSet;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Prng};

pub const DEFAULT_CLAMP: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    dim: usize,
    /// `false`: first half is the identity part; `true`: second half is.
    pub parity: bool,
    pub s_net: Mlp,
    pub t_net: Mlp,
    /// Bound on the scale exponent. `None` disables clamping.
    pub clamp: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CouplingCache {
    dim: usize,
    h_tr: Matrix,
    s_cache: MlpCache,
    t_cache: MlpCache,
    s_raw: Matrix,
    /// exp(s~), reused by the backward pass.
    scale: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingGrads {
    pub s_net: MlpGrads,
    pub t_net: MlpGrads,
}

impl CouplingLayer {
    /// Conditioner nets `half -> hidden (tanh) -> half` with zeroed output
    /// layers, so a fresh layer is the identity map.
    pub fn new(
        dim: usize,
        parity: bool,
        hidden: usize,
        clamp: Option<f64>,
        prng: &mut Prng,
    ) -> Result<Self> {
        let mut layer = Self::random(dim, parity, hidden, clamp, prng)?;
        layer.s_net.zero_output_layer();
        layer.t_net.zero_output_layer();
        Ok(layer)
    }

    /// Same architecture with every layer drawn from N(0, 1/fan_in).
    pub fn random(
        dim: usize,
        parity: bool,
        hidden: usize,
        clamp: Option<f64>,
        prng: &mut Prng,
    ) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::OddWidth(dim));
        }
        if let Some(c) = clamp {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clamp must be positive, got {c}")));
            }
        }
        let half = dim / 2;
        let dims = [half, hidden, half];
        let s_net = Mlp::new(&dims, Activation::Tanh, Activation::Identity, prng);
        let t_net = Mlp::new(&dims, Activation::Tanh, Activation::Identity, prng);
        Ok(Self {
            dim,
            parity,
            s_net,
            t_net,
            clamp,
        })
    }

    /// Builds a layer from explicit conditioner networks.
    pub fn from_parts(
        dim: usize,
        parity: bool,
        s_net: Mlp,
        t_net: Mlp,
        clamp: Option<f64>,
    ) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::OddWidth(dim));
        }
        let half = dim / 2;
        for net in [&s_net, &t_net] {
            if net.input_dim() != half || net.output_dim() != half {
                return Err(Error::DimMismatch {
                    op: "CouplingLayer::from_parts",
                    left: (half, half),
                    right: (net.input_dim(), net.output_dim()),
                });
            }
        }
        Ok(Self {
            dim,
            parity,
            s_net,
            t_net,
            clamp,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Column offsets of the (identity, transformed) halves.
    fn offsets(&self) -> (usize, usize) {
        let half = self.dim / 2;
        if self.parity {
            (half, 0)
        } else {
            (0, half)
        }
    }

    fn split(&self, m: &Matrix) -> (Matrix, Matrix) {
        let half = self.dim / 2;
        let (id, tr) = self.offsets();
        (m.columns(id, id + half), m.columns(tr, tr + half))
    }

    fn join(&self, id_part: &Matrix, tr_part: &Matrix) -> Matrix {
        let (id, tr) = self.offsets();
        let mut out = Matrix::zeros(id_part.rows(), self.dim);
        out.set_columns(id, id_part);
        out.set_columns(tr, tr_part);
        out
    }

    fn check_width(&self, m: &Matrix, op: &'static str) -> Result<()> {
        if m.cols() % 2 != 0 {
            return Err(Error::OddWidth(m.cols()));
        }
        if m.cols() != self.dim {
            return Err(Error::DimMismatch {
                op,
                left: m.shape(),
                right: (m.rows(), self.dim),
            });
        }
        Ok(())
    }

    #[inline]
    fn effective_scale(&self, s: f64) -> f64 {
        match self.clamp {
            Some(c) => c * (s / c).tanh(),
            None => s,
        }
    }

    /// Derivative of the clamped exponent with respect to the raw one.
    #[inline]
    fn effective_scale_derivative(&self, s: f64) -> f64 {
        match self.clamp {
            Some(c) => {
                let t = (s / c).tanh();
                1.0 - t * t
            }
            None => 1.0,
        }
    }

    pub fn forward(&self, h: &Matrix) -> Result<(Matrix, CouplingCache)> {
        self.check_width(h, "coupling_forward")?;
        let (h_id, h_tr) = self.split(h);
        let (s_raw, s_cache) = self.s_net.forward(&h_id)?;
        let (t, t_cache) = self.t_net.forward(&h_id)?;
        let scale = s_raw.map(|s| self.effective_scale(s).exp());
        let mut z_tr = h_tr.zip_map(&scale, |x, e| x * e)?;
        z_tr.add_assign(&t)?;
        let z = self.join(&h_id, &z_tr);
        Ok((
            z,
            CouplingCache {
                dim: self.dim,
                h_tr,
                s_cache,
                t_cache,
                s_raw,
                scale,
            },
        ))
    }

    pub fn inverse(&self, z: &Matrix) -> Result<Matrix> {
        self.check_width(z, "coupling_inverse")?;
        let (z_id, z_tr) = self.split(z);
        let s_raw = self.s_net.apply(&z_id)?;
        let t = self.t_net.apply(&z_id)?;
        let inv_scale = s_raw.map(|s| (-self.effective_scale(s)).exp());
        let h_tr = z_tr.sub(&t)?.zip_map(&inv_scale, |d, e| d * e)?;
        Ok(self.join(&z_id, &h_tr))
    }

    pub fn backward(
        &self,
        cache: &CouplingCache,
        upstream: &Matrix,
    ) -> Result<(Matrix, CouplingGrads)> {
        if cache.dim != self.dim || upstream.shape() != (cache.h_tr.rows(), self.dim) {
            return Err(Error::CacheMismatch {
                op: "coupling_backward",
                detail: format!(
                    "cache width {} rows {}, layer width {}, upstream {:?}",
                    cache.dim,
                    cache.h_tr.rows(),
                    self.dim,
                    upstream.shape()
                ),
            });
        }
        let (g_id, g_tr) = self.split(upstream);
        let g_h_tr = g_tr.zip_map(&cache.scale, |g, e| g * e)?;
        // d/ds of h2 * exp(s~(s)) + t
        let mut g_s = Matrix::zeros(g_tr.rows(), g_tr.cols());
        for i in 0..g_tr.rows() {
            for j in 0..g_tr.cols() {
                g_s[(i, j)] = g_tr[(i, j)]
                    * cache.h_tr[(i, j)]
                    * cache.scale[(i, j)]
                    * self.effective_scale_derivative(cache.s_raw[(i, j)]);
            }
        }
        let (g_from_s, s_grads) = self.s_net.backward(&cache.s_cache, &g_s)?;
        let (g_from_t, t_grads) = self.t_net.backward(&cache.t_cache, &g_tr)?;
        let mut g_h_id = g_id;
        g_h_id.add_assign(&g_from_s)?;
        g_h_id.add_assign(&g_from_t)?;
        Ok((
            self.join(&g_h_id, &g_h_tr),
            CouplingGrads {
                s_net: s_grads,
                t_net: t_grads,
            },
        ))
    }
}

/// Ordered coupling layers with alternating parity.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingStack {
    dim: usize,
    pub layers: Vec<CouplingLayer>,
}

#[derive(Debug, Clone)]
pub struct StackCache {
    caches: Vec<CouplingCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackGrads {
    pub layers: Vec<CouplingGrads>,
}

impl CouplingStack {
    /// Identity-initialised stack of `depth` layers, parity alternating from
    /// `false`.
    pub fn new(
        dim: usize,
        depth: usize,
        hidden: usize,
        clamp: Option<f64>,
        prng: &mut Prng,
    ) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::OddWidth(dim));
        }
        let layers = (0..depth)
            .map(|k| CouplingLayer::new(dim, k % 2 == 1, hidden, clamp, prng))
            .collect::<Result<_>>()?;
        Ok(Self { dim, layers })
    }

    /// Fully random stack; used by diagnostics and verification, where an
    /// identity map would make every check trivial.
    pub fn random(
        dim: usize,
        depth: usize,
        hidden: usize,
        clamp: Option<f64>,
        prng: &mut Prng,
    ) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::OddWidth(dim));
        }
        let layers = (0..depth)
            .map(|k| CouplingLayer::random(dim, k % 2 == 1, hidden, clamp, prng))
            .collect::<Result<_>>()?;
        Ok(Self { dim, layers })
    }

    pub fn from_layers(dim: usize, layers: Vec<CouplingLayer>) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::OddWidth(dim));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.dim() != dim {
                return Err(Error::DimMismatch {
                    op: "CouplingStack::from_layers",
                    left: (k, dim),
                    right: (k, l.dim()),
                });
            }
        }
        Ok(Self { dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn check_width(&self, m: &Matrix, op: &'static str) -> Result<()> {
        if m.cols() != self.dim {
            return Err(Error::DimMismatch {
                op,
                left: m.shape(),
                right: (m.rows(), self.dim),
            });
        }
        Ok(())
    }

    pub fn forward(&self, h: &Matrix) -> Result<(Matrix, StackCache)> {
        self.check_width(h, "stack_forward")?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = h.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward(&cur)?;
            caches.push(cache);
            cur = next;
        }
        Ok((cur, StackCache { caches }))
    }

    pub fn apply(&self, h: &Matrix) -> Result<Matrix> {
        Ok(self.forward(h)?.0)
    }

    pub fn inverse(&self, z: &Matrix) -> Result<Matrix> {
        self.check_width(z, "stack_inverse")?;
        let mut cur = z.clone();
        for layer in self.layers.iter().rev() {
            cur = layer.inverse(&cur)?;
        }
        Ok(cur)
    }

    pub fn backward(&self, cache: &StackCache, upstream: &Matrix) -> Result<(Matrix, StackGrads)> {
        if cache.caches.len() != self.layers.len() {
            return Err(Error::CacheMismatch {
                op: "stack_backward",
                detail: format!(
                    "cache depth {}, stack depth {}",
                    cache.caches.len(),
                    self.layers.len()
                ),
            });
        }
        self.check_width(upstream, "stack_backward")?;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (layer, c) in self.layers.iter().zip(&cache.caches).rev() {
            let (next, lg) = layer.backward(c, &g)?;
            grads.push(lg);
            g = next;
        }
        grads.reverse();
        Ok((g, StackGrads { layers: grads }))
    }
}

impl StackGrads {
    pub fn zeros_like(stack: &CouplingStack) -> Self {
        Self {
            layers: stack
                .layers
                .iter()
                .map(|l| CouplingGrads {
                    s_net: MlpGrads::zeros_like(&l.s_net),
                    t_net: MlpGrads::zeros_like(&l.t_net),
                })
                .collect(),
        }
    }
}

impl ParamSet for CouplingLayer {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        self.s_net.visit(f);
        self.t_net.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        self.s_net.visit_mut(f);
        self.t_net.visit_mut(f);
    }
}

impl ParamSet for CouplingGrads {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        self.s_net.visit(f);
        self.t_net.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        self.s_net.visit_mut(f);
        self.t_net.visit_mut(f);
    }
}

impl ParamSet for CouplingStack {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        self.layers.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        self.layers.visit_mut(f);
    }
}

impl ParamSet for StackGrads {
    fn visit(&self, f: &mut dyn FnMut((usize, usize), &[f64])) {
        self.layers.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut((usize, usize), &mut [f64])) {
        self.layers.visit_mut(f);
    }
}
