//! Dense layers and invertible affine couplings with analytic gradients.

pub mod checkpoint;
pub mod coupling;
pub mod dense;
mod params;

pub use coupling::{
    CouplingCache, CouplingGrads, CouplingLayer, CouplingStack, StackCache, StackGrads,
    DEFAULT_CLAMP,
};
pub use dense::{Activation, DenseGrads, DenseLayer, Mlp, MlpCache, MlpGrads};
pub use params::ParamSet;
