//! G-Nets with arcsine activations and their conversion into bit-packed
//! embedded hyperdimensional (EHD) networks.

pub mod activation;
pub mod bits;
pub mod data;
pub mod ehd;
pub mod error;
pub mod gnet;
pub mod io;
pub mod rng;
pub mod robust;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use activation::{asu, rasu, smooth_norm, tasu, ActivationKind};
pub use bits::{bip, sign_pack, signed_bitmat_vec, BitMatrix, BitVector};
pub use error::{Error, Result};
pub use gnet::{ArchSpec, ConvGeometry, ConvLayer, DenseLayer, GNetModel, HeadLayer, Layer, LayerSpec};
pub use rng::{gauss_matrix, rademacher_matrix, RngStream};
pub use scalar::Real;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type GNet64 = GNetModel<f64>;
pub type GNet32 = GNetModel<f32>;
