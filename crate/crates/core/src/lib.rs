//! Unbiased gradient compression: natural compression, natural and standard
//! dithering, random sparsification and their compositions, together with
//! bit-exact wire codecs, variance measurement, analytic bound and cost
//! calculators, a bidirectional-compression SGD simulator, and an
//! integer-only in-network aggregation service.

pub mod bounds;
pub mod codec;
pub mod dither;
pub mod error;
pub mod ina;
pub mod ops;
pub mod rng;
pub mod sgd;
pub mod spec;
pub mod variance;
pub mod vector;

pub use error::{Error, Result};
pub use ops::{compress, Compressor};
pub use rng::RngStream;
pub use spec::{CompressorSpec, NormKind, NormMode};
pub use vector::DenseVector;
