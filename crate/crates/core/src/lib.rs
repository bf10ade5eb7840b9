//! Stretched polymers in a random potential.

pub mod environment;
pub mod error;
pub mod exactenum;
pub mod harness;
pub mod lattice;
pub mod poly;
pub mod polymer;
pub mod renewal;
pub mod replica;
pub mod scalar;
pub mod stats;
pub mod transfer;

pub use error::{Error, Result};

pub type ConeSpecF64 = polymer::ConeSpec<f64>;
pub type ConeSpecF32 = polymer::ConeSpec<f32>;
pub type EnvironmentF64 = environment::Environment<f64>;
pub type EnvironmentF32 = environment::Environment<f32>;
pub type WeightTableF64 = exactenum::WeightTable<f64>;
pub type WeightTableF32 = exactenum::WeightTable<f32>;
pub type IrreducibleLawF64 = renewal::IrreducibleLaw<f64>;
pub type IrreducibleLawF32 = renewal::IrreducibleLaw<f32>;
pub type RenewalModelF64 = renewal::RenewalModel<f64>;
pub type DpRunF64 = transfer::DpRun<f64>;
pub type SitePolyF64 = poly::SitePoly<f64>;
pub type BasicPolysF64 = poly::BasicPolys<f64>;
