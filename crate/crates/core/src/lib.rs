//! Pseudospectral laboratory for `p`-evolution Cauchy problems
//! `D_t u + a_p(t) D^p u + Σ_j a_{p-j}(t, x) D^{p-j} u = f` on periodic grids,
//! with Gelfand-Shilov weighted norms, exponential-weight conjugation, wave
//! packet growth experiments and pseudodifferential symbol tools.
//!
//! Every numerical type is generic over [`scalar::Real`]; the aliases below fix
//! the scalar to `f64`, which is what the documented tolerances assume.

pub mod conjugation;
pub mod diff;
pub mod error;
pub mod expr;
pub mod grid;
pub mod illposedness;
pub mod jet;
pub mod operators;
pub mod psido;
pub mod scalar;
pub mod solver;
pub mod spaces;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Grid = grid::Grid<f64>;
pub type GridFunction = grid::GridFunction<f64>;
pub type Spectrum = grid::Spectrum<f64>;
pub type GridPolicy = grid::GridPolicy<f64>;
pub type PEvolutionOp = operators::PEvolutionOp<f64>;
pub type Trajectory = solver::Trajectory<f64>;
pub type EnergyTrace = solver::EnergyTrace<f64>;
pub type GSParams = spaces::GSParams<f64>;
pub type BumpFunction = illposedness::BumpFunction<f64>;
pub type GrowthConfig = illposedness::GrowthConfig<f64>;
pub type LocalizedEnergyRun = illposedness::LocalizedEnergyRun<f64>;
pub type Symbol = psido::Symbol<f64>;

pub type Grid32 = grid::Grid<f32>;
pub type GridFunction32 = grid::GridFunction<f32>;
