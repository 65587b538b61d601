//! Field simulators.

pub mod conditioned;
pub mod gaussian;
pub mod grid;
pub mod stable;

pub use conditioned::{conditioned_from_skeleton, conditioned_spec, ConditionedGaussianSpec};
pub use gaussian::{simulate_gaussian, CovarianceKind, GaussianFieldSpec, GaussianSimulator};
pub use grid::{FieldGrid, FieldKind, Provenance};
pub use stable::{
    draw_skeleton, gamma_alpha, simulate_concatenated, simulate_harmonisable, simulate_subgaussian,
    synthesize, SeriesSimulator, SeriesSkeleton, SubGaussianDraw, SubGaussianSimulator, WaveSynthesizer,
};
