//! Density-weighted proportion (dwp) of carcasses in searched areas around
//! wind turbines: ring geometry, Poisson distance models, model filtering,
//! ψ and dwp estimation, and a ballistics simulator for ground truth.

pub mod ballistics;
pub mod coverage;
pub mod distribution;
pub mod error;
pub mod filter;
pub mod forms;
pub mod geometry;
pub mod glm;
pub mod io;
pub mod quad;
pub mod validation;

pub use ballistics::{
    BallisticsScenario, DetectionParams, FlightMode, SearchPlot, Species, WindRegime,
};
pub use coverage::{
    derive_seed, est_dwp, est_dwp_from, est_psi, est_psi_grid, export_genest, format_genest,
    format_genest_classes, posterior_m, DrawMatrix, DwpDraws, GenestMode, GenestTable, PosteriorM,
    PsiDraws,
};
pub use distribution::{DistStats, DistanceDistribution};
pub use error::{DwpError, Result};
pub use filter::{filter_models, fit_battery, ModelScore, ScoreTable, Thresholds};
pub use forms::{parse_model_list, ModelForm, STANDARD_FORMS, SUPPLEMENTARY_FORMS};
pub use geometry::{
    add_carcasses, add_carcasses_by_class, build_grid, build_rings_circular, build_rings_polygon,
    build_rings_simple, build_rings_simple_table, CarcassRecord, GridProfile, PlotShape,
    PolygonLayout, RingProfile, RingRow, SimpleGeometryRow,
};
pub use glm::{
    fit_rows, rows_from_grid, rows_from_rings, simulate_coefficients, FittedGLM, ObsRow,
};
