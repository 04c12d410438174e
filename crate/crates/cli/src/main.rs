use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dwp_core::DwpError;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "dwp",
    version,
    about = "Density-weighted proportion of carcasses in searched areas"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a ring (or grid) profile bundle from a layout and carcasses.
    Prep(PrepArgs),
    /// Fit distance models, filter them and write the score table.
    Fit(FitArgs),
    /// Re-run the model filter on saved fits.
    Filter(FilterArgs),
    /// Simulate ψ draws for the selected or a forced model.
    Psi(PsiArgs),
    /// Simulate dwp draws from ψ draws and carcass counts.
    Dwp(DwpArgs),
    /// Write dwp in the GenEst column format.
    Export(ExportArgs),
    /// Run a ballistics scenario, optionally fitting every replicate.
    Simulate(SimulateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayoutType {
    /// Carcass distances with circular plots of radius --srad.
    Distance,
    /// turbine, radius, shape, padrad, roadwidth, n_road.
    Simple,
    /// Polygon vertex table.
    Polygon,
    /// GeoJSON FeatureCollection of polygons.
    Geojson,
    /// Searched cells with carcass counts.
    Grid,
}

#[derive(Args, Debug)]
pub struct PrepArgs {
    #[arg(long, value_enum)]
    pub layout_type: LayoutType,
    /// Layout file; for distance layouts an optional list of turbines.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Carcass table (turbine and r, or turbine, x and y).
    #[arg(long)]
    pub carcasses: Option<PathBuf>,
    #[arg(long)]
    pub srad: Option<f64>,
    /// Search-class column (polygon tables) or property (GeoJSON).
    #[arg(long)]
    pub sc_var: Option<String>,
    /// Comma-separated search classes that were not searched.
    #[arg(long, value_delimiter = ',')]
    pub not_searched: Vec<String>,
    /// Carcass-class column; writes one bundle per class.
    #[arg(long)]
    pub cc_col: Option<String>,
    /// Grid cell size in metres (inferred when absent).
    #[arg(long)]
    pub cell_size: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ThresholdArgs {
    #[arg(long, default_value_t = 0.01)]
    pub rtail_200: f64,
    #[arg(long, default_value_t = 0.05)]
    pub rtail_150: f64,
    #[arg(long, default_value_t = 0.5)]
    pub ltail_20: f64,
    #[arg(long, default_value_t = 0.9)]
    pub ltail_50: f64,
    #[arg(long, default_value_t = 10.0)]
    pub aicc_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub hin_delta: f64,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Profile bundle directory written by prep.
    #[arg(long)]
    pub profile: PathBuf,
    /// Comma-separated forms; "standard" and "all" expand.
    #[arg(long, default_value = "standard")]
    pub models: String,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    pub profile: PathBuf,
    /// fits.json written by fit.
    #[arg(long)]
    pub fits: PathBuf,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PsiArgs {
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub fits: PathBuf,
    /// Use this model instead of the filter's selection.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 10000)]
    pub nsim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DwpArgs {
    #[arg(long)]
    pub profile: PathBuf,
    /// psi.csv written by psi.
    #[arg(long)]
    pub psi: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportMode {
    Point,
    Simulated,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// dwp.csv, or CLASS=path once per carcass class.
    #[arg(long, required = true)]
    pub dwp: Vec<String>,
    #[arg(long, value_enum, default_value = "simulated")]
    pub mode: ExportMode,
    #[arg(long, default_value_t = 3)]
    pub digits: usize,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario file of key = value lines.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Fit every replicate and compare ψ̂ with the true ψ.
    #[arg(long)]
    pub fit: bool,
    #[arg(long, default_value = "standard")]
    pub models: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<DwpError>() {
        Some(
            DwpError::Schema { .. }
            | DwpError::InvalidLayout(_)
            | DwpError::InvalidCarcass { .. }
            | DwpError::Csv(_)
            | DwpError::Json(_)
            | DwpError::Io(_),
        ) => 2,
        Some(DwpError::NoViableModel(_)) => 3,
        Some(DwpError::NotExtensible(_)) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Prep(a) => commands::prep(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Filter(a) => commands::filter(&a),
        Command::Psi(a) => commands::psi(&a),
        Command::Dwp(a) => commands::dwp(&a),
        Command::Export(a) => commands::export(&a),
        Command::Simulate(a) => commands::simulate(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
