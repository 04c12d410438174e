//! Drag-ODE carcass deposition and the carcass detection process used to
//! generate ground truth for validation.
//!
//! Coordinates follow the turbine: `x` lies in the rotor plane, `y` is height
//! and `w` points downwind, normal to the rotor. Landing points are rotated by
//! the wind direction onto fixed ground axes.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Weibull};
use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::coverage::derive_seed;
use crate::error::{DwpError, Result};
use crate::geometry::PlotShape;

pub const G: f64 = 9.807;
/// Wind speeds below this produce no carcasses.
pub const CUT_IN: f64 = 3.5;
const MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurbineSpec {
    pub nacelle_height: f64,
    pub blade_length: f64,
    pub tip_speed_ratio: f64,
    /// Wind-shear exponent.
    pub hellman: f64,
    pub gravity: f64,
}

impl Default for TurbineSpec {
    fn default() -> Self {
        Self {
            nacelle_height: 80.0,
            blade_length: 45.0,
            tip_speed_ratio: 6.0,
            hellman: 0.22,
            gravity: G,
        }
    }
}

impl TurbineSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = [
            self.nacelle_height,
            self.blade_length,
            self.tip_speed_ratio,
            self.gravity,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite())
            && self.hellman >= 0.0
            && self.nacelle_height > self.blade_length;
        if ok {
            Ok(())
        } else {
            Err(DwpError::InvalidParameters(format!(
                "bad turbine spec {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarcassAero {
    pub terminal_velocity: f64,
}

impl CarcassAero {
    pub fn bat() -> Self {
        Self {
            terminal_velocity: 8.8,
        }
    }

    pub fn eagle() -> Self {
        Self {
            terminal_velocity: 25.0,
        }
    }

    /// Drag constant g / v_T².
    pub fn drag(&self, gravity: f64) -> f64 {
        gravity / (self.terminal_velocity * self.terminal_velocity)
    }
}

/// Wind speed at height `y` by the power law; heights at or below ground use 0.1 m.
pub fn wind_at_height(y: f64, w_n: f64, spec: &TurbineSpec) -> f64 {
    let y = if y > 0.0 { y } else { 0.1 };
    w_n * (y / spec.nacelle_height).powf(spec.hellman)
}

/// Weibull (shape, scale) with the given mean and standard deviation.
pub fn weibull_from_moments(mean: f64, sd: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0 && sd > 0.0) {
        return Err(DwpError::InvalidParameters(format!(
            "Weibull moments need mean, sd > 0 (got {mean}, {sd})"
        )));
    }
    let target = (sd / mean).powi(2);
    // Squared CV is decreasing in the shape.
    let cv2 = |k: f64| {
        let g1 = gamma(1.0 + 1.0 / k);
        gamma(1.0 + 2.0 / k) / (g1 * g1) - 1.0
    };
    let (mut lo, mut hi) = (0.05_f64, 100.0_f64);
    if !(cv2(hi) <= target && target <= cv2(lo)) {
        return Err(DwpError::InvalidParameters(format!(
            "no Weibull matches mean {mean}, sd {sd}"
        )));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if cv2(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-14 {
            break;
        }
    }
    let k = 0.5 * (lo + hi);
    Ok((k, mean / gamma(1.0 + 1.0 / k)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindRegime {
    Constant(f64),
    Weibull {
        mean: f64,
        sd: f64,
    },
    /// Unnormalised density 10^(−0.04(w − 7)² − 0.8) on [3.5, 20].
    Moderate,
}

impl WindRegime {
    pub fn low() -> Self {
        WindRegime::Weibull {
            mean: 5.32,
            sd: 2.78,
        }
    }

    pub fn high() -> Self {
        WindRegime::Weibull {
            mean: 9.18,
            sd: 2.1,
        }
    }

    pub fn moderate_density(w: f64) -> f64 {
        if (CUT_IN..=20.0).contains(&w) {
            10f64.powf(-0.04 * (w - 7.0).powi(2) - 0.8)
        } else {
            0.0
        }
    }

    /// A sampler that only returns speeds of at least the cut-in.
    pub fn sampler(&self) -> Result<WindSampler> {
        match *self {
            WindRegime::Constant(w) if w >= CUT_IN && w.is_finite() => Ok(WindSampler::Constant(w)),
            WindRegime::Constant(w) => Err(DwpError::InvalidParameters(format!(
                "constant wind {w} m/s is below the {CUT_IN} m/s cut-in"
            ))),
            WindRegime::Weibull { mean, sd } => {
                let (k, lambda) = weibull_from_moments(mean, sd)?;
                let d = Weibull::new(lambda, k)
                    .map_err(|e| DwpError::InvalidParameters(e.to_string()))?;
                Ok(WindSampler::Weibull(d))
            }
            WindRegime::Moderate => Ok(WindSampler::Moderate),
        }
    }
}

impl FromStr for WindRegime {
    type Err = DwpError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "low" => Ok(Self::low()),
            "high" => Ok(Self::high()),
            "moderate" => Ok(Self::Moderate),
            _ => {
                let v = t.strip_prefix("constant").unwrap_or(&t);
                let v = v.trim().trim_start_matches([':', '-', '_', '=']).trim();
                v.parse::<f64>()
                    .map(WindRegime::Constant)
                    .map_err(|_| DwpError::InvalidArgument(format!("unknown wind regime '{s}'")))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum WindSampler {
    Constant(f64),
    Weibull(Weibull<f64>),
    Moderate,
}

impl WindSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            WindSampler::Constant(w) => *w,
            WindSampler::Weibull(d) => loop {
                let w = d.sample(rng);
                if w >= CUT_IN {
                    return w;
                }
            },
            WindSampler::Moderate => {
                let top = 10f64.powf(-0.8);
                loop {
                    let w = rng.random_range(CUT_IN..20.0);
                    if rng.random::<f64>() * top <= WindRegime::moderate_density(w) {
                        return w;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlightMode {
    /// Carcass takes the blade velocity only.
    Zero,
    /// Adds the downwind part of an 8 m/s flight in a uniform direction.
    Variable,
}

pub const FLIGHT_SPEED: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrikeSampling {
    UniformRadius,
    UniformArea,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strike {
    /// Distance from the hub along the blade.
    pub radius: f64,
    /// Blade angle from horizontal; π/2 is straight up.
    pub azimuth: f64,
}

impl Strike {
    pub fn position(&self, spec: &TurbineSpec) -> [f64; 3] {
        [
            self.radius * self.azimuth.cos(),
            spec.nacelle_height + self.radius * self.azimuth.sin(),
            0.0,
        ]
    }
}

pub fn sample_strike<R: Rng + ?Sized>(
    spec: &TurbineSpec,
    how: StrikeSampling,
    rng: &mut R,
) -> Strike {
    let u: f64 = rng.random();
    let radius = match how {
        StrikeSampling::UniformRadius => u * spec.blade_length,
        StrikeSampling::UniformArea => u.sqrt() * spec.blade_length,
    };
    Strike {
        radius,
        azimuth: rng.random::<f64>() * 2.0 * PI,
    }
}

/// Blade velocity at the strike plus, in variable mode, the downwind
/// component of a flight at `flight_angle`.
pub fn initial_velocity(
    strike: &Strike,
    w_n: f64,
    spec: &TurbineSpec,
    mode: FlightMode,
    flight_angle: f64,
) -> [f64; 3] {
    let omega = spec.tip_speed_ratio * w_n / spec.blade_length;
    let speed = omega * strike.radius;
    let (s, c) = strike.azimuth.sin_cos();
    let w = match mode {
        FlightMode::Zero => 0.0,
        FlightMode::Variable => FLIGHT_SPEED * flight_angle.sin(),
    };
    [-speed * s, speed * c, w]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landing {
    /// In-plane coordinate.
    pub x: f64,
    /// Downwind coordinate.
    pub w: f64,
    pub time: f64,
}

impl Landing {
    pub fn distance(&self) -> f64 {
        self.x.hypot(self.w)
    }

    /// Ground coordinates for wind blowing toward angle `phi`.
    pub fn on_ground(&self, phi: f64) -> (f64, f64) {
        let (s, c) = phi.sin_cos();
        (self.w * c - self.x * s, self.w * s + self.x * c)
    }
}

/// Explicit Euler integration of the drag ODE until the carcass reaches the
/// ground, interpolating the crossing.
pub fn integrate_trajectory(
    s0: [f64; 3],
    v0: [f64; 3],
    aero: &CarcassAero,
    w_n: f64,
    spec: &TurbineSpec,
    dt: f64,
) -> Result<Landing> {
    if !(s0[1] > 0.0) {
        return Err(DwpError::InvalidArgument(format!(
            "release height must be positive, got {}",
            s0[1]
        )));
    }
    if !(dt > 0.0) {
        return Err(DwpError::InvalidArgument("dt must be positive".into()));
    }
    let k = aero.drag(spec.gravity);
    let (mut s, mut v) = (s0, v0);
    for step in 0..MAX_STEPS {
        let wind = wind_at_height(s[1], w_n, spec);
        let rel = [v[0], v[1], v[2] - wind];
        let speed = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
        let a = [
            -k * rel[0] * speed,
            -k * rel[1] * speed - spec.gravity,
            -k * rel[2] * speed,
        ];
        let next = [s[0] + dt * v[0], s[1] + dt * v[1], s[2] + dt * v[2]];
        if next[1] <= 0.0 {
            let f = s[1] / (s[1] - next[1]);
            return Ok(Landing {
                x: s[0] + f * (next[0] - s[0]),
                w: s[2] + f * (next[2] - s[2]),
                time: (step as f64 + f) * dt,
            });
        }
        s = next;
        v = [v[0] + dt * a[0], v[1] + dt * a[1], v[2] + dt * a[2]];
    }
    Err(DwpError::Simulation(format!(
        "carcass still airborne after {MAX_STEPS} steps"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SearchPlot {
    Cleared {
        radius: f64,
    },
    RoadPad {
        radius: f64,
        padrad: f64,
        roadwidth: f64,
        n_road: u32,
    },
}

impl SearchPlot {
    /// Pad 15 m with two perpendicular 5 m roads.
    pub fn road_pad(radius: f64) -> Self {
        SearchPlot::RoadPad {
            radius,
            padrad: 15.0,
            roadwidth: 5.0,
            n_road: 2,
        }
    }

    pub fn radius(&self) -> f64 {
        match *self {
            SearchPlot::Cleared { radius } | SearchPlot::RoadPad { radius, .. } => radius,
        }
    }

    pub fn shape(&self) -> PlotShape {
        match *self {
            SearchPlot::Cleared { .. } => PlotShape::Circular,
            SearchPlot::RoadPad {
                padrad,
                roadwidth,
                n_road,
                ..
            } => PlotShape::RoadPad {
                padrad,
                roadwidth,
                n_road,
            },
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.shape().contains(x, y, self.radius())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    Bat,
    Eagle,
}

impl Species {
    pub fn aero(self) -> CarcassAero {
        match self {
            Species::Bat => CarcassAero::bat(),
            Species::Eagle => CarcassAero::eagle(),
        }
    }
}

impl FromStr for Species {
    type Err = DwpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bat" | "bats" => Ok(Species::Bat),
            "eagle" | "eagles" => Ok(Species::Eagle),
            _ => Err(DwpError::InvalidArgument(format!("unknown species '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallisticsScenario {
    pub species: Species,
    pub aero: CarcassAero,
    pub wind: WindRegime,
    pub flight: FlightMode,
    pub plot: SearchPlot,
    pub strike: StrikeSampling,
    pub spec: TurbineSpec,
    pub replicates: usize,
    pub carcasses: usize,
    /// Replicates with fewer found carcasses are skipped.
    pub min_found: usize,
    /// Landings used for the Monte Carlo value of the true ψ.
    pub oracle_size: usize,
    pub dt: f64,
}

impl BallisticsScenario {
    pub fn new(species: Species, wind: WindRegime, flight: FlightMode, plot: SearchPlot) -> Self {
        Self {
            species,
            aero: species.aero(),
            wind,
            flight,
            plot,
            strike: StrikeSampling::UniformRadius,
            spec: TurbineSpec::default(),
            replicates: 100,
            carcasses: 200,
            min_found: 5,
            oracle_size: 1_000_000,
            dt: 0.01,
        }
    }

    /// Parse `key = value` lines; `#` starts a comment. Keys: species, wind,
    /// flight_mode, plot (cleared|roadpad), radius, replicates, carcasses,
    /// min_found, oracle_size, strike (radius|area), dt, padrad, roadwidth,
    /// n_road, hellman.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut species = Species::Bat;
        let mut wind = WindRegime::Constant(8.0);
        let mut flight = FlightMode::Zero;
        let mut plot_kind = String::from("cleared");
        let mut radius = 100.0;
        let (mut padrad, mut roadwidth, mut n_road) = (15.0, 5.0, 2u32);
        let mut out = Self::new(species, wind, flight, SearchPlot::Cleared { radius });
        let bad =
            |k: &str, v: &str| DwpError::InvalidArgument(format!("bad value '{v}' for '{k}'"));
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| {
                    DwpError::InvalidArgument(format!("line {}: expected key = value", i + 1))
                })?;
            let (k, v) = (k.trim().to_ascii_lowercase(), v.trim());
            let num = || v.parse::<f64>().map_err(|_| bad(&k, v));
            let count = || v.parse::<usize>().map_err(|_| bad(&k, v));
            match k.as_str() {
                "species" => species = v.parse()?,
                "wind" => wind = v.parse()?,
                "flight_mode" | "flight" => {
                    flight = match v.to_ascii_lowercase().as_str() {
                        "zero" | "constant" => FlightMode::Zero,
                        "variable" => FlightMode::Variable,
                        _ => return Err(bad(&k, v)),
                    }
                }
                "plot" => plot_kind = v.to_ascii_lowercase(),
                "radius" => radius = num()?,
                "padrad" => padrad = num()?,
                "roadwidth" => roadwidth = num()?,
                "n_road" => n_road = v.parse().map_err(|_| bad(&k, v))?,
                "replicates" => out.replicates = count()?,
                "carcasses" => out.carcasses = count()?,
                "min_found" => out.min_found = count()?,
                "oracle_size" => out.oracle_size = count()?,
                "dt" => out.dt = num()?,
                "hellman" => out.spec.hellman = num()?,
                "strike" => {
                    out.strike = match v.to_ascii_lowercase().as_str() {
                        "radius" => StrikeSampling::UniformRadius,
                        "area" => StrikeSampling::UniformArea,
                        _ => return Err(bad(&k, v)),
                    }
                }
                "seed" => {}
                _ => return Err(DwpError::InvalidArgument(format!("unknown key '{k}'"))),
            }
        }
        out.species = species;
        out.aero = species.aero();
        out.wind = wind;
        out.flight = flight;
        out.plot = match plot_kind.as_str() {
            "cleared" | "circular" => SearchPlot::Cleared { radius },
            "roadpad" | "rp" | "road_pad" => SearchPlot::RoadPad {
                radius,
                padrad,
                roadwidth,
                n_road,
            },
            other => return Err(bad("plot", other)),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.aero.terminal_velocity > 0.0) {
            return Err(DwpError::InvalidParameters(
                "terminal velocity must be positive".into(),
            ));
        }
        if !(self.plot.radius() > 0.0 && self.dt > 0.0) {
            return Err(DwpError::InvalidParameters(
                "radius and dt must be positive".into(),
            ));
        }
        if self.carcasses == 0 || self.oracle_size == 0 {
            return Err(DwpError::InvalidParameters(
                "carcasses and oracle_size must be positive".into(),
            ));
        }
        self.wind.sampler().map(|_| ())
    }

    /// One carcass: ground coordinates (relative to the turbine) and landing.
    pub fn drop_one<R: Rng + ?Sized>(&self, wind: &WindSampler, rng: &mut R) -> Result<(f64, f64)> {
        let w_n = wind.sample(rng);
        let strike = sample_strike(&self.spec, self.strike, rng);
        let flight_angle = rng.random::<f64>() * 2.0 * PI;
        let phi = rng.random::<f64>() * 2.0 * PI;
        let v0 = initial_velocity(&strike, w_n, &self.spec, self.flight, flight_angle);
        let land = integrate_trajectory(
            strike.position(&self.spec),
            v0,
            &self.aero,
            w_n,
            &self.spec,
            self.dt,
        )?;
        Ok(land.on_ground(phi))
    }

    /// `n` landings from a seeded stream, in parallel chunks.
    pub fn landings(&self, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
        const CHUNK: usize = 4096;
        let wind = self.wind.sampler()?;
        let chunks: Vec<Result<Vec<(f64, f64)>>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, c as u64));
                let len = CHUNK.min(n - c * CHUNK);
                (0..len).map(|_| self.drop_one(&wind, &mut rng)).collect()
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub index: usize,
    pub points: Vec<(f64, f64)>,
    pub found: Vec<bool>,
    pub skipped: bool,
}

impl Replicate {
    pub fn found_count(&self) -> usize {
        self.found.iter().filter(|f| **f).count()
    }

    pub fn found_distances(&self) -> Vec<f64> {
        self.points
            .iter()
            .zip(&self.found)
            .filter(|(_, f)| **f)
            .map(|(p, _)| p.0.hypot(p.1))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub replicates: Vec<Replicate>,
    pub true_psi: f64,
}

impl ScenarioResult {
    pub fn n_skipped(&self) -> usize {
        self.replicates.iter().filter(|r| r.skipped).count()
    }
}

pub fn run_scenario(scn: &BallisticsScenario, seed: u64) -> Result<ScenarioResult> {
    scn.validate()?;
    let oracle = scn.landings(scn.oracle_size, derive_seed(seed, 1, 0))?;
    let inside = oracle
        .iter()
        .filter(|p| scn.plot.contains(p.0, p.1))
        .count();
    let true_psi = inside as f64 / oracle.len() as f64;
    let replicates = (0..scn.replicates)
        .into_par_iter()
        .map(|i| {
            let points = scn.landings(scn.carcasses, derive_seed(seed, 2, i as u64))?;
            let found: Vec<bool> = points.iter().map(|p| scn.plot.contains(p.0, p.1)).collect();
            let n = found.iter().filter(|f| **f).count();
            Ok(Replicate {
                index: i,
                points,
                found,
                skipped: n < scn.min_found,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioResult {
        replicates,
        true_psi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionParams {
    pub search_interval: f64,
    pub season: f64,
    /// Weibull persistence shape and scale (days).
    pub persistence_shape: f64,
    pub persistence_scale: f64,
    /// Searcher efficiency on the first search after arrival.
    pub se_first: f64,
    /// Multiplier applied to searcher efficiency on each later search.
    pub se_decay: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            search_interval: 5.0,
            season: 150.0,
            persistence_shape: 0.64,
            persistence_scale: 1.705,
            se_first: 0.8,
            se_decay: 0.75,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.search_interval > 0.0
            && self.season > 0.0
            && self.persistence_shape > 0.0
            && self.persistence_scale > 0.0
            && (0.0..=1.0).contains(&self.se_first)
            && (0.0..=1.0).contains(&self.se_decay);
        if ok {
            Ok(())
        } else {
            Err(DwpError::InvalidParameters(format!(
                "bad detection parameters {self:?}"
            )))
        }
    }

    pub fn persistence_survival(&self, t: f64) -> f64 {
        (-(t / self.persistence_scale).powf(self.persistence_shape)).exp()
    }
}

/// Whether each of `n` carcasses in searched ground is ever found. Arrivals
/// are uniform over the season and searches run at every interval up to it.
pub fn simulate_detection_process<R: Rng + ?Sized>(
    n: usize,
    params: &DetectionParams,
    rng: &mut R,
) -> Result<Vec<bool>> {
    params.validate()?;
    let persist = Weibull::new(params.persistence_scale, params.persistence_shape)
        .map_err(|e| DwpError::InvalidParameters(e.to_string()))?;
    let n_search = (params.season / params.search_interval + 1e-9).floor() as usize;
    Ok((0..n)
        .map(|_| {
            let arrival = rng.random::<f64>() * params.season;
            let removal = arrival + persist.sample(rng);
            let first = (arrival / params.search_interval).floor() as usize + 1;
            let mut p = params.se_first;
            for s in first..=n_search {
                let t = s as f64 * params.search_interval;
                if t > removal {
                    break;
                }
                if rng.random::<f64>() < p {
                    return true;
                }
                p *= params.se_decay;
            }
            false
        })
        .collect())
}
