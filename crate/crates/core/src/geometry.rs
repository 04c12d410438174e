//! Search-plot geometry reduced to 1 m rings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{DwpError, Result};

/// Area of the annulus between r − 1 and r.
pub fn annulus_area(r: u32) -> f64 {
    let r = r as f64;
    PI * (r * r - (r - 1.0) * (r - 1.0))
}

/// Ring index for a carcass at distance `d`: rings are (r − 1, r], with d = 0 in ring 1.
pub fn ring_of(d: f64) -> u32 {
    (d.ceil() as u32).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingRow {
    pub r: u32,
    pub class: Option<String>,
    pub exposure: f64,
    pub ncarc: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurbineRings {
    pub turbine: String,
    pub center: (f64, f64),
    /// Sorted by (r, class).
    pub rows: Vec<RingRow>,
    /// Searched proportion of ring `r` at index `r − 1`.
    pub pinc: Vec<f64>,
}

impl TurbineRings {
    pub fn ncarc(&self) -> u32 {
        self.rows.iter().map(|r| r.ncarc).sum()
    }

    /// (r, pinc) pairs.
    pub fn rpa(&self) -> Vec<(u32, f64)> {
        self.pinc
            .iter()
            .enumerate()
            .map(|(i, &p)| (i as u32 + 1, p))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingProfile {
    pub turbines: Vec<TurbineRings>,
    pub site: Vec<RingRow>,
    pub site_pinc: Vec<f64>,
    pub srad: u32,
    pub sc_var: Option<String>,
    pub not_searched: BTreeSet<String>,
}

impl RingProfile {
    /// Assemble a profile from per-turbine rings, padding every turbine to the
    /// common search radius and pooling the site.
    pub fn from_turbines(mut turbines: Vec<TurbineRings>, sc_var: Option<String>) -> Result<Self> {
        if turbines.is_empty() {
            return Err(DwpError::InvalidLayout("no turbines".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &turbines {
            if !seen.insert(t.turbine.clone()) {
                return Err(DwpError::InvalidLayout(format!(
                    "duplicate turbine id '{}'",
                    t.turbine
                )));
            }
        }
        let srad = turbines
            .iter()
            .map(|t| t.pinc.len() as u32)
            .max()
            .unwrap_or(0);
        if srad == 0 {
            return Err(DwpError::InvalidLayout("search radius is zero".into()));
        }
        let classes: BTreeSet<Option<String>> = turbines
            .iter()
            .flat_map(|t| t.rows.iter().map(|r| r.class.clone()))
            .collect();
        for t in &mut turbines {
            let have = t.pinc.len() as u32;
            t.pinc.resize(srad as usize, 0.0);
            for r in have + 1..=srad {
                for c in &classes {
                    t.rows.push(RingRow {
                        r,
                        class: c.clone(),
                        exposure: 0.0,
                        ncarc: 0,
                    });
                }
            }
            t.rows.sort_by(|a, b| (a.r, &a.class).cmp(&(b.r, &b.class)));
        }
        let (site, site_pinc) = pool_site(&turbines);
        Ok(Self {
            turbines,
            site,
            site_pinc,
            srad,
            sc_var,
            not_searched: BTreeSet::new(),
        })
    }

    pub fn turbine(&self, id: &str) -> Option<&TurbineRings> {
        self.turbines.iter().find(|t| t.turbine == id)
    }

    pub fn turbine_ids(&self) -> Vec<String> {
        self.turbines.iter().map(|t| t.turbine.clone()).collect()
    }

    pub fn ncarc(&self) -> Vec<u32> {
        self.turbines.iter().map(|t| t.ncarc()).collect()
    }

    pub fn site_ncarc(&self) -> u32 {
        self.site.iter().map(|r| r.ncarc).sum()
    }

    /// Search classes present, sorted; empty when unclassified.
    pub fn classes(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.site.iter().filter_map(|r| r.class.clone()).collect();
        set.into_iter().collect()
    }

    fn repool(&mut self) {
        let (site, pinc) = pool_site(&self.turbines);
        self.site = site;
        self.site_pinc = pinc;
    }
}

/// Sum exposures and counts over turbines per (r, class); site pinc weights
/// turbines equally.
pub fn pool_site(turbines: &[TurbineRings]) -> (Vec<RingRow>, Vec<f64>) {
    let mut acc: BTreeMap<(u32, Option<String>), (f64, u32)> = BTreeMap::new();
    let srad = turbines.iter().map(|t| t.pinc.len()).max().unwrap_or(0);
    for t in turbines {
        for row in &t.rows {
            let e = acc.entry((row.r, row.class.clone())).or_insert((0.0, 0));
            e.0 += row.exposure;
            e.1 += row.ncarc;
        }
    }
    let nt = turbines.len().max(1) as f64;
    let mut pinc = vec![0.0; srad];
    let rows: Vec<RingRow> = acc
        .into_iter()
        .map(|((r, class), (exposure, ncarc))| {
            if (r as usize) <= srad {
                pinc[r as usize - 1] += exposure / (nt * annulus_area(r));
            }
            RingRow {
                r,
                class,
                exposure,
                ncarc,
            }
        })
        .collect();
    for p in &mut pinc {
        *p = p.clamp(0.0, 1.0);
    }
    (rows, pinc)
}

fn rings_from_cumulative<A: Fn(f64) -> f64>(turbine: &str, srad: f64, covered: A) -> TurbineRings {
    let n = srad.ceil() as u32;
    let mut pinc = Vec::with_capacity(n as usize);
    let mut rows = Vec::with_capacity(n as usize);
    for r in 1..=n {
        let area = annulus_area(r);
        let exposure = (covered(r as f64) - covered(r as f64 - 1.0)).clamp(0.0, area);
        pinc.push(exposure / area);
        rows.push(RingRow {
            r,
            class: None,
            exposure,
            ncarc: 0,
        });
    }
    TurbineRings {
        turbine: turbine.to_string(),
        center: (0.0, 0.0),
        rows,
        pinc,
    }
}

/// Fully searched circle of radius `srad` around a single turbine `t1`.
pub fn build_rings_circular(srad: f64) -> Result<RingProfile> {
    build_rings_circular_for(srad, &["t1".to_string()])
}

/// Fully searched circles of radius `srad` around each named turbine.
pub fn build_rings_circular_for(srad: f64, turbines: &[String]) -> Result<RingProfile> {
    if !(srad > 0.0) || !srad.is_finite() {
        return Err(DwpError::InvalidLayout(format!(
            "search radius must be positive, got {srad}"
        )));
    }
    let shape = PlotShape::Circular;
    let rings = turbines
        .iter()
        .map(|t| rings_from_cumulative(t, srad, |rho| shape.covered_area(rho, srad)))
        .collect();
    RingProfile::from_turbines(rings, None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlotShape {
    Circular,
    /// Square with half-side equal to the radius.
    Square,
    /// Circular pad plus straight road strips radiating from the turbine.
    RoadPad {
        padrad: f64,
        roadwidth: f64,
        n_road: u32,
    },
}

impl PlotShape {
    /// Road azimuths: right angles for up to four roads, else evenly spaced.
    pub fn road_angles(n_road: u32) -> Vec<f64> {
        let step = if n_road <= 4 {
            PI / 2.0
        } else {
            2.0 * PI / n_road as f64
        };
        (0..n_road).map(|k| step * k as f64).collect()
    }

    /// Whether the point (x, y), relative to the turbine, is searched.
    pub fn contains(&self, x: f64, y: f64, radius: f64) -> bool {
        match *self {
            PlotShape::Circular => x * x + y * y <= radius * radius,
            PlotShape::Square => x.abs() <= radius && y.abs() <= radius,
            PlotShape::RoadPad {
                padrad,
                roadwidth,
                n_road,
            } => {
                let d2 = x * x + y * y;
                if d2 > radius * radius {
                    return false;
                }
                if d2 <= padrad * padrad {
                    return true;
                }
                Self::road_angles(n_road).into_iter().any(|a| {
                    let (s, c) = a.sin_cos();
                    let along = x * c + y * s;
                    let across = -x * s + y * c;
                    along >= 0.0 && across.abs() <= roadwidth / 2.0
                })
            }
        }
    }

    /// Searched area inside the disk of radius `rho`.
    pub fn covered_area(&self, rho: f64, radius: f64) -> f64 {
        let rho = rho.max(0.0);
        match *self {
            PlotShape::Circular => PI * rho.min(radius).powi(2),
            PlotShape::Square => square_disk_area(radius, rho),
            PlotShape::RoadPad {
                padrad,
                roadwidth,
                n_road,
            } => {
                let r = rho.min(radius);
                let p = padrad.min(radius);
                let pad = PI * r.min(p).powi(2);
                let road = |q: f64| half_strip_disk_area(roadwidth, q);
                pad + n_road as f64 * (road(r) - road(r.min(p))).max(0.0)
            }
        }
    }

    /// Whether `covered_area` is exact: roads must not overlap outside the pad.
    fn analytic(&self) -> bool {
        match *self {
            PlotShape::RoadPad {
                padrad,
                roadwidth,
                n_road,
            } if n_road >= 2 => {
                let angles = Self::road_angles(n_road);
                let min_sep = angles
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .chain(std::iter::once(2.0 * PI - angles[angles.len() - 1]))
                    .fold(f64::INFINITY, f64::min);
                let meet = if min_sep >= PI {
                    0.0
                } else {
                    (roadwidth / 2.0) / (min_sep / 2.0).sin()
                };
                padrad >= meet
            }
            _ => true,
        }
    }

    /// Outermost searched distance.
    pub fn extent(&self, radius: f64) -> f64 {
        match self {
            PlotShape::Square => radius * 2f64.sqrt(),
            _ => radius,
        }
    }
}

/// Area of the half-strip {x ≥ 0, |y| ≤ w/2} inside a disk of radius `rho`.
fn half_strip_disk_area(w: f64, rho: f64) -> f64 {
    let h = w / 2.0;
    if rho <= h {
        return PI * rho * rho / 2.0;
    }
    h * (rho * rho - h * h).sqrt() + rho * rho * (h / rho).asin()
}

/// Area of the square [−a, a]² inside a disk of radius `rho`.
fn square_disk_area(a: f64, rho: f64) -> f64 {
    if rho <= a {
        PI * rho * rho
    } else if rho * rho >= 2.0 * a * a {
        4.0 * a * a
    } else {
        let seg = rho * rho * (a / rho).acos() - a * (rho * rho - a * a).sqrt();
        PI * rho * rho - 4.0 * seg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleGeometryRow {
    pub turbine: String,
    pub radius: f64,
    pub shape: PlotShape,
}

impl SimpleGeometryRow {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(DwpError::InvalidLayout(format!(
                "turbine {}: radius must be positive",
                self.turbine
            )));
        }
        if let PlotShape::RoadPad {
            padrad,
            roadwidth,
            n_road,
        } = self.shape
        {
            if !(padrad > 0.0 && roadwidth > 0.0 && n_road > 0) {
                return Err(DwpError::InvalidLayout(format!(
                    "turbine {}: RP plots need positive padrad, roadwidth and n_road",
                    self.turbine
                )));
            }
        }
        Ok(())
    }

    fn rings(&self) -> TurbineRings {
        let extent = self.shape.extent(self.radius);
        if self.shape.analytic() {
            rings_from_cumulative(&self.turbine, extent, |rho| {
                self.shape.covered_area(rho, self.radius)
            })
        } else {
            let shape = self.shape;
            let radius = self.radius;
            let n = extent.ceil() as u32;
            let pinc: Vec<f64> = (1..=n)
                .into_par_iter()
                .map(|r| {
                    ring_quadrature(r, DEFAULT_ANGLES, DEFAULT_RADIAL, |x, y| {
                        shape.contains(x, y, radius).then_some(0)
                    })[0]
                })
                .collect();
            let rows = pinc
                .iter()
                .enumerate()
                .map(|(i, &p)| RingRow {
                    r: i as u32 + 1,
                    class: None,
                    exposure: p * annulus_area(i as u32 + 1),
                    ncarc: 0,
                })
                .collect();
            TurbineRings {
                turbine: self.turbine.clone(),
                center: (0.0, 0.0),
                rows,
                pinc,
            }
        }
    }
}

pub fn build_rings_simple(row: &SimpleGeometryRow) -> Result<RingProfile> {
    build_rings_simple_table(std::slice::from_ref(row))
}

pub fn build_rings_simple_table(rows: &[SimpleGeometryRow]) -> Result<RingProfile> {
    for r in rows {
        r.validate()?;
    }
    let rings = rows.iter().map(SimpleGeometryRow::rings).collect();
    RingProfile::from_turbines(rings, None)
}

pub const DEFAULT_ANGLES: usize = 3600;
pub const DEFAULT_RADIAL: usize = 5;

/// Area-weighted share of ring `r` falling in each class index returned by
/// `classify`, by angular quadrature with radial sub-samples.
pub fn ring_quadrature<C>(r: u32, n_ang: usize, n_rad: usize, classify: C) -> Vec<f64>
where
    C: Fn(f64, f64) -> Option<usize>,
{
    let mut share: Vec<f64> = Vec::new();
    let mut wsum = 0.0;
    let trig: Vec<(f64, f64)> = (0..n_ang)
        .map(|k| (2.0 * PI * (k as f64 + 0.5) / n_ang as f64).sin_cos())
        .collect();
    for j in 0..n_rad {
        let rho = r as f64 - 1.0 + (j as f64 + 0.5) / n_rad as f64;
        let w = rho / n_ang as f64;
        wsum += rho;
        for &(s, c) in &trig {
            if let Some(i) = classify(rho * c, rho * s) {
                if share.len() <= i {
                    share.resize(i + 1, 0.0);
                }
                share[i] += w;
            }
        }
    }
    if share.is_empty() {
        share.push(0.0);
    }
    share.iter().map(|v| v / wsum).collect()
}

/// A simple polygon with optional holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub outer: Vec<(f64, f64)>,
    pub holes: Vec<Vec<(f64, f64)>>,
}

impl Polygon {
    pub fn new(outer: Vec<(f64, f64)>) -> Self {
        Self {
            outer,
            holes: Vec::new(),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        point_in_ring(&self.outer, x, y) && !self.holes.iter().any(|h| point_in_ring(h, x, y))
    }

    pub fn validate(&self) -> Result<()> {
        for ring in std::iter::once(&self.outer).chain(&self.holes) {
            let n = distinct_len(ring);
            if n < 3 {
                return Err(DwpError::InvalidLayout(
                    "polygon needs at least 3 vertices".into(),
                ));
            }
            if self_intersects(&ring[..n]) {
                return Err(DwpError::InvalidLayout(
                    "polygon is self-intersecting".into(),
                ));
            }
        }
        Ok(())
    }

    /// Area inside the disk of radius `r` about the origin.
    pub fn disk_area(&self, r: f64) -> f64 {
        let holes: f64 = self.holes.iter().map(|h| ring_disk_area(h, r)).sum();
        (ring_disk_area(&self.outer, r) - holes).max(0.0)
    }

    fn max_radius(&self) -> f64 {
        self.outer
            .iter()
            .map(|(x, y)| x.hypot(*y))
            .fold(0.0, f64::max)
    }

    fn translated(&self, dx: f64, dy: f64) -> Self {
        let mv = |r: &Vec<(f64, f64)>| r.iter().map(|(x, y)| (x - dx, y - dy)).collect();
        Self {
            outer: mv(&self.outer),
            holes: self.holes.iter().map(mv).collect(),
        }
    }
}

/// Number of vertices ignoring a closing repeat of the first.
fn distinct_len(ring: &[(f64, f64)]) -> usize {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.len() - 1
    } else {
        ring.len()
    }
}

fn point_in_ring(ring: &[(f64, f64)], x: f64, y: f64) -> bool {
    let n = distinct_len(ring);
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn self_intersects(ring: &[(f64, f64)]) -> bool {
    let n = ring.len();
    let seg = |i: usize| (ring[i], ring[(i + 1) % n]);
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (a, b) = seg(i);
            let (c, d) = seg(j);
            if segments_cross(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

fn segments_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let orient = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
        (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0)
    };
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// One searched (or explicitly unsearched) piece of ground near a turbine.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub turbine: String,
    pub class: Option<String>,
    /// Coordinates in the layout frame (turbine at `centers[turbine]`).
    pub polygon: Polygon,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolygonLayout {
    pub pieces: Vec<Piece>,
    /// Turbine positions in the layout frame; absent turbines sit at the origin.
    pub centers: BTreeMap<String, (f64, f64)>,
}

impl PolygonLayout {
    pub fn center(&self, turbine: &str) -> (f64, f64) {
        self.centers.get(turbine).copied().unwrap_or((0.0, 0.0))
    }

    /// Turbine ids in order of first appearance.
    pub fn turbines(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.pieces {
            if !out.contains(&p.turbine) {
                out.push(p.turbine.clone());
            }
        }
        out
    }

    /// The piece containing a point given relative to the turbine.
    pub fn piece_at(&self, turbine: &str, x: f64, y: f64) -> Option<&Piece> {
        let (cx, cy) = self.center(turbine);
        self.pieces
            .iter()
            .filter(|p| p.turbine == turbine)
            .find(|p| p.polygon.contains(x + cx, y + cy))
    }
}

pub fn build_rings_polygon(
    layout: &PolygonLayout,
    not_searched: &BTreeSet<String>,
) -> Result<RingProfile> {
    if layout.pieces.is_empty() {
        return Err(DwpError::InvalidLayout("layout has no polygons".into()));
    }
    for p in &layout.pieces {
        p.polygon.validate().map_err(|e| match e {
            DwpError::InvalidLayout(m) => {
                DwpError::InvalidLayout(format!("turbine {}: {m}", p.turbine))
            }
            other => other,
        })?;
    }
    let classified = layout.pieces.iter().any(|p| p.class.is_some());
    if classified && layout.pieces.iter().any(|p| p.class.is_none()) {
        return Err(DwpError::InvalidLayout(
            "either every polygon carries a search class or none does".into(),
        ));
    }
    let classes: Vec<Option<String>> = if classified {
        let set: BTreeSet<String> = layout
            .pieces
            .iter()
            .filter_map(|p| p.class.clone())
            .filter(|c| !not_searched.contains(c))
            .collect();
        set.into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    if classes.is_empty() {
        return Err(DwpError::InvalidLayout(
            "every class is not searched".into(),
        ));
    }

    let mut rings = Vec::new();
    for t in layout.turbines() {
        let (cx, cy) = layout.center(&t);
        let pieces: Vec<(usize, Polygon)> = layout
            .pieces
            .iter()
            .filter(|p| p.turbine == t)
            .filter_map(|p| {
                let idx = classes.iter().position(|c| *c == p.class)?;
                Some((idx, p.polygon.translated(cx, cy)))
            })
            .collect();
        let srad = pieces
            .iter()
            .map(|(_, p)| p.max_radius())
            .fold(0.0, f64::max);
        let n = srad.ceil().max(1.0) as u32;
        // Searched area of each piece within each integer radius.
        let cum: Vec<(usize, Vec<f64>)> = pieces
            .par_iter()
            .map(|(i, p)| (*i, (0..=n).map(|k| p.disk_area(k as f64)).collect()))
            .collect();
        let shares: Vec<Vec<f64>> = (1..=n)
            .map(|r| {
                let area = annulus_area(r);
                let mut s = vec![0.0; classes.len()];
                for (i, c) in &cum {
                    s[*i] += ((c[r as usize] - c[r as usize - 1]) / area).max(0.0);
                }
                s
            })
            .collect();
        let mut rows = Vec::new();
        let mut pinc = Vec::new();
        for (k, s) in shares.iter().enumerate() {
            let r = k as u32 + 1;
            let area = annulus_area(r);
            let total: f64 = s.iter().sum();
            pinc.push(total.min(1.0));
            for (c, v) in classes.iter().zip(s) {
                rows.push(RingRow {
                    r,
                    class: c.clone(),
                    exposure: v * area,
                    ncarc: 0,
                });
            }
        }
        rings.push(TurbineRings {
            turbine: t,
            center: (cx, cy),
            rows,
            pinc,
        });
    }
    let mut profile = RingProfile::from_turbines(rings, None)?;
    profile.not_searched = not_searched.clone();
    Ok(profile)
}

/// Signed area of the triangle (origin, a, b) inside the disk of radius `r`.
fn triangle_disk_area(a: (f64, f64), b: (f64, f64), r: f64) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let qa = dx * dx + dy * dy;
    if qa == 0.0 {
        return 0.0;
    }
    let qb = 2.0 * (a.0 * dx + a.1 * dy);
    let qc = a.0 * a.0 + a.1 * a.1 - r * r;
    let mut ts = vec![0.0];
    let disc = qb * qb - 4.0 * qa * qc;
    if disc > 0.0 {
        let sq = disc.sqrt();
        for t in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.push(1.0);
    let at = |t: f64| (a.0 + t * dx, a.1 + t * dy);
    ts.windows(2)
        .map(|w| {
            let (p, q) = (at(w[0]), at(w[1]));
            let cross = p.0 * q.1 - p.1 * q.0;
            let m = at(0.5 * (w[0] + w[1]));
            if m.0 * m.0 + m.1 * m.1 <= r * r {
                cross / 2.0
            } else {
                r * r * cross.atan2(p.0 * q.0 + p.1 * q.1) / 2.0
            }
        })
        .sum()
}

/// Area of a simple ring (either orientation) inside the disk of radius `r`
/// centred at the origin.
fn ring_disk_area(ring: &[(f64, f64)], r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let n = distinct_len(ring);
    (0..n)
        .map(|i| triangle_disk_area(ring[i], ring[(i + 1) % n], r))
        .sum::<f64>()
        .abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CarcassLocation {
    Distance(f64),
    /// Position in the layout frame.
    Point(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarcassRecord {
    pub turbine: String,
    pub location: CarcassLocation,
    pub search_class: Option<String>,
    pub carcass_class: Option<String>,
}

impl CarcassRecord {
    pub fn at_distance(turbine: &str, r: f64) -> Self {
        Self {
            turbine: turbine.to_string(),
            location: CarcassLocation::Distance(r),
            search_class: None,
            carcass_class: None,
        }
    }

    pub fn at_point(turbine: &str, x: f64, y: f64) -> Self {
        Self {
            turbine: turbine.to_string(),
            location: CarcassLocation::Point(x, y),
            search_class: None,
            carcass_class: None,
        }
    }
}

/// Tally carcasses into rings. With a polygon layout the search class comes
/// from the containing polygon rather than the record.
pub fn add_carcasses(
    profile: &RingProfile,
    records: &[CarcassRecord],
    layout: Option<&PolygonLayout>,
) -> Result<RingProfile> {
    let mut out = profile.clone();
    let index: HashMap<&str, usize> = profile
        .turbines
        .iter()
        .enumerate()
        .map(|(i, t)| (t.turbine.as_str(), i))
        .collect();
    let classified = !profile.classes().is_empty();
    for (k, rec) in records.iter().enumerate() {
        let bad = |reason: String| DwpError::InvalidCarcass {
            turbine: rec.turbine.clone(),
            record: k,
            reason,
        };
        let &ti = index
            .get(rec.turbine.as_str())
            .ok_or_else(|| bad("turbine not in layout".into()))?;
        let center = profile.turbines[ti].center;
        let (d, rel) = match rec.location {
            CarcassLocation::Distance(d) => (d, None),
            CarcassLocation::Point(x, y) => {
                let (dx, dy) = (x - center.0, y - center.1);
                (dx.hypot(dy), Some((dx, dy)))
            }
        };
        if !(d >= 0.0) || !d.is_finite() {
            return Err(bad(format!("distance {d} is not a non-negative number")));
        }
        let r = ring_of(d);
        if r > profile.srad {
            return Err(bad(format!(
                "distance {d} lies beyond the search radius {}",
                profile.srad
            )));
        }
        let class = match layout {
            Some(l) => {
                let (x, y) = rel.ok_or_else(|| {
                    bad("polygon layouts need carcass coordinates, not distances".into())
                })?;
                let piece = l
                    .piece_at(&rec.turbine, x, y)
                    .ok_or_else(|| bad("carcass lies outside all searched areas".into()))?;
                if let Some(c) = &piece.class {
                    if profile.not_searched.contains(c) {
                        return Err(bad(format!("carcass lies in not-searched area '{c}'")));
                    }
                }
                piece.class.clone()
            }
            None if classified => Some(
                rec.search_class
                    .clone()
                    .ok_or_else(|| bad("search class missing".into()))?,
            ),
            None => None,
        };
        let row = out.turbines[ti]
            .rows
            .iter_mut()
            .find(|row| row.r == r && row.class == class)
            .ok_or_else(|| bad(format!("unknown search class {class:?}")))?;
        if row.exposure <= 0.0 {
            return Err(bad(format!("ring {r} has no searched area for this class")));
        }
        row.ncarc += 1;
    }
    out.repool();
    Ok(out)
}

/// One profile per carcass class, sharing exposures.
pub fn add_carcasses_by_class(
    profile: &RingProfile,
    records: &[CarcassRecord],
    layout: Option<&PolygonLayout>,
) -> Result<BTreeMap<String, RingProfile>> {
    let mut groups: BTreeMap<String, Vec<CarcassRecord>> = BTreeMap::new();
    for (k, rec) in records.iter().enumerate() {
        let c = rec
            .carcass_class
            .clone()
            .ok_or_else(|| DwpError::InvalidCarcass {
                turbine: rec.turbine.clone(),
                record: k,
                reason: "carcass class missing".into(),
            })?;
        groups.entry(c).or_default().push(rec.clone());
    }
    groups
        .into_iter()
        .map(|(c, recs)| Ok((c, add_carcasses(profile, &recs, layout)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub turbine: String,
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub ncarc: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridProfile {
    pub cells: Vec<GridCell>,
    pub cell_size: f64,
    pub turbines: Vec<String>,
}

impl GridProfile {
    pub fn exposure(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    pub fn ncarc(&self) -> Vec<u32> {
        self.turbines
            .iter()
            .map(|t| {
                self.cells
                    .iter()
                    .filter(|c| &c.turbine == t)
                    .map(|c| c.ncarc)
                    .sum()
            })
            .collect()
    }

    /// Drop carcasses at turbine-relative points into their cells.
    pub fn add_points(&mut self, turbine: &str, points: &[(f64, f64)]) -> Result<()> {
        let cs = self.cell_size;
        for (k, &(x, y)) in points.iter().enumerate() {
            let cell = self
                .cells
                .iter_mut()
                .find(|c| {
                    c.turbine == turbine
                        && (c.x - x).abs() <= cs / 2.0
                        && (c.y - y).abs() <= cs / 2.0
                })
                .ok_or_else(|| DwpError::InvalidCarcass {
                    turbine: turbine.to_string(),
                    record: k,
                    reason: format!("({x}, {y}) is not in a searched cell"),
                })?;
            cell.ncarc += 1;
        }
        Ok(())
    }
}

/// Validate grid cells (turbine, x, y, ncarc) and attach exact distances.
pub fn build_grid(cells: Vec<(String, f64, f64, u32)>, cell_size: f64) -> Result<GridProfile> {
    if !(cell_size > 0.0) {
        return Err(DwpError::InvalidLayout("cell size must be positive".into()));
    }
    let mut seen = BTreeSet::new();
    let mut turbines: Vec<String> = Vec::new();
    let mut offsets: HashMap<String, (f64, f64)> = HashMap::new();
    let mut out = Vec::with_capacity(cells.len());
    for (t, x, y, ncarc) in cells {
        let key = (
            t.clone(),
            (x / cell_size * 2.0).round() as i64,
            (y / cell_size * 2.0).round() as i64,
        );
        if !seen.insert(key) {
            return Err(DwpError::InvalidLayout(format!(
                "duplicate grid cell ({x}, {y}) for turbine {t}"
            )));
        }
        let off = (x.rem_euclid(cell_size), y.rem_euclid(cell_size));
        let first = *offsets.entry(t.clone()).or_insert(off);
        let close = |a: f64, b: f64| {
            let d = (a - b).abs();
            d < 1e-6 || (cell_size - d) < 1e-6
        };
        if !close(first.0, off.0) || !close(first.1, off.1) {
            return Err(DwpError::InvalidLayout(format!(
                "cell ({x}, {y}) for turbine {t} is off the grid"
            )));
        }
        if !turbines.contains(&t) {
            turbines.push(t.clone());
        }
        out.push(GridCell {
            turbine: t,
            x,
            y,
            r: x.hypot(y),
            ncarc,
        });
    }
    if out.is_empty() {
        return Err(DwpError::InvalidLayout("grid has no cells".into()));
    }
    Ok(GridProfile {
        cells: out,
        cell_size,
        turbines,
    })
}

/// Cell centres k·cell_size within `extent` for which `inside` holds.
pub fn grid_cells_where<F: Fn(f64, f64) -> bool>(
    turbine: &str,
    cell_size: f64,
    extent: f64,
    inside: F,
) -> Vec<(String, f64, f64, u32)> {
    let k = (extent / cell_size).floor() as i64;
    let mut out = Vec::new();
    for i in -k..=k {
        for j in -k..=k {
            let (x, y) = (i as f64 * cell_size, j as f64 * cell_size);
            if inside(x, y) {
                out.push((turbine.to_string(), x, y, 0));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circular_exposures_are_annuli() {
        let p = build_rings_circular(3.0).unwrap();
        let e: Vec<f64> = p.turbines[0].rows.iter().map(|r| r.exposure).collect();
        for (got, want) in e.iter().zip([PI, 3.0 * PI, 5.0 * PI]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(build_rings_circular(0.0).is_err());
    }

    #[test]
    fn fractional_radius_clips_last_ring() {
        let p = build_rings_circular(2.5).unwrap();
        assert_eq!(p.srad, 3);
        let want = PI * (2.5f64.powi(2) - 4.0) / annulus_area(3);
        assert!((p.turbines[0].pinc[2] - want).abs() < 1e-12);
    }

    #[test]
    fn disk_area_of_square() {
        let sq = Polygon::new(vec![(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]);
        assert!((sq.disk_area(0.5) - PI * 0.25).abs() < 1e-12);
        assert!((sq.disk_area(2.0) - 4.0).abs() < 1e-12);
        // A circle crossing every side loses four caps.
        let r: f64 = 1.2;
        let cap = r * r * (1.0 / r).acos() - (r * r - 1.0).sqrt();
        assert!((sq.disk_area(r) - (PI * r * r - 4.0 * cap)).abs() < 1e-12);
        let mut cw = sq.clone();
        cw.outer.reverse();
        assert!((cw.disk_area(r) - sq.disk_area(r)).abs() < 1e-12);
    }

    #[test]
    fn ring_boundaries_are_half_open() {
        assert_eq!(ring_of(0.0), 1);
        assert_eq!(ring_of(1.0), 1);
        assert_eq!(ring_of(1.0001), 2);
        assert_eq!(ring_of(50.0), 50);
    }

    #[test]
    fn square_conserves_area() {
        let row = SimpleGeometryRow {
            turbine: "t2".into(),
            radius: 65.0,
            shape: PlotShape::Square,
        };
        let p = build_rings_simple(&row).unwrap();
        let t = &p.turbines[0];
        let total: f64 = t.rows.iter().map(|r| r.exposure).sum();
        assert!((total - 130.0 * 130.0).abs() / (130.0 * 130.0) < 1e-3);
        assert!(t.pinc[..65].iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(t.pinc[65] < 1.0);
        assert_eq!(p.srad, 92);
        assert!(t.pinc[91] > 0.0 && t.pinc[91] < 1e-2);
    }

    #[test]
    fn overlapping_roads_fall_back_to_quadrature() {
        let row = SimpleGeometryRow {
            turbine: "t".into(),
            radius: 40.0,
            shape: PlotShape::RoadPad {
                padrad: 1.0,
                roadwidth: 10.0,
                n_road: 2,
            },
        };
        assert!(!row.shape.analytic());
        let p = build_rings_simple(&row).unwrap();
        // Two perpendicular strips of width 10 overlap in a 5 x 5 square.
        let area: f64 = p.turbines[0].rows.iter().map(|r| r.exposure).sum();
        let exact_far = 2.0 * 10.0 * 40.0 - 25.0;
        assert!((area - exact_far).abs() / exact_far < 0.01, "{area}");
    }

    #[test]
    fn self_intersection_is_rejected() {
        let bow = Polygon::new(vec![(0.0, 0.0), (10.0, 10.0), (10.0, 0.0), (0.0, 10.0)]);
        assert!(bow.validate().is_err());
        let ok = Polygon::new(vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]);
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn pooled_site_of_two_circles() {
        let a = rings_from_cumulative("a", 50.0, |r| PlotShape::Circular.covered_area(r, 50.0));
        let b = rings_from_cumulative("b", 100.0, |r| PlotShape::Circular.covered_area(r, 100.0));
        let p = RingProfile::from_turbines(vec![a, b], None).unwrap();
        assert_eq!(p.srad, 100);
        assert!((p.site_pinc[74] - 0.5).abs() < 1e-12);
        assert!((p.site_pinc[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_duplicates_and_off_grid_cells() {
        let dup = vec![("t".into(), 0.0, 1.0, 0), ("t".into(), 0.0, 1.0, 1)];
        assert!(build_grid(dup, 1.0).is_err());
        let off = vec![("t".into(), 0.0, 1.0, 0), ("t".into(), 0.5, 1.0, 0)];
        assert!(build_grid(off, 1.0).is_err());
        let g = build_grid(vec![("t".into(), 0.0, -15.0, 0)], 1.0).unwrap();
        assert_eq!(g.cells[0].r, 15.0);
    }
}
