//! Text formats: layout and carcass tables, GeoJSON layouts, the ring
//! profile bundle, fitted models and draw matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coverage::DrawMatrix;
use crate::distribution::DistStats;
use crate::error::{DwpError, Result};
use crate::filter::ScoreTable;
use crate::forms::ModelForm;
use crate::geometry::{
    build_grid, CarcassLocation, CarcassRecord, GridProfile, Piece, PlotShape, Polygon,
    PolygonLayout, RingProfile, RingRow, SimpleGeometryRow, TurbineRings,
};
use crate::glm::FittedGLM;

/// A CSV table with trimmed headers and cells.
#[derive(Debug, Clone)]
pub struct Table {
    pub source: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(text.as_bytes());
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            source: source.to_string(),
            headers,
            rows,
        })
    }

    fn schema(&self, detail: String) -> DwpError {
        DwpError::Schema {
            source_name: self.source.clone(),
            detail,
        }
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.find(name)
            .ok_or_else(|| self.schema(format!("missing required column '{name}'")))
    }

    pub fn number(&self, row: usize, col: usize) -> Result<f64> {
        let cell = &self.rows[row][col];
        cell.parse::<f64>().map_err(|_| {
            self.schema(format!(
                "row {}, column '{}': '{cell}' is not a number",
                row + 2,
                self.headers[col]
            ))
        })
    }

    pub fn count(&self, row: usize, col: usize) -> Result<u32> {
        let v = self.number(row, col)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(self.schema(format!(
                "row {}, column '{}': '{}' is not a non-negative integer",
                row + 2,
                self.headers[col],
                self.rows[row][col]
            )));
        }
        Ok(v as u32)
    }

    pub fn text(&self, row: usize, col: usize) -> &str {
        &self.rows[row][col]
    }

    fn optional_text(&self, row: usize, col: Option<usize>) -> Option<String> {
        col.map(|c| self.rows[row][c].clone())
            .filter(|s| !s.is_empty() && s != "NA")
    }
}

/// Column names for carcass tables.
#[derive(Debug, Clone, PartialEq)]
pub struct CarcassColumns {
    pub turbine: String,
    pub distance: String,
    pub sc_var: Option<String>,
    pub cc_col: Option<String>,
}

impl Default for CarcassColumns {
    fn default() -> Self {
        Self {
            turbine: "turbine".into(),
            distance: "r".into(),
            sc_var: None,
            cc_col: None,
        }
    }
}

/// Carcasses with a distance column, or x and y coordinates.
pub fn parse_carcasses(t: &Table, cols: &CarcassColumns) -> Result<Vec<CarcassRecord>> {
    let tc = t.require(&cols.turbine)?;
    let rc = t.find(&cols.distance);
    let xy = t.find("x").zip(t.find("y"));
    if rc.is_none() && xy.is_none() {
        return Err(t.schema(format!(
            "missing required column '{}' (or both 'x' and 'y')",
            cols.distance
        )));
    }
    let sc = cols.sc_var.as_deref().map(|c| t.require(c)).transpose()?;
    let cc = cols.cc_col.as_deref().map(|c| t.require(c)).transpose()?;
    (0..t.rows.len())
        .map(|i| {
            let location = match xy {
                Some((x, y)) => CarcassLocation::Point(t.number(i, x)?, t.number(i, y)?),
                None => CarcassLocation::Distance(t.number(i, rc.unwrap())?),
            };
            Ok(CarcassRecord {
                turbine: t.text(i, tc).to_string(),
                location,
                search_class: t.optional_text(i, sc),
                carcass_class: t.optional_text(i, cc),
            })
        })
        .collect()
}

pub fn read_carcasses(path: &Path, cols: &CarcassColumns) -> Result<Vec<CarcassRecord>> {
    parse_carcasses(&Table::read(path)?, cols)
}

/// Simple-geometry table: turbine, radius, shape and, for RP rows, padrad,
/// roadwidth and n_road.
pub fn parse_simple_layout(t: &Table) -> Result<Vec<SimpleGeometryRow>> {
    let tc = t.require("turbine")?;
    let rc = t.require("radius")?;
    let sc = t.require("shape")?;
    let (pc, wc, nc) = (t.find("padrad"), t.find("roadwidth"), t.find("n_road"));
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for i in 0..t.rows.len() {
        let turbine = t.text(i, tc).to_string();
        if !seen.insert(turbine.clone()) {
            return Err(DwpError::InvalidLayout(format!(
                "turbine {turbine} appears twice"
            )));
        }
        let shape = match t.text(i, sc).to_ascii_lowercase().as_str() {
            "circular" | "circle" => PlotShape::Circular,
            "square" => PlotShape::Square,
            "rp" => {
                let need = |c: Option<usize>, name: &str| -> Result<f64> {
                    let c = c.ok_or_else(|| t.schema(format!("RP rows need column '{name}'")))?;
                    t.number(i, c)
                };
                PlotShape::RoadPad {
                    padrad: need(pc, "padrad")?,
                    roadwidth: need(wc, "roadwidth")?,
                    n_road: t.count(
                        i,
                        nc.ok_or_else(|| t.schema("RP rows need column 'n_road'".into()))?,
                    )?,
                }
            }
            other => {
                return Err(DwpError::InvalidLayout(format!(
                    "turbine {turbine}: unknown shape '{other}'"
                )))
            }
        };
        out.push(SimpleGeometryRow {
            turbine,
            radius: t.number(i, rc)?,
            shape,
        });
    }
    Ok(out)
}

pub fn read_simple_layout(path: &Path) -> Result<Vec<SimpleGeometryRow>> {
    parse_simple_layout(&Table::read(path)?)
}

/// Vertex table: turbine, x, y and optional search-class and piece columns.
/// Rows of one (turbine, class, piece) group form one polygon, turbine at the
/// origin.
pub fn parse_polygon_layout(t: &Table, class_col: &str) -> Result<PolygonLayout> {
    let tc = t.require("turbine")?;
    let xc = t.require("x")?;
    let yc = t.require("y")?;
    let cc = t.find(class_col);
    let pc = t.find("piece");
    let mut groups: Vec<((String, Option<String>, Option<String>), Vec<(f64, f64)>)> = Vec::new();
    for i in 0..t.rows.len() {
        let key = (
            t.text(i, tc).to_string(),
            t.optional_text(i, cc),
            t.optional_text(i, pc),
        );
        let v = (t.number(i, xc)?, t.number(i, yc)?);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pts)) => pts.push(v),
            None => groups.push((key, vec![v])),
        }
    }
    Ok(PolygonLayout {
        pieces: groups
            .into_iter()
            .map(|((turbine, class, _), pts)| Piece {
                turbine,
                class,
                polygon: Polygon::new(pts),
            })
            .collect(),
        centers: BTreeMap::new(),
    })
}

pub fn read_polygon_layout(path: &Path, class_col: &str) -> Result<PolygonLayout> {
    parse_polygon_layout(&Table::read(path)?, class_col)
}

fn geo_err(source: &str, detail: impl Into<String>) -> DwpError {
    DwpError::Schema {
        source_name: source.to_string(),
        detail: detail.into(),
    }
}

fn geo_ring(v: &Value, source: &str) -> Result<Vec<(f64, f64)>> {
    let pts = v
        .as_array()
        .ok_or_else(|| geo_err(source, "polygon ring is not an array"))?;
    let mut out: Vec<(f64, f64)> = pts
        .iter()
        .map(|p| {
            let a = p.as_array().filter(|a| a.len() >= 2);
            match a.and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?))) {
                Some(xy) => Ok(xy),
                None => Err(geo_err(source, "vertex is not a coordinate pair")),
            }
        })
        .collect::<Result<_>>()?;
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    Ok(out)
}

fn geo_polygon(v: &Value, source: &str) -> Result<Polygon> {
    let rings = v
        .as_array()
        .filter(|r| !r.is_empty())
        .ok_or_else(|| geo_err(source, "polygon has no rings"))?;
    let mut p = Polygon::new(geo_ring(&rings[0], source)?);
    for h in &rings[1..] {
        p.holes.push(geo_ring(h, source)?);
    }
    Ok(p)
}

/// GeoJSON FeatureCollection: Polygon and MultiPolygon features with
/// properties `turbine` and an optional search-class property; Point features
/// with a `turbine` property give turbine positions.
pub fn parse_geojson_layout(text: &str, source: &str, class_key: &str) -> Result<PolygonLayout> {
    let doc: Value = serde_json::from_str(text)?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(geo_err(source, "expected a FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| geo_err(source, "missing 'features'"))?;
    let mut layout = PolygonLayout::default();
    for (k, f) in features.iter().enumerate() {
        let props = f.get("properties");
        let text_prop = |name: &str| -> Option<String> {
            props.and_then(|p| p.get(name)).and_then(|v| match v {
                Value::String(s) => Some(s.clone()),
                Value::Number(n) => Some(n.to_string()),
                _ => None,
            })
        };
        let turbine = text_prop("turbine")
            .ok_or_else(|| geo_err(source, format!("feature {k} has no 'turbine' property")))?;
        let class = text_prop(class_key);
        let geom = f
            .get("geometry")
            .ok_or_else(|| geo_err(source, format!("feature {k} has no geometry")))?;
        let coords = geom
            .get("coordinates")
            .ok_or_else(|| geo_err(source, format!("feature {k} has no coordinates")))?;
        match geom.get("type").and_then(Value::as_str) {
            Some("Point") => {
                let a = coords.as_array().filter(|a| a.len() >= 2);
                let xy = a
                    .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
                    .ok_or_else(|| geo_err(source, format!("feature {k}: bad point")))?;
                layout.centers.insert(turbine, xy);
            }
            Some("Polygon") => layout.pieces.push(Piece {
                turbine,
                class,
                polygon: geo_polygon(coords, source)?,
            }),
            Some("MultiPolygon") => {
                let parts = coords
                    .as_array()
                    .ok_or_else(|| geo_err(source, format!("feature {k}: bad multipolygon")))?;
                for part in parts {
                    layout.pieces.push(Piece {
                        turbine: turbine.clone(),
                        class: class.clone(),
                        polygon: geo_polygon(part, source)?,
                    });
                }
            }
            other => {
                return Err(geo_err(
                    source,
                    format!("feature {k}: unsupported geometry {other:?}"),
                ))
            }
        }
    }
    Ok(layout)
}

pub fn read_geojson_layout(path: &Path, class_key: &str) -> Result<PolygonLayout> {
    parse_geojson_layout(
        &fs::read_to_string(path)?,
        &path.display().to_string(),
        class_key,
    )
}

/// Grid table: x, y, ncarc and optional turbine (default "t1") and r. The
/// cell size defaults to the smallest coordinate spacing.
pub fn parse_grid(t: &Table, cell_size: Option<f64>) -> Result<GridProfile> {
    let xc = t.require("x")?;
    let yc = t.require("y")?;
    let nc = t.require("ncarc")?;
    let tc = t.find("turbine");
    let rc = t.find("r");
    let mut cells = Vec::with_capacity(t.rows.len());
    for i in 0..t.rows.len() {
        let turbine = t.optional_text(i, tc).unwrap_or_else(|| "t1".into());
        cells.push((turbine, t.number(i, xc)?, t.number(i, yc)?, t.count(i, nc)?));
    }
    let size = match cell_size {
        Some(s) => s,
        None => {
            let mut coords: Vec<f64> = cells.iter().flat_map(|c| [c.1, c.2]).collect();
            coords.sort_by(f64::total_cmp);
            coords.dedup();
            coords
                .windows(2)
                .map(|w| w[1] - w[0])
                .filter(|d| *d > 1e-9)
                .fold(f64::INFINITY, f64::min)
        }
    };
    if !size.is_finite() {
        return Err(
            t.schema("cannot infer the cell size from a single cell; pass it explicitly".into())
        );
    }
    if let Some(rc) = rc {
        for (i, c) in cells.iter().enumerate() {
            let r = t.number(i, rc)?;
            if (r - c.1.hypot(c.2)).abs() > size * std::f64::consts::FRAC_1_SQRT_2 {
                return Err(t.schema(format!(
                    "row {}: r = {r} disagrees with the cell centre distance",
                    i + 2
                )));
            }
        }
    }
    build_grid(cells, size)
}

pub fn read_grid(path: &Path, cell_size: Option<f64>) -> Result<GridProfile> {
    parse_grid(&Table::read(path)?, cell_size)
}

/// Site rows in the bundle use this turbine label.
pub const SITE: &str = "total";

/// Write rdat.csv, rpA.csv and meta.csv into `dir`.
pub fn write_profile(profile: &RingProfile, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rdat = csv::Writer::from_path(dir.join("rdat.csv"))?;
    rdat.write_record(["turbine", "r", "class", "exposure", "ncarc"])?;
    let mut put = |t: &str, rows: &[RingRow]| -> Result<()> {
        for r in rows {
            rdat.write_record([
                t.to_string(),
                r.r.to_string(),
                r.class.clone().unwrap_or_default(),
                r.exposure.to_string(),
                r.ncarc.to_string(),
            ])?;
        }
        Ok(())
    };
    for t in &profile.turbines {
        put(&t.turbine, &t.rows)?;
    }
    put(SITE, &profile.site)?;
    rdat.flush()?;

    let mut rpa = csv::Writer::from_path(dir.join("rpA.csv"))?;
    rpa.write_record(["turbine", "r", "pinc"])?;
    let pincs = profile
        .turbines
        .iter()
        .map(|t| (t.turbine.as_str(), &t.pinc))
        .chain(std::iter::once((SITE, &profile.site_pinc)));
    for (t, pinc) in pincs {
        for (i, p) in pinc.iter().enumerate() {
            rpa.write_record([t.to_string(), (i + 1).to_string(), p.to_string()])?;
        }
    }
    rpa.flush()?;

    let mut meta = csv::Writer::from_path(dir.join("meta.csv"))?;
    meta.write_record(["key", "value"])?;
    meta.write_record(["srad", &profile.srad.to_string()])?;
    meta.write_record(["sc_var", profile.sc_var.as_deref().unwrap_or("")])?;
    let ns: Vec<&str> = profile.not_searched.iter().map(String::as_str).collect();
    meta.write_record(["not_searched", &ns.join(";")])?;
    for t in &profile.turbines {
        meta.write_record([
            format!("center:{}", t.turbine),
            format!("{} {}", t.center.0, t.center.1),
        ])?;
    }
    meta.flush()?;
    Ok(())
}

/// Read a bundle written by [`write_profile`].
pub fn read_profile(dir: &Path) -> Result<RingProfile> {
    let rdat = Table::read(&dir.join("rdat.csv"))?;
    let rpa = Table::read(&dir.join("rpA.csv"))?;
    let meta = Table::read(&dir.join("meta.csv"))?;

    let (kc, vc) = (meta.require("key")?, meta.require("value")?);
    let mut sc_var = None;
    let mut not_searched = BTreeSet::new();
    let mut centers = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for i in 0..meta.rows.len() {
        let (k, v) = (meta.text(i, kc), meta.text(i, vc));
        if k == "sc_var" && !v.is_empty() {
            sc_var = Some(v.to_string());
        } else if k == "not_searched" {
            not_searched = v
                .split(';')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
        } else if let Some(t) = k.strip_prefix("center:") {
            let xy: Vec<f64> = v
                .split_whitespace()
                .filter_map(|s| s.parse().ok())
                .collect();
            if xy.len() != 2 {
                return Err(meta.schema(format!("bad centre '{v}' for turbine {t}")));
            }
            centers.insert(t.to_string(), (xy[0], xy[1]));
            order.push(t.to_string());
        }
    }

    let (tc, rc, cc, ec, nc) = (
        rdat.require("turbine")?,
        rdat.require("r")?,
        rdat.require("class")?,
        rdat.require("exposure")?,
        rdat.require("ncarc")?,
    );
    let mut rows: BTreeMap<String, Vec<RingRow>> = BTreeMap::new();
    for i in 0..rdat.rows.len() {
        let t = rdat.text(i, tc);
        if t == SITE {
            continue;
        }
        rows.entry(t.to_string()).or_default().push(RingRow {
            r: rdat.count(i, rc)?,
            class: rdat.optional_text(i, Some(cc)),
            exposure: rdat.number(i, ec)?,
            ncarc: rdat.count(i, nc)?,
        });
    }
    let (ptc, prc, ppc) = (
        rpa.require("turbine")?,
        rpa.require("r")?,
        rpa.require("pinc")?,
    );
    let mut pinc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for i in 0..rpa.rows.len() {
        let t = rpa.text(i, ptc);
        if t == SITE {
            continue;
        }
        let v = pinc.entry(t.to_string()).or_default();
        if rpa.count(i, prc)? as usize != v.len() + 1 {
            return Err(rpa.schema(format!("rings for turbine {t} are not consecutive from 1")));
        }
        v.push(rpa.number(i, ppc)?);
    }
    if order.is_empty() {
        order = rows.keys().cloned().collect();
    }
    let turbines = order
        .iter()
        .map(|t| {
            Ok(TurbineRings {
                turbine: t.clone(),
                center: centers.get(t).copied().unwrap_or((0.0, 0.0)),
                rows: rows
                    .remove(t)
                    .ok_or_else(|| rdat.schema(format!("no rings for turbine {t}")))?,
                pinc: pinc
                    .remove(t)
                    .ok_or_else(|| rpa.schema(format!("no pinc for turbine {t}")))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut profile = RingProfile::from_turbines(turbines, sc_var)?;
    profile.not_searched = not_searched;
    Ok(profile)
}

/// Write a grid bundle: grid.csv and meta.csv with the cell size.
pub fn write_grid_bundle(grid: &GridProfile, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("grid.csv"))?;
    w.write_record(["turbine", "x", "y", "ncarc", "r"])?;
    for c in &grid.cells {
        w.write_record([
            c.turbine.clone(),
            c.x.to_string(),
            c.y.to_string(),
            c.ncarc.to_string(),
            c.r.to_string(),
        ])?;
    }
    w.flush()?;
    let mut m = csv::Writer::from_path(dir.join("meta.csv"))?;
    m.write_record(["key", "value"])?;
    m.write_record(["layout", "grid"])?;
    m.write_record(["cell_size", &grid.cell_size.to_string()])?;
    m.flush()?;
    Ok(())
}

pub fn is_grid_bundle(dir: &Path) -> bool {
    dir.join("grid.csv").is_file()
}

pub fn read_grid_bundle(dir: &Path) -> Result<GridProfile> {
    let meta = Table::read(&dir.join("meta.csv"))?;
    let (kc, vc) = (meta.require("key")?, meta.require("value")?);
    let size = (0..meta.rows.len())
        .find(|&i| meta.text(i, kc) == "cell_size")
        .map(|i| meta.number(i, vc))
        .transpose()?;
    read_grid(&dir.join("grid.csv"), size)
}

/// Serialisable form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub model: String,
    pub beta: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub colnames: Vec<String>,
    pub class_levels: Vec<String>,
    pub loglik: f64,
    pub deviance: f64,
    pub aicc: Option<f64>,
    pub n_obs: usize,
    pub k_params: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl From<&FittedGLM> for FitRecord {
    fn from(f: &FittedGLM) -> Self {
        Self {
            model: f.form.name().to_string(),
            beta: f.beta.clone(),
            cov: f
                .cov
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            colnames: f.colnames.clone(),
            class_levels: f.class_levels.clone(),
            loglik: f.loglik,
            deviance: f.deviance,
            aicc: f.aicc.is_finite().then_some(f.aicc),
            n_obs: f.n_obs,
            k_params: f.k_params,
            converged: f.converged,
            iterations: f.iterations,
        }
    }
}

impl TryFrom<FitRecord> for FittedGLM {
    type Error = DwpError;

    fn try_from(r: FitRecord) -> Result<Self> {
        let form: ModelForm = r.model.parse()?;
        let k = r.beta.len();
        if k != r.k_params || r.cov.len() != k || r.cov.iter().any(|row| row.len() != k) {
            return Err(DwpError::InvalidArgument(format!(
                "fit record for {} has inconsistent dimensions",
                r.model
            )));
        }
        Ok(FittedGLM {
            form,
            cov: DMatrix::from_fn(k, k, |i, j| r.cov[i][j]),
            beta: r.beta,
            colnames: r.colnames,
            class_levels: r.class_levels,
            loglik: r.loglik,
            deviance: r.deviance,
            aicc: r.aicc.unwrap_or(f64::INFINITY),
            n_obs: r.n_obs,
            k_params: r.k_params,
            converged: r.converged,
            iterations: r.iterations,
        })
    }
}

pub fn write_fits(fits: &[FittedGLM], path: &Path) -> Result<()> {
    let recs: Vec<FitRecord> = fits.iter().map(FitRecord::from).collect();
    fs::write(path, serde_json::to_string_pretty(&recs)?)?;
    Ok(())
}

pub fn read_fits(path: &Path) -> Result<Vec<FittedGLM>> {
    let recs: Vec<FitRecord> = serde_json::from_str(&fs::read_to_string(path)?)?;
    recs.into_iter().map(FittedGLM::try_from).collect()
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "NA".into()
    }
}

/// Score table CSV in the order extensible, rtail, ltail, aicc, hin, deltaAICc.
pub fn score_table_csv(table: &ScoreTable) -> String {
    let mut s = String::from("model,extensible,rtail,ltail,aicc,hin,deltaAICc\n");
    for m in &table.scores {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.form,
            flag(m.extensible),
            flag(m.rtail),
            flag(m.ltail),
            flag(m.aicc),
            flag(m.hin),
            num(m.delta_aicc)
        ));
    }
    s
}

/// Stats CSV: median, quantiles, mode and p_win per model.
pub fn stats_csv(rows: &[(ModelForm, Option<DistStats>, f64)]) -> String {
    let mut s = String::from("model,median,75%,90%,95%,mode,p_win,deltaAICc\n");
    for (form, st, delta) in rows {
        match st {
            Some(st) => s.push_str(&format!(
                "{form},{},{},{},{},{},{},{}\n",
                num(st.median),
                num(st.q75),
                num(st.q90),
                num(st.q95),
                num(st.mode),
                format_args!("{:.3}", st.p_win),
                num(*delta)
            )),
            None => s.push_str(&format!("{form},NA,NA,NA,NA,NA,NA,{}\n", num(*delta))),
        }
    }
    s
}

/// Draw matrix CSV: one row per draw, one column per turbine plus total.
pub fn write_draws(d: &DrawMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&d.columns)?;
    for i in 0..d.nsim() {
        w.write_record(d.values.row(i).iter().map(|v| {
            if v.is_nan() {
                "NA".to_string()
            } else {
                v.to_string()
            }
        }))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws(path: &Path) -> Result<DrawMatrix> {
    let t = Table::read(path)?;
    if t.headers.len() < 2 {
        return Err(t.schema("draw tables need turbine columns and a total".into()));
    }
    let nc = t.headers.len();
    let mut vals = Vec::with_capacity(t.rows.len() * nc);
    for i in 0..t.rows.len() {
        for j in 0..nc {
            vals.push(if t.text(i, j) == "NA" {
                f64::NAN
            } else {
                t.number(i, j)?
            });
        }
    }
    Ok(DrawMatrix {
        columns: t.headers.clone(),
        values: DMatrix::from_row_slice(t.rows.len(), nc, &vals),
    })
}

/// Quantile summary CSV (turbine, 5%, 50%, 95%).
pub fn summary_csv(d: &DrawMatrix) -> String {
    let mut s = String::from("turbine,5%,50%,95%\n");
    for (c, lo, mid, hi) in d.summary() {
        s.push_str(&format!("{c},{},{},{}\n", num(lo), num(mid), num(hi)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_column_names_it() {
        let t = Table::parse("turbine,dist\nt1,3\n", "c.csv").unwrap();
        let e = parse_carcasses(&t, &CarcassColumns::default()).unwrap_err();
        assert!(e.to_string().contains("'r'"), "{e}");
    }

    #[test]
    fn simple_layout_requires_rp_columns() {
        let t = Table::parse("turbine,radius,shape\nt3,120,RP\n", "s.csv").unwrap();
        assert!(matches!(
            parse_simple_layout(&t),
            Err(DwpError::Schema { .. })
        ));
        let t = Table::parse(
            "turbine,radius,shape,padrad,roadwidth,n_road\nt3,120,RP,15,5,2\nt2,65,square,NA,NA,NA\n",
            "s.csv",
        )
        .unwrap();
        let rows = parse_simple_layout(&t).unwrap();
        assert_eq!(rows[1].shape, PlotShape::Square);
    }

    #[test]
    fn geojson_multipolygon_splits_into_pieces() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"turbine":"t1","class":"easy"},
             "geometry":{"type":"MultiPolygon","coordinates":[
                [[[0,0],[10,0],[10,10],[0,10],[0,0]]],
                [[[-10,-10],[-1,-10],[-1,-1],[-10,-1],[-10,-10]]]]}},
            {"type":"Feature","properties":{"turbine":"t1"},
             "geometry":{"type":"Point","coordinates":[1,2]}}]}"#;
        let l = parse_geojson_layout(text, "g", "class").unwrap();
        assert_eq!(l.pieces.len(), 2);
        assert_eq!(l.pieces[0].polygon.outer.len(), 4);
        assert_eq!(l.center("t1"), (1.0, 2.0));
    }
}
