use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dwp_core::coverage::{est_dwp_from, GenestMode, TOTAL};
use dwp_core::geometry::build_rings_circular_for;
use dwp_core::io::{self, CarcassColumns, Table};
use dwp_core::validation::psi_accuracy_from;
use dwp_core::{
    add_carcasses, add_carcasses_by_class, build_rings_polygon, build_rings_simple_table, est_psi,
    est_psi_grid, filter_models, fit_battery, format_genest, format_genest_classes,
    parse_model_list, rows_from_grid, rows_from_rings, BallisticsScenario, CarcassRecord,
    DistanceDistribution, DwpDraws, DwpError, FittedGLM, GridProfile, ModelForm, ObsRow,
    RingProfile, ScoreTable, Thresholds,
};

use crate::{
    DwpArgs, ExportArgs, ExportMode, FilterArgs, FitArgs, LayoutType, PrepArgs, PsiArgs,
    SimulateArgs, ThresholdArgs,
};

impl From<&ThresholdArgs> for Thresholds {
    fn from(a: &ThresholdArgs) -> Self {
        Thresholds {
            rtail_200: a.rtail_200,
            rtail_150: a.rtail_150,
            ltail_20: a.ltail_20,
            ltail_50: a.ltail_50,
            aicc_max_delta: a.aicc_max,
            hin_delta_pwin: a.hin_delta,
        }
    }
}

/// A prepared bundle: rings or grid cells.
enum Data {
    Rings(RingProfile),
    Grid(GridProfile),
}

impl Data {
    fn load(dir: &Path) -> Result<Self> {
        let data = if io::is_grid_bundle(dir) {
            Data::Grid(io::read_grid_bundle(dir)?)
        } else {
            Data::Rings(io::read_profile(dir)?)
        };
        Ok(data)
    }

    fn rows(&self) -> Vec<ObsRow> {
        match self {
            Data::Rings(p) => rows_from_rings(&p.site),
            Data::Grid(g) => rows_from_grid(g),
        }
    }

    fn use_classes(&self) -> bool {
        matches!(self, Data::Rings(p) if !p.classes().is_empty())
    }

    fn srad(&self) -> f64 {
        match self {
            Data::Rings(p) => p.srad as f64,
            Data::Grid(g) => g.cells.iter().map(|c| c.r).fold(0.0, f64::max).ceil(),
        }
    }

    fn turbines(&self) -> Vec<String> {
        match self {
            Data::Rings(p) => p.turbine_ids(),
            Data::Grid(g) => g.turbines.clone(),
        }
    }

    fn ncarc(&self) -> (Vec<u32>, u32) {
        let n = match self {
            Data::Rings(p) => p.ncarc(),
            Data::Grid(g) => g.ncarc(),
        };
        let total = n.iter().sum();
        (n, total)
    }
}

fn read_turbine_list(path: &Path) -> Result<Vec<String>> {
    let t = Table::read(path)?;
    let c = t.require("turbine")?;
    let mut out: Vec<String> = Vec::new();
    for i in 0..t.rows.len() {
        let id = t.text(i, c).to_string();
        if !out.contains(&id) {
            out.push(id);
        }
    }
    Ok(out)
}

fn need<'a, T>(v: &'a Option<T>, flag: &str, kind: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| anyhow::anyhow!("--{flag} is required for {kind} layouts"))
}

fn write_bundles(
    base: &RingProfile,
    records: &[CarcassRecord],
    layout: Option<&dwp_core::PolygonLayout>,
    by_class: bool,
    out: &Path,
) -> Result<()> {
    if by_class {
        let profiles = add_carcasses_by_class(base, records, layout)?;
        for (class, p) in &profiles {
            io::write_profile(p, &out.join(class))?;
            println!(
                "class {class}: {} carcasses -> {}",
                p.site_ncarc(),
                out.join(class).display()
            );
        }
    } else {
        let p = add_carcasses(base, records, layout)?;
        io::write_profile(&p, out)?;
        println!(
            "{} turbines, srad {} m, {} carcasses -> {}",
            p.turbines.len(),
            p.srad,
            p.site_ncarc(),
            out.display()
        );
    }
    Ok(())
}

pub fn prep(a: &PrepArgs) -> Result<()> {
    let cols = CarcassColumns {
        cc_col: a.cc_col.clone(),
        ..CarcassColumns::default()
    };
    let class_key = a.sc_var.as_deref().unwrap_or("class");
    let not_searched: BTreeSet<String> = a.not_searched.iter().cloned().collect();
    let by_class = a.cc_col.is_some();
    match a.layout_type {
        LayoutType::Distance => {
            let srad = *need(&a.srad, "srad", "distance")?;
            let records = io::read_carcasses(need(&a.carcasses, "carcasses", "distance")?, &cols)?;
            let mut turbines = match &a.layout {
                Some(p) => read_turbine_list(p)?,
                None => Vec::new(),
            };
            for r in &records {
                if !turbines.contains(&r.turbine) {
                    turbines.push(r.turbine.clone());
                }
            }
            if turbines.is_empty() {
                return Err(DwpError::InvalidLayout("no turbines".into()).into());
            }
            let base = build_rings_circular_for(srad, &turbines)?;
            write_bundles(&base, &records, None, by_class, &a.out)
        }
        LayoutType::Simple => {
            let rows = io::read_simple_layout(need(&a.layout, "layout", "simple")?)?;
            let base = build_rings_simple_table(&rows)?;
            let records = match &a.carcasses {
                Some(p) => io::read_carcasses(p, &cols)?,
                None => Vec::new(),
            };
            write_bundles(&base, &records, None, by_class, &a.out)
        }
        LayoutType::Polygon | LayoutType::Geojson => {
            let path = need(&a.layout, "layout", "polygon")?;
            let layout = if a.layout_type == LayoutType::Polygon {
                io::read_polygon_layout(path, class_key)?
            } else {
                io::read_geojson_layout(path, class_key)?
            };
            let mut base = build_rings_polygon(&layout, &not_searched)?;
            if !base.classes().is_empty() {
                base.sc_var = Some(class_key.to_string());
            }
            let records = match &a.carcasses {
                Some(p) => io::read_carcasses(p, &cols)?,
                None => Vec::new(),
            };
            write_bundles(&base, &records, Some(&layout), by_class, &a.out)
        }
        LayoutType::Grid => {
            let grid = io::read_grid(need(&a.layout, "layout", "grid")?, a.cell_size)?;
            io::write_grid_bundle(&grid, &a.out)?;
            println!(
                "{} turbines, {} cells of {} m, {} carcasses -> {}",
                grid.turbines.len(),
                grid.cells.len(),
                grid.cell_size,
                grid.ncarc().iter().sum::<u32>(),
                a.out.display()
            );
            Ok(())
        }
    }
}

fn stats_rows(
    fits: &[FittedGLM],
    table: &ScoreTable,
    srad: f64,
) -> Vec<(ModelForm, Option<dwp_core::DistStats>, f64)> {
    table
        .scores
        .iter()
        .map(|s| {
            let st = fits
                .iter()
                .find(|f| f.form == s.form)
                .and_then(|f| DistanceDistribution::new(f.form, f.dist_beta()).ok())
                .map(|d| d.stats(srad));
            (s.form, st, s.delta_aicc)
        })
        .collect()
}

fn write_filter_outputs(
    fits: &[FittedGLM],
    data: &Data,
    th: &Thresholds,
    out: &Path,
) -> Result<ScoreTable> {
    let table = filter_models(fits, &data.rows(), data.use_classes(), data.srad(), th)?;
    fs::create_dir_all(out)?;
    let scores = io::score_table_csv(&table);
    fs::write(out.join("scores.csv"), &scores)?;
    fs::write(
        out.join("stats.csv"),
        io::stats_csv(&stats_rows(fits, &table, data.srad())),
    )?;
    fs::write(out.join("selected.txt"), format!("{}\n", table.selected))?;
    print!("\n{scores}");
    println!("\nselected: {}", table.selected);
    if !table.selected_passes_all {
        eprintln!(
            "warning: no model passes every test; {} is the best partial pass",
            table.selected
        );
    }
    Ok(table)
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let data = Data::load(&a.profile)?;
    let forms = parse_model_list(&a.models)?;
    if forms.is_empty() {
        bail!(DwpError::InvalidArgument("empty model list".into()));
    }
    let rows = data.rows();
    let mut fits = Vec::new();
    for (form, res) in fit_battery(&rows, &forms, data.use_classes()) {
        match res {
            Ok(f) => fits.push(f),
            Err(e) => eprintln!("{form}: {e}"),
        }
    }
    let (ok, failed): (Vec<&FittedGLM>, Vec<&FittedGLM>) = fits.iter().partition(|f| f.converged);
    if ok.is_empty() {
        return Err(DwpError::NoViableModel("no model converged".into()).into());
    }
    println!("Extensible models:");
    for f in ok.iter().filter(|f| f.extensible()) {
        println!("  {}", f.form);
    }
    println!("\nNon-extensible models:");
    for f in ok.iter().filter(|f| !f.extensible()) {
        println!("  {}", f.form);
    }
    if !failed.is_empty() {
        println!("\nNot converged:");
        for f in &failed {
            println!("  {}", f.form);
        }
    }
    fs::create_dir_all(&a.out)?;
    io::write_fits(&fits, &a.out.join("fits.json"))?;
    write_filter_outputs(&fits, &data, &(&a.thresholds).into(), &a.out)?;
    Ok(())
}

pub fn filter(a: &FilterArgs) -> Result<()> {
    let data = Data::load(&a.profile)?;
    let fits = io::read_fits(&a.fits).with_context(|| format!("reading {}", a.fits.display()))?;
    write_filter_outputs(&fits, &data, &(&a.thresholds).into(), &a.out)?;
    Ok(())
}

fn selected_model(fits_path: &Path) -> Result<ModelForm> {
    let sel = fits_path
        .parent()
        .unwrap_or(Path::new("."))
        .join("selected.txt");
    let text = fs::read_to_string(&sel)
        .with_context(|| format!("no --model given and {} is unreadable", sel.display()))?;
    Ok(text.trim().parse()?)
}

fn print_summary(label: &str, d: &dwp_core::DrawMatrix) {
    println!("{label} quantiles:");
    print!("{}", io::summary_csv(d));
}

pub fn psi(a: &PsiArgs) -> Result<()> {
    let data = Data::load(&a.profile)?;
    let fits = io::read_fits(&a.fits)?;
    let form = match &a.model {
        Some(m) => m.parse()?,
        None => selected_model(&a.fits)?,
    };
    let fit = fits
        .iter()
        .find(|f| f.form == form)
        .ok_or_else(|| DwpError::InvalidArgument(format!("{form} is not among the saved fits")))?;
    if !fit.extensible() {
        return Err(DwpError::NotExtensible(format!(
            "{form} cannot be extrapolated beyond the search radius"
        ))
        .into());
    }
    let psi = match &data {
        Data::Rings(p) => est_psi(p, fit, a.nsim, a.seed)?,
        Data::Grid(g) => est_psi_grid(g, fit, a.nsim, a.seed)?,
    };
    let missing = psi.draws.n_missing();
    if missing > 0 {
        eprintln!(
            "warning: {} of {} draws were not extensible",
            missing / psi.draws.columns.len(),
            psi.draws.nsim()
        );
    }
    fs::create_dir_all(&a.out)?;
    io::write_draws(&psi.draws, &a.out.join("psi.csv"))?;
    fs::write(a.out.join("psi_summary.csv"), io::summary_csv(&psi.draws))?;
    println!("model {form}, nsim {}, seed {}", a.nsim, a.seed);
    print_summary("psi", &psi.draws);
    Ok(())
}

pub fn dwp(a: &DwpArgs) -> Result<()> {
    let data = Data::load(&a.profile)?;
    let draws = io::read_draws(&a.psi)?;
    let mut expect = data.turbines();
    expect.push(TOTAL.into());
    if draws.columns != expect {
        return Err(DwpError::Schema {
            source_name: a.psi.display().to_string(),
            detail: format!(
                "columns {:?} do not match the profile turbines {:?}",
                draws.columns, expect
            ),
        }
        .into());
    }
    let (n, total) = data.ncarc();
    let dwp = est_dwp_from(&draws, &n, total, a.seed)?;
    for t in dwp.zero_count_turbines() {
        eprintln!("warning: turbine {t} has no carcasses; its dwp draws equal its psi draws");
    }
    fs::create_dir_all(&a.out)?;
    io::write_draws(&dwp.draws, &a.out.join("dwp.csv"))?;
    fs::write(a.out.join("dwp_summary.csv"), io::summary_csv(&dwp.draws))?;
    print_summary("dwp", &dwp.draws);
    Ok(())
}

pub fn export(a: &ExportArgs) -> Result<()> {
    let mode = match a.mode {
        ExportMode::Point => GenestMode::Point,
        ExportMode::Simulated => GenestMode::Simulated,
    };
    let load = |p: &str| -> Result<DwpDraws> {
        let draws = io::read_draws(&PathBuf::from(p))?;
        let nc = draws.columns.len();
        Ok(DwpDraws {
            draws,
            ncarc: vec![0; nc],
        })
    };
    let classed = a.dwp.iter().any(|s| s.contains('='));
    let table = if classed {
        let mut by_class = BTreeMap::new();
        for spec in &a.dwp {
            let (class, path) = spec.split_once('=').ok_or_else(|| {
                DwpError::InvalidArgument(format!("expected CLASS=path, got '{spec}'"))
            })?;
            by_class.insert(class.to_string(), load(path)?);
        }
        format_genest_classes(&by_class, mode, a.digits)?
    } else {
        if a.dwp.len() != 1 {
            bail!(DwpError::InvalidArgument(
                "several --dwp files need CLASS=path labels".into()
            ));
        }
        format_genest(&load(&a.dwp[0])?, mode, a.digits)
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    dwp_core::export_genest(&table, &a.out)?;
    println!("{} rows -> {}", table.rows.len(), a.out.display());
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config)?;
    let scn = BallisticsScenario::from_kv(&text)?;
    let sim = dwp_core::ballistics::run_scenario(&scn, a.seed)?;
    fs::create_dir_all(&a.out)?;

    let mut reps = String::from("replicate,carcass,x,y,distance,found\n");
    let mut summary = String::from("scenario,replicate,true_psi,found_count,skipped\n");
    let name = a
        .config
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario");
    for r in &sim.replicates {
        for (k, (p, f)) in r.points.iter().zip(&r.found).enumerate() {
            let _ = writeln!(
                reps,
                "{},{},{:.3},{:.3},{:.3},{}",
                r.index + 1,
                k + 1,
                p.0,
                p.1,
                p.0.hypot(p.1),
                *f as u8
            );
        }
        let _ = writeln!(
            summary,
            "{name},{},{:.6},{},{}",
            r.index + 1,
            sim.true_psi,
            r.found_count(),
            r.skipped as u8
        );
        if r.skipped {
            eprintln!(
                "replicate {} skipped: {} found",
                r.index + 1,
                r.found_count()
            );
        }
    }
    fs::write(a.out.join("replicates.csv"), reps)?;
    fs::write(a.out.join("summary.csv"), summary)?;
    println!(
        "true psi {:.4}; {} replicates, {} skipped",
        sim.true_psi,
        sim.replicates.len(),
        sim.n_skipped()
    );

    if a.fit {
        let forms = parse_model_list(&a.models)?;
        let acc = psi_accuracy_from(&scn, &sim, &forms, &Thresholds::default())?;
        let mut rows = String::from("replicate,model,psi_hat,deltaAICc,selected\n");
        for r in &acc.rows {
            let _ = writeln!(
                rows,
                "{},{},{},{},{}",
                r.replicate + 1,
                r.form,
                r.psi_hat.map_or("NA".into(), |v| format!("{v:.6}")),
                na4(r.delta_aicc),
                r.selected as u8
            );
        }
        fs::write(a.out.join("psi_accuracy.csv"), rows)?;
        let mut s = String::from("model,n,q05,median,q95,true_psi\n");
        for f in acc.summary() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.4}",
                f.label,
                f.n,
                na4(f.q05),
                na4(f.median),
                na4(f.q95),
                acc.true_psi
            );
        }
        fs::write(a.out.join("psi_summary.csv"), &s)?;
        print!("{s}");
    }
    Ok(())
}

fn na4(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "NA".into()
    }
}
