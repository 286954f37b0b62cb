//! Configuration, dispatch and exit-code mapping.

use crate::report::{write_json, write_table};
use crate::{Cli, Command, Common};
use clap::Parser;
use hillres::asymptotics::{asymptotics_rows, predict_gap_states, sign_rule_report, verify_edge_asymptotics, SnConvention};
use hillres::floquet::{band_edges, discriminant, normalize_pair, BandRow, BandStructure, MomentumPoint, Sheet};
use hillres::potential::{load_potential_spec, DerivedConstants, PotentialPair};
use hillres::scattering::{f_and_s, scattering_bundle, scattering_coeffs, TraceRow};
use hillres::states::{
    check_exclusion, count_states, forbidden_domain_audit, locate_all_gap_states, locate_imaginary_states, locate_resonances,
    CountRow, SearchConfig, State, StateRow,
};
use hillres::HillError;
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

/// Why a run stopped.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Hill(HillError),
    Io(std::io::Error),
    Checks(usize),
}

impl From<HillError> for Failure {
    fn from(e: HillError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Hill(e)
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Hill(_) | Failure::Io(_) => EXIT_NUMERICAL,
            Failure::Checks(_) => EXIT_CHECK_FAILED,
        }
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    subcommand: &'a str,
    exit_code: i32,
    kind: String,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a HillError>,
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub spec: PathBuf,
    pub n_max: usize,
    pub radii: Vec<f64>,
    pub boxes: Vec<[f64; 4]>,
    pub search: SearchConfig,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub seed: u64,
}

fn parse_box(s: &str) -> Result<[f64; 4], Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Validation(format!("--box {s}: {e}")))?;
    let b: [f64; 4] = v.try_into().map_err(|_| Failure::Validation(format!("--box {s}: expected x0,x1,y0,y1")))?;
    if !(b[0] < b[1] && b[2] < b[3]) || b.iter().any(|x| !x.is_finite()) {
        return Err(Failure::Validation(format!("--box {s}: need x0 < x1 and y0 < y1")));
    }
    Ok(b)
}

/// Applies one `NAME=VAL` override.
fn apply_tol(cfg: &mut SearchConfig, item: &str) -> Result<(), Failure> {
    let (name, val) = item.split_once('=').ok_or_else(|| Failure::Validation(format!("--tol {item}: expected NAME=VAL")))?;
    let v: f64 = val.trim().parse().map_err(|e| Failure::Validation(format!("--tol {item}: {e}")))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Failure::Validation(format!("--tol {item}: tolerances must be positive")));
    }
    let count = |v: f64| -> Result<usize, Failure> {
        if v.fract() != 0.0 {
            return Err(Failure::Validation(format!("--tol {item}: expected an integer")));
        }
        Ok(v as usize)
    };
    match name.trim() {
        "rtol" => cfg.ctl.rtol = v,
        "atol" => cfg.ctl.atol = v,
        "max_steps" => cfg.ctl.max_steps = count(v)?,
        "frozen_rtol" => cfg.frozen_ctl.rtol = v,
        "frozen_atol" => cfg.frozen_ctl.atol = v,
        "edge_window" => cfg.edge_window = v,
        "virtual_tol" => cfg.virtual_tol = v,
        "rim_margin" => cfg.rim_margin = v,
        "axis_step" => cfg.axis_step = v,
        "v_max" => cfg.v_max = Some(v),
        "min_nodes" => cfg.min_nodes = count(v)?,
        "max_nodes" => cfg.max_nodes = count(v)?,
        "contour_nodes" => cfg.contour_nodes = count(v)?,
        "max_depth" => cfg.max_depth = count(v)?,
        other => return Err(Failure::Validation(format!("--tol: unknown tolerance '{other}'"))),
    }
    Ok(())
}

impl RunConfig {
    pub fn from_cli(cli: &Cli, env_out: Option<PathBuf>) -> Result<Self, Failure> {
        let c: &Common = &cli.common;
        let spec = c.spec.clone().ok_or_else(|| Failure::Validation("--spec is required".into()))?;
        if c.nmax < 1 {
            return Err(Failure::Validation("--nmax must be at least 1".into()));
        }
        if c.r.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Failure::Validation("--r: radii must be positive".into()));
        }
        if c.workers == Some(0) {
            return Err(Failure::Validation("--workers must be at least 1".into()));
        }
        let boxes = c.boxes.iter().map(|b| parse_box(b)).collect::<Result<_, _>>()?;
        let mut search = SearchConfig::default();
        for t in &c.tol {
            apply_tol(&mut search, t)?;
        }
        if search.min_nodes > search.max_nodes {
            return Err(Failure::Validation("--tol: min_nodes exceeds max_nodes".into()));
        }
        Ok(Self {
            command: cli.command,
            spec,
            n_max: c.nmax,
            radii: c.r.clone(),
            boxes,
            search,
            out: env_out.unwrap_or_else(|| c.out.clone()),
            workers: c.workers,
            seed: c.seed,
        })
    }
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Bands => "bands",
        Command::States => "states",
        Command::Resonances => "resonances",
        Command::Count => "count",
        Command::Audit => "audit",
        Command::Verify => "verify",
        Command::Scatter => "scatter",
    }
}

/// Best-effort output directory when argument parsing itself failed.
fn fallback_out(argv: &[String], env_out: Option<PathBuf>) -> PathBuf {
    if let Some(p) = env_out {
        return p;
    }
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            if let Some(p) = it.next() {
                return PathBuf::from(p);
            }
        } else if let Some(p) = a.strip_prefix("--out=") {
            return PathBuf::from(p);
        }
    }
    PathBuf::from("hillres-out")
}

fn write_error(dir: &Path, subcommand: &str, f: &Failure) {
    let (kind, message, error) = match f {
        Failure::Validation(m) => ("validation".to_string(), m.clone(), None),
        Failure::Hill(e) => ("numerical".to_string(), e.to_string(), Some(e)),
        Failure::Io(e) => ("io".to_string(), e.to_string(), None),
        Failure::Checks(n) => ("checks".to_string(), format!("{n} verification checks failed"), None),
    };
    let rec = ErrorRecord { subcommand, exit_code: f.code(), kind, message, error };
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = write_json(dir, "error", &rec);
    }
}

/// Runs the CLI on `argv` and returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    let env_out = std::env::var_os("HILLRES_OUT").map(PathBuf::from);
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { EXIT_VALIDATION } else { EXIT_OK };
            }
            let _ = e.print();
            let f = Failure::Validation(e.kind().to_string());
            write_error(&fallback_out(argv, env_out), "", &f);
            return EXIT_VALIDATION;
        }
    };
    let name = command_name(cli.command);
    let cfg = match RunConfig::from_cli(&cli, env_out.clone()) {
        Ok(c) => c,
        Err(f) => {
            eprintln!("hillres {name}: {}", describe(&f));
            write_error(&env_out.unwrap_or_else(|| cli.common.out.clone()), name, &f);
            return f.code();
        }
    };
    let result = match cfg.workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cfg)),
            Err(e) => Err(Failure::Validation(format!("--workers: {e}"))),
        },
        None => execute(&cfg),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("hillres {name}: {}", describe(&f));
            write_error(&cfg.out, name, &f);
            f.code()
        }
    }
}

fn describe(f: &Failure) -> String {
    match f {
        Failure::Validation(m) => format!("validation error: {m}"),
        Failure::Hill(e) => e.to_string(),
        Failure::Io(e) => format!("i/o error: {e}"),
        Failure::Checks(n) => format!("{n} verification checks failed"),
    }
}

/// Run-level metadata written next to every report.
#[derive(Serialize)]
struct Summary<'a> {
    subcommand: &'a str,
    spec: String,
    n_max: usize,
    /// Constant subtracted from `p` so that the spectrum of `H₀` starts at 0.
    energy_shift: f64,
    t: f64,
    q0: f64,
    constants: DerivedConstants,
    search: SearchConfig,
    seed: u64,
}

fn execute(cfg: &RunConfig) -> Result<(), Failure> {
    let raw = load_potential_spec(&cfg.spec)?;
    let (pair, shift) = normalize_pair(&raw, &cfg.search.ctl)?;
    std::fs::create_dir_all(&cfg.out)?;
    let name = command_name(cfg.command);
    let summary = Summary {
        subcommand: name,
        spec: cfg.spec.display().to_string(),
        n_max: cfg.n_max,
        energy_shift: shift,
        t: pair.t(),
        q0: pair.q0(),
        constants: pair.constants,
        search: cfg.search,
        seed: cfg.seed,
    };
    write_json(&cfg.out, "summary", &summary)?;
    match cfg.command {
        Command::Bands => cmd_bands(cfg, &pair),
        Command::States => cmd_states(cfg, &pair),
        Command::Resonances => cmd_resonances(cfg, &pair),
        Command::Count => cmd_count(cfg, &pair),
        Command::Audit => cmd_audit(cfg, &pair),
        Command::Verify => cmd_verify(cfg, &pair),
        Command::Scatter => cmd_scatter(cfg, &pair),
    }
}

fn bands_of(cfg: &RunConfig, pair: &PotentialPair) -> Result<BandStructure, Failure> {
    Ok(band_edges(&pair.p, cfg.n_max, &cfg.search.ctl)?)
}

fn cmd_bands(cfg: &RunConfig, pair: &PotentialPair) -> Result<(), Failure> {
    let bands = bands_of(cfg, pair)?;
    let rows: Vec<BandRow> = bands.gaps.iter().map(BandRow::from).collect();
    write_table(&cfg.out, "bands", &rows)?;
    Ok(())
}

/// Gap states followed by imaginary-axis states, checked for exclusion.
fn real_states(cfg: &RunConfig, pair: &PotentialPair, bands: &BandStructure) -> Result<Vec<State>, Failure> {
    let mut states = locate_all_gap_states(pair, bands, &cfg.search)?;
    states.extend(locate_imaginary_states(pair, &cfg.search)?);
    check_exclusion(&states)?;
    Ok(states)
}

fn cmd_states(cfg: &RunConfig, pair: &PotentialPair) -> Result<(), Failure> {
    let bands = bands_of(cfg, pair)?;
    let states = real_states(cfg, pair, &bands)?;
    let rows: Vec<StateRow> = states.iter().map(StateRow::from).collect();
    write_table(&cfg.out, "states", &rows)?;
    let asym = asymptotics_rows(pair, &bands, &states, SnConvention::default())?;
    write_table(&cfg.out, "asymptotics", &asym)?;
    if pair.q0() == 0.0 && !pair.q.is_zero() {
        let rep = sign_rule_report(pair, &bands, &states, 1..=cfg.n_max, 0.05, SnConvention::default())?;
        write_table(&cfg.out, "sign_rule", &rep.rows)?;
    }
    Ok(())
}

fn resonances_in_boxes(cfg: &RunConfig, pair: &PotentialPair) -> Result<Vec<State>, Failure> {
    let mut out = Vec::new();
    for b in &cfg.boxes {
        out.extend(locate_resonances(pair, *b, &cfg.search)?);
    }
    Ok(out)
}

fn cmd_resonances(cfg: &RunConfig, pair: &PotentialPair) -> Result<(), Failure> {
    if cfg.boxes.is_empty() {
        return Err(Failure::Validation("resonances needs at least one --box".into()));
    }
    let states = resonances_in_boxes(cfg, pair)?;
    let rows: Vec<StateRow> = states.iter().map(StateRow::from).collect();
    write_table(&cfg.out, "resonances", &rows)?;
    Ok(())
}

fn cmd_count(cfg: &RunConfig, pair: &PotentialPair) -> Result<(), Failure> {
    if cfg.radii.is_empty() {
        return Err(Failure::Validation("count needs --r".into()));
    }
    let reps: Vec<_> = cfg.radii.par_iter().map(|r| count_states(pair, *r, &cfg.search)).collect::<Result<_, _>>()?;
    let rows: Vec<CountRow> = reps.iter().map(CountRow::from).collect();
    let states: Vec<StateRow> = reps.iter().flat_map(|rep| rep.states.iter().map(StateRow::from)).collect();
    write_table(&cfg.out, "count", &rows)?;
    write_table(&cfg.out, "count_states", &states)?;
    Ok(())
}

fn r_floor(pair: &PotentialPair) -> f64 {
    180.0 * (2.0 * pair.constants.p_norm1).exp()
}

fn cmd_audit(cfg: &RunConfig, pair: &PotentialPair) -> Result<(), Failure> {
    let bands = bands_of(cfg, pair)?;
    let mut located = real_states(cfg, pair, &bands)?;
    located.extend(resonances_in_boxes(cfg, pair)?);
    let r_max = cfg.radii.iter().cloned().fold(f64::NAN, f64::max);
    let r_max = if r_max.is_nan() { 1.5 * r_floor(pair) } else { r_max };
    let rep = forbidden_domain_audit(pair, r_max, &located, &cfg.search)?;
    #[derive(Serialize, Default)]
    struct AuditRow {
        r_max: f64,
        r_floor: f64,
        c_f: f64,
        samples: usize,
        min_abs_xi: f64,
        min_ratio: f64,
        located_checked: usize,
        offending: usize,
    }
    let row = AuditRow {
        r_max: rep.r_max,
        r_floor: rep.r_floor,
        c_f: rep.c_f,
        samples: rep.samples,
        min_abs_xi: rep.min_abs_xi,
        min_ratio: rep.min_ratio,
        located_checked: rep.located_checked,
        offending: rep.offending.len(),
    };
    let mut w = csv::Writer::from_path(cfg.out.join("audit.csv")).map_err(|e| Failure::Io(e.into()))?;
    w.serialize(&row).map_err(|e| Failure::Io(e.into()))?;
    w.flush()?;
    write_json(&cfg.out, "audit", &rep)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Default)]
struct CheckRow {
    check: String,
    value: f64,
    threshold: f64,
    pass: bool,
}

fn check(name: &str, value: f64, threshold: f64) -> CheckRow {
    CheckRow { check: name.into(), value, threshold, pass: value <= threshold }
}

fn sample_points(seed: u64, n: usize, re: (f64, f64), im: (f64, f64)) -> Vec<C> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| C::new(rng.gen_range(re.0..re.1), if im.0 < im.1 { rng.gen_range(im.0..im.1) } else { im.0 })).collect()
}

fn cmd_verify(cfg: &RunConfig, pair: &PotentialPair) -> Result<(), Failure> {
    let ctl = &cfg.search.ctl;
    let bands = bands_of(cfg, pair)?;
    let top = bands.z_max();
    let zs = sample_points(cfg.seed, 64, (-top, top), (-3.0, 3.0));
    let monos: Vec<_> = zs.par_iter().map(|z| discriminant(&pair.p, *z, ctl)).collect::<Result<_, _>>()?;
    let mut rows = vec![
        check("wronskian_drift", monos.iter().map(|m| m.wronskian_drift).fold(0.0, f64::max), 1e-10),
        check("ld0_residual", monos.iter().map(|m| m.ld0_residual).fold(0.0, f64::max), 1e-9),
    ];
    let worst = zs
        .par_iter()
        .zip(&monos)
        .map(|(z, m)| {
            let (f, s) = f_and_s(pair, *z, ctl)?;
            Ok(s.map_or(0.0, |s| (f - 4.0 * m.one_minus_delta_sq() - s).norm() / (1.0 + f.norm())))
        })
        .collect::<Result<Vec<f64>, HillError>>()?
        .into_iter()
        .fold(0.0, f64::max);
    rows.push(check("two_route_f", worst, 1e-7));
    let band_pts: Vec<f64> = sample_points(cfg.seed ^ 0x5eed, 4000, (0.05, top), (0.0, 0.0))
        .into_iter()
        .map(|z| z.re)
        .filter(|x| bands.locate(*x).is_err() && !bands.near_edge(*x, 1e-3))
        .take(64)
        .collect();
    let unit = band_pts
        .par_iter()
        .map(|x| scattering_coeffs(pair, *x, Some(&bands), ctl).map(|s| s.unitarity.abs()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    rows.push(check("unitarity", unit, 1e-8));
    let states = locate_all_gap_states(pair, &bands, &cfg.search)?;
    let mut axis = locate_imaginary_states(pair, &cfg.search)?;
    let odd = bands
        .open_gaps()
        .filter(|g| states.iter().filter(|s| s.gap == Some(g.n)).map(|s| s.multiplicity).sum::<u32>() % 2 == 1)
        .count();
    rows.push(check("odd_gap_counts", odd as f64, 0.0));
    axis.extend(states.iter().copied());
    rows.push(check("exclusion_violations", check_exclusion(&axis).map_or(1.0, |_| 0.0), 0.0));
    let rim_bad = states.iter().filter(|s| s.rim_check == Some(false)).count();
    rows.push(CheckRow { check: "rim_rule_disagreements (reported)".into(), value: rim_bad as f64, threshold: f64::INFINITY, pass: true });
    let mut j_bad = 0usize;
    for g in bands.open_gaps() {
        let Ok(pr) = predict_gap_states(pair, &bands, g.n, SnConvention::default()) else { continue };
        if !pr.resolved(3.0) {
            continue;
        }
        let (lo, hi) = hillres::asymptotics::observed_pair(&states, g);
        for (s, pj) in [(lo, pr.j_minus), (hi, pr.j_plus)] {
            if let Some(js) = s.and_then(|s| s.j_sign) {
                j_bad += (js * pj < 0.0) as usize;
            }
        }
    }
    rows.push(check("j_route_sign_disagreements", j_bad as f64, 0.0));
    if !pair.p.is_zero() && cfg.n_max >= 8 {
        let lo = (cfg.n_max / 4).max(5);
        let rep = verify_edge_asymptotics(pair, &bands, lo..=cfg.n_max);
        rows.push(CheckRow { check: "edge_asymptotics_bounded".into(), value: rep.constant, threshold: f64::INFINITY, pass: rep.bounded });
    }
    if pair.q0() == 0.0 && !pair.q.is_zero() {
        let rep = sign_rule_report(pair, &bands, &states, 1..=cfg.n_max, 0.05, SnConvention::default())?;
        rows.push(check("sign_rule_mismatches", rep.mismatches as f64, 0.0));
    }
    let audit = forbidden_domain_audit(pair, r_floor(pair), &axis, &cfg.search);
    rows.push(check("states_in_forbidden_domain", audit.map_or(1.0, |_| 0.0), 0.0));
    write_table(&cfg.out, "verify", &rows)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Failure::Checks(failed));
    }
    Ok(())
}

fn cmd_scatter(cfg: &RunConfig, pair: &PotentialPair) -> Result<(), Failure> {
    let ctl = &cfg.search.ctl;
    let bands = bands_of(cfg, pair)?;
    let top = bands.z_max();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pts: Vec<MomentumPoint> = Vec::new();
    let n_axis = 400;
    for j in 0..n_axis {
        let x = top * (j as f64 + rng.gen_range(0.05..0.95)) / n_axis as f64;
        pts.push(MomentumPoint::new(C::new(x, 0.0)));
    }
    for g in bands.open_gaps() {
        for j in 1..8 {
            let x = g.e_minus + g.len() * j as f64 / 8.0;
            pts.push(MomentumPoint::on_rim(x, g.n, true));
            pts.push(MomentumPoint::on_rim(x, g.n, false));
        }
    }
    for theta in [PI / 4.0, PI / 2.0, -PI / 8.0, -PI / 4.0, -PI / 2.0] {
        for j in 1..=50 {
            let rho = top * (j as f64 - rng.gen_range(0.05..0.95)) / 50.0;
            let z = C::from_polar(rho, theta);
            let sheet = if z.im > 0.0 { Sheet::Physical } else { Sheet::NonPhysical };
            pts.push(MomentumPoint { z, sheet, rim: None });
        }
    }
    let rows: Vec<Option<TraceRow>> = pts
        .par_iter()
        .map(|p| match scattering_bundle(pair, p, Some(&bands), ctl) {
            Ok(b) => Ok(Some(TraceRow::from(&b))),
            Err(HillError::DirichletSingularity { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<TraceRow> = rows.into_iter().flatten().collect();
    write_table(&cfg.out, "scatter", &rows)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_validation<T>(r: Result<T, Failure>) -> bool {
        matches!(r, Err(Failure::Validation(_)))
    }

    #[test]
    fn box_needs_four_ordered_numbers() {
        assert_eq!(parse_box("0,2,-3,-1").unwrap(), [0.0, 2.0, -3.0, -1.0]);
        assert!(is_validation(parse_box("0,2,-3")));
        assert!(is_validation(parse_box("2,0,-3,-1")));
        assert!(is_validation(parse_box("0,2,-1,-3")));
        assert!(is_validation(parse_box("0,inf,-3,-1")));
        assert!(is_validation(parse_box("a,2,-3,-1")));
    }

    #[test]
    fn tolerances_are_positive_and_named() {
        let mut cfg = SearchConfig::default();
        apply_tol(&mut cfg, "rtol=1e-9").unwrap();
        apply_tol(&mut cfg, "max_nodes=64").unwrap();
        assert_eq!((cfg.ctl.rtol, cfg.max_nodes), (1e-9, 64));
        assert!(is_validation(apply_tol(&mut cfg, "rtol=0")));
        assert!(is_validation(apply_tol(&mut cfg, "atol=nan")));
        assert!(is_validation(apply_tol(&mut cfg, "max_nodes=2.5")));
        assert!(is_validation(apply_tol(&mut cfg, "bogus=1")));
        assert!(is_validation(apply_tol(&mut cfg, "rtol")));
    }
}
