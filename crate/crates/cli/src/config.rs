//! Run configuration: a TOML file, flag overrides and defaults.

use std::fmt::Debug;
use std::path::{Path, PathBuf};

use bathysize_core::acceptance::bump_amplitudes;
use bathysize_core::functionals::Window;
use bathysize_core::harness::{BottomFamily, Datum};
use bathysize_core::solver::{Backend, FluxRecovery};
use bathysize_core::{FluidDomain, Profile, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MIN_CELLS: usize = 2;
pub const MAX_CELLS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Solve,
    Dtn,
    Estimate,
    Sweep,
    Converge,
    Verify,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Solve => "solve",
            Subcommand::Dtn => "dtn",
            Subcommand::Estimate => "estimate",
            Subcommand::Sweep => "sweep",
            Subcommand::Converge => "converge",
            Subcommand::Verify => "verify",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Svg,
    Txt,
}

/// A datum given by name (`mode3`, `gaussian`) or as a full table.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum DatumSpec {
    Name(String),
    Full(Datum),
}

pub fn parse_datum(name: &str) -> Result<Datum, CliError> {
    Ok(name.parse::<Datum>()?)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    subcommand: Option<Subcommand>,
    domain: Option<RawDomain>,
    discretization: Option<RawDiscretization>,
    data: Option<RawData>,
    window: Option<RawWindow>,
    output: Option<RawOutput>,
    sweep: Option<RawSweep>,
    converge: Option<RawConverge>,
    dtn: Option<RawDtn>,
    report: Option<RawReport>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    width: Option<f64>,
    surface: Option<Profile>,
    bottom: Option<Profile>,
    second_bottom: Option<Profile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiscretization {
    nx: Option<usize>,
    ny: Option<usize>,
    tol: Option<f64>,
    backend: Option<Backend>,
    flux_recovery: Option<FluxRecovery>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    datums: Option<Vec<DatumSpec>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindow {
    intervals: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    directory: Option<PathBuf>,
    formats: Option<Vec<Format>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    family: Option<BottomFamily>,
    amplitudes: Option<Vec<f64>>,
    resolutions: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConverge {
    resolutions: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDtn {
    k_max: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReport {
    r: Option<f64>,
    fatness_h: Option<f64>,
}

/// Values given on the command line; they take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub subcommand: Option<Subcommand>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub tol: Option<f64>,
    pub output: Option<PathBuf>,
    pub formats: Option<Vec<Format>>,
    pub datums: Option<Vec<String>>,
    pub amplitudes: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DomainBlock {
    pub width: f64,
    pub surface: Profile,
    pub bottom: Profile,
    pub second_bottom: Option<Profile>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Discretization {
    pub nx: usize,
    pub ny: usize,
    pub tol: f64,
    pub backend: Backend,
    pub flux_recovery: FluxRecovery,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputBlock {
    /// Not part of the canonical form: moving the output does not change
    /// the input hash.
    #[serde(skip)]
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepBlock {
    pub family: BottomFamily,
    pub amplitudes: Vec<f64>,
    pub resolutions: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportBlock {
    pub r: Option<f64>,
    pub fatness_h: Option<f64>,
}

/// Fully validated configuration with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub domain: DomainBlock,
    pub discretization: Discretization,
    pub data: Vec<Datum>,
    pub windows: Vec<Window>,
    pub output: OutputBlock,
    pub sweep: SweepBlock,
    pub converge: Vec<(usize, usize)>,
    pub k_max: usize,
    pub report: ReportBlock,
}

impl RunConfig {
    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            backend: self.discretization.backend,
            tol: self.discretization.tol,
            max_iter: None,
            flux_recovery: self.discretization.flux_recovery,
        }
    }

    pub fn fluid_domain(&self) -> Result<FluidDomain, CliError> {
        Ok(FluidDomain::new(self.domain.width, self.domain.bottom.clone(), self.domain.surface.clone())?)
    }

    /// Canonical TOML rendering, hashed into the manifest.
    pub fn canonical(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("unserializable config: {e}"))
    }
}

fn or_default<T: Debug>(value: Option<T>, key: &str, default: impl FnOnce() -> T) -> T {
    match value {
        Some(v) => v,
        None => {
            let v = default();
            log::info!("default applied: {key} = {v:?}");
            v
        }
    }
}

fn check_cells(key: &str, n: usize) -> Result<(), CliError> {
    if !(MIN_CELLS..=MAX_CELLS).contains(&n) {
        return Err(CliError::Config(format!(
            "{key} = {n} is outside the allowed range [{MIN_CELLS}, {MAX_CELLS}]"
        )));
    }
    Ok(())
}

/// Reads and validates a configuration file, then applies `overrides`.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?;
            parse_raw(&text)?
        }
        None => RawConfig::default(),
    };
    resolve(raw, overrides)
}

/// Parses configuration text without overrides.
#[cfg(test)]
pub fn parse_str(text: &str) -> Result<RunConfig, CliError> {
    resolve(parse_raw(text)?, &Overrides::default())
}

fn parse_raw(text: &str) -> Result<RawConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {}", e.message())))
}

fn resolve(raw: RawConfig, ov: &Overrides) -> Result<RunConfig, CliError> {
    let subcommand = match (ov.subcommand, raw.subcommand) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Config(format!(
                "subcommand `{}` on the command line conflicts with `{}` in the config file",
                a.name(),
                b.name()
            )))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => {
            return Err(CliError::Config(
                "no subcommand given (expected one of solve, dtn, estimate, sweep, converge, verify)".into(),
            ))
        }
    };

    let d = raw.domain.unwrap_or_default();
    let width = or_default(d.width, "domain.width", || 1.0);
    if !(width.is_finite() && width > 0.0) {
        return Err(CliError::Config(format!("domain.width must be positive (got {width})")));
    }
    let surface = or_default(d.surface, "domain.surface", || Profile::flat(1.0));
    let bottom = or_default(d.bottom, "domain.bottom", || Profile::flat(0.0));
    let domain = DomainBlock { width, surface, bottom, second_bottom: d.second_bottom };
    FluidDomain::new(width, domain.bottom.clone(), domain.surface.clone())?;
    if let Some(b1) = &domain.second_bottom {
        FluidDomain::new(width, b1.clone(), domain.surface.clone())
            .map_err(|e| CliError::Config(format!("domain.second_bottom: {e}")))?;
    }

    let disc = raw.discretization.unwrap_or_default();
    let nx = ov.nx.or(disc.nx);
    let ny = ov.ny.or(disc.ny);
    let tol = ov.tol.or(disc.tol);
    let discretization = Discretization {
        nx: or_default(nx, "discretization.nx", || 128),
        ny: or_default(ny, "discretization.ny", || 64),
        tol: or_default(tol, "discretization.tol", || 1e-10),
        backend: or_default(disc.backend, "discretization.backend", Backend::default),
        flux_recovery: or_default(disc.flux_recovery, "discretization.flux_recovery", FluxRecovery::default),
    };
    check_cells("discretization.nx", discretization.nx)?;
    check_cells("discretization.ny", discretization.ny)?;
    if !(discretization.tol.is_finite() && discretization.tol > 0.0 && discretization.tol < 1.0) {
        return Err(CliError::Config(format!(
            "discretization.tol = {} must lie in (0, 1)",
            discretization.tol
        )));
    }

    let data = match &ov.datums {
        Some(names) => names.iter().map(|n| parse_datum(n)).collect::<Result<Vec<_>, _>>()?,
        None => match raw.data.and_then(|d| d.datums) {
            Some(specs) => specs
                .into_iter()
                .map(|s| match s {
                    DatumSpec::Name(n) => parse_datum(&n),
                    DatumSpec::Full(d) => Ok(d),
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => or_default(None, "data.datums", || vec![Datum::Mode { k: 1 }]),
        },
    };
    if data.is_empty() {
        return Err(CliError::Config("data.datums is empty".into()));
    }

    let intervals = or_default(raw.window.and_then(|w| w.intervals), "window.intervals", Vec::new);
    let mut windows = Vec::with_capacity(intervals.len());
    for [a, b] in intervals {
        let w = Window::new(a, b).map_err(|e| CliError::Config(format!("window.intervals: {e}")))?;
        if a < 0.0 || b > width {
            return Err(CliError::Config(format!("window.intervals: [{a}, {b}] is not inside [0, {width}]")));
        }
        windows.push(w);
    }

    let o = raw.output.unwrap_or_default();
    let output = OutputBlock {
        directory: or_default(ov.output.clone().or(o.directory), "output.directory", || PathBuf::from("out")),
        formats: or_default(ov.formats.clone().or(o.formats), "output.formats", || {
            vec![Format::Csv, Format::Svg, Format::Txt]
        }),
    };
    if output.formats.is_empty() {
        return Err(CliError::Config("output.formats is empty".into()));
    }

    let s = raw.sweep.unwrap_or_default();
    let sweep = SweepBlock {
        family: or_default(s.family, "sweep.family", || BottomFamily::centered_bump(width)),
        amplitudes: or_default(ov.amplitudes.clone().or(s.amplitudes), "sweep.amplitudes", bump_amplitudes),
        resolutions: or_default(s.resolutions.map(pairs), "sweep.resolutions", || {
            vec![(discretization.nx, discretization.ny)]
        }),
    };
    for &(nx, ny) in &sweep.resolutions {
        check_cells("sweep.resolutions nx", nx)?;
        check_cells("sweep.resolutions ny", ny)?;
    }
    if subcommand == Subcommand::Sweep {
        if sweep.amplitudes.is_empty() {
            return Err(CliError::Config("sweep.amplitudes is empty: the parameter grid has 0 points".into()));
        }
        if sweep.resolutions.is_empty() {
            return Err(CliError::Config("sweep.resolutions is empty".into()));
        }
    }

    let converge = or_default(raw.converge.and_then(|c| c.resolutions).map(pairs), "converge.resolutions", || {
        [16, 32, 64, 128].iter().map(|&n| (n, n)).collect()
    });
    for &(nx, ny) in &converge {
        check_cells("converge.resolutions nx", nx)?;
        check_cells("converge.resolutions ny", ny)?;
    }
    if subcommand == Subcommand::Converge && converge.len() < 2 {
        return Err(CliError::Config(format!(
            "converge.resolutions needs at least 2 entries (got {})",
            converge.len()
        )));
    }

    let k_max = or_default(raw.dtn.and_then(|d| d.k_max), "dtn.k_max", || 5.min(discretization.nx + 1));
    if k_max == 0 || k_max > discretization.nx + 1 {
        return Err(CliError::Config(format!(
            "dtn.k_max = {k_max} must lie in [1, nx + 1 = {}]",
            discretization.nx + 1
        )));
    }

    let rep = raw.report.unwrap_or_default();
    for (key, v) in [("report.r", rep.r), ("report.fatness_h", rep.fatness_h)] {
        if let Some(v) = v {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::Config(format!("{key} must be positive (got {v})")));
            }
        }
    }
    let report = ReportBlock { r: rep.r, fatness_h: rep.fatness_h };

    if subcommand == Subcommand::Estimate && domain.second_bottom.is_none() {
        return Err(CliError::Config("estimate needs domain.second_bottom".into()));
    }

    Ok(RunConfig {
        subcommand,
        domain,
        discretization,
        data,
        windows,
        output,
        sweep,
        converge,
        k_max,
        report,
    })
}

fn pairs(v: Vec<[usize; 2]>) -> Vec<(usize, usize)> {
    v.into_iter().map(|[a, b]| (a, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_verify_config() {
        let c = parse_str("subcommand = \"verify\"").unwrap();
        assert_eq!(c.subcommand, Subcommand::Verify);
        assert_eq!((c.discretization.nx, c.discretization.ny), (128, 64));
        assert_eq!(c.discretization.tol, 1e-10);
        assert_eq!(c.domain.surface, Profile::flat(1.0));
        assert_eq!(c.data, vec![Datum::Mode { k: 1 }]);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_str("subcommand = \"solve\"\n[discretization]\nnz = 3\n").unwrap_err();
        assert!(e.to_string().contains("nz"), "{e}");
    }

    #[test]
    fn nx_out_of_range() {
        let e = parse_str("subcommand = \"solve\"\n[discretization]\nnx = 0\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("nx") && msg.contains("[2, 4096]"), "{msg}");
        assert!(parse_str("subcommand = \"solve\"\n[discretization]\nny = 5000\n").is_err());
    }

    #[test]
    fn gap_violation_reports_both_levels() {
        let text = r#"
subcommand = "solve"
[domain]
bottom = { kind = "bump", amplitude = 1.2, center = 0.5, halfwidth = 0.25 }
"#;
        let msg = parse_str(text).unwrap_err().to_string();
        assert!(msg.contains("gap") && msg.contains("bottom 1.0") && msg.contains("surface 1.000000"), "{msg}");
    }

    #[test]
    fn mixed_datum_list() {
        let text = r#"
subcommand = "solve"
[discretization]
nx = 2
ny = 2
[data]
datums = ["mode2", "gaussian", { kind = "nodal", values = [1.0, 0.0, -1.0] }]
"#;
        let c = parse_str(text).unwrap();
        assert_eq!(c.data.len(), 3);
        assert_eq!(c.data[0], Datum::Mode { k: 2 });
        assert!(matches!(c.data[2], Datum::Nodal { .. }));
        assert!(parse_datum("mode").is_err());
    }

    #[test]
    fn empty_sweep_grid() {
        let e = parse_str("subcommand = \"sweep\"\n[sweep]\namplitudes = []\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("0 points"));
    }

    #[test]
    fn overrides_take_precedence() {
        let ov = Overrides { subcommand: Some(Subcommand::Solve), nx: Some(8), ..Default::default() };
        let c = resolve(parse_raw("[discretization]\nnx = 16\n").unwrap(), &ov).unwrap();
        assert_eq!(c.discretization.nx, 8);
        let ov = Overrides { subcommand: Some(Subcommand::Dtn), ..Default::default() };
        assert!(resolve(parse_raw("subcommand = \"solve\"").unwrap(), &ov).is_err());
        assert!(resolve(RawConfig::default(), &Overrides::default()).is_err());
    }

    #[test]
    fn windows_must_fit_the_surface() {
        assert!(parse_str("subcommand = \"sweep\"\n[window]\nintervals = [[0.2, 1.5]]\n").is_err());
        let c = parse_str("subcommand = \"sweep\"\n[window]\nintervals = [[0.2, 0.8]]\n").unwrap();
        assert_eq!(c.windows, vec![Window { start: 0.2, end: 0.8 }]);
    }

    #[test]
    fn canonical_form_is_stable() {
        let a = parse_str("subcommand = \"verify\"").unwrap().canonical();
        let b = parse_str("subcommand = \"verify\"\n[discretization]\nnx = 128\n").unwrap().canonical();
        assert_eq!(a, b);
        assert!(a.contains("nx = 128"), "{a}");
    }
}
