//! Configuration-driven experiment runner: builds the problem, computes the
//! fine reference solve once, runs multiscale solves over a grid of coarse
//! resolutions and oversampling parameters, and reports energy errors as CSV
//! together with convergence/decay rate fits.

use crate::assemble::{
    assemble_load, assemble_operator, energy_norm, solve_dirichlet, sub, Coefficient,
    CoefficientSet, EnergyOperator, FemError,
};
use crate::dof::{build_space, DofError, DofMap};
use crate::geometry::{build_domain, GeometryError, GeometrySpec, MixedDomain};
use crate::interp::{assemble_constraints, InterpError, Interpolator};
use crate::lod::{build_basis, build_restricted, solve_multiscale, BasisVariant, LodContext, LodError};
use crate::mesh::{
    agglomerate, block_assignment, build_mesh, MeshError, MeshHierarchy, MeshPair,
    RegularityReport,
};
use serde::Deserialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Dof(#[from] DofError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Lod(#[from] LodError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("rate fit needs at least two rows")]
    TooFewPoints,
    #[error("rate fit requires positive errors, got {0}")]
    NonPositiveError(f64),
}

/// Coefficient field input: a constant, an analytic id, or a seeded
/// random checkerboard that is piecewise constant on the fine mesh.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum CoefSpec {
    Constant(f64),
    Analytic(String),
    Random { seed: u64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSpec {
    pub a0: CoefSpec,
    pub a1: CoefSpec,
    pub b1: CoefSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesSpec {
    pub f0: String,
    pub f1: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantSpec {
    Global,
    Stabilized,
    Naive,
}

impl From<VariantSpec> for BasisVariant {
    fn from(v: VariantSpec) -> BasisVariant {
        match v {
            VariantSpec::Global => BasisVariant::Global,
            VariantSpec::Stabilized => BasisVariant::Stabilized,
            VariantSpec::Naive => BasisVariant::Naive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpSpec {
    Nodal,
    Pou,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshSpec {
    Structured,
    Agglomerated,
}

fn default_ell() -> Vec<usize> {
    vec![1, 2, 3, 4]
}

fn default_interp() -> InterpSpec {
    InterpSpec::Nodal
}

fn default_mesh() -> MeshSpec {
    MeshSpec::Structured
}

fn default_rho0() -> f64 {
    0.3
}

fn default_rho1() -> f64 {
    0.9
}

/// One experiment: geometry, data, resolution grid, variant and output.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    /// Path to the geometry spec file, relative to the config file.
    pub geometry: PathBuf,
    pub variant: VariantSpec,
    /// Fine cells per unit length (h = 1/fine).
    pub fine: usize,
    /// Coarse cells per unit length, one run per entry (H = 1/coarse).
    pub coarse: Vec<usize>,
    #[serde(default = "default_ell")]
    pub ell: Vec<usize>,
    #[serde(default)]
    pub threads: usize,
    pub output: PathBuf,
    #[serde(default = "default_interp")]
    pub interp: InterpSpec,
    #[serde(default = "default_mesh")]
    pub mesh: MeshSpec,
    #[serde(default = "default_rho0")]
    pub rho0: f64,
    #[serde(default = "default_rho1")]
    pub rho1: f64,
    pub coefficients: CoefficientsSpec,
    pub sources: SourcesSpec,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)?;
        // Geometry is resolved relative to the config file location.
        if cfg.geometry.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.geometry = dir.join(&cfg.geometry);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.coarse.is_empty() {
            return Err(HarnessError::Config("empty coarse grid".into()));
        }
        for &nc in &self.coarse {
            if nc == 0 || !self.fine.is_multiple_of(nc) {
                return Err(HarnessError::Config(format!(
                    "fine resolution {} is not a multiple of coarse resolution {nc}",
                    self.fine
                )));
            }
            if self.fine / nc < 2 {
                return Err(HarnessError::Config(format!(
                    "refinement factor {} below 2 for coarse resolution {nc}",
                    self.fine / nc
                )));
            }
        }
        if self.ell.is_empty() && self.variant != VariantSpec::Global {
            return Err(HarnessError::Config("empty oversampling list".into()));
        }
        if self.mesh == MeshSpec::Agglomerated && self.interp == InterpSpec::Nodal {
            return Err(HarnessError::Config(
                "agglomerated coarse meshes require the pou interpolation".into(),
            ));
        }
        for (name, spec) in [
            ("a0", &self.coefficients.a0),
            ("a1", &self.coefficients.a1),
            ("b1", &self.coefficients.b1),
        ] {
            if let CoefSpec::Random { lo, hi, .. } = spec {
                if *lo <= 0.0 || hi < lo {
                    return Err(HarnessError::Config(format!(
                        "random range [{lo}, {hi}] for {name} violates ellipticity"
                    )));
                }
            }
            if let CoefSpec::Constant(v) = spec {
                if *v <= 0.0 {
                    return Err(HarnessError::Config(format!(
                        "constant {v} for {name} violates ellipticity"
                    )));
                }
            }
        }
        source_fn(&self.sources.f0)
            .ok_or_else(|| HarnessError::Config(format!("unknown source id {:?}", self.sources.f0)))?;
        source_fn(&self.sources.f1)
            .ok_or_else(|| HarnessError::Config(format!("unknown source id {:?}", self.sources.f1)))?;
        Ok(())
    }
}

/// Counter-based unit random keyed by (seed, element index): the field does
/// not depend on iteration order or thread count.
fn keyed_unit(seed: u64, index: u64) -> f64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn analytic_coefficient(id: &str) -> Option<Coefficient> {
    use std::f64::consts::PI;
    match id {
        "one" => Some(Coefficient::constant(1.0)),
        "osc30" => Some(Coefficient::analytic(move |x, y| {
            (30.0 * PI * x).sin() * (30.0 * PI * y).sin() + 2.0
        })),
        _ => None,
    }
}

/// Named analytic sources available to config files.
pub fn source_fn(id: &str) -> Option<fn(f64, f64) -> f64> {
    use std::f64::consts::PI;
    fn zero(_: f64, _: f64) -> f64 {
        0.0
    }
    fn one(_: f64, _: f64) -> f64 {
        1.0
    }
    fn sin_pi(x: f64, y: f64) -> f64 {
        (PI * x).sin() * (PI * y).sin()
    }
    fn linear_x2y(x: f64, y: f64) -> f64 {
        x + 2.0 * y
    }
    match id {
        "zero" => Some(zero),
        "one" => Some(one),
        "sin_pi" => Some(sin_pi),
        "linear_x2y" => Some(linear_x2y),
        _ => None,
    }
}

/// Builds one coefficient field on the fine mesh.
fn build_coefficient(
    spec: &CoefSpec,
    n_elements: usize,
    element_index_base: u64,
    seed_override: Option<u64>,
) -> Result<Coefficient, HarnessError> {
    match spec {
        CoefSpec::Constant(v) => {
            if *v <= 0.0 {
                return Err(HarnessError::Config(format!("constant coefficient {v} not positive")));
            }
            Ok(Coefficient::constant(*v))
        }
        CoefSpec::Analytic(id) => analytic_coefficient(id)
            .ok_or_else(|| HarnessError::Config(format!("unknown coefficient id {id:?}"))),
        CoefSpec::Random { seed, lo, hi } => {
            if *lo <= 0.0 {
                return Err(HarnessError::Config(format!("random low bound {lo} not positive")));
            }
            let s = seed_override.unwrap_or(*seed);
            let values: Vec<f64> = (0..n_elements)
                .map(|e| lo + (hi - lo) * keyed_unit(s, element_index_base + e as u64))
                .collect();
            Ok(Coefficient::per_element(values))
        }
    }
}

/// Builds the full coefficient set for a mesh. Bulk and interface random
/// fields draw from disjoint counter ranges of the same seed.
pub fn build_coefficients(
    spec: &CoefficientsSpec,
    mesh: &MeshPair,
    seed_override: Option<u64>,
) -> Result<CoefficientSet, HarnessError> {
    let n_iface = mesh.ifaces.len();
    Ok(CoefficientSet {
        a0: build_coefficient(&spec.a0, mesh.n_cells(), 0, seed_override)?,
        a1: build_coefficient(&spec.a1, n_iface, 1 << 40, seed_override)?,
        b1: build_coefficient(&spec.b1, n_iface, 2 << 40, seed_override)?,
    })
}

/// One result row of an experiment run.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub experiment: String,
    pub h_coarse: f64,
    pub h_fine: f64,
    pub ell: usize,
    pub variant: String,
    pub err_energy: f64,
    pub err_rel: f64,
    pub n_coarse: usize,
    pub n_fine_free: usize,
    pub wall_seconds: f64,
}

pub const CSV_HEADER: &str =
    "experiment,H,h,ell,variant,err_energy,err_rel,n_coarse,n_fine_free,wall_seconds";

impl ReportRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.12e},{:.12e},{},{},{:.3}",
            self.experiment,
            self.h_coarse,
            self.h_fine,
            self.ell,
            self.variant,
            self.err_energy,
            self.err_rel,
            self.n_coarse,
            self.n_fine_free,
            self.wall_seconds
        )
    }
}

/// Writes the report atomically (temp file then rename).
pub fn write_csv(rows: &[ReportRow], path: &Path) -> Result<(), HarnessError> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        writeln!(out, "{CSV_HEADER}")?;
        for row in rows {
            writeln!(out, "{}", row.csv_line())?;
        }
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Prepared fine-scale problem shared by all cells of one experiment.
pub struct Session {
    pub config: ExperimentConfig,
    pub domain: MixedDomain,
    pub mesh: MeshPair,
    pub dofs: DofMap,
    pub coefs: CoefficientSet,
    pub operator: EnergyOperator,
    pub load: Vec<f64>,
    pub reference: Vec<f64>,
    pub reference_norm: f64,
}

impl Session {
    pub fn prepare(config: ExperimentConfig, seed_override: Option<u64>) -> Result<Session, HarnessError> {
        config.validate()?;
        let spec = GeometrySpec::from_path(&config.geometry)?;
        let domain = build_domain(&spec)?;
        let mesh = build_mesh(&domain, config.fine)?;
        let dofs = build_space(&mesh, &domain)?;
        let coefs = build_coefficients(&config.coefficients, &mesh, seed_override)?;
        let operator = assemble_operator(&dofs, &mesh, &coefs, None)?;
        let f0 = source_fn(&config.sources.f0).expect("validated");
        let f1 = source_fn(&config.sources.f1).expect("validated");
        let load = assemble_load(&dofs, &mesh, &f0, &f1);
        let reference = solve_dirichlet(&operator, &load)?;
        let reference_norm = energy_norm(&operator, &reference)?;
        Ok(Session {
            config,
            domain,
            mesh,
            dofs,
            coefs,
            operator,
            load,
            reference,
            reference_norm,
        })
    }

    /// Runs one (coarse resolution, oversampling) cell. Returns the report
    /// row, the multiscale solution, and the regularity report when the
    /// coarse mesh is agglomerated.
    pub fn run_cell(
        &self,
        n_coarse: usize,
        ell: usize,
    ) -> Result<(ReportRow, Vec<f64>, Option<RegularityReport>), HarnessError> {
        let start = Instant::now();
        let variant: BasisVariant = self.config.variant.into();
        let (topo, report, hier) = match self.config.mesh {
            MeshSpec::Structured => {
                let hier = MeshHierarchy::build(&self.domain, n_coarse, self.config.fine / n_coarse)?;
                debug_assert_eq!(hier.fine, self.mesh);
                (hier.topology.clone(), None, Some(hier))
            }
            MeshSpec::Agglomerated => {
                let assignment = block_assignment(&self.mesh, self.config.fine / n_coarse)?;
                let agg = agglomerate(
                    &self.mesh,
                    &assignment,
                    self.config.rho0,
                    self.config.rho1,
                    1.0 / n_coarse as f64,
                )?;
                (agg.topology, Some(agg.report), None)
            }
        };
        let interp = match self.config.interp {
            InterpSpec::Nodal => Interpolator::nodal(hier.as_ref().expect("structured"), &self.dofs),
            InterpSpec::Pou => Interpolator::pou(&self.mesh, &self.dofs, &topo)?,
        };
        let b = assemble_constraints(&self.dofs, &self.mesh, &topo);
        let restricted = build_restricted(&self.dofs, &self.mesh, &self.coefs, &topo)?;
        let ctx = LodContext {
            mesh: &self.mesh,
            dofs: &self.dofs,
            topo: &topo,
            a: &self.operator,
            b: &b,
            restricted: &restricted,
        };
        let basis = build_basis(&ctx, &interp, ell.max(1), variant)?;
        let (_, u) = solve_multiscale(&basis, &self.operator, &self.load)?;
        let err = energy_norm(&self.operator, &sub(&self.reference, &u))?;
        let row = ReportRow {
            experiment: self.config.experiment.clone(),
            h_coarse: 1.0 / n_coarse as f64,
            h_fine: 1.0 / self.config.fine as f64,
            ell: if variant == BasisVariant::Global { 0 } else { ell },
            variant: variant.to_string(),
            err_energy: err,
            err_rel: if self.reference_norm > 0.0 { err / self.reference_norm } else { 0.0 },
            n_coarse: topo.n_elements(),
            n_fine_free: self.dofs.n_free(),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        Ok((row, u, report))
    }
}

/// Full experiment output: rows in (H descending, ell ascending) order and
/// the regularity reports of agglomerated runs.
pub struct RunOutput {
    pub rows: Vec<ReportRow>,
    pub reports: Vec<RegularityReport>,
}

/// Runs the whole (H, ell) grid of a config and writes the CSV report.
pub fn run_experiment(
    config: ExperimentConfig,
    seed_override: Option<u64>,
) -> Result<RunOutput, HarnessError> {
    let session = Session::prepare(config, seed_override)?;
    let mut coarse = session.config.coarse.clone();
    coarse.sort_unstable();
    coarse.dedup();
    let ells: Vec<usize> = if session.config.variant == VariantSpec::Global {
        vec![0]
    } else {
        let mut e = session.config.ell.clone();
        e.sort_unstable();
        e.dedup();
        e
    };
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &nc in &coarse {
        for &ell in &ells {
            let (row, _, report) = session.run_cell(nc, ell).map_err(|e| {
                HarnessError::Config(format!(
                    "cell (H = 1/{nc}, ell = {ell}) failed: {e}"
                ))
            })?;
            rows.push(row);
            if let Some(r) = report {
                reports.push(r);
            }
        }
    }
    write_csv(&rows, &session.config.output)?;
    Ok(RunOutput { rows, reports })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMode {
    /// Experimental order of convergence against the coarse mesh size.
    HRate,
    /// Exponential decay rate against the oversampling parameter.
    EllDecay,
}

/// Rate fit: per-step rates and the least-squares slope.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub per_step: Vec<f64>,
    pub slope: f64,
}

/// Fits convergence or decay rates from report rows of a single series.
pub fn fit_rates(rows: &[ReportRow], mode: RateMode) -> Result<RateFit, HarnessError> {
    if rows.len() < 2 {
        return Err(HarnessError::TooFewPoints);
    }
    for r in rows {
        if r.err_energy <= 0.0 {
            return Err(HarnessError::NonPositiveError(r.err_energy));
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = match mode {
        RateMode::HRate => rows
            .iter()
            .map(|r| (r.h_coarse.ln(), r.err_energy.ln()))
            .unzip(),
        RateMode::EllDecay => rows.iter().map(|r| (r.ell as f64, r.err_energy.ln())).unzip(),
    };
    let mut per_step = Vec::with_capacity(rows.len() - 1);
    for k in 0..rows.len() - 1 {
        per_step.push((ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]));
    }
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    Ok(RateFit { per_step, slope: sxy / sxx })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(h: f64, ell: usize, err: f64) -> ReportRow {
        ReportRow {
            experiment: "t".into(),
            h_coarse: h,
            h_fine: 1.0 / 32.0,
            ell,
            variant: "naive".into(),
            err_energy: err,
            err_rel: err,
            n_coarse: 0,
            n_fine_free: 0,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn synthetic_quadratic_errors_give_eoc_two() {
        let rows: Vec<ReportRow> = [1.0, 0.5, 0.25, 0.125]
            .iter()
            .map(|&h: &f64| row(h, 0, h * h))
            .collect();
        let fit = fit_rates(&rows, RateMode::HRate).unwrap();
        for s in &fit.per_step {
            assert!((s - 2.0).abs() < 1e-12);
        }
        assert!((fit.slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn decay_fit_rejects_nonpositive() {
        let rows = vec![row(0.5, 1, 1.0), row(0.5, 2, 0.0)];
        assert!(matches!(
            fit_rates(&rows, RateMode::EllDecay),
            Err(HarnessError::NonPositiveError(_))
        ));
        assert!(matches!(
            fit_rates(&rows[..1], RateMode::EllDecay),
            Err(HarnessError::TooFewPoints)
        ));
    }

    #[test]
    fn keyed_random_is_order_independent() {
        let a: Vec<f64> = (0..100).map(|i| keyed_unit(42, i)).collect();
        let mut b: Vec<f64> = (0..100).rev().map(|i| keyed_unit(42, i)).collect();
        b.reverse();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| (0.0..1.0).contains(&v)));
        let c: Vec<f64> = (0..100).map(|i| keyed_unit(43, i)).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn analytic_interface_coefficient_value() {
        let c = analytic_coefficient("osc30").unwrap();
        let v = match c {
            Coefficient::Analytic(f) => f(1.0 / 60.0, 0.0),
            _ => unreachable!(),
        };
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn random_checkerboard_is_reproducible() {
        let d = build_domain(&GeometrySpec::cross()).unwrap();
        let mesh = build_mesh(&d, 8).unwrap();
        let spec = CoefficientsSpec {
            a0: CoefSpec::Random { seed: 42, lo: 0.01, hi: 1.0 },
            a1: CoefSpec::Constant(1.0),
            b1: CoefSpec::Constant(1.0),
        };
        let c1 = build_coefficients(&spec, &mesh, None).unwrap();
        let c2 = build_coefficients(&spec, &mesh, None).unwrap();
        match (&c1.a0, &c2.a0) {
            (Coefficient::PerElement(a), Coefficient::PerElement(b)) => {
                assert_eq!(a.as_slice(), b.as_slice());
                assert!(a.iter().all(|&v| (0.01..=1.0).contains(&v)));
            }
            _ => panic!("expected per-element fields"),
        }
        let c3 = build_coefficients(&spec, &mesh, Some(7)).unwrap();
        match (&c1.a0, &c3.a0) {
            (Coefficient::PerElement(a), Coefficient::PerElement(b)) => assert_ne!(a, b),
            _ => panic!(),
        }
    }

    #[test]
    fn nonpositive_random_range_rejected() {
        let d = build_domain(&GeometrySpec::cross()).unwrap();
        let mesh = build_mesh(&d, 8).unwrap();
        let spec = CoefficientsSpec {
            a0: CoefSpec::Random { seed: 1, lo: 0.0, hi: 1.0 },
            a1: CoefSpec::Constant(1.0),
            b1: CoefSpec::Constant(1.0),
        };
        assert!(build_coefficients(&spec, &mesh, None).is_err());
    }
}
