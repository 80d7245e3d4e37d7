//! Experiment orchestration: config-driven replication batches, aggregation,
//! and verification of the emitted tables.
//!
//! A config names one objective and a run template, possibly with lists of
//! embedding dimensions and interleaving counts; the engine runs every
//! (d, k) cell for the configured number of replications, writes one CSV
//! trace per replication plus a per-cell aggregate (mean and quartiles of
//! the optimality gap at each evaluation index), and a final summary table.
//! Comparison batches run several optimizer modes on the same objective
//! instance with shared replication seeds, so mode-vs-mode differences are
//! paired.
//!
//! Everything written is a pure function of (config, global seed): wall
//! times never appear in any artifact, replication seeds derive from the
//! global seed, and a verification pass can recompute every aggregate from
//! the per-replication files.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionSpec;
use crate::driver::{run, KernelChoice, Mode, RunConfig, RunReport};
use crate::embedding::EmbeddingScale;
use crate::error::{Error, Result};
use crate::objectives::{
    EmbeddedBranin, ExternalCommand, Objective, RotatedEmbeddedBranin, SyntheticCategorical,
};
use crate::rng::{derive_seed, tag};
use crate::stats;

/// Tolerance for the aggregate-recomputation verification pass.
const VERIFY_TOL: f64 = 1e-12;

/// Which benchmark objective a config names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    BraninEmbedded,
    BraninRotated,
    SyntheticCategorical,
    ExternalCommand,
}

/// Descriptor for an external-command objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandSpec {
    pub program: String,
    #[serde(default)]
    pub fixed_args: Vec<String>,
    /// Per-parameter argument template; `{i}` is the parameter index and
    /// `{v}` its value.
    pub arg_template: String,
    pub timeout_secs: f64,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    /// "minimize" or "maximize".
    #[serde(default = "default_sense")]
    pub sense: String,
}

fn default_max_concurrent() -> usize {
    4
}

fn default_sense() -> String {
    "minimize".into()
}

/// Objective section of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Extrinsic dimension `D`; the synthetic categorical problem has a
    /// fixed dimension and either omits this or states it exactly.
    #[serde(default)]
    pub extrinsic_dim: usize,
    /// Seed for the rotation matrix (rotated Branin only); derived from the
    /// objective seed when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_seed: Option<u64>,
    /// Gap reference override; mainly for external commands, whose optimum
    /// the harness cannot know.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_optimum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandSpec>,
}

/// A scalar or a list — lets grid fields like `embedding_dim` take either.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

impl OneOrMany {
    pub fn as_vec(&self) -> Vec<usize> {
        match self {
            Self::One(v) => vec![*v],
            Self::Many(vs) => vs.clone(),
        }
    }
}

/// Run-template section of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    /// Optimizer mode for single-mode batches: "rembo", "bo", or
    /// "random-search".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Modes for comparison batches (two or more, distinct).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<String>>,
    /// Embedding dimension(s) `d`; required when any mode is "rembo".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<OneOrMany>,
    /// Interleaved sub-run count(s) `k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interleaved: Option<OneOrMany>,
    pub total_budget: usize,
    /// "ei" (default) or "ucb".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ucb_beta: Option<f64>,
    /// "low-dim-se" (default), "high-dim-projected-se", or
    /// "categorical-hamming"; the categorical objective defaults to the
    /// Hamming kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    /// "unit" (default) or "inv-sqrt-dim".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_scale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_ell: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell_lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell_upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_ell: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_evals: Option<usize>,
}

/// A parsed experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Config format version; this engine understands version 1.
    pub version: u32,
    pub global_seed: u64,
    pub replications: usize,
    /// Default output directory; a command-line override wins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub objective: ObjectiveSpec,
    pub run: RunSpec,
}

impl ExperimentConfig {
    /// Parses a TOML document; syntax errors carry line/column anchors.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        config.validate_common()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    fn validate_common(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!(
                "unsupported config version {} (this build understands version 1)",
                self.version
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.run.total_budget == 0 {
            return Err(Error::Config("total_budget must be at least 1".into()));
        }
        Ok(())
    }

    /// The single mode a `run` batch uses.
    fn run_mode(&self) -> Result<Mode> {
        match &self.run.mode {
            Some(m) => parse_mode(m),
            None => Err(Error::Config("run.mode is required for a run batch".into())),
        }
    }

    /// The distinct modes a comparison batch pits against each other.
    fn compare_modes(&self) -> Result<Vec<Mode>> {
        let names = self
            .run
            .modes
            .as_ref()
            .ok_or_else(|| Error::Config("run.modes is required for a comparison".into()))?;
        let modes: Vec<Mode> = names.iter().map(|m| parse_mode(m)).collect::<Result<_>>()?;
        let distinct: BTreeSet<&str> = names.iter().map(String::as_str).collect();
        if modes.len() < 2 || distinct.len() != modes.len() {
            return Err(Error::Config(
                "a comparison needs at least two distinct modes".into(),
            ));
        }
        Ok(modes)
    }

    /// The (d, k) grid a mode expands to.
    fn cells(&self, mode: Mode, objective: &dyn Objective) -> Result<Vec<(usize, usize)>> {
        let ks = self.run.interleaved.as_ref().map_or(vec![1], |k| k.as_vec());
        match mode {
            Mode::Rembo => {
                let ds = self
                    .run
                    .embedding_dim
                    .as_ref()
                    .ok_or_else(|| {
                        Error::Config("run.embedding_dim is required for rembo".into())
                    })?
                    .as_vec();
                let mut cells = Vec::new();
                for &d in &ds {
                    for &k in &ks {
                        cells.push((d, k));
                    }
                }
                Ok(cells)
            }
            Mode::Bo => Ok(ks.iter().map(|&k| (objective.extrinsic_dim(), k)).collect()),
            Mode::RandomSearch => Ok(vec![(objective.extrinsic_dim(), 1)]),
        }
    }

    /// Resolves the template into a concrete run configuration.
    fn to_run_config(&self, mode: Mode, d: usize, k: usize, seed: u64) -> Result<RunConfig> {
        let acquisition = match self.run.acquisition.as_deref() {
            None | Some("ei") => AcquisitionSpec::ExpectedImprovement,
            Some("ucb") => AcquisitionSpec::ucb(self.run.ucb_beta.ok_or_else(|| {
                Error::Config("run.ucb_beta is required with the ucb acquisition".into())
            })?)?,
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown acquisition \"{other}\" (expected \"ei\" or \"ucb\")"
                )))
            }
        };
        let kernel = match self.run.kernel.as_deref() {
            Some("low-dim-se") => KernelChoice::LowDimSe,
            Some("high-dim-projected-se") => KernelChoice::HighDimProjectedSe,
            Some("categorical-hamming") => KernelChoice::CategoricalHamming,
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown kernel \"{other}\" (expected \"low-dim-se\", \
                     \"high-dim-projected-se\", or \"categorical-hamming\")"
                )))
            }
            // The categorical objective pairs with the Hamming kernel.
            None if self.objective.kind == ObjectiveKind::SyntheticCategorical => {
                KernelChoice::CategoricalHamming
            }
            None => KernelChoice::LowDimSe,
        };
        let embedding_scale = match self.run.embedding_scale.as_deref() {
            None | Some("unit") => EmbeddingScale::Unit,
            Some("inv-sqrt-dim") => EmbeddingScale::InvSqrtDim,
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown embedding_scale \"{other}\" (expected \"unit\" or \"inv-sqrt-dim\")"
                )))
            }
        };
        let defaults = RunConfig::rembo(1, 1, 1, 0);
        Ok(RunConfig {
            mode,
            embedding_dim: d,
            kernel,
            interleaved: k,
            total_budget: self.run.total_budget,
            acquisition,
            inner_evals: self.run.inner_evals,
            embedding_scale,
            jitter: self.run.jitter.unwrap_or(defaults.jitter),
            initial_ell: self.run.initial_ell.unwrap_or(defaults.initial_ell),
            ell_bounds: (
                self.run.ell_lower.unwrap_or(defaults.ell_bounds.0),
                self.run.ell_upper.unwrap_or(defaults.ell_bounds.1),
            ),
            t_sigma: self.run.t_sigma.unwrap_or(defaults.t_sigma),
            fixed_ell: self.run.fixed_ell,
            seed,
        })
    }
}

fn parse_mode(name: &str) -> Result<Mode> {
    match name {
        "rembo" => Ok(Mode::Rembo),
        "bo" => Ok(Mode::Bo),
        "random-search" | "random_search" => Ok(Mode::RandomSearch),
        other => Err(Error::Config(format!(
            "unknown mode \"{other}\" (expected \"rembo\", \"bo\", or \"random-search\")"
        ))),
    }
}

fn parse_sense(name: &str) -> Result<crate::objectives::Sense> {
    match name {
        "minimize" => Ok(crate::objectives::Sense::Minimize),
        "maximize" => Ok(crate::objectives::Sense::Maximize),
        other => Err(Error::Config(format!(
            "unknown sense \"{other}\" (expected \"minimize\" or \"maximize\")"
        ))),
    }
}

/// Directory-name label for a grid cell.
fn cell_label(mode: Mode, d: usize, k: usize) -> String {
    match mode {
        Mode::Rembo => format!("d{d}_k{k}"),
        Mode::Bo => format!("bo_k{k}"),
        Mode::RandomSearch => "random_search".into(),
    }
}

fn mode_label(mode: Mode) -> &'static str {
    match mode {
        Mode::Rembo => "rembo",
        Mode::Bo => "bo",
        Mode::RandomSearch => "random_search",
    }
}

/// Wrapper substituting an externally supplied optimum as the gap
/// reference.
struct OptimumOverride {
    inner: Box<dyn Objective>,
    optimum: f64,
}

impl Objective for OptimumOverride {
    fn extrinsic_dim(&self) -> usize {
        self.inner.extrinsic_dim()
    }
    fn needed_coords(&self) -> Option<&[usize]> {
        self.inner.needed_coords()
    }
    fn sense(&self) -> crate::objectives::Sense {
        self.inner.sense()
    }
    fn known_optimum(&self) -> Option<f64> {
        Some(self.optimum)
    }
    fn decode_table(&self) -> Option<&crate::embedding::CategoricalTable> {
        self.inner.decode_table()
    }
    fn eval(
        &self,
        point: crate::objectives::Point<'_>,
    ) -> std::result::Result<f64, crate::error::EvalError> {
        self.inner.eval(point)
    }
    fn eval_codes(&self, codes: &[u32]) -> std::result::Result<f64, crate::error::EvalError> {
        self.inner.eval_codes(codes)
    }
}

/// Instantiates the objective a spec names. `seed` pins every seeded
/// choice (effective coordinates, rotation, category tables), so one seed
/// always denotes one objective instance.
pub fn build_objective(spec: &ObjectiveSpec, seed: u64) -> Result<Box<dyn Objective>> {
    let base: Box<dyn Objective> = match spec.kind {
        ObjectiveKind::BraninEmbedded => Box::new(EmbeddedBranin::new(spec.extrinsic_dim, seed)?),
        ObjectiveKind::BraninRotated => {
            let rotation_seed =
                spec.rotation_seed.unwrap_or_else(|| derive_seed(seed, tag::OBJECTIVE, 1));
            Box::new(RotatedEmbeddedBranin::new(spec.extrinsic_dim, seed, rotation_seed)?)
        }
        ObjectiveKind::SyntheticCategorical => {
            let obj = SyntheticCategorical::new(seed);
            if spec.extrinsic_dim != 0 && spec.extrinsic_dim != obj.extrinsic_dim() {
                return Err(Error::Config(format!(
                    "the synthetic categorical problem is fixed at {} dimensions (got {})",
                    obj.extrinsic_dim(),
                    spec.extrinsic_dim
                )));
            }
            Box::new(obj)
        }
        ObjectiveKind::ExternalCommand => {
            let cmd = spec.command.as_ref().ok_or_else(|| {
                Error::Config("external-command objectives need a [objective.command] table".into())
            })?;
            if spec.extrinsic_dim == 0 {
                return Err(Error::Config(
                    "external-command objectives need objective.extrinsic_dim".into(),
                ));
            }
            if !(cmd.timeout_secs > 0.0) {
                return Err(Error::Config("command timeout_secs must be positive".into()));
            }
            Box::new(ExternalCommand::new(
                cmd.program.clone(),
                cmd.fixed_args.clone(),
                cmd.arg_template.clone(),
                Duration::from_secs_f64(cmd.timeout_secs),
                spec.extrinsic_dim,
                parse_sense(&cmd.sense)?,
                cmd.max_concurrent.max(1),
            ))
        }
    };
    Ok(match spec.known_optimum {
        Some(opt) => Box::new(OptimumOverride { inner: base, optimum: opt }),
        None => base,
    })
}

/// One row of an aggregate file: gap statistics across replications at a
/// fixed evaluation index.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub eval_index: usize,
    pub mean_gap: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    /// Replications contributing to this row.
    pub n: usize,
}

/// Cross-replication gap statistics at every evaluation index. All reports
/// must share the same trace length.
pub fn aggregate(reports: &[RunReport]) -> Result<Vec<AggregateRow>> {
    let Some(first) = reports.first() else {
        return Err(Error::Config("nothing to aggregate: no successful replications".into()));
    };
    let len = first.trace.len();
    if reports.iter().any(|r| r.trace.len() != len) {
        return Err(Error::Config("replication traces have unequal lengths".into()));
    }
    let mut rows = Vec::with_capacity(len);
    for i in 0..len {
        let mut gaps: Vec<f64> = reports.iter().map(|r| r.trace[i].best_gap).collect();
        gaps.sort_by(f64::total_cmp);
        rows.push(AggregateRow {
            eval_index: i + 1,
            mean_gap: stats::mean(&gaps),
            q25: stats::quantile_sorted(&gaps, 0.25),
            q50: stats::quantile_sorted(&gaps, 0.50),
            q75: stats::quantile_sorted(&gaps, 0.75),
            n: gaps.len(),
        });
    }
    Ok(rows)
}

const AGGREGATE_HEADER: &str = "eval_index,mean_gap,q25,q50,q75,n";

fn render_aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.eval_index, r.mean_gap, r.q25, r.q50, r.q75, r.n
        ));
    }
    out
}

/// Writes a file atomically: to a dot-prefixed temporary in the same
/// directory, then renamed over the target.
fn write_atomic(path: &Path, content: &[u8]) -> Result<()> {
    let dir = path.parent().ok_or_else(|| {
        Error::Config(format!("output path {} has no parent directory", path.display()))
    })?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("bad output file name: {}", path.display())))?;
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(content)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn rep_file_name(r: usize) -> String {
    format!("rep_{r:03}.csv")
}

/// What a finished batch produced.
#[derive(Debug, Clone)]
pub struct ExperimentArtifacts {
    pub output_dir: PathBuf,
    /// Cell labels in run order.
    pub cells: Vec<String>,
    pub replications: usize,
    /// Human-readable descriptions of replications that failed outright
    /// (also recorded in `failures.txt`).
    pub failures: Vec<String>,
}

/// Runs every replication of one cell; returns completed reports and
/// failure notes, writing per-replication CSVs as it goes.
fn run_cell(
    config: &ExperimentConfig,
    objective: &dyn Objective,
    mode: Mode,
    d: usize,
    k: usize,
    cell_dir: &Path,
) -> Result<(Vec<RunReport>, Vec<String>)> {
    fs::create_dir_all(cell_dir)?;
    let results: Vec<(usize, Result<RunReport>)> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(config.global_seed, tag::REPLICATION, r as u64);
            let report = config
                .to_run_config(mode, d, k, seed)
                .and_then(|rc| run(&rc, objective));
            (r, report)
        })
        .collect();

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (r, result) in results {
        match result {
            Ok(report) => {
                let mut buf = Vec::new();
                report.write_csv(&mut buf)?;
                write_atomic(&cell_dir.join(rep_file_name(r)), &buf)?;
                reports.push(report);
            }
            Err(e) => failures.push(format!(
                "{}/{}: {e}",
                cell_dir.file_name().and_then(|n| n.to_str()).unwrap_or("?"),
                rep_file_name(r)
            )),
        }
    }
    if !reports.is_empty() {
        let rows = aggregate(&reports)?;
        write_atomic(&cell_dir.join("aggregate.csv"), render_aggregate_csv(&rows).as_bytes())?;
    }
    Ok((reports, failures))
}

fn write_common_artifacts(
    config: &ExperimentConfig,
    out_dir: &Path,
    failures: &[String],
) -> Result<()> {
    let echo = toml::to_string_pretty(config)
        .map_err(|e| Error::Config(format!("config echo serialization failed: {e}")))?;
    write_atomic(&out_dir.join("config.toml"), echo.as_bytes())?;
    if !failures.is_empty() {
        write_atomic(&out_dir.join("failures.txt"), failures.join("\n").as_bytes())?;
    }
    Ok(())
}

/// Runs a single-mode batch over the full (d, k) grid, writing per-cell
/// replication traces, per-cell aggregates, and a `summary.csv` holding
/// final-index gap statistics for every cell.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentArtifacts> {
    config.validate_common()?;
    let mode = config.run_mode()?;
    let objective =
        build_objective(&config.objective, derive_seed(config.global_seed, tag::OBJECTIVE, 0))?;
    fs::create_dir_all(out_dir)?;

    let cells = config.cells(mode, objective.as_ref())?;
    let mut labels = Vec::new();
    let mut all_failures = Vec::new();
    let mut summary =
        String::from("mode,d,k,mean_gap,std_gap,n\n");
    for (d, k) in cells {
        let label = cell_label(mode, d, k);
        let cell_dir = out_dir.join(&label);
        let (reports, failures) =
            run_cell(config, objective.as_ref(), mode, d, k, &cell_dir)?;
        all_failures.extend(failures);
        if !reports.is_empty() {
            let final_gaps: Vec<f64> = reports.iter().map(RunReport::best_gap).collect();
            summary.push_str(&format!(
                "{},{},{},{},{},{}\n",
                mode_label(mode),
                d,
                k,
                stats::mean(&final_gaps),
                stats::std_dev(&final_gaps),
                final_gaps.len()
            ));
        }
        labels.push(label);
    }
    write_atomic(&out_dir.join("summary.csv"), summary.as_bytes())?;
    write_common_artifacts(config, out_dir, &all_failures)?;
    Ok(ExperimentArtifacts {
        output_dir: out_dir.to_path_buf(),
        cells: labels,
        replications: config.replications,
        failures: all_failures,
    })
}

/// Runs a multi-mode comparison on one shared objective instance with
/// shared replication seeds. Every mode gets its own subdirectory of
/// traces plus an aggregate; `ranking.csv` orders the modes by final-index
/// median gap.
pub fn run_comparison(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentArtifacts> {
    config.validate_common()?;
    let modes = config.compare_modes()?;
    let objective =
        build_objective(&config.objective, derive_seed(config.global_seed, tag::OBJECTIVE, 0))?;
    fs::create_dir_all(out_dir)?;

    // A comparison is one cell per mode: a single d and k.
    let d = match config.run.embedding_dim.as_ref().map(|d| d.as_vec()) {
        Some(ds) if ds.len() == 1 => Some(ds[0]),
        None => None,
        Some(_) => {
            return Err(Error::Config(
                "a comparison uses a single embedding_dim, not a list".into(),
            ))
        }
    };
    let k = match config.run.interleaved.as_ref().map(|k| k.as_vec()) {
        Some(ks) if ks.len() == 1 => ks[0],
        None => 1,
        Some(_) => {
            return Err(Error::Config(
                "a comparison uses a single interleaved count, not a list".into(),
            ))
        }
    };

    let mut labels = Vec::new();
    let mut all_failures = Vec::new();
    let mut rank_rows: Vec<(String, f64, f64)> = Vec::new();
    for mode in modes {
        let label = mode_label(mode).to_string();
        let cell_dir = out_dir.join(&label);
        let cell_d = match mode {
            Mode::Rembo => d.ok_or_else(|| {
                Error::Config("run.embedding_dim is required for rembo".into())
            })?,
            Mode::Bo | Mode::RandomSearch => objective.extrinsic_dim(),
        };
        let cell_k = if mode == Mode::RandomSearch { 1 } else { k };
        let (reports, failures) =
            run_cell(config, objective.as_ref(), mode, cell_d, cell_k, &cell_dir)?;
        all_failures.extend(failures);
        if !reports.is_empty() {
            let final_gaps: Vec<f64> = reports.iter().map(RunReport::best_gap).collect();
            rank_rows.push((
                label.clone(),
                stats::mean(&final_gaps),
                stats::median(&final_gaps),
            ));
        }
        labels.push(label);
    }

    rank_rows.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.1.total_cmp(&b.1)));
    let mut ranking = String::from("rank,mode,mean_gap,median_gap\n");
    for (i, (label, mean, median)) in rank_rows.iter().enumerate() {
        ranking.push_str(&format!("{},{},{},{}\n", i + 1, label, mean, median));
    }
    write_atomic(&out_dir.join("ranking.csv"), ranking.as_bytes())?;
    write_common_artifacts(config, out_dir, &all_failures)?;
    Ok(ExperimentArtifacts {
        output_dir: out_dir.to_path_buf(),
        cells: labels,
        replications: config.replications,
        failures: all_failures,
    })
}

/// Simple CSV reader for the harness's own comma-separated files (no
/// quoting in this format).
fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty CSV", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{}: bad number \"{field}\"", path.display())))
}

/// Two statistics agree when they differ by at most the tolerance or are
/// both NaN (the gap of an objective with no known optimum).
fn stat_matches(got: f64, want: f64) -> bool {
    (got.is_nan() && want.is_nan()) || (got - want).abs() <= VERIFY_TOL
}

/// Result of an aggregate-verification pass.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    /// Aggregate, summary, and ranking files checked.
    pub files_checked: usize,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Recursively verifies every `aggregate.csv` under `dir` against the
/// sibling `rep_*.csv` files it was computed from, within `1e-12`.
pub fn verify_aggregates(dir: &Path) -> Result<VerifyReport> {
    let mut report = VerifyReport { files_checked: 0, problems: Vec::new() };
    verify_dir(dir, &mut report)?;
    if report.files_checked == 0 {
        report.problems.push(format!("{}: no aggregate files found", dir.display()));
    }
    Ok(report)
}

fn verify_dir(dir: &Path, report: &mut VerifyReport) -> Result<()> {
    let mut subdirs = Vec::new();
    let mut has_aggregate = false;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            subdirs.push(path);
        } else if path.file_name().and_then(|n| n.to_str()) == Some("aggregate.csv") {
            has_aggregate = true;
        }
    }
    if has_aggregate {
        verify_one_aggregate(dir, report)?;
    }
    subdirs.sort();
    for sub in subdirs {
        verify_dir(&sub, report)?;
    }
    Ok(())
}

/// Reads the per-replication gap columns in one cell directory, indexed
/// `[replication][eval_index]`, sorted by file name.
fn read_rep_gaps(dir: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rep_files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("rep_") && n.ends_with(".csv"))
        })
        .collect();
    rep_files.sort();
    let mut gaps = Vec::with_capacity(rep_files.len());
    for f in &rep_files {
        let (header, rows) = read_csv(f)?;
        let gap_col = header.iter().position(|h| h == "best_gap").ok_or_else(|| {
            Error::Config(format!("{}: no best_gap column", f.display()))
        })?;
        let series: Vec<f64> =
            rows.iter().map(|r| parse_f64(&r[gap_col], f)).collect::<Result<_>>()?;
        gaps.push(series);
    }
    Ok(gaps)
}

fn verify_one_aggregate(dir: &Path, report: &mut VerifyReport) -> Result<()> {
    let agg_path = dir.join("aggregate.csv");
    report.files_checked += 1;
    let (header, rows) = read_csv(&agg_path)?;
    if header.join(",") != AGGREGATE_HEADER {
        report.problems.push(format!("{}: unexpected header", agg_path.display()));
        return Ok(());
    }
    let rep_gaps = read_rep_gaps(dir)?;
    if rep_gaps.is_empty() {
        report
            .problems
            .push(format!("{}: aggregate present but no rep_*.csv files", agg_path.display()));
        return Ok(());
    }
    let len = rep_gaps[0].len();
    if rep_gaps.iter().any(|g| g.len() != len) || rows.len() != len {
        report.problems.push(format!(
            "{}: row-count mismatch between aggregate and replications",
            agg_path.display()
        ));
        return Ok(());
    }
    for (i, row) in rows.iter().enumerate() {
        let mut gaps: Vec<f64> = rep_gaps.iter().map(|g| g[i]).collect();
        gaps.sort_by(f64::total_cmp);
        let want = [
            stats::mean(&gaps),
            stats::quantile_sorted(&gaps, 0.25),
            stats::quantile_sorted(&gaps, 0.50),
            stats::quantile_sorted(&gaps, 0.75),
        ];
        let got: Vec<f64> =
            row[1..5].iter().map(|f| parse_f64(f, &agg_path)).collect::<Result<_>>()?;
        let n: usize = row[5]
            .parse()
            .map_err(|_| Error::Config(format!("{}: bad n \"{}\"", agg_path.display(), row[5])))?;
        if n != gaps.len() {
            report.problems.push(format!(
                "{}: row {}: n = {n} but {} replications found",
                agg_path.display(),
                i + 1,
                gaps.len()
            ));
        }
        for (j, (&g, &w)) in got.iter().zip(&want).enumerate() {
            if !stat_matches(g, w) {
                report.problems.push(format!(
                    "{}: row {}, column {}: stored {g} vs recomputed {w}",
                    agg_path.display(),
                    i + 1,
                    AGGREGATE_HEADER.split(',').nth(j + 1).unwrap_or("?"),
                ));
            }
        }
    }
    Ok(())
}
