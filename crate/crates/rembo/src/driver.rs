//! Optimization run drivers.
//!
//! Three modes share one reporting format: random-embedding Bayesian
//! optimization (the headline algorithm), plain Bayesian optimization over
//! the full input box (baseline), and uniform random search (baseline). A
//! run may interleave `k` independent sub-runs, each with its own embedding
//! and seed, sharing one total evaluation budget; interleaving drives down
//! the probability that every embedding misses the objective's effective
//! subspace.
//!
//! All loops maximize internally. Minimization objectives are negated at
//! the evaluation boundary, and reported values/gaps are translated back to
//! the objective's native sense.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::acquisition::{maximize_acquisition, AcquisitionSpec, Incumbent};
use crate::embedding::{Embedding, EmbeddingScale};
use crate::error::{Error, EvalError, Result};
use crate::gp::{fit, Dataset};
use crate::hyperopt::{HyperState, DEFAULT_ELL_BOUNDS, DEFAULT_T_SIGMA};
use crate::inner_opt::{Bounds, InnerOptBudget};
use crate::kernels::{KernelSpec, LengthScale};
use crate::objectives::{Objective, Point, Sense};
use crate::rng::{derive_seed, rng_from_seed, tag};

/// Which optimizer drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Bayesian optimization over a random low-dimensional embedding.
    Rembo,
    /// Bayesian optimization over the full input box.
    Bo,
    /// Uniform random sampling of the input box.
    RandomSearch,
}

/// Which covariance the surrogate uses (resolved to a concrete
/// [`KernelSpec`] per sub-run, since two variants need the embedding).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelChoice {
    /// Squared exponential directly over the search coordinates.
    LowDimSe,
    /// Squared exponential over the clamped high-dimensional image of `y`.
    HighDimProjectedSe,
    /// Hamming kernel over decoded categorical configurations.
    CategoricalHamming,
}

/// Cap applied to the default per-step acquisition budget so plain BO over
/// wide boxes stays affordable.
const DEFAULT_INNER_EVALS_CAP: usize = 1_500;

/// Full description of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    /// Embedding dimension `d` (REMBO only).
    pub embedding_dim: usize,
    pub kernel: KernelChoice,
    /// Number of interleaved independent sub-runs sharing the budget.
    pub interleaved: usize,
    /// Total objective evaluations across all sub-runs, spent exactly.
    pub total_budget: usize,
    pub acquisition: AcquisitionSpec,
    /// Acquisition-maximization evaluations per step; `None` picks
    /// `500 * search_dim` capped at 1500.
    pub inner_evals: Option<usize>,
    pub embedding_scale: EmbeddingScale,
    /// Gram-diagonal stabilizer handed to every GP fit.
    pub jitter: f64,
    pub initial_ell: f64,
    pub ell_bounds: (f64, f64),
    pub t_sigma: f64,
    /// Freeze the length scale (disables the adaptive controller).
    pub fixed_ell: Option<f64>,
    pub seed: u64,
}

impl RunConfig {
    /// Random-embedding BO with `k` interleaved sub-runs.
    pub fn rembo(embedding_dim: usize, interleaved: usize, total_budget: usize, seed: u64) -> Self {
        Self {
            mode: Mode::Rembo,
            embedding_dim,
            kernel: KernelChoice::LowDimSe,
            interleaved,
            total_budget,
            acquisition: AcquisitionSpec::ExpectedImprovement,
            inner_evals: None,
            embedding_scale: EmbeddingScale::Unit,
            jitter: 1e-6,
            initial_ell: 1.0,
            ell_bounds: DEFAULT_ELL_BOUNDS,
            t_sigma: DEFAULT_T_SIGMA,
            fixed_ell: None,
            seed,
        }
    }

    /// Plain BO over the full input box.
    pub fn bo(total_budget: usize, seed: u64) -> Self {
        Self { mode: Mode::Bo, embedding_dim: 0, ..Self::rembo(1, 1, total_budget, seed) }
    }

    /// Uniform random search over the input box.
    pub fn random_search(total_budget: usize, seed: u64) -> Self {
        Self { mode: Mode::RandomSearch, ..Self::bo(total_budget, seed) }
    }

    fn inner_budget(&self, search_dim: usize) -> InnerOptBudget {
        let evals =
            self.inner_evals.unwrap_or((500 * search_dim).min(DEFAULT_INNER_EVALS_CAP));
        InnerOptBudget::evals(evals)
    }

    fn validate(&self, objective: &dyn Objective) -> Result<()> {
        if self.total_budget == 0 {
            return Err(Error::Config("total budget must be at least 1".into()));
        }
        if self.interleaved == 0 {
            return Err(Error::Config("interleaved count must be at least 1".into()));
        }
        if !self.jitter.is_finite() || self.jitter < 0.0 {
            return Err(Error::Config(format!("jitter must be finite and >= 0 (got {})", self.jitter)));
        }
        if let Some(ell) = self.fixed_ell {
            if !ell.is_finite() || ell <= 0.0 {
                return Err(Error::Config(format!("fixed length scale must be positive (got {ell})")));
            }
        }
        match self.mode {
            Mode::RandomSearch => Ok(()),
            Mode::Bo => {
                if objective.decode_table().is_some() {
                    return Err(Error::Config(
                        "plain BO does not support categorical objectives; use the embedding \
                         driver with the Hamming kernel"
                            .into(),
                    ));
                }
                if self.kernel != KernelChoice::LowDimSe {
                    return Err(Error::Config(
                        "plain BO supports only the direct squared-exponential kernel".into(),
                    ));
                }
                self.validate_budget_split()
            }
            Mode::Rembo => {
                let d = self.embedding_dim;
                if d == 0 || d > objective.extrinsic_dim() {
                    return Err(Error::Config(format!(
                        "embedding dimension {d} must be in [1, {}]",
                        objective.extrinsic_dim()
                    )));
                }
                match self.kernel {
                    KernelChoice::CategoricalHamming => {
                        if objective.decode_table().is_none() {
                            return Err(Error::Config(
                                "the Hamming kernel needs an objective with a category table".into(),
                            ));
                        }
                    }
                    KernelChoice::LowDimSe | KernelChoice::HighDimProjectedSe => {
                        if objective.decode_table().is_some() {
                            return Err(Error::Config(
                                "categorical objectives require the Hamming kernel".into(),
                            ));
                        }
                    }
                }
                self.validate_budget_split()
            }
        }
    }

    fn validate_budget_split(&self) -> Result<()> {
        let per_run = self.total_budget / self.interleaved;
        if per_run < 2 {
            return Err(Error::Config(format!(
                "budget {} over {} interleaved runs leaves {per_run} evaluations each; \
                 every sub-run needs at least 2",
                self.total_budget, self.interleaved
            )));
        }
        Ok(())
    }
}

/// One pooled-trace entry: the state of the whole run after a cumulative
/// number of objective evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based count of objective evaluations spent so far (all sub-runs).
    pub cumulative_evals: usize,
    /// Best objective value so far, in the objective's native sense.
    pub best_value: f64,
    /// `best_value` minus the known optimum (minimization sense; NaN when
    /// the optimum is unknown).
    pub best_gap: f64,
    /// Which sub-run performed this evaluation.
    pub sub_run: usize,
    /// 1-based step index within that sub-run.
    pub step: usize,
    /// Controller state after the step (NaN for random search).
    pub ell: f64,
    pub upper: f64,
    pub c: u32,
    /// Whether this evaluation failed and was scored by the failure policy.
    pub failed: bool,
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub trace: Vec<TraceRow>,
    pub seed: u64,
    pub wall_time: Duration,
    /// Count of evaluations that failed and were scored, not aborted.
    pub failed_evals: usize,
    /// Total lazy embedding rows materialized across sub-runs (0 for dense
    /// embeddings and non-embedding modes).
    pub rows_touched: u64,
}

impl RunReport {
    /// Final best objective value (native sense).
    pub fn best_value(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.best_value)
    }

    /// Final optimality gap (NaN when the optimum is unknown).
    pub fn best_gap(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.best_gap)
    }

    /// Writes the pooled trace as CSV with the stable column set.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cumulative_evals,best_value,best_gap,sub_run,step,ell,U,C")?;
        for r in &self.trace {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.cumulative_evals, r.best_value, r.best_gap, r.sub_run, r.step, r.ell, r.upper,
                r.c
            )?;
        }
        Ok(())
    }
}

/// Converts an objective value to the internal maximization scale.
fn to_internal(sense: Sense, value: f64) -> f64 {
    match sense {
        Sense::Maximize => value,
        Sense::Minimize => -value,
    }
}

/// Converts an internal value back to the objective's native sense.
fn from_internal(sense: Sense, value: f64) -> f64 {
    to_internal(sense, value) // the map is an involution
}

fn gap_of(sense: Sense, best_native: f64, optimum: Option<f64>) -> f64 {
    match optimum {
        None => f64::NAN,
        Some(opt) => match sense {
            Sense::Minimize => best_native - opt,
            Sense::Maximize => opt - best_native,
        },
    }
}

/// A locally indexed trace entry produced inside one sub-run; pooled values
/// are filled in at merge time.
struct LocalRow {
    step: usize,
    internal_value: f64,
    ell: f64,
    upper: f64,
    c: u32,
    failed: bool,
}

/// Outcome of one objective evaluation attempt.
type EvalOutcome = std::result::Result<f64, EvalError>;

/// Evaluates the objective at embedded coordinates `y`, using the sparsest
/// input representation the objective admits.
fn evaluate_embedded(objective: &dyn Objective, emb: &Embedding, y: &[f64]) -> Result<EvalOutcome> {
    if objective.decode_table().is_some() {
        let codes = emb.decode_embedded(y)?;
        return Ok(objective.eval_codes(&codes));
    }
    if let Some(coords) = objective.needed_coords() {
        let values = emb.map_coords(y, coords)?;
        return Ok(objective.eval(Point::Sparse { coords, values: &values }));
    }
    let x = emb.map_to_x(y)?;
    Ok(objective.eval(Point::Dense(&x)))
}

/// State of one independent sub-run.
struct SubRun<'a> {
    objective: &'a dyn Objective,
    config: &'a RunConfig,
    embedding: Option<Arc<Embedding>>,
    /// Acquisition search box: the embedded box for REMBO, the input box
    /// for plain BO.
    domain: Bounds,
    /// Kernel template; the controller's length scale is applied per fit.
    template: KernelSpec,
    data: Dataset,
    hyper: HyperState,
    incumbent_internal: Option<Incumbent>,
    sub_seed: u64,
    rows: Vec<LocalRow>,
}

impl<'a> SubRun<'a> {
    fn new(config: &'a RunConfig, objective: &'a dyn Objective, index: usize) -> Result<Self> {
        let sub_seed = derive_seed(config.seed, tag::SUB_RUN, index as u64);

        let (embedding, domain) = match config.mode {
            Mode::Rembo => {
                let emb = Arc::new(Embedding::draw_with(
                    objective.extrinsic_dim(),
                    config.embedding_dim,
                    derive_seed(sub_seed, tag::EMBEDDING, 0),
                    (-1.0, 1.0),
                    objective.decode_table().cloned(),
                    config.embedding_scale,
                )?);
                let domain = emb.y_box();
                (Some(emb), domain)
            }
            Mode::Bo => {
                let dim = objective.extrinsic_dim();
                (None, Bounds::new(vec![-1.0; dim], vec![1.0; dim])?)
            }
            Mode::RandomSearch => unreachable!("random search does not build sub-runs"),
        };

        let initial_ell = LengthScale::new(config.fixed_ell.unwrap_or(config.initial_ell))?;
        let hyper = if config.fixed_ell.is_some() {
            HyperState::with_bounds(initial_ell, initial_ell.get(), initial_ell.get(), config.t_sigma)?
        } else {
            HyperState::with_bounds(initial_ell, config.ell_bounds.0, config.ell_bounds.1, config.t_sigma)?
        };

        let template = match config.kernel {
            KernelChoice::LowDimSe => KernelSpec::low_dim_se(initial_ell),
            KernelChoice::HighDimProjectedSe => KernelSpec::high_dim_projected_se(
                initial_ell,
                Arc::clone(embedding.as_ref().expect("projected kernel implies an embedding")),
            ),
            KernelChoice::CategoricalHamming => KernelSpec::categorical_hamming(
                1.0,
                Arc::clone(embedding.as_ref().expect("categorical kernel implies an embedding")),
            )?
            .with_ell(initial_ell),
        };

        Ok(Self {
            objective,
            config,
            embedding,
            domain,
            template,
            data: Dataset::default(),
            hyper,
            incumbent_internal: None,
            sub_seed,
            rows: Vec::new(),
        })
    }

    /// Internal score the failure policy assigns a failed evaluation: one
    /// unit below the worst value seen so far (-1 when nothing has been
    /// seen yet).
    fn failure_score(&self) -> f64 {
        if self.data.is_empty() {
            return -1.0;
        }
        self.data.values().iter().copied().fold(f64::INFINITY, f64::min) - 1.0
    }

    /// Runs one step: propose, evaluate, append, update the controller.
    fn step(&mut self) -> Result<()> {
        let step_idx = self.data.len() + 1;
        let sense = self.objective.sense();

        let (proposal, proposal_std) = if self.data.is_empty() {
            // Initialization: the domain center, queried without a model.
            (self.domain.center(), None)
        } else {
            let kernel = self.template.with_ell(self.hyper.ell());
            let model = match fit(&self.data, &kernel, self.config.jitter) {
                Ok(m) => m,
                // The categorical kernel is not guaranteed positive
                // semidefinite, so a Gram matrix can stop factorizing at
                // the current length scale as points accumulate. That is
                // decisive evidence against the scale: retune immediately
                // (unfactorizable candidates score as minus infinity) and
                // fit at the rescored scale.
                Err(Error::FactorizationFailed { .. }) if self.config.fixed_ell.is_none() => {
                    self.hyper.retune(&self.data, &self.template, self.config.jitter)?;
                    fit(&self.data, &self.template.with_ell(self.hyper.ell()), self.config.jitter)?
                }
                Err(e) => return Err(e),
            };
            let incumbent =
                self.incumbent_internal.clone().expect("incumbent exists when data is nonempty");
            let budget = self.config.inner_budget(self.domain.dim());
            let out = maximize_acquisition(
                &model,
                &self.config.acquisition,
                &self.domain,
                &incumbent,
                &budget,
                derive_seed(self.sub_seed, tag::ACQUISITION, step_idx as u64),
            )?;
            let (_, var) = model.predict(&out.point)?;
            (out.point, Some(var.max(0.0).sqrt()))
        };

        let outcome = match self.config.mode {
            Mode::Rembo => evaluate_embedded(
                self.objective,
                self.embedding.as_ref().expect("REMBO sub-run has an embedding"),
                &proposal,
            )?,
            Mode::Bo => self.objective.eval(Point::Dense(&proposal)),
            Mode::RandomSearch => unreachable!(),
        };
        let (internal_value, failed) = match outcome {
            Ok(v) if v.is_finite() => (to_internal(sense, v), false),
            _ => (self.failure_score(), true),
        };

        // Controller order: the exploitation check sees the proposal's
        // predictive spread, the data grows, then the retune (if due) sees
        // the newest point.
        if let Some(std) = proposal_std {
            self.hyper.observe_proposal(std);
        }
        self.data.push(proposal.clone(), internal_value)?;
        let better = self
            .incumbent_internal
            .as_ref()
            .is_none_or(|inc| internal_value > inc.value);
        if better {
            self.incumbent_internal = Some(Incumbent { point: proposal, value: internal_value });
        }
        if self.config.fixed_ell.is_none() {
            self.hyper.maybe_retune(&self.data, &self.template, self.config.jitter)?;
        }

        self.rows.push(LocalRow {
            step: step_idx,
            internal_value,
            ell: self.hyper.ell().get(),
            upper: self.hyper.upper(),
            c: self.hyper.counter(),
            failed,
        });
        Ok(())
    }

    fn run(mut self, budget: usize) -> Result<(Vec<LocalRow>, u64)> {
        for _ in 0..budget {
            self.step()?;
        }
        let rows_touched = self.embedding.as_ref().map_or(0, |e| e.rows_generated());
        Ok((self.rows, rows_touched))
    }
}

/// Per-sub-run evaluation budgets: `total / k` each, with the remainder
/// spread one-per-sub-run from the front so the total is spent exactly.
fn split_budget(total: usize, k: usize) -> Vec<usize> {
    let base = total / k;
    let extra = total % k;
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

/// Runs `k` independent sub-runs (distinct seeds, distinct embeddings) and
/// merges their traces round-robin by (step, sub-run) into one pooled
/// best-so-far trace indexed by cumulative evaluations.
pub fn run_interleaved(config: &RunConfig, objective: &dyn Objective) -> Result<RunReport> {
    config.validate(objective)?;
    if config.mode == Mode::RandomSearch {
        return random_search(config, objective);
    }
    let start = Instant::now();
    let budgets = split_budget(config.total_budget, config.interleaved);

    let results: Vec<Result<(Vec<LocalRow>, u64)>> = budgets
        .par_iter()
        .enumerate()
        .map(|(i, &b)| SubRun::new(config, objective, i)?.run(b))
        .collect();
    let mut sub_rows = Vec::with_capacity(results.len());
    let mut rows_touched = 0;
    for r in results {
        let (rows, touched) = r?;
        rows_touched += touched;
        sub_rows.push(rows);
    }

    // Deterministic round-robin merge: step 1 of every sub-run, then step 2…
    let mut merged: Vec<(usize, usize, LocalRow)> = Vec::with_capacity(config.total_budget);
    for (sub, rows) in sub_rows.into_iter().enumerate() {
        for row in rows {
            merged.push((row.step, sub, row));
        }
    }
    merged.sort_by_key(|(step, sub, _)| (*step, *sub));

    let sense = objective.sense();
    let optimum = objective.known_optimum();
    let mut best_internal = f64::NEG_INFINITY;
    let mut trace = Vec::with_capacity(merged.len());
    let mut failed_evals = 0;
    for (i, (step, sub, row)) in merged.into_iter().enumerate() {
        best_internal = best_internal.max(row.internal_value);
        let best_native = from_internal(sense, best_internal);
        failed_evals += usize::from(row.failed);
        trace.push(TraceRow {
            cumulative_evals: i + 1,
            best_value: best_native,
            best_gap: gap_of(sense, best_native, optimum),
            sub_run: sub,
            step,
            ell: row.ell,
            upper: row.upper,
            c: row.c,
            failed: row.failed,
        });
    }

    Ok(RunReport { trace, seed: config.seed, wall_time: start.elapsed(), failed_evals, rows_touched })
}

/// Uniform random search over the input box (or the categorical
/// configuration space), with the same trace format as the model-based
/// modes.
pub fn random_search(config: &RunConfig, objective: &dyn Objective) -> Result<RunReport> {
    if config.total_budget == 0 {
        return Err(Error::Config("total budget must be at least 1".into()));
    }
    let start = Instant::now();
    let mut rng = rng_from_seed(derive_seed(config.seed, tag::SUB_RUN, 0));
    let sense = objective.sense();
    let optimum = objective.known_optimum();
    let dim = objective.extrinsic_dim();

    let mut best_internal = f64::NEG_INFINITY;
    let mut trace = Vec::with_capacity(config.total_budget);
    let mut failed_evals = 0;
    let mut worst_internal: Option<f64> = None;

    for i in 0..config.total_budget {
        let outcome = if let Some(table) = objective.decode_table() {
            let codes: Vec<u32> =
                (0..dim).map(|d| rng.random_range(0..table.count(d))).collect();
            objective.eval_codes(&codes)
        } else if let Some(coords) = objective.needed_coords() {
            // Only the coordinates the objective reads need drawing; their
            // marginal matches a full-box uniform draw.
            let values: Vec<f64> =
                coords.iter().map(|_| rng.random_range(-1.0..=1.0)).collect();
            objective.eval(Point::Sparse { coords, values: &values })
        } else {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            objective.eval(Point::Dense(&x))
        };
        let (internal_value, failed) = match outcome {
            Ok(v) if v.is_finite() => (to_internal(sense, v), false),
            _ => (worst_internal.map_or(-1.0, |w| w - 1.0), true),
        };
        worst_internal = Some(worst_internal.map_or(internal_value, |w| w.min(internal_value)));
        best_internal = best_internal.max(internal_value);
        failed_evals += usize::from(failed);
        let best_native = from_internal(sense, best_internal);
        trace.push(TraceRow {
            cumulative_evals: i + 1,
            best_value: best_native,
            best_gap: gap_of(sense, best_native, optimum),
            sub_run: 0,
            step: i + 1,
            ell: f64::NAN,
            upper: f64::NAN,
            c: 0,
            failed,
        });
    }

    Ok(RunReport { trace, seed: config.seed, wall_time: start.elapsed(), failed_evals, rows_touched: 0 })
}

/// Dispatches on the configured mode.
pub fn run(config: &RunConfig, objective: &dyn Objective) -> Result<RunReport> {
    match config.mode {
        Mode::Rembo | Mode::Bo => run_interleaved(config, objective),
        Mode::RandomSearch => {
            config.validate(objective)?;
            random_search(config, objective)
        }
    }
}
