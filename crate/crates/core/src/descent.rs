//! First-order minimization of the weighted InfoNCE loss over embeddings.
//!
//! Iterates are either free (recentered every step) or constrained to the
//! unit sphere (tangent-projected gradient, rows renormalized). Steps are
//! accepted only when the loss decreases, so traces are monotone.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infonce::{loss_gap, LossReport, Points, RowDistribution};
use crate::matrices::{Embedding, Similarity, WeightMatrix};

/// Feasible set for the iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Free,
    UnitSphere,
}

impl Constraint {
    /// Unit sphere for cosine similarity, free otherwise.
    pub fn for_similarity(spec: Similarity) -> Self {
        if spec.is_spherical() {
            Constraint::UnitSphere
        } else {
            Constraint::Free
        }
    }
}

/// How the first trial step of each iteration is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Start from `step_size`, or twice the last accepted step if smaller.
    Fixed,
    /// Barzilai-Borwein estimate `<s, s> / <s, y>`, capped at `max_step`.
    BarzilaiBorwein,
    /// Nesterov extrapolation with momentum reset whenever a step fails or
    /// the gradient turns against the motion.
    Accelerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentConfig {
    pub steps: usize,
    pub step_size: f64,
    pub decay: f64,
    pub restarts: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// `None` picks the constraint matching the similarity.
    pub constraint: Option<Constraint>,
    pub stop_grad_norm: f64,
    pub step_rule: StepRule,
    /// Upper bound on Barzilai-Borwein steps.
    pub max_step: f64,
    pub checkpoint_every: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            step_size: 1.0,
            decay: 0.5,
            restarts: 4,
            seed: 0,
            init_scale: 1.0,
            constraint: None,
            stop_grad_norm: 1e-9,
            step_rule: StepRule::Accelerated,
            max_step: 1e8,
            checkpoint_every: 100,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::BadParameter(what.to_string()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if self.max_step.is_nan() || self.max_step < self.step_size {
            return bad("max_step must be at least step_size");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be positive");
        }
        if self.stop_grad_norm.is_nan() || self.stop_grad_norm <= 0.0 {
            return bad("stop_grad_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub loss: f64,
    pub gap: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct DescentTrace {
    pub restart: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub embedding: Embedding,
    pub report: LossReport,
    pub grad_norm: f64,
    pub steps_taken: usize,
    pub converged: bool,
}

/// Gap at which a run counts as converged.
pub const CONVERGED_GAP: f64 = 1e-6;

/// Runs keep going past `CONVERGED_GAP` to pin the geometry, not just the loss.
const STOP_GAP: f64 = 1e-12;

/// Best run over all restarts: lowest final loss, ties to the lowest index.
pub fn minimize(w: &WeightMatrix, spec: Similarity, q: usize, cfg: &DescentConfig) -> Result<DescentTrace> {
    let runs = minimize_all(w, spec, q, cfg)?;
    Ok(best_of(runs))
}

pub(crate) fn best_of(runs: Vec<DescentTrace>) -> DescentTrace {
    let mut best: Option<DescentTrace> = None;
    for run in runs {
        match &best {
            Some(b) if b.report.loss <= run.report.loss => {}
            _ => best = Some(run),
        }
    }
    best.expect("at least one restart")
}

/// Every restart, in restart order. Restart `r` is seeded with `seed + r`.
pub fn minimize_all(
    w: &WeightMatrix,
    spec: Similarity,
    q: usize,
    cfg: &DescentConfig,
) -> Result<Vec<DescentTrace>> {
    cfg.validate()?;
    spec.validate()?;
    if q == 0 {
        return Err(Error::BadParameter("q must be at least 1".into()));
    }
    let constraint = cfg.constraint.unwrap_or(Constraint::for_similarity(spec));
    let problem = InfoNce::new(w, spec);
    (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
            let x0 = random_start(w.n(), q, cfg.init_scale, &mut rng);
            let settings = Settings::from_config(cfg, constraint, problem.stop_value());
            let run = run(&problem, x0, &settings)?;
            let embedding = Embedding::new(run.x);
            let report = loss_gap(w, &embedding, spec)?;
            let checkpoints = run
                .checkpoints
                .iter()
                .map(|&(step, excess, grad_norm)| Checkpoint {
                    step,
                    loss: problem.bound + excess,
                    gap: problem.gap(excess),
                    grad_norm,
                })
                .collect();
            let converged = run.grad_norm <= cfg.stop_grad_norm || report.gap <= CONVERGED_GAP;
            Ok(DescentTrace {
                restart: r,
                checkpoints,
                embedding,
                report,
                grad_norm: run.grad_norm,
                steps_taken: run.steps,
                converged,
            })
        })
        .collect()
}

pub(crate) fn random_start(n: usize, q: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, q);
    // fill row by row so the draw order does not depend on storage layout
    for i in 0..n {
        for k in 0..q {
            let v: f64 = StandardNormal.sample(rng);
            x[(i, k)] = scale * v;
        }
    }
    x
}

struct InfoNce {
    dist: RowDistribution,
    spec: Similarity,
    bound: f64,
}

impl InfoNce {
    fn new(w: &WeightMatrix, spec: Similarity) -> Self {
        let dist = RowDistribution::new(w);
        let bound = dist.entropy();
        Self { dist, spec, bound }
    }

    fn stop_value(&self) -> f64 {
        STOP_GAP * if self.bound > 0.0 { self.bound } else { 1.0 }
    }

    fn gap(&self, excess: f64) -> f64 {
        if self.bound > 0.0 {
            excess / self.bound
        } else {
            excess
        }
    }
}

impl Objective for InfoNce {
    fn value(&self, x: &DMatrix<f64>) -> f64 {
        match Points::new(&Embedding::new(x.clone()), self.spec) {
            Ok(p) => self.dist.divergence(&p.similarities()),
            Err(_) => f64::NAN,
        }
    }

    fn value_and_grad(&self, x: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        match Points::new(&Embedding::new(x.clone()), self.spec) {
            Ok(p) => self.dist.divergence_and_gradient(&p),
            Err(_) => (f64::NAN, DMatrix::from_element(x.nrows(), x.ncols(), f64::NAN)),
        }
    }
}

/// Smooth objective over `n x q` iterates. The InfoNCE objective is the
/// excess `loss - H(p_W)`, which keeps its relative precision near the bound.
pub(crate) trait Objective: Sync {
    fn value(&self, x: &DMatrix<f64>) -> f64;
    fn value_and_grad(&self, x: &DMatrix<f64>) -> (f64, DMatrix<f64>);
}

pub(crate) struct Settings {
    pub steps: usize,
    pub step_size: f64,
    pub max_step: f64,
    pub decay: f64,
    pub rule: StepRule,
    pub stop_grad_norm: f64,
    /// Stop once the objective is at or below this value.
    pub stop_value: f64,
    pub checkpoint_every: usize,
    pub constraint: Constraint,
}

impl Settings {
    fn from_config(cfg: &DescentConfig, constraint: Constraint, stop_value: f64) -> Self {
        Self {
            steps: cfg.steps,
            step_size: cfg.step_size,
            max_step: cfg.max_step,
            decay: cfg.decay,
            rule: cfg.step_rule,
            stop_grad_norm: cfg.stop_grad_norm,
            stop_value,
            checkpoint_every: cfg.checkpoint_every.max(1),
            constraint,
        }
    }
}

pub(crate) struct Run {
    pub x: DMatrix<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub steps: usize,
    /// `(step, loss, grad_norm)`
    pub checkpoints: Vec<(usize, f64, f64)>,
}

const MAX_HALVINGS: usize = 30;
const PLATEAU_WINDOW: usize = 200;
const PLATEAU_RTOL: f64 = 1e-10;
const MAX_IDLE_DECAYS: usize = 3;

fn retract(x: &mut DMatrix<f64>, constraint: Constraint) {
    match constraint {
        Constraint::Free => {
            let (n, q) = x.shape();
            for k in 0..q {
                let mean = x.column(k).sum() / n as f64;
                x.column_mut(k).add_scalar_mut(-mean);
            }
        }
        Constraint::UnitSphere => {
            for mut row in x.row_iter_mut() {
                let norm = row.norm();
                if norm > 0.0 {
                    row /= norm;
                }
            }
        }
    }
}

fn project(x: &DMatrix<f64>, g: &mut DMatrix<f64>, constraint: Constraint) {
    match constraint {
        Constraint::Free => retract(g, Constraint::Free),
        Constraint::UnitSphere => {
            for i in 0..x.nrows() {
                let radial = x.row(i).dot(&g.row(i));
                for k in 0..x.ncols() {
                    g[(i, k)] -= radial * x[(i, k)];
                }
            }
        }
    }
}

/// Projected gradient descent with monotone backtracking and plateau decay.
pub(crate) fn run<O: Objective + ?Sized>(problem: &O, mut x: DMatrix<f64>, s: &Settings) -> Result<Run> {
    retract(&mut x, s.constraint);
    let (mut loss, mut g) = problem.value_and_grad(&x);
    if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    project(&x, &mut g, s.constraint);
    let mut grad_norm = g.norm();
    let mut checkpoints = vec![(0, loss, grad_norm)];

    let mut cap = match s.rule {
        StepRule::Fixed => s.step_size,
        StepRule::BarzilaiBorwein | StepRule::Accelerated => s.max_step,
    };
    let mut trial = s.step_size;
    let mut window_start = loss;
    let mut window_steps = 0;
    let mut idle_decays = 0;
    let mut step = 0;
    let mut previous = x.clone();
    let mut momentum = 0usize;

    while step < s.steps && grad_norm > s.stop_grad_norm && loss > s.stop_value {
        step += 1;
        let extrapolated = if s.rule == StepRule::Accelerated && momentum > 0 {
            let beta = (momentum as f64 - 1.0) / (momentum as f64 + 2.0);
            let mut y = &x + (&x - &previous) * beta;
            retract(&mut y, s.constraint);
            let (_, mut gy) = problem.value_and_grad(&y);
            if gy.iter().all(|v| v.is_finite()) {
                project(&y, &mut gy, s.constraint);
                Some((y, gy))
            } else {
                None
            }
        } else {
            None
        };
        let (base, direction) = match &extrapolated {
            Some((y, gy)) => (y, gy),
            None => (&x, &g),
        };

        let mut t = trial.min(cap);
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut candidate = base - direction * t;
            retract(&mut candidate, s.constraint);
            let value = problem.value(&candidate);
            if value < loss {
                accepted = Some(candidate);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            if extrapolated.is_some() {
                momentum = 0;
                continue;
            }
            break;
        };

        let (next_loss, mut next_g) = problem.value_and_grad(&next);
        if !next_loss.is_finite() || next_g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        project(&next, &mut next_g, s.constraint);

        trial = match s.rule {
            StepRule::Fixed | StepRule::Accelerated => 2.0 * t,
            StepRule::BarzilaiBorwein => {
                let ds = &next - &x;
                let dg = &next_g - &g;
                let sy = ds.dot(&dg);
                if sy > 0.0 {
                    ds.norm_squared() / sy
                } else {
                    2.0 * t
                }
            }
        };
        if s.rule == StepRule::Accelerated {
            // restart when the step runs uphill along the base gradient
            let uphill = direction.dot(&(&next - &x)) > 0.0;
            momentum = if uphill { 0 } else { momentum + 1 };
        }
        previous = x.clone();

        x = next;
        g = next_g;
        loss = next_loss;
        grad_norm = g.norm();

        window_steps += 1;
        if window_steps == PLATEAU_WINDOW {
            let improved = window_start - loss > PLATEAU_RTOL * window_start.abs();
            if improved {
                idle_decays = 0;
            } else {
                if idle_decays == MAX_IDLE_DECAYS {
                    break;
                }
                idle_decays += 1;
                cap *= s.decay;
            }
            window_start = loss;
            window_steps = 0;
        }

        if step % s.checkpoint_every == 0 {
            checkpoints.push((step, loss, grad_norm));
        }
    }
    if checkpoints.last().map(|c| c.0) != Some(step) {
        checkpoints.push((step, loss, grad_norm));
    }
    Ok(Run {
        x,
        loss,
        grad_norm,
        steps: step,
        checkpoints,
    })
}
