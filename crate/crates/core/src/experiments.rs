//! Encoder-free experiments. Each writes `config.json`, `report.json`,
//! `tables/*.csv` and `heatmaps/*.pgm` under its output directory.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descent::{minimize, minimize_all, DescentConfig};
use crate::distgeo::{procrustes_align, realize_euclidean, AlignMode};
use crate::error::{Error, Result};
use crate::infonce::{loss_gap, similarity_matrix};
use crate::io::{write_json, write_matrix, write_pgm, write_table};
use crate::matrices::{weights_to_dissimilarity, ClassPartition, Embedding, Similarity};
use crate::metrics::{class_block_cosines, min_intra_class_cosine, regularity_deviation};
use crate::optima::{
    optimum_euclidean_labels, optimum_hard_supcon, quasi_optimum_euclidean_supcon, soft_supcon_simplex_tau,
};
use crate::weights::{kernel_weights, soft_supcon_weights, supcon_weights, y_aware_weights, LabelSet};

/// Experiment names as used on the command line.
pub const EXPERIMENTS: [&str; 4] = ["imbalanced-supcon", "yaware-sphere", "kernel-pca", "quasi-optima"];

fn num(v: f64) -> String {
    format!("{v}")
}

fn cosines(z: &Embedding) -> Result<DMatrix<f64>> {
    let u = z.normalized()?;
    Ok(u.as_matrix() * u.as_matrix().transpose())
}

fn write_common<C: Serialize, R: Serialize>(out: &Path, config: &C, report: &R) -> Result<()> {
    write_json(&out.join("config.json"), config)?;
    write_json(&out.join("report.json"), report)
}

// ---------------------------------------------------------------- imbalance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeProfile {
    pub name: String,
    pub sizes: Vec<usize>,
}

/// Balanced, two-level, geometric and linear (`4, 8, ..., 40`) class sizes.
pub fn default_profiles() -> Vec<SizeProfile> {
    let profile = |name: &str, sizes: Vec<usize>| SizeProfile {
        name: name.into(),
        sizes,
    };
    vec![
        profile("balanced", vec![12; 10]),
        profile("two_level", [vec![4; 5], vec![20; 5]].concat()),
        profile(
            "geometric",
            (0..10)
                .map(|c| (4.0 * 10f64.powf(c as f64 / 9.0)).round() as usize)
                .collect(),
        ),
        profile("linear", (1..=10).map(|c| 4 * c).collect()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImbalancedSupconConfig {
    pub seed: u64,
    pub profiles: Vec<SizeProfile>,
    pub q: usize,
    pub tau_hard: f64,
    pub epsilon: f64,
    /// Defaults to the temperature giving a regular simplex.
    pub tau_soft: Option<f64>,
    pub descent: DescentConfig,
}

impl Default for ImbalancedSupconConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            profiles: default_profiles(),
            q: 10,
            tau_hard: 0.1,
            epsilon: (-1.0f64).exp(),
            tau_soft: None,
            descent: DescentConfig {
                restarts: 2,
                ..DescentConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceRun {
    pub loss: String,
    pub profile: String,
    pub n: usize,
    pub tau: f64,
    pub final_loss: f64,
    pub bound: f64,
    pub gap: f64,
    pub converged: bool,
    /// Smallest cosine between samples of one class.
    pub min_intra_cosine: f64,
    /// `max |beta_cc' + 1/(C-1)|` over class-block mean cosines.
    pub regularity_deviation: f64,
    /// Largest disagreement between off-diagonal blocks of equal size pairs.
    pub equal_shape_spread: f64,
    /// Largest `|block mean - reduced Gram|`, Hard SupCon only.
    pub reduced_gram_agreement: Option<f64>,
    pub block_cosines: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalancedSupconReport {
    pub runs: Vec<ImbalanceRun>,
}

/// Largest `|B_ab - B_cd|` over off-diagonal blocks with equal unordered size pairs.
pub fn equal_shape_spread(block: &DMatrix<f64>, sizes: &[usize]) -> f64 {
    let c = sizes.len();
    let key = |a: usize, b: usize| (sizes[a].min(sizes[b]), sizes[a].max(sizes[b]));
    let pairs: Vec<(usize, usize)> = (0..c)
        .flat_map(|a| (0..c).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let mut worst = 0.0f64;
    for &(a, b) in &pairs {
        for &(x, y) in &pairs {
            if key(a, b) == key(x, y) {
                worst = worst.max((block[(a, b)] - block[(x, y)]).abs());
            }
        }
    }
    worst
}

fn max_off_diagonal_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let c = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
            }
        }
    }
    worst
}

/// Hard and Soft SupCon descent across class-size profiles.
pub fn run_imbalanced_supcon(
    cfg: &ImbalancedSupconConfig,
    out: Option<&Path>,
) -> Result<ImbalancedSupconReport> {
    let mut runs = Vec::new();
    let descent = DescentConfig {
        seed: cfg.seed,
        ..cfg.descent.clone()
    };
    for profile in &cfg.profiles {
        let p = ClassPartition::from_sizes(&profile.sizes)?;
        let c = p.num_classes();
        let tau_soft = cfg.tau_soft.unwrap_or(soft_supcon_simplex_tau(c, cfg.epsilon));
        for (loss, tau) in [("hard", cfg.tau_hard), ("soft", tau_soft)] {
            let w = if loss == "hard" {
                supcon_weights(&p)?
            } else {
                soft_supcon_weights(&p, cfg.epsilon)?
            };
            let trace = minimize(&w, Similarity::spherical(tau)?, cfg.q, &descent)?;
            let z = &trace.embedding;
            let block = class_block_cosines(z, &p)?;
            let reduced = if loss == "hard" {
                Some(optimum_hard_supcon(&p, tau, cfg.q.max(c))?)
            } else {
                None
            };
            let name = format!("{loss}_{}", profile.name);
            if let Some(out) = out {
                let order = p.contiguous_order();
                let cos = cosines(z)?;
                let sorted = DMatrix::from_fn(p.n(), p.n(), |i, j| cos[(order[i], order[j])]);
                write_pgm(&out.join("heatmaps").join(format!("{name}.pgm")), &sorted)?;
                write_pgm(&out.join("heatmaps").join(format!("{name}_blocks.pgm")), &block)?;
                write_matrix(&out.join("tables").join(format!("{name}_blocks.csv")), &block)?;
                if let Some(g) = &reduced {
                    write_matrix(
                        &out.join("tables").join(format!("{name}_reduced_gram.csv")),
                        &g.gram,
                    )?;
                }
            }
            runs.push(ImbalanceRun {
                loss: loss.into(),
                profile: profile.name.clone(),
                n: p.n(),
                tau,
                final_loss: trace.report.loss,
                bound: trace.report.bound,
                gap: trace.report.gap,
                converged: trace.converged,
                min_intra_cosine: min_intra_class_cosine(z, &p)?,
                regularity_deviation: regularity_deviation(&block),
                equal_shape_spread: equal_shape_spread(&block, p.sizes()),
                reduced_gram_agreement: reduced.as_ref().map(|g| max_off_diagonal_diff(&g.gram, &block)),
                block_cosines: crate::io::rows_of(&block),
            });
        }
    }
    let report = ImbalancedSupconReport { runs };
    if let Some(out) = out {
        let rows: Vec<Vec<String>> = report
            .runs
            .iter()
            .map(|r| {
                vec![
                    r.loss.clone(),
                    r.profile.clone(),
                    r.n.to_string(),
                    num(r.gap),
                    num(r.min_intra_cosine),
                    num(r.regularity_deviation),
                    num(r.equal_shape_spread),
                    r.reduced_gram_agreement.map(num).unwrap_or_default(),
                ]
            })
            .collect();
        write_table(
            &out.join("tables").join("summary.csv"),
            &[
                "loss",
                "profile",
                "n",
                "gap",
                "min_intra_cosine",
                "regularity_deviation",
                "equal_shape_spread",
                "reduced_gram_agreement",
            ],
            &rows,
        )?;
        write_common(out, cfg, &report)?;
    }
    Ok(report)
}

// ------------------------------------------------------------ y-aware sphere

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YAwareSphereConfig {
    pub seed: u64,
    /// Distinct 1-D label values, replicated cyclically to `n` samples.
    pub line_values: Vec<f64>,
    pub n: usize,
    pub q: usize,
    /// Temperature for the spherical run on line labels.
    pub tau_line: f64,
    /// Circle labels use `tau = 1 / (2 radius^2)`.
    pub circle_radius: f64,
    pub restarts: usize,
    pub descent: DescentConfig,
}

impl Default for YAwareSphereConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            line_values: vec![0.0, 1.0, 2.0],
            n: 60,
            q: 2,
            tau_line: 1.0,
            circle_radius: 1.0,
            restarts: 8,
            descent: DescentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YAwareSphereReport {
    /// Best relative gap over restarts, line labels on the sphere.
    pub line_spherical_floor: f64,
    pub line_spherical_gaps: Vec<f64>,
    pub line_euclidean_gap: f64,
    pub line_euclidean_r2_rigid: f64,
    pub circle_tau: f64,
    pub circle_spherical_gap: f64,
}

pub fn line_labels(values: &[f64], n: usize) -> LabelSet {
    let y: Vec<f64> = (0..n).map(|i| values[i % values.len()]).collect();
    LabelSet::from_values(&y)
}

pub fn circle_labels(n: usize, radius: f64) -> LabelSet {
    let y: Vec<f64> = (0..n)
        .flat_map(|i| {
            let a = i as f64 * std::f64::consts::TAU / n as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect();
    LabelSet::new(DMatrix::from_row_slice(n, 2, &y))
}

/// Spherical versus Euclidean geometry for label-distance weights.
pub fn run_yaware_sphere(cfg: &YAwareSphereConfig, out: Option<&Path>) -> Result<YAwareSphereReport> {
    if cfg.line_values.is_empty() || cfg.n == 0 {
        return Err(Error::BadParameter(
            "need at least one label value and sample".into(),
        ));
    }
    let descent = DescentConfig {
        seed: cfg.seed,
        ..cfg.descent.clone()
    };
    let line = line_labels(&cfg.line_values, cfg.n);
    let w_line = y_aware_weights(&line)?;
    let spherical = DescentConfig {
        restarts: cfg.restarts,
        ..descent.clone()
    };
    let sphere_runs = minimize_all(&w_line, Similarity::spherical(cfg.tau_line)?, cfg.q, &spherical)?;
    let line_spherical_gaps: Vec<f64> = sphere_runs.iter().map(|t| t.report.gap).collect();
    let line_spherical_floor = line_spherical_gaps.iter().cloned().fold(f64::INFINITY, f64::min);

    let euclid = minimize(&w_line, Similarity::Euclidean, cfg.q, &descent)?;
    let target = optimum_euclidean_labels(&line, cfg.q)?;
    let line_euclidean_r2_rigid = procrustes_align(&euclid.embedding, &target, AlignMode::Rigid)?.r2;

    let circle = circle_labels(cfg.n, cfg.circle_radius);
    let circle_tau = 1.0 / (2.0 * cfg.circle_radius * cfg.circle_radius);
    let w_circle = y_aware_weights(&circle)?;
    let circle_run = minimize(&w_circle, Similarity::spherical(circle_tau)?, cfg.q, &descent)?;

    let report = YAwareSphereReport {
        line_spherical_floor,
        line_spherical_gaps,
        line_euclidean_gap: euclid.report.gap,
        line_euclidean_r2_rigid,
        circle_tau,
        circle_spherical_gap: circle_run.report.gap,
    };
    if let Some(out) = out {
        let best = sphere_runs
            .iter()
            .min_by(|a, b| a.report.gap.total_cmp(&b.report.gap))
            .expect("at least one restart");
        write_pgm(
            &out.join("heatmaps").join("line_spherical.pgm"),
            &cosines(&best.embedding)?,
        )?;
        write_pgm(
            &out.join("heatmaps").join("circle_spherical.pgm"),
            &cosines(&circle_run.embedding)?,
        )?;
        write_matrix(
            &out.join("tables").join("line_euclidean_embedding.csv"),
            euclid.embedding.as_matrix(),
        )?;
        let mut rows: Vec<Vec<String>> = report
            .line_spherical_gaps
            .iter()
            .enumerate()
            .map(|(r, g)| vec!["line".into(), "spherical".into(), r.to_string(), num(*g)])
            .collect();
        rows.push(vec![
            "line".into(),
            "euclidean".into(),
            "best".into(),
            num(report.line_euclidean_gap),
        ]);
        rows.push(vec![
            "circle".into(),
            "spherical".into(),
            "best".into(),
            num(report.circle_spherical_gap),
        ]);
        write_table(
            &out.join("tables").join("gaps.csv"),
            &["labels", "similarity", "restart", "gap"],
            &rows,
        )?;
        write_common(out, cfg, &report)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------- kernel PCA

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelPcaConfig {
    pub seed: u64,
    pub n: usize,
    pub rank: usize,
    pub q: usize,
    /// Size of the identity-kernel check.
    pub identity_n: usize,
    pub descent: DescentConfig,
}

impl Default for KernelPcaConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 60,
            rank: 2,
            q: 2,
            identity_n: 6,
            descent: DescentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPcaReport {
    pub gap: f64,
    pub r2_rigid: f64,
    /// Gap floor with one dimension fewer than the kernel rank.
    pub underdimensioned_gap: Option<f64>,
    /// `max / min` pairwise distance for the identity kernel.
    pub identity_distance_ratio: f64,
}

/// Random rank-`r` linear kernel `K = Y Y^T` with `Y` uniform in `[-1, 1]`.
pub fn random_low_rank_labels(n: usize, rank: usize, seed: u64) -> LabelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = DMatrix::zeros(n, rank);
    for i in 0..n {
        for k in 0..rank {
            y[(i, k)] = rng.random_range(-1.0..1.0);
        }
    }
    LabelSet::new(y)
}

/// Descent on kernel weights versus the kernel principal components.
pub fn run_kernel_pca(cfg: &KernelPcaConfig, out: Option<&Path>) -> Result<KernelPcaReport> {
    let descent = DescentConfig {
        seed: cfg.seed,
        ..cfg.descent.clone()
    };
    let labels = random_low_rank_labels(cfg.n, cfg.rank, cfg.seed);
    let kernel = labels.linear_kernel();
    let w = kernel_weights(&kernel)?;
    let pcs = realize_euclidean(&weights_to_dissimilarity(&w)?, cfg.q)?;
    let trace = minimize(&w, Similarity::Euclidean, cfg.q, &descent)?;
    let r2_rigid = procrustes_align(&trace.embedding, &pcs, AlignMode::Rigid)?.r2;

    let underdimensioned_gap = if cfg.rank >= 2 {
        Some(
            minimize(&w, Similarity::Euclidean, cfg.rank - 1, &descent)?
                .report
                .gap,
        )
    } else {
        None
    };

    let m = cfg.identity_n;
    let identity = kernel_weights(&DMatrix::identity(m, m))?;
    let simplex = minimize(
        &identity,
        Similarity::Euclidean,
        m.saturating_sub(1).max(1),
        &descent,
    )?;
    let mut dists = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            dists.push(simplex.embedding.squared_distance(i, j).sqrt());
        }
    }
    let max = dists.iter().cloned().fold(f64::MIN, f64::max);
    let min = dists.iter().cloned().fold(f64::MAX, f64::min);

    let report = KernelPcaReport {
        gap: trace.report.gap,
        r2_rigid,
        underdimensioned_gap,
        identity_distance_ratio: max / min,
    };
    if let Some(out) = out {
        write_matrix(&out.join("tables").join("kernel.csv"), &kernel)?;
        write_matrix(
            &out.join("tables").join("principal_components.csv"),
            pcs.as_matrix(),
        )?;
        write_matrix(
            &out.join("tables").join("descent_embedding.csv"),
            trace.embedding.as_matrix(),
        )?;
        let s = similarity_matrix(&trace.embedding, Similarity::Euclidean)?;
        let scale = s.amin().abs().max(f64::MIN_POSITIVE);
        write_pgm(
            &out.join("heatmaps").join("similarity.pgm"),
            &s.map(|v| 1.0 + 2.0 * v / scale),
        )?;
        write_common(out, cfg, &report)?;
    }
    Ok(report)
}

// -------------------------------------------------------------- quasi-optima

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrototypeShape {
    pub name: String,
    pub prototypes: Vec<Vec<f64>>,
}

pub fn default_shapes() -> Vec<PrototypeShape> {
    let shape = |name: &str, pts: [[f64; 2]; 3]| PrototypeShape {
        name: name.into(),
        prototypes: pts.iter().map(|p| p.to_vec()).collect(),
    };
    vec![
        shape("equilateral", [[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]]),
        shape("right", [[0.0, 0.0], [1.0, 0.0], [0.0, 1.5]]),
        shape("scalene", [[0.0, 0.0], [1.0, 0.0], [0.3, 1.2]]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuasiOptimaConfig {
    pub sizes: Vec<usize>,
    pub shapes: Vec<PrototypeShape>,
    pub scales: Vec<f64>,
}

impl Default for QuasiOptimaConfig {
    fn default() -> Self {
        Self {
            sizes: vec![4, 4, 4],
            shapes: default_shapes(),
            scales: vec![1.0, 2.0, 5.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSweep {
    pub shape: String,
    /// Absolute gaps, one per scale.
    pub gaps: Vec<f64>,
    pub strictly_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiOptimaReport {
    pub scales: Vec<f64>,
    pub sweeps: Vec<ShapeSweep>,
    /// Rigid r2 between shapes at the largest scale, `[a, b, r2]`.
    pub mutual_r2: Vec<(String, String, f64)>,
}

/// Euclidean SupCon quasi-optima for several prototype shapes.
pub fn run_quasi_optima(cfg: &QuasiOptimaConfig, out: Option<&Path>) -> Result<QuasiOptimaReport> {
    let p = ClassPartition::from_sizes(&cfg.sizes)?;
    let w = supcon_weights(&p)?;
    let top = cfg.scales.iter().cloned().fold(f64::MIN, f64::max);
    let mut sweeps = Vec::new();
    let mut finals = Vec::new();
    for shape in &cfg.shapes {
        let protos = crate::matrices::grid_from_rows_rect(&shape.prototypes)?;
        let mut gaps = Vec::new();
        for &m in &cfg.scales {
            let z = quasi_optimum_euclidean_supcon(&p, &protos, m)?;
            gaps.push(loss_gap(&w, &z, Similarity::Euclidean)?.absolute_gap);
        }
        let strictly_decreasing = gaps.windows(2).all(|g| g[1] < g[0]);
        finals.push(quasi_optimum_euclidean_supcon(&p, &protos, top)?);
        sweeps.push(ShapeSweep {
            shape: shape.name.clone(),
            gaps,
            strictly_decreasing,
        });
    }
    let mut mutual_r2 = Vec::new();
    for a in 0..cfg.shapes.len() {
        for b in (a + 1)..cfg.shapes.len() {
            let r2 = procrustes_align(&finals[a], &finals[b], AlignMode::Rigid)?.r2;
            mutual_r2.push((cfg.shapes[a].name.clone(), cfg.shapes[b].name.clone(), r2));
        }
    }
    let report = QuasiOptimaReport {
        scales: cfg.scales.clone(),
        sweeps,
        mutual_r2,
    };
    if let Some(out) = out {
        let mut rows = Vec::new();
        for s in &report.sweeps {
            for (m, g) in cfg.scales.iter().zip(&s.gaps) {
                rows.push(vec![s.shape.clone(), num(*m), num(*g)]);
            }
        }
        write_table(
            &out.join("tables").join("gaps.csv"),
            &["shape", "m", "absolute_gap"],
            &rows,
        )?;
        let rows: Vec<Vec<String>> = report
            .mutual_r2
            .iter()
            .map(|(a, b, r)| vec![a.clone(), b.clone(), num(*r)])
            .collect();
        write_table(
            &out.join("tables").join("mutual_r2.csv"),
            &["shape_a", "shape_b", "r2_rigid"],
            &rows,
        )?;
        for (shape, z) in cfg.shapes.iter().zip(&finals) {
            let s = similarity_matrix(z, Similarity::Euclidean)?;
            let scale = s.amin().abs().max(f64::MIN_POSITIVE);
            write_pgm(
                &out.join("heatmaps").join(format!("{}.pgm", shape.name)),
                &s.map(|v| 1.0 + 2.0 * v / scale),
            )?;
        }
        write_common(out, cfg, &report)?;
    }
    Ok(report)
}
