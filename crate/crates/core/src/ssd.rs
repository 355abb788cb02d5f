//! Similarity-space distillation.
//!
//! A projection `F` is trained so that cosine neighborhoods of its output
//! match those of a teacher embedding. Each row of a similarity matrix is
//! turned into a distribution over the other rows by a softmax with the self
//! entry removed, and the student pays `KL(student ‖ teacher)` per row.
//!
//! [`train_ss2d`] trains one `F` for a whole set of nested sizes at once: the
//! student for size `m` is the re-normalized first `m` coordinates of `F`'s
//! output. [`train_ssd_single`] trains a dedicated `d → m` map per size.

use crate::data::ReferenceSet;
use crate::error::{Error, Result};
use crate::linalg::{l2_normalize_rows_strict, matmul, matmul_nt, Matrix};
use crate::nn::{adam_step, Activation, AdamState, GradientSet, Layer, MlpModel};
use crate::training::{epoch_batches, TrainConfig, TrainStreams};

/// Floor applied to probabilities inside logarithms.
pub const KL_EPSILON: f64 = 1e-12;

/// Largest row count for which whole-set losses are computed in one block.
pub const FULL_MATRIX_MAX_ROWS: usize = 4096;

/// Pairwise cosine similarities of a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySpace {
    pub matrix: Matrix,
    pub source_dim: usize,
}

pub fn similarity_space(embeddings: &Matrix) -> Result<SimilaritySpace> {
    let unit = l2_normalize_rows_strict(embeddings)?;
    Ok(SimilaritySpace {
        matrix: matmul_nt(&unit, &unit)?,
        source_dim: embeddings.cols(),
    })
}

/// Strictly increasing prefix sizes; the largest is the projection width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NestedSizes(Vec<usize>);

impl NestedSizes {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Config("nested sizes must not be empty".into()));
        }
        if sizes[0] == 0 {
            return Err(Error::Config("nested sizes must be positive".into()));
        }
        if sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "nested sizes must be strictly increasing, got {sizes:?}"
            )));
        }
        Ok(Self(sizes))
    }

    /// `d, d/2, d/4, …` down to 8, in ascending order. Halving stops early
    /// at an odd size; `d < 8` gives `{d}`.
    pub fn halving(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        let mut sizes = vec![d];
        let mut m = d;
        while m.is_multiple_of(2) && m / 2 >= 8 {
            m /= 2;
            sizes.push(m);
        }
        sizes.reverse();
        Self::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn max(&self) -> usize {
        *self.0.last().expect("non-empty")
    }
}

/// Softmax over one similarity row with the self entry left out.
#[derive(Debug, Clone, PartialEq)]
pub struct RowDistribution {
    pub probabilities: Vec<f64>,
    pub temperature: f64,
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {t}")))
    }
}

/// Numerically stable softmax of `logits` in place.
fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    logits.iter_mut().for_each(|v| *v /= sum);
}

pub fn row_distribution(
    similarity_row: &[f64],
    self_index: usize,
    temperature: f64,
) -> Result<RowDistribution> {
    check_temperature(temperature)?;
    if self_index >= similarity_row.len() || similarity_row.len() < 2 {
        return Err(Error::Precondition(format!(
            "self index {self_index} invalid for a row of length {}",
            similarity_row.len()
        )));
    }
    let mut logits: Vec<f64> = similarity_row
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != self_index)
        .map(|(_, s)| s / temperature)
        .collect();
    softmax_in_place(&mut logits);
    Ok(RowDistribution {
        probabilities: logits,
        temperature,
    })
}

/// `Σ_j p_j ln(p_j / q_j)` for student `p` and teacher `q`, with both
/// probabilities floored at [`KL_EPSILON`] inside the logarithms, and its
/// gradient with respect to the student's softmax logits.
pub fn kl_row_loss(student: &RowDistribution, teacher: &RowDistribution) -> Result<(f64, Vec<f64>)> {
    if student.probabilities.len() != teacher.probabilities.len() {
        return Err(Error::Shape(format!(
            "student has {} entries, teacher {}",
            student.probabilities.len(),
            teacher.probabilities.len()
        )));
    }
    if student.temperature != teacher.temperature {
        return Err(Error::Config("student and teacher temperatures differ".into()));
    }
    Ok(kl_with_grad(&student.probabilities, &teacher.probabilities))
}

fn kl_with_grad(p: &[f64], q: &[f64]) -> (f64, Vec<f64>) {
    // d/dp_j of p_j ln max(p_j, ε) − p_j ln max(q_j, ε), then through softmax.
    let mut kl = 0.0;
    let mut a = Vec::with_capacity(p.len());
    for (&pj, &qj) in p.iter().zip(q) {
        let log_ratio = pj.max(KL_EPSILON).ln() - qj.max(KL_EPSILON).ln();
        kl += pj * log_ratio;
        a.push(log_ratio + if pj >= KL_EPSILON { 1.0 } else { 0.0 });
    }
    let mean_a: f64 = p.iter().zip(&a).map(|(pj, aj)| pj * aj).sum();
    let grad = p.iter().zip(&a).map(|(pj, aj)| pj * (aj - mean_a)).collect();
    (kl, grad)
}

/// Teacher row distributions for one block of rows, diagonal excluded.
fn teacher_rows(teacher: &Matrix, temperature: f64) -> Result<Vec<Vec<f64>>> {
    let space = similarity_space(teacher)?;
    (0..teacher.rows())
        .map(|i| Ok(row_distribution(space.matrix.row(i), i, temperature)?.probabilities))
        .collect()
}

/// Sum over rows of the student-vs-teacher KL for each size in `sizes`,
/// with the gradient with respect to the projection output `y`.
fn prefix_losses(
    y: &Matrix,
    teacher: &[Vec<f64>],
    sizes: &[usize],
    temperature: f64,
) -> Result<(Vec<f64>, Matrix)> {
    let b = y.rows();
    let mut grad_y = Matrix::zeros(b, y.cols());
    let mut losses = Vec::with_capacity(sizes.len());
    for &m in sizes {
        let prefix = y.truncate_cols(m);
        let unit = l2_normalize_rows_strict(&prefix).map_err(|e| match e {
            Error::ZeroRow { row } => Error::Numeric(format!("prefix {m} of output row {row} is zero")),
            other => other,
        })?;
        let sim = matmul_nt(&unit, &unit)?;

        // g[i][j] = ∂L/∂S_ij; the diagonal never enters the loss.
        let mut g = Matrix::zeros(b, b);
        let mut total = 0.0;
        for i in 0..b {
            let student = row_distribution(sim.row(i), i, temperature)?;
            let (kl, dlogits) = kl_with_grad(&student.probabilities, &teacher[i]);
            total += kl;
            let row = g.row_mut(i);
            for (j, d) in (0..b).filter(|&j| j != i).zip(dlogits) {
                row[j] = d / temperature;
            }
        }
        losses.push(total);

        // S = Û Ûᵀ, so ∂L/∂Û = (G + Gᵀ) Û.
        let sym = g.add(&g.transpose())?;
        let d_unit = matmul(&sym, &unit)?;
        // Through row normalization: (g − û(û·g)) / ‖p‖.
        for i in 0..b {
            let u = unit.row(i);
            let du = d_unit.row(i);
            let n = crate::linalg::norm(prefix.row(i));
            let proj = crate::linalg::dot(u, du);
            let out = &mut grad_y.row_mut(i)[..m];
            for ((o, ui), gi) in out.iter_mut().zip(u).zip(du) {
                *o += (gi - ui * proj) / n;
            }
        }
    }
    Ok((losses, grad_y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsdObjective {
    /// Summed row KL for each size, in the order of `sizes`.
    pub per_size: Vec<f64>,
    pub total: f64,
    pub grads: GradientSet,
}

/// Nested distillation loss of `model` on one block of rows.
pub fn ss2d_objective(
    model: &MlpModel,
    inputs: &Matrix,
    teacher: &Matrix,
    sizes: &NestedSizes,
    temperature: f64,
) -> Result<SsdObjective> {
    check_temperature(temperature)?;
    if inputs.rows() != teacher.rows() || inputs.rows() < 2 {
        return Err(Error::Shape(format!(
            "need matching blocks of at least 2 rows, got {} inputs and {} teacher rows",
            inputs.rows(),
            teacher.rows()
        )));
    }
    if sizes.max() != model.output_dim() {
        return Err(Error::Precondition(format!(
            "largest nested size {} differs from projection width {}",
            sizes.max(),
            model.output_dim()
        )));
    }
    let q = teacher_rows(teacher, temperature)?;
    let (y, tape) = model.forward(inputs)?;
    let (per_size, grad_y) = prefix_losses(&y, &q, sizes.sizes(), temperature)?;
    let (grads, _) = model.backward(&tape, &grad_y)?;
    Ok(SsdObjective {
        total: per_size.iter().sum(),
        per_size,
        grads,
    })
}

/// Whole-set loss per size, divided by the row count. Limited to
/// [`FULL_MATRIX_MAX_ROWS`] rows.
pub fn full_loss_per_row(
    model: &MlpModel,
    teacher: &Matrix,
    sizes: &NestedSizes,
    temperature: f64,
) -> Result<Vec<f64>> {
    if teacher.rows() > FULL_MATRIX_MAX_ROWS {
        return Err(Error::Precondition(format!(
            "{} rows exceed the full-matrix limit of {FULL_MATRIX_MAX_ROWS}",
            teacher.rows()
        )));
    }
    let obj = ss2d_objective(model, teacher, teacher, sizes, temperature)?;
    let n = teacher.rows() as f64;
    Ok(obj.per_size.iter().map(|l| l / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsdConfig {
    pub temperature: f64,
    /// Start `F` at (a truncation of) the identity instead of a random map.
    pub identity_init: bool,
    pub train: TrainConfig,
}

impl Default for SsdConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            identity_init: false,
            train: TrainConfig {
                batch_size: 512,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsdEpoch {
    pub epoch: usize,
    /// `(m, mean per-row KL over the epoch's batches)`.
    pub per_size: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct SsdTraining {
    pub model: MlpModel,
    pub sizes: NestedSizes,
    pub history: Vec<SsdEpoch>,
}

impl SsdTraining {
    /// Last recorded per-row loss for size `m`.
    pub fn final_loss(&self, m: usize) -> Option<f64> {
        let last = self.history.last()?;
        last.per_size.iter().find(|(s, _)| *s == m).map(|(_, l)| *l)
    }
}

fn init_projection(input: usize, output: usize, identity: bool, streams: &mut TrainStreams) -> MlpModel {
    let layer = if identity {
        let mut w = Matrix::zeros(output, input);
        for i in 0..output.min(input) {
            w.set(i, i, 1.0);
        }
        Layer {
            weight: w,
            bias: vec![0.0; output],
            activation: Activation::Identity,
        }
    } else {
        Layer::uniform(input, output, Activation::Identity, &mut streams.init)
    };
    MlpModel::new(vec![layer]).expect("single layer")
}

fn train(teacher: &ReferenceSet, sizes: NestedSizes, config: &SsdConfig) -> Result<SsdTraining> {
    let z = teacher.embeddings();
    check_temperature(config.temperature)?;
    config.train.validate()?;
    if z.rows() < 2 {
        return Err(Error::Precondition(format!(
            "training needs at least 2 rows, got {}",
            z.rows()
        )));
    }
    let mut streams = TrainStreams::new(config.train.seed);
    let mut model = init_projection(z.cols(), sizes.max(), config.identity_init, &mut streams);
    let mut state = AdamState::new(&model, config.train.adam);

    let mut history = Vec::with_capacity(config.train.epochs);
    for epoch in 0..config.train.epochs {
        let batches = epoch_batches(z.rows(), config.train.batch_size, 2, &mut streams.shuffle);
        let mut acc = vec![0.0; sizes.sizes().len()];
        let mut rows = 0usize;
        for (b, idx) in batches.iter().enumerate() {
            let block = z.select_rows(idx);
            let obj = ss2d_objective(&model, &block, &block, &sizes, config.temperature)?;
            if !obj.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite distillation loss at epoch {epoch}, batch {b}"
                )));
            }
            adam_step(&mut model, &obj.grads, &mut state)?;
            acc.iter_mut().zip(&obj.per_size).for_each(|(a, l)| *a += l);
            rows += idx.len();
        }
        history.push(SsdEpoch {
            epoch,
            per_size: sizes
                .sizes()
                .iter()
                .zip(&acc)
                .map(|(&m, &l)| (m, l / rows as f64))
                .collect(),
        });
    }
    Ok(SsdTraining {
        model,
        sizes,
        history,
    })
}

/// Trains one projection `F: d → max(sizes)` whose every prefix in `sizes`
/// distills the teacher's similarity structure.
pub fn train_ss2d(teacher: &ReferenceSet, sizes: &NestedSizes, config: &SsdConfig) -> Result<SsdTraining> {
    train(teacher, sizes.clone(), config)
}

/// Dedicated `d → m` distillation for a single size.
pub fn train_ssd_single(teacher: &ReferenceSet, m: usize, config: &SsdConfig) -> Result<SsdTraining> {
    train(teacher, NestedSizes::new(vec![m])?, config)
}

/// `F(x)` truncated to its first `m` coordinates, rows unit-normalized.
pub fn project_prefix(model: &MlpModel, embeddings: &Matrix, m: usize) -> Result<Matrix> {
    if m == 0 || m > model.output_dim() {
        return Err(Error::Precondition(format!(
            "prefix size {m} outside 1..={}",
            model.output_dim()
        )));
    }
    l2_normalize_rows_strict(&model.predict(embeddings)?.truncate_cols(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamConfig;
    use crate::rng::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    fn dist(p: &[f64]) -> RowDistribution {
        RowDistribution {
            probabilities: p.to_vec(),
            temperature: 1.0,
        }
    }

    #[test]
    fn similarity_examples() {
        let s = similarity_space(&Matrix::identity(3)).unwrap();
        assert_eq!(s.matrix, Matrix::identity(3));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let two = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let s = similarity_space(&two).unwrap();
        assert!((s.matrix.get(0, 1) - h).abs() < 1e-15);
        assert!((s.matrix.get(1, 0) - h).abs() < 1e-15);
        let z = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(similarity_space(&z), Err(Error::ZeroRow { row: 1 })));
    }

    #[test]
    fn similarity_invariants() {
        let x = random(12, 5, 1);
        let s = similarity_space(&x).unwrap().matrix;
        assert!(s.max_abs_diff(&s.transpose()) < 1e-15);
        for i in 0..12 {
            assert!((s.get(i, i) - 1.0).abs() < 1e-12);
            assert!(s.row(i).iter().all(|v| v.abs() <= 1.0 + 1e-9));
        }
        let scaled = similarity_space(&x.scale(7.5)).unwrap().matrix;
        assert!(scaled.max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn nested_sizes() {
        assert_eq!(NestedSizes::halving(64).unwrap().sizes(), &[8, 16, 32, 64]);
        assert_eq!(NestedSizes::halving(8).unwrap().sizes(), &[8]);
        assert_eq!(NestedSizes::halving(5).unwrap().sizes(), &[5]);
        assert_eq!(NestedSizes::halving(48).unwrap().sizes(), &[12, 24, 48]);
        assert!(NestedSizes::new(vec![]).is_err());
        assert!(NestedSizes::new(vec![0, 4]).is_err());
        assert!(NestedSizes::new(vec![4, 4]).is_err());
        assert!(NestedSizes::new(vec![8, 4]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let d = row_distribution(&[1.0, 0.0, 0.0], 2, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((d.probabilities[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((d.probabilities[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((d.probabilities[0] - 0.7311).abs() < 1e-4);

        let u = row_distribution(&[0.3; 5], 0, 0.7).unwrap();
        assert!(u.probabilities.iter().all(|p| (p - 0.25).abs() < 1e-15));

        let hot = row_distribution(&[1.0, -1.0, 0.5, 0.9], 3, 1e9).unwrap();
        assert!(hot.probabilities.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-6));

        assert!(matches!(row_distribution(&[1.0, 0.0], 0, 0.0), Err(Error::Config(_))));
        assert!(matches!(row_distribution(&[1.0, 0.0], 0, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn kl_examples() {
        let (kl, _) = kl_row_loss(&dist(&[0.75, 0.25]), &dist(&[0.5, 0.5])).unwrap();
        let expect = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((kl - expect).abs() < 1e-15);
        assert!((kl - 0.1308).abs() < 1e-4);
        let (same, grad) = kl_row_loss(&dist(&[0.2, 0.3, 0.5]), &dist(&[0.2, 0.3, 0.5])).unwrap();
        assert_eq!(same, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
        assert!(kl_row_loss(&dist(&[1.0]), &dist(&[0.5, 0.5])).is_err());
        // A zero teacher entry is floored rather than producing infinity.
        let (floored, _) = kl_row_loss(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap();
        assert!(floored.is_finite() && floored > 0.0);
    }

    #[test]
    fn kl_is_nonnegative_and_gradient_matches() {
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let mut q: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            softmax_in_place(&mut q);
            let f = |l: &[f64]| {
                let mut p = l.to_vec();
                softmax_in_place(&mut p);
                kl_with_grad(&p, &q)
            };
            let (kl, grad) = f(&logits);
            assert!(kl >= 0.0);
            for k in 0..6 {
                let h = 1e-6;
                let mut a = logits.clone();
                a[k] += h;
                let mut b = logits.clone();
                b[k] -= h;
                let fd = (f(&a).0 - f(&b).0) / (2.0 * h);
                assert!((fd - grad[k]).abs() < 1e-8, "{fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = Rng::new(11);
        let z = random(9, 6, 12);
        let model = MlpModel::init(&[6, 6], &[Activation::Identity], &mut rng).unwrap();
        let sizes = NestedSizes::new(vec![2, 4, 6]).unwrap();
        let obj = ss2d_objective(&model, &z, &z, &sizes, 0.5).unwrap();
        let analytic = obj.grads.flatten();
        let params = model.flat_params();
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let h = 1e-6;
            let eval = |delta: f64| {
                let mut m = model.clone();
                let mut p = params.clone();
                p[i] += delta;
                m.set_flat_params(&p).unwrap();
                ss2d_objective(&m, &z, &z, &sizes, 0.5).unwrap().total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn identity_projection_is_a_fixed_point() {
        let z = random(40, 8, 2);
        let sizes = NestedSizes::new(vec![8]).unwrap();
        let loss = full_loss_per_row(&MlpModel::identity(8), &z, &sizes, 1.0).unwrap();
        assert!(loss[0] < 1e-12);

        let config = SsdConfig {
            identity_init: true,
            train: TrainConfig {
                epochs: 1,
                batch_size: 64,
                ..TrainConfig::default()
            },
            ..SsdConfig::default()
        };
        let run = train_ssd_single(&ReferenceSet::new(z), 8, &config).unwrap();
        assert!(run.history[0].per_size[0].1 < 1e-6);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let z = random(64, 16, 5);
        let refs = ReferenceSet::new(z.clone());
        let sizes = NestedSizes::halving(16).unwrap();
        let config = SsdConfig {
            train: TrainConfig {
                epochs: 60,
                batch_size: 32,
                adam: AdamConfig {
                    learning_rate: 1e-2,
                    ..AdamConfig::default()
                },
                seed: 9,
            },
            ..SsdConfig::default()
        };
        let a = train_ss2d(&refs, &sizes, &config).unwrap();
        let b = train_ss2d(&refs, &sizes, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        let first = &a.history[0].per_size;
        let last = &a.history.last().unwrap().per_size;
        for (f, l) in first.iter().zip(last) {
            assert!(l.1 < f.1, "size {}: {} → {}", f.0, f.1, l.1);
        }
        assert!(last[1].1 < last[0].1);
    }

    #[test]
    fn prefixes_nest() {
        let mut rng = Rng::new(8);
        let model = MlpModel::init(&[5, 6], &[Activation::Identity], &mut rng).unwrap();
        let x = random(7, 5, 9);
        let full = model.predict(&x).unwrap();
        let p6 = project_prefix(&model, &x, 6).unwrap();
        let p3 = project_prefix(&model, &x, 3).unwrap();
        assert!(p6.max_abs_diff(&l2_normalize_rows_strict(&full).unwrap()) < 1e-15);
        assert!(p3.max_abs_diff(&l2_normalize_rows_strict(&full.truncate_cols(3)).unwrap()) < 1e-15);
        for r in 0..7 {
            assert!((crate::linalg::norm(p3.row(r)) - 1.0).abs() < 1e-12);
        }
        assert!(project_prefix(&model, &x, 0).is_err());
        assert!(project_prefix(&model, &x, 7).is_err());
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let z = random(4, 3, 1);
        let sizes = NestedSizes::new(vec![2]).unwrap();
        assert!(ss2d_objective(&MlpModel::identity(3), &z, &z, &sizes, 1.0).is_err());
    }
}
