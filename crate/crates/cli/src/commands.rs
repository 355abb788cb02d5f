//! One function per subcommand. Every command reads and writes inside the
//! run directory of its configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use simspace::aesvc::train_aesvc;
use simspace::data::{generate, read_embeddings, write_embeddings, EmbeddingFile, ReferenceSet};
use simspace::linalg::{l2_normalize_rows_strict, Matrix};
use simspace::nn::{load_checkpoint, save_checkpoint, Activation, Layer, MlpModel};
use simspace::retrieval::{evaluate, pca_fit, RetrievalReport, REPORT_CSV_HEADER};
use simspace::ssd::{project_prefix, train_ss2d, train_ssd_single, SsdEpoch};
use simspace::theory::{
    cos_moments_closed_form, discriminative_power, empirical_similarity_histogram,
    monte_carlo_cos_moments, CosineMoments, Spectrum,
};
use simspace::Rng;

use crate::config::RunConfig;

pub const REFS: &str = "refs.emb";
pub const QUERIES: &str = "queries.emb";
pub const PCA_CKPT: &str = "pca.ckpt";
pub const ENCODER_CKPT: &str = "aesvc_encoder.ckpt";
pub const DECODER_CKPT: &str = "aesvc_decoder.ckpt";
pub const SS2D_CKPT: &str = "ss2d.ckpt";
pub const CONFIG_ECHO: &str = "config.toml";

pub fn ssd_checkpoint(m: usize) -> String {
    format!("ssd_m{m}.ckpt")
}

/// A resolved configuration bound to its run directory.
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
    hash: String,
}

impl Run {
    /// Creates the run directory and echoes the resolved configuration.
    pub fn open(config: RunConfig) -> Result<Self> {
        let dir = config.run_dir();
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create run directory {}", dir.display()))?;
        std::fs::write(dir.join(CONFIG_ECHO), config.to_toml())?;
        Ok(Self {
            hash: config.hash(),
            config,
            dir,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.exists() {
            bail!(
                "missing {}; run `simspace {producer}` with the same configuration first",
                p.display()
            );
        }
        Ok(p)
    }

    fn read(&self, name: &str, producer: &str) -> Result<EmbeddingFile> {
        let p = self.require(name, producer)?;
        read_embeddings(&p).with_context(|| format!("cannot read {}", p.display()))
    }

    fn labelled(&self, name: &str) -> Result<(Matrix, Vec<u32>)> {
        let f = self.read(name, "gen")?;
        let labels = f
            .labels
            .with_context(|| format!("{name} carries no labels"))?;
        Ok((f.embeddings, labels))
    }

    fn model(&self, name: &str, producer: &str) -> Result<MlpModel> {
        let p = self.require(name, producer)?;
        load_checkpoint(&p).with_context(|| format!("cannot load {}", p.display()))
    }

    fn save_model(&self, name: &str, model: &MlpModel) -> Result<()> {
        save_checkpoint(self.path(name), model).with_context(|| format!("cannot write {name}"))
    }

    fn write_embeddings(&self, name: &str, m: &Matrix, labels: &[u32]) -> Result<()> {
        write_embeddings(self.path(name), m, Some(labels)).with_context(|| format!("cannot write {name}"))
    }

    /// CSV with the config hash as a leading comment line, then `header`.
    fn write_csv(&self, name: &str, header: &str, body: &str) -> Result<PathBuf> {
        let path = self.path(name);
        let text = format!("# config_hash={}\n{header}\n{body}", self.hash);
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    /// Reference rows only; query vectors never reach a trainer.
    fn training_set(&self) -> Result<ReferenceSet> {
        Ok(ReferenceSet::new(self.read(REFS, "gen")?.embeddings))
    }

    fn eval_dims(&self, available: usize) -> Result<&[usize]> {
        let dims = &self.config.eval.dims;
        if let Some(d) = dims.iter().find(|&&d| d > available) {
            bail!("eval dim {d} exceeds the available {available} dimensions");
        }
        Ok(dims)
    }
}

pub fn cmd_gen(run: &Run) -> Result<Vec<PathBuf>> {
    let data = generate(&run.config.synth_spec())?;
    let refs = data.references();
    let queries = data.queries();
    run.write_embeddings(REFS, &refs.embeddings, &refs.labels)?;
    run.write_embeddings(QUERIES, &queries.embeddings, &queries.labels)?;
    Ok(vec![run.path(REFS), run.path(QUERIES)])
}

/// PCA fitted on the references as a single affine layer
/// `y = Cᵀ(x − μ)`, so it shares the checkpoint format.
fn pca_model(refs: &ReferenceSet, out_dim: usize) -> Result<MlpModel> {
    let p = pca_fit(refs, out_dim)?;
    let weight = p.components.transpose();
    let bias = (0..out_dim)
        .map(|c| -weight.row(c).iter().zip(&p.mean).map(|(w, m)| w * m).sum::<f64>())
        .collect();
    Ok(MlpModel::new(vec![Layer::new(weight, bias, Activation::Identity)?])?)
}

fn reports_csv(reports: &[RetrievalReport]) -> String {
    reports.iter().map(RetrievalReport::csv_rows).collect()
}

pub fn cmd_pca(run: &Run) -> Result<Vec<PathBuf>> {
    let refs = run.training_set()?;
    let d = refs.embeddings().cols();
    let dims = run.eval_dims(d)?.to_vec();
    let max = *dims.iter().max().expect("validated non-empty");
    let model = pca_model(&refs, max)?;
    run.save_model(PCA_CKPT, &model)?;

    let (r, rl) = run.labelled(REFS)?;
    let (q, ql) = run.labelled(QUERIES)?;
    let (pr, pq) = (model.predict(&r)?, model.predict(&q)?);
    let mut outputs = vec![run.path(PCA_CKPT)];
    let mut reports = Vec::new();
    for &m in &dims {
        let (rm, qm) = (pr.truncate_cols(m), pq.truncate_cols(m));
        for (name, mat, labels) in [("refs", &rm, &rl), ("queries", &qm, &ql)] {
            let file = format!("pca_d{m}_{name}.emb");
            run.write_embeddings(&file, mat, labels)?;
            outputs.push(run.path(&file));
        }
        reports.push(evaluate("pca", &rm, &rl, &qm, &ql, &run.config.eval.ks)?);
    }
    outputs.push(run.write_csv("pca_report.csv", REPORT_CSV_HEADER, &reports_csv(&reports))?);
    Ok(outputs)
}

pub fn cmd_train_aesvc(run: &Run) -> Result<Vec<PathBuf>> {
    let refs = run.training_set()?;
    let config = run.config.aesvc_config(refs.embeddings().cols());
    let trained = train_aesvc(&refs, &config)?;
    run.save_model(ENCODER_CKPT, &trained.model.encoder)?;
    run.save_model(DECODER_CKPT, &trained.model.decoder)?;

    let mut body = String::new();
    for e in &trained.history {
        let (lo, hi) = e.stats.variance_range();
        writeln!(
            body,
            "{},{},{},{},{},{},{},{},{},{}",
            e.epoch,
            e.raw.reconstruction,
            e.raw.covariance,
            e.raw.variance,
            e.raw.mean,
            e.total,
            lo,
            hi,
            e.stats.max_abs_mean(),
            e.stats.off_diagonal_norm()
        )?;
    }
    let history = run.write_csv(
        "aesvc_history.csv",
        "epoch,reconstruction,covariance,variance,mean,total,latent_var_min,latent_var_max,latent_max_abs_mean,latent_offdiag_norm",
        &body,
    )?;

    // Training is finished; queries are only encoded for export.
    let mut outputs = vec![run.path(ENCODER_CKPT), run.path(DECODER_CKPT), history];
    for (src, dst) in [(REFS, "aesvc_refs.emb"), (QUERIES, "aesvc_queries.emb")] {
        let (x, labels) = run.labelled(src)?;
        run.write_embeddings(dst, &trained.model.encode(&x)?, &labels)?;
        outputs.push(run.path(dst));
    }
    Ok(outputs)
}

fn teacher_latents(run: &Run) -> Result<ReferenceSet> {
    let encoder = run.model(ENCODER_CKPT, "train-aesvc")?;
    Ok(ReferenceSet::new(encoder.predict(run.training_set()?.embeddings())?))
}

fn history_csv(rows: impl IntoIterator<Item = SsdEpoch>) -> String {
    let mut body = String::new();
    for e in rows {
        for (m, loss) in e.per_size {
            writeln!(body, "{},{},{}", e.epoch, m, loss).expect("string write");
        }
    }
    body
}

pub fn cmd_train_ss2d(run: &Run) -> Result<Vec<PathBuf>> {
    let z = teacher_latents(run)?;
    let sizes = run.config.nested_sizes(z.embeddings().cols())?;
    let trained = train_ss2d(&z, &sizes, &run.config.ssd_config())?;
    run.save_model(SS2D_CKPT, &trained.model)?;
    let history = run.write_csv("ss2d_history.csv", "epoch,m,loss_per_row", &history_csv(trained.history))?;
    Ok(vec![run.path(SS2D_CKPT), history])
}

pub fn cmd_train_ssd(run: &Run) -> Result<Vec<PathBuf>> {
    let z = teacher_latents(run)?;
    let sizes = run.config.nested_sizes(z.embeddings().cols())?;
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for &m in sizes.sizes() {
        let trained = train_ssd_single(&z, m, &run.config.ssd_config())?;
        let name = ssd_checkpoint(m);
        run.save_model(&name, &trained.model)?;
        outputs.push(run.path(&name));
        rows.extend(trained.history);
    }
    outputs.push(run.write_csv("ssd_history.csv", "epoch,m,loss_per_row", &history_csv(rows))?);
    Ok(outputs)
}

/// Reference and query embeddings of `method` at width `dim`.
fn method_embeddings(run: &Run, method: &str, dim: usize, r: &Matrix, q: &Matrix) -> Result<(Matrix, Matrix)> {
    let both = |f: &dyn Fn(&Matrix) -> simspace::Result<Matrix>| -> Result<(Matrix, Matrix)> {
        Ok((f(r)?, f(q)?))
    };
    match method {
        "raw" => both(&|x| Ok(x.truncate_cols(dim))),
        "pca" => {
            let m = run.model(PCA_CKPT, "pca")?;
            both(&|x| Ok(m.predict(x)?.truncate_cols(dim)))
        }
        "aesvc" => {
            let e = run.model(ENCODER_CKPT, "train-aesvc")?;
            both(&|x| Ok(e.predict(x)?.truncate_cols(dim)))
        }
        "ss2d" => {
            let e = run.model(ENCODER_CKPT, "train-aesvc")?;
            let f = run.model(SS2D_CKPT, "train-ss2d")?;
            both(&|x| project_prefix(&f, &e.predict(x)?, dim))
        }
        "ssd" => {
            let e = run.model(ENCODER_CKPT, "train-aesvc")?;
            let f = run.model(&ssd_checkpoint(dim), "train-ssd")?;
            both(&|x| l2_normalize_rows_strict(&f.predict(&e.predict(x)?)?))
        }
        other => bail!("unknown method {other:?}"),
    }
}

pub fn cmd_eval(run: &Run) -> Result<Vec<PathBuf>> {
    let (r, rl) = run.labelled(REFS)?;
    let (q, ql) = run.labelled(QUERIES)?;
    let dims = run.eval_dims(r.cols())?;
    let mut reports = Vec::new();
    for method in &run.config.eval.methods {
        for &dim in dims {
            let (er, eq) = method_embeddings(run, method, dim, &r, &q)
                .with_context(|| format!("preparing {method} at {dim} dims"))?;
            reports.push(evaluate(method, &er, &rl, &eq, &ql, &run.config.eval.ks)?);
        }
    }
    Ok(vec![run.write_csv("eval.csv", REPORT_CSV_HEADER, &reports_csv(&reports))?])
}

/// Named spectra for the moment comparison, each of dimension `d`.
pub fn theory_spectra(d: usize, rng: &mut Rng) -> Result<Vec<(&'static str, Spectrum)>> {
    let from = |f: &dyn Fn(f64) -> f64| Spectrum::new((1..=d).map(|i| f(i as f64)).collect());
    Ok(vec![
        ("equal", Spectrum::equal(d, 1.0)?),
        ("harmonic", Spectrum::harmonic(d)),
        ("inverse_sqrt", from(&|i| 1.0 / i.sqrt())?),
        ("linear", from(&|i| i)?),
        ("geometric_0.97", from(&|i| 0.97f64.powf(i))?),
        ("uniform_0.5_1.5", Spectrum::new((0..d).map(|_| rng.uniform(0.5, 1.5)).collect())?),
    ])
}

/// Moments of cosine similarity over all pairs of rows sharing a label.
fn same_class_moments(x: &Matrix, labels: &[u32]) -> Result<CosineMoments> {
    let unit = l2_normalize_rows_strict(x)?;
    let mut groups: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for rows in groups.values() {
        for (a, &i) in rows.iter().enumerate() {
            for &j in &rows[a + 1..] {
                let c = simspace::linalg::dot(unit.row(i), unit.row(j));
                n += 1;
                sum += c;
                sq += c * c;
            }
        }
    }
    if n == 0 {
        bail!("no same-class pairs");
    }
    let mean = sum / n as f64;
    Ok(CosineMoments {
        mean,
        variance: (sq / n as f64 - mean * mean).max(0.0),
    })
}

pub fn cmd_theory(run: &Run) -> Result<Vec<PathBuf>> {
    let t = &run.config.theory;
    let root = Rng::new(run.config.seed);
    let mut spectra_rng = root.split(0);
    let mut stream = 0u64;
    let mut next_stream = || {
        stream += 1;
        root.split(stream)
    };

    let mut body = String::new();
    for &d in &t.dims {
        for (name, spectrum) in theory_spectra(d, &mut spectra_rng)? {
            let closed = cos_moments_closed_form(&spectrum)?;
            let mc = monte_carlo_cos_moments(&spectrum, t.pairs, &next_stream())?;
            writeln!(
                body,
                "{name},{d},{},{},{},{},{}",
                closed.mean,
                closed.variance,
                mc.mean,
                mc.variance,
                (mc.variance - closed.variance).abs() / closed.variance
            )?;
        }
    }
    let mut outputs = vec![run.write_csv(
        "theory_moments.csv",
        "spectrum,dim,closed_mean,closed_variance,mc_mean,mc_variance,variance_rel_error",
        &body,
    )?];

    let mut body = String::new();
    for &d in &t.dims {
        for &f in &t.dominant_fractions {
            // One eigenvalue holding fraction f of the trace, the rest equal.
            let a = f * (d - 1) as f64 / (1.0 - f);
            let mut v = vec![1.0; d];
            v[0] = a;
            let spectrum = Spectrum::new(v)?;
            let closed = cos_moments_closed_form(&spectrum)?;
            let mc = monte_carlo_cos_moments(&spectrum, t.pairs, &next_stream())?;
            writeln!(
                body,
                "{d},{f},{},{},{}",
                closed.variance,
                mc.variance,
                (mc.variance - closed.variance).abs() / closed.variance
            )?;
        }
    }
    outputs.push(run.write_csv(
        "theory_degradation.csv",
        "dim,dominant_fraction,closed_variance,mc_variance,variance_rel_error",
        &body,
    )?);

    // Similarity histograms of whatever embedding sets this run has produced.
    if run.path(REFS).exists() {
        let (r, labels) = run.labelled(REFS)?;
        let mut sets = vec![("raw", r.clone())];
        if run.path(ENCODER_CKPT).exists() {
            sets.push(("aesvc", run.model(ENCODER_CKPT, "train-aesvc")?.predict(&r)?));
        }
        let mut hist_body = String::new();
        let mut summary = String::new();
        for (name, x) in &sets {
            let h = empirical_similarity_histogram(x, t.bins, t.histogram_pairs, &mut next_stream())?;
            for (i, c) in h.counts.iter().enumerate() {
                writeln!(hist_body, "{name},{},{},{c}", h.edges[i], h.edges[i + 1])?;
            }
            let same = same_class_moments(x, &labels)?;
            writeln!(
                summary,
                "{name},{},{},{},{},{},{}",
                h.pairs,
                h.mean,
                h.variance,
                same.mean,
                same.variance,
                discriminative_power(&same, t.tau)?
            )?;
        }
        outputs.push(run.write_csv("theory_histograms.csv", "set,bin_edge_lo,bin_edge_hi,count", &hist_body)?);
        outputs.push(run.write_csv(
            "theory_histogram_summary.csv",
            "set,pairs,mean,variance,same_class_mean,same_class_variance,discriminative_power",
            &summary,
        )?);
    }
    Ok(outputs)
}

pub fn display(paths: &[PathBuf], base: &Path) -> String {
    paths
        .iter()
        .map(|p| format!("  {}", p.strip_prefix(base).unwrap_or(p).display()))
        .collect::<Vec<_>>()
        .join("\n")
}
