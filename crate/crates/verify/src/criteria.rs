//! The acceptance checks. Each returns a [`Verdict`]; thresholds are fixed
//! here and not configurable.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use protomm::augment::{apply, choose_spec, AugmentationSpec, TransformKind, ViewSamplerConfig};
use protomm::encoder::{encode, init_encoder, EncoderConfig, EXPECTED_WEIGHTED_LAYERS};
use protomm::eval::{accuracy, macro_f1_detailed, r2};
use protomm::interpret::{cluster_prototypes, nearest_segments, project_2d, random_unit_rows, write_coords};
use protomm::losses::{
    between_terms, clip_loss_with_grad, mpp_loss, mpp_loss_with_grads, nt_xent_with_grad, swapped_prediction_loss,
    within_terms, ViewBundle,
};
use protomm::prototypes::{sinkhorn_targets, soft_probs, AssignmentConfig, PrototypeBank};
use protomm::signal::{ingest, window_count, Modality, Task, TimeSeriesWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::a6::{run_study, StudyConfig};
use crate::oracles;

#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: &'static str,
    pub title: &'static str,
    pub status: Status,
    pub detail: String,
    pub seconds: f64,
}

impl Verdict {
    pub fn line(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        format!("{tag} {} {} ({:.1}s): {}", self.id, self.title, self.seconds, self.detail)
    }
}

/// Accumulates named sub-checks into one verdict.
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Self {
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn finish(self, id: &'static str, title: &'static str, started: Instant) -> Verdict {
        let (status, detail) = if self.failures.is_empty() {
            (Status::Pass, self.notes.join("; "))
        } else {
            let mut detail = format!("failed: {}", self.failures.join("; "));
            if !self.notes.is_empty() {
                detail.push_str(&format!(" | passed: {}", self.notes.join("; ")));
            }
            (Status::Fail, detail)
        };
        Verdict {
            id,
            title,
            status,
            detail,
            seconds: started.elapsed().as_secs_f64(),
        }
    }
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn unit_scores(b: usize, p: usize, e: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let z = random_unit_rows(b, e, rng);
    let protos = random_unit_rows(p, e, rng);
    z.dot(&protos.t())
}

/// Sinkhorn targets against a log-domain transport oracle.
pub fn a1() -> Verdict {
    let started = Instant::now();
    let mut c = Checks::new();
    let cfg = AssignmentConfig {
        sinkhorn_epsilon: 0.05,
        sinkhorn_iters: 50,
        ..Default::default()
    };
    let (b, p) = (8, 16);
    // Scores are cosines between embeddings of the default width, the scale
    // the targets see in training.
    let dim = EncoderConfig::default().embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(0xa1);
    let (mut worst, mut worst_row, mut worst_col) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let s = unit_scores(b, p, dim, &mut rng);
        let v = sinkhorn_targets(&s, &cfg);
        let oracle = oracles::transport_targets(&s, cfg.sinkhorn_epsilon, 1e-15, 1_000_000);
        worst = worst.max(max_abs(&v, &oracle));
        for r in v.rows() {
            worst_row = worst_row.max((r.sum() - 1.0).abs());
        }
        for col in v.columns() {
            worst_col = worst_col.max((col.sum() - b as f64 / p as f64).abs());
        }
    }
    c.check(worst < 1e-6, format!("E = {dim}: max |V − oracle| = {worst:.2e} (< 1e-6)"));
    c.check(worst_row < 1e-3, format!("row-sum error {worst_row:.2e} (< 1e-3)"));
    c.check(worst_col < 1e-3, format!("column-sum error vs B/P {worst_col:.2e} (< 1e-3)"));
    // Sharper scores converge more slowly; reported, not gated.
    let mut peaked = 0.0f64;
    for _ in 0..50 {
        let s = unit_scores(b, p, 16, &mut rng);
        let oracle = oracles::transport_targets(&s, cfg.sinkhorn_epsilon, 1e-15, 1_000_000);
        peaked = peaked.max(max_abs(&sinkhorn_targets(&s, &cfg), &oracle));
    }
    c.notes.push(format!("E = 16 (info): max |V − oracle| = {peaked:.2e}"));
    let secs = started.elapsed().as_secs_f64();
    c.check(secs < 10.0, format!("runtime {secs:.2}s (< 10s)"));
    c.finish("A1", "Sinkhorn correctness", started)
}

fn random_distributions(cells: usize, b: usize, p: usize, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
    (0..cells)
        .map(|_| soft_probs(&Array2::from_shape_simple_fn((b, p), || rng.random_range(-2.0..2.0)), 1.0))
        .collect()
}

/// Term counts, the uniform closed form and the α = 1 reduction.
pub fn a2() -> Verdict {
    let started = Instant::now();
    let mut c = Checks::new();
    let mut counts_ok = true;
    for m in 1..=4 {
        for a in 1..=4 {
            let (w, bt) = oracles::term_counts(m, a);
            counts_ok &= within_terms(m, a).len() == w && w == m * a * (a - 1);
            counts_ok &= between_terms(m, a).len() == bt && bt == m * (m - 1) * a * a;
        }
    }
    c.check(counts_ok, "term counts M·A·(A−1) and M·(M−1)·A² for M, A ∈ 1..4");

    let uniform = vec![Array2::from_elem((3, 4), 0.25); 4];
    let bundle = ViewBundle::new(uniform.clone(), uniform, 2, 2).expect("valid bundle");
    let value = mpp_loss(&bundle, 0.5).expect("valid loss");
    let expected = 1.5 * 4f64.ln();
    c.check((value - expected).abs() < 1e-9, format!("uniform M=A=2, P=4: {value:.12} vs 1.5·log 4"));

    let mut rng = ChaCha8Rng::seed_from_u64(0xa2);
    let (mods, views) = (2, 3);
    let u = random_distributions(mods * views, 5, 6, &mut rng);
    let v = random_distributions(mods * views, 5, 6, &mut rng);
    let bundle = ViewBundle::new(u.clone(), v.clone(), mods, views).expect("valid bundle");
    let joint = mpp_loss(&bundle, 1.0).expect("valid loss");
    let separate: f64 = (0..mods)
        .map(|m| swapped_prediction_loss(&u[m * views..(m + 1) * views], &v[m * views..(m + 1) * views]).unwrap())
        .sum::<f64>()
        / (mods * views) as f64;
    c.check((joint - separate).abs() < 1e-9, format!("α=1 vs per-modality sum: |Δ| = {:.1e}", (joint - separate).abs()));
    let loops = oracles::mpp_loops(&u, &v, mods, views, 0.3);
    let lib = mpp_loss(&bundle, 0.3).expect("valid loss");
    c.check((loops - lib).abs() < 1e-9, format!("α=0.3 vs enumeration: |Δ| = {:.1e}", (loops - lib).abs()));
    c.finish("A2", "Loss identities", started)
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn shaped(v: &[f64], like: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_vec(like.dim(), v.to_vec()).expect("same size")
}

fn all_coords(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Analytic gradients against central differences of the enumeration
/// oracles.
pub fn a3() -> Verdict {
    let started = Instant::now();
    let mut c = Checks::new();
    let (e, p, b, mods, views) = (8, 4, 4, 2, 2);
    let h = 1e-6;
    let tau = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(0xa3);
    let zs: Vec<Array2<f64>> = (0..mods * views).map(|_| random_unit_rows(b, e, &mut rng)).collect();
    let protos = random_unit_rows(p, e, &mut rng).t().to_owned();
    let assign = AssignmentConfig::default();
    let targets: Vec<Array2<f64>> = zs.iter().map(|z| sinkhorn_targets(&z.dot(&protos), &assign)).collect();
    let (_, dz, dp) = mpp_loss_with_grads(&zs, &protos, &targets, mods, views, 0.5, tau).expect("valid loss");
    let value = |zs: &[Array2<f64>], protos: &Array2<f64>| {
        let u: Vec<_> = zs.iter().map(|z| oracles::softmax_rows(&z.dot(protos), tau)).collect();
        oracles::mpp_loops(&u, &targets, mods, views, 0.5)
    };
    let mut worst: f64 = 0.0;
    for cell in 0..zs.len() {
        let num = oracles::central_diff(
            |x| {
                let mut zz = zs.clone();
                zz[cell] = shaped(x, &zs[cell]);
                value(&zz, &protos)
            },
            &flat(&zs[cell]),
            &all_coords(b * e),
            h,
        );
        worst = worst.max(oracles::relative_error(&flat(&dz[cell]), &num));
    }
    c.check(worst < 1e-4, format!("mpp ∂/∂Z rel err {worst:.1e}"));
    let num = oracles::central_diff(|x| value(&zs, &shaped(x, &protos)), &flat(&protos), &all_coords(e * p), h);
    let err = oracles::relative_error(&flat(&dp), &num);
    c.check(err < 1e-4, format!("mpp ∂/∂P rel err {err:.1e}"));

    let (z1, z2) = (&zs[0], &zs[1]);
    let (_, d1, d2) = nt_xent_with_grad(z1, z2, tau).expect("valid batch");
    let n1 = oracles::central_diff(|x| oracles::nt_xent_loops(&shaped(x, z1), z2, tau), &flat(z1), &all_coords(b * e), h);
    let n2 = oracles::central_diff(|x| oracles::nt_xent_loops(z1, &shaped(x, z2), tau), &flat(z2), &all_coords(b * e), h);
    let err = oracles::relative_error(&flat(&d1), &n1).max(oracles::relative_error(&flat(&d2), &n2));
    c.check(err < 1e-4, format!("nt_xent rel err {err:.1e}"));

    let log_t = -0.7;
    let (_, dp_, da, dt) = clip_loss_with_grad(z1, z2, log_t).expect("valid batch");
    let np = oracles::central_diff(|x| oracles::clip_loops(&shaped(x, z1), z2, log_t), &flat(z1), &all_coords(b * e), h);
    let na = oracles::central_diff(|x| oracles::clip_loops(z1, &shaped(x, z2), log_t), &flat(z2), &all_coords(b * e), h);
    let nt = oracles::central_diff(|x| oracles::clip_loops(z1, z2, x[0]), &[log_t], &[0], h);
    let err = oracles::relative_error(&flat(&dp_), &np)
        .max(oracles::relative_error(&flat(&da), &na))
        .max(oracles::relative_error(&[dt], &nt));
    c.check(err < 1e-4, format!("clip rel err {err:.1e}"));
    let secs = started.elapsed().as_secs_f64();
    c.check(secs < 60.0, format!("runtime {secs:.2}s (< 60s)"));
    c.finish("A3", "Gradient fidelity", started)
}

/// Layer audit, unit-norm outputs and the encoder gradient check.
pub fn a4() -> Verdict {
    let started = Instant::now();
    let mut c = Checks::new();
    let full = EncoderConfig::default();
    let audit = init_encoder::<f32>(&full, 0).map(|p| p.weighted_layer_audit());
    c.check(audit.as_ref().ok() == Some(&EXPECTED_WEIGHTED_LAYERS), format!("layer audit {audit:?}"));

    let mut rng = ChaCha8Rng::seed_from_u64(0xa4);
    let mut worst_norm: f64 = 0.0;
    for (cfg, t, n) in [
        (full.clone(), 1500, 2),
        (EncoderConfig { in_channels: 3, embed_dim: 64, base_width: 8, ..full.clone() }, 256, 20),
    ] {
        let params = init_encoder::<f32>(&cfg, 1).expect("valid config");
        for _ in 0..n {
            let x = Array2::from_shape_simple_fn((t, cfg.in_channels), || rng.random_range(-3.0f32..3.0));
            let z = encode(&params, x.view()).expect("valid input");
            let norm = z.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            worst_norm = worst_norm.max((norm - 1.0).abs());
        }
    }
    c.check(worst_norm < 1e-6, format!("max |‖z‖ − 1| = {worst_norm:.1e}"));

    let small = EncoderConfig {
        in_channels: 1,
        embed_dim: 8,
        base_width: 8,
        ..full
    };
    match oracles::encoder_gradient_error(&small, 64, 3, 4, 7) {
        Ok(err) => c.check(err < 1e-4, format!("width-8 gradient rel err {err:.1e}")),
        Err(e) => c.check(false, format!("gradient check errored: {e}")),
    }
    c.finish("A4", "Encoder contract", started)
}

fn accel_window(t: usize, seed: u64) -> TimeSeriesWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((t, 3), || rng.random_range(-2.0f32..2.0));
    TimeSeriesWindow::new(x, 50.0, Modality::Accel).expect("valid window")
}

/// Augmentation invariants.
pub fn a5() -> Verdict {
    let started = Instant::now();
    let mut c = Checks::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xa5);
    let w = accel_window(200, 1);

    let involution = [TransformKind::TimeReverse, TransformKind::Negate].iter().all(|&k| {
        let spec = AugmentationSpec::new(k);
        let once = apply(&spec, &w, &mut rng).expect("applicable");
        apply(&spec, &once, &mut rng).expect("applicable") == w
    });
    c.check(involution, "time_reverse and negate are involutions");

    let mut worst: f64 = 0.0;
    for s in 0..20 {
        let w = accel_window(100, 100 + s);
        let y = apply(&AugmentationSpec::new(TransformKind::Rotate3d), &w, &mut rng).expect("applicable");
        for (a, b) in w.samples().rows().into_iter().zip(y.samples().rows()) {
            let na = a.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            worst = worst.max((na - nb).abs());
        }
    }
    c.check(worst < 1e-6, format!("rotate3d per-step norm change {worst:.1e}"));

    let identity = [
        AugmentationSpec::new(TransformKind::Jitter).with_param("sigma", 0.0),
        AugmentationSpec::new(TransformKind::Scale).with_param("sigma", 0.0),
        AugmentationSpec::new(TransformKind::SegmentShuffle).with_param("segments", 1.0),
    ]
    .iter()
    .all(|spec| apply(spec, &w, &mut rng).expect("applicable") == w);
    c.check(identity, "σ=0 jitter/scale and k=1 segment shuffle are identities");

    let cfg = ViewSamplerConfig::default();
    let draws = 100_000usize;
    let mut uniform = true;
    let mut worst_z: f64 = 0.0;
    let mut worst_cell: f64 = 0.0;
    for m in Modality::ALL {
        let k = cfg.applicable(m).len();
        let mut counts: BTreeMap<TransformKind, usize> = BTreeMap::new();
        for _ in 0..draws {
            *counts.entry(choose_spec(&cfg, m, &mut rng).expect("non-empty").name).or_default() += 1;
        }
        let p = 1.0 / k as f64;
        let expected = draws as f64 * p;
        let sd = (expected * (1.0 - p)).sqrt();
        uniform &= counts.len() == k;
        // Pearson statistic of the whole multinomial against its null mean
        // k - 1 and standard deviation sqrt(2(k - 1)).
        let chi2: f64 = counts.values().map(|&n| (n as f64 - expected).powi(2) / expected).sum();
        let df = (k - 1) as f64;
        worst_z = worst_z.max((chi2 - df) / (2.0 * df).sqrt());
        for &n in counts.values() {
            worst_cell = worst_cell.max((n as f64 - expected).abs() / sd);
        }
    }
    c.check(
        uniform && worst_z < 3.0,
        format!("selection χ² within {worst_z:.2}σ of uniform over 10⁵ draws (largest single cell {worst_cell:.2}σ)"),
    );

    let ppg: Vec<TransformKind> = cfg.applicable(Modality::Ppg).iter().map(|s| s.name).collect();
    let excluded = ppg.len() == 6 && !ppg.contains(&TransformKind::Rotate3d) && !ppg.contains(&TransformKind::ChannelShuffle);
    c.check(excluded, "PPG excludes rotate3d and channel_shuffle (6 transforms)");
    c.finish("A5", "Augmentation invariants", started)
}

/// The synthetic directional study.
pub fn a6(study: &StudyConfig) -> Verdict {
    let started = Instant::now();
    let mut c = Checks::new();
    match run_study(study) {
        Ok(out) => {
            for (arm, scores) in &out.arms {
                let fmt = |f: fn(&crate::a6::ArmScores) -> Option<f64>| {
                    let v: Vec<String> = scores.iter().filter_map(f).map(|x| format!("{x:.3}")).collect();
                    if v.is_empty() {
                        "-".to_string()
                    } else {
                        v.join("/")
                    }
                };
                log::info!(
                    "{}: concat {} ppg {} accel {}",
                    arm.name(),
                    fmt(|s| s.concat),
                    fmt(|s| s.ppg),
                    fmt(|s| s.accel)
                );
            }
            let m = out.required_margin;
            c.check(out.mixing_holds(), format!("(a) α=0.5 minus best of α∈{{0,1}}: {:+.3} (> {m})", out.mixing_margin));
            c.check(out.baseline_holds(), format!("(b) ProtoMM minus SLIP: {:+.3} (> {m})", out.baseline_margin));
            c.check(out.transfer_holds(), format!("(c) multimodal minus isolated, worst modality: {:+.3} (> {m})", out.transfer_margin));
            c.check(out.seconds < 1800.0, format!("runtime {:.0}s (< 1800s)", out.seconds));
        }
        Err(e) => c.check(false, format!("study errored: {e}")),
    }
    c.finish("A6", "Directional synthetic reproduction", started)
}

/// Metric oracles.
pub fn a7() -> Verdict {
    let started = Instant::now();
    let mut c = Checks::new();
    // [[8, 2], [3, 7]]: rows true class, columns predicted
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    for (t, p, n) in [(0, 0, 8), (0, 1, 2), (1, 0, 3), (1, 1, 7)] {
        labels.extend(std::iter::repeat_n(t, n));
        preds.extend(std::iter::repeat_n(p, n));
    }
    let acc = accuracy(&preds, &labels).expect("non-empty");
    let f1 = macro_f1_detailed(&preds, &labels).expect("non-empty");
    let oracle = oracles::macro_f1_from_confusion(&oracles::confusion(&preds, &labels, 2));
    let hand = (2.0 * 8.0 / (2.0 * 8.0 + 2.0 + 3.0) + 2.0 * 7.0 / (2.0 * 7.0 + 3.0 + 2.0)) / 2.0;
    c.check((acc - 0.75).abs() < 1e-6, format!("accuracy {acc:.6}"));
    c.check(
        (f1.value - oracle).abs() < 1e-6 && (f1.value - hand).abs() < 1e-6 && (f1.value - 0.749).abs() < 5e-4,
        format!("macro-F1 {:.6} (oracle {oracle:.6})", f1.value),
    );
    let per_class_ok = f1.per_class.len() == 2
        && (f1.per_class[&0] - 0.762).abs() < 5e-4
        && (f1.per_class[&1] - 0.737).abs() < 5e-4;
    c.check(per_class_ok, format!("per-class F1 {:?}", f1.per_class));
    let targets = [1.0, 4.0, 2.0, 7.0, 3.0];
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let score = r2(&[mean; 5], &targets).expect("non-constant targets");
    c.check(score.abs() < 1e-6, format!("R² of the mean predictor {score:.1e}"));
    c.finish("A7", "Metric oracles", started)
}

/// Interpretability pipeline.
pub fn a8() -> Verdict {
    let started = Instant::now();
    let mut c = Checks::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xa8);
    let (e, p) = (8, 16);
    let bank = PrototypeBank::from_matrix(random_unit_rows(p, e, &mut rng).t().to_owned()).expect("finite");

    let singletons = cluster_prototypes(&bank, p, 0, 100).expect("k ≤ P");
    let sizes_ok = singletons.members.iter().all(|m| m.len() == 1);
    let gap = if sizes_ok {
        singletons
            .members
            .iter()
            .enumerate()
            .flat_map(|(ci, m)| (0..e).map(move |d| (ci, d, m[0])))
            .map(|(ci, d, j)| (singletons.centroids[[ci, d]] - bank.matrix[[d, j]]).abs())
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    c.check(
        sizes_ok && gap < 1e-12 && singletons.inertia.last().is_some_and(|i| *i < 1e-20),
        format!("k = P gives each prototype its own centroid (gap {gap:.1e}, inertia {:.1e})", singletons.inertia.last().copied().unwrap_or(f64::NAN)),
    );

    let one = cluster_prototypes(&bank, 1, 0, 100).expect("k ≤ P");
    let mean: Vec<f64> = (0..e).map(|d| bank.matrix.row(d).sum() / p as f64).collect();
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    let k1 = (0..e).all(|d| (one.centroids[[0, d]] - mean[d] / norm).abs() < 1e-12) && one.members[0].len() == p;
    c.check(k1, "k = 1 gives the normalized mean");

    let mut matches = true;
    for _ in 0..20 {
        let emb = random_unit_rows(100, e, &mut rng);
        let centroid = random_unit_rows(1, e, &mut rng);
        let got = nearest_segments(centroid.row(0), emb.view(), 3).expect("shapes agree");
        let want = oracles::top_k_by_sort(&centroid.row(0).to_vec(), &emb, 3);
        matches &= got.iter().zip(&want).all(|(g, w)| g.0 == w.0 && (g.1 - w.1).abs() < 1e-12) && got.len() == want.len();
    }
    c.check(matches, "top-3 retrieval equals the sort oracle on 100 random embeddings (20 trials)");

    let coords = project_2d(&bank, 30.0, 1000, 0);
    match coords {
        Ok(coords) => {
            let dir = std::env::temp_dir().join(format!("protomm-a8-{}", std::process::id()));
            let ok = std::fs::create_dir_all(&dir).is_ok()
                && write_coords(&dir.join("coords.csv"), &coords, &singletons.assignment).is_ok();
            let rows = ok.then(|| read_coords(&dir.join("coords.csv"))).flatten();
            let _ = std::fs::remove_dir_all(&dir);
            match rows {
                Some(rows) => c.check(
                    rows.len() == p && rows.iter().all(|r| r.iter().all(|v| v.is_finite())),
                    format!("coords.csv has {} finite rows", rows.len()),
                ),
                None => c.check(false, "coords.csv could not be written or read"),
            }
        }
        Err(e) => c.check(false, format!("projection errored: {e}")),
    }
    c.finish("A8", "Interpretability pipeline", started)
}

fn read_coords(path: &Path) -> Option<Vec<[f64; 2]>> {
    let text = std::fs::read_to_string(path).ok()?;
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Some([f.get(1)?.parse().ok()?, f.get(2)?.parse().ok()?])
        })
        .collect()
}

/// Public-dataset shape checks, run against `root` when the datasets are
/// present there.
pub fn a9(root: Option<&Path>) -> Verdict {
    let started = Instant::now();
    let mut c = Checks::new();
    let windows = window_count(60.0, 8.0, 2.0);
    c.check(windows == 27, format!("60 s / 8 s / 2 s windowing gives {windows} windows"));
    let wesad = root.map(|r| r.join("WESAD")).filter(|p| p.is_dir());
    let dalia = root.map(|r| r.join("PPG_FieldStudy")).filter(|p| p.is_dir());
    if wesad.is_none() && dalia.is_none() {
        return Verdict {
            id: "A9",
            title: "Public-data ingestion",
            status: Status::Skipped,
            detail: format!(
                "WESAD/PPG-DaLiA not found under {}; windowing arithmetic {}",
                root.map(|r| r.display().to_string()).unwrap_or_else(|| "(no data root)".into()),
                if windows == 27 { "ok" } else { "WRONG" }
            ),
            seconds: started.elapsed().as_secs_f64(),
        };
    }
    if let Some(dir) = wesad {
        match ingest::load_wesad(&dir, Task::Stress2) {
            Ok(m) => {
                let classes = m.class_names();
                c.check(classes == ["Non-stress", "Stress"], format!("WESAD stress2 labels {classes:?}"));
            }
            Err(e) => c.check(false, format!("WESAD load failed: {e}")),
        }
    }
    if let Some(dir) = dalia {
        match ingest::load_dalia(&dir, Task::Activity9) {
            Ok(m) => {
                let classes = m.class_names();
                c.check(classes.len() == 9, format!("DaLiA activity classes {}", classes.len()));
                let shapes_ok = m.samples.iter().all(|s| {
                    s.windows.values().all(|w| w.len() == 400 && (w.sample_rate_hz() - 50.0).abs() < 1e-9)
                });
                c.check(shapes_ok, "DaLiA windows are T = 400 at 50 Hz");
            }
            Err(e) => c.check(false, format!("DaLiA load failed: {e}")),
        }
    }
    c.finish("A9", "Public-data ingestion", started)
}

/// Which checks to run.
#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub study: StudyConfig,
    /// Leave out the synthetic training study.
    pub skip_study: bool,
    pub data_root: Option<std::path::PathBuf>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            study: StudyConfig::default(),
            skip_study: false,
            data_root: std::env::var_os(protomm::config::DATA_ROOT_ENV).map(Into::into),
        }
    }
}

/// Runs every check in order, handing each verdict to `report` as soon as
/// it is known.
pub fn run_suite(opts: &SuiteOptions, mut report: impl FnMut(&Verdict)) -> Vec<Verdict> {
    let mut out = Vec::new();
    let mut push = |v: Verdict| {
        report(&v);
        out.push(v);
    };
    push(a1());
    push(a2());
    push(a3());
    push(a4());
    push(a5());
    if opts.skip_study {
        push(Verdict {
            id: "A6",
            title: "Directional synthetic reproduction",
            status: Status::Skipped,
            detail: "skipped on request".into(),
            seconds: 0.0,
        });
    } else {
        push(a6(&opts.study));
    }
    push(a7());
    push(a8());
    push(a9(opts.data_root.as_deref()));
    out
}
