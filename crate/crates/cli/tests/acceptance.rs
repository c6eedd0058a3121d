//! Acceptance checks, one line per criterion. Exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use astrolens::corpus::{bin_values, BinStrategy};
use astrolens::analysis::AnalysisReport;
use astrolens::llmclient::{
    parse_mentioned, render_prompt, EmbeddingMatrix, MentionStatus, PromptTemplate, TemplateId,
};
use astrolens::purity::{improvement, knn_indices, knn_purity, Space};
use astrolens::sae::{train_array, SaeModel, SaeTrainConfig};
use astrolens::synth::{planted_dictionary, two_blobs, FixtureSpec};
use astrolens::tsne::{conditional_affinities, kl_gradient, run_tsne, symmetrize, TsneConfig};
use astrolens_cli::fixture::write_fixture;
use astrolens_cli::stages::{cmd_run_all, read_purity};
use astrolens_cli::workspace::{read_json, Stage, Workspace};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    println!(
        "[{}] {id:>2} {name}: {} ({:.1}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t.elapsed().as_secs_f64()
    );
    o.pass
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.random_range(lo..hi))
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i:04}")).collect()
}

fn label_bins(labels: &[usize]) -> astrolens::corpus::BinAssignment {
    let n_bins = labels.iter().max().unwrap() + 1;
    let edges = (0..=n_bins).map(|b| b as f64 - 0.5).collect();
    let values: Vec<(String, f64)> = ids(labels.len()).into_iter().zip(labels.iter().map(|&l| l as f64)).collect();
    bin_values("label", &values, n_bins, BinStrategy::FixedEdges { edges }).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn criterion_1() -> Outcome {
    let published = [(0.7998, 0.8468, 5.9), (0.8185, 0.9418, 15.1), (0.6346, 0.9994, 57.5)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (b, a, want) in published {
        let imp = improvement(b, a).unwrap();
        pass &= (imp.percent - want).abs() <= 0.05 && imp.display() == format!("{want:.1}%");
        parts.push(format!("{:.3}%->{}", imp.percent, imp.display()));
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn criterion_2() -> Outcome {
    let mut total = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = uniform(&mut rng, 200, 2, 0.0, 1.0);
        let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..2)).collect();
        total += knn_purity(&ids(200), x.view(), &label_bins(&labels), 10, Space::Projection)
            .unwrap()
            .purity;
    }
    let mean = total / 20.0;
    Outcome {
        pass: (0.45..=0.55).contains(&mean),
        detail: format!("mean purity {mean:.4} over 20 seeds, want [0.45, 0.55]"),
    }
}

fn criterion_3() -> Outcome {
    let (x, labels) = two_blobs(3, 200, 2, 10.0);
    let p = knn_purity(&ids(400), x.view(), &label_bins(&labels), 10, Space::Embedding)
        .unwrap()
        .purity;
    Outcome {
        pass: p >= 0.99,
        detail: format!("purity {p:.4}, want >= 0.99"),
    }
}

/// KL(P||Q) with the Student-t kernel, written out directly.
fn tsne_kl(p: &Array2<f64>, y: ArrayView2<f64>) -> f64 {
    let n = y.nrows();
    let mut w = Array2::<f64>::zeros((n, n));
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d2: f64 = (0..y.ncols()).map(|k| (y[[i, k]] - y[[j, k]]).powi(2)).sum();
                w[[i, j]] = 1.0 / (1.0 + d2);
                z += w[[i, j]];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && p[[i, j]] > 0.0 {
                kl += p[[i, j]] * (p[[i, j]] * z / w[[i, j]]).ln();
            }
        }
    }
    kl
}

fn criterion_4() -> Outcome {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let x = uniform(&mut rng, 15, 8, -1.0, 1.0);
        let y = uniform(&mut rng, 15, 2, -1.0, 1.0);
        let p = symmetrize(&conditional_affinities(x.view(), 4.0).unwrap(), 1e-12).unwrap();
        let (_, grad) = kl_gradient(&p, y.view());
        for idx in ndarray::indices(y.raw_dim()) {
            let mut plus = y.clone();
            let mut minus = y.clone();
            plus[idx] += h;
            minus[idx] -= h;
            let fd = (tsne_kl(&p, plus.view()) - tsne_kl(&p, minus.view())) / (2.0 * h);
            worst = worst.max(rel_err(grad[idx], fd));
        }
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!("max relative error {worst:.2e} over 5 seeds, want < 1e-4"),
    }
}

fn criterion_5() -> Outcome {
    let (x, labels) = two_blobs(11, 100, 50, 10.0);
    let m = EmbeddingMatrix::new(ids(200), x, "blobs").unwrap();
    let cfg = TsneConfig::default();
    let r = run_tsne(&m, &cfg).unwrap();
    let nn = knn_indices(r.points.view(), 1).unwrap();
    let acc = nn.iter().enumerate().filter(|(i, nb)| labels[*i] == labels[nb[0]]).count() as f64 / 200.0;
    let end_exag = r.kl_history[cfg.early_exaggeration_iters - 1];
    let last = *r.kl_history.last().unwrap();
    Outcome {
        pass: acc >= 0.99 && last < end_exag,
        detail: format!("1-NN accuracy {acc:.3}, KL {end_exag:.4} -> {last:.4}"),
    }
}

fn sae_loss(m: &SaeModel, x: &Array2<f64>, lambda: f64) -> f64 {
    let (b, d) = x.dim();
    let mut se = 0.0;
    let mut l1 = 0.0;
    for row in x.outer_iter() {
        let centered = &row - &m.b_dec;
        let a = (m.w_enc.dot(&centered) + &m.b_enc).mapv(|v| v.max(0.0));
        let r = m.w_dec.dot(&a) + &m.b_dec;
        se += (&r - &row).mapv(|v| v * v).sum();
        l1 += a.sum();
    }
    se / (b * d) as f64 + lambda * l1 / b as f64
}

fn criterion_6() -> Outcome {
    let (lambda, h) = (0.01, 1e-6);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let mut m = SaeModel::init(6, 12, seed);
        m.w_enc = uniform(&mut rng, 12, 6, -0.8, 0.8);
        m.b_enc = Array1::from_shape_simple_fn(12, || rng.random_range(-0.3..0.3));
        m.b_dec = Array1::from_shape_simple_fn(6, || rng.random_range(-0.3..0.3));
        let x = uniform(&mut rng, 4, 6, -1.5, 1.5);
        let pre: Vec<f64> = x
            .outer_iter()
            .flat_map(|r| (m.w_enc.dot(&(&r - &m.b_dec)) + &m.b_enc).to_vec())
            .collect();
        if pre.iter().any(|p| p.abs() < 1e-3) {
            continue;
        }
        let (_, g) = m.loss_and_grad(x.view(), lambda).unwrap();
        macro_rules! fd {
            ($field:ident) => {
                for i in 0..m.$field.len() {
                    let mut plus = m.clone();
                    let mut minus = m.clone();
                    plus.$field.as_slice_mut().unwrap()[i] += h;
                    minus.$field.as_slice_mut().unwrap()[i] -= h;
                    let num = (sae_loss(&plus, &x, lambda) - sae_loss(&minus, &x, lambda)) / (2.0 * h);
                    worst = worst.max(rel_err(g.$field.as_slice().unwrap()[i], num));
                }
            };
        }
        fd!(w_enc);
        fd!(b_enc);
        fd!(w_dec);
        fd!(b_dec);
        instances += 1;
        if instances == 3 {
            break;
        }
    }
    Outcome {
        pass: instances == 3 && worst < 1e-4,
        detail: format!("max relative error {worst:.2e} over {instances} instances, want < 1e-4"),
    }
}

fn criterion_7() -> Outcome {
    let cfg = SaeTrainConfig::default();
    let mut counts = Vec::new();
    for seed in [1u64, 2, 3] {
        let planted = planted_dictionary(seed, 20, 32, 3, 4096, (0.5, 1.5));
        let (m, _) = train_array(planted.data.view(), &cfg, |_| {}).unwrap();
        let matched = planted
            .atoms
            .outer_iter()
            .filter(|a| {
                m.w_dec.axis_iter(Axis(1)).any(|c| {
                    let cos = c.dot(a) / (c.dot(&c).sqrt() * a.dot(a).sqrt());
                    cos.abs() > 0.9
                })
            })
            .count();
        counts.push(matched);
    }
    Outcome {
        pass: counts.iter().all(|&c| c >= 18),
        detail: format!("atoms matched per seed {counts:?} of 20, want >= 18 each"),
    }
}

fn run_fixture(dir: &Path) -> Workspace {
    let cfg = write_fixture(dir, &FixtureSpec::default()).unwrap();
    let ws = Workspace::open(dir).unwrap();
    cmd_run_all(&ws, &cfg, false).unwrap();
    ws
}

/// Per concept group: snippets of its cluster's rank-1 feature that contain
/// the concept token, and the number of snippets.
fn rank1_hits(ws: &Workspace, spec: &FixtureSpec) -> Vec<(String, usize, usize)> {
    let report: AnalysisReport = read_json(&ws.stage_file(Stage::Analyze, "report.json")).unwrap();
    spec.groups
        .iter()
        .filter_map(|g| {
            let cluster = report.clusters.iter().find(|c| c.cluster_id == g.concept)?;
            let top = cluster.features.iter().find(|f| f.rank == 1)?;
            let hit = top
                .contexts
                .iter()
                .filter(|c| c.snippet.to_lowercase().contains(&g.concept))
                .count();
            Some((g.concept.clone(), hit, top.contexts.len()))
        })
        .collect()
}

fn criterion_8(ws: &Workspace) -> Outcome {
    let purity = read_purity(ws).unwrap();
    let gamma = purity.iter().find(|r| r.property_name == "powlaw_gamma").unwrap();
    let spec = FixtureSpec::default();
    let hits = rank1_hits(ws, &spec);
    let mut pass = gamma.space == Space::Projection && gamma.k == 5 && gamma.n_bins == 3 && gamma.purity >= 0.9;
    let mut parts = vec![format!("powlaw_gamma k=5 purity {:.4}", gamma.purity)];
    for (concept, hit, total) in &hits {
        pass &= *total > 0 && *hit as f64 >= 0.8 * *total as f64;
        parts.push(format!("{concept} {hit}/{total}"));
    }
    pass &= hits.len() == spec.groups.len();
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

const APPENDIX_ORIGINAL: &str = include_str!("../../core/tests/data/appendix_original.txt");
const APPENDIX_UPDATED: &str = include_str!("../../core/tests/data/appendix_updated.txt");

fn criterion_9() -> Outcome {
    let names: Vec<String> = ["2CXO J004231.2+411621", "M31 X-1", "O'Brien's star"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    // `', '.join(repr(n) for n in names)` as printed by CPython.
    let rendered = r#"'2CXO J004231.2+411621', 'M31 X-1', "O'Brien's star""#;
    let expected = |appendix: &str| {
        appendix
            .replace("{', '.join(repr(item) for item in name_ids)}", rendered)
            .replace("{tipos[j]}", "XB")
    };
    let original = render_prompt(&PromptTemplate::builtin(TemplateId::Original), &names, "XB").unwrap()
        == expected(APPENDIX_ORIGINAL);
    let updated = render_prompt(&PromptTemplate::builtin(TemplateId::Updated), &names, "XB").unwrap()
        == expected(APPENDIX_UPDATED);
    let statuses = [
        ("[MENTIONED: YES]\nbody", MentionStatus::Yes),
        ("[MENTIONED: NO]\nbody", MentionStatus::No),
        ("body only", MentionStatus::Unknown),
    ]
    .iter()
    .all(|(t, s)| parse_mentioned(t).0 == *s);
    Outcome {
        pass: original && updated && statuses,
        detail: format!("original golden {original}, updated golden {updated}, three statuses {statuses}"),
    }
}

fn stage_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for stage in Stage::ALL {
        for e in fs::read_dir(root.join(stage.dir_name())).unwrap() {
            let p = e.unwrap().path();
            let name = format!("{}/{}", stage.dir_name(), p.file_name().unwrap().to_string_lossy());
            out.insert(name, fs::read(&p).unwrap());
        }
    }
    out
}

fn criterion_10(first: &Path) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let second = tmp.path().join("ws");
    run_fixture(&second);
    let a = stage_files(first);
    let b = stage_files(&second);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    Outcome {
        pass: a.len() == b.len() && differing.is_empty(),
        detail: format!("{} output files compared, {} differ {:?}", a.len(), differing.len(), differing),
    }
}

fn main() {
    let mut ok = true;
    ok &= check(1, "improvement arithmetic", criterion_1);
    ok &= check(2, "purity null model", criterion_2);
    ok &= check(3, "purity separation", criterion_3);
    ok &= check(4, "t-SNE gradient check", criterion_4);
    ok &= check(5, "t-SNE neighborhood preservation", criterion_5);
    ok &= check(6, "SAE gradient check", criterion_6);
    ok &= check(7, "SAE dictionary recovery", criterion_7);
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("ws");
    let t = Instant::now();
    let ws = run_fixture(&first);
    println!("      fixture pipeline ran in {:.1}s", t.elapsed().as_secs_f64());
    ok &= check(8, "end-to-end synthetic reproduction", || criterion_8(&ws));
    ok &= check(9, "prompt fidelity", criterion_9);
    drop(ws);
    ok &= check(10, "determinism", || criterion_10(&first));
    if !ok {
        std::process::exit(1);
    }
}
