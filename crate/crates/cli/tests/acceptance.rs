//! Acceptance criteria, one PASS/FAIL line each. Criteria run in order in a
//! single test so the lines come out together; every criterion runs even
//! when an earlier one fails.
//!
//! Lines go straight to the process stdout, so they show without
//! `--nocapture`.

use std::cell::OnceCell;
use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use moldapt::chemspace::{butina_cluster, SplitPlan, SplitPolicy};
use moldapt::downstream::{build_split_plan, compute_metrics};
use moldapt::encoder::EncoderConfig;
use moldapt::features::{morgan_fingerprint, DescriptorSet, Fingerprint, DEFAULT_NBITS, DEFAULT_RADIUS};
use moldapt::gradcheck::{gradient_check, GradCheckConfig};
use moldapt::molgraph::{canonical_smiles, parse_smiles};
use moldapt::objectives::{
    apply_masking, build_triples, cl_margin_rate, evaluate_loss, mlm_accuracy, pretrain, MaskingConfig, Objective,
    TrainConfig,
};
use moldapt::stats::{anova_rm, paired_t, ptukey, qtukey, PairedSample, Tail};
use moldapt::tokenizer::{encode_batch, train_wordpiece};
use moldapt::toy::{generate_smiles, toy_data, ToyConfig};

// Tolerances and budgets.
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(5 * 60);
const MLM_ACC: f64 = 0.95;
const MTR_LOSS: f64 = 1e-2;
const CL_MARGIN: f64 = 0.90;
const MEMO_BUDGET: Duration = Duration::from_secs(10 * 60);
const BUTINA_TRIALS: usize = 100;
const BUTINA_MAX_N: usize = 25;
const T_P: f64 = 0.0742;
const T_TOL: f64 = 1e-4;
const ANOVA_F: f64 = 868.0 / 103.0;
const ANOVA_TOL: f64 = 1e-6;
const Q_CRIT: f64 = 3.773;
const Q_TOL: f64 = 0.01;
const METRIC_TOL: f64 = 1e-12;
const TREND_P: f64 = 0.05;
const TREND_BUDGET: Duration = Duration::from_secs(30 * 60);

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn moldapt(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_moldapt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    out
}

fn run_ok(args: &[&str]) -> Result<(), String> {
    let out = moldapt(args);
    ensure(out.status.success(), || {
        format!("`moldapt {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim())
    })
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).expect("file exists")).expect("valid json")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn gradient_gate() -> Outcome {
    let t0 = Instant::now();
    let gc = GradCheckConfig::default();
    let report = gradient_check(&EncoderConfig::desk(), DescriptorSet::default().len(), &gc).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    ensure(gc.tolerance <= GRAD_TOL, || format!("configured tolerance {} looser than {GRAD_TOL}", gc.tolerance))?;
    ensure(report.passed(), || {
        let worst: Vec<String> = report.failures().iter().map(|t| format!("{}/{} {:.2e}", t.scope, t.name, t.max_rel)).collect();
        format!("tensors over tolerance: {}", worst.join(", "))
    })?;
    ensure(elapsed < GRAD_BUDGET, || format!("took {:.0}s", elapsed.as_secs_f64()))?;
    Ok(format!(
        "{} tensors, {} entries, max rel err {:.2e} < {GRAD_TOL:e}, {:.0}s",
        report.tensors.len(),
        report.entries(),
        report.max_rel(),
        elapsed.as_secs_f64()
    ))
}

fn memorization() -> Outcome {
    let all: Vec<String> = generate_smiles(400, 7).into_iter().take(64).collect();
    let (train, held) = (all[..32].to_vec(), all[32..].to_vec());
    let vocab = train_wordpiece(&all, 64, 1).map_err(|e| e.to_string())?;
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        dropout_rate: 0.0,
        head_dropout: 0.0,
        init_std: 0.05,
        ..EncoderConfig::desk()
    };
    let tc = |objective| {
        let mut tc = TrainConfig::new(objective);
        tc.epochs = 200;
        tc.batch_size = 8;
        tc.adam.lr = 1e-3;
        tc
    };
    let timed = |objective| {
        let t0 = Instant::now();
        let ck = pretrain(&train, &vocab, &cfg, &tc(objective), None, &mut |_| {}).map_err(|e| e.to_string())?;
        let dt = t0.elapsed();
        ensure(dt < MEMO_BUDGET, || format!("{objective} took {:.0}s", dt.as_secs_f64()))?;
        Ok::<_, String>((ck, dt))
    };

    let (ck, t_mlm) = timed(Objective::Mlm)?;
    let batch = encode_batch(&train, &vocab, cfg.max_len).trimmed();
    let mut accs = Vec::new();
    for draw in 0..5 {
        let m = apply_masking(&batch, vocab.len(), &MaskingConfig::default(), 1000 + draw);
        accs.push(mlm_accuracy(&cfg, &ck.params, &m).map_err(|e| e.to_string())?);
    }
    let acc = accs.iter().sum::<f64>() / accs.len() as f64;
    ensure(acc >= MLM_ACC, || format!("MLM accuracy {acc:.4} < {MLM_ACC} (draws {accs:.3?})"))?;

    let (ck, t_mtr) = timed(Objective::Mtr)?;
    let mtr = evaluate_loss(&ck, &train, Objective::Mtr, 0).map_err(|e| e.to_string())?;
    ensure(mtr < MTR_LOSS, || format!("MTR loss {mtr:.3e} >= {MTR_LOSS}"))?;

    let (ck, t_cl) = timed(Objective::Cl)?;
    let mols: Vec<_> = held.iter().map(|s| parse_smiles(s).expect("generated SMILES parse")).collect();
    let canon: Vec<String> = mols.iter().map(canonical_smiles).collect();
    let rows: Vec<usize> = (0..held.len()).collect();
    let triples = build_triples(&mols, &canon, &rows, 999, &vocab, cfg.max_len).map_err(|e| e.to_string())?;
    let margin = cl_margin_rate(&cfg, &ck.params, &triples).map_err(|e| e.to_string())?;
    ensure(margin >= CL_MARGIN, || format!("CL margin on held-out triples {margin:.3} < {CL_MARGIN}"))?;

    Ok(format!(
        "MLM acc {acc:.4} ({:.0}s), MTR loss {mtr:.2e} ({:.0}s), CL held-out margin {margin:.3} ({:.0}s)",
        t_mlm.as_secs_f64(),
        t_mtr.as_secs_f64(),
        t_cl.as_secs_f64()
    ))
}

/// Brute-force Butina written from the definition: Tanimoto over bit sets,
/// neighbour counts recomputed every round, lowest index on ties, clusters
/// then ordered largest first keeping creation order.
fn butina_reference(sets: &[BTreeSet<usize>], threshold: f64) -> Vec<Vec<usize>> {
    let tan = |a: &BTreeSet<usize>, b: &BTreeSet<usize>| {
        let u = a.union(b).count();
        if u == 0 {
            1.0
        } else {
            a.intersection(b).count() as f64 / u as f64
        }
    };
    let n = sets.len();
    let close = |i: usize, j: usize| i != j && tan(&sets[i], &sets[j]) >= threshold;
    let mut free = vec![true; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    while free.iter().any(|&f| f) {
        let mut best = (usize::MAX, 0);
        for i in (0..n).filter(|&i| free[i]) {
            let c = (0..n).filter(|&j| free[j] && close(i, j)).count();
            if best.0 == usize::MAX || c > best.1 {
                best = (i, c);
            }
        }
        let mut members = vec![best.0];
        members.extend((0..n).filter(|&j| free[j] && close(best.0, j)));
        for &m in &members {
            free[m] = false;
        }
        clusters.push(members);
    }
    clusters.sort_by_key(|c| std::cmp::Reverse(c.len()));
    clusters
}

fn butina_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(20);
    let mut sizes = 0;
    for trial in 0..BUTINA_TRIALS {
        let n = rng.random_range(1..=BUTINA_MAX_N);
        let nbits = 32;
        let sets: Vec<BTreeSet<usize>> = (0..n)
            .map(|_| {
                let k = rng.random_range(0..12);
                (0..k).map(|_| rng.random_range(0..nbits)).collect()
            })
            .collect();
        let threshold = rng.random_range(0.1..0.9);
        let fps: Vec<Fingerprint> = sets
            .iter()
            .map(|s| Fingerprint::from_bits(nbits, &s.iter().copied().collect::<Vec<_>>()))
            .collect();
        let got = butina_cluster(&fps, threshold).clusters;
        let want = butina_reference(&sets, threshold);
        ensure(got == want, || format!("trial {trial} (N={n}, t={threshold:.3}): {got:?} vs {want:?}"))?;
        sizes += n;
    }
    Ok(format!("{BUTINA_TRIALS} instances, N <= {BUTINA_MAX_N} ({sizes} points), exact partition match"))
}

fn proportional_subset(root: &Path) -> Outcome {
    let toy = root.join("subset_toy");
    run_ok(&["toy", "--n-corpus", "1000", "--n-dataset", "10", "--out", s(&toy)])?;
    let corpus = toy.join("corpus.txt");
    let mut parts = Vec::new();
    for (fraction, method) in [("0.3", "bitbirch_like"), ("0.6", "bitbirch_like"), ("0.3", "butina"), ("0.6", "butina")] {
        let out = root.join(format!("subset_{method}_{fraction}"));
        run_ok(&["subset", "--corpus", s(&corpus), "--fraction", fraction, "--method", method, "--out", s(&out)])?;
        let f: f64 = fraction.parse().unwrap();
        let detail = read_json(&out.join("subset.json"));
        let picked: BTreeSet<u64> = detail["selection"]["indices"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
        let clusters = detail["clustering"]["clusters"].as_array().unwrap();
        let n: usize = clusters.iter().map(|c| c.as_array().unwrap().len()).sum();
        ensure(n == 1000, || format!("clustered {n} molecules, expected 1000"))?;
        let mut worst = 0.0f64;
        for c in clusters {
            let members = c.as_array().unwrap();
            let hit = members.iter().filter(|m| picked.contains(&m.as_u64().unwrap())).count();
            let size = members.len() as f64;
            let dev = (hit as f64 / size - f).abs();
            ensure(dev <= 1.0 / size + 1e-12, || format!("{method} f={f}: cluster of {size} got {hit}"))?;
            worst = worst.max(dev * size);
        }
        let quotas = read_json(&out.join("manifest.json"))["summary"]["per_cluster_quota"].as_array().map(Vec::len);
        ensure(quotas == Some(clusters.len()), || "manifest lacks per-cluster quotas".into())?;
        parts.push(format!("{method} {fraction}: {} of 1000 from {} clusters", picked.len(), clusters.len()));
        ensure(worst < 1.0, || format!("per-cluster count off by {worst}"))?;
    }
    Ok(parts.join("; "))
}

/// Artifacts of the CLI pipeline used by the trend and CV checks.
struct Pipeline {
    toy: PathBuf,
    adapt: PathBuf,
    eval_base: PathBuf,
    compare: PathBuf,
    elapsed: Duration,
}

fn run_pipeline(root: &Path) -> Result<Pipeline, String> {
    let t0 = Instant::now();
    let d = |name: &str| root.join(name);
    run_ok(&["toy", "--out", s(&d("toy"))])?;
    run_ok(&["tokenizer-train", "--corpus", s(&d("toy/corpus.txt")), "--vocab-size", "512", "--out", s(&d("tok"))])?;
    run_ok(&[
        "pretrain", "--corpus", s(&d("toy/corpus.txt")), "--vocab", s(&d("tok/vocab.txt")), "--objective", "mlm", "--epochs", "5",
        "--lr", "5e-4", "--out", s(&d("pt")),
    ])?;
    run_ok(&[
        "adapt", "--checkpoint", s(&d("pt/checkpoint")), "--dataset", s(&d("toy/dataset.csv")), "--objective", "mtr", "--epochs",
        "30", "--lr", "5e-4", "--out", s(&d("da")),
    ])?;
    for (model, ck) in [("pretrain-mlm", "pt"), ("pretrain-mlm+da-mtr", "da")] {
        run_ok(&[
            "evaluate", "--dataset", s(&d("toy/dataset.csv")), "--checkpoint", s(&d(&format!("{ck}/checkpoint"))), "--model", model,
            "--splits", "random", "--folds", "5", "--repeats", "5", "--out", s(&d(&format!("eval_{ck}"))),
        ])?;
    }
    run_ok(&[
        "compare", "--records", s(&d("eval_pt/records.csv")), s(&d("eval_da/records.csv")), "--models",
        "pretrain-mlm,pretrain-mlm+da-mtr", "--metric", "MAE", "--out", s(&d("cmp")),
    ])?;
    Ok(Pipeline {
        toy: d("toy"),
        adapt: d("da"),
        eval_base: d("eval_pt"),
        compare: d("cmp"),
        elapsed: t0.elapsed(),
    })
}

fn cv_integrity(p: &Pipeline) -> Outcome {
    let data = toy_data(&ToyConfig::default()).map_err(|e| e.to_string())?;
    let ds = &data.dataset;
    let censored: BTreeSet<usize> = (0..ds.len()).filter(|&i| ds.censored[i]).collect();
    ensure(!censored.is_empty(), || "toy dataset has no censored rows".into())?;
    let eval_rows: Vec<usize> = ds.evaluation_rows();
    let fps: Vec<_> = eval_rows
        .iter()
        .map(|&r| morgan_fingerprint(&parse_smiles(&ds.smiles[r]).unwrap(), DEFAULT_RADIUS, DEFAULT_NBITS))
        .collect();
    let clusters: Vec<Vec<usize>> =
        butina_cluster(&fps, 0.6).clusters.into_iter().map(|c| c.into_iter().map(|i| eval_rows[i]).collect()).collect();

    let cli_plan = SplitPlan::from_json(&std::fs::read_to_string(p.eval_base.join("split_plan.json")).unwrap()).unwrap();
    let check = |plan: &SplitPlan| -> Result<(), String> {
        let cells = plan.cells();
        ensure(cells.len() == 25, || format!("{} cells", cells.len()))?;
        for r in 0..plan.n_repeats {
            let mut seen = BTreeSet::new();
            for fold in &plan.folds[r] {
                for &i in fold {
                    ensure(seen.insert(i), || format!("row {i} in two folds of repeat {r}"))?;
                }
            }
            ensure(seen == eval_rows.iter().copied().collect(), || format!("repeat {r} folds do not cover the rows"))?;
        }
        for c in &cells {
            let test: BTreeSet<usize> = c.test.iter().copied().collect();
            ensure(c.train.iter().all(|i| !test.contains(i)), || "train/test overlap".into())?;
            ensure(c.train.len() + c.test.len() == eval_rows.len(), || "cell does not cover the rows".into())?;
            ensure(c.train.iter().chain(&c.test).all(|i| !censored.contains(i)), || "censored row in a fold".into())?;
            if plan.policy == SplitPolicy::Butina {
                for cl in &clusters {
                    let inside = cl.iter().filter(|i| test.contains(i)).count();
                    ensure(inside == 0 || inside == cl.len(), || format!("cluster {cl:?} split in repeat {} fold {}", c.repeat, c.fold))?;
                }
            }
        }
        Ok(())
    };
    check(&cli_plan)?;
    let butina = build_split_plan(ds, SplitPolicy::Butina, 5, 5, 0, 0.6).map_err(|e| e.to_string())?;
    check(&butina)?;
    let random = build_split_plan(ds, SplitPolicy::Random, 5, 5, 0, 0.6).map_err(|e| e.to_string())?;
    ensure(random == cli_plan, || "CLI plan differs from library plan".into())?;

    let exported: BTreeSet<String> =
        std::fs::read_to_string(p.adapt.join("da_corpus.txt")).unwrap().lines().map(str::to_string).collect();
    let csv_smiles: Vec<String> = csv::Reader::from_path(p.toy.join("dataset.csv"))
        .unwrap()
        .records()
        .map(|r| r.unwrap()[1].to_string())
        .collect();
    ensure(csv_smiles == ds.smiles, || "CLI toy dataset differs from library".into())?;
    ensure(censored.iter().all(|&i| exported.contains(&ds.smiles[i])), || "censored molecule missing from DA corpus".into())?;
    ensure(exported.len() == ds.len(), || format!("DA corpus has {} of {} molecules", exported.len(), ds.len()))?;
    Ok(format!(
        "random and butina 5x5 → 25 cells each, {} butina clusters never split, {} censored rows out of folds and in DA export",
        clusters.len(),
        censored.len()
    ))
}

fn stats_oracles() -> Outcome {
    let s = PairedSample::new(vec![1.0, 2.0, 3.0], vec![0.0; 3]).map_err(|e| e.to_string())?;
    let t = paired_t(&s, Tail::Two).map_err(|e| e.to_string())?;
    ensure((t.p - T_P).abs() < T_TOL, || format!("t-test p {} vs {T_P}", t.p))?;
    let table = vec![
        vec![45.0, 42.0, 36.0, 39.0, 51.0],
        vec![50.0, 42.0, 41.0, 35.0, 55.0],
        vec![55.0, 45.0, 43.0, 40.0, 59.0],
    ];
    let a = anova_rm(&table).map_err(|e| e.to_string())?;
    ensure((a.f - ANOVA_F).abs() < ANOVA_TOL, || format!("ANOVA F {} vs {ANOVA_F}", a.f))?;
    let q = qtukey(0.05, 3, 12.0);
    ensure((q - Q_CRIT).abs() < Q_TOL, || format!("q crossing {q} vs {Q_CRIT}"))?;
    let (below, above) = (ptukey(q - Q_TOL, 3, 12.0), ptukey(q + Q_TOL, 3, 12.0));
    ensure(below < 0.95 && above > 0.95, || format!("P(Q<q) does not cross 0.95 at {q}: {below} / {above}"))?;
    Ok(format!("t-test p {:.6}, ANOVA-RM F {:.9}, q0.05(3,12) {q:.4}", t.p, a.f))
}

fn metric_identities() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let trials = 1000;
    for trial in 0..trials {
        let n = rng.random_range(2..60);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let m = compute_metrics(&y, &p).map_err(|e| e.to_string())?;
        ensure(m.rmse >= m.mae, || format!("trial {trial}: RMSE {} < MAE {}", m.rmse, m.mae))?;
        let id = compute_metrics(&y, &y).map_err(|e| e.to_string())?;
        let r2 = id.r2.ok_or("R2 undefined for y=y")?;
        ensure((r2 - 1.0).abs() <= METRIC_TOL, || format!("trial {trial}: R2(y, y) = {r2}"))?;
        let mean = y.iter().sum::<f64>() / n as f64;
        let r2 = compute_metrics(&y, &vec![mean; n]).map_err(|e| e.to_string())?.r2.ok_or("R2 undefined")?;
        ensure(r2.abs() <= METRIC_TOL, || format!("trial {trial}: R2(y, mean) = {r2}"))?;
    }
    Ok(format!("{trials} random vectors: RMSE >= MAE, R2(y,y)=1, R2(y,mean)=0 within {METRIC_TOL:e}"))
}

fn trend(p: &Pipeline) -> Outcome {
    let report = read_json(&p.compare.join("report.json"));
    let means: Vec<f64> = report["means"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let paired = read_json(&p.compare.join("paired_t.json"));
    let pval = paired[0]["p_b_better"].as_f64().ok_or("no one-tailed p")?;
    let (base, da) = (means[0], means[1]);
    ensure(da < base, || format!("MAE with DA {da:.4} not below {base:.4}"))?;
    ensure(pval < TREND_P, || format!("one-tailed p {pval:.3e} >= {TREND_P}"))?;
    ensure(p.elapsed < TREND_BUDGET, || format!("pipeline took {:.0}s", p.elapsed.as_secs_f64()))?;
    Ok(format!(
        "MAE no-DA {base:.4}, DA-MTR {da:.4}, t {:.2}, one-tailed p {pval:.2e}, pipeline {:.0}s",
        paired[0]["t"].as_f64().unwrap_or(f64::NAN),
        p.elapsed.as_secs_f64()
    ))
}

/// A small pipeline touching every subcommand, each replayed from its
/// manifest.
fn replay(root: &Path) -> Outcome {
    let d = |name: &str| root.join(name).display().to_string();
    let run = |args: Vec<String>| run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    macro_rules! argv {
        ($($a:expr),* $(,)?) => { vec![$($a.to_string()),*] };
    }
    run(argv!["toy", "--n-corpus", "120", "--n-dataset", "80", "--seed", "5", "--out", d("toy")])?;
    run(argv!["tokenizer-train", "--corpus", d("toy/corpus.txt"), "--vocab-size", "128", "--out", d("tok")])?;
    run(argv!["subset", "--corpus", d("toy/corpus.txt"), "--fraction", "0.6", "--out", d("sub")])?;
    run(argv![
        "pretrain", "--corpus", d("sub/subset.txt"), "--vocab", d("tok/vocab.txt"), "--out", d("pt"), "--layers", "1", "--heads", "2",
        "--hidden-dim", "16", "--ff-dim", "32", "--epochs", "2", "--lr", "1e-3",
    ])?;
    for (obj, out) in [("mtr", "da_mtr"), ("cl", "da_cl")] {
        run(argv![
            "adapt", "--checkpoint", d("pt/checkpoint"), "--dataset", d("toy/dataset.csv"), "--objective", obj, "--epochs", "1", "--out",
            d(out),
        ])?;
    }
    run(argv!["embed", "--checkpoint", d("da_mtr/checkpoint"), "--dataset", d("toy/dataset.csv"), "--pooling", "mean", "--out", d("emb")])?;
    let features = [
        ("ev_emb", argv!["--embeddings", d("emb/embeddings.csv"), "--model", "emb"]),
        ("ev_ck", argv!["--checkpoint", d("da_cl/checkpoint"), "--model", "ck"]),
        ("ev_desc", argv!["--descriptors", "--model", "desc"]),
    ];
    for (out, extra) in features {
        let mut args = argv![
            "evaluate", "--out", d(out), "--dataset", d("toy/dataset.csv"), "--folds", "3", "--repeats", "2", "--n-trees", "10",
            "--splits", "butina", "--threshold", "0.3",
        ];
        args.extend(extra);
        run(args)?;
    }
    let recs = argv![d("ev_emb/records.csv"), d("ev_ck/records.csv"), d("ev_desc/records.csv")];
    run([argv!["compare", "--metric", "R2", "--out", d("cmp"), "--records"], recs.clone()].concat())?;
    run([argv!["report", "--out", d("rep"), "--records"], recs].concat())?;

    let stages = ["toy", "tok", "sub", "pt", "da_mtr", "da_cl", "emb", "ev_emb", "ev_ck", "ev_desc", "cmp", "rep"];
    let mut files = 0;
    for stage in stages {
        let out = root.join(format!("replay_{stage}"));
        let r = moldapt(&["replay", &d(&format!("{stage}/manifest.json")), "--out", s(&out)]);
        ensure(r.status.success(), || {
            format!("{stage}: {}{}", String::from_utf8_lossy(&r.stdout).trim(), String::from_utf8_lossy(&r.stderr).trim())
        })?;
        for f in read_json(&root.join(stage).join("manifest.json"))["outputs"].as_array().unwrap() {
            let rel = f["path"].as_str().unwrap();
            let (a, b) = (std::fs::read(root.join(stage).join(rel)).unwrap(), std::fs::read(out.join(rel)).unwrap());
            ensure(a == b, || format!("{stage}/{rel} differs"))?;
            files += 1;
        }
    }
    Ok(format!("{} stages replayed from manifests, {files} files bitwise identical", stages.len()))
}

#[test]
fn acceptance_criteria() {
    let root = tempfile::tempdir().unwrap();
    let pipeline: OnceCell<Result<Pipeline, String>> = OnceCell::new();
    let pipe = |root: &Path| -> Result<&Pipeline, String> {
        pipeline
            .get_or_init(|| run_pipeline(&root.join("pipeline")))
            .as_ref()
            .map_err(|e| format!("pipeline: {e}"))
    };
    let mut rows: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let line = match &res {
            Ok(d) => format!("PASS [{id}] {name}: {d}"),
            Err(d) => format!("FAIL [{id}] {name}: {d}"),
        };
        let mut out = std::io::stdout().lock();
        writeln!(out, "{line} ({:.1}s)", t0.elapsed().as_secs_f64()).unwrap();
        out.flush().unwrap();
        rows.push((id, name, res));
    };
    let r = root.path();
    record(1, "gradient gate", &mut gradient_gate);
    record(2, "memorization", &mut memorization);
    record(3, "Butina oracle equivalence", &mut butina_oracle);
    record(4, "proportional subset", &mut || proportional_subset(r));
    record(5, "CV integrity", &mut || pipe(r).and_then(cv_integrity));
    record(6, "statistics oracles", &mut stats_oracles);
    record(7, "metric identities", &mut metric_identities);
    record(8, "desk-scale trend", &mut || pipe(r).and_then(trend));
    record(9, "replay determinism", &mut || replay(&r.join("replay")));
    let failed: Vec<_> = rows.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
