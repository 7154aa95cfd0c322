//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 6, 7 and 8 need the FreeBase and WordNet benchmark files, looked
//! up under `$RELPRED_DATA_DIR/{FB15K,WN18}/{train,valid,test,names}.tsv`
//! (default: `data/` at the workspace root). When the files are absent those
//! criteria print FAIL with the reason; they only turn the exit status red
//! when `RELPRED_ACCEPTANCE_STRICT=1` is set. Every criterion that runs and
//! fails turns it red.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relpred::experiment::{cmd_evaluate, cmd_stats, cmd_train, RunConfig};
use relpred::kg_data::{
    build_dataset, EntityId, KnowledgeGraphDataset, NameNormalization, PairRelationIndex, RelationId, Triple,
};
use relpred::metrics::*;
use relpred::model::{loss, probabilities, ClassifierState, Logits, Mode, ModelConfig, TargetVector};
use relpred::splits::{make_inductive, verify_inductive};
use relpred::synthetic::{generate, SyntheticSpec};
use relpred::tokenizer::*;
use relpred::trainer::{train, TrainConfig};

type Criterion = Box<dyn FnOnce(&mut Vec<String>) -> Verdict>;

enum Verdict {
    Pass(String),
    Fail(String),
    Blocked(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn data_root() -> PathBuf {
    std::env::var_os("RELPRED_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn benchmark(name: &str) -> std::result::Result<PathBuf, String> {
    let dir = data_root().join(name);
    let missing: Vec<&str> = ["train.tsv", "valid.tsv", "test.tsv", "names.tsv"]
        .into_iter()
        .filter(|f| !dir.join(f).is_file())
        .collect();
    if missing.is_empty() {
        Ok(dir)
    } else {
        Err(format!("{} missing from {}", missing.join(", "), dir.display()))
    }
}

fn load(dir: &Path, normalization: NameNormalization) -> KnowledgeGraphDataset {
    build_dataset(
        &dir.join("train.tsv"),
        &dir.join("valid.tsv"),
        &dir.join("test.tsv"),
        &dir.join("names.tsv"),
        normalization,
    )
    .unwrap()
}

/// Returns the list of violated identities for one report.
fn identity_violations(m: &MetricsReport, r: usize) -> Vec<String> {
    let mut bad = Vec::new();
    if m.filtered_mean_rank > m.mean_rank {
        bad.push(format!("FMR {} > MR {}", m.filtered_mean_rank, m.mean_rank));
    }
    for h in &m.hits {
        if h.filtered < h.raw {
            bad.push(format!("filtered Hits@{} < raw", h.n));
        }
    }
    for w in m.hits.windows(2) {
        if w[0].n < w[1].n && (w[0].raw > w[1].raw || w[0].filtered > w[1].filtered) {
            bad.push(format!("Hits@{} > Hits@{}", w[0].n, w[1].n));
        }
    }
    if let Some(h) = m.hits(r) {
        if h.raw != 1.0 || h.filtered != 1.0 {
            bad.push(format!("Hits@{r} = {}/{}", h.raw, h.filtered));
        }
    }
    for v in [m.mrr, m.filtered_mrr] {
        if !(v > 0.0 && v <= 1.0) {
            bad.push(format!("MRR {v} outside (0,1]"));
        }
    }
    bad
}

fn c1_metric_oracles() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0;
    for case in 0..1000 {
        let r = rng.gen_range(1..=10);
        let scores = common::random_scores(&mut rng, r, case % 3 == 0);
        let gt = rng.gen_range(0..r);
        let valid = common::random_valid(&mut rng, r, gt);
        let logits = Logits(scores.clone());
        let g = RelationId(gt as u32);
        let policy = TiePolicy::Optimistic;
        if filtered_rank(&logits, g, &common::rel_ids(&valid)).unwrap()
            != common::deletion_rank(&scores, gt, &valid, policy)
        {
            mismatches += 1;
        }
        if rank_of(&logits, g) != common::sort_rank(&scores, gt, policy) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("1000 cases, {mismatches} mismatches, {:.3} s", elapsed.as_secs_f64()),
    )
}

fn c2_metric_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut violations = Vec::new();
    let mut total = 0;
    for r in [2usize, 7, 18] {
        let n = 5000;
        let mut queries = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        for i in 0..n {
            let (h, t) = (EntityId(rng.gen_range(0..300)), EntityId(rng.gen_range(0..300)));
            queries.push(Triple::new(h, RelationId(rng.gen_range(0..r) as u32), t));
            logits.push(Logits(common::random_scores(&mut rng, r, i % 5 == 0)));
        }
        let mut index = PairRelationIndex::default();
        index.extend(&queries);
        let records = rank_queries(&queries, &logits, &index, TiePolicy::Optimistic).unwrap();
        let ns: Vec<usize> = (1..=r).collect();
        let m = MetricsReport::from_records(&records, &ns).unwrap();
        violations.extend(identity_violations(&m, r));
        total += n;
    }
    check(
        violations.is_empty(),
        format!("{total} random-logit queries at R in {{2, 7, 18}}; violations: {violations:?}"),
    )
}

fn c3_loss_exactness() -> Verdict {
    let ln4 = loss(&Logits(vec![0.0; 4]), &TargetVector::one_hot(RelationId(2), 4)).unwrap();
    let two_ln2 = loss(&Logits(vec![0.0; 2]), &TargetVector::new(vec![1, 1]).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut shift_err: f64 = 0.0;
    for _ in 0..1000 {
        let r = rng.gen_range(1..20);
        let z: Vec<f64> = (0..r).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let c = rng.gen_range(-500.0..500.0);
        let p = probabilities(&Logits(z.clone()));
        let q = probabilities(&Logits(z.iter().map(|x| x + c).collect()));
        for (a, b) in p.iter().zip(&q) {
            shift_err = shift_err.max((a - b).abs());
        }
    }
    let e1 = (ln4 - 4f64.ln()).abs();
    let e2 = (two_ln2 - 2.0 * 2f64.ln()).abs();
    check(
        e1 < 1e-9 && e2 < 1e-9 && shift_err < 1e-9,
        format!("|ln4 err| {e1:.1e}, |2ln2 err| {e2:.1e}, max shift err {shift_err:.1e}"),
    )
}

fn gradient_error(state: &ClassifierState, seqs: &[TokenizedSequence], targets: &[TargetVector], mode: Mode) -> f64 {
    let (_, analytic) = state.loss_and_grad(seqs, targets, mode).unwrap();
    let h = 1e-4;
    let mut probe = state.clone();
    let mut diff = 0.0;
    let (mut na, mut nn) = (0.0, 0.0);
    for (i, a) in analytic.iter().enumerate() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let plus = probe.loss_and_grad(seqs, targets, mode).unwrap().0;
        probe.params_mut()[i] = orig - h;
        let minus = probe.loss_and_grad(seqs, targets, mode).unwrap().0;
        probe.params_mut()[i] = orig;
        let n = (plus - minus) / (2.0 * h);
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    diff.sqrt() / (na.sqrt() + nn.sqrt())
}

fn c4_gradient_check() -> Verdict {
    let start = Instant::now();
    let cfg = ModelConfig {
        vocab_size: 24,
        pad_len: 10,
        embed_dim: 8,
        num_layers: 2,
        num_heads: 2,
        feedforward_dim: 16,
        num_relations: 6,
        dropout_rate: 0.2,
        seed: 104,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut state = ClassifierState::init(cfg.clone()).unwrap();
    for p in state.params_mut() {
        *p += rng.gen_range(-0.3..0.3);
    }
    let params = state.num_params();
    let mut worst: f64 = 0.0;
    for b in 0..20 {
        let size = rng.gen_range(1..=4);
        let mut seqs = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..size {
            let active = rng.gen_range(3..=cfg.pad_len);
            let mut ids: Vec<u32> = (0..cfg.pad_len)
                .map(|i| if i < active { rng.gen_range(1..cfg.vocab_size as u32) } else { PAD_ID })
                .collect();
            ids[0] = CLS_ID;
            let mask = (0..cfg.pad_len).map(|i| u8::from(i < active)).collect();
            seqs.push(TokenizedSequence { input_ids: ids, attention_mask: mask });
            let mut labels: Vec<u8> = (0..cfg.num_relations).map(|_| u8::from(rng.gen_bool(0.25))).collect();
            labels[rng.gen_range(0..cfg.num_relations)] = 1;
            targets.push(TargetVector::new(labels).unwrap());
        }
        let mode = if b % 2 == 0 { Mode::Eval } else { Mode::Train { seed: b as u64 } };
        worst = worst.max(gradient_error(&state, &seqs, &targets, mode));
    }
    let elapsed = start.elapsed();
    check(
        params <= 10_000 && worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "{params} parameters, 20 batches, worst relative error {worst:.2e}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn c5_tokenizer() -> Verdict {
    let kg = generate(&SyntheticSpec::default());
    let names: Vec<String> = kg.names.into_iter().map(|(_, n)| n).collect();
    let vocab = train_vocabulary(names.iter().map(String::as_str), 500).unwrap();
    let known: Vec<&str> = names
        .iter()
        .flat_map(|n| n.split_whitespace())
        .filter(|w| vocab.id(w).is_some())
        .collect();
    let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyzABCXYZ0123456789-'éüЖλ漢字🙂".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let random_name = |rng: &mut ChaCha8Rng| -> (String, bool) {
        let words = rng.gen_range(1..=12);
        let in_vocab = rng.gen_bool(0.5);
        let name: Vec<String> = (0..words)
            .map(|_| {
                if in_vocab {
                    known[rng.gen_range(0..known.len())].to_owned()
                } else {
                    (0..rng.gen_range(1..12)).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
                }
            })
            .collect();
        (name.join(" "), in_vocab)
    };
    let pad_len = 50;
    let (mut length, mut mask, mut total, mut round) = (0, 0, 0, 0);
    let mut round_checked = 0;
    for _ in 0..10_000 {
        let (head, hv) = random_name(&mut rng);
        let (tail, tv) = random_name(&mut rng);
        let seq = encode_pair(&head, &tail, &vocab, pad_len).unwrap();
        if seq.input_ids.len() != pad_len || seq.attention_mask.len() != pad_len {
            length += 1;
        }
        let monotone = seq.attention_mask.windows(2).all(|w| w[0] >= w[1])
            && seq.input_ids.iter().zip(&seq.attention_mask).all(|(&i, &m)| (m == 1) == (i != PAD_ID));
        if !monotone {
            mask += 1;
        }
        for w in head.split_whitespace().chain(tail.split_whitespace()) {
            let ids = tokenize_word(w, &vocab);
            if ids.is_empty() || ids.iter().any(|&i| i as usize >= vocab.len()) {
                total += 1;
            }
        }
        let (hl, tl) = (tokenize_name(&head, &vocab).len(), tokenize_name(&tail, &vocab).len());
        if hv && tv && hl + tl <= pad_len - 3 {
            round_checked += 1;
            let expected: Vec<&str> = head.split_whitespace().chain(tail.split_whitespace()).collect();
            if vocab.decode(&seq.input_ids) != expected {
                round += 1;
            }
        }
    }
    check(
        length + mask + total + round == 0 && round_checked > 1000,
        format!(
            "10000 pairs at pad_len 50: length {length}, mask {mask}, fallback {total} failures; \
             round trip {round} failures over {round_checked} in-vocabulary pairs"
        ),
    )
}

/// Filtered ranks of a predictor that always orders relations by training
/// frequency, most frequent first.
fn frequency_baseline(ds: &KnowledgeGraphDataset, ns: &[usize]) -> MetricsReport {
    let r = ds.num_relations();
    let mut counts = vec![0usize; r];
    for t in &ds.train.triples {
        counts[t.relation.index()] += 1;
    }
    let scores: Vec<f64> = counts.iter().enumerate().map(|(i, &c)| c as f64 - i as f64 * 1e-6).collect();
    let logits = vec![Logits(scores); ds.test.len()];
    let records = rank_queries(&ds.test.triples, &logits, &ds.index, TiePolicy::Optimistic).unwrap();
    MetricsReport::from_records(&records, ns).unwrap()
}

struct LearningRun {
    model: MetricsReport,
    baseline: MetricsReport,
    relations: usize,
    elapsed: Duration,
}

fn learn(ds: &KnowledgeGraphDataset, pad_len: usize, embed_dim: usize, batch_size: usize) -> LearningRun {
    let start = Instant::now();
    let vocab = train_vocabulary(ds.names.iter(), 8000).unwrap();
    let state = ClassifierState::init(ModelConfig {
        vocab_size: vocab.len(),
        pad_len,
        embed_dim,
        num_layers: 2,
        num_heads: 4,
        feedforward_dim: 2 * embed_dim,
        num_relations: ds.num_relations(),
        dropout_rate: 0.1,
        seed: 106,
    })
    .unwrap();
    let tcfg = TrainConfig {
        learning_rate: 1e-3,
        weight_decay: 0.01,
        epochs: 10,
        batch_size,
        shuffle_seed: 106,
        ..TrainConfig::default()
    };
    let (state, _) = train(ds, state, &tcfg, &vocab, pad_len).unwrap();
    let ns = [1, 3, 10];
    let (model, _) = evaluate(&state, ds, &ds.test, &ds.index, &vocab, pad_len, &ns).unwrap();
    LearningRun {
        model,
        baseline: frequency_baseline(ds, &ns),
        relations: ds.num_relations(),
        elapsed: start.elapsed(),
    }
}

fn learning_verdict(run: &LearningRun) -> (bool, String) {
    let h1 = run.model.hits(1).unwrap().filtered;
    let base = run.baseline.hits(1).unwrap().filtered;
    let bar = (run.relations as f64 + 1.0) / 2.0;
    let fmr = run.model.filtered_mean_rank;
    let violations = identity_violations(&run.model, run.relations);
    (
        h1 > base && fmr < bar && violations.is_empty(),
        format!(
            "filtered Hits@1 {h1:.4} vs constant {base:.4}, FMR {fmr:.3} vs {bar}, {:.0} s",
            run.elapsed.as_secs_f64()
        ),
    )
}

fn c6_wordnet_learning(notes: &mut Vec<String>) -> Verdict {
    let stand_in = generate(&SyntheticSpec::default()).to_dataset().unwrap();
    let (ok, detail) = learning_verdict(&learn(&stand_in, 24, 32, 32));
    notes.push(format!(
        "synthetic stand-in for 6 (400 entities, 18 relations; not the criterion): {} {detail}",
        if ok { "would pass," } else { "would fail," }
    ));
    let dir = match benchmark("WN18") {
        Ok(d) => d,
        Err(e) => return Verdict::Blocked(format!("WordNet benchmark not available: {e}")),
    };
    let ds = load(&dir, NameNormalization::UnderscoreToSpace);
    let (ok, detail) = learning_verdict(&learn(&ds, 50, 64, 64));
    check(ok, format!("WN18, 2 layers, embed_dim 64, 10 epochs: {detail}"))
}

fn c7_inductive(notes: &mut Vec<String>) -> Verdict {
    let stand_in = generate(&SyntheticSpec {
        entities: 600,
        relations: 30,
        train: 4000,
        valid: 300,
        test: 600,
        ..SyntheticSpec::default()
    })
    .to_dataset()
    .unwrap();
    let (ok, detail) = inductive_check(&stand_in, 12, 2000);
    notes.push(format!(
        "synthetic stand-in for 7 (not the criterion): {} {detail}",
        if ok { "would pass," } else { "would fail," }
    ));
    let dir = match benchmark("FB15K") {
        Ok(d) => d,
        Err(e) => return Verdict::Blocked(format!("FreeBase benchmark not available: {e}")),
    };
    let ds = load(&dir, NameNormalization::Verbatim);
    let (ok, detail) = inductive_check(&ds, 32, 20_000);
    check(ok, format!("FB15K at fraction 0.10: {detail}"))
}

/// Splits twice with one seed, verifies, then trains a small model on (a
/// prefix of) the pruned training split and checks the test metrics.
fn inductive_check(ds: &KnowledgeGraphDataset, pad_len: usize, train_cap: usize) -> (bool, String) {
    let a = make_inductive(ds, 0.10, 107).unwrap();
    let b = make_inductive(ds, 0.10, 107).unwrap();
    let deterministic = a == b;
    let report = verify_inductive(&a);
    let mut inductive = a.to_dataset(ds);
    inductive.train.triples.truncate(train_cap);
    let vocab = train_vocabulary(inductive.names.iter(), 4000).unwrap();
    let state = ClassifierState::init(ModelConfig {
        vocab_size: vocab.len(),
        pad_len,
        embed_dim: 16,
        num_layers: 1,
        num_heads: 2,
        feedforward_dim: 32,
        num_relations: inductive.num_relations(),
        dropout_rate: 0.1,
        seed: 107,
    })
    .unwrap();
    let tcfg = TrainConfig {
        learning_rate: 3e-3,
        epochs: 1,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let (state, _) = train(&inductive, state, &tcfg, &vocab, pad_len).unwrap();
    let r = inductive.num_relations();
    let ns = [1, 3, 10, r];
    let (m, _) = evaluate(&state, &inductive, &inductive.test, &inductive.index, &vocab, pad_len, &ns).unwrap();
    let violations = identity_violations(&m, r);
    (
        deterministic && report.passed() && violations.is_empty(),
        format!(
            "deterministic {deterministic}, verification {}, {} test triples, FMRR {:.3}, identity violations {violations:?}",
            if report.passed() { "passed" } else { "FAILED" },
            a.test.len(),
            m.filtered_mrr
        ),
    )
}

fn c8_ingestion() -> Verdict {
    let expected = [
        ("FB15K", NameNormalization::Verbatim, [483_142, 50_000, 59_071, 14_951, 1_345]),
        ("WN18", NameNormalization::UnderscoreToSpace, [141_442, 5_000, 5_000, 40_943, 18]),
    ];
    let mut missing = Vec::new();
    let mut details = Vec::new();
    let mut ok = true;
    for (name, normalization, want) in expected {
        let dir = match benchmark(name) {
            Ok(d) => d,
            Err(e) => {
                missing.push(e);
                continue;
            }
        };
        let out = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::for_data_dir(&dir, out.path());
        cfg.data.normalization = normalization;
        cfg.quiet = true;
        let s = cmd_stats(&cfg).unwrap();
        let got = [s.train, s.valid, s.test, s.entities, s.relations];
        ok &= got == want;
        details.push(format!("{name} {got:?} (expected {want:?})"));
    }
    if !missing.is_empty() {
        return Verdict::Blocked(format!("benchmark files not available: {}", missing.join("; ")));
    }
    check(ok, details.join(", "))
}

fn c9_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&SyntheticSpec {
        train: 600,
        valid: 60,
        test: 120,
        ..SyntheticSpec::default()
    })
    .write(&data)
    .unwrap();
    let run = |name: &str| {
        let mut cfg = RunConfig::for_data_dir(&data, &tmp.path().join(name));
        cfg.set_seed(109);
        cfg.quiet = true;
        cfg.tokenizer.max_size = 300;
        cfg.tokenizer.pad_len = 16;
        cfg.model.embed_dim = 16;
        cfg.model.num_layers = 1;
        cfg.model.feedforward_dim = 32;
        cfg.train.epochs = 2;
        cmd_train(&cfg).unwrap();
        cmd_evaluate(&cfg, None).unwrap();
        std::fs::read(cfg.reports_dir().join("metrics.json")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    check(a == b && !a.is_empty(), format!("two runs, metrics.json {} bytes, identical {}", a.len(), a == b))
}

fn main() {
    let strict = std::env::var("RELPRED_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut notes = Vec::new();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("metric oracle equivalence", Box::new(|_| c1_metric_oracles())),
        ("metric identities", Box::new(|_| c2_metric_identities())),
        ("loss exactness", Box::new(|_| c3_loss_exactness())),
        ("gradient check", Box::new(|_| c4_gradient_check())),
        ("tokenizer contracts", Box::new(|_| c5_tokenizer())),
        ("WordNet learning smoke test", Box::new(c6_wordnet_learning)),
        ("FreeBase inductive protocol", Box::new(c7_inductive)),
        ("dataset ingestion counts", Box::new(|_| c8_ingestion())),
        ("end-to-end determinism", Box::new(|_| c9_determinism())),
    ];
    let (mut failed, mut blocked) = (0, 0);
    for (i, (title, f)) in criteria.into_iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(|| f(&mut notes)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Verdict::Fail(format!("panicked: {msg}"))
            });
        match verdict {
            Verdict::Pass(d) => println!("PASS  {}. {title}: {d}", i + 1),
            Verdict::Fail(d) => {
                failed += 1;
                println!("FAIL  {}. {title}: {d}", i + 1);
            }
            Verdict::Blocked(d) => {
                blocked += 1;
                println!("FAIL  {}. {title}: not run, {d}", i + 1);
            }
        }
    }
    for n in &notes {
        println!("      note: {n}");
    }
    println!("{failed} failed, {blocked} not run for missing data");
    if failed > 0 || (strict && blocked > 0) {
        std::process::exit(1);
    }
}
