use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::time::{Duration, Instant};

use dupforge::codelm::{embed_snippet, perplexity, train_char_lm, CharLmConfig, CharLmDims, CharLmModel, CharVocab};
use dupforge::codeprep::{canonicalize, canonicalize_text, CodeSnippet, Lang, LangTables};
use dupforge::gradsuite::run_gradient_suite;
use dupforge::gridcnn::{train_gridcnn, ConvSpec, GridConfig};
use dupforge::ingest::{DuplicateEdge, Question};
use dupforge::metrics::{auroc, confusion_metrics, MetricsReport, ScoredPair};
use dupforge::pairgen::{generate_pairs, PairGenConfig, QuestionPair, Split};
use dupforge::siamese::{train_siamese, SiameseConfig};
use dupforge::synth::{bracket_strings, closure_positions, is_open, template_task, TemplateTask};
use dupforge::train::score_pairs;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("[acceptance] {name}: {verdict} {detail}\n");
    std::io::stdout().write_all(line.as_bytes()).unwrap();
}

#[test]
fn gradient_suite_matches_finite_differences() {
    let start = Instant::now();
    let suite = run_gradient_suite(11, 20).unwrap();
    let elapsed = start.elapsed();
    let worst = suite.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    let pass = suite.passed() && suite.entries.len() >= 12 && elapsed < Duration::from_secs(120);
    report(
        "gradient suite",
        pass,
        format!("components={} worst_rel_err={worst:.2e} secs={:.1}", suite.entries.len(), elapsed.as_secs_f64()),
    );
    for e in &suite.entries {
        assert!(e.passed, "{} rel err {:.3e}", e.name, e.max_rel_error);
    }
    assert!(pass);
}

fn brute_auroc(scored: &[ScoredPair]) -> f64 {
    let (mut wins2, mut p, mut n) = (0u128, 0u128, 0u128);
    for a in scored.iter().filter(|s| s.label == 1) {
        p += 1;
        for b in scored.iter().filter(|s| s.label == 0) {
            if a.score > b.score {
                wins2 += 2;
            } else if a.score == b.score {
                wins2 += 1;
            }
        }
    }
    n += scored.iter().filter(|s| s.label == 0).count() as u128;
    wins2 as f64 / (2 * p * n) as f64
}

#[test]
fn auroc_equals_pairwise_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for trial in 0..1000 {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(1..=n.max(2));
        let mut scored: Vec<ScoredPair> = (0..n)
            .map(|i| {
                let score = rng.gen_range(0..levels) as f64 / levels as f64;
                ScoredPair::new(i as u64, i as u64 + 1, score, rng.gen_range(0..2))
            })
            .collect();
        scored[0].label = 1;
        scored[1].label = 0;
        if auroc(&scored).unwrap() != brute_auroc(&scored) {
            mismatches += 1;
            eprintln!("trial {trial} differs");
        }
    }
    report("auroc exactness", mismatches == 0, format!("instances=1000 mismatches={mismatches}"));
    assert_eq!(mismatches, 0);
}

#[test]
fn bracket_language_model_tracks_nesting() {
    let start = Instant::now();
    let train = bracket_strings(2000, 21);
    let held = bracket_strings(300, 22);
    let config = CharLmConfig {
        embed_dim: 16,
        hidden_dim: 64,
        chunk: 64,
        epochs: 12,
        lr: 5e-3,
        max_chars: 64,
        clip_norm: 5.0,
    };
    let lm = train_char_lm(&train, Lang::Other, &config, 3).unwrap().model;
    let ppl = perplexity(&lm, &held).unwrap();
    let vocab = CharVocab;
    let openers: Vec<usize> = "([{".chars().map(|c| vocab.id(c)).collect();
    let (mut good, mut total) = (0usize, 0usize);
    for s in &held {
        let rows = lm.next_log_probs(&vocab.stream(s)).unwrap();
        for (i, closer) in closure_positions(s) {
            let row = &rows[i];
            let target = row[vocab.id(closer)];
            total += 1;
            if openers.iter().all(|&o| target > row[o]) {
                good += 1;
            }
        }
    }
    let frac = good as f64 / total as f64;
    let elapsed = start.elapsed();
    let limit = 0.5 * vocab.len() as f64;
    let pass = ppl <= limit && frac >= 0.95 && elapsed < Duration::from_secs(600);
    report(
        "bracket language model",
        pass,
        format!("perplexity={ppl:.3} limit={limit} closer_wins={frac:.4} closures={total} secs={:.1}", elapsed.as_secs_f64()),
    );
    assert!(s_chars_are_brackets(&held));
    assert!(pass);
}

fn s_chars_are_brackets(strings: &[String]) -> bool {
    strings.iter().all(|s| s.chars().all(|c| is_open(c) || ")]}".contains(c)))
}

const PY: &[&str] = &[
    "{0} = {1} + {2}",
    "for {0} in range({1}):\n    {2} += {0}",
    "def {0}({1}, {2}):\n    return {1} * {2}",
    "if {0} > 3:\n    print({1})",
    "{0} = [{1} for {1} in {2}]",
    "{0}.append('text')",
    "class {0}:\n    def __init__(self, {1}):\n        self.{2} = {1}",
];

const JAVA: &[&str] = &[
    "int {0} = {1} + 2;",
    "for (int {0} = 0; {0} < {1}; {0}++) { {2} += {0}; }",
    "String {0} = \"s\" + {1};",
    "public static void {0}(int {1}) { {2}({1}); }",
];

fn fresh_names(rng: &mut ChaCha8Rng, lang: Lang, n: usize) -> Vec<String> {
    let tables = LangTables::builtin(lang);
    let mut out: Vec<String> = Vec::new();
    while out.len() < n {
        let len = rng.gen_range(1..8);
        let mut s = String::new();
        s.push(rng.gen_range(b'a'..=b'z') as char);
        for _ in 1..len {
            s.push(match rng.gen_range(0..12) {
                0 => '_',
                1 => rng.gen_range(b'0'..=b'9') as char,
                _ => rng.gen_range(b'a'..=b'z') as char,
            });
        }
        if !tables.is_reserved(&s) && !["text", "s"].contains(&s.as_str()) && !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn render(prog: &[(&str, [usize; 3])], names: &[String]) -> String {
    prog.iter()
        .map(|(t, k)| t.replace("{0}", &names[k[0]]).replace("{1}", &names[k[1]]).replace("{2}", &names[k[2]]))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn identifier_renaming_is_invisible() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = CharLmDims {
        vocab: CharVocab.len(),
        embed: 8,
        hidden: 16,
    };
    let (mut text_diff, mut emb_diff, mut not_idem) = (0, 0, 0);
    for _ in 0..1000 {
        let (lang, templates) = if rng.gen_bool(0.5) { (Lang::Java, JAVA) } else { (Lang::Python, PY) };
        let prog: Vec<(&str, [usize; 3])> = (0..rng.gen_range(1..6))
            .map(|_| (*templates.choose(&mut rng).unwrap(), [rng.gen_range(0..6), rng.gen_range(0..6), rng.gen_range(0..6)]))
            .collect();
        let a = CodeSnippet::new(render(&prog, &fresh_names(&mut rng, lang, 6)), lang);
        let b = CodeSnippet::new(render(&prog, &fresh_names(&mut rng, lang, 6)), lang);
        let (ca, cb) = (canonicalize(&a), canonicalize(&b));
        text_diff += usize::from(ca != cb);
        not_idem += usize::from(canonicalize_text(&ca, lang) != ca);
        let lm = CharLmModel::<f32>::new(lang, dims, 512, &mut rng);
        emb_diff += usize::from(embed_snippet(&lm, &a).unwrap() != embed_snippet(&lm, &b).unwrap());
    }
    let pass = text_diff == 0 && emb_diff == 0 && not_idem == 0;
    report(
        "identifier renaming",
        pass,
        format!("trials=1000 text_diffs={text_diff} embedding_diffs={emb_diff} non_idempotent={not_idem}"),
    );
    assert!(pass);
}

fn test_metrics(scored: Vec<ScoredPair>, threshold: f64) -> MetricsReport {
    confusion_metrics(&scored, threshold).unwrap()
}

fn test_pairs(task: &TemplateTask) -> Vec<QuestionPair> {
    task.pairs.iter().copied().filter(|p| p.split == Some(Split::Test)).collect()
}

#[test]
fn siamese_separates_template_duplicates() {
    let start = Instant::now();
    let task = template_task(2000, 31, [0.8, 0.1, 0.1]).unwrap();
    let config = SiameseConfig {
        word_dim: 32,
        title_hidden: 32,
        body_hidden: 32,
        code_out: 8,
        mlp_hidden: vec![32],
        epochs: 30,
        patience: 5,
        ..SiameseConfig::default()
    };
    let (art, _) = train_siamese(&task.questions, &task.pairs, None, &config, 1, 4).unwrap();
    let inputs = task.questions.iter().map(|q| (q.id, art.prepare(q, None))).collect::<HashMap<_, _>>();
    let scored = score_pairs(&art.model, &inputs, &test_pairs(&task)).unwrap();
    let auc = auroc(&scored).unwrap();
    let m = test_metrics(scored, art.threshold);
    let elapsed = start.elapsed();
    let pass = m.accuracy >= 0.90 && auc >= 0.95 && elapsed < Duration::from_secs(900);
    report(
        "siamese on templates",
        pass,
        format!("accuracy={:.4} auroc={auc:.4} threshold={:.4} secs={:.1}", m.accuracy, art.threshold, elapsed.as_secs_f64()),
    );
    assert!(pass);
}

fn cosine_loop(u: &[f32], v: &[f32]) -> f32 {
    let (mut uv, mut uu, mut vv) = (0f32, 0f32, 0f32);
    for k in 0..u.len() {
        uv += u[k] * v[k];
        uu += u[k] * u[k];
        vv += v[k] * v[k];
    }
    if uu == 0.0 || vv == 0.0 {
        return 0.0;
    }
    (uv / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0)
}

#[test]
fn grid_cnn_separates_template_duplicates() {
    let task = template_task(2000, 31, [0.8, 0.1, 0.1]).unwrap();
    let config = GridConfig {
        side: 32,
        budgets: [8, 16, 8],
        embed_dim: 16,
        conv: vec![ConvSpec {
            channels: 4,
            kernel: 3,
            stride: 1,
            pool: 2,
        }],
        mlp_hidden: vec![16],
        epochs: 30,
        patience: 5,
        ..GridConfig::default()
    };
    let (art, _) = train_gridcnn(&task.questions, &task.pairs, &config, 1, 4).unwrap();
    let inputs = art.prepare_all(&task.questions);
    let scored = score_pairs(&art.model, &inputs, &test_pairs(&task)).unwrap();
    let m = test_metrics(scored, art.threshold);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cell_diffs = 0;
    for _ in 0..100 {
        let a = &inputs[&task.questions.choose(&mut rng).unwrap().id];
        let b = &inputs[&task.questions.choose(&mut rng).unwrap().id];
        let g = art.model.grid(a, b).unwrap();
        let (ea, eb) = (art.model.embed_sequence(a).unwrap(), art.model.embed_sequence(b).unwrap());
        for i in 0..config.side {
            for j in 0..config.side {
                let expect = if i < ea.len() && j < eb.len() { cosine_loop(ea[i], eb[j]) } else { 0.0 };
                cell_diffs += usize::from(g.value(i, j).to_bits() != expect.to_bits());
            }
        }
    }
    let pass = m.accuracy >= 0.90 && cell_diffs == 0;
    report(
        "grid cnn on templates",
        pass,
        format!("accuracy={:.4} grid_pairs=100 cell_mismatches={cell_diffs}", m.accuracy),
    );
    assert!(pass);
}

fn fixture_500(rng: &mut ChaCha8Rng) -> (Vec<Question>, Vec<DuplicateEdge>) {
    let tags = ["python", "java", "sql", "regex", "json"];
    let mut questions = Vec::new();
    let mut edges = Vec::new();
    let mut id = 100u64;
    while questions.len() < 500 {
        let size = if questions.len() + 3 <= 500 && rng.gen_bool(0.1) { 3 } else { 2 }.min(500 - questions.len());
        let tag = tags[rng.gen_range(0..tags.len())];
        let first = id;
        for k in 0..size {
            let mut ts = std::collections::BTreeSet::new();
            ts.insert(tag.to_string());
            if rng.gen_bool(0.5) {
                ts.insert(tags[rng.gen_range(0..tags.len())].to_string());
            }
            questions.push(Question {
                id,
                title: format!("question {id}"),
                body_text: "body".into(),
                code_snippets: Vec::new(),
                tags: ts,
            });
            if k > 0 {
                edges.push(DuplicateEdge {
                    post_id: id,
                    related_post_id: if k == 2 && rng.gen_bool(0.5) { first + 1 } else { first },
                });
            }
            id += 1;
        }
        id += rng.gen_range(0..3);
    }
    (questions, edges)
}

fn find(parent: &mut BTreeMap<u64, u64>, x: u64) -> u64 {
    let p = *parent.entry(x).or_insert(x);
    if p == x {
        return x;
    }
    let r = find(parent, p);
    parent.insert(x, r);
    r
}

#[test]
fn pair_dataset_contracts_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (questions, edges) = fixture_500(&mut rng);
    let (pairs, _) = generate_pairs(&questions, &edges, &PairGenConfig::default(), 17).unwrap();

    let pos = pairs.iter().filter(|p| p.label == 1).count();
    let neg = pairs.iter().filter(|p| p.label == 0).count();

    let mut counts = [0usize; 3];
    let mut home: BTreeMap<u64, Split> = BTreeMap::new();
    let mut shared = 0;
    for p in &pairs {
        let s = p.split.unwrap();
        counts[s as usize] += 1;
        for id in [p.id_a, p.id_b] {
            if *home.entry(id).or_insert(s) != s {
                shared += 1;
            }
        }
    }
    let total = pairs.len() as f64;
    let off: Vec<f64> = [0.8, 0.1, 0.1].iter().zip(counts).map(|(r, c)| (c as f64 - r * total).abs()).collect();
    let balanced = off.iter().all(|&d| d <= 2.0);

    let mut parent = BTreeMap::new();
    for e in &edges {
        let (a, b) = (find(&mut parent, e.post_id), find(&mut parent, e.related_post_id));
        parent.insert(a, b);
    }
    let in_closure = pairs
        .iter()
        .filter(|p| p.label == 0 && find(&mut parent, p.id_a) == find(&mut parent, p.id_b))
        .count();

    let pass = pos == neg && balanced && shared == 0 && in_closure == 0;
    report(
        "pair dataset contracts",
        pass,
        format!("questions=500 pos={pos} neg={neg} splits={counts:?} shared_ids={shared} closure_negatives={in_closure}"),
    );
    assert!(pass);
}

fn pipeline(dir: &std::path::Path) -> Vec<u8> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    std::fs::write(
        p("config.toml"),
        "seed = 77\n[codeprep]\nmin_freq = 1\n[siamese]\nword_dim = 8\ntitle_hidden = 8\nbody_hidden = 8\ncode_out = 4\nmlp_hidden = [8]\nepochs = 3\n",
    )
    .unwrap();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth", "--kind", "templates", "--n", "200", "--seed", "9", "--out", &p("data")],
        vec!["pairs", "--config", &p("config.toml"), "--questions", &p("data/questions.jsonl"), "--edges", &p("data/edges.jsonl"), "--out", &p("pairs.jsonl")],
        vec!["train", "--model", "siamese", "--config", &p("config.toml"), "--questions", &p("data/questions.jsonl"), "--pairs", &p("pairs.jsonl"), "--out", &p("model")],
        vec!["eval", "--model", &p("model"), "--pairs", &p("pairs.jsonl"), "--questions", &p("data/questions.jsonl"), "--split", "test", "--out", &p("metrics.json")],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for step in steps {
        let mut argv = vec!["dupforge".to_string()];
        argv.extend(step);
        assert_eq!(dupforge_cli::run(&argv, &mut Vec::new()), 0, "{argv:?}");
    }
    std::fs::read(p("metrics.json")).unwrap()
}

#[test]
fn pipeline_runs_are_byte_identical() {
    std::env::set_var("DUPFORGE_THREADS", "1");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (pipeline(a.path()), pipeline(b.path()));
    let pass = !ra.is_empty() && ra == rb;
    report("reproducible pipeline", pass, format!("report_bytes={}", ra.len()));
    assert!(pass);
}
