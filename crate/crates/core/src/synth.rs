//! Seeded synthetic fixtures: balanced-bracket strings for language-model
//! checks and template-generated question pairs for classifier checks.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codeprep::{CodeSnippet, Lang};
use crate::error::{Error, Result};
use crate::ingest::{write_jsonl, DuplicateEdge, Question};
use crate::pairgen::{split_dataset, write_pairs, QuestionPair, SplitSpec};

pub const BRACKETS: [(char, char); 3] = [('(', ')'), ('[', ']'), ('{', '}')];
pub const BRACKET_MAX_PAIRS: usize = 12;
pub const BRACKET_MAX_DEPTH: usize = 6;

pub fn is_open(c: char) -> bool {
    BRACKETS.iter().any(|&(o, _)| o == c)
}

pub fn closer_of(open: char) -> Option<char> {
    BRACKETS.iter().find(|&&(o, _)| o == open).map(|&(_, c)| c)
}

/// `n` balanced strings over `()[]{}`, each with 1 to
/// [`BRACKET_MAX_PAIRS`] pairs nested at most [`BRACKET_MAX_DEPTH`] deep.
pub fn bracket_strings(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut remaining = rng.gen_range(1..=BRACKET_MAX_PAIRS);
            let mut stack: Vec<char> = Vec::new();
            let mut s = String::with_capacity(2 * remaining);
            while remaining > 0 || !stack.is_empty() {
                let open = remaining > 0
                    && (stack.is_empty()
                        || (stack.len() < BRACKET_MAX_DEPTH && rng.gen_bool(0.5)));
                if open {
                    let (o, c) = BRACKETS[rng.gen_range(0..BRACKETS.len())];
                    s.push(o);
                    stack.push(c);
                    remaining -= 1;
                } else {
                    s.push(stack.pop().expect("non-empty stack"));
                }
            }
            s
        })
        .collect()
}

/// Positions whose character closes an open bracket, with the closer the
/// innermost open bracket demands there.
pub fn closure_positions(s: &str) -> Vec<(usize, char)> {
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for (i, ch) in s.chars().enumerate() {
        if let Some(c) = closer_of(ch) {
            stack.push(c);
        } else if let Some(expected) = stack.pop() {
            out.push((i, expected));
        }
    }
    out
}

pub fn write_brackets(path: &Path, strings: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in strings {
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const VERBS: [[&str; 2]; 16] = [
    ["sort", "order"],
    ["reverse", "invert"],
    ["merge", "combine"],
    ["split", "divide"],
    ["filter", "select"],
    ["convert", "transform"],
    ["parse", "decode"],
    ["serialize", "encode"],
    ["copy", "clone"],
    ["compare", "diff"],
    ["search", "find"],
    ["count", "tally"],
    ["delete", "remove"],
    ["insert", "add"],
    ["update", "modify"],
    ["flatten", "unnest"],
];

const OBJECTS: [&str; 16] = [
    "list", "dictionary", "string", "array", "tuple", "set", "dataframe", "json", "file", "date",
    "integer", "matrix", "queue", "stream", "map", "enum",
];

const CONTEXTS: [&str; 16] = [
    "by key",
    "in place",
    "recursively",
    "in parallel",
    "without loop",
    "with lambda",
    "from csv",
    "to xml",
    "case insensitive",
    "with regex",
    "using numpy",
    "on windows",
    "with generics",
    "over network",
    "from database",
    "at runtime",
];

const TITLE_PATTERNS: [&str; 6] = [
    "how to {v} a {o} {c}",
    "{v} {o} {c}",
    "how do i {v} my {o} {c} in python",
    "best way to {v} {o} {c}",
    "{v} {o} {c} not working",
    "python {v} {o} {c}",
];

const BODY_OPENERS: [&str; 6] = [
    "i want to {v} my {o} {c}",
    "i need to {v} a {o} {c}",
    "trying to {v} the {o} {c}",
    "is there a way to {v} a {o} {c}",
    "what is the fastest way to {v} {o} {c}",
    "my code should {v} each {o} {c}",
];

const FILLER: [&str; 24] = [
    "thanks", "error", "help", "code", "output", "example", "tried", "works", "problem", "expected",
    "result", "please", "simple", "fails", "version", "documentation", "stack", "trace", "question",
    "answer", "somebody", "again", "really", "maybe",
];

const IDENTS: [&str; 16] = [
    "data", "lst", "result", "res", "tmp", "out", "val", "buf", "arr", "obj", "elem", "acc", "rows",
    "xs", "ys", "cache",
];

/// One code shape per verb: identifiers vary per question, structure does not.
const CODE_SHAPES: [&str; 16] = [
    "{a} = sorted({b})",
    "{a} = {b}[::-1]",
    "{a} = {b} + {c}",
    "{a} = {b}.split({s})",
    "{a} = [{c} for {c} in {b} if {c}]",
    "{a} = str({b})",
    "with open({s}) as {a}:\n    {b} = {a}.read()",
    "import json\n{a} = json.dumps({b})",
    "{a} = list({b})",
    "if {a} == {b}:\n    print({a})",
    "for {a} in {b}:\n    if {a} == {c}:\n        break",
    "{a} = len({b})",
    "del {a}[{n}]",
    "{a}.insert({n}, {b})",
    "{a}[{s}] = {b}",
    "{a} = [{c} for {b} in {a} for {c} in {b}]",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Template {
    verb: usize,
    object: usize,
    context: usize,
}

impl Template {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Template {
            verb: rng.gen_range(0..VERBS.len()),
            object: rng.gen_range(0..OBJECTS.len()),
            context: rng.gen_range(0..CONTEXTS.len()),
        }
    }

    fn fill(&self, pattern: &str, rng: &mut ChaCha8Rng) -> String {
        let verb = VERBS[self.verb][rng.gen_range(0..2)];
        pattern
            .replace("{v}", verb)
            .replace("{o}", OBJECTS[self.object])
            .replace("{c}", CONTEXTS[self.context])
    }

    fn tags(&self) -> BTreeSet<String> {
        ["python".to_string(), OBJECTS[self.object].to_string()].into()
    }

    /// A fresh paraphrase: random title pattern, verb synonym, filler words
    /// and identifier names; code is present two times in three.
    fn question(&self, id: u64, rng: &mut ChaCha8Rng) -> Question {
        let title = self.fill(TITLE_PATTERNS.choose(rng).expect("non-empty"), rng);
        let mut body = self.fill(BODY_OPENERS.choose(rng).expect("non-empty"), rng);
        for _ in 0..rng.gen_range(3..9) {
            body.push(' ');
            body.push_str(FILLER.choose(rng).expect("non-empty"));
        }
        let mut code_snippets = Vec::new();
        if rng.gen_bool(2.0 / 3.0) {
            let names: Vec<&str> = IDENTS.choose_multiple(rng, 3).copied().collect();
            let raw = CODE_SHAPES[self.verb]
                .replace("{a}", names[0])
                .replace("{b}", names[1])
                .replace("{c}", names[2])
                .replace("{n}", &rng.gen_range(0..10).to_string())
                .replace("{s}", &format!("'{}'", FILLER.choose(rng).expect("non-empty")));
            code_snippets.push(CodeSnippet::new(raw, Lang::Python));
        }
        Question {
            id,
            title,
            body_text: body,
            code_snippets,
            tags: self.tags(),
        }
    }
}

/// A generated template task.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateTask {
    pub questions: Vec<Question>,
    /// Split-assigned pairs: duplicates first, then non-duplicates.
    pub pairs: Vec<QuestionPair>,
    pub edges: Vec<DuplicateEdge>,
}

/// Generates `n / 2` duplicate pairs (two paraphrases of one template) and
/// `n / 2` non-duplicate pairs (templates sharing both tags but differing
/// in verb and context). Every question appears in exactly one pair, so the
/// split follows `ratios` exactly up to rounding.
pub fn template_task(n: usize, seed: u64, ratios: [f64; 3]) -> Result<TemplateTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n / 2;
    let mut questions = Vec::with_capacity(4 * half);
    let mut pairs = Vec::with_capacity(2 * half);
    let mut next_id = 1u64;
    let mut fresh = |t: &Template, rng: &mut ChaCha8Rng, qs: &mut Vec<Question>| {
        let q = t.question(next_id, rng);
        next_id += 1;
        qs.push(q);
        next_id - 1
    };
    for _ in 0..half {
        let t = Template::random(&mut rng);
        let a = fresh(&t, &mut rng, &mut questions);
        let b = fresh(&t, &mut rng, &mut questions);
        pairs.push(QuestionPair::new(a, b, 1));
    }
    for _ in 0..half {
        let t = Template::random(&mut rng);
        let u = Template {
            verb: (t.verb + rng.gen_range(1..VERBS.len())) % VERBS.len(),
            object: t.object,
            context: (t.context + rng.gen_range(1..CONTEXTS.len())) % CONTEXTS.len(),
        };
        let a = fresh(&t, &mut rng, &mut questions);
        let b = fresh(&u, &mut rng, &mut questions);
        pairs.push(QuestionPair::new(a, b, 0));
    }
    let edges = pairs
        .iter()
        .filter(|p| p.label == 1)
        .map(|p| DuplicateEdge {
            post_id: p.id_b,
            related_post_id: p.id_a,
        })
        .collect();
    let pairs = split_dataset(pairs, &SplitSpec::new(ratios, seed)?)?;
    Ok(TemplateTask {
        questions,
        pairs,
        edges,
    })
}

/// Writes `questions.jsonl`, `pairs.jsonl` and `edges.jsonl` into `dir`.
pub fn write_template_task(dir: &Path, task: &TemplateTask) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join("questions.jsonl"), &task.questions)?;
    write_pairs(&dir.join("pairs.jsonl"), &task.pairs)?;
    write_jsonl(&dir.join("edges.jsonl"), &task.edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairgen::Split;
    use std::collections::HashMap;

    fn balanced(s: &str) -> bool {
        let mut stack = Vec::new();
        for ch in s.chars() {
            match ch {
                '(' | '[' | '{' => stack.push(ch),
                ')' | ']' | '}' => {
                    let want = match ch {
                        ')' => '(',
                        ']' => '[',
                        _ => '{',
                    };
                    if stack.pop() != Some(want) {
                        return false;
                    }
                }
                _ => return false,
            }
        }
        stack.is_empty()
    }

    #[test]
    fn brackets_balanced_and_reproducible() {
        let a = bracket_strings(100, 4);
        assert_eq!(a.len(), 100);
        assert!(a.iter().all(|s| balanced(s)), "{a:?}");
        assert_eq!(a, bracket_strings(100, 4));
        assert_ne!(a, bracket_strings(100, 5));
        let dir = tempfile::tempdir().unwrap();
        let (p, q) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
        write_brackets(&p, &a).unwrap();
        write_brackets(&q, &bracket_strings(100, 4)).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn closures() {
        assert_eq!(closure_positions("([]){}"), vec![(2, ']'), (3, ')'), (5, '}')]);
        assert!(closure_positions("").is_empty());
    }

    #[test]
    fn template_counts_and_structure() {
        let t = template_task(200, 1, [0.8, 0.1, 0.1]).unwrap();
        assert_eq!(t.pairs.iter().filter(|p| p.label == 1).count(), 100);
        assert_eq!(t.pairs.iter().filter(|p| p.label == 0).count(), 100);
        assert_eq!(t.edges.len(), 100);
        assert_eq!(t.questions.len(), 400);
        let mut seen: HashMap<u64, usize> = HashMap::new();
        for p in &t.pairs {
            *seen.entry(p.id_a).or_default() += 1;
            *seen.entry(p.id_b).or_default() += 1;
        }
        assert!(seen.values().all(|&c| c == 1));
        let by_id: HashMap<u64, &Question> = t.questions.iter().map(|q| (q.id, q)).collect();
        for p in t.pairs.iter().filter(|p| p.label == 0) {
            assert!(by_id[&p.id_a].tags.intersection(&by_id[&p.id_b].tags).count() >= 1);
        }
        let counts = Split::ALL.map(|s| t.pairs.iter().filter(|p| p.split == Some(s)).count());
        assert_eq!(counts, [160, 20, 20]);
        assert_eq!(t, template_task(200, 1, [0.8, 0.1, 0.1]).unwrap());
    }
}
