//! Row-level parsing of Stack Exchange dump files (`Posts.xml`,
//! `PostLinks.xml`). Each `<row .../>` element sits on its own line, so the
//! files are streamed line by line and a bad row never poisons the rest.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use super::html::extract_code_blocks;
use super::Question;
use crate::codeprep::{CodeSnippet, Lang};
use crate::error::{Error, Result};

/// Link type the dump uses for "duplicate of".
pub const DUPLICATE_LINK_TYPE: u32 = 3;

/// Attributes of one `<row/>` element, or `None` if it is malformed.
fn row_attributes(line: &str) -> Option<HashMap<String, String>> {
    let mut reader = Reader::from_str(line.trim());
    match reader.read_event() {
        Ok(Event::Empty(e)) if e.name().as_ref() == b"row" => {
            let mut attrs = HashMap::new();
            for a in e.attributes() {
                let a = a.ok()?;
                let key = std::str::from_utf8(a.key.as_ref()).ok()?.to_string();
                let value = a.unescape_value().ok()?.into_owned();
                attrs.insert(key, value);
            }
            Some(attrs)
        }
        _ => None,
    }
}

fn is_row(line: &str) -> bool {
    line.trim_start().starts_with("<row")
}

/// Parses the dump's tag syntax: `<python><pandas>` or `|python|pandas|`.
pub fn parse_tags(raw: &str) -> BTreeSet<String> {
    raw.split(['<', '>', '|'])
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostStats {
    pub rows: usize,
    pub questions: usize,
    /// Well-formed rows that are not questions (answers, wiki posts, ...).
    pub non_questions: usize,
    pub malformed: usize,
    pub duplicate_ids: usize,
}

impl PostStats {
    pub fn skipped(&self) -> usize {
        self.malformed + self.duplicate_ids
    }
}

enum PostRow {
    Question(Question),
    Other,
}

fn parse_post_row(line: &str) -> Option<PostRow> {
    let attrs = row_attributes(line)?;
    let id: u64 = attrs.get("Id")?.trim().parse().ok().filter(|&id| id > 0)?;
    let kind: u32 = attrs.get("PostTypeId")?.trim().parse().ok()?;
    if kind != 1 {
        return Some(PostRow::Other);
    }
    let title = attrs.get("Title")?.trim().to_string();
    if title.is_empty() {
        return None;
    }
    let tags = attrs.get("Tags").map(|t| parse_tags(t)).unwrap_or_default();
    let lang = Lang::from_tags(tags.iter().map(String::as_str));
    let (body, blocks) = extract_code_blocks(attrs.get("Body").map_or("", String::as_str));
    Some(PostRow::Question(Question {
        id,
        title,
        body_text: body,
        code_snippets: blocks
            .into_iter()
            .map(|raw| CodeSnippet::new(raw, lang))
            .collect(),
        tags,
    }))
}

/// Streams questions out of a Posts dump.
pub struct PostReader<R> {
    lines: std::io::Lines<R>,
    seen: HashSet<u64>,
    pub stats: PostStats,
}

impl<R: BufRead> PostReader<R> {
    pub fn new(reader: R) -> Self {
        PostReader {
            lines: reader.lines(),
            seen: HashSet::new(),
            stats: PostStats::default(),
        }
    }
}

impl<R: BufRead> Iterator for PostReader<R> {
    type Item = Result<Question>;

    fn next(&mut self) -> Option<Result<Question>> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                    // undecodable bytes inside a row
                    self.stats.rows += 1;
                    self.stats.malformed += 1;
                    continue;
                }
                Err(e) => return Some(Err(Error::io("<posts>", e))),
            };
            if !is_row(&line) {
                continue;
            }
            self.stats.rows += 1;
            match parse_post_row(&line) {
                None => self.stats.malformed += 1,
                Some(PostRow::Other) => self.stats.non_questions += 1,
                Some(PostRow::Question(q)) => {
                    if !self.seen.insert(q.id) {
                        self.stats.duplicate_ids += 1;
                        continue;
                    }
                    self.stats.questions += 1;
                    return Some(Ok(q));
                }
            }
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Questions (`PostTypeId = 1`) of a Posts dump, in file order.
pub fn parse_posts(path: &Path) -> Result<(Vec<Question>, PostStats)> {
    let mut reader = PostReader::new(open(path)?);
    let questions = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((questions, reader.stats))
}

/// A "duplicate of" link between two questions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DuplicateEdge {
    pub post_id: u64,
    pub related_post_id: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub rows: usize,
    pub duplicates: usize,
    pub other_links: usize,
    pub malformed: usize,
}

fn parse_link_row(line: &str) -> Option<Option<DuplicateEdge>> {
    let attrs = row_attributes(line)?;
    let post_id: u64 = attrs.get("PostId")?.trim().parse().ok()?;
    let related: u64 = attrs.get("RelatedPostId")?.trim().parse().ok()?;
    let kind: u32 = attrs.get("LinkTypeId")?.trim().parse().ok()?;
    if kind != DUPLICATE_LINK_TYPE {
        return Some(None);
    }
    if post_id == related {
        return None;
    }
    Some(Some(DuplicateEdge {
        post_id,
        related_post_id: related,
    }))
}

pub fn parse_postlinks_reader<R: BufRead>(reader: R) -> Result<(Vec<DuplicateEdge>, LinkStats)> {
    let mut stats = LinkStats::default();
    let mut edges = Vec::new();
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                stats.rows += 1;
                stats.malformed += 1;
                continue;
            }
            Err(e) => return Err(Error::io("<postlinks>", e)),
        };
        if !is_row(&line) {
            continue;
        }
        stats.rows += 1;
        match parse_link_row(&line) {
            None => stats.malformed += 1,
            Some(None) => stats.other_links += 1,
            Some(Some(edge)) => {
                stats.duplicates += 1;
                edges.push(edge);
            }
        }
    }
    Ok((edges, stats))
}

/// Duplicate edges (`LinkTypeId = 3`) of a PostLinks dump, in file order.
pub fn parse_postlinks(path: &Path) -> Result<(Vec<DuplicateEdge>, LinkStats)> {
    parse_postlinks_reader(open(path)?)
}
