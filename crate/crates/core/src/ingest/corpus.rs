use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use crate::codeprep::Lang;
use crate::error::{Error, Result};

/// Source files loaded from a local corpus directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CodeCorpus {
    pub paths: Vec<PathBuf>,
    pub texts: Vec<String>,
    /// Matching files that could not be read as UTF-8 text.
    pub skipped: usize,
}

/// Recursively collects files with `lang`'s extension under `dir`, sorted by
/// path so the result does not depend on directory-listing order.
pub fn load_code_corpus(dir: &Path, lang: Lang) -> Result<CodeCorpus> {
    if !dir.is_dir() {
        return Err(Error::Input(format!("{} is not a directory", dir.display())));
    }
    let ext = lang.extension();
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = match entry {
            Ok(e) => e,
            Err(err) => {
                log::warn!("skipping unreadable corpus entry: {err}");
                continue;
            }
        };
        if entry.file_type().is_file()
            && entry.path().extension().and_then(|e| e.to_str()) == Some(ext)
        {
            paths.push(entry.into_path());
        }
    }
    paths.sort();

    let mut corpus = CodeCorpus::default();
    for p in paths {
        match std::fs::read_to_string(&p) {
            Ok(text) => {
                corpus.texts.push(text);
                corpus.paths.push(p);
            }
            Err(err) => {
                log::warn!("skipping {}: {err}", p.display());
                corpus.skipped += 1;
            }
        }
    }
    if corpus.texts.is_empty() {
        log::warn!("no .{ext} files found under {}", dir.display());
    }
    Ok(corpus)
}

/// Splits corpus files into one snippet per non-empty line.
pub fn split_lines(texts: &[String]) -> Vec<String> {
    texts
        .iter()
        .flat_map(|t| t.lines())
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .map(String::from)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn extension_filter_and_sorted_recursion() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("z/inner")).unwrap();
        fs::create_dir_all(root.join("a")).unwrap();
        fs::write(root.join("b.py"), "b").unwrap();
        fs::write(root.join("a.java"), "class A {}").unwrap();
        fs::write(root.join("z/inner/c.py"), "c").unwrap();
        fs::write(root.join("a/d.py"), "d").unwrap();
        fs::write(root.join("a/bad.py"), [0xff, 0xfe, 0x00]).unwrap();

        let py = load_code_corpus(root, Lang::Python).unwrap();
        assert_eq!(py.texts, ["d", "b", "c"]);
        assert_eq!(py.skipped, 1);
        let java = load_code_corpus(root, Lang::Java).unwrap();
        assert_eq!(java.texts, ["class A {}"]);
    }

    #[test]
    fn empty_and_missing_dirs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_code_corpus(dir.path(), Lang::Python).unwrap().texts.is_empty());
        assert!(load_code_corpus(&dir.path().join("nope"), Lang::Python).is_err());
    }

    #[test]
    fn line_split() {
        let t = vec!["a\n\n b \n".to_string(), "c".to_string()];
        assert_eq!(split_lines(&t), ["a", " b", "c"]);
    }
}
