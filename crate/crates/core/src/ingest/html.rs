//! Splitting a post body into prose and code blocks.

/// Block-level elements whose boundaries separate words.
const BLOCK_TAGS: &[&str] = &[
    "p", "div", "br", "li", "ul", "ol", "pre", "blockquote", "h1", "h2", "h3", "h4", "h5", "h6",
    "hr", "tr", "td", "th", "table", "dd", "dt", "dl",
];

struct Tag<'a> {
    name: &'a str,
    closing: bool,
}

/// Parses the tag starting at `s[0] == '<'`. Returns the tag and its byte
/// length, or `None` if the `<` does not open element syntax.
fn parse_tag(s: &str) -> Option<(Option<Tag<'_>>, usize)> {
    let rest = &s[1..];
    if rest.starts_with("!--") {
        let len = rest.find("-->").map(|e| e + 4).unwrap_or(s.len());
        return Some((None, len.min(s.len())));
    }
    let first = rest.chars().next()?;
    if !(first.is_ascii_alphabetic() || first == '/' || first == '!' || first == '?') {
        return None;
    }
    // unclosed tags swallow the rest of the body
    let len = rest.find('>').map(|e| e + 2).unwrap_or(s.len());
    let inner = &s[1..len.saturating_sub(1).max(1)];
    let closing = inner.starts_with('/');
    let name_start = if closing { 1 } else { 0 };
    let name_end = inner[name_start..]
        .find(|c: char| !c.is_ascii_alphanumeric())
        .map(|e| e + name_start)
        .unwrap_or(inner.len());
    Some((
        Some(Tag {
            name: &inner[name_start..name_end],
            closing,
        }),
        len,
    ))
}

fn decode(text: &str) -> String {
    html_escape::decode_html_entities(text).into_owned()
}

fn collapse_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits `body_html` into tag-stripped, entity-decoded prose and the raw
/// contents of `<pre><code>` blocks, in document order. Inline `<code>`
/// outside `<pre>` stays in the prose as literal text.
pub fn extract_code_blocks(body_html: &str) -> (String, Vec<String>) {
    let mut prose = String::new();
    let mut snippets = Vec::new();
    let mut pre_buf: Option<String> = None;
    let mut pre_has_code = false;
    let mut text_start = 0;
    let mut i = 0;

    let flush = |from: usize, to: usize, prose: &mut String, pre: &mut Option<String>| {
        if from < to {
            match pre {
                Some(buf) => buf.push_str(&body_html[from..to]),
                None => prose.push_str(&body_html[from..to]),
            }
        }
    };

    while let Some(off) = body_html[i..].find('<') {
        let at = i + off;
        match parse_tag(&body_html[at..]) {
            None => {
                // a literal '<' that does not open a tag; keep it as text
                i = at + 1;
            }
            Some((tag, len)) => {
                flush(text_start, at, &mut prose, &mut pre_buf);
                i = at + len;
                text_start = i;
                let Some(tag) = tag else { continue };
                let name = tag.name.to_ascii_lowercase();
                match (name.as_str(), tag.closing, pre_buf.is_some()) {
                    ("pre", false, false) => {
                        pre_buf = Some(String::new());
                        pre_has_code = false;
                        prose.push(' ');
                    }
                    ("pre", true, true) => {
                        let buf = pre_buf.take().unwrap_or_default();
                        if pre_has_code {
                            snippets.push(clean_snippet(&buf));
                        } else {
                            prose.push_str(&buf);
                        }
                        prose.push(' ');
                    }
                    ("code", false, true) => pre_has_code = true,
                    (n, _, false) if BLOCK_TAGS.contains(&n) => prose.push(' '),
                    _ => {}
                }
            }
        }
    }
    flush(text_start, body_html.len(), &mut prose, &mut pre_buf);
    if let Some(buf) = pre_buf {
        // <pre> never closed
        if pre_has_code {
            snippets.push(clean_snippet(&buf));
        } else {
            prose.push_str(&buf);
        }
    }
    // a literal '<' left in prose must come from malformed markup; the
    // decoded text below can still contain '<' from entities
    let prose = prose.replace('<', " ");
    (collapse_ws(&decode(&prose)), snippets)
}

fn clean_snippet(raw: &str) -> String {
    let decoded = decode(raw);
    decoded.trim_start_matches(['\n', '\r']).trim_end().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_paragraph() {
        assert_eq!(extract_code_blocks("<p>hi</p>"), ("hi".to_string(), vec![]));
    }

    #[test]
    fn code_block_removed_from_prose() {
        assert_eq!(
            extract_code_blocks("<p>err</p><pre><code>x=1</code></pre>"),
            ("err".to_string(), vec!["x=1".to_string()])
        );
    }

    #[test]
    fn two_blocks_and_inline_code() {
        let body = "<p>Calling <code>foo()</code> fails:</p>\n\
                    <pre><code>def foo():\n    return 1 &lt; 2\n</code></pre>\n\
                    <p>and then</p><pre class=\"lang-py\"><code>foo()\n</code></pre>";
        let (text, snippets) = extract_code_blocks(body);
        assert_eq!(text, "Calling foo() fails: and then");
        assert_eq!(snippets, vec!["def foo():\n    return 1 < 2", "foo()"]);
    }

    #[test]
    fn entities_decoded_and_block_spacing() {
        let (text, _) = extract_code_blocks("<p>a &amp; b</p><p>x &lt;y&gt;</p>line<br/>next");
        assert_eq!(text, "a & b x <y> line next");
    }

    #[test]
    fn pre_without_code_is_prose() {
        let (text, snippets) = extract_code_blocks("<pre>Traceback here</pre>");
        assert_eq!(text, "Traceback here");
        assert!(snippets.is_empty());
    }

    #[test]
    fn malformed_markup_is_survivable() {
        let (text, snippets) = extract_code_blocks("<p>a < b</p><pre><code>x");
        assert_eq!(text, "a b");
        assert_eq!(snippets, vec!["x"]);
        let (text, _) = extract_code_blocks("<p>open <a href=\"x\"");
        assert_eq!(text, "open");
        let (text, _) = extract_code_blocks("<!-- hidden --><p>shown</p>");
        assert_eq!(text, "shown");
    }
}
