//! Best-effort lexer for code snippets. Never fails: bytes it cannot place
//! in any token class are grouped into runs and emitted as unknown tokens.

use super::Lang;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Op,
    /// One of the normalization placeholders (`<num>`, `<str>`, `<unk>`).
    Placeholder,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
}

pub const NUM: &str = "<num>";
pub const STR: &str = "<str>";
pub const UNK: &str = "<unk>";
const PLACEHOLDERS: [&str; 3] = [NUM, STR, UNK];

// Longest first so that maximal munch is a linear scan.
const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", "**=", "//=", "...", ">>>", "->", "==", "!=", "<=", ">=", "&&", "||",
    "++", "--", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "<<", ">>", "**", "//",
    "::", ":=", "+", "-", "*", "/", "%", "=", "<", ">", "!", "&", "|", "^", "~", "?", ":", ";",
    ",", ".", "(", ")", "[", "]", "{", "}", "@",
];

const PY_STRING_PREFIXES: &[&str] = &[
    "r", "u", "b", "f", "br", "rb", "fr", "rf", "R", "U", "B", "F", "Br", "bR", "BR", "rB", "Rb",
    "RB", "Fr", "fR", "FR", "rF", "Rf", "RF",
];

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    lang: Lang,
    out: Vec<Token>,
}

impl<'a> Lexer<'a> {
    fn peek(&self, off: usize) -> Option<u8> {
        self.bytes.get(self.pos + off).copied()
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn push(&mut self, kind: TokenKind, start: usize) {
        self.out.push(Token {
            kind,
            text: self.src[start..self.pos].to_string(),
        });
    }

    fn is_ident_start(&self, b: u8) -> bool {
        b.is_ascii_alphabetic() || b == b'_' || (b == b'$' && self.lang != Lang::Python)
    }

    fn is_ident_char(&self, b: u8) -> bool {
        self.is_ident_start(b) || b.is_ascii_digit()
    }

    fn hash_comments(&self) -> bool {
        matches!(self.lang, Lang::Python | Lang::Other)
    }

    fn slash_comments(&self) -> bool {
        matches!(self.lang, Lang::Java | Lang::Other)
    }

    fn skip_to_eol(&mut self) {
        while let Some(b) = self.peek(0) {
            if b == b'\n' {
                break;
            }
            self.pos += 1;
        }
    }

    fn run(mut self) -> Vec<Token> {
        while let Some(b) = self.peek(0) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if (b == b'#' && self.hash_comments())
                || (b == b'/' && self.slash_comments() && self.peek(1) == Some(b'/'))
            {
                self.skip_to_eol();
            } else if b == b'/' && self.slash_comments() && self.peek(1) == Some(b'*') {
                match self.rest()[2..].find("*/") {
                    Some(end) => self.pos += end + 4,
                    None => self.pos = self.bytes.len(),
                }
            } else if b == b'<' && PLACEHOLDERS.iter().any(|p| self.rest().starts_with(p)) {
                let start = self.pos;
                self.pos += 5;
                self.push(TokenKind::Placeholder, start);
            } else if self.is_ident_start(b) {
                self.ident();
            } else if b.is_ascii_digit()
                || (b == b'.' && self.peek(1).is_some_and(|c| c.is_ascii_digit()))
            {
                self.number();
            } else if b == b'"' || b == b'\'' {
                let start = self.pos;
                self.string(start);
            } else if let Some(op) = OPERATORS.iter().find(|op| self.rest().starts_with(**op)) {
                let start = self.pos;
                self.pos += op.len();
                self.push(TokenKind::Op, start);
            } else {
                self.unknown();
            }
        }
        self.out
    }

    fn ident(&mut self) {
        let start = self.pos;
        while self.peek(0).is_some_and(|b| self.is_ident_char(b)) {
            self.pos += 1;
        }
        if self.lang == Lang::Python
            && matches!(self.peek(0), Some(b'"') | Some(b'\''))
            && PY_STRING_PREFIXES.contains(&&self.src[start..self.pos])
        {
            self.string(start);
            return;
        }
        self.push(TokenKind::Ident, start);
    }

    fn number(&mut self) {
        let start = self.pos;
        while let Some(b) = self.peek(0) {
            if b.is_ascii_alphanumeric() || b == b'_' || b == b'.' {
                let is_exp = (b == b'e' || b == b'E')
                    && !self.src[start..self.pos].starts_with("0x")
                    && !self.src[start..self.pos].starts_with("0X");
                self.pos += 1;
                if is_exp && matches!(self.peek(0), Some(b'+') | Some(b'-')) {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        self.push(TokenKind::Number, start);
    }

    /// String literal whose token starts at `start` (which may cover a
    /// prefix) and whose opening quote is at the current position.
    fn string(&mut self, start: usize) {
        let quote = self.bytes[self.pos];
        let triple = self.lang != Lang::Java
            && self.peek(1) == Some(quote)
            && self.peek(2) == Some(quote);
        self.pos += if triple { 3 } else { 1 };
        while let Some(b) = self.peek(0) {
            if b == b'\\' {
                self.pos = (self.pos + 2).min(self.bytes.len());
                continue;
            }
            if triple {
                if b == quote && self.peek(1) == Some(quote) && self.peek(2) == Some(quote) {
                    self.pos += 3;
                    break;
                }
            } else if b == quote {
                self.pos += 1;
                break;
            } else if b == b'\n' {
                break;
            }
            self.pos += 1;
        }
        // an escape right before a multi-byte char could land mid-codepoint
        while !self.src.is_char_boundary(self.pos) {
            self.pos += 1;
        }
        self.push(TokenKind::Str, start);
    }

    fn unknown(&mut self) {
        let start = self.pos;
        loop {
            let c = match self.rest().chars().next() {
                Some(c) => c,
                None => break,
            };
            if self.pos > start && self.starts_token(c) {
                break;
            }
            self.pos += c.len_utf8();
        }
        self.push(TokenKind::Unknown, start);
    }

    fn starts_token(&self, c: char) -> bool {
        if !c.is_ascii() {
            return false;
        }
        let b = c as u8;
        b.is_ascii_whitespace()
            || self.is_ident_start(b)
            || b.is_ascii_digit()
            || b == b'"'
            || b == b'\''
            || (b == b'#' && self.hash_comments())
            || OPERATORS.iter().any(|op| self.rest().starts_with(*op))
    }
}

/// Splits `raw` into identifier, number, string, operator, placeholder and
/// unknown tokens. Whitespace and comments are dropped.
pub fn lex(raw: &str, lang: Lang) -> Vec<Token> {
    Lexer {
        src: raw,
        bytes: raw.as_bytes(),
        pos: 0,
        lang,
        out: Vec::new(),
    }
    .run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(raw: &str, lang: Lang) -> Vec<String> {
        lex(raw, lang).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn simple_assignment() {
        assert_eq!(texts("x=1", Lang::Python), ["x", "=", "1"]);
    }

    #[test]
    fn java_line_comment() {
        assert_eq!(texts("// note\nint a;", Lang::Java), ["int", "a", ";"]);
        assert_eq!(texts("int /* c\n d */ a;", Lang::Java), ["int", "a", ";"]);
        assert_eq!(texts("a /* unterminated", Lang::Java), ["a"]);
    }

    #[test]
    fn string_is_one_token() {
        assert_eq!(texts("s = \"hi there\"", Lang::Python), ["s", "=", "\"hi there\""]);
        assert_eq!(texts("s = f'{x} y'", Lang::Python), ["s", "=", "f'{x} y'"]);
        assert_eq!(texts("'''a\n'b'\n'''", Lang::Python), ["'''a\n'b'\n'''"]);
        assert_eq!(texts("\"a\\\"b\" c", Lang::Java), ["\"a\\\"b\"", "c"]);
        assert_eq!(texts("\"open\nx", Lang::Java), ["\"open", "x"]);
    }

    #[test]
    fn python_floor_division_is_not_a_comment() {
        assert_eq!(texts("a // b # c", Lang::Python), ["a", "//", "b"]);
    }

    #[test]
    fn numbers() {
        assert_eq!(texts("1.5e-3 0x1F 10L .5", Lang::Java), ["1.5e-3", "0x1F", "10L", ".5"]);
    }

    #[test]
    fn operators_maximal_munch() {
        assert_eq!(texts("a>>>=b==c", Lang::Java), ["a", ">>>=", "b", "==", "c"]);
        assert_eq!(texts("x -> y", Lang::Java), ["x", "->", "y"]);
    }

    #[test]
    fn unknown_runs() {
        let toks = lex("a = ¿¿ b `c", Lang::Python);
        let kinds: Vec<_> = toks.iter().map(|t| t.kind).collect();
        assert_eq!(
            kinds,
            [
                TokenKind::Ident,
                TokenKind::Op,
                TokenKind::Unknown,
                TokenKind::Ident,
                TokenKind::Unknown,
                TokenKind::Ident
            ]
        );
        assert_eq!(toks[2].text, "¿¿");
    }

    #[test]
    fn placeholders_relex() {
        assert_eq!(
            lex("<num> <str> <unk>", Lang::Java)
                .iter()
                .map(|t| t.kind)
                .collect::<Vec<_>>(),
            [TokenKind::Placeholder; 3]
        );
    }
}
