/// Character vocabulary: the 95 printable ASCII characters plus three
/// reserved entries. Indices are fixed, so the vocabulary needs no storage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CharVocab;

impl CharVocab {
    pub const UNK: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    const FIRST_PRINTABLE: u8 = b' ';
    const LAST_PRINTABLE: u8 = b'~';
    const RESERVED: usize = 3;
    pub const SIZE: usize = Self::RESERVED + (Self::LAST_PRINTABLE - Self::FIRST_PRINTABLE) as usize + 1;

    pub fn len(&self) -> usize {
        Self::SIZE
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        match u8::try_from(c) {
            Ok(b) if (Self::FIRST_PRINTABLE..=Self::LAST_PRINTABLE).contains(&b) => {
                Self::RESERVED + (b - Self::FIRST_PRINTABLE) as usize
            }
            _ => Self::UNK,
        }
    }

    /// Printable character for `id`; `None` for reserved or out-of-range ids.
    pub fn char_of(&self, id: usize) -> Option<char> {
        if (Self::RESERVED..Self::SIZE).contains(&id) {
            Some((Self::FIRST_PRINTABLE + (id - Self::RESERVED) as u8) as char)
        } else {
            None
        }
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// `<bos> text <eos>`.
    pub fn stream(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::with_capacity(text.len() + 2);
        ids.push(Self::BOS);
        ids.extend(text.chars().map(|c| self.id(c)));
        ids.push(Self::EOS);
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_reversible() {
        let v = CharVocab;
        assert_eq!(v.len(), 98);
        for id in CharVocab::RESERVED..v.len() {
            assert_eq!(v.id(v.char_of(id).unwrap()), id);
        }
        assert_eq!(v.char_of(CharVocab::BOS), None);
        assert_eq!(v.id('é'), CharVocab::UNK);
        assert_eq!(v.id('\n'), CharVocab::UNK);
        assert_eq!(v.stream("ab"), vec![1, v.id('a'), v.id('b'), 2]);
    }
}
