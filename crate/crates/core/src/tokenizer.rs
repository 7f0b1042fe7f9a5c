//! Byte-level tokenizer: every byte is its own token id.

use crate::error::{LabError, Result};

pub const BYTE_VOCAB: usize = 256;

pub fn tokenize(text: &[u8]) -> Vec<u32> {
    text.iter().map(|&b| b as u32).collect()
}

pub fn detokenize(tokens: &[u32]) -> Result<Vec<u8>> {
    tokens
        .iter()
        .map(|&t| {
            u8::try_from(t).map_err(|_| LabError::domain(format!("token id {t} is outside the byte vocabulary")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(tokenize(b"AB"), vec![65, 66]);
        assert!(tokenize(b"").is_empty());
        assert!(matches!(detokenize(&[65, 256]), Err(LabError::Domain(_))));
    }

    proptest! {
        #[test]
        fn round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            prop_assert_eq!(detokenize(&tokenize(&bytes)).unwrap(), bytes);
        }
    }
}
