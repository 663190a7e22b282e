//! Byte-level tokenizer: ids 0..=255 are raw bytes, followed by five specials.

use crate::simplex::TokenId;

pub const BOS: TokenId = 256;
/// End of thinking.
pub const EOT: TokenId = 257;
pub const PAD: TokenId = 258;
/// Marks the start of the answer segment in prompts.
pub const ANSWER: TokenId = 259;
pub const RESERVED: TokenId = 260;

pub const VOCAB_SIZE: usize = 261;

const SPECIALS: [(TokenId, &str); 5] =
    [(BOS, "<|bos|>"), (EOT, "<|eot|>"), (PAD, "<|pad|>"), (ANSWER, "<|answer|>"), (RESERVED, "<|reserved|>")];

/// One token per byte; never emits specials.
pub fn tokenize(bytes: impl AsRef<[u8]>) -> Vec<TokenId> {
    bytes.as_ref().iter().map(|b| TokenId::from(*b)).collect()
}

/// Inverse of [`tokenize`]. Specials render as `<|name|>`; ids outside the
/// vocabulary render as `<|id:N|>`.
pub fn detokenize(ids: &[TokenId]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if let Ok(byte) = u8::try_from(id) {
            out.push(byte);
        } else if let Some((_, name)) = SPECIALS.iter().find(|(s, _)| *s == id) {
            out.extend_from_slice(name.as_bytes());
        } else {
            out.extend_from_slice(format!("<|id:{id}|>").as_bytes());
        }
    }
    out
}

/// Lossy UTF-8 rendering of [`detokenize`].
pub fn render(ids: &[TokenId]) -> String {
    String::from_utf8_lossy(&detokenize(ids)).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_and_specials() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("2+2="), vec![50, 43, 50, 61]);
        assert_eq!(render(&[104, 105, EOT, 999]), "hi<|eot|><|id:999|>");
    }

    proptest! {
        #[test]
        fn byte_round_trip(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            prop_assert_eq!(detokenize(&tokenize(&bytes)), bytes);
        }
    }
}
