//! Fixed token vocabulary shared by the problem generator, the model and the
//! mini-language lexer.

use std::collections::HashMap;
use std::sync::OnceLock;

pub type TokenId = u32;

const TOKENS: &[&str] = &[
    "<bos>", "<eos>", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "x", "+", "-", "*", "(",
    ")", "=", ";", ",", ":", "assert", "def", "return", "task", "carefully", "hastily", "start",
    "with", "add", "subtract", "multiply", "by", "then", "f", "g", "h", "k", "the", "a", "of",
    "and", "is", "to", "in", "it", "that", "for", "on", "list", "string", "number", "value",
    "sum", "count", "print", "if", "else", "while", "import", "class", "self", "none",
];

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const FUNCTION_NAMES: [&str; 4] = ["f", "g", "h", "k"];

/// The vocabulary as an ordered list; index is token id.
pub fn tokens() -> &'static [&'static str] {
    TOKENS
}

pub fn vocab_size() -> usize {
    TOKENS.len()
}

fn index() -> &'static HashMap<&'static str, TokenId> {
    static INDEX: OnceLock<HashMap<&'static str, TokenId>> = OnceLock::new();
    INDEX.get_or_init(|| {
        TOKENS
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, i as TokenId))
            .collect()
    })
}

pub fn id(token: &str) -> Option<TokenId> {
    index().get(token).copied()
}

/// Looks up a token that is known to be in the vocabulary.
pub(crate) fn tok(token: &str) -> TokenId {
    id(token).unwrap_or_else(|| panic!("token {token:?} missing from vocabulary"))
}

pub fn text(id: TokenId) -> Option<&'static str> {
    TOKENS.get(id as usize).copied()
}

pub fn digit(d: u8) -> TokenId {
    debug_assert!(d < 10);
    tok("0") + u32::from(d)
}

/// Renders a token sequence as space-separated text.
pub fn render(ids: &[TokenId]) -> String {
    ids.iter()
        .map(|&i| text(i).unwrap_or("<unk>"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Tokenizes an integer as an optional minus sign followed by one token per digit.
pub fn integer_tokens(value: i64) -> Vec<TokenId> {
    let mut out = Vec::new();
    if value < 0 {
        out.push(tok("-"));
    }
    out.extend(
        value
            .unsigned_abs()
            .to_string()
            .bytes()
            .map(|b| digit(b - b'0')),
    );
    out
}

/// Vocabulary as a JSON array of strings, index = token id.
pub fn to_json() -> String {
    serde_json::to_string(TOKENS).expect("string array serializes")
}
