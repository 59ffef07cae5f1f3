//! Dialect inventories, grapheme vocabularies and the conditioning modes that
//! make a listen-attend-spell model dialect aware.
//!
//! Three mechanisms are supported and may be combined:
//!
//! * a dialect token in the decoder targets, at the beginning or at the end of
//!   the grapheme sequence ([`OutputToken`]);
//! * a dialect vector (1-hot or learned) appended to the inputs of encoder
//!   and/or decoder layers ([`InputSites`], [`VectorKind`]);
//! * cluster interpolation weights for an encoder CAT branch
//!   ([`ConditioningMode::cat_encoder`]).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialect {
    pub id: usize,
    pub code: String,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialectInventory {
    pub dialects: Vec<Dialect>,
    /// Width of 1-hot dialect vectors. Defaults to `D + 1`; the last slot is
    /// never set.
    pub vector_dim: usize,
}

impl DialectInventory {
    /// Inventory with tokens `<code>` and `vector_dim = D + 1`.
    pub fn new(codes: &[&str]) -> Result<Self> {
        let dialects = codes
            .iter()
            .enumerate()
            .map(|(id, c)| Dialect {
                id,
                code: c.to_string(),
                token: format!("<{c}>"),
            })
            .collect();
        let inv = DialectInventory {
            dialects,
            vector_dim: codes.len() + 1,
        };
        inv.validate()?;
        Ok(inv)
    }

    pub fn with_vector_dim(mut self, dim: usize) -> Result<Self> {
        self.vector_dim = dim;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dialects.is_empty() {
            return Err(Error::validation("dialects", "at least one dialect is required"));
        }
        for (i, d) in self.dialects.iter().enumerate() {
            if d.id != i {
                return Err(Error::validation("dialects", format!("ids must be 0..D in order, found {} at {i}", d.id)));
            }
            if d.code.is_empty() || d.token.is_empty() {
                return Err(Error::validation("dialects", "empty code or token"));
            }
            if self.dialects[..i].iter().any(|o| o.code == d.code || o.token == d.token) {
                return Err(Error::validation("dialects", format!("duplicate dialect {}", d.code)));
            }
        }
        if self.vector_dim < self.dialects.len() {
            return Err(Error::validation("vector_dim", "must be at least the number of dialects"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dialects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialects.is_empty()
    }

    pub fn by_code(&self, code: &str) -> Option<usize> {
        self.dialects.iter().position(|d| d.code == code)
    }

    pub fn code(&self, id: usize) -> &str {
        &self.dialects[id].code
    }

    pub fn token(&self, id: usize) -> &str {
        &self.dialects[id].token
    }

    pub fn check_id(&self, id: usize) -> Result<()> {
        if id < self.len() {
            Ok(())
        } else {
            Err(Error::Index {
                what: "dialect id",
                index: id,
                bound: self.len(),
            })
        }
    }
}

/// Output symbol inventory: graphemes, then `<sos>`, `<eos>`, then one token
/// per dialect when the model predicts dialect tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphemeVocab {
    symbols: Vec<String>,
    index: BTreeMap<String, usize>,
    sos: usize,
    eos: usize,
    /// Token id per dialect id, when present.
    dialect_tokens: Vec<Option<usize>>,
}

impl GraphemeVocab {
    pub fn new(graphemes: &[char], inventory: &DialectInventory, with_dialect_tokens: bool) -> Result<Self> {
        let mut symbols: Vec<String> = graphemes.iter().map(|c| c.to_string()).collect();
        symbols.push(SOS.to_string());
        symbols.push(EOS.to_string());
        if with_dialect_tokens {
            symbols.extend(inventory.dialects.iter().map(|d| d.token.clone()));
        }
        Self::from_symbols(symbols, inventory)
    }

    /// Rebuilds a vocabulary from its serialized symbol list.
    pub fn from_symbols(symbols: Vec<String>, inventory: &DialectInventory) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::validation("vocab", format!("duplicate symbol {s:?}")));
            }
        }
        let sos = *index
            .get(SOS)
            .ok_or_else(|| Error::validation("vocab", "missing <sos>"))?;
        let eos = *index
            .get(EOS)
            .ok_or_else(|| Error::validation("vocab", "missing <eos>"))?;
        let dialect_tokens: Vec<Option<usize>> = inventory
            .dialects
            .iter()
            .map(|d| index.get(&d.token).copied())
            .collect();
        let present = dialect_tokens.iter().filter(|t| t.is_some()).count();
        if present != 0 && present != dialect_tokens.len() {
            return Err(Error::validation("vocab", "dialect tokens must be present for all dialects or none"));
        }
        for s in &symbols {
            let is_special = s == SOS || s == EOS || inventory.dialects.iter().any(|d| &d.token == s);
            if !is_special && s.chars().count() != 1 {
                return Err(Error::validation("vocab", format!("grapheme {s:?} is not a single character")));
            }
        }
        Ok(GraphemeVocab {
            symbols,
            index,
            sos,
            eos,
            dialect_tokens,
        })
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn sos(&self) -> usize {
        self.sos
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn has_dialect_tokens(&self) -> bool {
        self.dialect_tokens.first().is_some_and(Option::is_some)
    }

    pub fn dialect_token(&self, dialect: usize) -> Option<usize> {
        self.dialect_tokens.get(dialect).copied().flatten()
    }

    /// Dialect id for a token id, if it is a dialect token.
    pub fn dialect_of(&self, token: usize) -> Option<usize> {
        self.dialect_tokens.iter().position(|t| *t == Some(token))
    }

    pub fn encode_graphemes(&self, text: &str) -> Result<Vec<usize>> {
        let mut buf = [0u8; 4];
        text.chars()
            .map(|c| {
                let s = c.encode_utf8(&mut buf);
                self.id(s).ok_or_else(|| Error::Vocabulary(s.to_string()))
            })
            .collect()
    }

    /// Concatenates token symbols; control and dialect tokens are included
    /// verbatim.
    pub fn render(&self, tokens: &[usize]) -> String {
        tokens.iter().map(|&t| self.symbol(t)).collect()
    }
}

impl Serialize for GraphemeVocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        self.symbols.serialize(s)
    }
}

/// Where the dialect token goes in the decoder targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputToken {
    #[default]
    None,
    Begin,
    End,
}

/// Layer groups that receive the dialect vector as an extra input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InputSites {
    pub encoder_layers: bool,
    pub decoder_layers: bool,
}

impl InputSites {
    pub const NONE: InputSites = InputSites { encoder_layers: false, decoder_layers: false };
    pub const ENCODER: InputSites = InputSites { encoder_layers: true, decoder_layers: false };
    pub const DECODER: InputSites = InputSites { encoder_layers: false, decoder_layers: true };
    pub const BOTH: InputSites = InputSites { encoder_layers: true, decoder_layers: true };

    pub fn any(self) -> bool {
        self.encoder_layers || self.decoder_layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum VectorKind {
    #[default]
    Onehot,
    Embedding { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConditioningMode {
    pub output_token: OutputToken,
    pub input_vector: InputSites,
    pub vector_kind: VectorKind,
    pub cat_encoder: bool,
}

impl ConditioningMode {
    /// True when the model consumes a dialect id at inference time.
    pub fn uses_dialect_input(&self) -> bool {
        self.input_vector.any() || self.cat_encoder
    }
}

/// The experimental systems S1–S9. S2 shares S1's architecture; it is the
/// per-dialect fine-tuned variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemTag {
    S1,
    S2,
    S3,
    S4,
    S5 { embedding: bool },
    S6 { embedding: bool },
    S7,
    S8 { embedding: bool },
    S9,
}

impl SystemTag {
    /// Expands the tag into its conditioning preset. `embedding_dim` is the
    /// learned-vector width for the `emb` variants.
    pub fn conditioning(self, embedding_dim: usize) -> ConditioningMode {
        let kind = |emb: bool| {
            if emb {
                VectorKind::Embedding { dim: embedding_dim }
            } else {
                VectorKind::Onehot
            }
        };
        let (output_token, input_vector, vector_kind, cat_encoder) = match self {
            SystemTag::S1 | SystemTag::S2 => (OutputToken::None, InputSites::NONE, VectorKind::Onehot, false),
            SystemTag::S3 => (OutputToken::Begin, InputSites::NONE, VectorKind::Onehot, false),
            SystemTag::S4 => (OutputToken::End, InputSites::NONE, VectorKind::Onehot, false),
            SystemTag::S5 { embedding } => (OutputToken::None, InputSites::ENCODER, kind(embedding), false),
            SystemTag::S6 { embedding } => (OutputToken::None, InputSites::DECODER, kind(embedding), false),
            SystemTag::S7 => (OutputToken::None, InputSites::BOTH, VectorKind::Onehot, false),
            SystemTag::S8 { embedding } => (OutputToken::None, InputSites::NONE, kind(embedding), true),
            SystemTag::S9 => (OutputToken::End, InputSites::BOTH, VectorKind::Onehot, false),
        };
        ConditioningMode {
            output_token,
            input_vector,
            vector_kind,
            cat_encoder,
        }
    }
}

impl fmt::Display for SystemTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (n, emb) = match self {
            SystemTag::S1 => ("S1", None),
            SystemTag::S2 => ("S2", None),
            SystemTag::S3 => ("S3", None),
            SystemTag::S4 => ("S4", None),
            SystemTag::S5 { embedding } => ("S5", Some(*embedding)),
            SystemTag::S6 { embedding } => ("S6", Some(*embedding)),
            SystemTag::S7 => ("S7", None),
            SystemTag::S8 { embedding } => ("S8", Some(*embedding)),
            SystemTag::S9 => ("S9", None),
        };
        match emb {
            Some(true) => write!(f, "{n}(emb)"),
            Some(false) => write!(f, "{n}(1hot)"),
            None => f.write_str(n),
        }
    }
}

impl FromStr for SystemTag {
    type Err = Error;

    /// Accepts `S1`..`S9`, optionally suffixed `(1hot)`/`(emb)` (or `-1hot`/
    /// `-emb`) for S5, S6 and S8. A bare S5/S6/S8 means 1-hot.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let (base, suffix) = match t.find(['(', '-']) {
            Some(i) => (&t[..i], t[i..].trim_matches(|c| c == '(' || c == ')' || c == '-')),
            None => (t, ""),
        };
        let emb = match suffix.to_ascii_lowercase().as_str() {
            "" | "1hot" | "onehot" => false,
            "emb" | "embedding" => true,
            _ => return Err(Error::validation("system", format!("unknown variant in {s:?}"))),
        };
        let base = base.to_ascii_uppercase();
        let tag = match base.as_str() {
            "S1" => SystemTag::S1,
            "S2" => SystemTag::S2,
            "S3" => SystemTag::S3,
            "S4" => SystemTag::S4,
            "S5" => SystemTag::S5 { embedding: emb },
            "S6" => SystemTag::S6 { embedding: emb },
            "S7" => SystemTag::S7,
            "S8" => SystemTag::S8 { embedding: emb },
            "S9" => SystemTag::S9,
            _ => return Err(Error::validation("system", format!("unknown system tag {s:?}"))),
        };
        let has_variants = matches!(tag, SystemTag::S5 { .. } | SystemTag::S6 { .. } | SystemTag::S8 { .. });
        if emb && !has_variants {
            return Err(Error::validation("system", format!("{base} has no embedding variant")));
        }
        Ok(tag)
    }
}

/// Decoder targets: `<sos>`, graphemes, `<eos>`, with the dialect token
/// inserted after `<sos>` (`Begin`) or before `<eos>` (`End`).
pub fn augment_targets(vocab: &GraphemeVocab, text: &str, dialect: Option<usize>, mode: OutputToken) -> Result<Vec<usize>> {
    let graphemes = vocab.encode_graphemes(text)?;
    let dtok = match mode {
        OutputToken::None => None,
        OutputToken::Begin | OutputToken::End => {
            let d = dialect.ok_or_else(|| Error::contract("dialect token requested without a dialect"))?;
            Some(vocab.dialect_token(d).ok_or_else(|| Error::Vocabulary(format!("dialect #{d} token")))?)
        }
    };
    let mut out = Vec::with_capacity(graphemes.len() + 3);
    out.push(vocab.sos());
    if mode == OutputToken::Begin {
        out.extend(dtok);
    }
    out.extend(graphemes);
    if mode == OutputToken::End {
        out.extend(dtok);
    }
    out.push(vocab.eos());
    Ok(out)
}

/// Removes control and dialect tokens from a hypothesis. Returns the
/// grapheme string and the last dialect token seen.
pub fn strip_dialect_tokens(vocab: &GraphemeVocab, tokens: &[usize]) -> (String, Option<usize>) {
    let mut text = String::new();
    let mut dialect = None;
    for &t in tokens {
        if t == vocab.sos() || t == vocab.eos() {
            continue;
        }
        if let Some(d) = vocab.dialect_of(t) {
            dialect = Some(d);
            continue;
        }
        text.push_str(vocab.symbol(t));
    }
    (text, dialect)
}

/// Unit basis vector of width `inventory.vector_dim`.
pub fn onehot(inventory: &DialectInventory, dialect: usize) -> Result<Vec<f64>> {
    onehot_width(inventory, dialect, inventory.vector_dim)
}

pub(crate) fn onehot_width(inventory: &DialectInventory, dialect: usize, width: usize) -> Result<Vec<f64>> {
    inventory.check_id(dialect)?;
    if dialect >= width {
        return Err(Error::Index {
            what: "dialect id",
            index: dialect,
            bound: width,
        });
    }
    let mut v = vec![0.0; width];
    v[dialect] = 1.0;
    Ok(v)
}

/// Dialect vector in the graph: a constant 1-hot vector, or the dialect's
/// row of a learned `[D x dim]` table (which then receives gradient).
pub fn dialect_vector(
    g: &mut Graph<'_>,
    dialect: usize,
    kind: VectorKind,
    inventory: &DialectInventory,
    table: Option<Var>,
) -> Result<Var> {
    match kind {
        VectorKind::Onehot => {
            let v = onehot(inventory, dialect)?;
            g.constant(&[v.len()], v)
        }
        VectorKind::Embedding { .. } => {
            inventory.check_id(dialect)?;
            let table = table.ok_or_else(|| Error::contract("embedding dialect vector without a table"))?;
            g.gather(table, dialect)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inv() -> DialectInventory {
        DialectInventory::new(&["en-us", "en-gb", "en-au"]).unwrap()
    }

    fn letters() -> Vec<char> {
        let mut v: Vec<char> = ('a'..='z').collect();
        v.push(' ');
        v.push('\'');
        v
    }

    fn vocab(tokens: bool) -> GraphemeVocab {
        GraphemeVocab::new(&letters(), &inv(), tokens).unwrap()
    }

    fn render(v: &GraphemeVocab, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| v.symbol(i).replace(' ', "␣")).collect()
    }

    #[test]
    fn end_token_placement() {
        let v = vocab(true);
        let ids = augment_targets(&v, "hello world", Some(1), OutputToken::End).unwrap();
        assert_eq!(
            render(&v, &ids).join(" "),
            "<sos> h e l l o ␣ w o r l d <en-gb> <eos>"
        );
    }

    #[test]
    fn begin_token_placement() {
        let v = vocab(true);
        let ids = augment_targets(&v, "hello world", Some(1), OutputToken::Begin).unwrap();
        assert_eq!(
            render(&v, &ids).join(" "),
            "<sos> <en-gb> h e l l o ␣ w o r l d <eos>"
        );
    }

    #[test]
    fn conventional_targets() {
        let v = vocab(false);
        let ids = augment_targets(&v, "hello world", None, OutputToken::None).unwrap();
        assert_eq!(render(&v, &ids).join(" "), "<sos> h e l l o ␣ w o r l d <eos>");
    }

    #[test]
    fn unknown_symbol_is_named() {
        let v = vocab(false);
        assert_eq!(
            augment_targets(&v, "héllo", None, OutputToken::None),
            Err(Error::Vocabulary("é".into()))
        );
        let v = vocab(false);
        assert!(matches!(
            augment_targets(&v, "hello", Some(0), OutputToken::End),
            Err(Error::Vocabulary(_))
        ));
    }

    #[test]
    fn strip_examples() {
        let v = vocab(true);
        let id = |s: &str| v.id(s).unwrap();
        let (t, d) = strip_dialect_tokens(&v, &[v.sos(), id("a"), id("b"), id("<en-us>"), v.eos()]);
        assert_eq!((t.as_str(), d), ("ab", Some(0)));
        let (t, d) = strip_dialect_tokens(&v, &[v.sos(), id("a"), id("b"), v.eos()]);
        assert_eq!((t.as_str(), d), ("ab", None));
        let (t, d) = strip_dialect_tokens(&v, &[v.sos(), id("<en-gb>"), id("a"), v.eos()]);
        assert_eq!((t.as_str(), d), ("a", Some(1)));
    }

    #[test]
    fn onehot_examples() {
        let seven = DialectInventory::new(&["us", "in", "gb", "za", "au", "ng", "ke"]).unwrap();
        assert_eq!(seven.vector_dim, 8);
        assert_eq!(onehot(&seven, 2).unwrap(), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let one = DialectInventory::new(&["x"]).unwrap().with_vector_dim(1).unwrap();
        assert_eq!(onehot(&one, 0).unwrap(), vec![1.0]);
        assert!(matches!(onehot(&seven, 7), Err(Error::Index { .. })));
    }

    #[test]
    fn onehot_vectors_are_orthonormal() {
        let i = inv();
        for a in 0..3 {
            for b in 0..3 {
                let (va, vb) = (onehot(&i, a).unwrap(), onehot(&i, b).unwrap());
                let d: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
                assert_eq!(d, if a == b { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn inventory_validation() {
        assert!(DialectInventory::new(&["a", "a"]).is_err());
        assert!(DialectInventory::new(&[]).is_err());
        assert!(inv().with_vector_dim(2).is_err());
        assert_eq!(inv().by_code("en-au"), Some(2));
    }

    #[test]
    fn vocab_layout() {
        let v = vocab(true);
        assert_eq!(v.len(), 28 + 2 + 3);
        assert!(v.has_dialect_tokens());
        assert_eq!(v.dialect_of(v.dialect_token(2).unwrap()), Some(2));
        let plain = vocab(false);
        assert!(!plain.has_dialect_tokens());
        let rebuilt = GraphemeVocab::from_symbols(v.symbols().to_vec(), &inv()).unwrap();
        assert_eq!(rebuilt, v);
        let mut partial = plain.symbols().to_vec();
        partial.push("<en-us>".into());
        assert!(GraphemeVocab::from_symbols(partial, &inv()).is_err());
    }

    #[test]
    fn system_presets_match_the_grid() {
        use OutputToken as O;
        let c = |t: &str| t.parse::<SystemTag>().unwrap().conditioning(4);
        let oh = VectorKind::Onehot;
        assert_eq!(c("S1"), ConditioningMode { output_token: O::None, input_vector: InputSites::NONE, vector_kind: oh, cat_encoder: false });
        assert_eq!(c("S2"), c("S1"));
        assert_eq!(c("S3").output_token, O::Begin);
        assert_eq!(c("S4").output_token, O::End);
        assert_eq!(c("S5").input_vector, InputSites::ENCODER);
        assert_eq!(c("S5(emb)").vector_kind, VectorKind::Embedding { dim: 4 });
        assert_eq!(c("S6-emb").input_vector, InputSites::DECODER);
        assert_eq!(c("S7"), ConditioningMode { output_token: O::None, input_vector: InputSites::BOTH, vector_kind: oh, cat_encoder: false });
        assert!(c("S8").cat_encoder && !c("S8").input_vector.any());
        assert_eq!(c("S9"), ConditioningMode { output_token: O::End, input_vector: InputSites::BOTH, vector_kind: oh, cat_encoder: false });
        assert!("S10".parse::<SystemTag>().is_err());
        assert!("S7(emb)".parse::<SystemTag>().is_err());
        assert!("S5(foo)".parse::<SystemTag>().is_err());
        for t in ["S1", "S4", "S5(1hot)", "S6(emb)", "S8(emb)", "S9"] {
            assert_eq!(t.parse::<SystemTag>().unwrap().to_string(), t);
        }
    }

    #[test]
    fn embedding_vector_is_a_table_row() {
        let i = inv();
        let t = crate::Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut g = Graph::new();
        let tv = g.leaf(&t);
        let v = dialect_vector(&mut g, 1, VectorKind::Embedding { dim: 2 }, &i, Some(tv)).unwrap();
        assert_eq!(g.value(v), &[3.0, 4.0]);
        assert!(dialect_vector(&mut g, 3, VectorKind::Embedding { dim: 2 }, &i, Some(tv)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn augment_then_strip_round_trips(
            text in "[a-z' ]{0,30}",
            dialect in 0usize..3,
            mode in prop_oneof![Just(OutputToken::None), Just(OutputToken::Begin), Just(OutputToken::End)],
        ) {
            let v = vocab(true);
            let d = (mode != OutputToken::None).then_some(dialect);
            let ids = augment_targets(&v, &text, d, mode).unwrap();
            let extra = if mode == OutputToken::None { 2 } else { 3 };
            prop_assert_eq!(ids.len(), text.chars().count() + extra);
            let (back, got) = strip_dialect_tokens(&v, &ids);
            prop_assert_eq!(back, text);
            prop_assert_eq!(got, d);
        }
    }
}
