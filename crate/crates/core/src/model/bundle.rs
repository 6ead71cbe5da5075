//! Tensor-bundle files: JSON Lines, one header record then one record per
//! text, carrying the embedding and optionally the token log-probabilities
//! and the full attention tensor.
//!
//! `token_logprobs[i]` is `log P(tokens[i + 1] | tokens[..=i])`, so the
//! array has `len(tokens) - 1` entries.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendCapabilities, TOKENIZER_NAME};
use crate::error::{Error, Result};
use crate::types::{AttentionTensor, ContinuationScore, EmbeddingVector, Text};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub kind: String,
    pub version: u32,
    pub dim: usize,
    pub tokenizer: String,
    pub model_id: String,
}

impl BundleHeader {
    pub fn new(dim: usize, tokenizer: impl Into<String>, model_id: impl Into<String>) -> Self {
        BundleHeader {
            kind: "header".into(),
            version: BUNDLE_VERSION,
            dim,
            tokenizer: tokenizer.into(),
            model_id: model_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleItem {
    pub kind: String,
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<Vec<Vec<Vec<f64>>>>>,
}

impl BundleItem {
    pub fn new(id: impl Into<String>, text: &Text, embedding: &EmbeddingVector) -> Self {
        BundleItem {
            kind: "item".into(),
            id: id.into(),
            text: text.raw().to_string(),
            tokens: text.tokens().to_vec(),
            embedding: embedding.values().to_vec(),
            token_logprobs: None,
            attention: None,
        }
    }
}

/// Writes a bundle file. Floats are written in shortest round-trip form.
pub fn write_bundle(path: &Path, header: &BundleHeader, items: &[BundleItem]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let json = |e: serde_json::Error| Error::Format(e.to_string());
    serde_json::to_writer(&mut w, header).map_err(json)?;
    w.write_all(b"\n").map_err(io)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(json)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone)]
struct Entry {
    token_count: usize,
    embedding: EmbeddingVector,
    token_logprobs: Option<Vec<f64>>,
    attention: Option<AttentionTensor>,
}

/// Read-only backend answering from a tensor bundle.
///
/// Texts are looked up by exact raw string. Attention override is never
/// supported.
#[derive(Debug, Clone)]
pub struct BundleBackend {
    header: BundleHeader,
    entries: Vec<Entry>,
    by_id: HashMap<String, usize>,
    by_text: HashMap<String, usize>,
    caps: BackendCapabilities,
}

impl BundleBackend {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();

        let header: BundleHeader = loop {
            match lines.next() {
                None => return Err(Error::Format("bundle has no header line".into())),
                Some((_, line)) => {
                    let line = line.map_err(|e| Error::io(path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| Error::Format(format!("bad header: {e}")))?;
                }
            }
        };
        if header.kind != "header" {
            return Err(Error::Format(format!(
                "first record has kind {:?}, expected \"header\"",
                header.kind
            )));
        }
        if header.version != BUNDLE_VERSION {
            return Err(Error::Format(format!("unsupported version {}", header.version)));
        }
        if header.dim == 0 {
            return Err(Error::Format("header dim is 0".into()));
        }

        let mut items = Vec::new();
        for (lineno, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let item: BundleItem =
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
            items.push(item);
        }
        Self::from_items(header, items)
    }

    pub fn from_items(header: BundleHeader, items: Vec<BundleItem>) -> Result<Self> {
        let mut entries = Vec::with_capacity(items.len());
        let mut by_id = HashMap::new();
        let mut by_text = HashMap::new();
        let mut caps = BackendCapabilities {
            has_attention: true,
            has_override: false,
            has_logprobs: true,
        };

        for item in items {
            let bad = |msg: String| Error::Format(format!("item {:?}: {msg}", item.id));
            if item.kind != "item" {
                return Err(bad(format!("kind {:?}, expected \"item\"", item.kind)));
            }
            if item.embedding.len() != header.dim {
                return Err(bad(format!(
                    "embedding length {} but header dim {}",
                    item.embedding.len(),
                    header.dim
                )));
            }
            if item.tokens.is_empty() {
                return Err(bad("no tokens".into()));
            }
            let embedding = EmbeddingVector::new(item.embedding.clone()).map_err(|e| bad(e.to_string()))?;
            if let Some(lp) = &item.token_logprobs {
                if lp.len() + 1 != item.tokens.len() {
                    return Err(bad(format!(
                        "{} token_logprobs for {} tokens",
                        lp.len(),
                        item.tokens.len()
                    )));
                }
                if lp.iter().any(|v| v.is_nan() || *v > 0.0) {
                    return Err(bad("token_logprobs must be <= 0".into()));
                }
            }
            let attention = match item.attention.clone() {
                None => None,
                Some(nested) => {
                    let t = AttentionTensor::from_nested(nested).map_err(|e| bad(e.to_string()))?;
                    if t.n() != item.tokens.len() {
                        return Err(bad(format!(
                            "attention is {}x{} but item has {} tokens",
                            t.n(),
                            t.n(),
                            item.tokens.len()
                        )));
                    }
                    Some(t)
                }
            };
            caps.has_attention &= attention.is_some();
            caps.has_logprobs &= item.token_logprobs.is_some();

            let idx = entries.len();
            if by_id.insert(item.id.clone(), idx).is_some() {
                return Err(bad("duplicate id".into()));
            }
            by_text.entry(item.text).or_insert(idx);
            entries.push(Entry {
                token_count: item.tokens.len(),
                embedding,
                token_logprobs: item.token_logprobs,
                attention,
            });
        }
        if entries.is_empty() {
            caps.has_attention = false;
            caps.has_logprobs = false;
        }
        Ok(BundleBackend {
            header,
            entries,
            by_id,
            by_text,
            caps,
        })
    }

    pub fn header(&self) -> &BundleHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn embed_id(&self, id: &str) -> Result<EmbeddingVector> {
        self.by_id
            .get(id)
            .map(|&i| self.entries[i].embedding.clone())
            .ok_or_else(|| Error::NotFound(format!("bundle has no item with id {id:?}")))
    }

    fn entry(&self, raw: &str) -> Result<&Entry> {
        self.by_text
            .get(raw)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::NotFound(format!("bundle has no item with text {raw:?}")))
    }
}

impl Backend for BundleBackend {
    fn capabilities(&self) -> BackendCapabilities {
        self.caps
    }

    fn dim(&self) -> usize {
        self.header.dim
    }

    fn embed(&self, text: &Text) -> Result<EmbeddingVector> {
        Ok(self.entry(text.raw())?.embedding.clone())
    }

    /// Looks up the item whose text is `"{prompt} {continuation}"` and takes
    /// its trailing log-probabilities, one per continuation token. For bundles
    /// exported with a foreign tokenizer the continuation length is the
    /// difference between the joined item's and the prompt item's token
    /// counts, so the prompt must be in the bundle too.
    fn continuation_probability(&self, prompt: &Text, continuation: &Text) -> Result<ContinuationScore> {
        if !self.caps.has_logprobs {
            return Err(Error::Unsupported("continuation log-probabilities"));
        }
        let joined = format!("{} {}", prompt.raw(), continuation.raw());
        let entry = self.entry(&joined)?;
        let lp = entry
            .token_logprobs
            .as_ref()
            .expect("has_logprobs implies every item carries logprobs");
        let k = if self.header.tokenizer == TOKENIZER_NAME {
            continuation.token_count()
        } else {
            let n_prompt = self.entry(prompt.raw())?.token_count;
            entry
                .token_count
                .checked_sub(n_prompt)
                .filter(|&k| k > 0)
                .ok_or_else(|| {
                    Error::InconsistentInputs(format!("item {joined:?} is not longer than its prompt item"))
                })?
        };
        if k > lp.len() {
            return Err(Error::InconsistentInputs(format!(
                "continuation has {k} tokens but item {joined:?} scores only {}",
                lp.len()
            )));
        }
        ContinuationScore::new(prompt.clone(), continuation.clone(), lp[lp.len() - k..].to_vec())
    }

    fn attentions(&self, text: &Text) -> Result<AttentionTensor> {
        if !self.caps.has_attention {
            return Err(Error::Unsupported("attention extraction"));
        }
        Ok(self
            .entry(text.raw())?
            .attention
            .clone()
            .expect("has_attention implies every item carries attention"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tokenize;

    fn item(id: &str, text: &str, dim: usize) -> BundleItem {
        let t = tokenize(text).unwrap();
        BundleItem::new(id, &t, &EmbeddingVector::new(vec![0.5; dim]).unwrap())
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn dimension_mismatch_is_format_error() {
        let header = BundleHeader::new(32, "ws-v1", "test");
        let r = BundleBackend::from_items(header, vec![item("t001", "a b", 31)]);
        assert!(matches!(r, Err(Error::Format(_))));
    }

    #[test]
    fn lookups_by_id() {
        let header = BundleHeader::new(4, "ws-v1", "test");
        let items = vec![item("a", "one", 4), item("b", "two", 4), item("c", "three", 4)];
        let b = BundleBackend::from_items(header, items).unwrap();
        for id in ["a", "b", "c"] {
            assert!(b.embed_id(id).is_ok());
        }
        assert!(matches!(b.embed_id("d"), Err(Error::NotFound(_))));
        assert!(!b.capabilities().has_attention);
        assert!(!b.capabilities().has_override);
        assert!(matches!(
            b.attentions(&tokenize("one").unwrap()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn garbled_header() {
        let f = write_lines(&["not json".into()]);
        assert!(matches!(BundleBackend::load(f.path()), Err(Error::Format(_))));
        let f = write_lines(&[r#"{"kind":"item","version":1,"dim":2,"tokenizer":"ws-v1","model_id":"m"}"#.into()]);
        assert!(matches!(BundleBackend::load(f.path()), Err(Error::Format(_))));
        let f = write_lines(&[]);
        assert!(matches!(BundleBackend::load(f.path()), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_fields_ignored_and_any_number_accepted() {
        let f = write_lines(&[
            r#"{"kind":"header","version":1,"dim":2,"tokenizer":"ws-v1","model_id":"m","extra":true}"#.into(),
            r#"{"kind":"item","id":"x","text":"hi there","tokens":["hi","there"],"embedding":[1,2.5e-1],"token_logprobs":[-1],"note":"ok"}"#.into(),
        ]);
        let b = BundleBackend::load(f.path()).unwrap();
        assert_eq!(b.embed_id("x").unwrap().values(), &[1.0, 0.25]);
        assert!(b.capabilities().has_logprobs);
    }

    #[test]
    fn attention_shape_must_match_tokens() {
        let header = BundleHeader::new(2, "ws-v1", "m");
        let mut it = item("x", "a b c", 2);
        it.attention = Some(vec![vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]]]);
        assert!(matches!(
            BundleBackend::from_items(header.clone(), vec![it.clone()]),
            Err(Error::Format(_))
        ));
        it.attention = Some(vec![vec![vec![
            vec![1.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.0],
            vec![0.4, 0.4, 0.4],
        ]]]);
        assert!(matches!(
            BundleBackend::from_items(header, vec![it]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn continuation_from_joined_item() {
        let header = BundleHeader::new(1, "ws-v1", "m");
        let mut it = item("x", "the nurse said yes", 1);
        it.token_logprobs = Some(vec![-0.1, -0.2, -0.3]);
        let b = BundleBackend::from_items(header, vec![it]).unwrap();
        let s = b
            .continuation_probability(&tokenize("the nurse said").unwrap(), &tokenize("yes").unwrap())
            .unwrap();
        assert_eq!(s.token_logprobs, vec![-0.3]);
        assert!(matches!(
            b.continuation_probability(&tokenize("a").unwrap(), &tokenize("b").unwrap()),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn foreign_tokenizer_counts_continuation_from_items() {
        let header = BundleHeader::new(1, "gpt2", "m");
        let mut prompt = item("p", "the nurse said", 1);
        prompt.tokens = vec!["the".into(), "Ġnurse".into()];
        prompt.token_logprobs = Some(vec![-0.5]);
        let mut joined = item("j", "the nurse said yes", 1);
        joined.tokens = vec!["the".into(), "Ġnurse".into(), "Ġsaid".into(), "Ġyes".into(), ".".into()];
        joined.token_logprobs = Some(vec![-0.1, -0.2, -0.3, -0.4]);
        let b = BundleBackend::from_items(header, vec![prompt, joined]).unwrap();
        let s = b
            .continuation_probability(&tokenize("the nurse said").unwrap(), &tokenize("yes").unwrap())
            .unwrap();
        assert_eq!(s.token_logprobs, vec![-0.2, -0.3, -0.4]);
    }
}
