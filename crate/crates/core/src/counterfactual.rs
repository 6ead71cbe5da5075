//! Attribute-swapped control inputs.
//!
//! A template is instantiated once per lexicon term by plain string
//! substitution, then tokenized; the attribute positions are the tokens that
//! overlap the substituted bytes. Nested controls are the cross product of
//! templates and categories, in input order.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tokenize, tokenize_with_spans};
use crate::types::{AttributeCategory, CounterfactualGroup, GroupMember, PromptTemplate, Text};

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon_default.json");
const DEFAULT_TEMPLATES: &str = include_str!("../data/templates_default.json");

/// A set of attribute categories with unique names.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LexiconPack {
    categories: Vec<AttributeCategory>,
    source: String,
}

#[derive(Deserialize)]
struct LexiconFile {
    categories: Vec<AttributeCategory>,
}

#[derive(Deserialize)]
struct TemplateFile {
    templates: Vec<PromptTemplate>,
}

impl LexiconPack {
    pub fn new(categories: Vec<AttributeCategory>, source: impl Into<String>) -> Result<Self> {
        for (i, c) in categories.iter().enumerate() {
            if categories[..i].iter().any(|o| o.name() == c.name()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate category {:?} in lexicon pack",
                    c.name()
                )));
            }
        }
        Ok(LexiconPack {
            categories,
            source: source.into(),
        })
    }

    pub fn from_json(json: &str, source: impl Into<String>) -> Result<Self> {
        let file: LexiconFile = serde_json::from_str(json).map_err(|e| Error::Format(format!("lexicon pack: {e}")))?;
        Self::new(file.categories, source)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json, path.display().to_string())
    }

    /// The bundled pack: gender, profession, religion, race, ten terms each.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_LEXICON, "builtin").expect("bundled lexicon is valid")
    }

    pub fn categories(&self) -> &[AttributeCategory] {
        &self.categories
    }

    pub fn category(&self, name: &str) -> Option<&AttributeCategory> {
        self.categories.iter().find(|c| c.name() == name)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

pub fn templates_from_json(json: &str) -> Result<Vec<PromptTemplate>> {
    let file: TemplateFile = serde_json::from_str(json).map_err(|e| Error::Format(format!("template pack: {e}")))?;
    Ok(file.templates)
}

pub fn load_templates(path: &Path) -> Result<Vec<PromptTemplate>> {
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    templates_from_json(&json).map_err(|e| e.context(path.display().to_string()))
}

pub fn builtin_templates() -> Vec<PromptTemplate> {
    templates_from_json(DEFAULT_TEMPLATES).expect("bundled templates are valid")
}

/// Indices of the tokens whose byte spans intersect `range`.
fn tokens_overlapping(spans: &[Range<usize>], range: &Range<usize>) -> Vec<usize> {
    spans
        .iter()
        .enumerate()
        .filter(|(_, s)| s.start < range.end && range.start < s.end)
        .map(|(i, _)| i)
        .collect()
}

/// Fills `template` with `term`, returning the text and the term's token
/// positions.
pub fn fill_template(template: &PromptTemplate, term: &str) -> Result<(Text, Vec<usize>)> {
    let raw = template.fill(term);
    let start = template.slot_offset();
    let (text, spans) = tokenize_with_spans(&raw)?;
    let positions = tokens_overlapping(&spans, &(start..start + term.len()));
    Ok((text, positions))
}

/// One member per lexicon term, in lexicon order.
pub fn instantiate(template: &PromptTemplate, category: &AttributeCategory) -> Result<CounterfactualGroup> {
    let terms = category.terms();
    if terms.len() < 2 {
        return Err(Error::InsufficientAttributes(terms.len()));
    }
    let members = terms
        .iter()
        .map(|t| {
            let (text, positions) = fill_template(template, &t.term)?;
            Ok(GroupMember {
                term: t.term.clone(),
                text,
                positions,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CounterfactualGroup::new(template.id(), category.name(), members)
}

/// One group per (template, category), templates outermost.
pub fn nested_controls(templates: &[PromptTemplate], pack: &LexiconPack) -> Result<Vec<CounterfactualGroup>> {
    let mut groups = Vec::with_capacity(templates.len() * pack.categories().len());
    for template in templates {
        for category in pack.categories() {
            let group = instantiate(template, category)
                .map_err(|e| e.context(format!("template {:?} x category {:?}", template.id(), category.name())))?;
            groups.push(group);
        }
    }
    Ok(groups)
}

/// Tokenized lexicon terms, longest first; ties keep lexicon order.
fn tokenized_terms(category: &AttributeCategory) -> Vec<(usize, Vec<String>)> {
    let mut terms: Vec<(usize, Vec<String>)> = category
        .terms()
        .iter()
        .enumerate()
        .filter_map(|(i, t)| tokenize(&t.term).ok().map(|tt| (i, tt.tokens().to_vec())))
        .collect();
    terms.sort_by_key(|t| std::cmp::Reverse(t.1.len()));
    terms
}

/// Maximal-munch scan: `(start, len, term index)` of each match, left to right.
fn scan_matches(tokens: &[String], category: &AttributeCategory) -> Vec<(usize, usize, usize)> {
    let terms = tokenized_terms(category);
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let hit = terms
            .iter()
            .find(|(_, tt)| i + tt.len() <= tokens.len() && tokens[i..i + tt.len()] == tt[..]);
        match hit {
            Some((idx, tt)) => {
                out.push((i, tt.len(), *idx));
                i += tt.len();
            }
            None => i += 1,
        }
    }
    out
}

/// Token indices of every lexicon-term occurrence in `text`.
pub fn locate_attribute_positions(text: &Text, category: &AttributeCategory) -> Vec<usize> {
    scan_matches(text.tokens(), category)
        .into_iter()
        .flat_map(|(start, len, _)| start..start + len)
        .collect()
}

/// Byte range of the first token-aligned, case-insensitive occurrence of
/// `term` in `raw`.
pub fn find_term(raw: &str, term: &str) -> Option<Range<usize>> {
    let (text, spans) = tokenize_with_spans(raw).ok()?;
    let needle = tokenize(term).ok()?;
    let k = needle.token_count();
    let tokens = text.tokens();
    (0..=tokens.len().checked_sub(k)?)
        .find(|&i| tokens[i..i + k] == *needle.tokens())
        .map(|i| spans[i].start..spans[i + k - 1].end)
}

/// Turns `raw` into a template by replacing the first occurrence of `term`
/// with the slot marker.
pub fn template_from_text(id: impl Into<String>, raw: &str, term: &str) -> Option<PromptTemplate> {
    let range = find_term(raw, term)?;
    let pattern = format!("{}{}{}", &raw[..range.start], crate::types::SLOT, &raw[range.end..]);
    PromptTemplate::new(id, pattern).ok()
}

/// Replaces the first attribute term found in `text` (categories in pack
/// order) with the next term of the same category, cyclically. Returns
/// `None` when no lexicon term occurs.
pub fn swap_first_attribute(text: &Text, pack: &LexiconPack) -> Result<Option<Text>> {
    let (_, spans) = tokenize_with_spans(text.raw())?;
    for category in pack.categories() {
        if let Some(&(start, len, idx)) = scan_matches(text.tokens(), category).first() {
            let terms = category.terms();
            let replacement = &terms[(idx + 1) % terms.len()].term;
            let range = spans[start].start..spans[start + len - 1].end;
            let raw = format!(
                "{}{}{}",
                &text.raw()[..range.start],
                replacement,
                &text.raw()[range.end..]
            );
            return tokenize(&raw).map(Some);
        }
    }
    Ok(None)
}

/// The same group with `prefix` and a space prepended to every member.
pub fn prefix_group(group: &CounterfactualGroup, prefix: &str) -> Result<CounterfactualGroup> {
    let prefix = prefix.trim();
    let shift = tokenize(prefix)?.token_count();
    let members = group
        .members()
        .iter()
        .map(|m| {
            Ok(GroupMember {
                term: m.term.clone(),
                text: tokenize(&format!("{prefix} {}", m.text.raw()))?,
                positions: m.positions.iter().map(|p| p + shift).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CounterfactualGroup::new(group.template_id(), group.category(), members)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine() -> PromptTemplate {
        PromptTemplate::new("engine", "The {attr} fixed the engine.").unwrap()
    }

    #[test]
    fn direct_substitution() {
        let cat = AttributeCategory::from_terms("gender", &["man", "woman"]).unwrap();
        let g = instantiate(&engine(), &cat).unwrap();
        assert_eq!(g.members().len(), 2);
        for m in g.members() {
            assert_eq!(m.positions, vec![1]);
        }
        assert_eq!(
            g.members()[1].text.tokens(),
            ["the", "woman", "fixed", "the", "engine", "."]
        );
    }

    #[test]
    fn multi_token_term() {
        let cat = AttributeCategory::from_terms("p", &["pilot", "flight attendant"]).unwrap();
        let g = instantiate(&engine(), &cat).unwrap();
        assert_eq!(g.members()[1].positions, vec![1, 2]);
        assert_eq!(g.members()[1].text.token_count(), g.members()[0].text.token_count() + 1);
    }

    #[test]
    fn slot_glued_to_suffix() {
        let t = PromptTemplate::new("x", "Ask the {attr}'s opinion").unwrap();
        let cat = AttributeCategory::from_terms("p", &["nurse", "doctor"]).unwrap();
        let g = instantiate(&t, &cat).unwrap();
        assert_eq!(
            g.members()[0].text.tokens(),
            ["ask", "the", "nurse", "'", "s", "opinion"]
        );
        assert_eq!(g.members()[0].positions, vec![2]);
    }

    #[test]
    fn single_term_rejected() {
        let cat = AttributeCategory::from_terms("g", &["man"]).unwrap();
        assert!(matches!(
            instantiate(&engine(), &cat),
            Err(Error::InsufficientAttributes(1))
        ));
    }

    #[test]
    fn nested_cardinality_and_order() {
        let templates = vec![
            engine(),
            PromptTemplate::new("b", "A {attr} walked in.").unwrap(),
            PromptTemplate::new("c", "Call the {attr} now.").unwrap(),
        ];
        let pack = LexiconPack::builtin();
        let groups = nested_controls(&templates, &pack).unwrap();
        assert_eq!(groups.len(), 12);
        assert_eq!(groups[0].template_id(), "engine");
        assert_eq!(groups[0].category(), "gender");
        assert_eq!(groups[5].template_id(), "b");
        assert_eq!(groups[5].category(), "profession");
        let again = nested_controls(&templates, &pack).unwrap();
        assert_eq!(
            serde_json::to_string(&groups).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
        assert!(nested_controls(&[], &pack).unwrap().is_empty());
    }

    #[test]
    fn nested_errors_are_annotated() {
        let pack = LexiconPack::new(vec![AttributeCategory::from_terms("solo", &["x"]).unwrap()], "t").unwrap();
        let err = nested_controls(&[engine()], &pack).unwrap_err();
        assert!(matches!(err.root(), Error::InsufficientAttributes(1)));
        assert!(err.to_string().contains("engine") && err.to_string().contains("solo"));
    }

    #[test]
    fn locate_examples() {
        let prof = AttributeCategory::from_terms("p", &["nurse", "doctor"]).unwrap();
        let t = tokenize("the nurse and the doctor").unwrap();
        assert_eq!(locate_attribute_positions(&t, &prof), vec![1, 4]);
        assert!(locate_attribute_positions(&tokenize("nothing here").unwrap(), &prof).is_empty());
        let overl = AttributeCategory::from_terms("p", &["attendant", "flight attendant"]).unwrap();
        let t = tokenize("the flight attendant").unwrap();
        assert_eq!(locate_attribute_positions(&t, &overl), vec![1, 2]);
        assert_eq!(
            locate_attribute_positions(&tokenize("The NURSE").unwrap(), &prof),
            vec![1]
        );
    }

    #[test]
    fn locate_recovers_instantiated_span() {
        let pack = LexiconPack::builtin();
        for template in builtin_templates() {
            for cat in pack.categories() {
                for m in instantiate(&template, cat).unwrap().members() {
                    assert_eq!(
                        locate_attribute_positions(&m.text, cat),
                        m.positions,
                        "{}",
                        m.text.raw()
                    );
                }
            }
        }
    }

    #[test]
    fn members_differ_only_in_slot_span() {
        let pack = LexiconPack::builtin();
        for template in builtin_templates() {
            for cat in pack.categories() {
                let g = instantiate(&template, cat).unwrap();
                let strip = |m: &GroupMember| -> (Vec<String>, Vec<String>) {
                    let first = *m.positions.first().unwrap();
                    let last = *m.positions.last().unwrap();
                    (m.text.tokens()[..first].to_vec(), m.text.tokens()[last + 1..].to_vec())
                };
                let reference = strip(&g.members()[0]);
                for m in g.members() {
                    assert_eq!(strip(m), reference);
                }
            }
        }
    }

    #[test]
    fn find_and_swap() {
        assert_eq!(find_term("The Chess Player won.", "chess player"), Some(4..16));
        assert_eq!(find_term("Manuel ran", "man"), None);
        let t = template_from_text("x", "My mother is kind.", "mother").unwrap();
        assert_eq!(t.pattern(), "My {attr} is kind.");
        let pack = LexiconPack::builtin();
        let swapped = swap_first_attribute(&tokenize("The nurse is kind.").unwrap(), &pack)
            .unwrap()
            .unwrap();
        assert_eq!(swapped.raw(), "The doctor is kind.");
        assert!(swap_first_attribute(&tokenize("Rain today.").unwrap(), &pack)
            .unwrap()
            .is_none());
    }

    #[test]
    fn prefix_shifts_positions() {
        let cat = AttributeCategory::from_terms("g", &["man", "woman"]).unwrap();
        let g = instantiate(&engine(), &cat).unwrap();
        let p = prefix_group(&g, "It was late .").unwrap();
        assert_eq!(p.members()[0].positions, vec![5]);
        assert_eq!(p.members()[0].text.tokens()[5], "man");
    }

    #[test]
    fn pack_parsing() {
        let bad = r#"{"categories":[{"name":"a","terms":[{"term":"x","group":"g"}]},{"name":"a","terms":[{"term":"y","group":"g"}]}]}"#;
        assert!(LexiconPack::from_json(bad, "t").is_err());
        assert!(templates_from_json(r#"{"templates":[{"id":"x","pattern":"no slot"}]}"#).is_err());
        assert_eq!(LexiconPack::builtin().categories().len(), 4);
    }
}
