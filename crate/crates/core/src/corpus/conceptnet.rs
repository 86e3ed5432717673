//! ConceptNet triples to concept–property and property–facet pairs.
//!
//! A triple `(boat, AtLocation, sea)` becomes the concept–property pair
//! `(boat, "at location sea")` and the property–facet pair
//! `("at location sea", "at location")`: relations act as facets and a
//! property is a relation joined with its tail concept.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use super::{CorpusBuilder, TrainingCorpus};
use crate::error::{Error, Result};

pub const DEFAULT_RELATIONS: [&str; 10] = [
    "RelatedTo",
    "FormOf",
    "IsA",
    "UsedFor",
    "AtLocation",
    "CapableOf",
    "HasProperty",
    "HasA",
    "InstanceOf",
    "MadeOf",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Self {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: tail.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConceptNetStats {
    pub triples_read: usize,
    pub triples_after_relation_filter: usize,
    pub triples_after_tail_filter: usize,
    pub concepts: usize,
    pub properties: usize,
    pub facets: usize,
    pub cp_pairs: usize,
    pub pf_pairs: usize,
}

/// `AtLocation` -> `at location`, `IsA` -> `is a`.
pub fn relation_label(relation: &str) -> String {
    let mut out = String::with_capacity(relation.len() + 4);
    for (i, ch) in relation.chars().enumerate() {
        if ch.is_uppercase() && i > 0 {
            out.push(' ');
        }
        out.extend(ch.to_lowercase());
    }
    out
}

fn english_term(uri: &str) -> Option<String> {
    let rest = uri.strip_prefix("/c/en/")?;
    let term = rest.split('/').next()?;
    if term.is_empty() {
        return None;
    }
    Some(term.replace('_', " "))
}

/// Parses one line of a ConceptNet 5 assertions dump, keeping English–English
/// edges only. Plain `head<TAB>Relation<TAB>tail` lines are accepted too.
pub fn parse_conceptnet_line(line: &str) -> Option<Triple> {
    let cols: Vec<&str> = line.split('\t').collect();
    match cols.len() {
        3 => {
            let (h, r, t) = (cols[0].trim(), cols[1].trim(), cols[2].trim());
            if h.is_empty() || r.is_empty() || t.is_empty() {
                return None;
            }
            Some(Triple::new(h, r.trim_start_matches("/r/"), t))
        }
        n if n >= 4 => {
            let relation = cols[1].strip_prefix("/r/")?;
            let head = english_term(cols[2])?;
            let tail = english_term(cols[3])?;
            Some(Triple {
                head,
                relation: relation.to_string(),
                tail,
            })
        }
        _ => None,
    }
}

/// Builds a corpus from triples.
///
/// Triples are first filtered by relation; tails are then counted over the
/// filtered stream and only triples whose tail occurs at least
/// `min_tail_count` times produce pairs.
pub fn ingest_conceptnet<I>(
    triples: I,
    allowed_relations: &HashSet<String>,
    min_tail_count: usize,
) -> Result<(TrainingCorpus, ConceptNetStats)>
where
    I: IntoIterator<Item = Triple>,
{
    if min_tail_count == 0 {
        return Err(Error::InvalidArgument("min_tail_count must be at least 1".into()));
    }
    let mut stats = ConceptNetStats::default();
    let mut kept = Vec::new();
    let mut tail_counts: HashMap<String, usize> = HashMap::new();
    for t in triples {
        stats.triples_read += 1;
        if allowed_relations.contains(&t.relation) {
            *tail_counts.entry(t.tail.clone()).or_default() += 1;
            kept.push(t);
        }
    }
    stats.triples_after_relation_filter = kept.len();

    let mut b = CorpusBuilder::new();
    for t in &kept {
        if tail_counts[&t.tail] < min_tail_count {
            continue;
        }
        stats.triples_after_tail_filter += 1;
        let facet = relation_label(&t.relation);
        let property = format!("{facet} {}", t.tail);
        b.add_cp(&t.head, &property);
        b.add_pf(&property, &facet);
    }
    let corpus = b.build().map_err(|_| {
        Error::EmptyInput(format!(
            "no ConceptNet triples left after filtering ({} read, {} with allowed relations)",
            stats.triples_read, stats.triples_after_relation_filter
        ))
    })?;
    stats.concepts = corpus.concepts().len();
    stats.properties = corpus.properties().len();
    stats.facets = corpus.facets().len();
    stats.cp_pairs = corpus.cp_pairs().len();
    stats.pf_pairs = corpus.pf_pairs().len();
    Ok((corpus, stats))
}
