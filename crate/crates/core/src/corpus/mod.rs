//! Training data: vocabularies, concept–property and property–facet pairs,
//! negative sampling and evaluation splits.

mod conceptnet;
mod splits;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use conceptnet::{
    ingest_conceptnet, parse_conceptnet_line, relation_label, ConceptNetStats, Triple, DEFAULT_RELATIONS,
};
pub use splits::{make_splits, Fold, SplitMode, SplitSpec};

/// Seeded generator used for every random decision in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// Ordered set of unique strings with dense ids `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_items<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::new();
        for it in items {
            v.intern(it);
        }
        v
    }

    /// Returns the id of `item`, inserting it at the end if unseen.
    pub fn intern(&mut self, item: impl Into<String>) -> usize {
        let item = item.into();
        if let Some(&id) = self.index.get(&item) {
            return id;
        }
        let id = self.items.len();
        self.index.insert(item.clone(), id);
        self.items.push(item);
        id
    }

    pub fn lookup(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// First 8 bytes of SHA-256 over the newline-joined items, in id order.
    pub fn hash(&self) -> [u8; 8] {
        let mut h = Sha256::new();
        for it in &self.items {
            h.update(it.as_bytes());
            h.update(b"\n");
        }
        let full = h.finalize();
        let mut out = [0u8; 8];
        out.copy_from_slice(&full[..8]);
        out
    }
}

/// Concept–property pairs `D_cp`, property–facet pairs `D_pf` and their vocabularies.
///
/// Immutable once built; use [`CorpusBuilder`] to construct or extend one.
#[derive(Debug, Clone)]
pub struct TrainingCorpus {
    concepts: Vocab,
    properties: Vocab,
    facets: Vocab,
    cp_pairs: Vec<(usize, usize)>,
    pf_pairs: Vec<(usize, usize)>,
    cp_index: HashSet<(usize, usize)>,
    pf_index: HashSet<(usize, usize)>,
    facet_members: Vec<Vec<usize>>,
}

impl TrainingCorpus {
    pub fn concepts(&self) -> &Vocab {
        &self.concepts
    }

    pub fn properties(&self) -> &Vocab {
        &self.properties
    }

    pub fn facets(&self) -> &Vocab {
        &self.facets
    }

    pub fn cp_pairs(&self) -> &[(usize, usize)] {
        &self.cp_pairs
    }

    pub fn pf_pairs(&self) -> &[(usize, usize)] {
        &self.pf_pairs
    }

    pub fn has_cp(&self, concept: usize, property: usize) -> bool {
        self.cp_index.contains(&(concept, property))
    }

    pub fn has_pf(&self, property: usize, facet: usize) -> bool {
        self.pf_index.contains(&(property, facet))
    }

    /// `P_f`: the properties known to belong to facet `f`, in pair order.
    pub fn facet_members(&self, facet: usize) -> &[usize] {
        &self.facet_members[facet]
    }

    /// Properties that appear in no property–facet pair.
    pub fn properties_without_facet(&self) -> Vec<usize> {
        let mut has = vec![false; self.properties.len()];
        for &(p, _) in &self.pf_pairs {
            has[p] = true;
        }
        (0..has.len()).filter(|&p| !has[p]).collect()
    }

    /// Same vocabularies and facet pairs, different concept–property pairs.
    pub fn with_cp_pairs(&self, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut b = CorpusBuilder::from_vocabs(self);
        for &(c, p) in pairs {
            if c >= self.concepts.len() || p >= self.properties.len() {
                return Err(Error::InvalidArgument(format!(
                    "pair ({c}, {p}) out of vocabulary range"
                )));
            }
            b.push_cp_ids(c, p);
        }
        for &(p, f) in &self.pf_pairs {
            b.push_pf_ids(p, f);
        }
        Ok(b.build_unchecked())
    }

    pub fn write_cp_tsv(&self, path: &Path) -> Result<()> {
        let rows = self
            .cp_pairs
            .iter()
            .map(|&(c, p)| (self.concepts.name(c), self.properties.name(p)));
        write_tsv(path, rows)
    }

    pub fn write_pf_tsv(&self, path: &Path) -> Result<()> {
        let rows = self
            .pf_pairs
            .iter()
            .map(|&(p, f)| (self.properties.name(p), self.facets.name(f)));
        write_tsv(path, rows)
    }
}

fn write_tsv<'a>(path: &Path, rows: impl Iterator<Item = (&'a str, &'a str)>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for (a, b) in rows {
        writeln!(w, "{a}\t{b}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Accumulates pairs into vocabularies in first-occurrence order, dropping duplicates.
#[derive(Debug, Default, Clone)]
pub struct CorpusBuilder {
    concepts: Vocab,
    properties: Vocab,
    facets: Vocab,
    cp_pairs: Vec<(usize, usize)>,
    pf_pairs: Vec<(usize, usize)>,
    cp_index: HashSet<(usize, usize)>,
    pf_index: HashSet<(usize, usize)>,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts from the vocabularies of `corpus` with no pairs.
    pub fn from_vocabs(corpus: &TrainingCorpus) -> Self {
        Self {
            concepts: corpus.concepts.clone(),
            properties: corpus.properties.clone(),
            facets: corpus.facets.clone(),
            ..Self::default()
        }
    }

    /// Starts from everything in `corpus`.
    pub fn from_corpus(corpus: &TrainingCorpus) -> Self {
        let mut b = Self::from_vocabs(corpus);
        for &(c, p) in &corpus.cp_pairs {
            b.push_cp_ids(c, p);
        }
        for &(p, f) in &corpus.pf_pairs {
            b.push_pf_ids(p, f);
        }
        b
    }

    pub fn intern_concept(&mut self, name: &str) -> usize {
        self.concepts.intern(name)
    }

    pub fn intern_property(&mut self, name: &str) -> usize {
        self.properties.intern(name)
    }

    /// Returns true if the pair was new.
    pub fn add_cp(&mut self, concept: &str, property: &str) -> bool {
        let c = self.concepts.intern(concept);
        let p = self.properties.intern(property);
        self.push_cp_ids(c, p)
    }

    pub fn add_pf(&mut self, property: &str, facet: &str) -> bool {
        let p = self.properties.intern(property);
        let f = self.facets.intern(facet);
        self.push_pf_ids(p, f)
    }

    fn push_cp_ids(&mut self, c: usize, p: usize) -> bool {
        if self.cp_index.insert((c, p)) {
            self.cp_pairs.push((c, p));
            true
        } else {
            false
        }
    }

    fn push_pf_ids(&mut self, p: usize, f: usize) -> bool {
        if self.pf_index.insert((p, f)) {
            self.pf_pairs.push((p, f));
            true
        } else {
            false
        }
    }

    pub fn add_fragment(&mut self, fragment: &PairFragment) -> Result<()> {
        match fragment.format {
            PairFormat::Cp => {
                for (a, b) in &fragment.pairs {
                    self.add_cp(a, b);
                }
            }
            PairFormat::Pf => {
                for (a, b) in &fragment.pairs {
                    self.add_pf(a, b);
                }
            }
            PairFormat::Labeled => {
                return Err(Error::InvalidArgument(
                    "labeled pairs are not training pairs; use labeled_pairs()".into(),
                ))
            }
        }
        Ok(())
    }

    /// Interns the labeled fragment's items and returns id-level pairs.
    pub fn labeled_pairs(&mut self, fragment: &PairFragment) -> Vec<LabeledPair> {
        fragment
            .pairs
            .iter()
            .zip(&fragment.labels)
            .map(|((c, p), &label)| LabeledPair {
                concept: self.concepts.intern(c.as_str()),
                property: self.properties.intern(p.as_str()),
                label,
            })
            .collect()
    }

    /// Fails if no concept–property pairs were added.
    pub fn build(self) -> Result<TrainingCorpus> {
        if self.cp_pairs.is_empty() {
            return Err(Error::EmptyInput("corpus has no concept-property pairs".into()));
        }
        Ok(self.build_unchecked())
    }

    pub fn build_unchecked(self) -> TrainingCorpus {
        let mut facet_members = vec![Vec::new(); self.facets.len()];
        for &(p, f) in &self.pf_pairs {
            facet_members[f].push(p);
        }
        TrainingCorpus {
            concepts: self.concepts,
            properties: self.properties,
            facets: self.facets,
            cp_pairs: self.cp_pairs,
            pf_pairs: self.pf_pairs,
            cp_index: self.cp_index,
            pf_index: self.pf_index,
            facet_members,
        }
    }
}

/// One judgement for property prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub concept: usize,
    pub property: usize,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFormat {
    /// `concept<TAB>property`
    Cp,
    /// `property<TAB>facet`
    Pf,
    /// `concept<TAB>property<TAB>{0,1}`
    Labeled,
}

impl PairFormat {
    fn columns(self) -> usize {
        match self {
            PairFormat::Labeled => 3,
            _ => 2,
        }
    }

    fn json_keys(self) -> (&'static str, &'static str) {
        match self {
            PairFormat::Pf => ("property", "facet"),
            _ => ("concept", "property"),
        }
    }
}

/// String-level contents of one pair file, deduplicated.
#[derive(Debug, Clone)]
pub struct PairFragment {
    pub format: PairFormat,
    pub pairs: Vec<(String, String)>,
    /// Parallel to `pairs` for [`PairFormat::Labeled`], empty otherwise.
    pub labels: Vec<bool>,
    pub lines_read: usize,
    pub lines_kept: usize,
}

impl PairFragment {
    /// Builds a standalone corpus from a cp or pf fragment.
    pub fn to_corpus(&self) -> Result<TrainingCorpus> {
        let mut b = CorpusBuilder::new();
        b.add_fragment(self)?;
        Ok(b.build_unchecked())
    }
}

/// Reads a TSV pair file, or JSON-lines when the extension is `.jsonl`.
///
/// Blank lines and lines starting with `#` are skipped. Duplicate pairs are
/// dropped; for labeled files the first label seen for a pair wins.
pub fn load_pair_file(path: &Path, format: PairFormat) -> Result<PairFragment> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let mut fragment = PairFragment {
        format,
        pairs: Vec::new(),
        labels: Vec::new(),
        lines_read: 0,
        lines_kept: 0,
    };
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: e.to_string(),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        fragment.lines_read += 1;
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let (a, b, label) = if jsonl {
            parse_json_record(line, format).map_err(parse_err)?
        } else {
            parse_tsv_record(line, format).map_err(parse_err)?
        };
        if seen.insert((a.clone(), b.clone())) {
            fragment.pairs.push((a, b));
            if let Some(l) = label {
                fragment.labels.push(l);
            }
            fragment.lines_kept += 1;
        }
    }
    if fragment.lines_read == 0 {
        return Err(Error::EmptyInput(format!("{} has no pairs", path.display())));
    }
    Ok(fragment)
}

type Record = (String, String, Option<bool>);

fn parse_label(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(format!("label must be 0 or 1, got '{other}'")),
    }
}

fn parse_tsv_record(line: &str, format: PairFormat) -> std::result::Result<Record, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != format.columns() {
        return Err(format!(
            "expected {} tab-separated columns, found {}",
            format.columns(),
            cols.len()
        ));
    }
    let a = cols[0].trim();
    let b = cols[1].trim();
    if a.is_empty() || b.is_empty() {
        return Err("empty field".into());
    }
    let label = match format {
        PairFormat::Labeled => Some(parse_label(cols[2])?),
        _ => None,
    };
    Ok((a.to_string(), b.to_string(), label))
}

fn parse_json_record(line: &str, format: PairFormat) -> std::result::Result<Record, String> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let (ka, kb) = format.json_keys();
    let field = |k: &str| {
        v.get(k)
            .and_then(|x| x.as_str())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| format!("missing string field '{k}'"))
    };
    let a = field(ka)?;
    let b = field(kb)?;
    let label = match format {
        PairFormat::Labeled => match v.get("label") {
            Some(serde_json::Value::Bool(b)) => Some(*b),
            Some(serde_json::Value::Number(n)) => Some(parse_label(&n.to_string())?),
            _ => return Err("missing field 'label'".into()),
        },
        _ => None,
    };
    Ok((a, b, label))
}

/// Draws `n_neg` negatives `(c, p')` per positive `(c, p)`.
///
/// Candidates are uniform over the property vocabulary; `p' = p`, pairs in
/// `D_cp` and repeats within one positive's set are redrawn. Gives up after
/// `64 * n_neg + 256` draws for a single positive.
pub fn sample_negatives<R: Rng>(
    corpus: &TrainingCorpus,
    batch: &[(usize, usize)],
    n_neg: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    if n_neg == 0 {
        return Err(Error::InvalidArgument("n_neg must be at least 1".into()));
    }
    let n_props = corpus.properties.len();
    if n_props <= n_neg {
        return Err(Error::InvalidArgument(format!(
            "need more than {n_neg} properties to draw {n_neg} negatives, corpus has {n_props}"
        )));
    }
    let budget = 64 * n_neg + 256;
    let mut out = Vec::with_capacity(batch.len() * n_neg);
    let mut chosen = Vec::with_capacity(n_neg);
    for &(c, p) in batch {
        chosen.clear();
        let mut draws = 0;
        while chosen.len() < n_neg {
            if draws == budget {
                return Err(Error::NegativeSampling {
                    concept: corpus.concepts.name(c).to_string(),
                    wanted: n_neg,
                });
            }
            draws += 1;
            let cand = rng.gen_range(0..n_props);
            if cand == p || corpus.has_cp(c, cand) || chosen.contains(&cand) {
                continue;
            }
            chosen.push(cand);
        }
        out.extend(chosen.iter().map(|&q| (c, q)));
    }
    Ok(out)
}
