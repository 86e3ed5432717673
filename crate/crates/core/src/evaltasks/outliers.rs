//! Outlier detection benchmark: 3 concepts sharing a property hidden among 7
//! outliers that share nothing with each other.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{seeded_rng, Vocab};
use crate::error::{Error, Result};
use crate::facets::FacetedConceptVecs;
use crate::linalg::cosine;

pub const N_POSITIVES: usize = 3;
pub const N_OUTLIERS: usize = 7;
pub const INSTANCE_SIZE: usize = N_POSITIVES + N_OUTLIERS;
/// Candidate draws allowed per instance.
pub const RETRY_BUDGET: usize = 10_000;

/// Consecutive rejected outlier draws before the partial outlier set is discarded.
const RESTART_AFTER: usize = 200;

/// Concept facts merged from several sources, plus taxonomic groups per property.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PropertyDB {
    facts: BTreeMap<String, BTreeSet<String>>,
    groups: BTreeMap<String, BTreeMap<usize, Vec<String>>>,
}

fn tsv_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim_end_matches('\r');
        if t.trim().is_empty() || t.starts_with('#') {
            continue;
        }
        out.push((i + 1, t.split('\t').map(|s| s.trim().to_string()).collect()));
    }
    Ok(out)
}

impl PropertyDB {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_fact(&mut self, concept: &str, property: &str) {
        self.facts
            .entry(concept.to_string())
            .or_default()
            .insert(property.to_string());
    }

    pub fn add_group_member(&mut self, property: &str, group: usize, concept: &str) {
        let g = self
            .groups
            .entry(property.to_string())
            .or_default()
            .entry(group)
            .or_default();
        if !g.iter().any(|c| c == concept) {
            g.push(concept.to_string());
        }
    }

    /// Adds `concept<TAB>property` lines.
    pub fn load_facts(&mut self, path: &Path) -> Result<usize> {
        let mut n = 0;
        for (line, cols) in tsv_lines(path)? {
            if cols.len() < 2 || cols[0].is_empty() || cols[1].is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: "expected concept<TAB>property".into(),
                });
            }
            self.add_fact(&cols[0], &cols[1]);
            n += 1;
        }
        Ok(n)
    }

    /// Adds `property<TAB>group_index<TAB>concept` lines.
    pub fn load_groups(&mut self, path: &Path) -> Result<usize> {
        let mut n = 0;
        for (line, cols) in tsv_lines(path)? {
            let bad = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: msg.to_string(),
            };
            if cols.len() < 3 {
                return Err(bad("expected property<TAB>group_index<TAB>concept"));
            }
            let g: usize = cols[1].parse().map_err(|_| bad("group index is not a number"))?;
            self.add_group_member(&cols[0], g, &cols[2]);
            n += 1;
        }
        Ok(n)
    }

    /// Every group member must have the group's property.
    pub fn validate(&self) -> Result<()> {
        for (p, groups) in &self.groups {
            for members in groups.values() {
                for c in members {
                    if !self.has(c, p) {
                        return Err(Error::InvalidArgument(format!(
                            "group member '{c}' of property '{p}' lacks that property"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn has(&self, concept: &str, property: &str) -> bool {
        self.facts.get(concept).is_some_and(|s| s.contains(property))
    }

    pub fn properties_of(&self, concept: &str) -> Option<&BTreeSet<String>> {
        self.facts.get(concept)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.facts.keys().map(|s| s.as_str())
    }

    /// Properties with at least one group, sorted.
    pub fn grouped_properties(&self) -> Vec<&str> {
        self.groups.keys().map(|s| s.as_str()).collect()
    }

    /// Non-empty groups of `property`, by group index.
    pub fn groups(&self, property: &str) -> Vec<&[String]> {
        self.groups
            .get(property)
            .map(|g| {
                g.values()
                    .filter(|m| !m.is_empty())
                    .map(|m| m.as_slice())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn share_property(&self, a: &str, b: &str) -> bool {
        match (self.facts.get(a), self.facts.get(b)) {
            (Some(x), Some(y)) => !x.is_disjoint(y),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierInstance {
    pub property: String,
    pub concepts: Vec<String>,
    /// Indices into `concepts`, ascending.
    pub positives: Vec<usize>,
}

/// Checks every construction constraint of an instance against the DB.
pub fn check_instance(db: &PropertyDB, inst: &OutlierInstance) -> std::result::Result<(), String> {
    if inst.concepts.len() != INSTANCE_SIZE {
        return Err(format!(
            "{} concepts instead of {INSTANCE_SIZE}",
            inst.concepts.len()
        ));
    }
    let distinct: BTreeSet<&String> = inst.concepts.iter().collect();
    if distinct.len() != INSTANCE_SIZE {
        return Err("duplicate concepts".into());
    }
    let pos: BTreeSet<usize> = inst.positives.iter().copied().collect();
    if pos.len() != N_POSITIVES || pos.iter().any(|&i| i >= INSTANCE_SIZE) {
        return Err(format!("bad positive indices {:?}", inst.positives));
    }
    let positives: Vec<&str> = pos.iter().map(|&i| inst.concepts[i].as_str()).collect();
    for c in &positives {
        if !db.has(c, &inst.property) {
            return Err(format!("positive '{c}' lacks '{}'", inst.property));
        }
    }
    let groups = db.groups(&inst.property);
    let memberships: Vec<Vec<usize>> = positives
        .iter()
        .map(|c| {
            (0..groups.len())
                .filter(|&g| groups[g].iter().any(|m| m == c))
                .collect()
        })
        .collect();
    let distinct_groups = memberships[0].iter().any(|&a| {
        memberships[1]
            .iter()
            .any(|&b| b != a && memberships[2].iter().any(|&c| c != a && c != b))
    });
    if !distinct_groups {
        return Err("positives do not come from three different groups".into());
    }
    let outliers: Vec<&str> = (0..INSTANCE_SIZE)
        .filter(|i| !pos.contains(i))
        .map(|i| inst.concepts[i].as_str())
        .collect();
    for (i, a) in outliers.iter().enumerate() {
        if db.has(a, &inst.property) {
            return Err(format!("outlier '{a}' has '{}'", inst.property));
        }
        for b in &outliers[i + 1..] {
            if db.share_property(a, b) {
                return Err(format!("outliers '{a}' and '{b}' share a property"));
            }
        }
    }
    Ok(())
}

struct Index<'a> {
    names: Vec<&'a str>,
    props: Vec<Vec<u32>>,
}

impl<'a> Index<'a> {
    fn new(db: &'a PropertyDB) -> Self {
        let mut ids: HashMap<&str, u32> = HashMap::new();
        let mut names = Vec::new();
        let mut props = Vec::new();
        for (c, ps) in &db.facts {
            names.push(c.as_str());
            let mut v: Vec<u32> = ps
                .iter()
                .map(|p| {
                    let n = ids.len() as u32;
                    *ids.entry(p.as_str()).or_insert(n)
                })
                .collect();
            v.sort_unstable();
            props.push(v);
        }
        Self { names, props }
    }

    fn disjoint(&self, a: usize, b: usize) -> bool {
        let (x, y) = (&self.props[a], &self.props[b]);
        let (mut i, mut j) = (0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return false,
            }
        }
        true
    }
}

fn unsatisfiable(property: &str, msg: impl Into<String>) -> Error {
    Error::Unsatisfiable {
        property: property.to_string(),
        msg: msg.into(),
    }
}

fn sample_instance<R: Rng>(
    index: &Index<'_>,
    property: &str,
    groups: &[&[String]],
    candidates: &[usize],
    rng: &mut R,
) -> Result<OutlierInstance> {
    let mut draws = 0usize;
    let budget_error = || {
        unsatisfiable(
            property,
            format!("no valid instance within {RETRY_BUDGET} candidate draws"),
        )
    };
    let positives: Vec<String> = loop {
        draws += 1;
        if draws > RETRY_BUDGET {
            return Err(budget_error());
        }
        let picked: Vec<String> = index::sample(rng, groups.len(), N_POSITIVES)
            .into_iter()
            .map(|g| groups[g][rng.gen_range(0..groups[g].len())].clone())
            .collect();
        let uniq: BTreeSet<&String> = picked.iter().collect();
        if uniq.len() == N_POSITIVES {
            break picked;
        }
    };
    let mut outliers: Vec<usize> = Vec::with_capacity(N_OUTLIERS);
    let mut misses = 0;
    while outliers.len() < N_OUTLIERS {
        draws += 1;
        if draws > RETRY_BUDGET {
            return Err(budget_error());
        }
        let c = candidates[rng.gen_range(0..candidates.len())];
        if outliers.iter().all(|&o| o != c && index.disjoint(o, c)) {
            outliers.push(c);
            misses = 0;
        } else {
            misses += 1;
            if misses >= RESTART_AFTER {
                outliers.clear();
                misses = 0;
            }
        }
    }
    let mut concepts: Vec<(String, bool)> = positives.into_iter().map(|c| (c, true)).collect();
    concepts.extend(outliers.into_iter().map(|o| (index.names[o].to_string(), false)));
    concepts.shuffle(rng);
    Ok(OutlierInstance {
        property: property.to_string(),
        positives: (0..INSTANCE_SIZE).filter(|&i| concepts[i].1).collect(),
        concepts: concepts.into_iter().map(|c| c.0).collect(),
    })
}

/// Samples `n_instances` instances for one property.
pub fn build_outlier_benchmark(
    db: &PropertyDB,
    property: &str,
    n_instances: usize,
    seed: u64,
) -> Result<Vec<OutlierInstance>> {
    let groups = db.groups(property);
    if groups.len() < N_POSITIVES {
        return Err(unsatisfiable(
            property,
            format!("{} taxonomic groups, at least {N_POSITIVES} needed", groups.len()),
        ));
    }
    let index = Index::new(db);
    let candidates: Vec<usize> = (0..index.names.len())
        .filter(|&i| !db.has(index.names[i], property))
        .collect();
    if candidates.len() < N_OUTLIERS {
        return Err(unsatisfiable(
            property,
            format!("only {} concepts lack the property", candidates.len()),
        ));
    }
    let mut rng = seeded_rng(seed);
    (0..n_instances)
        .map(|_| sample_instance(&index, property, &groups, &candidates, &mut rng))
        .collect()
}

/// One benchmark over several properties, each with its own seed stream.
pub fn build_benchmark(
    db: &PropertyDB,
    properties: &[String],
    n_instances: usize,
    seed: u64,
) -> Result<Vec<OutlierInstance>> {
    let per: Vec<Vec<OutlierInstance>> = properties
        .par_iter()
        .enumerate()
        .map(|(i, p)| build_outlier_benchmark(db, p, n_instances, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

pub fn write_benchmark(path: &Path, instances: &[OutlierInstance]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_benchmark(path: &Path) -> Result<Vec<OutlierInstance>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: OutlierInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if inst.concepts.len() != INSTANCE_SIZE || inst.positives.len() != N_POSITIVES {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("instance needs {INSTANCE_SIZE} concepts and {N_POSITIVES} positives"),
            });
        }
        out.push(inst);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierPrediction {
    /// Predicted positives, ascending.
    pub members: [usize; 3],
    pub top: usize,
    pub top_score: f64,
}

/// Picks the concept whose 2nd and 3rd nearest other concepts differ most in
/// similarity, together with its two nearest others. Ties go to lower indices.
pub fn detect_outliers_single(vectors: &[&[f64]]) -> Result<OutlierPrediction> {
    let n = vectors.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 vectors, got {n}"
        )));
    }
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine(vectors[i], vectors[j]).ok_or_else(|| {
                Error::Degenerate(format!(
                    "zero vector at position {}",
                    if crate::linalg::norm(vectors[i]) == 0.0 {
                        i
                    } else {
                        j
                    }
                ))
            })?;
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    let ranked = |i: usize| {
        let mut o: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        o.sort_by(|&a, &b| sim[i][b].total_cmp(&sim[i][a]).then(a.cmp(&b)));
        o
    };
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for i in 0..n {
        let r = ranked(i);
        let score = sim[i][r[1]] - sim[i][r[2]];
        if best.as_ref().map_or(true, |b| score > b.1) {
            best = Some((i, score, r));
        }
    }
    let (top, top_score, r) = best.expect("n >= 4");
    let mut members = [top, r[0], r[1]];
    members.sort_unstable();
    Ok(OutlierPrediction {
        members,
        top,
        top_score,
    })
}

/// Runs the single detector per facet over the instance's non-degenerate
/// vectors and keeps the facet with the highest top score (lower facet on ties).
pub fn detect_outliers_multi(
    faceted: &FacetedConceptVecs,
    concepts: &[usize],
) -> Result<(OutlierPrediction, usize)> {
    let mut best: Option<(OutlierPrediction, usize)> = None;
    for j in 0..faceted.k() {
        let valid: Vec<usize> = (0..concepts.len())
            .filter(|&i| !faceted.degenerate[j][concepts[i]])
            .collect();
        if valid.len() < 4 {
            continue;
        }
        let vecs: Vec<&[f64]> = valid.iter().map(|&i| faceted.vecs[j].row(concepts[i])).collect();
        let p = detect_outliers_single(&vecs)?;
        let mut members = p.members.map(|m| valid[m]);
        members.sort_unstable();
        let mapped = OutlierPrediction {
            members,
            top: valid[p.top],
            top_score: p.top_score,
        };
        if best.as_ref().map_or(true, |b| mapped.top_score > b.0.top_score) {
            best = Some((mapped, j));
        }
    }
    best.ok_or_else(|| {
        Error::Degenerate("every facet has fewer than 4 usable vectors for this instance".into())
    })
}

/// True iff the predicted set equals the gold positives.
pub fn exact_match(predicted: &[usize], gold: &[usize]) -> bool {
    let a: BTreeSet<usize> = predicted.iter().copied().collect();
    let b: BTreeSet<usize> = gold.iter().copied().collect();
    a == b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierStrategy {
    /// One space of concept vectors.
    Single,
    /// Facet-specific spaces, best facet per instance.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyScore {
    pub property: String,
    pub instances: usize,
    pub correct: usize,
    pub exact_match: f64,
}

/// Exact-match rate per property, properties in order of first appearance.
pub fn evaluate_outliers(
    instances: &[OutlierInstance],
    faceted: &FacetedConceptVecs,
    concepts: &Vocab,
) -> Result<Vec<PropertyScore>> {
    let hits: Vec<bool> = instances
        .par_iter()
        .map(|inst| {
            let ids: Vec<usize> = inst
                .concepts
                .iter()
                .map(|c| {
                    concepts.lookup(c).ok_or_else(|| {
                        Error::VocabMismatch(format!("benchmark concept '{c}' is not in the vocabulary"))
                    })
                })
                .collect::<Result<_>>()?;
            let (pred, _) = detect_outliers_multi(faceted, &ids)?;
            Ok(exact_match(&pred.members, &inst.positives))
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<String> = Vec::new();
    let mut tally: HashMap<String, (usize, usize)> = HashMap::new();
    for (inst, hit) in instances.iter().zip(hits) {
        let e = tally.entry(inst.property.clone()).or_insert_with(|| {
            order.push(inst.property.clone());
            (0, 0)
        });
        e.0 += 1;
        e.1 += hit as usize;
    }
    Ok(order
        .into_iter()
        .map(|p| {
            let (n, c) = tally[&p];
            PropertyScore {
                property: p,
                instances: n,
                correct: c,
                exact_match: c as f64 / n as f64,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn db() -> PropertyDB {
        let mut db = PropertyDB::new();
        for (g, members) in [
            ["dog", "cat"],
            ["hawk", "owl"],
            ["shark", "eel"],
            ["frog", "toad"],
        ]
        .iter()
        .enumerate()
        {
            for m in members {
                db.add_fact(m, "is animal");
                db.add_group_member("is animal", g, m);
            }
        }
        // outlier candidates; o0 and o1 share "red", o2/o3 share "wood"
        let facts = [
            ("o0", "red"),
            ("o1", "red"),
            ("o2", "wood"),
            ("o3", "wood"),
            ("o4", "sharp"),
            ("o5", "round"),
            ("o6", "loud"),
            ("o7", "cold"),
            ("o8", "soft"),
            ("o9", "sweet"),
            ("o9", "heavy"),
            ("o10", "heavy"),
        ];
        for (c, p) in facts {
            db.add_fact(c, p);
        }
        db.add_fact("dog", "loud");
        db
    }

    #[test]
    fn instances_satisfy_constraints() {
        let db = db();
        db.validate().unwrap();
        let inst = build_outlier_benchmark(&db, "is animal", 200, 3).unwrap();
        assert_eq!(inst.len(), 200);
        for i in &inst {
            check_instance(&db, i).unwrap();
            // brute force: no two outliers share a property
            let outs: Vec<&String> = (0..10)
                .filter(|x| !i.positives.contains(x))
                .map(|x| &i.concepts[x])
                .collect();
            for a in 0..outs.len() {
                for b in a + 1..outs.len() {
                    let pa = db.properties_of(outs[a]).unwrap();
                    let pb = db.properties_of(outs[b]).unwrap();
                    assert!(pa.intersection(pb).next().is_none());
                }
            }
            assert!(!(i.concepts.contains(&"o0".into()) && i.concepts.contains(&"o1".into())));
        }
        let again = build_outlier_benchmark(&db, "is animal", 200, 3).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn singleton_groups_force_positives() {
        let mut db = db();
        for (g, c) in ["dog", "hawk", "shark"].iter().enumerate() {
            db.add_group_member("is pet", g, c);
            db.add_fact(c, "is pet");
        }
        for i in build_outlier_benchmark(&db, "is pet", 20, 0).unwrap() {
            let pos: BTreeSet<&str> = i.positives.iter().map(|&x| i.concepts[x].as_str()).collect();
            assert_eq!(pos, BTreeSet::from(["dog", "hawk", "shark"]));
        }
    }

    #[test]
    fn unsatisfiable_names_the_property() {
        let mut db = PropertyDB::new();
        for g in 0..3 {
            db.add_fact(&format!("p{g}"), "x");
            db.add_group_member("x", g, &format!("p{g}"));
        }
        for i in 0..8 {
            db.add_fact(&format!("o{i}"), "shared");
        }
        match build_outlier_benchmark(&db, "x", 1, 0) {
            Err(Error::Unsatisfiable { property, .. }) => assert_eq!(property, "x"),
            other => panic!("{other:?}"),
        }
        assert!(build_outlier_benchmark(&db, "missing", 1, 0).is_err());
    }

    #[test]
    fn ten_properties_give_a_thousand() {
        let mut db = PropertyDB::new();
        for p in 0..10 {
            for g in 0..3 {
                let c = format!("c{p}_{g}");
                db.add_fact(&c, &format!("prop{p}"));
                db.add_group_member(&format!("prop{p}"), g, &c);
            }
        }
        for i in 0..10 {
            db.add_fact(&format!("o{i}"), &format!("u{i}"));
        }
        let props: Vec<String> = (0..10).map(|p| format!("prop{p}")).collect();
        assert_eq!(build_benchmark(&db, &props, 100, 1).unwrap().len(), 1000);
    }

    #[test]
    fn benchmark_jsonl_round_trip() {
        let db = db();
        let inst = build_outlier_benchmark(&db, "is animal", 5, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.jsonl");
        write_benchmark(&path, &inst).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["concepts"].as_array().unwrap().len(), 10);
        assert_eq!(read_benchmark(&path).unwrap(), inst);
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = crate::linalg::norm(v);
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn identical_positives_are_found() {
        // positives at 2, 5, 7 share a direction; outliers are near-orthogonal axes
        let mut vecs: Vec<Vec<f64>> = Vec::new();
        let mut axis = 0;
        for i in 0..10 {
            let mut v = vec![0.01; 9];
            if [2, 5, 7].contains(&i) {
                v[8] = 1.0;
                v[0] = 0.3;
            } else {
                v[axis] = 1.0;
                axis += 1;
            }
            vecs.push(unit(&v));
        }
        let refs: Vec<&[f64]> = vecs.iter().map(|v| v.as_slice()).collect();
        let p = detect_outliers_single(&refs).unwrap();
        assert_eq!(p.members, [2, 5, 7]);
        // top score is 1 - cos(positive, most similar outlier)
        let best_out = (0..10)
            .filter(|i| ![2, 5, 7].contains(i))
            .map(|i| cosine(&vecs[2], &vecs[i]).unwrap())
            .fold(f64::MIN, f64::max);
        assert!((p.top_score - (1.0 - best_out)).abs() < 1e-12);
    }

    #[test]
    fn all_identical_vectors_tie_break() {
        let v = vec![0.6, 0.8];
        let refs: Vec<&[f64]> = (0..10).map(|_| v.as_slice()).collect();
        let p = detect_outliers_single(&refs).unwrap();
        assert_eq!(p.top_score, 0.0);
        assert_eq!(p.members, [0, 1, 2]);
        let zero = [0.0, 0.0];
        let mut bad = refs.clone();
        bad[4] = &zero;
        assert!(matches!(detect_outliers_single(&bad), Err(Error::Degenerate(_))));
    }

    #[test]
    fn exact_match_is_set_equality() {
        assert!(exact_match(&[1, 4, 7], &[7, 1, 4]));
        assert!(!exact_match(&[1, 4, 6], &[7, 1, 4]));
    }

    #[test]
    fn multi_with_one_facet_equals_single() {
        let mut rng = seeded_rng(2);
        for _ in 0..50 {
            let m = Matrix::from_vec(10, 4, (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let refs: Vec<&[f64]> = m.iter_rows().collect();
            let single = detect_outliers_single(&refs).unwrap();
            let fv = FacetedConceptVecs::single(m.clone());
            let (multi, facet) = detect_outliers_multi(&fv, &(0..10).collect::<Vec<_>>()).unwrap();
            assert_eq!(facet, 0);
            assert_eq!(multi, single);
        }
    }

    #[test]
    fn positives_sharing_block_two_win_in_facet_two() {
        // 3 facets over 24 coordinates, 8 per block; positives agree only in
        // block 2, where outliers have no weight on the shared direction
        let mut rng = seeded_rng(5);
        let positives = [1, 4, 8];
        let mut concepts = Matrix::zeros(0, 24);
        for i in 0..10 {
            let mut v: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if positives.contains(&i) {
                v[16..24].copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
            } else {
                v[16] = 0.0;
            }
            concepts.push_row(&unit(&v));
        }
        let mut vecs = Vec::new();
        for j in 0..3 {
            let mut m = Matrix::zeros(0, 24);
            for c in 0..10 {
                let mut v = vec![0.0; 24];
                v[8 * j..8 * j + 8].copy_from_slice(&concepts.row(c)[8 * j..8 * j + 8]);
                m.push_row(&unit(&v));
            }
            vecs.push(m);
        }
        let fv = FacetedConceptVecs {
            degenerate: vec![vec![false; 10]; 3],
            vecs,
        };
        let ids: Vec<usize> = (0..10).collect();
        let (pred, facet) = detect_outliers_multi(&fv, &ids).unwrap();
        // brute force over facets
        let scores: Vec<f64> = (0..3)
            .map(|j| {
                let refs: Vec<&[f64]> = fv.vecs[j].iter_rows().collect();
                detect_outliers_single(&refs).unwrap().top_score
            })
            .collect();
        let argmax = (0..3).fold(0, |b, j| if scores[j] > scores[b] { j } else { b });
        assert_eq!(facet, argmax);
        assert_eq!(facet, 2);
        assert!(exact_match(&pred.members, &positives));
    }

    #[test]
    fn equal_top_scores_pick_lower_facet() {
        let m = Matrix::from_vec(10, 3, (0..30).map(|i| ((i * 7 % 11) as f64) - 5.0).collect());
        let fv = FacetedConceptVecs {
            vecs: vec![m.clone(), m.clone()],
            degenerate: vec![vec![false; 10]; 2],
        };
        let (_, facet) = detect_outliers_multi(&fv, &(0..10).collect::<Vec<_>>()).unwrap();
        assert_eq!(facet, 0);
        let all_deg = FacetedConceptVecs {
            vecs: vec![m],
            degenerate: vec![vec![true; 10]],
        };
        assert!(detect_outliers_multi(&all_deg, &(0..10).collect::<Vec<_>>()).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariance(seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            let vecs: Vec<Vec<f64>> = (0..10).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let mut perm: Vec<usize> = (0..10).collect();
            perm.shuffle(&mut rng);
            let a = detect_outliers_single(&vecs.iter().map(|v| v.as_slice()).collect::<Vec<_>>()).unwrap();
            let permuted: Vec<&[f64]> = perm.iter().map(|&i| vecs[i].as_slice()).collect();
            let b = detect_outliers_single(&permuted).unwrap();
            let mut back = b.members.map(|m| perm[m]);
            back.sort_unstable();
            prop_assert_eq!(a.members, back);
        }
    }
}
