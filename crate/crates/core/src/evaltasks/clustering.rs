//! Affinity propagation and the cluster-label augmentations built from it.

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::seeded_rng;
use crate::error::{Error, Result};
use crate::facets::FacetedConceptVecs;
use crate::linalg::{cosine, Matrix};

/// Relative scale of the tie-breaking noise added to similarities.
pub const TIE_NOISE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    /// Quantile of the off-diagonal similarities, in [0, 1].
    Quantile(f64),
    Value(f64),
    PerItem(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityConfig {
    pub preference: Preference,
    pub damping: f64,
    pub max_iters: usize,
    pub convergence_window: usize,
    /// Seed of the tie-breaking noise added to the similarities.
    pub seed: u64,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        Self {
            preference: Preference::Quantile(0.5),
            damping: 0.9,
            max_iters: 1000,
            convergence_window: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    /// Exemplar item indices, ascending.
    pub exemplars: Vec<usize>,
    /// Exemplar of each item.
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl Clustering {
    /// Item indices grouped by exemplar, exemplars ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &e) in self.assignments.iter().enumerate() {
            by.entry(e).or_default().push(i);
        }
        by.into_values().collect()
    }
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Responsibility / availability message passing with damping.
///
/// Exemplars are the items with positive self-responsibility plus
/// self-availability; every other item joins its most similar exemplar.
/// Hitting `max_iters` with exemplars present returns `converged: false`.
pub fn affinity_propagation(similarity: &Matrix, cfg: &AffinityConfig) -> Result<Clustering> {
    let n = similarity.rows();
    if n == 0 || similarity.cols() != n {
        return Err(Error::InvalidArgument(format!(
            "similarity must be square and non-empty, got {:?}",
            similarity.shape()
        )));
    }
    if !(0.5..1.0).contains(&cfg.damping) {
        return Err(Error::InvalidArgument(format!(
            "damping must lie in [0.5, 1), got {}",
            cfg.damping
        )));
    }
    if cfg.convergence_window == 0 {
        return Err(Error::InvalidArgument(
            "convergence_window must be at least 1".into(),
        ));
    }
    if !similarity.is_finite() {
        return Err(Error::NonFinite(
            "similarity matrix has non-finite entries".into(),
        ));
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (similarity.row(i)[j], similarity.row(j)[i]);
            if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "similarity is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if n == 1 {
        return Ok(Clustering {
            exemplars: vec![0],
            assignments: vec![0],
            iterations: 0,
            converged: true,
        });
    }
    let prefs: Vec<f64> = match &cfg.preference {
        Preference::Quantile(q) => {
            if !(0.0..=1.0).contains(q) {
                return Err(Error::InvalidArgument(format!(
                    "preference quantile {q} outside [0, 1]"
                )));
            }
            let off: Vec<f64> = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| similarity.row(i)[j])
                .collect();
            vec![quantile(&off, *q); n]
        }
        Preference::Value(v) => vec![*v; n],
        Preference::PerItem(v) => {
            if v.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{} preferences for {n} items",
                    v.len()
                )));
            }
            v.clone()
        }
    };

    let mut s = similarity.clone();
    for (i, p) in prefs.iter().enumerate() {
        s.row_mut(i)[i] = *p;
    }
    // seeded noise well above rounding level, so ties between duplicated
    // points are broken by the seed rather than by summation order
    let mut rng = seeded_rng(cfg.seed);
    for x in s.as_mut_slice() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *x += TIE_NOISE * (x.abs() + 1.0) * z;
    }

    let lam = cfg.damping;
    let mut r = Matrix::zeros(n, n);
    let mut a = Matrix::zeros(n, n);
    let window = cfg.convergence_window;
    let mut history = vec![vec![false; window]; n];
    let mut is_exemplar = vec![false; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut tmp = vec![0.0; n];
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        for i in 0..n {
            let (mut first, mut first_k, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a.row(i)[k] + s.row(i)[k];
                if v > first {
                    second = first;
                    first = v;
                    first_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let max_other = if k == first_k { second } else { first };
                let new = s.row(i)[k] - max_other;
                let cell = &mut r.row_mut(i)[k];
                *cell = lam * *cell + (1.0 - lam) * new;
            }
        }
        for k in 0..n {
            let mut col_sum = 0.0;
            for i in 0..n {
                let v = r.row(i)[k];
                tmp[i] = if i == k { v } else { v.max(0.0) };
                col_sum += tmp[i];
            }
            for i in 0..n {
                let new = if i == k {
                    col_sum - tmp[k]
                } else {
                    (col_sum - tmp[i]).min(0.0)
                };
                let cell = &mut a.row_mut(i)[k];
                *cell = lam * *cell + (1.0 - lam) * new;
            }
        }
        for k in 0..n {
            is_exemplar[k] = a.row(k)[k] + r.row(k)[k] > 0.0;
            history[k][it % window] = is_exemplar[k];
        }
        if it + 1 >= window {
            let stable = history
                .iter()
                .all(|h| h.iter().all(|x| *x) || h.iter().all(|x| !*x));
            if stable && is_exemplar.iter().any(|x| *x) {
                converged = true;
                break;
            }
        }
    }
    let exemplars: Vec<usize> = (0..n).filter(|&k| is_exemplar[k]).collect();
    if exemplars.is_empty() {
        return Err(Error::NoExemplars { iters: iterations });
    }
    let assignments = (0..n)
        .map(|i| {
            if is_exemplar[i] {
                return i;
            }
            let mut best = exemplars[0];
            for &e in &exemplars[1..] {
                if similarity.row(i)[e] > similarity.row(i)[best] {
                    best = e;
                }
            }
            best
        })
        .collect();
    Ok(Clustering {
        exemplars,
        assignments,
        iterations,
        converged,
    })
}

fn cosine_matrix(vectors: &[&[f64]]) -> Matrix {
    let n = vectors.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m.row_mut(i)[i] = 1.0;
        for j in i + 1..n {
            let c = cosine(vectors[i], vectors[j]).unwrap_or(0.0);
            m.row_mut(i)[j] = c;
            m.row_mut(j)[i] = c;
        }
    }
    m
}

/// A clustering over a subset of concepts. `items[i]` is the concept id of
/// clustering index `i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FacetClustering {
    pub facet: Option<usize>,
    pub items: Vec<usize>,
    pub clustering: Clustering,
}

/// Clusters `concepts` by cosine similarity of their rows in `vectors`.
pub fn clu(vectors: &Matrix, concepts: &[usize], cfg: &AffinityConfig) -> Result<FacetClustering> {
    let refs: Vec<&[f64]> = concepts.iter().map(|&c| vectors.row(c)).collect();
    if let Some(i) = refs.iter().position(|v| v.iter().all(|x| *x == 0.0)) {
        return Err(Error::Degenerate(format!(
            "concept {} has a zero vector",
            concepts[i]
        )));
    }
    let clustering = affinity_propagation(&cosine_matrix(&refs), cfg)?;
    Ok(FacetClustering {
        facet: None,
        items: concepts.to_vec(),
        clustering,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCluResult {
    /// Successful clusterings in facet order.
    pub clusterings: Vec<FacetClustering>,
    /// Excluded degenerate concepts and skipped facets.
    pub warnings: Vec<String>,
}

/// One affinity-propagation run per facet over facet-specific vectors.
/// A facet whose run fails is skipped and noted in `warnings`.
pub fn mclu(faceted: &FacetedConceptVecs, concepts: &[usize], cfg: &AffinityConfig) -> MCluResult {
    let per: Vec<(Option<FacetClustering>, Vec<String>)> = (0..faceted.k())
        .into_par_iter()
        .map(|j| {
            let mut warnings = Vec::new();
            let items: Vec<usize> = concepts
                .iter()
                .copied()
                .filter(|&c| {
                    let bad = faceted.degenerate[j][c];
                    if bad {
                        warnings.push(format!("facet {j}: concept {c} excluded (degenerate vector)"));
                    }
                    !bad
                })
                .collect();
            if items.is_empty() {
                warnings.push(format!("facet {j}: skipped, no usable concepts"));
                return (None, warnings);
            }
            let refs: Vec<&[f64]> = items.iter().map(|&c| faceted.vecs[j].row(c)).collect();
            match affinity_propagation(&cosine_matrix(&refs), cfg) {
                Ok(clustering) => (
                    Some(FacetClustering {
                        facet: Some(j),
                        items,
                        clustering,
                    }),
                    warnings,
                ),
                Err(e) => {
                    warnings.push(format!("facet {j}: skipped, {e}"));
                    (None, warnings)
                }
            }
        })
        .collect();
    let mut out = MCluResult {
        clusterings: Vec::new(),
        warnings: Vec::new(),
    };
    for (c, w) in per {
        out.clusterings.extend(c);
        out.warnings.extend(w);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentFormat {
    /// `item<TAB>cluster_<ex>` lines.
    Labels,
    /// `X SUBCLASS_OF Y_cluster_<facet>_<ex>` lines.
    Rules,
}

fn cluster_tag(facet: Option<usize>, exemplar: usize) -> String {
    match facet {
        Some(f) => format!("cluster_{f}_{exemplar}"),
        None => format!("cluster_{exemplar}"),
    }
}

/// Renders a clustering; `<ex>` is the exemplar's index within the clustering.
pub fn format_augmentation(
    fc: &FacetClustering,
    names: &[String],
    format: AugmentFormat,
    skip_singletons: bool,
) -> String {
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &e in &fc.clustering.assignments {
        *sizes.entry(e).or_default() += 1;
    }
    let mut out = String::new();
    for (i, &e) in fc.clustering.assignments.iter().enumerate() {
        if skip_singletons && sizes[&e] == 1 {
            continue;
        }
        let name = &names[fc.items[i]];
        let tag = cluster_tag(fc.facet, e);
        match format {
            AugmentFormat::Labels => out.push_str(&format!("{name}\t{tag}\n")),
            AugmentFormat::Rules => {
                out.push_str(&format!("{} SUBCLASS_OF Y_{tag}\n", name.replace(' ', "_")))
            }
        }
    }
    out
}

pub fn write_augmentation(
    path: &Path,
    fc: &FacetClustering,
    names: &[String],
    format: AugmentFormat,
    skip_singletons: bool,
) -> Result<()> {
    std::fs::write(path, format_augmentation(fc, names, format, skip_singletons))
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentLine {
    pub item: String,
    pub facet: Option<usize>,
    pub exemplar: usize,
}

fn parse_tag(tag: &str) -> Option<(Option<usize>, usize)> {
    let rest = tag.strip_prefix("cluster_")?;
    match rest.split_once('_') {
        Some((f, e)) => Some((Some(f.parse().ok()?), e.parse().ok()?)),
        None => Some((None, rest.parse().ok()?)),
    }
}

/// Reads back either augmentation format.
pub fn parse_augmentation(text: &str, format: AugmentFormat) -> Result<Vec<AugmentLine>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            AugmentFormat::Labels => line
                .split_once('\t')
                .and_then(|(item, tag)| parse_tag(tag).map(|t| (item.to_string(), t))),
            AugmentFormat::Rules => line.split_once(" SUBCLASS_OF ").and_then(|(x, y)| {
                y.strip_prefix("Y_")
                    .and_then(parse_tag)
                    .map(|t| (x.to_string(), t))
            }),
        };
        let (item, (facet, exemplar)) = parsed.ok_or_else(|| {
            Error::InvalidArgument(format!("line {}: unrecognized augmentation line '{line}'", i + 1))
        })?;
        out.push(AugmentLine {
            item,
            facet,
            exemplar,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::seeded_rng;
    use rand::Rng;
    use std::collections::BTreeSet;

    fn duplicate_pairs() -> Matrix {
        // points a, a', b, b' with a orthogonal to b
        let pts = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        cosine_matrix(&refs)
    }

    #[test]
    fn single_item() {
        let c = affinity_propagation(&Matrix::from_rows(&[vec![1.0]]), &AffinityConfig::default()).unwrap();
        assert_eq!(c.exemplars, vec![0]);
        assert_eq!(c.assignments, vec![0]);
    }

    #[test]
    fn duplicate_pairs_form_two_clusters() {
        // a numpy transcription of the same updates gives one exemplar per
        // pair for every one of 200 noise seeds
        for seed in 0..50 {
            let cfg = AffinityConfig {
                seed,
                ..Default::default()
            };
            let c = affinity_propagation(&duplicate_pairs(), &cfg).unwrap();
            assert!(c.converged);
            assert_eq!(c.exemplars.len(), 2, "seed {seed}");
            assert_eq!(c.assignments[0], c.assignments[1]);
            assert_eq!(c.assignments[2], c.assignments[3]);
            assert_ne!(c.assignments[0], c.assignments[2]);
        }
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[0.0, 10.0], 0.7), 7.0);
    }

    #[test]
    fn self_assignment_and_determinism() {
        let mut rng = seeded_rng(1);
        for t in 0..20 {
            let n = rng.gen_range(2..15);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            let s = cosine_matrix(&refs);
            let cfg = AffinityConfig {
                preference: Preference::Quantile(0.5 + 0.1 * (t % 5) as f64),
                ..Default::default()
            };
            let Ok(c) = affinity_propagation(&s, &cfg) else {
                continue;
            };
            for &e in &c.exemplars {
                assert!(e < n);
                assert_eq!(c.assignments[e], e);
            }
            for &a in &c.assignments {
                assert!(c.exemplars.contains(&a));
            }
            assert_eq!(affinity_propagation(&s, &cfg).unwrap(), c);
        }
    }

    #[test]
    fn bad_inputs() {
        let s = duplicate_pairs();
        let bad_damping = AffinityConfig {
            damping: 1.0,
            ..Default::default()
        };
        assert!(affinity_propagation(&s, &bad_damping).is_err());
        let asym = Matrix::from_rows(&[vec![1.0, 0.2], vec![0.5, 1.0]]);
        assert!(affinity_propagation(&asym, &AffinityConfig::default()).is_err());
        let very_low = AffinityConfig {
            preference: Preference::Value(-1e9),
            max_iters: 5,
            convergence_window: 2,
            ..Default::default()
        };
        assert!(matches!(
            affinity_propagation(&s, &very_low),
            Err(Error::NoExemplars { .. })
        ));
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("item {i}")).collect()
    }

    #[test]
    fn three_items_one_cluster_labels() {
        let fc = FacetClustering {
            facet: None,
            items: vec![0, 1, 2],
            clustering: Clustering {
                exemplars: vec![1],
                assignments: vec![1, 1, 1],
                iterations: 1,
                converged: true,
            },
        };
        let text = format_augmentation(&fc, &names(3), AugmentFormat::Labels, false);
        assert_eq!(text, "item 0\tcluster_1\nitem 1\tcluster_1\nitem 2\tcluster_1\n");
        let rules = format_augmentation(&fc, &names(3), AugmentFormat::Rules, false);
        assert_eq!(rules.lines().next().unwrap(), "item_0 SUBCLASS_OF Y_cluster_1");
    }

    #[test]
    fn rules_round_trip_reconstructs_partition() {
        let mut rng = seeded_rng(4);
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let mut v: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..0.1)).collect();
                v[i % 3] += 1.0;
                v
            })
            .collect();
        let m = Matrix::from_rows(&pts);
        let items: Vec<usize> = (0..12).collect();
        let mut fc = clu(&m, &items, &AffinityConfig::default()).unwrap();
        fc.facet = Some(3);
        let nm = names(12);
        let text = format_augmentation(&fc, &nm, AugmentFormat::Rules, false);
        let parsed = parse_augmentation(&text, AugmentFormat::Rules).unwrap();
        let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for l in &parsed {
            assert_eq!(l.facet, Some(3));
            groups.entry(l.exemplar).or_default().insert(l.item.clone());
        }
        let expected: BTreeSet<BTreeSet<String>> = fc
            .clustering
            .clusters()
            .into_iter()
            .map(|c| c.into_iter().map(|i| nm[i].replace(' ', "_")).collect())
            .collect();
        assert_eq!(groups.into_values().collect::<BTreeSet<_>>(), expected);
    }

    #[test]
    fn singletons_can_be_skipped() {
        let fc = FacetClustering {
            facet: Some(0),
            items: vec![0, 1, 2],
            clustering: Clustering {
                exemplars: vec![0, 2],
                assignments: vec![0, 0, 2],
                iterations: 1,
                converged: true,
            },
        };
        let text = format_augmentation(&fc, &names(3), AugmentFormat::Labels, true);
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("cluster_0_0"));
    }

    #[test]
    fn mclu_namespaces_and_reduction() {
        // two facets: facet 0 groups by first coordinate sign, facet 1 by second
        let mut v0 = Matrix::zeros(0, 2);
        let mut v1 = Matrix::zeros(0, 2);
        for i in 0..8 {
            let a = if i % 2 == 0 { 1.0 } else { -1.0 };
            let b = if i < 4 { 1.0 } else { -1.0 };
            v0.push_row(&[a, 0.05 * i as f64]);
            v1.push_row(&[0.05 * i as f64, b]);
        }
        let fv = FacetedConceptVecs {
            vecs: vec![v0.clone(), v1],
            degenerate: vec![vec![false; 8]; 2],
        };
        let items: Vec<usize> = (0..8).collect();
        let out = mclu(&fv, &items, &AffinityConfig::default());
        assert_eq!(out.clusterings.len(), 2);
        let nm = names(8);
        let tags: Vec<BTreeSet<String>> = out
            .clusterings
            .iter()
            .map(|fc| {
                parse_augmentation(
                    &format_augmentation(fc, &nm, AugmentFormat::Labels, false),
                    AugmentFormat::Labels,
                )
                .unwrap()
                .into_iter()
                .map(|l| format!("{:?}_{}", l.facet, l.exemplar))
                .collect()
            })
            .collect();
        assert!(tags[0].is_disjoint(&tags[1]));
        // brute force: same cluster iff same sign on the facet's coordinate
        for (j, fc) in out.clusterings.iter().enumerate() {
            for a in 0..8 {
                for b in 0..8 {
                    let same = fc.clustering.assignments[a] == fc.clustering.assignments[b];
                    let truth = if j == 0 {
                        a % 2 == b % 2
                    } else {
                        (a < 4) == (b < 4)
                    };
                    assert_eq!(same, truth, "facet {j} items {a} {b}");
                }
            }
        }
        let single = mclu(
            &FacetedConceptVecs::single(v0.clone()),
            &items,
            &AffinityConfig::default(),
        );
        let plain = clu(&v0, &items, &AffinityConfig::default()).unwrap();
        assert_eq!(single.clusterings[0].clustering, plain.clustering);
    }

    #[test]
    fn mclu_records_degenerate_and_failed_facets() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0]]);
        let fv = FacetedConceptVecs {
            vecs: vec![m.clone(), m],
            degenerate: vec![vec![false, true, false], vec![true, true, true]],
        };
        let out = mclu(&fv, &[0, 1, 2], &AffinityConfig::default());
        assert_eq!(out.clusterings.len(), 1);
        assert_eq!(out.clusterings[0].items, vec![0, 2]);
        assert!(out.warnings.iter().any(|w| w.contains("facet 1: skipped")));
        assert!(out.warnings.iter().any(|w| w.contains("concept 1 excluded")));
    }
}
