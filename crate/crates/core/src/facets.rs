//! Facet extraction after training.
//!
//! Facet vectors of a property set are clustered with k-means; each cluster
//! acts as one facet and its mask is the plain sum of the member facet
//! vectors. A concept's facet-specific vector is its concept vector masked by
//! that sum and renormalized.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::seeded_rng;
use crate::encoders::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::linalg::{cosine, norm, Matrix};
use crate::objectives::{mask_and_normalize, MaskedVec};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    /// Inertia after each Lloyd iteration.
    pub inertia: Vec<f64>,
    pub iterations: usize,
    /// Times an empty cluster was refilled.
    pub repairs: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp<R: Rng>(x: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(0, x.cols());
    centroids.push_row(x.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centroids.row(0))).collect();
    while centroids.rows() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && t < *w {
                    chosen = i;
                    break;
                }
                t -= w;
            }
            // guard against rounding landing on a zero-weight tail
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|w| *w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.push_row(x.row(pick));
        let last = centroids.rows() - 1;
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centroids.row(last)));
        }
    }
    centroids
}

fn assign(x: &Matrix, centroids: &Matrix) -> Vec<usize> {
    (0..x.rows())
        .map(|i| {
            let mut best = (0, f64::INFINITY);
            for j in 0..centroids.rows() {
                let d = sq_dist(x.row(i), centroids.row(j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

/// Moves the farthest point of the largest cluster into each empty one.
fn repair_empty(x: &Matrix, centroids: &mut Matrix, assignments: &mut [usize]) -> usize {
    let k = centroids.rows();
    let mut repairs = 0;
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return repairs;
        };
        let largest = (0..k).fold(0, |b, j| if sizes[j] > sizes[b] { j } else { b });
        let mut far = (usize::MAX, -1.0);
        for (i, &a) in assignments.iter().enumerate() {
            if a == largest {
                let d = sq_dist(x.row(i), centroids.row(largest));
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        assignments[far.0] = empty;
        centroids.row_mut(empty).copy_from_slice(x.row(far.0));
        repairs += 1;
    }
}

fn update_centroids(x: &Matrix, assignments: &[usize], k: usize) -> Matrix {
    let d = x.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for j in 0..k {
        let c = counts[j] as f64;
        for s in sums.row_mut(j) {
            *s /= c;
        }
    }
    sums
}

fn inertia(x: &Matrix, centroids: &Matrix, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(x.row(i), centroids.row(a)))
        .sum()
}

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// shift drops below `tol` or `max_iters` is reached.
pub fn kmeans(vectors: &Matrix, k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KMeansResult> {
    let n = vectors.rows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} clusters from {n} vectors"
        )));
    }
    if !vectors.is_finite() {
        return Err(Error::NonFinite(
            "k-means input contains non-finite values".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut centroids = kmeans_pp(vectors, k, &mut rng);
    let mut assignments = vec![0; n];
    let mut history = Vec::new();
    let mut repairs = 0;
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        assignments = assign(vectors, &centroids);
        repairs += repair_empty(vectors, &mut centroids, &mut assignments);
        let next = update_centroids(vectors, &assignments, k);
        let shift = (0..k)
            .map(|j| sq_dist(next.row(j), centroids.row(j)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        history.push(inertia(vectors, &centroids, &assignments));
        if shift < tol {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia: history,
        iterations,
        repairs,
    })
}

/// Adjusted Rand index of two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut ra: BTreeMap<usize, u64> = BTreeMap::new();
    let mut rb: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let c2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&m| c2(m)).sum();
    let sa: f64 = ra.values().map(|&m| c2(m)).sum();
    let sb: f64 = rb.values().map(|&m| c2(m)).sum();
    let total = c2(n as u64);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = (sa + sb) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    /// Scale facet vectors to unit length before clustering.
    pub normalize: bool,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            normalize: false,
            max_iters: 300,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacetDecomposition {
    pub k: usize,
    /// Clustered property ids, parallel to `assignments`.
    pub properties: Vec<usize>,
    pub assignments: Vec<usize>,
    /// Row j is the sum of the facet vectors assigned to cluster j.
    pub mask_vecs: Matrix,
    pub centroids: Matrix,
    pub repairs: usize,
}

impl FacetDecomposition {
    pub fn members(&self, j: usize) -> Vec<usize> {
        self.properties
            .iter()
            .zip(&self.assignments)
            .filter(|(_, &a)| a == j)
            .map(|(&p, _)| p)
            .collect()
    }
}

/// Clusters the facet vectors of `property_set` into `k` facets.
pub fn decompose(
    space: &EmbeddingSpace,
    property_set: &[usize],
    k: usize,
    seed: u64,
    opts: &DecomposeOptions,
) -> Result<FacetDecomposition> {
    let d = space.dim();
    let mut raw = Matrix::zeros(0, d);
    let mut input = Matrix::zeros(0, d);
    for &p in property_set {
        if p >= space.facet_vecs.rows() {
            return Err(Error::InvalidArgument(format!("property id {p} out of range")));
        }
        let f = space.facet_vecs.row(p);
        raw.push_row(f);
        if opts.normalize {
            let n = norm(f);
            if n == 0.0 {
                return Err(Error::Degenerate(format!(
                    "facet vector of '{}' has zero norm",
                    space.properties.name(p)
                )));
            }
            input.push_row(&f.iter().map(|x| x / n).collect::<Vec<_>>());
        }
    }
    let km = kmeans(
        if opts.normalize { &input } else { &raw },
        k,
        seed,
        opts.max_iters,
        opts.tol,
    )?;
    let mut mask_vecs = Matrix::zeros(k, d);
    for (i, &a) in km.assignments.iter().enumerate() {
        for (m, v) in mask_vecs.row_mut(a).iter_mut().zip(raw.row(i)) {
            *m += v;
        }
    }
    Ok(FacetDecomposition {
        k,
        properties: property_set.to_vec(),
        assignments: km.assignments,
        mask_vecs,
        centroids: km.centroids,
        repairs: km.repairs,
    })
}

/// `normalize(Con(c) * mask_j)`, zero and flagged when the product vanishes.
pub fn facet_specific(
    space: &EmbeddingSpace,
    dec: &FacetDecomposition,
    concept: usize,
    j: usize,
    eps: f64,
) -> Result<MaskedVec> {
    if j >= dec.k {
        return Err(Error::InvalidArgument(format!(
            "facet {j} out of range (k = {})",
            dec.k
        )));
    }
    if concept >= space.concept_vecs.rows() {
        return Err(Error::InvalidArgument(format!(
            "concept id {concept} out of range"
        )));
    }
    Ok(mask_and_normalize(
        space.concept_vecs.row(concept),
        dec.mask_vecs.row(j),
        eps,
    ))
}

/// Facet-specific vectors of every concept, one matrix per facet.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetedConceptVecs {
    pub vecs: Vec<Matrix>,
    pub degenerate: Vec<Vec<bool>>,
}

impl FacetedConceptVecs {
    pub fn k(&self) -> usize {
        self.vecs.len()
    }

    /// A single facet holding the given vectors; none are degenerate.
    pub fn single(vectors: Matrix) -> Self {
        let n = vectors.rows();
        Self {
            vecs: vec![vectors],
            degenerate: vec![vec![false; n]],
        }
    }
}

pub fn faceted_concept_vecs(
    space: &EmbeddingSpace,
    dec: &FacetDecomposition,
    eps: f64,
) -> FacetedConceptVecs {
    let n = space.concept_vecs.rows();
    let per_facet: Vec<(Matrix, Vec<bool>)> = (0..dec.k)
        .into_par_iter()
        .map(|j| {
            let mut m = Matrix::zeros(0, space.dim());
            let mut flags = Vec::with_capacity(n);
            for c in 0..n {
                let mv = mask_and_normalize(space.concept_vecs.row(c), dec.mask_vecs.row(j), eps);
                m.push_row(&mv.vec);
                flags.push(mv.degenerate);
            }
            (m, flags)
        })
        .collect();
    let (vecs, degenerate) = per_facet.into_iter().unzip();
    FacetedConceptVecs { vecs, degenerate }
}

/// Nearest concepts to `concept` within facet `j`, by cosine, ties to lower id.
/// Concepts whose facet vector is degenerate are left out.
pub fn facet_neighbours(
    faceted: &FacetedConceptVecs,
    concept: usize,
    j: usize,
    top_n: usize,
) -> Result<Vec<(usize, f64)>> {
    if top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be at least 1".into()));
    }
    let m = faceted
        .vecs
        .get(j)
        .ok_or_else(|| Error::InvalidArgument(format!("facet {j} out of range")))?;
    if concept >= m.rows() {
        return Err(Error::InvalidArgument(format!(
            "concept id {concept} out of range"
        )));
    }
    if faceted.degenerate[j][concept] {
        return Err(Error::Degenerate(format!(
            "concept {concept} has a degenerate vector in facet {j}"
        )));
    }
    let q = m.row(concept);
    let mut ranked: Vec<(usize, f64)> = (0..m.rows())
        .filter(|&c| c != concept && !faceted.degenerate[j][c])
        .filter_map(|c| cosine(q, m.row(c)).map(|s| (c, s)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DecompositionFile {
    k: usize,
    assignments: BTreeMap<String, usize>,
    mask_vecs: Vec<Vec<f64>>,
    centroids: Vec<Vec<f64>>,
}

/// Writes `{k, assignments: {property: j}, mask_vecs, centroids}`.
pub fn save_decomposition(dec: &FacetDecomposition, space: &EmbeddingSpace, path: &Path) -> Result<()> {
    let file = DecompositionFile {
        k: dec.k,
        assignments: dec
            .properties
            .iter()
            .zip(&dec.assignments)
            .map(|(&p, &a)| (space.properties.name(p).to_string(), a))
            .collect(),
        mask_vecs: dec.mask_vecs.iter_rows().map(|r| r.to_vec()).collect(),
        centroids: dec.centroids.iter_rows().map(|r| r.to_vec()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_decomposition(path: &Path, space: &EmbeddingSpace) -> Result<FacetDecomposition> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DecompositionFile = serde_json::from_str(&text)?;
    let mut properties = Vec::new();
    let mut assignments = Vec::new();
    for (name, j) in &file.assignments {
        let p = space.properties.lookup(name).ok_or_else(|| {
            Error::VocabMismatch(format!(
                "decomposition property '{name}' is not in the vocabulary"
            ))
        })?;
        if *j >= file.k {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("cluster {j} out of range for k = {}", file.k),
            });
        }
        properties.push(p);
        assignments.push(*j);
    }
    let mask_vecs = Matrix::from_rows(&file.mask_vecs);
    if mask_vecs.shape() != (file.k, space.dim()) {
        return Err(Error::VocabMismatch(format!(
            "mask vectors have shape {:?}, expected ({}, {})",
            mask_vecs.shape(),
            file.k,
            space.dim()
        )));
    }
    Ok(FacetDecomposition {
        k: file.k,
        properties,
        assignments,
        mask_vecs,
        centroids: Matrix::from_rows(&file.centroids),
        repairs: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocab;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, per: usize) -> (Matrix, Vec<usize>) {
        let mut rng = seeded_rng(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut m = Matrix::zeros(0, 3);
        let mut truth = Vec::new();
        for i in 0..2 * per {
            let c = if i % 2 == 0 { 0.0 } else { 10.0 };
            m.push_row(&[
                c + noise.sample(&mut rng),
                c + noise.sample(&mut rng),
                noise.sample(&mut rng),
            ]);
            truth.push(i % 2);
        }
        (m, truth)
    }

    fn space_with(concepts: Matrix, facets: Matrix) -> EmbeddingSpace {
        let nc = concepts.rows();
        let np = facets.rows();
        EmbeddingSpace {
            concepts: Vocab::from_items((0..nc).map(|i| format!("c{i}"))),
            properties: Vocab::from_items((0..np).map(|i| format!("p{i}"))),
            property_vecs: facets.clone(),
            concept_vecs: concepts,
            facet_vecs: facets,
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]]);
        let r = kmeans(&m, 1, 0, 100, 1e-12).unwrap();
        assert_eq!(r.assignments, vec![0, 0, 0]);
        assert!((r.centroids.row(0)[0] - 3.0).abs() < 1e-12);
        assert!((r.centroids.row(0)[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0], vec![5.0, 5.0], vec![-1.0, 3.0]]);
        let r = kmeans(&m, 4, 3, 100, 1e-12).unwrap();
        let mut a = r.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3]);
        assert_eq!(*r.inertia.last().unwrap(), 0.0);
        assert!(kmeans(&m, 5, 0, 10, 1e-9).is_err());
    }

    #[test]
    fn separated_blobs_are_recovered() {
        for seed in 0..20 {
            let (m, truth) = blobs(seed, 25);
            let r = kmeans(&m, 2, seed, 100, 1e-10).unwrap();
            assert_eq!(adjusted_rand_index(&r.assignments, &truth), 1.0);
        }
    }

    #[test]
    fn identical_vectors_trigger_repair() {
        let m = Matrix::from_rows(&vec![vec![0.5, 0.5]; 6]);
        let r = kmeans(&m, 2, 0, 10, 1e-12).unwrap();
        assert!(r.repairs > 0);
        assert!(r.assignments.contains(&0) && r.assignments.contains(&1));
    }

    #[test]
    fn ari_reference_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        // reference values from sklearn.metrics.adjusted_rand_score
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]);
        assert!((v - 0.5714285714285714).abs() < 1e-12, "{v}");
        let v = adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 1, 2, 0, 1, 2]);
        assert!((v + 0.36363636363636365).abs() < 1e-12, "{v}");
    }

    #[test]
    fn decomposition_sums_members() {
        let facets = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.1, 0.1], vec![0.0, 2.0], vec![0.1, 2.1]]);
        let space = space_with(Matrix::from_rows(&[vec![0.6, 0.8]]), facets.clone());
        let dec = decompose(&space, &[0, 1, 2, 3], 2, 1, &DecomposeOptions::default()).unwrap();
        assert_eq!(dec.assignments[0], dec.assignments[1]);
        assert_eq!(dec.assignments[2], dec.assignments[3]);
        let j = dec.assignments[0];
        assert_eq!(dec.mask_vecs.row(j), &[1.0 + 1.1, 0.0 + 0.1]);
        assert_eq!(dec.members(j), vec![0, 1]);

        let singles = decompose(&space, &[0, 2], 2, 1, &DecomposeOptions::default()).unwrap();
        for (i, &p) in singles.properties.iter().enumerate() {
            assert_eq!(singles.mask_vecs.row(singles.assignments[i]), facets.row(p));
        }
    }

    #[test]
    fn facet_specific_examples() {
        let space = space_with(
            Matrix::from_rows(&[vec![0.6, 0.8]]),
            Matrix::from_rows(&[vec![2.0, 0.0]]),
        );
        let dec = FacetDecomposition {
            k: 2,
            properties: vec![0],
            assignments: vec![0],
            mask_vecs: Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 1.0]]),
            centroids: Matrix::zeros(2, 2),
            repairs: 0,
        };
        assert_eq!(
            facet_specific(&space, &dec, 0, 0, 1e-12).unwrap().vec,
            vec![1.0, 0.0]
        );
        let ones = facet_specific(&space, &dec, 0, 1, 1e-12).unwrap().vec;
        assert!((ones[0] - 0.6).abs() < 1e-15 && (ones[1] - 0.8).abs() < 1e-15);
        assert!(facet_specific(&space, &dec, 0, 2, 1e-12).is_err());
    }

    #[test]
    fn facet_specific_matches_naive_recomputation() {
        let mut rng = seeded_rng(11);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut concepts = Matrix::zeros(0, 6);
        for _ in 0..8 {
            let v: Vec<f64> = (0..6).map(|_| noise.sample(&mut rng)).collect();
            let n = norm(&v);
            concepts.push_row(&v.iter().map(|x| x / n).collect::<Vec<_>>());
        }
        let mut facets = Matrix::zeros(0, 6);
        for _ in 0..12 {
            facets.push_row(&(0..6).map(|_| noise.sample(&mut rng)).collect::<Vec<_>>());
        }
        let space = space_with(concepts, facets);
        let props: Vec<usize> = (0..12).collect();
        let dec = decompose(&space, &props, 3, 2, &DecomposeOptions::default()).unwrap();
        for j in 0..3 {
            let mut sum = vec![0.0; 6];
            for (i, &p) in props.iter().enumerate() {
                if dec.assignments[i] == j {
                    for t in 0..6 {
                        sum[t] += space.facet_vecs.row(p)[t];
                    }
                }
            }
            for c in 0..8 {
                let prod: Vec<f64> = (0..6).map(|t| space.concept_vecs.row(c)[t] * sum[t]).collect();
                let n = prod.iter().map(|x| x * x).sum::<f64>().sqrt();
                let got = facet_specific(&space, &dec, c, j, 1e-12).unwrap().vec;
                for t in 0..6 {
                    assert!((got[t] - prod[t] / n).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn neighbours_rank_and_tie_break() {
        let two = FacetedConceptVecs::single(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        assert_eq!(facet_neighbours(&two, 0, 0, 5).unwrap()[0].0, 1);

        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8], vec![0.6, 0.8], vec![0.0, 1.0]]);
        let fv = FacetedConceptVecs::single(m);
        let r: Vec<usize> = facet_neighbours(&fv, 0, 0, 3)
            .unwrap()
            .iter()
            .map(|x| x.0)
            .collect();
        assert_eq!(r, vec![1, 2, 3]);
        assert!(facet_neighbours(&fv, 0, 0, 0).is_err());

        let mut deg = fv.clone();
        deg.degenerate[0][0] = true;
        assert!(matches!(
            facet_neighbours(&deg, 0, 0, 2),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn block_structure_ranks_same_block_first() {
        // concepts 0..4 live on coordinates 0..2, 4..8 on 2..4 within facet 0
        let mut m = Matrix::zeros(0, 4);
        for i in 0..8 {
            let off = if i < 4 { 0 } else { 2 };
            let mut v = vec![0.05; 4];
            v[off] = 1.0 + 0.1 * i as f64;
            v[off + 1] = 1.0 - 0.05 * i as f64;
            let n = norm(&v);
            m.push_row(&v.iter().map(|x| x / n).collect::<Vec<_>>());
        }
        let fv = FacetedConceptVecs::single(m.clone());
        for q in 0..8 {
            let got = facet_neighbours(&fv, q, 0, 3).unwrap();
            let block = q / 4;
            assert!(got.iter().all(|(c, _)| c / 4 == block), "{q}: {got:?}");
            // brute force
            let mut all: Vec<(usize, f64)> = (0..8)
                .filter(|&c| c != q)
                .map(|c| (c, cosine(m.row(q), m.row(c)).unwrap()))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            assert_eq!(got, all[..3].to_vec());
        }
    }

    #[test]
    fn decomposition_json_round_trip() {
        let facets = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.1, 0.1], vec![0.0, 2.0]]);
        let space = space_with(Matrix::from_rows(&[vec![0.6, 0.8]]), facets);
        let dec = decompose(&space, &[0, 1, 2], 2, 4, &DecomposeOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dec.json");
        save_decomposition(&dec, &space, &path).unwrap();
        let back = load_decomposition(&path, &space).unwrap();
        assert_eq!(back.k, 2);
        assert_eq!(back.mask_vecs, dec.mask_vecs);
        for (p, a) in dec.properties.iter().zip(&dec.assignments) {
            let i = back.properties.iter().position(|x| x == p).unwrap();
            assert_eq!(back.assignments[i], *a);
        }
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(v["assignments"]["p0"].is_u64());
    }

    proptest! {
        #[test]
        fn kmeans_invariants(
            pts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 2..30),
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            prop_assume!(pts.len() >= k);
            let m = Matrix::from_rows(&pts);
            let r = kmeans(&m, k, seed, 50, 1e-12).unwrap();
            for w in r.inertia.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            let mut used = vec![false; k];
            for &a in &r.assignments { used[a] = true; }
            prop_assert!(used.iter().all(|u| *u));
            prop_assert_eq!(r.assignments.clone(), kmeans(&m, k, seed, 50, 1e-12).unwrap().assignments);
        }

        #[test]
        fn mask_rescaling_leaves_facet_vectors_unchanged(
            c in proptest::collection::vec(-1.0f64..1.0, 4),
            mask in proptest::collection::vec(-3.0f64..3.0, 4),
            s in 0.01f64..100.0,
        ) {
            let a = mask_and_normalize(&c, &mask, 1e-12);
            let scaled: Vec<f64> = mask.iter().map(|x| x * s).collect();
            let b = mask_and_normalize(&c, &scaled, 1e-12);
            prop_assume!(!a.degenerate && !b.degenerate);
            for (x, y) in a.vec.iter().zip(&b.vec) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
