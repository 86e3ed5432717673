use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{seeded_rng, LabeledPair};
use crate::error::{Error, Result};

/// Fraction of each fold's training pairs moved to validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Test concepts never appear in training.
    Concept,
    /// Test properties never appear in training.
    Property,
    /// Concept folds x property folds; a test cell shares neither with its training pairs.
    ConceptPlusProperty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub folds: usize,
    pub seed: u64,
    /// Concept mode only, with `folds == 1`: use exactly these concepts as test.
    pub fixed_test_concepts: Option<Vec<usize>>,
}

impl SplitSpec {
    pub fn new(mode: SplitMode, folds: usize, seed: u64) -> Self {
        Self {
            mode,
            folds,
            seed,
            fixed_test_concepts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    /// `"3"` for one-dimensional folds, `"1x2"` for concept x property cells.
    pub name: String,
    pub train: Vec<LabeledPair>,
    pub validation: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

fn distinct_in_order(items: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut seen = HashSet::new();
    items.filter(|x| seen.insert(*x)).collect()
}

/// Shuffles `ids` and deals them round-robin into `folds` groups.
fn deal(ids: &[usize], folds: usize, seed: u64, what: &str) -> Result<Vec<HashSet<usize>>> {
    if ids.len() < folds {
        return Err(Error::Split(format!(
            "{} distinct {what} cannot fill {folds} folds",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut seeded_rng(seed));
    let mut groups = vec![HashSet::new(); folds];
    for (i, id) in shuffled.into_iter().enumerate() {
        groups[i % folds].insert(id);
    }
    Ok(groups)
}

fn carve_validation(train: Vec<LabeledPair>, seed: u64) -> (Vec<LabeledPair>, Vec<LabeledPair>) {
    let n_val = (train.len() as f64 * VALIDATION_FRACTION).round() as usize;
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let val_set: HashSet<usize> = idx.into_iter().take(n_val).collect();
    let (mut kept, mut val) = (Vec::new(), Vec::new());
    for (i, p) in train.into_iter().enumerate() {
        if val_set.contains(&i) {
            val.push(p);
        } else {
            kept.push(p);
        }
    }
    (kept, val)
}

/// Partitions labeled pairs into (train, validation, test) folds.
///
/// Pairs in a concept x property grid that share a concept or a property
/// with the test cell are dropped from that fold's training data.
pub fn make_splits(labeled: &[LabeledPair], spec: &SplitSpec) -> Result<Vec<Fold>> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput("no labeled pairs to split".into()));
    }
    let concepts = distinct_in_order(labeled.iter().map(|p| p.concept));
    let properties = distinct_in_order(labeled.iter().map(|p| p.property));

    // (name, is_test, is_train) per fold
    type Cell = (
        String,
        Box<dyn Fn(&LabeledPair) -> bool>,
        Box<dyn Fn(&LabeledPair) -> bool>,
    );
    let mut cells: Vec<Cell> = Vec::new();

    match spec.mode {
        SplitMode::Concept if spec.folds == 1 => {
            let fixed: HashSet<usize> = spec
                .fixed_test_concepts
                .as_ref()
                .ok_or_else(|| {
                    Error::Split("a single concept fold needs an explicit test concept list".into())
                })?
                .iter()
                .copied()
                .collect();
            let f2 = fixed.clone();
            cells.push((
                "fixed".into(),
                Box::new(move |p| fixed.contains(&p.concept)),
                Box::new(move |p| !f2.contains(&p.concept)),
            ));
        }
        SplitMode::Concept | SplitMode::Property => {
            if spec.folds < 2 {
                return Err(Error::Split("cross-validation needs at least 2 folds".into()));
            }
            if spec.fixed_test_concepts.is_some() {
                return Err(Error::Split(
                    "fixed test concepts only apply to a single concept fold".into(),
                ));
            }
            let by_concept = spec.mode == SplitMode::Concept;
            let (ids, what) = if by_concept {
                (&concepts, "concepts")
            } else {
                (&properties, "properties")
            };
            let groups = deal(ids, spec.folds, spec.seed, what)?;
            for (i, g) in groups.into_iter().enumerate() {
                let key = move |p: &LabeledPair| if by_concept { p.concept } else { p.property };
                let g2 = g.clone();
                cells.push((
                    i.to_string(),
                    Box::new(move |p| g.contains(&key(p))),
                    Box::new(move |p| !g2.contains(&key(p))),
                ));
            }
        }
        SplitMode::ConceptPlusProperty => {
            if spec.folds < 2 {
                return Err(Error::Split("cross-validation needs at least 2 folds".into()));
            }
            let cg = deal(&concepts, spec.folds, spec.seed, "concepts")?;
            let pg = deal(
                &properties,
                spec.folds,
                spec.seed ^ 0x9e37_79b9_7f4a_7c15,
                "properties",
            )?;
            for (i, c) in cg.iter().enumerate() {
                for (j, p) in pg.iter().enumerate() {
                    let (c1, p1) = (c.clone(), p.clone());
                    let (c2, p2) = (c.clone(), p.clone());
                    cells.push((
                        format!("{i}x{j}"),
                        Box::new(move |x| c1.contains(&x.concept) && p1.contains(&x.property)),
                        Box::new(move |x| !c2.contains(&x.concept) && !p2.contains(&x.property)),
                    ));
                }
            }
        }
    }

    let mut folds = Vec::with_capacity(cells.len());
    for (k, (name, is_test, is_train)) in cells.into_iter().enumerate() {
        let test: Vec<_> = labeled.iter().copied().filter(|p| is_test(p)).collect();
        let train: Vec<_> = labeled.iter().copied().filter(|p| is_train(p)).collect();
        if test.is_empty() || train.is_empty() {
            return Err(Error::Split(format!(
                "fold {name} has an empty train or test set"
            )));
        }
        let (train, validation) = carve_validation(train, spec.seed.wrapping_add(1 + k as u64));
        folds.push(Fold {
            name,
            train,
            validation,
            test,
        });
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(nc: usize, np: usize) -> Vec<LabeledPair> {
        let mut v = Vec::new();
        for c in 0..nc {
            for p in 0..np {
                v.push(LabeledPair {
                    concept: c,
                    property: p,
                    label: (c + p) % 3 == 0,
                });
            }
        }
        v
    }

    fn ids<F: Fn(&LabeledPair) -> usize>(v: &[LabeledPair], f: F) -> HashSet<usize> {
        v.iter().map(f).collect()
    }

    #[test]
    fn property_folds_of_two() {
        let data = grid(4, 10);
        let folds = make_splits(&data, &SplitSpec::new(SplitMode::Property, 5, 1)).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            let test_p = ids(&f.test, |p| p.property);
            assert_eq!(test_p.len(), 2);
            let mut train_p = ids(&f.train, |p| p.property);
            train_p.extend(ids(&f.validation, |p| p.property));
            assert_eq!(train_p.len(), 8);
            assert!(test_p.is_disjoint(&train_p));
        }
    }

    #[test]
    fn validation_is_a_fifth_of_train() {
        let data = grid(10, 10);
        let folds = make_splits(&data, &SplitSpec::new(SplitMode::Concept, 5, 9)).unwrap();
        for f in folds {
            // 80 pairs outside the test fold, 16 of them validation
            assert_eq!(f.validation.len(), 16);
            assert_eq!(f.train.len(), 64);
        }
    }

    #[test]
    fn fixed_concept_split_passes_through() {
        let data = grid(5, 3);
        let mut spec = SplitSpec::new(SplitMode::Concept, 1, 0);
        spec.fixed_test_concepts = Some(vec![1, 3]);
        let folds = make_splits(&data, &spec).unwrap();
        assert_eq!(folds.len(), 1);
        assert_eq!(ids(&folds[0].test, |p| p.concept), HashSet::from([1, 3]));
        assert_eq!(folds[0].train.len() + folds[0].validation.len(), 9);
        assert!(make_splits(&data, &SplitSpec::new(SplitMode::Concept, 1, 0)).is_err());
    }

    #[test]
    fn too_few_items_for_folds() {
        let data = grid(2, 2);
        assert!(matches!(
            make_splits(&data, &SplitSpec::new(SplitMode::Property, 5, 0)),
            Err(Error::Split(_))
        ));
    }

    fn assert_disjoint(folds: &[Fold], mode: SplitMode) -> std::result::Result<(), TestCaseError> {
        for f in folds {
            let train: Vec<_> = f.train.iter().chain(&f.validation).copied().collect();
            let tc = ids(&train, |p| p.concept);
            let tp = ids(&train, |p| p.property);
            for t in &f.test {
                match mode {
                    SplitMode::Concept => prop_assert!(!tc.contains(&t.concept)),
                    SplitMode::Property => prop_assert!(!tp.contains(&t.property)),
                    SplitMode::ConceptPlusProperty => {
                        prop_assert!(!tc.contains(&t.concept));
                        prop_assert!(!tp.contains(&t.property));
                    }
                }
            }
        }
        Ok(())
    }

    proptest! {
        #[test]
        fn disjointness_holds_for_every_pair(
            nc in 3usize..12, np in 3usize..12, seed in any::<u64>(), mode in 0u8..3,
        ) {
            let (mode, folds) = match mode {
                0 => (SplitMode::Concept, 3),
                1 => (SplitMode::Property, 3),
                _ => (SplitMode::ConceptPlusProperty, 3),
            };
            let data = grid(nc, np);
            let out = make_splits(&data, &SplitSpec::new(mode, folds, seed)).unwrap();
            prop_assert_eq!(out.len(), if mode == SplitMode::ConceptPlusProperty { 9 } else { 3 });
            assert_disjoint(&out, mode)?;
        }
    }
}
