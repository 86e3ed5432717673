//! Training objectives and their analytic gradients.
//!
//! * baseline bi-encoder loss: logistic loss on `Con(c) . Prop(p)`
//! * masked loss: the same with `MC(c, p) = (Con(c) * Facet(p)) / |Con(c) * Facet(p)|`
//! * InfoNCE facet loss on cosine similarities of facet vectors, temperature `tau`
//!
//! The `loss_*` functions evaluate each term directly from the encoders and
//! are the reference for [`finite_difference_check`]. [`grad_loss`] takes a
//! separate route: it caches encoder outputs per distinct id in the batch and
//! back-propagates once per id.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TrainingCorpus;
use crate::encoders::{encode_concept, encode_facet, encode_property, EncoderParams, Gradients, BLOCK_NAMES};
use crate::error::{Error, Result};
use crate::linalg::{dot, hadamard, log_sigmoid, log_sum_exp, norm, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub n_neg_cp: usize,
    pub n_neg_pf: usize,
    pub mask_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            n_neg_cp: 5,
            n_neg_pf: 32,
            mask_eps: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.n_neg_cp < 1 {
            return Err(Error::InvalidArgument("n_neg_cp must be at least 1".into()));
        }
        if !(self.mask_eps >= 0.0) {
            return Err(Error::InvalidArgument("mask_eps must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Plain bi-encoder, no facet encoder.
    Baseline,
    /// Masked concept embeddings plus the InfoNCE facet loss.
    Faceted,
}

/// A unit vector, or zero with `degenerate` set when the unnormalized
/// product fell under the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedVec {
    pub vec: Vec<f64>,
    pub degenerate: bool,
}

/// `(a * b) / |a * b|`, or the zero vector when `|a * b| < eps`.
pub fn mask_and_normalize(a: &[f64], b: &[f64], eps: f64) -> MaskedVec {
    let v = hadamard(a, b);
    let n = norm(&v);
    if n < eps || n == 0.0 {
        return MaskedVec {
            vec: vec![0.0; v.len()],
            degenerate: true,
        };
    }
    MaskedVec {
        vec: v.into_iter().map(|x| x / n).collect(),
        degenerate: false,
    }
}

/// `MC(c, p)`.
pub fn masked_concept(
    params: &EncoderParams,
    concept: usize,
    property: usize,
    mask_eps: f64,
) -> Result<MaskedVec> {
    let con = encode_concept(params, concept)?;
    let facet = encode_facet(params, property)?;
    Ok(mask_and_normalize(&con, &facet, mask_eps))
}

/// Positives with their sampled negatives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CpBatch {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl CpBatch {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }
}

/// One InfoNCE term: anchor `p`, same-facet partner `q`, and properties outside that facet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfoNceItem {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

fn term_loss(score: f64, positive: bool) -> f64 {
    if positive {
        -log_sigmoid(score)
    } else {
        -log_sigmoid(-score)
    }
}

fn require_positives(positives: &[(usize, usize)]) -> Result<()> {
    if positives.is_empty() {
        return Err(Error::EmptyInput("loss needs at least one positive pair".into()));
    }
    Ok(())
}

fn check_term(value: f64, what: &str, pair: (usize, usize)) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!(
            "{what} for pair (concept {}, property {})",
            pair.0, pair.1
        )))
    }
}

/// `-sum log s(Con.Prop)` over positives `- sum log(1 - s(Con.Prop))` over negatives.
pub fn loss_baseline(
    params: &EncoderParams,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
) -> Result<f64> {
    require_positives(positives)?;
    let mut total = 0.0;
    for (pairs, label) in [(positives, true), (negatives, false)] {
        for &(c, p) in pairs {
            let s = dot(&encode_concept(params, c)?, &encode_property(params, p)?);
            total += check_term(term_loss(s, label), "baseline loss", (c, p))?;
        }
    }
    Ok(total)
}

/// The baseline loss with `MC(c, p)` in place of `Con(c)`; degenerate masks score 0.
pub fn loss_l1(
    params: &EncoderParams,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<f64> {
    require_positives(positives)?;
    let mut total = 0.0;
    for (pairs, label) in [(positives, true), (negatives, false)] {
        for &(c, p) in pairs {
            let mc = masked_concept(params, c, p, cfg.mask_eps)?;
            let s = dot(&mc.vec, &encode_property(params, p)?);
            total += check_term(term_loss(s, label), "masked loss", (c, p))?;
        }
    }
    Ok(total)
}

fn facet_cosine(fp: &[f64], fr: &[f64], p: usize, r: usize) -> Result<f64> {
    let (np, nr) = (norm(fp), norm(fr));
    if np == 0.0 || nr == 0.0 {
        let which = if np == 0.0 { p } else { r };
        return Err(Error::Degenerate(format!(
            "facet vector of property {which} has zero norm"
        )));
    }
    Ok(dot(fp, fr) / (np * nr))
}

/// InfoNCE over facet vectors; zero for items without negatives.
pub fn loss_l2(params: &EncoderParams, items: &[InfoNceItem], cfg: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for it in items {
        let fp = encode_facet(params, it.anchor)?;
        let mut logits = Vec::with_capacity(1 + it.negatives.len());
        for &r in std::iter::once(&it.positive).chain(&it.negatives) {
            let fr = encode_facet(params, r)?;
            logits.push(facet_cosine(&fp, &fr, it.anchor, r)? / cfg.tau);
        }
        let term = log_sum_exp(&logits) - logits[0];
        total += check_term(term, "InfoNCE loss", (it.anchor, it.positive))?;
    }
    Ok(total)
}

/// Value of the training objective for `mode`, evaluated term by term.
pub fn objective_value(
    params: &EncoderParams,
    mode: LossMode,
    cp: &CpBatch,
    pf: &[InfoNceItem],
    cfg: &LossConfig,
) -> Result<f64> {
    let l1 = if cp.positives.is_empty() {
        0.0
    } else {
        match mode {
            LossMode::Baseline => loss_baseline(params, &cp.positives, &cp.negatives)?,
            LossMode::Faceted => loss_l1(params, &cp.positives, &cp.negatives, cfg)?,
        }
    };
    let l2 = match mode {
        LossMode::Baseline => 0.0,
        LossMode::Faceted => loss_l2(params, pf, cfg)?,
    };
    Ok(l1 + l2)
}

/// Draws InfoNCE items uniformly over ordered same-facet pairs `(p, q)`, `p != q`.
#[derive(Debug, Clone)]
pub struct InfoNceSampler {
    /// Facets with at least two members.
    facets: Vec<usize>,
    /// Cumulative count of ordered pairs, parallel to `facets`.
    cumulative: Vec<u64>,
    /// Per facet id: properties outside the facet, ascending.
    outside: Vec<Vec<usize>>,
}

impl InfoNceSampler {
    pub fn new(corpus: &TrainingCorpus) -> Self {
        let n_props = corpus.properties().len();
        let mut facets = Vec::new();
        let mut cumulative = Vec::new();
        let mut outside = Vec::with_capacity(corpus.facets().len());
        let mut acc = 0u64;
        for f in 0..corpus.facets().len() {
            let m = corpus.facet_members(f).len() as u64;
            if m >= 2 {
                acc += m * (m - 1);
                facets.push(f);
                cumulative.push(acc);
            }
            outside.push((0..n_props).filter(|&r| !corpus.has_pf(r, f)).collect());
        }
        Self {
            facets,
            cumulative,
            outside,
        }
    }

    pub fn total_pairs(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    /// `n_items` items with up to `n_neg` distinct negatives each; when
    /// `n_neg` covers the whole population every outside property is used.
    pub fn sample<R: Rng>(
        &self,
        corpus: &TrainingCorpus,
        n_items: usize,
        n_neg: usize,
        rng: &mut R,
    ) -> Vec<InfoNceItem> {
        let total = self.total_pairs();
        if total == 0 {
            return Vec::new();
        }
        (0..n_items)
            .map(|_| {
                let k = rng.gen_range(0..total);
                let slot = self.cumulative.partition_point(|&c| c <= k);
                let f = self.facets[slot];
                let members = corpus.facet_members(f);
                let i = rng.gen_range(0..members.len());
                let mut j = rng.gen_range(0..members.len() - 1);
                if j >= i {
                    j += 1;
                }
                let pop = &self.outside[f];
                let negatives = if n_neg >= pop.len() {
                    pop.clone()
                } else {
                    index::sample(rng, pop.len(), n_neg)
                        .into_iter()
                        .map(|x| pop[x])
                        .collect()
                };
                InfoNceItem {
                    anchor: members[i],
                    positive: members[j],
                    negatives,
                }
            })
            .collect()
    }

    /// Every ordered same-facet pair with the full outside population as negatives.
    pub fn all_items(&self, corpus: &TrainingCorpus) -> Vec<InfoNceItem> {
        let mut items = Vec::new();
        for &f in &self.facets {
            let members = corpus.facet_members(f);
            for &p in members {
                for &q in members {
                    if p != q {
                        items.push(InfoNceItem {
                            anchor: p,
                            positive: q,
                            negatives: self.outside[f].clone(),
                        });
                    }
                }
            }
        }
        items
    }
}

struct ConceptSlot {
    id: usize,
    raw_norm: f64,
    unit: Vec<f64>,
    grad: Vec<f64>,
}

struct PropertySlot {
    id: usize,
    prop: Vec<f64>,
    prop_hidden: Vec<f64>,
    facet: Vec<f64>,
    facet_hidden: Vec<f64>,
    grad_prop: Vec<f64>,
    grad_facet: Vec<f64>,
}

/// Forward cache keyed by id, in first-use order so reductions are reproducible.
struct Cache<'a> {
    params: &'a EncoderParams,
    concepts: Vec<ConceptSlot>,
    concept_slot: HashMap<usize, usize>,
    properties: Vec<PropertySlot>,
    property_slot: HashMap<usize, usize>,
}

impl<'a> Cache<'a> {
    fn new(params: &'a EncoderParams) -> Self {
        Self {
            params,
            concepts: Vec::new(),
            concept_slot: HashMap::new(),
            properties: Vec::new(),
            property_slot: HashMap::new(),
        }
    }

    fn concept(&mut self, id: usize) -> Result<usize> {
        if let Some(&s) = self.concept_slot.get(&id) {
            return Ok(s);
        }
        let unit = encode_concept(self.params, id)?;
        let raw_norm = norm(self.params.concept_table.row(id));
        let d = unit.len();
        self.concepts.push(ConceptSlot {
            id,
            raw_norm,
            unit,
            grad: vec![0.0; d],
        });
        let s = self.concepts.len() - 1;
        self.concept_slot.insert(id, s);
        Ok(s)
    }

    fn property(&mut self, id: usize) -> Result<usize> {
        if let Some(&s) = self.property_slot.get(&id) {
            return Ok(s);
        }
        if id >= self.params.n_properties() {
            return Err(Error::InvalidArgument(format!("property id {id} out of range")));
        }
        let x = self.params.property_table.row(id);
        let (prop, prop_hidden) = self.params.prop_head.forward(x);
        let (facet, facet_hidden) = self.params.facet_head.forward(x);
        let d = prop.len();
        self.properties.push(PropertySlot {
            id,
            prop,
            prop_hidden,
            facet,
            facet_hidden,
            grad_prop: vec![0.0; d],
            grad_facet: vec![0.0; d],
        });
        let s = self.properties.len() - 1;
        self.property_slot.insert(id, s);
        Ok(s)
    }

    fn backprop(self) -> Gradients {
        let params = self.params;
        let mut g = Gradients::zeros_for(params);
        let d = params.dim;
        for slot in &self.properties {
            let x = params.property_table.row(slot.id);
            let mut g_x = vec![0.0; d];
            if slot.grad_prop.iter().any(|v| *v != 0.0) {
                params
                    .prop_head
                    .backward(x, &slot.prop_hidden, &slot.grad_prop, &mut g.prop_head, &mut g_x);
            }
            if slot.grad_facet.iter().any(|v| *v != 0.0) {
                params.facet_head.backward(
                    x,
                    &slot.facet_hidden,
                    &slot.grad_facet,
                    &mut g.facet_head,
                    &mut g_x,
                );
            }
            for (a, b) in g.property_table.row_mut(slot.id).iter_mut().zip(&g_x) {
                *a += b;
            }
        }
        for slot in &self.concepts {
            // d(u/|u|)/du = (I - c c^T) / |u|
            let proj = dot(&slot.unit, &slot.grad);
            let row = g.concept_table.row_mut(slot.id);
            for ((r, gc), c) in row.iter_mut().zip(&slot.grad).zip(&slot.unit) {
                *r += (gc - c * proj) / slot.raw_norm;
            }
        }
        g
    }
}

fn add_cp_terms(
    cache: &mut Cache<'_>,
    mode: LossMode,
    pairs: &[(usize, usize)],
    label: bool,
    mask_eps: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for &(c, p) in pairs {
        let cs = cache.concept(c)?;
        let ps = cache.property(p)?;
        let (cslot, pslot) = (&mut cache.concepts[cs], &mut cache.properties[ps]);
        match mode {
            LossMode::Baseline => {
                let s = dot(&cslot.unit, &pslot.prop);
                total += check_term(term_loss(s, label), "baseline loss", (c, p))?;
                let g_s = if label { sigmoid(s) - 1.0 } else { sigmoid(s) };
                for i in 0..cslot.unit.len() {
                    pslot.grad_prop[i] += g_s * cslot.unit[i];
                    cslot.grad[i] += g_s * pslot.prop[i];
                }
            }
            LossMode::Faceted => {
                let v = hadamard(&cslot.unit, &pslot.facet);
                let n = norm(&v);
                if n < mask_eps || n == 0.0 {
                    total += term_loss(0.0, label);
                    continue;
                }
                let m: Vec<f64> = v.iter().map(|x| x / n).collect();
                let s = dot(&m, &pslot.prop);
                total += check_term(term_loss(s, label), "masked loss", (c, p))?;
                let g_s = if label { sigmoid(s) - 1.0 } else { sigmoid(s) };
                // g_m = g_s * Prop; g_v = (g_m - m (m . g_m)) / n
                let m_dot_gm = g_s * s;
                for i in 0..m.len() {
                    pslot.grad_prop[i] += g_s * m[i];
                    let g_v = (g_s * pslot.prop[i] - m[i] * m_dot_gm) / n;
                    cslot.grad[i] += g_v * pslot.facet[i];
                    pslot.grad_facet[i] += g_v * cslot.unit[i];
                }
            }
        }
    }
    Ok(total)
}

fn add_infonce_terms(cache: &mut Cache<'_>, items: &[InfoNceItem], tau: f64) -> Result<f64> {
    let mut total = 0.0;
    for it in items {
        let ap = cache.property(it.anchor)?;
        let others: Vec<usize> = std::iter::once(it.positive)
            .chain(it.negatives.iter().copied())
            .map(|r| cache.property(r))
            .collect::<Result<_>>()?;
        let fp = cache.properties[ap].facet.clone();
        let np = norm(&fp);
        let mut cos = Vec::with_capacity(others.len());
        let mut norms = Vec::with_capacity(others.len());
        for (&slot, r) in others
            .iter()
            .zip(std::iter::once(&it.positive).chain(&it.negatives))
        {
            let fr = &cache.properties[slot].facet;
            cos.push(facet_cosine(&fp, fr, it.anchor, *r)?);
            norms.push(norm(fr));
        }
        let logits: Vec<f64> = cos.iter().map(|c| c / tau).collect();
        let lse = log_sum_exp(&logits);
        total += check_term(lse - logits[0], "InfoNCE loss", (it.anchor, it.positive))?;

        let d = fp.len();
        let mut g_anchor = vec![0.0; d];
        for (k, &slot) in others.iter().enumerate() {
            let w = (logits[k] - lse).exp();
            let g_cos = (w - if k == 0 { 1.0 } else { 0.0 }) / tau;
            if g_cos == 0.0 {
                continue;
            }
            let (nr, c) = (norms[k], cos[k]);
            let fr = &mut cache.properties[slot];
            for i in 0..d {
                g_anchor[i] += g_cos * (fr.facet[i] / (np * nr) - c * fp[i] / (np * np));
                fr.grad_facet[i] += g_cos * (fp[i] / (np * nr) - c * fr.facet[i] / (nr * nr));
            }
        }
        for (a, b) in cache.properties[ap].grad_facet.iter_mut().zip(&g_anchor) {
            *a += b;
        }
    }
    Ok(total)
}

/// Loss and analytic gradient of the objective for `mode`.
///
/// Baseline ignores `pf`. Degenerate masks add `ln 2` and no gradient.
pub fn grad_loss(
    params: &EncoderParams,
    mode: LossMode,
    cp: &CpBatch,
    pf: &[InfoNceItem],
    cfg: &LossConfig,
) -> Result<(f64, Gradients)> {
    let pf = if mode == LossMode::Baseline { &[][..] } else { pf };
    if cp.is_empty() && pf.is_empty() {
        return Err(Error::EmptyInput("both batches are empty".into()));
    }
    let mut cache = Cache::new(params);
    let mut loss = add_cp_terms(&mut cache, mode, &cp.positives, true, cfg.mask_eps)?;
    loss += add_cp_terms(&mut cache, mode, &cp.negatives, false, cfg.mask_eps)?;
    loss += add_infonce_terms(&mut cache, pf, cfg.tau)?;
    let grads = cache.backprop();
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("loss or gradient of the batch".into()));
    }
    Ok((loss, grads))
}

/// Loss and gradient of the masked loss plus InfoNCE.
pub fn grad_total(
    params: &EncoderParams,
    cp: &CpBatch,
    pf: &[InfoNceItem],
    cfg: &LossConfig,
) -> Result<(f64, Gradients)> {
    grad_loss(params, LossMode::Faceted, cp, pf, cfg)
}

/// One sampled coordinate of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub block: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    /// `|analytic - numeric| / (|analytic| + 1e-8)`
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / (self.analytic.abs() + 1e-8)
    }
}

/// Compares [`grad_loss`] against central differences of [`objective_value`].
///
/// Table coordinates are drawn from rows the batch touches; `per_block`
/// coordinates are sampled from each of the ten blocks.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check<R: Rng>(
    params: &EncoderParams,
    mode: LossMode,
    cp: &CpBatch,
    pf: &[InfoNceItem],
    cfg: &LossConfig,
    per_block: usize,
    step: f64,
    rng: &mut R,
) -> Result<Vec<GradCheckEntry>> {
    let (_, grads) = grad_loss(params, mode, cp, pf, cfg)?;
    let mut concepts: Vec<usize> = cp.positives.iter().chain(&cp.negatives).map(|x| x.0).collect();
    let mut props: Vec<usize> = cp.positives.iter().chain(&cp.negatives).map(|x| x.1).collect();
    if mode == LossMode::Faceted {
        for it in pf {
            props.push(it.anchor);
            props.push(it.positive);
            props.extend(&it.negatives);
        }
    }
    concepts.sort_unstable();
    concepts.dedup();
    props.sort_unstable();
    props.dedup();

    let d = params.dim;
    let mut out = Vec::new();
    let mut probe = params.clone();
    for (b, name) in BLOCK_NAMES.iter().enumerate() {
        let len = params.blocks()[b].len();
        for _ in 0..per_block {
            let idx = match b {
                0 if !concepts.is_empty() => {
                    concepts[rng.gen_range(0..concepts.len())] * d + rng.gen_range(0..d)
                }
                1 if !props.is_empty() => props[rng.gen_range(0..props.len())] * d + rng.gen_range(0..d),
                _ => rng.gen_range(0..len),
            };
            let orig = params.blocks()[b][idx];
            probe.blocks_mut()[b][idx] = orig + step;
            let up = objective_value(&probe, mode, cp, pf, cfg)?;
            probe.blocks_mut()[b][idx] = orig - step;
            let down = objective_value(&probe, mode, cp, pf, cfg)?;
            probe.blocks_mut()[b][idx] = orig;
            out.push(GradCheckEntry {
                block: name,
                index: idx,
                analytic: grads.blocks()[b][idx],
                numeric: (up - down) / (2.0 * step),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{seeded_rng, CorpusBuilder};
    use crate::encoders::init_params;
    use crate::linalg::Matrix;

    fn corpus() -> TrainingCorpus {
        let mut b = CorpusBuilder::new();
        for c in 0..4 {
            for p in 0..6 {
                if (c * 7 + p) % 3 == 0 {
                    b.add_cp(&format!("c{c}"), &format!("p{p}"));
                }
            }
        }
        for p in 0..6 {
            b.add_pf(&format!("p{p}"), ["colour", "shape", "size"][p % 3]);
        }
        b.build().unwrap()
    }

    fn two_dim_params() -> EncoderParams {
        let mut b = CorpusBuilder::new();
        b.add_cp("a", "x");
        b.add_cp("b", "y");
        let c = b.build().unwrap();
        init_params(&c, 2, 2, &mut seeded_rng(0)).unwrap()
    }

    /// Sets both heads to `y = W2 tanh(W1 x + b1) + b2` with W1 = I, b1 = 0 so
    /// outputs are easy to control through `b2` and `W2`.
    fn constant_head(out: [f64; 2]) -> crate::encoders::Mlp {
        crate::encoders::Mlp {
            w1: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            b1: vec![0.0, 0.0],
            w2: Matrix::zeros(2, 2),
            b2: out.to_vec(),
        }
    }

    #[test]
    fn masked_concept_cases() {
        let mut p = two_dim_params();
        p.concept_table = Matrix::from_rows(&[vec![0.6, 0.8], vec![0.0, 1.0]]);
        p.facet_head = constant_head([1.0, 1.0]);
        let mc = masked_concept(&p, 0, 0, 1e-12).unwrap();
        assert!(!mc.degenerate);
        assert!((mc.vec[0] - 0.6).abs() < 1e-15 && (mc.vec[1] - 0.8).abs() < 1e-15);

        p.facet_head = constant_head([1.0, 0.0]);
        let mc = masked_concept(&p, 0, 0, 1e-12).unwrap();
        assert_eq!(mc.vec, vec![1.0, 0.0]);

        let mc = masked_concept(&p, 1, 0, 1e-12).unwrap();
        assert!(mc.degenerate);
        assert_eq!(mc.vec, vec![0.0, 0.0]);
    }

    #[test]
    fn baseline_loss_values() {
        let mut p = two_dim_params();
        p.prop_head = constant_head([0.0, 0.0]);
        let l = loss_baseline(&p, &[(0, 0)], &[(0, 1)]).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);

        p.concept_table = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        p.prop_head = constant_head([60.0, 0.0]);
        assert!(loss_baseline(&p, &[(0, 0)], &[]).unwrap() < 1e-25);
        assert!(loss_baseline(&p, &[], &[]).is_err());
    }

    #[test]
    fn baseline_hand_computed() {
        // Con rows (1,0) and (0.6,0.8); Prop fixed per call through b2
        let mut p = two_dim_params();
        p.concept_table = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.6, 0.8]]);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        p.prop_head = constant_head([1.0, 2.0]);
        // s+ = 1, s- = 0.6 + 1.6 = 2.2
        let got = loss_baseline(&p, &[(0, 0)], &[(1, 0)]).unwrap();
        let oracle = -sig(1.0).ln() - (1.0 - sig(2.2)).ln();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        p.prop_head = constant_head([-1.0, 0.5]);
        // s+ = -0.6 + 0.4 = -0.2, s- = -1
        let got = loss_baseline(&p, &[(1, 1)], &[(0, 1)]).unwrap();
        let oracle = -sig(-0.2).ln() - (1.0 - sig(-1.0)).ln();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn l1_reduces_to_baseline_under_identity_mask() {
        let c = corpus();
        let mut p = init_params(&c, 6, 4, &mut seeded_rng(3)).unwrap();
        p.facet_head.w2 = Matrix::zeros(6, 4);
        p.facet_head.b2 = vec![1.0; 6];
        let pos = c.cp_pairs().to_vec();
        let neg = vec![(0, 1), (1, 2), (2, 5)];
        let a = loss_baseline(&p, &pos, &neg).unwrap();
        let b = loss_l1(&p, &pos, &neg, &LossConfig::default()).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn degenerate_positive_contributes_ln2() {
        let mut p = two_dim_params();
        p.concept_table = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        p.facet_head = constant_head([1.0, 0.0]);
        let l = loss_l1(&p, &[(0, 0)], &[], &LossConfig::default()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let cp = CpBatch {
            positives: vec![(0, 0)],
            negatives: vec![],
        };
        let (l2, g) = grad_total(&p, &cp, &[], &LossConfig::default()).unwrap();
        assert!((l2 - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(g.blocks().iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn infonce_closed_forms() {
        let c = corpus();
        let p = init_params(&c, 6, 4, &mut seeded_rng(3)).unwrap();
        let cfg = LossConfig::default();
        let no_neg = [InfoNceItem {
            anchor: 0,
            positive: 3,
            negatives: vec![],
        }];
        assert_eq!(loss_l2(&p, &no_neg, &cfg).unwrap(), 0.0);

        // F(q) = F(p) and F(r) = -F(p), tau = 1: -log(e / (e + e^-1))
        let mut q = two_dim_params();
        q.property_table = Matrix::from_rows(&[vec![0.3, -0.2], vec![0.0, 0.0]]);
        q.facet_head = crate::encoders::Mlp {
            w1: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            b1: vec![0.0, 0.0],
            w2: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            b2: vec![0.0, 0.0],
        };
        let mut q2 = q.clone();
        q2.property_table = Matrix::from_rows(&[vec![0.3, -0.2], vec![-0.3, 0.2]]);
        let item = [InfoNceItem {
            anchor: 0,
            positive: 0,
            negatives: vec![1],
        }];
        let cfg1 = LossConfig { tau: 1.0, ..cfg };
        let got = loss_l2(&q2, &item, &cfg1).unwrap();
        let e = std::f64::consts::E;
        let oracle = -(e / (e + 1.0 / e)).ln();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        assert!(loss_l2(&q, &item, &cfg1).is_err(), "zero facet vector must error");
    }

    #[test]
    fn infonce_temperature_irrelevant_when_cosines_equal() {
        let mut q = two_dim_params();
        q.property_table = Matrix::from_rows(&[vec![0.3, 0.1], vec![0.3, 0.1]]);
        q.facet_head.w1 = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        q.facet_head.b1 = vec![0.0, 0.0];
        q.facet_head.b2 = vec![0.0, 0.0];
        let item = [InfoNceItem {
            anchor: 0,
            positive: 1,
            negatives: vec![1, 0],
        }];
        let a = loss_l2(
            &q,
            &item,
            &LossConfig {
                tau: 0.3,
                ..Default::default()
            },
        )
        .unwrap();
        let b = loss_l2(
            &q,
            &item,
            &LossConfig {
                tau: 0.6,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((a - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_batch_doubles_gradient() {
        let c = corpus();
        let p = init_params(&c, 6, 4, &mut seeded_rng(8)).unwrap();
        let cfg = LossConfig::default();
        let one = CpBatch {
            positives: vec![(1, 2)],
            negatives: vec![(1, 0)],
        };
        let two = CpBatch {
            positives: vec![(1, 2), (1, 2)],
            negatives: vec![(1, 0), (1, 0)],
        };
        let (l1, g1) = grad_total(&p, &one, &[], &cfg).unwrap();
        let (l2, g2) = grad_total(&p, &two, &[], &cfg).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        for (a, b) in g1.blocks().iter().zip(g2.blocks().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn empty_pf_batch_equals_l1_gradient() {
        let c = corpus();
        let p = init_params(&c, 6, 4, &mut seeded_rng(8)).unwrap();
        let cfg = LossConfig::default();
        let cp = CpBatch {
            positives: c.cp_pairs().to_vec(),
            negatives: vec![(0, 1), (2, 3)],
        };
        let (l, _) = grad_total(&p, &cp, &[], &cfg).unwrap();
        let direct = loss_l1(&p, &cp.positives, &cp.negatives, &cfg).unwrap();
        assert!((l - direct).abs() < 1e-12);
        assert!(grad_total(&p, &CpBatch::default(), &[], &cfg).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let c = corpus();
        let cfg = LossConfig {
            n_neg_pf: 3,
            ..Default::default()
        };
        let sampler = InfoNceSampler::new(&c);
        for seed in 0..5 {
            let mut rng = seeded_rng(seed);
            let p = init_params(&c, 8, 4, &mut rng).unwrap();
            let cp = CpBatch {
                positives: c.cp_pairs().to_vec(),
                negatives: crate::corpus::sample_negatives(&c, c.cp_pairs(), 2, &mut rng).unwrap(),
            };
            let pf = sampler.sample(&c, 3, cfg.n_neg_pf, &mut rng);
            for mode in [LossMode::Faceted, LossMode::Baseline] {
                let entries = finite_difference_check(&p, mode, &cp, &pf, &cfg, 6, 1e-5, &mut rng).unwrap();
                for e in entries {
                    assert!(e.rel_error() < 1e-4, "{mode:?} {e:?}");
                }
            }
        }
    }

    #[test]
    fn sampler_is_uniform_over_ordered_pairs() {
        let c = corpus();
        let s = InfoNceSampler::new(&c);
        // three facets of two members each
        assert_eq!(s.total_pairs(), 6);
        let all = s.all_items(&c);
        assert_eq!(all.len(), 6);
        for it in &all {
            assert_ne!(it.anchor, it.positive);
            assert_eq!(it.negatives.len(), 4);
        }
        let sampled = s.sample(&c, 50, 100, &mut seeded_rng(0));
        for it in sampled {
            let mut n = it.negatives.clone();
            n.sort_unstable();
            let f = c.pf_pairs().iter().find(|x| x.0 == it.anchor).unwrap().1;
            assert!(c.has_pf(it.positive, f));
            assert!(n.iter().all(|&r| !c.has_pf(r, f)));
        }
    }
}
