//! The three encoders: `Con` (concept -> unit vector), `Prop` (property ->
//! unnormalized vector) and `Facet` (property -> coordinate mask).
//!
//! Concepts are rows of an embedding table, normalized on the way out.
//! `Prop` and `Facet` are two separate one-hidden-layer tanh MLPs reading the
//! same property-table row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::{Deref, DerefMut};
use std::path::Path;

use rand::Rng;

use crate::corpus::{TrainingCorpus, Vocab};
use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

pub const CONCEPT_NORM_FLOOR: f64 = 1e-12;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCSP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `y = W2 tanh(W1 x + b1) + b2`
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl Mlp {
    fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, dim),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(dim, hidden),
            b2: vec![0.0; dim],
        }
    }

    fn random<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(dim, hidden);
        let s1 = 1.0 / (dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        fill_uniform(m.w1.as_mut_slice(), s1, rng);
        fill_uniform(&mut m.b1, s1, rng);
        fill_uniform(m.w2.as_mut_slice(), s2, rng);
        fill_uniform(&mut m.b2, s2, rng);
        m
    }

    /// Returns `(output, hidden activations)`.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; self.b1.len()];
        self.w1.matvec(x, &mut a);
        for (ai, bi) in a.iter_mut().zip(&self.b1) {
            *ai = (*ai + bi).tanh();
        }
        let mut y = vec![0.0; self.b2.len()];
        self.w2.matvec(&a, &mut y);
        for (yi, bi) in y.iter_mut().zip(&self.b2) {
            *yi += bi;
        }
        (y, a)
    }

    /// Accumulates parameter gradients into `grad` and the input gradient into `g_x`.
    pub fn backward(&self, x: &[f64], a: &[f64], g_y: &[f64], grad: &mut Mlp, g_x: &mut [f64]) {
        grad.w2.add_outer(g_y, a);
        for (gb, g) in grad.b2.iter_mut().zip(g_y) {
            *gb += g;
        }
        let mut g_z = vec![0.0; a.len()];
        self.w2.matvec_t_acc(g_y, &mut g_z);
        for (gz, ai) in g_z.iter_mut().zip(a) {
            *gz *= 1.0 - ai * ai;
        }
        grad.w1.add_outer(&g_z, x);
        for (gb, g) in grad.b1.iter_mut().zip(&g_z) {
            *gb += g;
        }
        self.w1.matvec_t_acc(&g_z, g_x);
    }

    fn blocks(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }
}

fn fill_uniform<R: Rng>(xs: &mut [f64], scale: f64, rng: &mut R) {
    for x in xs {
        // open interval (-scale, scale)
        loop {
            let v: f64 = rng.gen_range(-scale..scale);
            if v != -scale {
                *x = v;
                break;
            }
        }
    }
}

/// All trainable parameters, plus the vocabulary hashes they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dim: usize,
    pub hidden: usize,
    pub concept_table: Matrix,
    pub property_table: Matrix,
    pub prop_head: Mlp,
    pub facet_head: Mlp,
    pub vocab_hashes: [[u8; 8]; 3],
}

/// Names of the parameter blocks, in checkpoint order.
pub const BLOCK_NAMES: [&str; 10] = [
    "concept_table",
    "property_table",
    "prop_head.w1",
    "prop_head.b1",
    "prop_head.w2",
    "prop_head.b2",
    "facet_head.w1",
    "facet_head.b1",
    "facet_head.w2",
    "facet_head.b2",
];

fn vocab_hashes(corpus: &TrainingCorpus) -> [[u8; 8]; 3] {
    [
        corpus.concepts().hash(),
        corpus.properties().hash(),
        corpus.facets().hash(),
    ]
}

impl EncoderParams {
    /// Zero parameters with the given shapes.
    pub fn zeros(n_concepts: usize, n_properties: usize, dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            concept_table: Matrix::zeros(n_concepts, dim),
            property_table: Matrix::zeros(n_properties, dim),
            prop_head: Mlp::zeros(dim, hidden),
            facet_head: Mlp::zeros(dim, hidden),
            vocab_hashes: [[0; 8]; 3],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(
            self.concept_table.rows(),
            self.property_table.rows(),
            self.dim,
            self.hidden,
        );
        z.vocab_hashes = self.vocab_hashes;
        z
    }

    pub fn n_concepts(&self) -> usize {
        self.concept_table.rows()
    }

    pub fn n_properties(&self) -> usize {
        self.property_table.rows()
    }

    pub fn blocks(&self) -> [&[f64]; 10] {
        let [a, b, c, d] = self.prop_head.blocks();
        let [e, f, g, h] = self.facet_head.blocks();
        [
            self.concept_table.as_slice(),
            self.property_table.as_slice(),
            a,
            b,
            c,
            d,
            e,
            f,
            g,
            h,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 10] {
        let [a, b, c, d] = self.prop_head.blocks_mut();
        let [e, f, g, h] = self.facet_head.blocks_mut();
        [
            self.concept_table.as_mut_slice(),
            self.property_table.as_mut_slice(),
            a,
            b,
            c,
            d,
            e,
            f,
            g,
            h,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Errors unless the parameter shapes and vocabulary hashes match `corpus`.
    pub fn check_corpus(&self, corpus: &TrainingCorpus) -> Result<()> {
        if self.n_concepts() != corpus.concepts().len() || self.n_properties() != corpus.properties().len() {
            return Err(Error::VocabMismatch(format!(
                "parameters cover {} concepts / {} properties, corpus has {} / {}",
                self.n_concepts(),
                self.n_properties(),
                corpus.concepts().len(),
                corpus.properties().len()
            )));
        }
        let expected = vocab_hashes(corpus);
        for (i, what) in ["concept", "property", "facet"].iter().enumerate() {
            if self.vocab_hashes[i] != expected[i] {
                return Err(Error::VocabMismatch(format!("{what} vocabulary hash differs")));
            }
        }
        Ok(())
    }

    /// Appends freshly initialized rows for vocabulary items of `corpus` that
    /// the parameters do not cover yet. `corpus` must extend the original
    /// vocabularies (same prefix).
    pub fn extend_to<R: Rng>(&mut self, corpus: &TrainingCorpus, rng: &mut R) -> Result<()> {
        let (nc, np) = (corpus.concepts().len(), corpus.properties().len());
        if nc < self.n_concepts() || np < self.n_properties() {
            return Err(Error::VocabMismatch(
                "corpus is smaller than the parameters".into(),
            ));
        }
        let prefix_hash = |v: &Vocab, n: usize| Vocab::from_items(v.items()[..n].iter().cloned()).hash();
        if prefix_hash(corpus.concepts(), self.n_concepts()) != self.vocab_hashes[0]
            || prefix_hash(corpus.properties(), self.n_properties()) != self.vocab_hashes[1]
        {
            return Err(Error::VocabMismatch(
                "corpus vocabularies do not extend the checkpoint's".into(),
            ));
        }
        let scale = 1.0 / (self.dim as f64).sqrt();
        let mut row = vec![0.0; self.dim];
        for _ in self.n_concepts()..nc {
            fill_uniform(&mut row, scale, rng);
            self.concept_table.push_row(&row);
        }
        for _ in self.n_properties()..np {
            fill_uniform(&mut row, scale, rng);
            self.property_table.push_row(&row);
        }
        self.vocab_hashes = vocab_hashes(corpus);
        Ok(())
    }
}

/// Gradient of a loss with respect to every [`EncoderParams`] block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub EncoderParams);

impl Gradients {
    pub fn zeros_for(params: &EncoderParams) -> Self {
        Gradients(params.zeros_like())
    }
}

impl Deref for Gradients {
    type Target = EncoderParams;
    fn deref(&self) -> &EncoderParams {
        &self.0
    }
}

impl DerefMut for Gradients {
    fn deref_mut(&mut self) -> &mut EncoderParams {
        &mut self.0
    }
}

/// Uniform initialization: tables in `(-1/sqrt(dim), 1/sqrt(dim))`, MLP layers
/// scaled by `1/sqrt(fan_in)`.
pub fn init_params<R: Rng>(
    corpus: &TrainingCorpus,
    dim: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<EncoderParams> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "dim must be at least 2, got {dim}"
        )));
    }
    if hidden < 1 {
        return Err(Error::InvalidArgument("hidden must be at least 1".into()));
    }
    let (nc, np) = (corpus.concepts().len(), corpus.properties().len());
    let mut p = EncoderParams::zeros(nc, np, dim, hidden);
    let scale = 1.0 / (dim as f64).sqrt();
    fill_uniform(p.concept_table.as_mut_slice(), scale, rng);
    fill_uniform(p.property_table.as_mut_slice(), scale, rng);
    p.prop_head = Mlp::random(dim, hidden, rng);
    p.facet_head = Mlp::random(dim, hidden, rng);
    p.vocab_hashes = vocab_hashes(corpus);
    Ok(p)
}

fn check_id(id: usize, n: usize, what: &str) -> Result<()> {
    if id >= n {
        return Err(Error::InvalidArgument(format!(
            "{what} id {id} out of range (size {n})"
        )));
    }
    Ok(())
}

/// `Con(c)`: the concept's table row scaled to unit length.
pub fn encode_concept(params: &EncoderParams, concept: usize) -> Result<Vec<f64>> {
    check_id(concept, params.n_concepts(), "concept")?;
    let row = params.concept_table.row(concept);
    let n = norm(row);
    if n < CONCEPT_NORM_FLOOR {
        return Err(Error::Degenerate(format!(
            "concept {concept} has a zero embedding row"
        )));
    }
    Ok(row.iter().map(|x| x / n).collect())
}

/// `Prop(p)`, not normalized.
pub fn encode_property(params: &EncoderParams, property: usize) -> Result<Vec<f64>> {
    check_id(property, params.n_properties(), "property")?;
    Ok(params.prop_head.forward(params.property_table.row(property)).0)
}

/// `Facet(p)`, not normalized and of either sign.
pub fn encode_facet(params: &EncoderParams, property: usize) -> Result<Vec<f64>> {
    check_id(property, params.n_properties(), "property")?;
    Ok(params.facet_head.forward(params.property_table.row(property)).0)
}

/// Every concept, property and facet vector for a vocabulary.
#[derive(Debug, Clone)]
pub struct EmbeddingSpace {
    pub concepts: Vocab,
    pub properties: Vocab,
    pub concept_vecs: Matrix,
    pub property_vecs: Matrix,
    pub facet_vecs: Matrix,
}

impl EmbeddingSpace {
    pub fn dim(&self) -> usize {
        self.concept_vecs.cols()
    }
}

pub fn materialize(params: &EncoderParams, corpus: &TrainingCorpus) -> Result<EmbeddingSpace> {
    if corpus.properties().is_empty() {
        return Err(Error::EmptyInput("property vocabulary is empty".into()));
    }
    if corpus.concepts().is_empty() {
        return Err(Error::EmptyInput("concept vocabulary is empty".into()));
    }
    params.check_corpus(corpus)?;
    let d = params.dim;
    let mut concept_vecs = Matrix::zeros(0, d);
    for c in 0..params.n_concepts() {
        concept_vecs.push_row(&encode_concept(params, c)?);
    }
    let mut property_vecs = Matrix::zeros(0, d);
    let mut facet_vecs = Matrix::zeros(0, d);
    for p in 0..params.n_properties() {
        property_vecs.push_row(&encode_property(params, p)?);
        facet_vecs.push_row(&encode_facet(params, p)?);
    }
    Ok(EmbeddingSpace {
        concepts: corpus.concepts().clone(),
        properties: corpus.properties().clone(),
        concept_vecs,
        property_vecs,
        facet_vecs,
    })
}

const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 24;

/// Little-endian: magic, version, dim, hidden, three vocabulary hashes, then
/// every block of [`BLOCK_NAMES`] as row-major f64.
pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(CHECKPOINT_MAGIC);
    header.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    header.extend_from_slice(&(params.dim as u32).to_le_bytes());
    header.extend_from_slice(&(params.hidden as u32).to_le_bytes());
    for h in &params.vocab_hashes {
        header.extend_from_slice(h);
    }
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    for block in params.blocks() {
        for v in block {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header fields of a checkpoint file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dim: usize,
    pub hidden: usize,
    pub vocab_hashes: [[u8; 8]; 3],
}

fn parse_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointVersion("missing FCSP magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut vocab_hashes = [[0u8; 8]; 3];
    for (i, h) in vocab_hashes.iter_mut().enumerate() {
        h.copy_from_slice(&bytes[16 + 8 * i..24 + 8 * i]);
    }
    Ok(CheckpointHeader {
        version,
        dim: u32_at(8) as usize,
        hidden: u32_at(12) as usize,
        vocab_hashes,
    })
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let mut buf = [0u8; HEADER_LEN];
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
    parse_header(&buf[..n])
}

/// Loads parameters saved for `corpus`; its vocabularies must hash to the
/// values recorded in the header.
pub fn load_checkpoint(path: &Path, corpus: &TrainingCorpus) -> Result<EncoderParams> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let header = parse_header(&bytes)?;
    let expected = vocab_hashes(corpus);
    for (i, what) in ["concept", "property", "facet"].iter().enumerate() {
        if header.vocab_hashes[i] != expected[i] {
            return Err(Error::VocabMismatch(format!(
                "{}: {what} vocabulary does not match the corpus",
                path.display()
            )));
        }
    }
    let mut params = EncoderParams::zeros(
        corpus.concepts().len(),
        corpus.properties().len(),
        header.dim,
        header.hidden,
    );
    params.vocab_hashes = header.vocab_hashes;
    let body = &bytes[HEADER_LEN..];
    if body.len() != params.num_parameters() * 8 {
        return Err(Error::CheckpointVersion(format!(
            "body holds {} bytes, expected {}",
            body.len(),
            params.num_parameters() * 8
        )));
    }
    let mut chunks = body.chunks_exact(8);
    for block in params.blocks_mut() {
        for v in block.iter_mut() {
            *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite(format!(
            "{} contains NaN or Inf",
            path.display()
        )));
    }
    Ok(params)
}
