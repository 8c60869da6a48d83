//! Corpus data model and I/O.
//!
//! A corpus is a vocabulary, a list of documents (tokenized sentences with
//! annotated noun-phrase spans), and a list of zero-pronoun instances. Each
//! instance names a gap position, the candidate antecedents in its
//! two-sentence window, and the gold antecedent subset.
//!
//! File format: UTF-8 JSON lines. The first line is the vocabulary, documents
//! follow, and each document precedes the instances that reference it:
//!
//! ```text
//! {"type":"vocab","tokens":["<pad>","mk", ...]}
//! {"type":"doc","id":"d0","source":"plain","sentences":[{"tokens":[3,1],"nps":[[0,2,true,false]]}, ...]}
//! {"type":"zp","doc":"d0","sent":2,"gap":1,"candidates":[[0,0,2], ...],"gold":[0,2]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::RngStream;

/// Reserved vocabulary id for padding / unknown tokens.
pub const PAD_ID: u32 = 0;

// ---------------------------------------------------------------------------
// Data model
// ---------------------------------------------------------------------------

/// Token strings mapped to contiguous ids; id 0 is reserved for `<pad>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Validation("vocabulary must at least hold <pad>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id for a token string; unknown strings map to the padding id.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(PAD_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Noun-phrase span inside one sentence; `end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NpSpan {
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
    pub is_maximal: bool,
    pub is_modifier: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<u32>,
    pub np_spans: Vec<NpSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub source_tag: String,
    pub sentences: Vec<Sentence>,
}

/// Location of a zero-pronoun gap: the gap sits immediately before the token
/// at `gap` in sentence `sentence_index` (so `gap == 0` is sentence-initial).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZpLocation {
    pub sentence_index: usize,
    pub gap: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZpInstance {
    pub document_id: String,
    pub sentence_index: usize,
    pub gap: usize,
    /// Candidate antecedents in document order, earliest first.
    pub candidates: Vec<NpSpan>,
    pub gold_antecedents: BTreeSet<usize>,
}

impl ZpInstance {
    pub fn location(&self) -> ZpLocation {
        ZpLocation { sentence_index: self.sentence_index, gap: self.gap }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocabulary: Vocabulary,
    pub documents: Vec<Document>,
    pub instances: Vec<ZpInstance>,
    doc_index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSummary {
    pub n_documents: usize,
    pub n_sentences: usize,
    pub n_instances: usize,
    pub vocab_size: usize,
}

impl Corpus {
    pub fn new(
        vocabulary: Vocabulary,
        documents: Vec<Document>,
        instances: Vec<ZpInstance>,
    ) -> Result<Self> {
        let mut doc_index = HashMap::with_capacity(documents.len());
        for (i, d) in documents.iter().enumerate() {
            if doc_index.insert(d.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate document id {:?}", d.id)));
            }
        }
        let corpus = Corpus { vocabulary, documents, instances, doc_index };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.doc_index.get(id).map(|i| &self.documents[*i])
    }

    /// Instance plus the document it lives in.
    pub fn instance_context(&self, idx: usize) -> (&Document, &ZpInstance) {
        let inst = &self.instances[idx];
        let doc = self.document(&inst.document_id).expect("instance document resolves");
        (doc, inst)
    }

    pub fn summary(&self) -> CorpusSummary {
        CorpusSummary {
            n_documents: self.documents.len(),
            n_sentences: self.documents.iter().map(|d| d.sentences.len()).sum(),
            n_instances: self.instances.len(),
            vocab_size: self.vocabulary.len(),
        }
    }

    /// Check every data-model invariant, naming the offending document.
    pub fn validate(&self) -> Result<()> {
        let vocab_size = self.vocabulary.len() as u32;
        for doc in &self.documents {
            for (si, sent) in doc.sentences.iter().enumerate() {
                for t in &sent.tokens {
                    if *t >= vocab_size {
                        return Err(Error::Validation(format!(
                            "document {:?} sentence {si}: token id {t} out of vocabulary",
                            doc.id
                        )));
                    }
                }
                for np in &sent.np_spans {
                    if np.sentence_index != si {
                        return Err(Error::Validation(format!(
                            "document {:?} sentence {si}: np span carries sentence index {}",
                            doc.id, np.sentence_index
                        )));
                    }
                    if np.start >= np.end || np.end > sent.tokens.len() {
                        return Err(Error::Validation(format!(
                            "document {:?} sentence {si}: np span {}..{} out of bounds",
                            doc.id, np.start, np.end
                        )));
                    }
                }
            }
        }
        for (ii, inst) in self.instances.iter().enumerate() {
            let doc = self.document(&inst.document_id).ok_or_else(|| {
                Error::Validation(format!(
                    "instance {ii}: unknown document id {:?}",
                    inst.document_id
                ))
            })?;
            let label = format!("document {:?} instance {ii}", doc.id);
            if inst.sentence_index >= doc.sentences.len() {
                return Err(Error::Validation(format!("{label}: zp sentence out of range")));
            }
            let zp_sentence = &doc.sentences[inst.sentence_index];
            if inst.gap > zp_sentence.tokens.len() {
                return Err(Error::Validation(format!("{label}: gap position out of range")));
            }
            if inst.candidates.is_empty() {
                return Err(Error::Validation(format!("{label}: no candidates")));
            }
            for g in &inst.gold_antecedents {
                if *g >= inst.candidates.len() {
                    return Err(Error::Validation(format!(
                        "{label}: gold index {g} out of range for {} candidates",
                        inst.candidates.len()
                    )));
                }
            }
            for (ci, cand) in inst.candidates.iter().enumerate() {
                if cand.sentence_index >= doc.sentences.len()
                    || cand.end > doc.sentences[cand.sentence_index].tokens.len()
                    || cand.start >= cand.end
                {
                    return Err(Error::Validation(format!(
                        "{label}: candidate {ci} span out of bounds"
                    )));
                }
                let in_window = cand.sentence_index <= inst.sentence_index
                    && inst.sentence_index - cand.sentence_index <= 2
                    && (cand.sentence_index < inst.sentence_index || cand.end <= inst.gap);
                if !in_window {
                    return Err(Error::Validation(format!(
                        "{label}: candidate {ci} violates the two-sentence window"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Token ids covered by a span.
pub fn span_tokens<'d>(doc: &'d Document, span: &NpSpan) -> &'d [u32] {
    &doc.sentences[span.sentence_index].tokens[span.start..span.end]
}

// ---------------------------------------------------------------------------
// Candidate extraction
// ---------------------------------------------------------------------------

/// Candidate antecedents for a gap: every maximal-or-modifier noun phrase at
/// most two sentences back, and in the gap's own sentence only spans that end
/// before the gap. Returned in document order (sentence, then stored span
/// order within the sentence).
pub fn extract_candidates(doc: &Document, zp: ZpLocation) -> Vec<NpSpan> {
    assert!(zp.sentence_index < doc.sentences.len(), "zp sentence out of range");
    assert!(zp.gap <= doc.sentences[zp.sentence_index].tokens.len(), "gap out of range");
    let first = zp.sentence_index.saturating_sub(2);
    let mut out = Vec::new();
    for si in first..=zp.sentence_index {
        for np in &doc.sentences[si].np_spans {
            if !(np.is_maximal || np.is_modifier) {
                continue;
            }
            if si == zp.sentence_index && np.end > zp.gap {
                continue;
            }
            out.push(*np);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Train/dev split
// ---------------------------------------------------------------------------

/// Deterministic instance-level partition: dev gets `round(dev_fraction * n)`
/// instances, both halves keep original instance order, and both share the
/// full document list and vocabulary.
pub fn split_train_dev(corpus: &Corpus, dev_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(0.0..=1.0).contains(&dev_fraction) {
        return Err(Error::Argument(format!("dev_fraction {dev_fraction} outside [0,1]")));
    }
    if corpus.instances.is_empty() {
        return Err(Error::Argument("cannot split an empty corpus".into()));
    }
    let n = corpus.instances.len();
    let n_dev = (dev_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed).derive(0x5711);
    rng.shuffle(&mut order);
    let dev_set: BTreeSet<usize> = order.into_iter().take(n_dev).collect();

    let pick = |keep_dev: bool| -> Result<Corpus> {
        let instances = corpus
            .instances
            .iter()
            .enumerate()
            .filter(|(i, _)| dev_set.contains(i) == keep_dev)
            .map(|(_, inst)| inst.clone())
            .collect();
        Corpus::new(corpus.vocabulary.clone(), corpus.documents.clone(), instances)
    };
    Ok((pick(false)?, pick(true)?))
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SentenceLine {
    tokens: Vec<u32>,
    nps: Vec<(usize, usize, bool, bool)>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum CorpusLine {
    Vocab {
        tokens: Vec<String>,
    },
    Doc {
        id: String,
        source: String,
        sentences: Vec<SentenceLine>,
    },
    Zp {
        doc: String,
        sent: usize,
        gap: usize,
        candidates: Vec<(usize, usize, usize)>,
        gold: Vec<usize>,
    },
}

/// Load and fully validate a JSON-lines corpus file.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);

    let mut vocabulary: Option<Vocabulary> = None;
    let mut documents: Vec<Document> = Vec::new();
    let mut instances: Vec<ZpInstance> = Vec::new();
    let mut seen_docs: HashMap<String, usize> = HashMap::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        match parsed {
            CorpusLine::Vocab { tokens } => {
                if vocabulary.is_some() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "second vocab line".into(),
                    });
                }
                vocabulary = Some(Vocabulary::new(tokens)?);
            }
            CorpusLine::Doc { id, source, sentences } => {
                if vocabulary.is_none() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "doc line before vocab line".into(),
                    });
                }
                let sentences = sentences
                    .into_iter()
                    .enumerate()
                    .map(|(si, s)| Sentence {
                        tokens: s.tokens,
                        np_spans: s
                            .nps
                            .into_iter()
                            .map(|(start, end, is_maximal, is_modifier)| NpSpan {
                                sentence_index: si,
                                start,
                                end,
                                is_maximal,
                                is_modifier,
                            })
                            .collect(),
                    })
                    .collect();
                seen_docs.insert(id.clone(), documents.len());
                documents.push(Document { id, source_tag: source, sentences });
            }
            CorpusLine::Zp { doc, sent, gap, candidates, gold } => {
                let di = *seen_docs.get(&doc).ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: format!("zp line references unseen document {doc:?}"),
                })?;
                let document = &documents[di];
                let candidates = candidates
                    .into_iter()
                    .map(|(csent, start, end)| {
                        // flags come from the document's matching annotation
                        let flags = document
                            .sentences
                            .get(csent)
                            .and_then(|s| {
                                s.np_spans.iter().find(|np| np.start == start && np.end == end)
                            })
                            .map(|np| (np.is_maximal, np.is_modifier))
                            .unwrap_or((false, false));
                        NpSpan {
                            sentence_index: csent,
                            start,
                            end,
                            is_maximal: flags.0,
                            is_modifier: flags.1,
                        }
                    })
                    .collect();
                instances.push(ZpInstance {
                    document_id: doc,
                    sentence_index: sent,
                    gap,
                    candidates,
                    gold_antecedents: gold.into_iter().collect(),
                });
            }
        }
    }

    let vocabulary =
        vocabulary.ok_or_else(|| Error::Parse { line: 0, msg: "missing vocab line".into() })?;
    Corpus::new(vocabulary, documents, instances)
}

/// Write the JSON-lines representation: vocab line, then documents, then
/// instances. Serialization is field-ordered, so equal corpora give
/// byte-identical files.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let enc = |line: &CorpusLine| serde_json::to_string(line).expect("corpus line serializes");

    writeln!(w, "{}", enc(&CorpusLine::Vocab { tokens: corpus.vocabulary.tokens().to_vec() }))?;
    for doc in &corpus.documents {
        let sentences = doc
            .sentences
            .iter()
            .map(|s| SentenceLine {
                tokens: s.tokens.clone(),
                nps: s
                    .np_spans
                    .iter()
                    .map(|np| (np.start, np.end, np.is_maximal, np.is_modifier))
                    .collect(),
            })
            .collect();
        writeln!(
            w,
            "{}",
            enc(&CorpusLine::Doc {
                id: doc.id.clone(),
                source: doc.source_tag.clone(),
                sentences,
            })
        )?;
    }
    for inst in &corpus.instances {
        writeln!(
            w,
            "{}",
            enc(&CorpusLine::Zp {
                doc: inst.document_id.clone(),
                sent: inst.sentence_index,
                gap: inst.gap,
                candidates: inst
                    .candidates
                    .iter()
                    .map(|c| (c.sentence_index, c.start, c.end))
                    .collect(),
                gold: inst.gold_antecedents.iter().copied().collect(),
            })
        )?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Toy corpus generation
// ---------------------------------------------------------------------------

/// Parameters for the synthetic corpus generator.
///
/// Every instance plants a marker token shared between its gold candidates
/// and the zero pronoun's following context, while distractors carry an
/// anti-marker token. A `set_dependent_fraction` of instances instead use a
/// distractor that is lexically identical to an earlier gold candidate, so
/// rejecting it requires the antecedent memory rather than content or
/// positional features.
#[derive(Debug, Clone)]
pub struct ToyCorpusSpec {
    pub n_docs: usize,
    pub instances_per_doc: RangeInclusive<usize>,
    /// Candidate count per plain instance. Gold counts are clamped to leave
    /// exactly at least one distractor.
    pub n_candidates: RangeInclusive<usize>,
    pub n_gold: RangeInclusive<usize>,
    pub vocab_size: usize,
    pub set_dependent_fraction: f64,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        ToyCorpusSpec {
            n_docs: 200,
            instances_per_doc: 2..=2,
            n_candidates: 7..=9,
            n_gold: 7..=9,
            vocab_size: 64,
            set_dependent_fraction: 0.3,
            seed: 0,
        }
    }
}

impl ToyCorpusSpec {
    /// Variant with only set-dependent instances and small candidate sets,
    /// where pooled-memory use has the largest effect on reward.
    pub fn set_dependent_variant(n_docs: usize, seed: u64) -> Self {
        ToyCorpusSpec {
            n_docs,
            set_dependent_fraction: 1.0,
            seed,
            ..ToyCorpusSpec::default()
        }
    }
}

/// Vocabulary ids the generator reserves.
pub const TOY_MARKER_ID: u32 = 1;
pub const TOY_ANTI_MARKER_ID: u32 = 2;
const TOY_FILLER_BASE: u32 = 3;

/// Generate a synthetic corpus with planted coreference signal.
pub fn generate_toy_corpus(spec: &ToyCorpusSpec) -> Result<Corpus> {
    if spec.vocab_size < 16 {
        return Err(Error::Argument("toy vocab_size must be at least 16".into()));
    }
    if spec.n_candidates.is_empty() || spec.n_gold.is_empty() || spec.instances_per_doc.is_empty() {
        return Err(Error::Argument("toy generator ranges must be non-empty".into()));
    }
    if *spec.n_candidates.start() < 2 {
        return Err(Error::Argument("toy instances need at least 2 candidates".into()));
    }
    if !(0.0..=1.0).contains(&spec.set_dependent_fraction) {
        return Err(Error::Argument("set_dependent_fraction outside [0,1]".into()));
    }

    let mut tokens = vec!["<pad>".to_string(), "mk".to_string(), "anti".to_string()];
    for i in TOY_FILLER_BASE..spec.vocab_size as u32 {
        tokens.push(format!("w{i}"));
    }
    let vocabulary = Vocabulary::new(tokens)?;

    let mut rng = RngStream::new(spec.seed).derive(0x70_11);
    let mut documents = Vec::with_capacity(spec.n_docs);
    let mut instances = Vec::new();

    for di in 0..spec.n_docs {
        let mut sentences: Vec<Sentence> = Vec::new();
        let mut doc_instances: Vec<ZpInstance> = Vec::new();
        let n_instances = rng.int_in(*spec.instances_per_doc.start(), *spec.instances_per_doc.end());
        let mut has_set_dependent = false;

        for ni in 0..n_instances {
            if ni > 0 {
                // separator keeps the next instance's two-sentence window out
                // of the previous zero-pronoun sentence
                sentences.push(Sentence {
                    tokens: vec![filler(&mut rng, spec), filler(&mut rng, spec)],
                    np_spans: vec![],
                });
            }
            let set_dependent = rng.uniform() < spec.set_dependent_fraction;
            has_set_dependent |= set_dependent;
            let (mut block, gap, candidates, gold) = if set_dependent {
                generate_set_dependent_block(&mut rng, spec, sentences.len())
            } else {
                generate_plain_block(&mut rng, spec, sentences.len())
            };
            let zp_sentence_index = sentences.len() + block.len() - 1;
            sentences.append(&mut block);
            doc_instances.push(ZpInstance {
                document_id: String::new(), // patched below once the doc id exists
                sentence_index: zp_sentence_index,
                gap,
                candidates,
                gold_antecedents: gold,
            });
        }

        let id = format!("doc-{di:04}");
        let source_tag = if has_set_dependent { "setdep" } else { "plain" };
        for inst in &mut doc_instances {
            inst.document_id = id.clone();
        }
        documents.push(Document { id, source_tag: source_tag.to_string(), sentences });
        instances.extend(doc_instances);
    }

    Corpus::new(vocabulary, documents, instances)
}

fn filler(rng: &mut RngStream, spec: &ToyCorpusSpec) -> u32 {
    TOY_FILLER_BASE + rng.index(spec.vocab_size - TOY_FILLER_BASE as usize) as u32
}

/// Plain instance: one sentence of two-token candidate NPs followed by the
/// zero-pronoun sentence. Gold NPs end with the marker token, the single
/// distractor with the anti-marker, and the gap's following context repeats
/// the marker.
fn generate_plain_block(
    rng: &mut RngStream,
    spec: &ToyCorpusSpec,
    base_sentence: usize,
) -> (Vec<Sentence>, usize, Vec<NpSpan>, BTreeSet<usize>) {
    let c = rng.int_in(*spec.n_candidates.start(), *spec.n_candidates.end());
    let g_raw = rng.int_in(*spec.n_gold.start(), *spec.n_gold.end());
    let g = g_raw.clamp(1, c - 1);

    let mut is_gold: Vec<bool> = (0..c).map(|i| i < g).collect();
    rng.shuffle(&mut is_gold);

    let mut tokens = Vec::new();
    let mut np_spans = Vec::new();
    for gold in &is_gold {
        let start = tokens.len();
        tokens.push(filler(rng, spec));
        tokens.push(if *gold { TOY_MARKER_ID } else { TOY_ANTI_MARKER_ID });
        np_spans.push(NpSpan {
            sentence_index: base_sentence,
            start,
            end: tokens.len(),
            is_maximal: true,
            is_modifier: false,
        });
    }
    // occasional unflagged span: present in the document, never a candidate
    if rng.uniform() < 0.3 {
        let start = rng.index(tokens.len().max(1));
        np_spans.push(NpSpan {
            sentence_index: base_sentence,
            start,
            end: (start + 1).min(tokens.len()),
            is_maximal: false,
            is_modifier: false,
        });
    }
    let candidate_sentence = Sentence { tokens, np_spans: np_spans.clone() };

    let (zp_sentence, gap) = generate_zp_sentence(rng, spec, base_sentence + 1);

    let candidates: Vec<NpSpan> =
        np_spans.iter().filter(|np| np.is_maximal || np.is_modifier).copied().collect();
    let gold: BTreeSet<usize> =
        is_gold.iter().enumerate().filter(|(_, g)| **g).map(|(i, _)| i).collect();

    (vec![candidate_sentence, zp_sentence], gap, candidates, gold)
}

/// Set-dependent instance. Candidate sentence layout (two-token NPs):
///
/// ```text
/// [g1 g1] [A A] [A' A'] [g2 g2]
/// ```
///
/// `A` is gold and `A'` is a lexically identical distractor placed later in
/// document order. Both fall in the same token-distance bucket, neither is
/// first nor nearest, so their handcrafted features coincide and only the
/// antecedent memory separates them.
fn generate_set_dependent_block(
    rng: &mut RngStream,
    spec: &ToyCorpusSpec,
    base_sentence: usize,
) -> (Vec<Sentence>, usize, Vec<NpSpan>, BTreeSet<usize>) {
    let g1 = filler(rng, spec);
    let twin = filler(rng, spec);
    let g2 = filler(rng, spec);

    let tokens = vec![
        g1, TOY_MARKER_ID, // candidate 0: gold
        twin, TOY_MARKER_ID, // candidate 1: gold twin A
        twin, TOY_MARKER_ID, // candidate 2: distractor A'
        g2, TOY_MARKER_ID, // candidate 3: gold, nearest
    ];
    let np_spans: Vec<NpSpan> = (0..4)
        .map(|i| NpSpan {
            sentence_index: base_sentence,
            start: 2 * i,
            end: 2 * i + 2,
            is_maximal: true,
            is_modifier: false,
        })
        .collect();
    let candidate_sentence = Sentence { tokens, np_spans: np_spans.clone() };

    let (zp_sentence, gap) = generate_zp_sentence(rng, spec, base_sentence + 1);

    let gold: BTreeSet<usize> = [0usize, 1, 3].into_iter().collect();
    (vec![candidate_sentence, zp_sentence], gap, np_spans, gold)
}

fn generate_zp_sentence(
    rng: &mut RngStream,
    spec: &ToyCorpusSpec,
    sentence_index: usize,
) -> (Sentence, usize) {
    let mut tokens = Vec::new();
    let n_before = rng.index(3); // 0..=2 tokens before the gap
    for _ in 0..n_before {
        tokens.push(filler(rng, spec));
    }
    let gap = tokens.len();
    tokens.push(TOY_MARKER_ID); // marker shared with gold candidates
    for _ in 0..rng.index(3) {
        tokens.push(filler(rng, spec));
    }
    // occasional post-gap NP, excluded from the candidate window
    let mut np_spans = Vec::new();
    if rng.uniform() < 0.3 {
        np_spans.push(NpSpan {
            sentence_index,
            start: gap,
            end: gap + 1,
            is_maximal: true,
            is_modifier: false,
        });
    }
    (Sentence { tokens, np_spans }, gap)
}

// ---------------------------------------------------------------------------
// Per-source breakdown keys
// ---------------------------------------------------------------------------

/// Ordered set of source tags present in a corpus.
pub fn source_tags(corpus: &Corpus) -> BTreeMap<String, usize> {
    let mut map = BTreeMap::new();
    for inst in &corpus.instances {
        if let Some(doc) = corpus.document(&inst.document_id) {
            *map.entry(doc.source_tag.clone()).or_insert(0) += 1;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    const VOCAB: &str = r#"{"type":"vocab","tokens":["<pad>","mk","anti","w3","w4","w5"]}"#;
    const DOC: &str = r#"{"type":"doc","id":"d0","source":"test","sentences":[{"tokens":[3,1,4,2],"nps":[[0,2,true,false],[2,4,false,true]]},{"tokens":[5,3,4],"nps":[]}]}"#;

    #[test]
    fn load_empty_instances() {
        let f = write_lines(&[VOCAB, DOC]);
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.instances.len(), 0);
        assert_eq!(corpus.documents.len(), 1);
    }

    #[test]
    fn load_one_instance_two_candidates() {
        let zp = r#"{"type":"zp","doc":"d0","sent":1,"gap":1,"candidates":[[0,0,2],[0,2,4]],"gold":[0]}"#;
        let f = write_lines(&[VOCAB, DOC, zp]);
        let corpus = load_corpus(f.path()).unwrap();
        assert_eq!(corpus.instances.len(), 1);
        assert_eq!(corpus.instances[0].candidates.len(), 2);
        // flags recovered from the document annotations
        assert!(corpus.instances[0].candidates[0].is_maximal);
        assert!(corpus.instances[0].candidates[1].is_modifier);
        let summary = corpus.summary();
        assert_eq!(summary.n_instances, 1);
        assert_eq!(summary.n_documents, 1);
    }

    #[test]
    fn gold_out_of_range_is_validation_error() {
        let zp = r#"{"type":"zp","doc":"d0","sent":1,"gap":1,"candidates":[[0,0,2],[0,2,4]],"gold":[5]}"#;
        let f = write_lines(&[VOCAB, DOC, zp]);
        match load_corpus(f.path()) {
            Err(Error::Validation(msg)) => assert!(msg.contains("d0"), "message names doc: {msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let f = write_lines(&[VOCAB, "{not json"]);
        match load_corpus(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    fn doc_with_nps() -> Document {
        // 5 sentences; each sentence has one flagged NP at [0,1) except
        // sentence 4 which holds one before and one after the gap.
        let mut sentences = Vec::new();
        for si in 0..5 {
            sentences.push(Sentence {
                tokens: vec![3, 4, 5],
                np_spans: vec![NpSpan {
                    sentence_index: si,
                    start: 0,
                    end: 1,
                    is_maximal: true,
                    is_modifier: false,
                }],
            });
        }
        sentences[4].np_spans.push(NpSpan {
            sentence_index: 4,
            start: 2,
            end: 3,
            is_maximal: true,
            is_modifier: false,
        });
        Document { id: "d".into(), source_tag: "t".into(), sentences }
    }

    #[test]
    fn extract_candidates_applies_window() {
        let doc = doc_with_nps();
        // zp in sentence 4, gap at 2: sentences 2,3,4 qualify; the span at
        // [2,3) of sentence 4 sits at the gap and is excluded.
        let got = extract_candidates(&doc, ZpLocation { sentence_index: 4, gap: 2 });
        let sents: Vec<usize> = got.iter().map(|np| np.sentence_index).collect();
        assert_eq!(sents, vec![2, 3, 4]);
    }

    #[test]
    fn extract_candidates_empty_when_nothing_precedes() {
        let doc = Document {
            id: "d".into(),
            source_tag: "t".into(),
            sentences: vec![Sentence { tokens: vec![3, 4], np_spans: vec![] }],
        };
        let got = extract_candidates(&doc, ZpLocation { sentence_index: 0, gap: 0 });
        assert!(got.is_empty());
    }

    #[test]
    fn extract_candidates_requires_flags() {
        let mut doc = doc_with_nps();
        for s in &mut doc.sentences {
            for np in &mut s.np_spans {
                np.is_maximal = false;
                np.is_modifier = false;
            }
        }
        let got = extract_candidates(&doc, ZpLocation { sentence_index: 4, gap: 2 });
        assert!(got.is_empty());
    }

    #[test]
    fn split_edge_cases_and_determinism() {
        let corpus = generate_toy_corpus(&ToyCorpusSpec {
            n_docs: 5,
            seed: 3,
            ..ToyCorpusSpec::default()
        })
        .unwrap();
        let n = corpus.instances.len();

        let (train, dev) = split_train_dev(&corpus, 0.0, 1).unwrap();
        assert_eq!(dev.instances.len(), 0);
        assert_eq!(train.instances.len(), n);

        let (train, dev) = split_train_dev(&corpus, 0.2, 1).unwrap();
        assert_eq!(dev.instances.len(), (0.2 * n as f64).round() as usize);
        assert_eq!(train.instances.len() + dev.instances.len(), n);
        // disjoint: every instance appears exactly once across the halves
        let mut all: Vec<&ZpInstance> = train.instances.iter().chain(dev.instances.iter()).collect();
        all.sort_by_key(|i| (i.document_id.clone(), i.sentence_index, i.gap));
        let mut orig: Vec<&ZpInstance> = corpus.instances.iter().collect();
        orig.sort_by_key(|i| (i.document_id.clone(), i.sentence_index, i.gap));
        assert_eq!(all.len(), orig.len());
        for (a, b) in all.iter().zip(orig.iter()) {
            assert_eq!(a, b);
        }

        let (t2, d2) = split_train_dev(&corpus, 0.2, 1).unwrap();
        assert_eq!(train.instances, t2.instances);
        assert_eq!(dev.instances, d2.instances);

        assert!(split_train_dev(&corpus, 1.5, 1).is_err());
    }

    #[test]
    fn toy_corpus_deterministic_and_marked() {
        let spec = ToyCorpusSpec { n_docs: 10, seed: 7, ..ToyCorpusSpec::default() };
        let a = generate_toy_corpus(&spec).unwrap();
        let b = generate_toy_corpus(&spec).unwrap();
        assert_eq!(a, b);

        let empty =
            generate_toy_corpus(&ToyCorpusSpec { n_docs: 0, ..spec.clone() }).unwrap();
        assert!(empty.documents.is_empty() && empty.instances.is_empty());

        // markers: gold candidates contain the marker token, plain
        // distractors carry the anti-marker instead
        for (idx, inst) in a.instances.iter().enumerate() {
            let (doc, _) = a.instance_context(idx);
            let set_dependent = inst.candidates.len() == 4
                && inst.gold_antecedents.len() == 3
                && !inst.gold_antecedents.contains(&2);
            for (ci, cand) in inst.candidates.iter().enumerate() {
                let toks = span_tokens(doc, cand);
                if inst.gold_antecedents.contains(&ci) {
                    assert!(toks.contains(&TOY_MARKER_ID), "gold without marker");
                } else if set_dependent {
                    assert!(toks.contains(&TOY_MARKER_ID), "twin distractor lacks marker");
                } else {
                    assert!(toks.contains(&TOY_ANTI_MARKER_ID), "distractor lacks anti-marker");
                }
            }
            // zp following context shares the marker
            let zp_sent = &doc.sentences[inst.sentence_index];
            assert!(zp_sent.tokens[inst.gap..].contains(&TOY_MARKER_ID));
        }
    }

    #[test]
    fn toy_corpus_roundtrip_is_lossless() {
        let spec = ToyCorpusSpec { n_docs: 12, seed: 9, ..ToyCorpusSpec::default() };
        let corpus = generate_toy_corpus(&spec).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_corpus(&corpus, f.path()).unwrap();
        let reloaded = load_corpus(f.path()).unwrap();
        assert_eq!(corpus, reloaded);

        // byte-identical on re-save
        let f2 = tempfile::NamedTempFile::new().unwrap();
        save_corpus(&reloaded, f2.path()).unwrap();
        assert_eq!(std::fs::read(f.path()).unwrap(), std::fs::read(f2.path()).unwrap());
    }

    #[test]
    fn generated_candidates_match_extraction() {
        let spec = ToyCorpusSpec { n_docs: 15, seed: 21, ..ToyCorpusSpec::default() };
        let corpus = generate_toy_corpus(&spec).unwrap();
        for (idx, inst) in corpus.instances.iter().enumerate() {
            let (doc, _) = corpus.instance_context(idx);
            let extracted = extract_candidates(doc, inst.location());
            assert_eq!(extracted, inst.candidates, "instance {idx} candidate mismatch");
        }
    }

    #[test]
    fn vocab_rejects_duplicates() {
        assert!(Vocabulary::new(vec!["<pad>".into(), "a".into(), "a".into()]).is_err());
    }
}
