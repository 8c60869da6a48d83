//! Handcrafted binary features for a zero-pronoun / candidate pair.
//!
//! Thirteen bits, fixed order; multi-valued quantities are decomposed into
//! one-hot groups. The inventory is positional/structural only — the corpus
//! format carries no parse or lexical resources beyond token ids.
//!
//! | bit | meaning |
//! |-----|---------|
//! | 0-2 | sentence distance zp - candidate ∈ {0, 1, 2}, one-hot |
//! | 3-6 | token distance from span end to gap, bucketed {0-2, 3-5, 6-10, >10}, one-hot |
//! | 7   | candidate starts its sentence |
//! | 8   | candidate span longer than 2 tokens |
//! | 9   | candidate is nearest to the gap (ties: later document order wins) |
//! | 10  | candidate is first in document order |
//! | 11  | another candidate has identical token ids |
//! | 12  | candidate sentence is the zp sentence |

use crate::corpus::{span_tokens, Document, NpSpan, ZpLocation};

/// Number of feature bits; part of the state dimension.
pub const FEATURE_COUNT: usize = 13;

/// Version tag serialized into checkpoints; bump on any change to the
/// feature inventory or ordering.
pub const FEATURE_VERSION: &str = "positional-13-v1";

/// Tokens between the end of a candidate span and the gap, crossing
/// sentence boundaries.
pub fn token_distance(doc: &Document, zp: ZpLocation, cand: &NpSpan) -> usize {
    if cand.sentence_index == zp.sentence_index {
        zp.gap - cand.end
    } else {
        let mut dist = doc.sentences[cand.sentence_index].tokens.len() - cand.end;
        for si in cand.sentence_index + 1..zp.sentence_index {
            dist += doc.sentences[si].tokens.len();
        }
        dist + zp.gap
    }
}

fn distance_bucket(dist: usize) -> usize {
    match dist {
        0..=2 => 0,
        3..=5 => 1,
        6..=10 => 2,
        _ => 3,
    }
}

/// Index (within `candidates`) of the candidate nearest to the gap.
fn nearest_candidate(doc: &Document, zp: ZpLocation, candidates: &[NpSpan]) -> usize {
    let mut best = 0;
    let mut best_dist = usize::MAX;
    for (i, c) in candidates.iter().enumerate() {
        let d = token_distance(doc, zp, c);
        if d <= best_dist {
            best = i;
            best_dist = d;
        }
    }
    best
}

/// Binary feature vector for one candidate of an instance. The full candidate
/// list is needed for the nearest/first/duplicate bits; the function is pure
/// in all of its arguments.
pub fn extract_features(
    doc: &Document,
    zp: ZpLocation,
    candidates: &[NpSpan],
    candidate_index: usize,
) -> Vec<f64> {
    assert!(candidate_index < candidates.len(), "candidate index out of range");
    let cand = &candidates[candidate_index];
    let mut bits = vec![0.0; FEATURE_COUNT];

    let sent_dist = zp.sentence_index - cand.sentence_index;
    debug_assert!(sent_dist <= 2, "candidate outside the two-sentence window");
    bits[sent_dist.min(2)] = 1.0;

    let dist = token_distance(doc, zp, cand);
    bits[3 + distance_bucket(dist)] = 1.0;

    if cand.start == 0 {
        bits[7] = 1.0;
    }
    if cand.end - cand.start > 2 {
        bits[8] = 1.0;
    }
    if nearest_candidate(doc, zp, candidates) == candidate_index {
        bits[9] = 1.0;
    }
    if candidate_index == 0 {
        bits[10] = 1.0;
    }
    let my_tokens = span_tokens(doc, cand);
    let duplicated = candidates
        .iter()
        .enumerate()
        .any(|(i, other)| i != candidate_index && span_tokens(doc, other) == my_tokens);
    if duplicated {
        bits[11] = 1.0;
    }
    if cand.sentence_index == zp.sentence_index {
        bits[12] = 1.0;
    }

    bits
}
