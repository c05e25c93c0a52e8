//! Retrieval and recognition metrics with the three task protocols:
//! query-by-example (leave-one-out image retrieval), query-by-string and
//! lexicon-constrained recognition.
//!
//! All rankings are deterministic: candidates are ordered by descending
//! score with ties broken by ascending candidate id.

use crate::alphabet::fold_case;
use crate::error::{Error, Result};
use ndarray::{ArrayView1, ArrayView2};

/// One ranked list with relevance flags, scores non-increasing.
#[derive(Debug, Clone)]
pub struct RankedResult {
    pub query_id: String,
    /// (candidate id, score), best first.
    pub ranked: Vec<(String, f64)>,
    pub relevance: Vec<bool>,
}

/// Sort candidates by (score desc, id asc) into a [`RankedResult`].
pub fn rank_candidates(
    query_id: &str,
    mut candidates: Vec<(String, f64, bool)>,
) -> RankedResult {
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    RankedResult {
        query_id: query_id.to_string(),
        ranked: candidates.iter().map(|(id, s, _)| (id.clone(), *s)).collect(),
        relevance: candidates.iter().map(|(_, _, r)| *r).collect(),
    }
}

/// Average precision of a ranked relevance list: the mean over relevant
/// ranks `r` of `(#relevant <= r) / r`. Returns `None` when the list has no
/// relevant item (the caller must exclude such queries).
pub fn average_precision(relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        None
    } else {
        Some(sum / hits as f64)
    }
}

/// Aggregated retrieval metrics.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct RetrievalMetrics {
    pub map: f64,
    pub p_at_1: f64,
    /// Queries that had at least one relevant item and were scored.
    pub retained_queries: usize,
    pub total_queries: usize,
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b)
}

/// Leave-one-out query-by-example over unit-norm embeddings: every image
/// queries all others, relevance is case-folded transcription equality,
/// queries without any relevant item are skipped.
pub fn qbe_eval(
    embeddings: ArrayView2<f64>,
    ids: &[String],
    transcriptions: &[String],
) -> Result<RetrievalMetrics> {
    let n = embeddings.nrows();
    if n < 2 {
        return Err(Error::InvalidInput("qbe_eval needs at least 2 items".into()));
    }
    if ids.len() != n || transcriptions.len() != n {
        return Err(Error::Dimension {
            what: "qbe_eval metadata",
            expected: n,
            got: ids.len().min(transcriptions.len()),
        });
    }
    let folded: Vec<String> = transcriptions.iter().map(|t| fold_case(t)).collect();
    let mut ap_sum = 0.0;
    let mut p1_sum = 0.0;
    let mut retained = 0usize;
    for q in 0..n {
        let mut cands = Vec::with_capacity(n - 1);
        for c in 0..n {
            if c == q {
                continue;
            }
            let score = cosine(embeddings.row(q), embeddings.row(c));
            cands.push((ids[c].clone(), score, folded[c] == folded[q]));
        }
        let ranked = rank_candidates(&ids[q], cands);
        if let Some(ap) = average_precision(&ranked.relevance) {
            ap_sum += ap;
            p1_sum += if ranked.relevance[0] { 1.0 } else { 0.0 };
            retained += 1;
        }
    }
    Ok(RetrievalMetrics {
        map: if retained > 0 { ap_sum / retained as f64 } else { 0.0 },
        p_at_1: if retained > 0 { p1_sum / retained as f64 } else { 0.0 },
        retained_queries: retained,
        total_queries: n,
    })
}

/// Query-by-string: each unique (case-folded) query string ranks all
/// images; relevance is transcription match. Queries with no relevant image
/// are skipped.
pub fn qbs_eval(
    query_embeddings: &[(String, ndarray::Array1<f64>)],
    image_embeddings: ArrayView2<f64>,
    ids: &[String],
    transcriptions: &[String],
) -> Result<RetrievalMetrics> {
    let n = image_embeddings.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("qbs_eval: empty image set".into()));
    }
    if ids.len() != n || transcriptions.len() != n {
        return Err(Error::Dimension {
            what: "qbs_eval metadata",
            expected: n,
            got: ids.len().min(transcriptions.len()),
        });
    }
    let folded: Vec<String> = transcriptions.iter().map(|t| fold_case(t)).collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut ap_sum = 0.0;
    let mut p1_sum = 0.0;
    let mut retained = 0usize;
    let mut total = 0usize;
    for (text, emb) in query_embeddings {
        let key = fold_case(text);
        if !seen.insert(key.clone()) {
            continue; // each unique string queried once
        }
        total += 1;
        let mut cands = Vec::with_capacity(n);
        for c in 0..n {
            let score = cosine(emb.view(), image_embeddings.row(c));
            cands.push((ids[c].clone(), score, folded[c] == key));
        }
        let ranked = rank_candidates(text, cands);
        if let Some(ap) = average_precision(&ranked.relevance) {
            ap_sum += ap;
            p1_sum += if ranked.relevance[0] { 1.0 } else { 0.0 };
            retained += 1;
        }
    }
    Ok(RetrievalMetrics {
        map: if retained > 0 { ap_sum / retained as f64 } else { 0.0 },
        p_at_1: if retained > 0 { p1_sum / retained as f64 } else { 0.0 },
        retained_queries: retained,
        total_queries: total,
    })
}

/// Recognition accuracy.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct RecognitionMetrics {
    pub p_at_1: f64,
    pub correct: usize,
    pub total: usize,
}

/// Lexicon-constrained recognition: predict the maximum-cosine lexicon
/// entry per image (ties broken lexicographically). Every image's lexicon
/// must contain its ground-truth word, case-folded.
pub fn recognition_eval(
    image_embeddings: ArrayView2<f64>,
    transcriptions: &[String],
    lexicons: &[Vec<String>],
    mut embed_string: impl FnMut(&str) -> Result<ndarray::Array1<f64>>,
) -> Result<RecognitionMetrics> {
    let n = image_embeddings.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("recognition_eval: empty test set".into()));
    }
    if transcriptions.len() != n || lexicons.len() != n {
        return Err(Error::Dimension {
            what: "recognition_eval metadata",
            expected: n,
            got: transcriptions.len().min(lexicons.len()),
        });
    }
    // embed each unique lexicon word once
    let mut cache: std::collections::BTreeMap<String, ndarray::Array1<f64>> =
        std::collections::BTreeMap::new();
    let mut correct = 0usize;
    for i in 0..n {
        let gt = fold_case(&transcriptions[i]);
        if !lexicons[i].iter().any(|w| fold_case(w) == gt) {
            return Err(Error::Protocol(format!(
                "lexicon for image {i} does not contain the ground truth {gt:?}"
            )));
        }
        let mut best: Option<(f64, String)> = None;
        for word in &lexicons[i] {
            let key = fold_case(word);
            if !cache.contains_key(&key) {
                let emb = embed_string(&key)?;
                cache.insert(key.clone(), emb);
            }
            let score = cosine(image_embeddings.row(i), cache[&key].view());
            let better = match &best {
                None => true,
                Some((bs, bw)) => score > *bs || (score == *bs && key < *bw),
            };
            if better {
                best = Some((score, key));
            }
        }
        if best.expect("non-empty lexicon").1 == gt {
            correct += 1;
        }
    }
    Ok(RecognitionMetrics {
        p_at_1: correct as f64 / n as f64,
        correct,
        total: n,
    })
}
