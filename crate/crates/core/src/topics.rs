//! Text pipeline for the chain-of-thought explanations: preprocessing
//! with Porter stemming, bag-of-words corpus construction, collapsed
//! Gibbs LDA, topic labeling/merging, and per-condition prevalence
//! analytics with cell-clustered confidence intervals.

use crate::econometrics::{self, clustered_mean_ci, OlsFit, TopicSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use thiserror::Error;

/// Standard English stopword list shipped with the crate. The
/// context-specific list is empty by default and supplied by callers;
/// domain words such as "token", "option", and "month" are deliberately
/// not removed.
pub const ENGLISH_STOPWORDS: &str = include_str!("assets/stopwords_english.txt");

pub fn default_stopwords() -> HashSet<String> {
    ENGLISH_STOPWORDS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Error)]
pub enum TopicsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("topic count must be at least 1")]
    BadTopicCount,
    #[error("merge map must cover all {expected} raw topics, covers {actual}")]
    PartialMergeMap { expected: usize, actual: usize },
}

// ---------------------------------------------------------------------------
// Porter stemmer (classic 1980 algorithm, reference-implementation
// behaviour including its documented departures: bli->ble, logi->log,
// and leaving words of length <= 2 untouched).
// ---------------------------------------------------------------------------

struct Stemmer {
    b: Vec<u8>,
    /// Number of letters before the currently matched suffix (set by
    /// `ends`); the measure and vowel tests apply to b[0..stem_len].
    stem_len: usize,
    /// Index of the last letter of the word.
    k: usize,
}

impl Stemmer {
    fn is_consonant(&self, i: usize) -> bool {
        match self.b[i] {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => {
                if i == 0 {
                    true
                } else {
                    !self.is_consonant(i - 1)
                }
            }
            _ => true,
        }
    }

    /// Measure: the number of vowel-consonant sequences in the stem
    /// b[0..stem_len].
    fn measure(&self) -> usize {
        let mut n = 0;
        let mut i = 0;
        loop {
            if i >= self.stem_len {
                return n;
            }
            if !self.is_consonant(i) {
                break;
            }
            i += 1;
        }
        i += 1;
        loop {
            loop {
                if i >= self.stem_len {
                    return n;
                }
                if self.is_consonant(i) {
                    break;
                }
                i += 1;
            }
            i += 1;
            n += 1;
            loop {
                if i >= self.stem_len {
                    return n;
                }
                if !self.is_consonant(i) {
                    break;
                }
                i += 1;
            }
            i += 1;
        }
    }

    fn vowel_in_stem(&self) -> bool {
        (0..self.stem_len).any(|i| !self.is_consonant(i))
    }

    /// True when b[i-1] and b[i] are the same consonant.
    fn double_consonant(&self, i: usize) -> bool {
        i >= 1 && self.b[i] == self.b[i - 1] && self.is_consonant(i)
    }

    /// consonant-vowel-consonant ending at i, where the final consonant
    /// is not w, x, or y; used to restore a trailing e (cav(e), lov(e)).
    fn cvc(&self, i: usize) -> bool {
        if i < 2 || !self.is_consonant(i) || self.is_consonant(i - 1) || !self.is_consonant(i - 2) {
            return false;
        }
        !matches!(self.b[i], b'w' | b'x' | b'y')
    }

    /// True when the word ends with suffix `s`; on success records the
    /// stem length (letters before the suffix).
    fn ends(&mut self, s: &[u8]) -> bool {
        let len = s.len();
        if len > self.k + 1 || self.b[self.k + 1 - len..=self.k] != *s {
            return false;
        }
        self.stem_len = self.k + 1 - len;
        true
    }

    /// Replace the matched suffix with `s` (sets k accordingly).
    fn set_to(&mut self, s: &[u8]) {
        self.b.truncate(self.stem_len);
        self.b.extend_from_slice(s);
        self.k = self.b.len() - 1;
    }

    fn replace_if_m_gt_0(&mut self, s: &[u8]) {
        if self.measure() > 0 {
            self.set_to(s);
        }
    }

    /// Step 1a: plurals. Step 1b: -ed and -ing. Step 1c: y -> i.
    fn step1ab(&mut self) {
        if self.b[self.k] == b's' {
            if self.ends(b"sses") {
                self.k -= 2;
            } else if self.ends(b"ies") {
                self.set_to(b"i");
            } else if self.b[self.k - 1] != b's' {
                self.k -= 1;
            }
            self.b.truncate(self.k + 1);
        }
        if self.ends(b"eed") {
            if self.measure() > 0 {
                self.k -= 1;
                self.b.truncate(self.k + 1);
            }
        } else if (self.ends(b"ed") || self.ends(b"ing")) && self.vowel_in_stem() {
            self.k = self.stem_len - 1;
            self.b.truncate(self.k + 1);
            if self.ends(b"at") {
                self.set_to(b"ate");
            } else if self.ends(b"bl") {
                self.set_to(b"ble");
            } else if self.ends(b"iz") {
                self.set_to(b"ize");
            } else if self.double_consonant(self.k) {
                if !matches!(self.b[self.k], b'l' | b's' | b'z') {
                    self.k -= 1;
                    self.b.truncate(self.k + 1);
                }
            } else {
                self.stem_len = self.k + 1;
                if self.measure() == 1 && self.cvc(self.k) {
                    self.b.push(b'e');
                    self.k += 1;
                }
            }
        }
    }

    fn step1c(&mut self) {
        if self.ends(b"y") && self.vowel_in_stem() {
            self.b[self.k] = b'i';
        }
    }

    /// Step 2: map double suffixes to single ones when m > 0.
    fn step2(&mut self) {
        if self.k == 0 {
            return;
        }
        match self.b[self.k - 1] {
            b'a' => {
                if self.ends(b"ational") {
                    self.replace_if_m_gt_0(b"ate");
                } else if self.ends(b"tional") {
                    self.replace_if_m_gt_0(b"tion");
                }
            }
            b'c' => {
                if self.ends(b"enci") {
                    self.replace_if_m_gt_0(b"ence");
                } else if self.ends(b"anci") {
                    self.replace_if_m_gt_0(b"ance");
                }
            }
            b'e' => {
                if self.ends(b"izer") {
                    self.replace_if_m_gt_0(b"ize");
                }
            }
            b'l' => {
                if self.ends(b"bli") {
                    self.replace_if_m_gt_0(b"ble");
                } else if self.ends(b"alli") {
                    self.replace_if_m_gt_0(b"al");
                } else if self.ends(b"entli") {
                    self.replace_if_m_gt_0(b"ent");
                } else if self.ends(b"eli") {
                    self.replace_if_m_gt_0(b"e");
                } else if self.ends(b"ousli") {
                    self.replace_if_m_gt_0(b"ous");
                }
            }
            b'o' => {
                if self.ends(b"ization") {
                    self.replace_if_m_gt_0(b"ize");
                } else if self.ends(b"ation") {
                    self.replace_if_m_gt_0(b"ate");
                } else if self.ends(b"ator") {
                    self.replace_if_m_gt_0(b"ate");
                }
            }
            b's' => {
                if self.ends(b"alism") {
                    self.replace_if_m_gt_0(b"al");
                } else if self.ends(b"iveness") {
                    self.replace_if_m_gt_0(b"ive");
                } else if self.ends(b"fulness") {
                    self.replace_if_m_gt_0(b"ful");
                } else if self.ends(b"ousness") {
                    self.replace_if_m_gt_0(b"ous");
                }
            }
            b't' => {
                if self.ends(b"aliti") {
                    self.replace_if_m_gt_0(b"al");
                } else if self.ends(b"iviti") {
                    self.replace_if_m_gt_0(b"ive");
                } else if self.ends(b"biliti") {
                    self.replace_if_m_gt_0(b"ble");
                }
            }
            b'g' => {
                if self.ends(b"logi") {
                    self.replace_if_m_gt_0(b"log");
                }
            }
            _ => {}
        }
    }

    /// Step 3: -ic-, -full, -ness and similar.
    fn step3(&mut self) {
        match self.b[self.k] {
            b'e' => {
                if self.ends(b"icate") {
                    self.replace_if_m_gt_0(b"ic");
                } else if self.ends(b"ative") {
                    self.replace_if_m_gt_0(b"");
                } else if self.ends(b"alize") {
                    self.replace_if_m_gt_0(b"al");
                }
            }
            b'i' => {
                if self.ends(b"iciti") {
                    self.replace_if_m_gt_0(b"ic");
                }
            }
            b'l' => {
                if self.ends(b"ical") {
                    self.replace_if_m_gt_0(b"ic");
                } else if self.ends(b"ful") {
                    self.replace_if_m_gt_0(b"");
                }
            }
            b's' => {
                if self.ends(b"ness") {
                    self.replace_if_m_gt_0(b"");
                }
            }
            _ => {}
        }
    }

    /// Step 4: drop -ant, -ence and similar when m > 1.
    fn step4(&mut self) {
        if self.k == 0 {
            return;
        }
        let matched = match self.b[self.k - 1] {
            b'a' => self.ends(b"al"),
            b'c' => self.ends(b"ance") || self.ends(b"ence"),
            b'e' => self.ends(b"er"),
            b'i' => self.ends(b"ic"),
            b'l' => self.ends(b"able") || self.ends(b"ible"),
            b'n' => {
                self.ends(b"ant") || self.ends(b"ement") || self.ends(b"ment") || self.ends(b"ent")
            }
            b'o' => {
                (self.ends(b"ion")
                    && self.stem_len >= 1
                    && matches!(self.b[self.stem_len - 1], b's' | b't'))
                    || self.ends(b"ou")
            }
            b's' => self.ends(b"ism"),
            b't' => self.ends(b"ate") || self.ends(b"iti"),
            b'u' => self.ends(b"ous"),
            b'v' => self.ends(b"ive"),
            b'z' => self.ends(b"ize"),
            _ => false,
        };
        if matched && self.measure() > 1 {
            self.k = self.stem_len - 1;
            self.b.truncate(self.k + 1);
        }
    }

    /// Step 5: remove a final -e and reduce -ll when m > 1.
    fn step5(&mut self) {
        self.stem_len = self.k + 1;
        if self.b[self.k] == b'e' {
            let a = self.measure();
            if a > 1 || (a == 1 && !self.cvc(self.k - 1)) {
                self.k -= 1;
                self.b.truncate(self.k + 1);
            }
        }
        self.stem_len = self.k + 1;
        if self.b[self.k] == b'l' && self.double_consonant(self.k) && self.measure() > 1 {
            self.k -= 1;
            self.b.truncate(self.k + 1);
        }
    }
}

/// Classic Porter (1980) stem of a lowercase alphabetic word. Words of
/// length 1-2 are returned unchanged.
pub fn porter_stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_owned();
    }
    let mut s = Stemmer {
        b: word.as_bytes().to_vec(),
        stem_len: 0,
        k: word.len() - 1,
    };
    s.step1ab();
    s.step1c();
    s.step2();
    s.step3();
    s.step4();
    s.step5();
    s.b.truncate(s.k + 1);
    String::from_utf8(s.b).expect("stemmer operates on ascii")
}

/// Lowercase, tokenize on non-letter boundaries, drop stopwords,
/// numerics, and words shorter than three letters, then Porter-stem
/// every survivor.
pub fn preprocess(
    text: &str,
    stopwords: &HashSet<String>,
    context_stopwords: &HashSet<String>,
) -> Vec<String> {
    let lowered = text.to_lowercase();
    lowered
        .split(|c: char| !c.is_alphabetic())
        .filter(|tok| tok.len() >= 3)
        .filter(|tok| tok.chars().all(|c| c.is_ascii_alphabetic()))
        .filter(|tok| !stopwords.contains(*tok) && !context_stopwords.contains(*tok))
        .map(porter_stem)
        .collect()
}

// ---------------------------------------------------------------------------
// Corpus and LDA
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    /// Key of the sample this explanation came from.
    pub sample_ref: String,
    /// English text (already translated when the source language is not
    /// English).
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    /// Stemmed vocabulary, sorted.
    pub vocab: Vec<String>,
    /// Per-document token lists as vocabulary indices (token order is
    /// irrelevant under exchangeability but preserved for bookkeeping).
    pub doc_tokens: Vec<Vec<usize>>,
    /// sample_ref per retained document, aligned with doc_tokens.
    pub doc_refs: Vec<String>,
    /// sample_refs of documents dropped for being empty after
    /// preprocessing.
    pub excluded_refs: Vec<String>,
}

impl Corpus {
    pub fn n_docs(&self) -> usize {
        self.doc_tokens.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.doc_tokens.iter().map(Vec::len).sum()
    }
}

/// Build the bag-of-words corpus; documents empty after preprocessing
/// are excluded and reported via `excluded_refs`.
pub fn build_corpus(
    documents: &[Document],
    stopwords: &HashSet<String>,
    context_stopwords: &HashSet<String>,
) -> Corpus {
    let mut stemmed: Vec<(String, Vec<String>)> = Vec::new();
    let mut excluded_refs = Vec::new();
    for doc in documents {
        let tokens = preprocess(&doc.text, stopwords, context_stopwords);
        if tokens.is_empty() {
            excluded_refs.push(doc.sample_ref.clone());
        } else {
            stemmed.push((doc.sample_ref.clone(), tokens));
        }
    }
    let mut vocab: Vec<String> = stemmed
        .iter()
        .flat_map(|(_, toks)| toks.iter().cloned())
        .collect();
    vocab.sort();
    vocab.dedup();
    let index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut doc_tokens = Vec::with_capacity(stemmed.len());
    let mut doc_refs = Vec::with_capacity(stemmed.len());
    for (sample_ref, toks) in stemmed {
        doc_tokens.push(toks.iter().map(|t| index[t.as_str()]).collect());
        doc_refs.push(sample_ref);
    }
    Corpus {
        vocab,
        doc_tokens,
        doc_refs,
        excluded_refs,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaModel {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    /// topic_term_counts[topic][term]
    pub topic_term_counts: Vec<Vec<u32>>,
    /// doc_topic_counts[doc][topic]
    pub doc_topic_counts: Vec<Vec<u32>>,
    /// Per-topic token totals (row sums of topic_term_counts).
    pub topic_totals: Vec<u32>,
    /// Per-token topic labels, aligned with the corpus doc_tokens.
    pub assignments: Vec<Vec<u8>>,
    pub vocab: Vec<String>,
    pub seed: u64,
}

pub fn default_alpha(k: usize) -> f64 {
    50.0 / k as f64
}

pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_SWEEPS: usize = 1000;
pub const DEFAULT_K: usize = 4;

impl LdaModel {
    /// Count-matrix consistency: marginals of both matrices match the
    /// assignment totals.
    pub fn counts_consistent(&self, corpus: &Corpus) -> bool {
        let mut tt = vec![vec![0u32; self.vocab.len()]; self.k];
        let mut dt = vec![vec![0u32; self.k]; corpus.n_docs()];
        for (d, tokens) in corpus.doc_tokens.iter().enumerate() {
            for (pos, &term) in tokens.iter().enumerate() {
                let z = self.assignments[d][pos] as usize;
                tt[z][term] += 1;
                dt[d][z] += 1;
            }
        }
        let totals: Vec<u32> = tt.iter().map(|row| row.iter().sum()).collect();
        tt == self.topic_term_counts && dt == self.doc_topic_counts && totals == self.topic_totals
    }

    /// Smoothed topic-term probability.
    pub fn phi(&self, topic: usize, term: usize) -> f64 {
        let v = self.vocab.len() as f64;
        (self.topic_term_counts[topic][term] as f64 + self.beta)
            / (self.topic_totals[topic] as f64 + v * self.beta)
    }
}

/// Collapsed Gibbs sampling for `iters` full sweeps from a seeded
/// random initialization. Deterministic for a fixed (corpus, seed,
/// hyperparameters).
pub fn fit_lda(
    corpus: &Corpus,
    k: usize,
    alpha: f64,
    beta: f64,
    iters: usize,
    seed: u64,
) -> Result<LdaModel, TopicsError> {
    if corpus.n_docs() == 0 || corpus.n_tokens() == 0 {
        return Err(TopicsError::EmptyCorpus);
    }
    if k == 0 || k > u8::MAX as usize {
        return Err(TopicsError::BadTopicCount);
    }
    let v = corpus.vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut topic_term_counts = vec![vec![0u32; v]; k];
    let mut doc_topic_counts = vec![vec![0u32; k]; corpus.n_docs()];
    let mut topic_totals = vec![0u32; k];
    let mut assignments: Vec<Vec<u8>> = Vec::with_capacity(corpus.n_docs());

    for (d, tokens) in corpus.doc_tokens.iter().enumerate() {
        let mut doc_assign = Vec::with_capacity(tokens.len());
        for &term in tokens {
            let z = rng.gen_range(0..k);
            doc_assign.push(z as u8);
            topic_term_counts[z][term] += 1;
            doc_topic_counts[d][z] += 1;
            topic_totals[z] += 1;
        }
        assignments.push(doc_assign);
    }

    let vb = v as f64 * beta;
    let mut weights = vec![0.0f64; k];
    for _sweep in 0..iters {
        if k == 1 {
            break;
        }
        for (d, tokens) in corpus.doc_tokens.iter().enumerate() {
            for (pos, &term) in tokens.iter().enumerate() {
                let old = assignments[d][pos] as usize;
                topic_term_counts[old][term] -= 1;
                doc_topic_counts[d][old] -= 1;
                topic_totals[old] -= 1;

                let mut total = 0.0;
                for (t, w) in weights.iter_mut().enumerate() {
                    total += (doc_topic_counts[d][t] as f64 + alpha)
                        * (topic_term_counts[t][term] as f64 + beta)
                        / (topic_totals[t] as f64 + vb);
                    *w = total;
                }
                let new = sample_from_cumulative(&weights, &mut rng);
                assignments[d][pos] = new as u8;
                topic_term_counts[new][term] += 1;
                doc_topic_counts[d][new] += 1;
                topic_totals[new] += 1;
            }
        }
    }

    Ok(LdaModel {
        k,
        alpha,
        beta,
        topic_term_counts,
        doc_topic_counts,
        topic_totals,
        assignments,
        vocab: corpus.vocab.clone(),
        seed,
    })
}

/// Draw a topic index from an already-accumulated cumulative weight
/// vector (avoids a distribution allocation per token in the Gibbs
/// inner loop).
fn sample_from_cumulative(cumulative: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cumulative.last().expect("non-empty weights");
    let u = rng.gen::<f64>() * total;
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

/// Result of folding one document into a frozen model.
#[derive(Debug, Clone)]
pub struct DocTopics {
    /// Posterior-mean topic probabilities; sums to 1 within 1e-12.
    pub theta: Vec<f64>,
    /// True when the document was empty and the uniform fallback was
    /// used.
    pub empty_fallback: bool,
}

/// Gibbs-within-document inference with the model's count matrices
/// frozen; returns the smoothed (count + alpha) posterior mean averaged
/// over the second half of the sweeps. Empty documents get the uniform
/// simplex with a flag.
pub fn infer_doc_topics(model: &LdaModel, doc_terms: &[usize], iters: usize, seed: u64) -> DocTopics {
    let k = model.k;
    if doc_terms.is_empty() {
        return DocTopics {
            theta: vec![1.0 / k as f64; k],
            empty_fallback: true,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut local_counts = vec![0u32; k];
    let mut assign: Vec<usize> = doc_terms
        .iter()
        .map(|_| rng.gen_range(0..k))
        .collect();
    for &z in &assign {
        local_counts[z] += 1;
    }
    let vb = model.vocab.len() as f64 * model.beta;
    let mut weights = vec![0.0f64; k];
    let mut theta_acc = vec![0.0f64; k];
    let mut acc_n = 0usize;
    let half = iters / 2;
    for sweep in 0..iters.max(1) {
        if k > 1 {
            for (pos, &term) in doc_terms.iter().enumerate() {
                let old = assign[pos];
                local_counts[old] -= 1;
                let mut total = 0.0;
                for (t, w) in weights.iter_mut().enumerate() {
                    total += (local_counts[t] as f64 + model.alpha)
                        * (model.topic_term_counts[t][term] as f64 + model.beta)
                        / (model.topic_totals[t] as f64 + vb);
                    *w = total;
                }
                let new = sample_from_cumulative(&weights, &mut rng);
                assign[pos] = new;
                local_counts[new] += 1;
            }
        }
        if sweep >= half {
            let denom = doc_terms.len() as f64 + k as f64 * model.alpha;
            for t in 0..k {
                theta_acc[t] += (local_counts[t] as f64 + model.alpha) / denom;
            }
            acc_n += 1;
        }
    }
    let mut theta: Vec<f64> = theta_acc.iter().map(|s| s / acc_n as f64).collect();
    // Renormalize away accumulated rounding so the simplex sums to 1.
    let total: f64 = theta.iter().sum();
    for t in theta.iter_mut() {
        *t /= total;
    }
    DocTopics {
        theta,
        empty_fallback: false,
    }
}

/// Per-topic top-`n` terms ranked by smoothed topic-term probability,
/// ties broken lexicographically.
pub fn top_words(model: &LdaModel, n: usize) -> Vec<Vec<String>> {
    (0..model.k)
        .map(|topic| {
            let mut terms: Vec<usize> = (0..model.vocab.len()).collect();
            terms.sort_by(|&a, &b| {
                model.topic_term_counts[topic][b]
                    .cmp(&model.topic_term_counts[topic][a])
                    .then_with(|| model.vocab[a].cmp(&model.vocab[b]))
            });
            terms
                .into_iter()
                .take(n)
                .map(|t| model.vocab[t].clone())
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Topic labeling and prevalence analytics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TopicLabel {
    RiskUncertainty,
    OpportunityCost,
    Urgency,
}

impl TopicLabel {
    pub const ALL: [TopicLabel; 3] = [
        TopicLabel::RiskUncertainty,
        TopicLabel::OpportunityCost,
        TopicLabel::Urgency,
    ];
}

impl fmt::Display for TopicLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TopicLabel::RiskUncertainty => "Risk and uncertainty",
            TopicLabel::OpportunityCost => "Opportunity cost",
            TopicLabel::Urgency => "Urgency",
        };
        f.write_str(s)
    }
}

/// Total map from raw topic index (0-based) to a merged label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicLabeling {
    pub merge_map: Vec<TopicLabel>,
}

impl TopicLabeling {
    /// The published mapping for K=4: raw topic 1 -> Risk, topics 2 and
    /// 4 -> Opportunity (merged), topic 3 -> Urgency (1-based as in the
    /// source table; stored 0-based).
    pub fn default_k4() -> Self {
        TopicLabeling {
            merge_map: vec![
                TopicLabel::RiskUncertainty,
                TopicLabel::OpportunityCost,
                TopicLabel::Urgency,
                TopicLabel::OpportunityCost,
            ],
        }
    }

    pub fn validate(&self, k: usize) -> Result<(), TopicsError> {
        if self.merge_map.len() != k {
            return Err(TopicsError::PartialMergeMap {
                expected: k,
                actual: self.merge_map.len(),
            });
        }
        Ok(())
    }

    /// Merge a raw K-simplex into the labeled 3-simplex.
    pub fn merge(&self, theta: &[f64]) -> [f64; 3] {
        let mut out = [0.0f64; 3];
        for (raw, &label) in self.merge_map.iter().enumerate() {
            let slot = TopicLabel::ALL.iter().position(|&l| l == label).unwrap();
            out[slot] += theta[raw];
        }
        out
    }
}

/// One document's topic probabilities joined to its experimental
/// conditions.
#[derive(Debug, Clone)]
pub struct ConditionedTheta {
    pub sample_ref: String,
    pub language: String,
    pub ftr_strong: bool,
    pub delay_months: u32,
    pub interest: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupAggregate {
    pub group: String,
    pub label: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct PrevalenceAnalytics {
    /// Corpus mean of each merged topic's raw prevalence (the
    /// normalization denominators).
    pub corpus_means: [f64; 3],
    /// Per-row normalized prevalences, aligned with the input rows.
    pub normalized: Vec<[f64; 3]>,
    pub by_interest: Vec<GroupAggregate>,
    pub by_delay: Vec<GroupAggregate>,
    pub by_language: Vec<GroupAggregate>,
    /// Input dataset for the per-topic FTR regression.
    pub regression_input: Vec<(String, Vec<TopicSample>)>,
}

fn aggregate_by<F: Fn(&ConditionedTheta) -> String>(
    rows: &[ConditionedTheta],
    normalized: &[[f64; 3]],
    key_fn: F,
) -> Vec<GroupAggregate> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (idx, row) in rows.iter().enumerate() {
        groups.entry(key_fn(row)).or_default().push(idx);
    }
    let mut out = Vec::new();
    for (group, idxs) in groups {
        for (slot, label) in TopicLabel::ALL.iter().enumerate() {
            let values: Vec<(f64, String)> = idxs
                .iter()
                .map(|&idx| {
                    let row = &rows[idx];
                    (
                        normalized[idx][slot],
                        format!("{}:{}:{}", row.language, row.delay_months, row.interest),
                    )
                })
                .collect();
            let (mean, ci_low, ci_high) = clustered_mean_ci(&values);
            out.push(GroupAggregate {
                group: group.clone(),
                label: label.to_string(),
                mean,
                ci_low,
                ci_high,
                n: values.len(),
            });
        }
    }
    out
}

/// Merged-topic prevalence analytics: normalization by the corpus mean
/// (so the corpus mean of every normalized topic is exactly 1), group
/// means by interest / delay / language with cell-clustered 95% CIs,
/// and the spec_topic_ftr input dataset.
pub fn prevalence_analytics(
    rows: &[ConditionedTheta],
    labeling: &TopicLabeling,
) -> Result<PrevalenceAnalytics, TopicsError> {
    if rows.is_empty() {
        return Err(TopicsError::EmptyCorpus);
    }
    labeling.validate(rows[0].theta.len())?;

    let merged: Vec<[f64; 3]> = rows.iter().map(|row| labeling.merge(&row.theta)).collect();
    let n = rows.len() as f64;
    let mut corpus_means = [0.0f64; 3];
    for row in &merged {
        for slot in 0..3 {
            corpus_means[slot] += row[slot];
        }
    }
    for mean in corpus_means.iter_mut() {
        *mean /= n;
    }
    let normalized: Vec<[f64; 3]> = merged
        .iter()
        .map(|row| {
            let mut out = [0.0f64; 3];
            for slot in 0..3 {
                out[slot] = row[slot] / corpus_means[slot];
            }
            out
        })
        .collect();

    let by_interest = aggregate_by(rows, &normalized, |row| format!("{}", row.interest));
    let by_delay = aggregate_by(rows, &normalized, |row| format!("{:02}", row.delay_months));
    let by_language = aggregate_by(rows, &normalized, |row| {
        // Strong-FTR languages sort (and render) first, as in the
        // published figures.
        format!(
            "{}:{}",
            if row.ftr_strong { "0-strong" } else { "1-weak" },
            row.language
        )
    });

    let regression_input: Vec<(String, Vec<TopicSample>)> = TopicLabel::ALL
        .iter()
        .enumerate()
        .map(|(slot, label)| {
            let samples = rows
                .iter()
                .zip(&normalized)
                .map(|(row, norm)| TopicSample {
                    normalized_prevalence: norm[slot],
                    ftr_strong: row.ftr_strong,
                    delay_months: row.delay_months,
                    interest: row.interest,
                    language: row.language.clone(),
                })
                .collect();
            (label.to_string(), samples)
        })
        .collect();

    Ok(PrevalenceAnalytics {
        corpus_means,
        normalized,
        by_interest,
        by_delay,
        by_language,
        regression_input,
    })
}

/// Convenience: run the per-topic strong-FTR regressions on the
/// analytics output.
pub fn topic_ftr_regressions(
    analytics: &PrevalenceAnalytics,
) -> Result<Vec<(String, OlsFit)>, econometrics::OlsError> {
    econometrics::spec_topic_ftr(&analytics.regression_input)
}

// ---------------------------------------------------------------------------
// CSV / table emission
// ---------------------------------------------------------------------------

pub fn topic_term_csv(model: &LdaModel, n: usize) -> String {
    let ranked = top_words(model, n);
    let mut out = String::from("topic,rank,term,probability\n");
    for (topic, terms) in ranked.iter().enumerate() {
        for (rank, term) in terms.iter().enumerate() {
            let idx = model.vocab.iter().position(|t| t == term).unwrap();
            out.push_str(&format!(
                "{},{},{},{:.6}\n",
                topic + 1,
                rank + 1,
                term,
                model.phi(topic, idx)
            ));
        }
    }
    out
}

pub fn theta_csv(refs: &[String], thetas: &[Vec<f64>]) -> String {
    let k = thetas.first().map(|t| t.len()).unwrap_or(0);
    let mut out = String::from("sample_ref");
    for topic in 1..=k {
        out.push_str(&format!(",topic{topic}"));
    }
    out.push('\n');
    for (sample_ref, theta) in refs.iter().zip(thetas) {
        out.push_str(sample_ref);
        for v in theta {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    out
}

pub fn prevalence_csv(aggregates: &[GroupAggregate], group_name: &str) -> String {
    let mut out = format!("{group_name},topic,mean,ci_low,ci_high,n\n");
    for agg in aggregates {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{}\n",
            agg.group, agg.label, agg.mean, agg.ci_low, agg.ci_high, agg.n
        ));
    }
    out
}

/// Top-words text table in the shape of the published table.
pub fn render_top_words_table(model: &LdaModel, n: usize) -> String {
    let ranked = top_words(model, n);
    let mut out = String::new();
    let width = 16;
    for topic in 0..model.k {
        out.push_str(&format!("{:>width$}", format!("Topic {}", topic + 1)));
    }
    out.push('\n');
    out.push_str(&"-".repeat(width * model.k));
    out.push('\n');
    for rank in 0..n {
        for terms in &ranked {
            out.push_str(&format!(
                "{:>width$}",
                terms.get(rank).map(String::as_str).unwrap_or("")
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_anchored_stems() {
        assert_eq!(porter_stem("value"), "valu");
        assert_eq!(porter_stem("immediate"), "immedi");
        assert_eq!(porter_stem("uncertainty"), "uncertainti");
        assert_eq!(porter_stem("sky"), "sky");
    }

    #[test]
    fn full_reference_vocabulary_passes() {
        let voc = include_str!("../tests/data/porter_vocabulary.txt");
        let expected = include_str!("../tests/data/porter_expected.txt");
        let mut mismatches = Vec::new();
        let mut total = 0usize;
        for (input, want) in voc.lines().zip(expected.lines()) {
            total += 1;
            let got = porter_stem(input.trim());
            if got != want.trim() {
                mismatches.push(format!("{input} -> {got} (want {})", want.trim()));
            }
        }
        assert!(total > 20_000, "reference vocabulary appears truncated");
        assert!(
            mismatches.is_empty(),
            "{} mismatches, first ten: {:?}",
            mismatches.len(),
            &mismatches[..mismatches.len().min(10)]
        );
    }

    #[test]
    fn preprocess_examples() {
        let stop = default_stopwords();
        let ctx = HashSet::new();
        assert_eq!(preprocess("uncertainty", &stop, &ctx), vec!["uncertainti"]);
        assert!(preprocess("the of and", &stop, &ctx).is_empty());
        assert_eq!(
            preprocess("immediate value", &stop, &ctx),
            vec!["immedi", "valu"]
        );
        // Numerics and short tokens are dropped before stemming.
        assert_eq!(
            preprocess("In 12 months, 1000 tokens await us!", &stop, &ctx),
            vec!["month", "token", "await"]
        );
        // Domain words survive: they are in the published top-word
        // lists and must not be treated as stopwords.
        assert_eq!(
            preprocess("option token month", &stop, &ctx),
            vec!["option", "token", "month"]
        );
    }

    #[test]
    fn context_stopwords_are_applied() {
        let stop = default_stopwords();
        let ctx: HashSet<String> = ["token".to_owned()].into_iter().collect();
        assert_eq!(preprocess("token value", &stop, &ctx), vec!["valu"]);
    }

    fn tiny_corpus() -> Corpus {
        let docs: Vec<Document> = [
            "risk uncertain wait future doubt",
            "grow invest return gain profit",
            "risk doubt uncertain inflation worry",
            "invest profit growth gain compound",
        ]
        .iter()
        .enumerate()
        .map(|(idx, text)| Document {
            sample_ref: format!("doc{idx}"),
            text: (*text).to_owned(),
        })
        .collect();
        build_corpus(&docs, &default_stopwords(), &HashSet::new())
    }

    #[test]
    fn corpus_invariants() {
        let corpus = tiny_corpus();
        assert_eq!(corpus.n_docs(), 4);
        assert!(corpus.excluded_refs.is_empty());
        for term in &corpus.vocab {
            assert!(term.len() >= 3);
            assert_eq!(term, &term.to_lowercase());
        }
        let mut sorted = corpus.vocab.clone();
        sorted.sort();
        assert_eq!(sorted, corpus.vocab);
    }

    #[test]
    fn empty_documents_are_excluded_with_refs() {
        let docs = vec![
            Document {
                sample_ref: "keep".into(),
                text: "investment opportunity".into(),
            },
            Document {
                sample_ref: "drop".into(),
                text: "the of and 42".into(),
            },
        ];
        let corpus = build_corpus(&docs, &default_stopwords(), &HashSet::new());
        assert_eq!(corpus.n_docs(), 1);
        assert_eq!(corpus.excluded_refs, vec!["drop".to_owned()]);
    }

    #[test]
    fn k1_assigns_everything_to_topic_zero() {
        let corpus = tiny_corpus();
        let model = fit_lda(&corpus, 1, 50.0, 0.01, 10, 7).unwrap();
        assert!(model
            .assignments
            .iter()
            .all(|doc| doc.iter().all(|&z| z == 0)));
        assert!(model.counts_consistent(&corpus));
        let theta = infer_doc_topics(&model, &corpus.doc_tokens[0], 10, 1).theta;
        assert!((theta[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_is_deterministic_for_fixed_seed() {
        let corpus = tiny_corpus();
        let a = fit_lda(&corpus, 2, 25.0, 0.01, 50, 99).unwrap();
        let b = fit_lda(&corpus, 2, 25.0, 0.01, 50, 99).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.topic_term_counts, b.topic_term_counts);
        let c = fit_lda(&corpus, 2, 25.0, 0.01, 50, 100).unwrap();
        assert!(a.assignments != c.assignments || a.seed != c.seed);
    }

    #[test]
    fn counts_stay_consistent_after_fit() {
        let corpus = tiny_corpus();
        let model = fit_lda(&corpus, 3, 1.0, 0.01, 25, 3).unwrap();
        assert!(model.counts_consistent(&corpus));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let corpus = build_corpus(&[], &default_stopwords(), &HashSet::new());
        assert!(matches!(
            fit_lda(&corpus, 4, 12.5, 0.01, 10, 0),
            Err(TopicsError::EmptyCorpus)
        ));
    }

    #[test]
    fn degenerate_model_infers_exclusive_topic() {
        // Hand-built model: term 0 belongs to topic 0, term 1 to topic 1.
        let model = LdaModel {
            k: 2,
            alpha: 0.1,
            beta: 0.01,
            topic_term_counts: vec![vec![500, 0], vec![0, 500]],
            doc_topic_counts: vec![],
            topic_totals: vec![500, 500],
            assignments: vec![],
            vocab: vec!["risk".into(), "invest".into()],
            seed: 0,
        };
        let doc = vec![0usize; 12];
        let result = infer_doc_topics(&model, &doc, 60, 11);
        assert!(result.theta[0] > 0.9, "theta = {:?}", result.theta);
        assert!((result.theta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(!result.empty_fallback);
    }

    #[test]
    fn empty_doc_gets_uniform_fallback() {
        let corpus = tiny_corpus();
        let model = fit_lda(&corpus, 4, 12.5, 0.01, 10, 1).unwrap();
        let result = infer_doc_topics(&model, &[], 10, 0);
        assert!(result.empty_fallback);
        assert!(result.theta.iter().all(|&p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn top_words_rank_by_probability_with_lexicographic_ties() {
        let model = LdaModel {
            k: 1,
            alpha: 50.0,
            beta: 0.01,
            topic_term_counts: vec![vec![5, 9, 5, 1]],
            doc_topic_counts: vec![],
            topic_totals: vec![20],
            assignments: vec![],
            vocab: vec!["zeta".into(), "mid".into(), "alpha".into(), "rare".into()],
            seed: 0,
        };
        let ranked = top_words(&model, 4);
        assert_eq!(ranked[0], vec!["mid", "alpha", "zeta", "rare"]);
    }

    #[test]
    fn merge_map_validation_and_merge_sums() {
        let labeling = TopicLabeling::default_k4();
        assert!(labeling.validate(4).is_ok());
        assert!(matches!(
            labeling.validate(5),
            Err(TopicsError::PartialMergeMap { .. })
        ));
        let merged = labeling.merge(&[0.1, 0.2, 0.3, 0.4]);
        assert!((merged[0] - 0.1).abs() < 1e-15);
        assert!((merged[1] - 0.6).abs() < 1e-15, "topics 2+4 merge");
        assert!((merged[2] - 0.3).abs() < 1e-15);
    }

    fn synthetic_rows(n: usize) -> Vec<ConditionedTheta> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        (0..n)
            .map(|idx| {
                let raw: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() + 0.05).collect();
                let total: f64 = raw.iter().sum();
                ConditionedTheta {
                    sample_ref: format!("s{idx}"),
                    language: if idx % 2 == 0 { "english" } else { "german" }.into(),
                    ftr_strong: idx % 2 == 0,
                    delay_months: [1, 6, 12][idx % 3],
                    interest: [0.1, 0.5][(idx / 2) % 2],
                    theta: raw.iter().map(|v| v / total).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn normalized_prevalence_has_corpus_mean_one() {
        let rows = synthetic_rows(300);
        let analytics = prevalence_analytics(&rows, &TopicLabeling::default_k4()).unwrap();
        for slot in 0..3 {
            let mean: f64 =
                analytics.normalized.iter().map(|r| r[slot]).sum::<f64>() / rows.len() as f64;
            assert!((mean - 1.0).abs() < 1e-12, "slot {slot} mean {mean}");
        }
    }

    #[test]
    fn aggregates_cover_groups_and_bracket_means() {
        let rows = synthetic_rows(300);
        let analytics = prevalence_analytics(&rows, &TopicLabeling::default_k4()).unwrap();
        assert_eq!(analytics.by_interest.len(), 2 * 3);
        assert_eq!(analytics.by_delay.len(), 3 * 3);
        assert_eq!(analytics.by_language.len(), 2 * 3);
        for agg in analytics
            .by_interest
            .iter()
            .chain(&analytics.by_delay)
            .chain(&analytics.by_language)
        {
            assert!(agg.ci_low <= agg.mean && agg.mean <= agg.ci_high);
            assert!(agg.n > 0);
        }
        // Strong-FTR languages sort first in the language aggregates.
        assert!(analytics.by_language[0].group.starts_with("0-strong"));
    }

    #[test]
    fn null_topic_regressions_are_near_zero() {
        let rows = synthetic_rows(600);
        let analytics = prevalence_analytics(&rows, &TopicLabeling::default_k4()).unwrap();
        let fits = topic_ftr_regressions(&analytics).unwrap();
        assert_eq!(fits.len(), 3);
        for (label, fit) in &fits {
            assert!(
                fit.coef[0].abs() < 2.0 * fit.se[0] + 1e-9,
                "{label}: coef {} se {}",
                fit.coef[0],
                fit.se[0]
            );
        }
    }

    #[test]
    fn csv_emitters_have_expected_shapes() {
        let corpus = tiny_corpus();
        let model = fit_lda(&corpus, 2, 25.0, 0.01, 20, 5).unwrap();
        let csv = topic_term_csv(&model, 3);
        assert!(csv.starts_with("topic,rank,term,probability\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        let table = render_top_words_table(&model, 3);
        assert!(table.contains("Topic 1") && table.contains("Topic 2"));
        let theta = theta_csv(
            &corpus.doc_refs,
            &corpus
                .doc_tokens
                .iter()
                .map(|d| infer_doc_topics(&model, d, 20, 9).theta)
                .collect::<Vec<_>>(),
        );
        assert!(theta.starts_with("sample_ref,topic1,topic2\n"));
        assert_eq!(theta.lines().count(), 1 + corpus.n_docs());
    }
}
