//! Variable-order Markov model over h-signature words.
//!
//! Training grows a prediction suffix tree (PST) from corpus statistics,
//! completes it, and turns it into a probabilistic suffix automaton (PSA).
//! Online, the PSA scores full signatures and the posterior over full
//! signatures given a partial one is formed by restricting to compatible
//! words and weighting by a length distribution.
//!
//! Every context predicts over a *continuation alphabet*: the `2n` signed
//! letters plus a termination symbol marking the end of a word. Termination
//! lets the automaton assign a probability to a finished word.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{is_compatible, Letter, Word};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum VompError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("corpus word {0} is not reduced")]
    UnreducedWord(Word),
    #[error("letter {letter} outside the alphabet of {num_obstacles} obstacles")]
    LetterOutOfAlphabet { letter: i32, num_obstacles: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model format version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, VompError>;

/// A symbol of the continuation alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Letter(Letter),
    End,
}

/// Index layout of the continuation alphabet for `n` obstacles:
/// letters `1..=n` at `0..n`, letters `-1..=-n` at `n..2n`, termination at `2n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    num_obstacles: usize,
}

impl Alphabet {
    pub fn new(num_obstacles: usize) -> Self {
        Self { num_obstacles }
    }

    pub fn num_obstacles(&self) -> usize {
        self.num_obstacles
    }

    /// `|A| = 2n`.
    pub fn size(&self) -> usize {
        2 * self.num_obstacles
    }

    /// Letters plus termination.
    pub fn continuation_size(&self) -> usize {
        self.size() + 1
    }

    pub fn end_index(&self) -> usize {
        self.size()
    }

    pub fn letters(&self) -> Vec<Letter> {
        Letter::alphabet(self.num_obstacles)
    }

    pub fn index(&self, s: Symbol) -> usize {
        match s {
            Symbol::End => self.end_index(),
            Symbol::Letter(l) => {
                let v = l.value();
                if v > 0 {
                    v as usize - 1
                } else {
                    self.num_obstacles + (-v) as usize - 1
                }
            }
        }
    }

    pub fn symbol(&self, idx: usize) -> Symbol {
        let n = self.num_obstacles;
        if idx == 2 * n {
            Symbol::End
        } else if idx < n {
            Symbol::Letter(Letter::new(idx as i32 + 1).unwrap())
        } else {
            Symbol::Letter(Letter::new(-((idx - n) as i32 + 1)).unwrap())
        }
    }

    pub fn contains(&self, l: Letter) -> bool {
        l.obstacle() as usize <= self.num_obstacles
    }
}

/// Sub-word and continuation counts of a corpus.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    alphabet: Alphabet,
    max_order: usize,
    corpus_size: usize,
    /// F(p) for every observed sub-word with `1 <= |p| <= L + 1`.
    word_counts: BTreeMap<Word, u64>,
    /// Total number of sub-word occurrences per length.
    totals_by_length: Vec<u64>,
    /// F(s | p) over the continuation alphabet, for contexts `|p| <= L`.
    next_counts: BTreeMap<Word, Vec<u64>>,
    length_counts: BTreeMap<usize, u64>,
}

impl CorpusStats {
    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn length_counts(&self) -> &BTreeMap<usize, u64> {
        &self.length_counts
    }

    pub fn max_signature_length(&self) -> usize {
        self.length_counts.keys().next_back().copied().unwrap_or(0)
    }

    /// F(p). The empty word is counted once per corpus entry.
    pub fn word_count(&self, p: &Word) -> u64 {
        if p.is_empty() {
            return self.corpus_size as u64;
        }
        self.word_counts.get(p).copied().unwrap_or(0)
    }

    /// Number of sub-word occurrences of length `len`.
    pub fn total_of_length(&self, len: usize) -> u64 {
        self.totals_by_length.get(len).copied().unwrap_or(0)
    }

    /// F(s | p).
    pub fn next_count(&self, s: Symbol, p: &Word) -> u64 {
        self.next_counts.get(p).map_or(0, |c| c[self.alphabet.index(s)])
    }

    pub fn next_counts(&self, p: &Word) -> Vec<u64> {
        self.next_counts
            .get(p)
            .cloned()
            .unwrap_or_else(|| vec![0; self.alphabet.continuation_size()])
    }
}

/// Counts every sub-word of length `<= L + 1`, the continuation symbol after
/// every context of length `<= L`, and the histogram of word lengths.
pub fn collect_stats(corpus: &[Word], max_order: usize, num_obstacles: usize) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(VompError::EmptyCorpus);
    }
    if max_order < 1 {
        return Err(VompError::InvalidParameter("max order must be >= 1".into()));
    }
    let alphabet = Alphabet::new(num_obstacles);
    let cs = alphabet.continuation_size();
    let mut word_counts = BTreeMap::new();
    let mut totals_by_length = vec![0u64; max_order + 2];
    let mut next_counts: BTreeMap<Word, Vec<u64>> = BTreeMap::new();
    let mut length_counts = BTreeMap::new();

    for w in corpus {
        if let Some(l) = w.letters().iter().find(|l| !alphabet.contains(**l)) {
            return Err(VompError::LetterOutOfAlphabet { letter: l.value(), num_obstacles });
        }
        if !w.is_reduced() {
            return Err(VompError::UnreducedWord(w.clone()));
        }
        *length_counts.entry(w.len()).or_insert(0) += 1;
        let letters = w.letters();
        let n = letters.len();
        for start in 0..n {
            for len in 1..=(max_order + 1).min(n - start) {
                let sub = Word::from_letters(letters[start..start + len].to_vec());
                *word_counts.entry(sub).or_insert(0) += 1;
                totals_by_length[len] += 1;
            }
        }
        // position i is followed by letters[i], or by termination at i == n
        for i in 0..=n {
            let sym = if i < n { Symbol::Letter(letters[i]) } else { Symbol::End };
            let idx = alphabet.index(sym);
            for len in 0..=max_order.min(i) {
                let ctx = Word::from_letters(letters[i - len..i].to_vec());
                next_counts.entry(ctx).or_insert_with(|| vec![0; cs])[idx] += 1;
            }
        }
    }
    totals_by_length[0] = corpus.len() as u64;
    Ok(CorpusStats {
        alphabet,
        max_order,
        corpus_size: corpus.len(),
        word_counts,
        totals_by_length,
        next_counts,
        length_counts,
    })
}

/// Laplace's rule of succession, `(count + 1) / (complement + alphabet_size)`.
pub fn laplace_estimate(count: u64, complement: u64, alphabet_size: usize) -> f64 {
    (count as f64 + 1.0) / (complement as f64 + alphabet_size as f64)
}

/// P(p) from sub-word frequencies: `(F(p) + 1) / (F(p^C) + |A|)` where
/// `F(p^C)` counts every other sub-word of length `|p|`.
pub fn laplace_word_prob(p: &Word, stats: &CorpusStats) -> f64 {
    let f = stats.word_count(p);
    let complement = stats.total_of_length(p.len()) - f;
    laplace_estimate(f, complement, stats.alphabet.size())
}

/// The unnormalized per-symbol estimate `(F(s|p) + 1) / (F(s^C|p) + |A|)`.
/// Can exceed 1 on skewed counts; see [`laplace_next_prob`].
pub fn laplace_next_raw(s: Symbol, p: &Word, stats: &CorpusStats) -> f64 {
    let counts = stats.next_counts(p);
    let f = counts[stats.alphabet.index(s)];
    let total: u64 = counts.iter().sum();
    laplace_estimate(f, total - f, stats.alphabet.size())
}

/// Add-one smoothed counts normalized over the continuation alphabet.
pub fn smoothed_distribution(counts: &[u64]) -> Vec<f64> {
    let denom = counts.iter().sum::<u64>() as f64 + counts.len() as f64;
    counts.iter().map(|&c| (c as f64 + 1.0) / denom).collect()
}

/// P(s | p): each symbol smoothed by one pseudo-count and normalized across
/// the continuation alphabet, so the values form a distribution.
pub fn laplace_next_prob(s: Symbol, p: &Word, stats: &CorpusStats) -> f64 {
    smoothed_distribution(&stats.next_counts(p))[stats.alphabet.index(s)]
}

pub fn next_distribution(p: &Word, stats: &CorpusStats) -> Vec<f64> {
    smoothed_distribution(&stats.next_counts(p))
}

/// KL divergence in nats. Terms with `p_i == 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

/// `weight * KL(child || parent)`.
pub fn scaled_kl(weight: f64, child: &[f64], parent: &[f64]) -> f64 {
    weight * kl_divergence(child, parent)
}

/// Predictive gain of context `ap` over its longest proper suffix `p`,
/// `P(ap) * KL(P(.|ap) || P(.|p))`.
pub fn kl_criterion(ap: &Word, p: &Word, stats: &CorpusStats) -> f64 {
    scaled_kl(
        laplace_word_prob(ap, stats),
        &next_distribution(ap, stats),
        &next_distribution(p, stats),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VompConfig {
    pub epsilon: f64,
    pub max_order: usize,
}

impl Default for VompConfig {
    fn default() -> Self {
        Self { epsilon: 0.01, max_order: 5 }
    }
}

impl VompConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(VompError::InvalidParameter(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_order < 1 {
            return Err(VompError::InvalidParameter("max order must be >= 1".into()));
        }
        Ok(())
    }
}

/// Node of a prediction suffix tree. A child's context is its parent's
/// context with one more letter prepended.
#[derive(Debug, Clone, PartialEq)]
pub struct PstNode {
    pub context: Word,
    pub children: BTreeMap<Letter, PstNode>,
    /// Distribution over the continuation alphabet.
    pub next_probs: Vec<f64>,
}

impl PstNode {
    fn new(context: Word, stats: &CorpusStats) -> Self {
        let next_probs = next_distribution(&context, stats);
        Self { context, children: BTreeMap::new(), next_probs }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Length of the longest context in the tree.
    pub fn max_context_len(&self) -> usize {
        self.children
            .values()
            .map(PstNode::max_context_len)
            .max()
            .unwrap_or(self.context.len())
    }

    pub fn contains(&self, w: &Word) -> bool {
        self.find(w).is_some()
    }

    /// Node whose context equals `w`.
    pub fn find(&self, w: &Word) -> Option<&PstNode> {
        let mut node = self;
        for l in w.letters().iter().rev() {
            node = node.children.get(l)?;
        }
        Some(node)
    }

    /// Deepest node whose context is a suffix of `history`.
    pub fn longest_suffix_node(&self, history: &[Letter]) -> &PstNode {
        let mut node = self;
        for l in history.iter().rev() {
            match node.children.get(l) {
                Some(c) => node = c,
                None => break,
            }
        }
        node
    }

    /// Inserts `w` and every suffix of it.
    pub fn add_path(&mut self, w: &Word, stats: &CorpusStats) {
        let letters = w.letters();
        let mut node = self;
        for k in 1..=letters.len() {
            let l = letters[letters.len() - k];
            let ctx = Word::from_letters(letters[letters.len() - k..].to_vec());
            node = node.children.entry(l).or_insert_with(|| PstNode::new(ctx, stats));
        }
    }

    pub fn contexts(&self) -> Vec<Word> {
        let mut out = Vec::new();
        self.visit(&mut |n| out.push(n.context.clone()));
        out
    }

    pub fn leaves(&self) -> Vec<Word> {
        let mut out = Vec::new();
        self.visit(&mut |n| {
            if n.is_leaf() {
                out.push(n.context.clone())
            }
        });
        out
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a PstNode)) {
        f(self);
        for c in self.children.values() {
            c.visit(f);
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.values().map(PstNode::node_count).sum::<usize>()
    }
}

/// Grows the suffix tree: candidates start from single letters with
/// `P(a) >= epsilon`, a candidate enters the tree when its scaled KL gain over
/// its parent context reaches `epsilon`, and candidates shorter than the
/// maximum order spawn one-letter extensions with `P(ap) >= epsilon`.
///
/// Candidates must also occur in the corpus. The smoothed estimate gives an
/// unseen word `1 / |A|` when no sub-word of its length was observed at all,
/// which would otherwise admit arbitrary unseen contexts.
pub fn build_pst(stats: &CorpusStats, config: &VompConfig) -> Result<PstNode> {
    config.validate()?;
    let letters = stats.alphabet.letters();
    let mut root = PstNode::new(Word::empty(), stats);
    let mut candidates: VecDeque<Word> = letters
        .iter()
        .map(|&a| Word::from_letters(vec![a]))
        .filter(|w| is_candidate(w, stats, config.epsilon))
        .collect();
    while let Some(p) = candidates.pop_front() {
        debug_assert!(p.len() <= config.max_order);
        if kl_criterion(&p, &p.proper_suffix(), stats) >= config.epsilon {
            root.add_path(&p, stats);
        }
        if p.len() < config.max_order {
            candidates.extend(
                letters
                    .iter()
                    .map(|&a| p.prepend(a))
                    .filter(|ap| is_candidate(ap, stats, config.epsilon)),
            );
        }
    }
    Ok(root)
}

fn is_candidate(w: &Word, stats: &CorpusStats, epsilon: f64) -> bool {
    stats.word_count(w) > 0 && laplace_word_prob(w, stats) >= epsilon
}

/// Adds the missing proper prefix of every leaf until each leaf's prefix is
/// in the tree. The resulting context set is closed under both suffixes and
/// prefixes, which makes longest-suffix transitions well defined.
pub fn complete_tree(root: &mut PstNode, stats: &CorpusStats) {
    loop {
        let missing: BTreeSet<Word> = root
            .leaves()
            .into_iter()
            .filter(|r| !r.is_empty())
            .map(|r| r.proper_prefix())
            .filter(|pre| !root.contains(pre))
            .collect();
        if missing.is_empty() {
            break;
        }
        for w in &missing {
            root.add_path(w, stats);
        }
    }
}

/// Probabilistic suffix automaton. States are the contexts of the completed
/// tree; reading letter `a` in state `s` moves to the longest suffix of `s a`
/// that is a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Psa {
    alphabet: Alphabet,
    states: Vec<Word>,
    index: BTreeMap<Word, usize>,
    /// `transitions[s][letter index] = (next state, probability)`.
    transitions: Vec<Vec<(usize, f64)>>,
    termination: Vec<f64>,
    epsilon: f64,
    max_order: usize,
    max_signature_length: usize,
}

impl Psa {
    pub fn from_tree(
        root: &PstNode,
        alphabet: Alphabet,
        config: &VompConfig,
        max_signature_length: usize,
    ) -> Self {
        let mut nodes: Vec<&PstNode> = Vec::new();
        root.visit(&mut |n| nodes.push(n));
        nodes.sort_by(|a, b| a.context.cmp(&b.context));
        let states: Vec<Word> = nodes.iter().map(|n| n.context.clone()).collect();
        let index: BTreeMap<Word, usize> =
            states.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        let letters = alphabet.letters();
        let mut transitions = Vec::with_capacity(states.len());
        let mut termination = Vec::with_capacity(states.len());
        for node in &nodes {
            let row = letters
                .iter()
                .map(|&a| {
                    let next = longest_state_suffix(&index, &node.context.appended(a));
                    (next, node.next_probs[alphabet.index(Symbol::Letter(a))])
                })
                .collect();
            transitions.push(row);
            termination.push(node.next_probs[alphabet.end_index()]);
        }
        Self {
            alphabet,
            states,
            index,
            transitions,
            termination,
            epsilon: config.epsilon,
            max_order: config.max_order,
            max_signature_length,
        }
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn states(&self) -> &[Word] {
        &self.states
    }

    pub fn state_index(&self, w: &Word) -> Option<usize> {
        self.index.get(w).copied()
    }

    pub fn initial_state(&self) -> usize {
        self.index[&Word::empty()]
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn max_signature_length(&self) -> usize {
        self.max_signature_length
    }

    /// `(next state, probability)` for reading `a` in `state`.
    pub fn transition(&self, state: usize, a: Letter) -> (usize, f64) {
        self.transitions[state][self.alphabet.index(Symbol::Letter(a))]
    }

    pub fn termination(&self, state: usize) -> f64 {
        self.termination[state]
    }

    /// Outgoing distribution of a state over the continuation alphabet.
    pub fn outgoing(&self, state: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self.transitions[state].iter().map(|t| t.1).collect();
        v.push(self.termination[state]);
        v
    }

    /// Probability of generating exactly `h` and then terminating. Words
    /// longer than the longest training signature get zero.
    pub fn sequence_prob(&self, h: &Word) -> f64 {
        if h.len() > self.max_signature_length {
            return 0.0;
        }
        if h.letters().iter().any(|l| !self.alphabet.contains(*l)) {
            return 0.0;
        }
        let mut state = self.initial_state();
        let mut prob = 1.0;
        for &a in h.letters() {
            let (next, p) = self.transition(state, a);
            prob *= p;
            state = next;
        }
        prob * self.termination[state]
    }

    pub fn to_json(&self) -> PsaJson {
        PsaJson {
            num_obstacles: self.alphabet.num_obstacles(),
            alphabet_size: self.alphabet.size(),
            epsilon: self.epsilon,
            max_order: self.max_order,
            max_signature_length: self.max_signature_length,
            states: self.states.clone(),
            transitions: self
                .transitions
                .iter()
                .enumerate()
                .flat_map(|(s, row)| {
                    row.iter().enumerate().map(move |(li, &(to, prob))| TransitionJson {
                        from: s,
                        letter: match self.alphabet.symbol(li) {
                            Symbol::Letter(l) => l,
                            Symbol::End => unreachable!(),
                        },
                        to,
                        prob,
                    })
                })
                .collect(),
            termination: self.termination.clone(),
        }
    }

    pub fn from_json(j: &PsaJson) -> Result<Self> {
        let alphabet = Alphabet::new(j.num_obstacles);
        if j.alphabet_size != alphabet.size() {
            return Err(VompError::Malformed("alphabet size disagrees with obstacle count".into()));
        }
        let ns = j.states.len();
        if j.termination.len() != ns {
            return Err(VompError::Malformed("termination length".into()));
        }
        let index: BTreeMap<Word, usize> =
            j.states.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        if index.len() != ns || !index.contains_key(&Word::empty()) {
            return Err(VompError::Malformed("states must be distinct and include ()".into()));
        }
        let mut transitions = vec![vec![(usize::MAX, f64::NAN); alphabet.size()]; ns];
        for t in &j.transitions {
            if t.from >= ns || t.to >= ns || !alphabet.contains(t.letter) {
                return Err(VompError::Malformed("transition out of range".into()));
            }
            transitions[t.from][alphabet.index(Symbol::Letter(t.letter))] = (t.to, t.prob);
        }
        if transitions.iter().flatten().any(|t| t.0 == usize::MAX) {
            return Err(VompError::Malformed("incomplete transition table".into()));
        }
        Ok(Self {
            alphabet,
            states: j.states.clone(),
            index,
            transitions,
            termination: j.termination.clone(),
            epsilon: j.epsilon,
            max_order: j.max_order,
            max_signature_length: j.max_signature_length,
        })
    }
}

fn longest_state_suffix(index: &BTreeMap<Word, usize>, w: &Word) -> usize {
    (0..=w.len())
        .rev()
        .find_map(|k| index.get(&w.suffix(k)).copied())
        .expect("empty context is always a state")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionJson {
    pub from: usize,
    pub letter: Letter,
    pub to: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsaJson {
    pub num_obstacles: usize,
    pub alphabet_size: usize,
    pub epsilon: f64,
    pub max_order: usize,
    pub max_signature_length: usize,
    pub states: Vec<Word>,
    pub transitions: Vec<TransitionJson>,
    pub termination: Vec<f64>,
}

/// P(|h| = k) for `k` in `0..=L_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    probs: Vec<f64>,
}

impl LengthDistribution {
    /// Add-one smoothing of the length histogram over `0..=L_max`.
    pub fn from_counts(counts: &BTreeMap<usize, u64>) -> Self {
        let max_len = counts.keys().next_back().copied().unwrap_or(0);
        let total: u64 = counts.values().sum();
        let denom = total as f64 + (max_len + 1) as f64;
        let probs = (0..=max_len)
            .map(|k| (counts.get(&k).copied().unwrap_or(0) as f64 + 1.0) / denom)
            .collect();
        Self { probs }
    }

    pub fn from_probs(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_length(&self) -> usize {
        self.probs.len().saturating_sub(1)
    }

    /// P(|h| = k | |h| >= min_len).
    pub fn conditional_prob(&self, k: usize, min_len: usize) -> f64 {
        if k < min_len {
            return 0.0;
        }
        let mass: f64 = self.probs.iter().skip(min_len).sum();
        if mass > 0.0 {
            self.prob(k) / mass
        } else {
            0.0
        }
    }
}

/// Posterior over full signatures given a partial one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPosterior {
    pub probs: BTreeMap<Word, f64>,
    /// Set when no supported signature was compatible with the partial one
    /// (or all had zero mass) and the unconditioned prior was returned.
    pub fallback: bool,
}

impl ClassPosterior {
    pub fn prob(&self, h: &Word) -> f64 {
        self.probs.get(h).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn uniform(support: &[Word]) -> Self {
        let p = 1.0 / support.len() as f64;
        Self { probs: support.iter().map(|h| (h.clone(), p)).collect(), fallback: false }
    }
}

fn normalize_scores(scores: BTreeMap<Word, f64>) -> Option<BTreeMap<Word, f64>> {
    let total: f64 = scores.values().sum();
    if total > 0.0 && total.is_finite() {
        Some(scores.into_iter().map(|(h, s)| (h, s / total)).collect())
    } else {
        None
    }
}

fn posterior_with(
    p: &Word,
    support: &[Word],
    score: impl Fn(&Word) -> f64,
) -> ClassPosterior {
    let compatible: BTreeMap<Word, f64> = support
        .iter()
        .map(|h| (h.clone(), if is_compatible(h, p) { score(h) } else { 0.0 }))
        .collect();
    if let Some(probs) = normalize_scores(compatible) {
        return ClassPosterior { probs, fallback: false };
    }
    let prior: BTreeMap<Word, f64> = support.iter().map(|h| (h.clone(), score(h))).collect();
    let probs = normalize_scores(prior).unwrap_or_else(|| ClassPosterior::uniform(support).probs);
    ClassPosterior { probs, fallback: true }
}

/// `P(h | p) ∝ P(h) P(|h|)` over compatible `h` in `support`, with the length
/// term restricted to feasible lengths `>= |p|`. Incompatible signatures get
/// zero. With no compatible mass the unconditioned normalized prior over the
/// support is returned and flagged.
pub fn posterior_over_full(
    p: &Word,
    psa: &Psa,
    lengths: &LengthDistribution,
    support: &[Word],
) -> ClassPosterior {
    posterior_with(p, support, |h| {
        psa.sequence_prob(h) * lengths.conditional_prob(h.len(), p.len())
    })
    .with_unconditioned_fallback(psa, lengths, support)
}

impl ClassPosterior {
    fn with_unconditioned_fallback(
        self,
        psa: &Psa,
        lengths: &LengthDistribution,
        support: &[Word],
    ) -> Self {
        if !self.fallback {
            return self;
        }
        let prior = support
            .iter()
            .map(|h| (h.clone(), psa.sequence_prob(h) * lengths.prob(h.len())))
            .collect();
        let probs = normalize_scores(prior).unwrap_or_else(|| ClassPosterior::uniform(support).probs);
        ClassPosterior { probs, fallback: true }
    }
}

/// `P(h | p) ∝ P(h)` without the length weighting, kept for ablations.
pub fn posterior_unweighted(p: &Word, psa: &Psa, support: &[Word]) -> ClassPosterior {
    posterior_with(p, support, |h| psa.sequence_prob(h))
}

/// Trained high-level predictor: automaton, length model, and the set of
/// full signatures seen in training.
#[derive(Debug, Clone, PartialEq)]
pub struct VompModel {
    pub psa: Psa,
    pub lengths: LengthDistribution,
    pub support: Vec<Word>,
}

#[derive(Serialize, Deserialize)]
struct VompModelJson {
    format_version: u32,
    #[serde(flatten)]
    psa: PsaJson,
    length_distribution: Vec<f64>,
    support: Vec<Word>,
}

impl VompModel {
    pub fn train(corpus: &[Word], num_obstacles: usize, config: &VompConfig) -> Result<Self> {
        config.validate()?;
        let stats = collect_stats(corpus, config.max_order, num_obstacles)?;
        let mut root = build_pst(&stats, config)?;
        complete_tree(&mut root, &stats);
        let psa = Psa::from_tree(&root, stats.alphabet(), config, stats.max_signature_length());
        let lengths = LengthDistribution::from_counts(stats.length_counts());
        let support: BTreeSet<Word> = corpus.iter().cloned().collect();
        Ok(Self { psa, lengths, support: support.into_iter().collect() })
    }

    pub fn posterior(&self, p: &Word) -> ClassPosterior {
        posterior_over_full(p, &self.psa, &self.lengths, &self.support)
    }

    pub fn to_json_string(&self) -> String {
        let j = VompModelJson {
            format_version: MODEL_FORMAT_VERSION,
            psa: self.psa.to_json(),
            length_distribution: self.lengths.probs.clone(),
            support: self.support.clone(),
        };
        serde_json::to_string_pretty(&j).expect("model serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: VompModelJson = serde_json::from_str(s)?;
        if j.format_version != MODEL_FORMAT_VERSION {
            return Err(VompError::UnsupportedVersion(j.format_version));
        }
        Ok(Self {
            psa: Psa::from_json(&j.psa)?,
            lengths: LengthDistribution::from_probs(j.length_distribution),
            support: j.support,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: &[i32]) -> Word {
        Word::from_values(v)
    }

    #[test]
    fn stats_examples() {
        let s = collect_stats(&[w(&[1]), w(&[1])], 2, 1).unwrap();
        assert_eq!(s.word_count(&w(&[1])), 2);
        assert_eq!(s.length_counts(), &BTreeMap::from([(1, 2)]));
        let s = collect_stats(&[w(&[1, 2])], 2, 2).unwrap();
        let two = Symbol::Letter(Letter::new(2).unwrap());
        assert_eq!(s.next_count(two, &w(&[1])), 1);
        assert_eq!(s.next_count(Symbol::End, &w(&[1, 2])), 1);
        assert!(matches!(collect_stats(&[], 2, 1), Err(VompError::EmptyCorpus)));
        assert!(matches!(
            collect_stats(&[w(&[1, -1])], 2, 1),
            Err(VompError::UnreducedWord(_))
        ));
        assert!(matches!(
            collect_stats(&[w(&[3])], 2, 2),
            Err(VompError::LetterOutOfAlphabet { .. })
        ));
    }

    #[test]
    fn laplace_examples() {
        assert_eq!(laplace_estimate(0, 0, 4), 0.25);
        assert!((laplace_estimate(3, 5, 2) - 4.0 / 7.0).abs() < 1e-15);
        // unnormalized estimate with zero observations, |A| = 4
        let s = collect_stats(&[w(&[])], 1, 2).unwrap();
        let a = Symbol::Letter(Letter::new(1).unwrap());
        assert_eq!(laplace_next_raw(a, &w(&[2]), &s), 0.25);
        // 9 of a, 1 of another letter, 0 terminations over a 3-symbol continuation
        let d = smoothed_distribution(&[9, 1, 0]);
        assert!((d[0] - 10.0 / 13.0).abs() < 1e-15);
        assert!((laplace_estimate(9, 1, 2) - 10.0 / 3.0).abs() < 1e-15);
        let d = smoothed_distribution(&[100, 0, 0]);
        assert!(d[0] >= 0.97);
    }

    #[test]
    fn word_prob_uses_length_complement() {
        let corpus: Vec<Word> =
            vec![w(&[1, 2]), w(&[1]), w(&[2, 1, 2]), w(&[-1, 2]), w(&[1, 2, -1])];
        let s = collect_stats(&corpus, 2, 2).unwrap();
        // length-1 occurrences: 1 x4, 2 x5, -1 x2 -> 11; length-2: (1,2) x3, (2,1), (-1,2), (2,-1) -> 6
        assert_eq!(s.total_of_length(1), 11);
        assert_eq!(s.total_of_length(2), 6);
        assert!((laplace_word_prob(&w(&[1]), &s) - 5.0 / 11.0).abs() < 1e-15);
        assert!((laplace_word_prob(&w(&[1, 2]), &s) - 4.0 / 7.0).abs() < 1e-15);
        assert!((laplace_word_prob(&w(&[-2]), &s) - 1.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn kl_examples() {
        let u = [1.0 / 3.0; 3];
        assert_eq!(scaled_kl(0.7, &u, &u), 0.0);
        let point = [1.0, 0.0, 0.0];
        assert!((scaled_kl(0.5, &point, &u) - 0.5 * 3f64.ln()).abs() < 1e-15);
        // P = (0.5, 0.25, 0.25) against uniform: sum p ln(3p)
        let p = [0.5, 0.25, 0.25];
        let hand = 0.5 * (1.5f64).ln() + 0.5 * (0.75f64).ln();
        assert!((kl_divergence(&p, &u) - hand).abs() < 1e-15);
    }

    #[test]
    fn root_only_psa_self_loops() {
        let corpus = vec![w(&[1]), w(&[])];
        let s = collect_stats(&corpus, 2, 1).unwrap();
        let root = PstNode::new(Word::empty(), &s);
        let cfg = VompConfig::default();
        let psa = Psa::from_tree(&root, s.alphabet(), &cfg, 1);
        assert_eq!(psa.states(), &[Word::empty()]);
        for a in Letter::alphabet(1) {
            assert_eq!(psa.transition(0, a).0, 0);
        }
        assert!((psa.sequence_prob(&Word::empty()) - psa.termination(0)).abs() < 1e-15);
        assert_eq!(psa.sequence_prob(&w(&[1, 1])), 0.0);
    }

    #[test]
    fn completion_adds_missing_prefix() {
        let corpus = vec![w(&[1, 2]), w(&[2])];
        let s = collect_stats(&corpus, 2, 2).unwrap();
        let mut root = PstNode::new(Word::empty(), &s);
        root.add_path(&w(&[1, 2]), &s);
        assert!(root.contains(&w(&[2])));
        assert!(!root.contains(&w(&[1])));
        complete_tree(&mut root, &s);
        assert!(root.contains(&w(&[1])));
    }

    #[test]
    fn deterministic_order_one_source() {
        let corpus: Vec<Word> = (0..200).map(|_| w(&[1, 2])).collect();
        let s = collect_stats(&corpus, 3, 2).unwrap();
        let root = build_pst(&s, &VompConfig { epsilon: 0.01, max_order: 3 }).unwrap();
        assert!(root.contains(&w(&[1])));
        assert_eq!(root.max_context_len(), 1);
    }

    #[test]
    fn length_distribution_smoothing() {
        let d = LengthDistribution::from_counts(&BTreeMap::from([(0, 2), (2, 1)]));
        assert_eq!(d.probs(), &[3.0 / 6.0, 1.0 / 6.0, 2.0 / 6.0]);
        assert!((d.conditional_prob(2, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.conditional_prob(0, 1), 0.0);
    }

    #[test]
    fn posterior_single_compatible() {
        let corpus = vec![w(&[]), w(&[1]), w(&[1, 2])];
        let m = VompModel::train(&corpus, 2, &VompConfig::default()).unwrap();
        let post = m.posterior(&w(&[1, 2]));
        assert_eq!(post.prob(&w(&[1, 2])), 1.0);
        assert!(!post.fallback);
        let post = m.posterior(&w(&[2]));
        assert!(post.fallback);
        assert!((post.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_json_roundtrip() {
        let corpus = vec![w(&[]), w(&[1]), w(&[1, 2]), w(&[1, 2]), w(&[-2])];
        let m = VompModel::train(&corpus, 2, &VompConfig::default()).unwrap();
        let s = m.to_json_string();
        let back = VompModel::from_json_str(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json_string(), s);
    }
}
