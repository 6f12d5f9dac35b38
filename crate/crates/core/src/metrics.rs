//! Corpus-level caption metrics: BLEU-4, ROUGE-L and (plain) CIDEr.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataio::tokenize;
use crate::error::{Error, Result};

/// Precision floor for n-gram orders with no matches.
pub const BLEU_EPS: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalClip {
    pub id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// Candidates paired with their references, ordered by clip id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalCorpus {
    clips: Vec<EvalClip>,
}

impl EvalCorpus {
    pub fn new(mut clips: Vec<EvalClip>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &clips {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate clip id `{}`", c.id)));
            }
            if c.references.is_empty() {
                return Err(Error::InvalidArgument(format!("clip `{}` has no references", c.id)));
            }
        }
        clips.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(EvalCorpus { clips })
    }

    /// Tokenizes raw sentences with the captioning tokenizer.
    pub fn from_sentences<I, S>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, Vec<S>)>,
        S: AsRef<str>,
    {
        let clips = items
            .into_iter()
            .map(|(id, cand, refs)| EvalClip {
                id: id.as_ref().to_owned(),
                candidate: tokenize(cand.as_ref()),
                references: refs.iter().map(|r| tokenize(r.as_ref())).collect(),
            })
            .collect();
        EvalCorpus::new(clips)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> &[EvalClip] {
        &self.clips
    }

    fn nonempty(&self) -> Result<()> {
        if self.clips.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(())
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus totals `(clipped matches, candidate n-grams)` for order `n`.
pub fn clipped_precision(corpus: &EvalCorpus, n: usize) -> (usize, usize) {
    let (mut hit, mut total) = (0, 0);
    for c in &corpus.clips {
        let cand = ngram_counts(&c.candidate, n);
        let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
        for r in &c.references {
            for (g, k) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        for (g, k) in cand {
            hit += k.min(max_ref.get(g).copied().unwrap_or(0));
            total += k;
        }
    }
    (hit, total)
}

/// Reference length closest to `len`, preferring the shorter on ties.
fn closest_ref_len(len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(len), r))
        .unwrap_or(0)
}

pub fn bleu4(corpus: &EvalCorpus) -> Result<f64> {
    corpus.nonempty()?;
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (hit, total) = clipped_precision(corpus, n);
        let p = if total == 0 { 0.0 } else { hit as f64 / total as f64 };
        log_sum += p.max(BLEU_EPS).ln();
    }
    let c: usize = corpus.clips.iter().map(|x| x.candidate.len()).sum();
    let r: usize = corpus
        .clips
        .iter()
        .map(|x| closest_ref_len(x.candidate.len(), &x.references))
        .sum();
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(bp * (log_sum / 4.0).exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn rouge_f(cand: &[String], reference: &[String]) -> f64 {
    let l = lcs_len(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

pub fn rouge_l(corpus: &EvalCorpus) -> Result<f64> {
    corpus.nonempty()?;
    let total: f64 = corpus
        .clips
        .iter()
        .map(|c| c.references.iter().map(|r| rouge_f(&c.candidate, r)).fold(0.0, f64::max))
        .sum();
    Ok(total / corpus.len() as f64)
}

fn tfidf<'a>(tokens: &'a [String], n: usize, df: &BTreeMap<&[String], usize>, log_n: f64) -> BTreeMap<&'a [String], f64> {
    ngram_counts(tokens, n)
        .into_iter()
        .map(|(g, k)| {
            let d = df.get(g).copied().unwrap_or(0).max(1);
            (g, k as f64 * (log_n - (d as f64).ln()))
        })
        .collect()
}

/// Plain CIDEr: per order `n ≤ 4`, cosine between TF-IDF vectors with
/// `idf = ln N − ln max(1, df)` (document frequency over each clip's
/// references), averaged over references and orders, times 10; mean over
/// clips.
pub fn cider(corpus: &EvalCorpus) -> Result<f64> {
    let n_clips = corpus.len();
    if n_clips < 2 {
        return Err(Error::DegenerateIdf(n_clips));
    }
    let log_n = (n_clips as f64).ln();
    let mut per_clip = vec![0.0; n_clips];
    for n in 1..=4 {
        let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
        for c in &corpus.clips {
            let grams: HashSet<&[String]> = c.references.iter().flat_map(|r| ngram_counts(r, n).into_keys()).collect();
            let mut grams: Vec<_> = grams.into_iter().collect();
            grams.sort();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let norm = |v: &BTreeMap<&[String], f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
        for (i, c) in corpus.clips.iter().enumerate() {
            let vc = tfidf(&c.candidate, n, &df, log_n);
            let nc = norm(&vc);
            let mut acc = 0.0;
            for r in &c.references {
                let vr = tfidf(r, n, &df, log_n);
                let nr = norm(&vr);
                if nc > 0.0 && nr > 0.0 {
                    let dot: f64 = vc.iter().filter_map(|(g, a)| vr.get(g).map(|b| a * b)).sum();
                    acc += dot / (nc * nr);
                }
            }
            per_clip[i] += acc / c.references.len() as f64 / 4.0;
        }
    }
    Ok(10.0 * per_clip.iter().sum::<f64>() / n_clips as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    /// Not computed; always `"n/a"`.
    pub meteor: String,
    pub clip_count: usize,
}

/// All metrics; CIDEr needs at least two clips.
pub fn evaluate(corpus: &EvalCorpus) -> Result<EvalReport> {
    Ok(EvalReport {
        bleu4: bleu4(corpus)?,
        rouge_l: rouge_l(corpus)?,
        cider: cider(corpus)?,
        meteor: "n/a".into(),
        clip_count: corpus.len(),
    })
}
