//! Brute-force caption metric oracles.

fn ngrams(tokens: &[&str], n: usize) -> Vec<String> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].join(" ")).collect()
}

/// Longest common subsequence length by enumerating every subsequence of
/// `a` (exponential; keep `a` short).
pub fn lcs_exhaustive(a: &[&str], b: &[&str]) -> usize {
    assert!(a.len() <= 16);
    let is_subseq = |sub: &[&str]| {
        let mut it = b.iter();
        sub.iter().all(|s| it.any(|x| x == s))
    };
    let mut best = 0;
    for bits in 0u32..(1 << a.len()) {
        let sub: Vec<&str> = (0..a.len()).filter(|i| bits & (1 << i) != 0).map(|i| a[i]).collect();
        if sub.len() > best && is_subseq(&sub) {
            best = sub.len();
        }
    }
    best
}

/// Plain CIDEr with dense TF-IDF vectors over the corpus n-gram inventory.
/// `corpus[i] = (candidate, references)`; returns the mean over clips of
/// `10 · mean_n mean_refs cos`.
pub fn cider_dense(corpus: &[(Vec<&str>, Vec<Vec<&str>>)]) -> f64 {
    let clips = corpus.len() as f64;
    let mut per_clip = vec![0.0; corpus.len()];
    for n in 1..=4 {
        let mut inventory: Vec<String> = Vec::new();
        for (cand, refs) in corpus {
            for s in std::iter::once(cand).chain(refs) {
                for g in ngrams(s, n) {
                    if !inventory.contains(&g) {
                        inventory.push(g);
                    }
                }
            }
        }
        let df: Vec<f64> = inventory
            .iter()
            .map(|g| {
                corpus
                    .iter()
                    .filter(|(_, refs)| refs.iter().any(|r| ngrams(r, n).contains(g)))
                    .count() as f64
            })
            .collect();
        let vector = |s: &[&str]| -> Vec<f64> {
            let grams = ngrams(s, n);
            inventory
                .iter()
                .zip(&df)
                .map(|(g, &d)| {
                    let tf = grams.iter().filter(|x| *x == g).count() as f64;
                    tf * (clips.ln() - d.max(1.0).ln())
                })
                .collect()
        };
        for (ci, (cand, refs)) in corpus.iter().enumerate() {
            let vc = vector(cand);
            let mut acc = 0.0;
            for r in refs {
                let vr = vector(r);
                let dotp: f64 = vc.iter().zip(&vr).map(|(a, b)| a * b).sum();
                let nc = vc.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nr = vr.iter().map(|a| a * a).sum::<f64>().sqrt();
                if nc > 0.0 && nr > 0.0 {
                    acc += dotp / (nc * nr);
                }
            }
            per_clip[ci] += acc / refs.len() as f64 / 4.0;
        }
    }
    10.0 * per_clip.iter().sum::<f64>() / clips
}
