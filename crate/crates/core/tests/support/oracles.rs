//! Fixed corpora scored by both the library and the brute-force oracles.

use mmcap::metrics::EvalCorpus;

/// Each content word occurs in exactly one clip's references; only `a` is
/// shared, so its IDF is zero.
pub const THREE_CLIPS: [(&str, &str, &[&str]); 3] = [
    ("guitar", "a man plays guitar", &["a man plays a guitar", "a man strums guitar"]),
    ("cat", "a cat sleeps soundly", &["a cat sleeps", "a kitten sleeps soundly"]),
    ("car", "a red car drives", &["a car drives fast", "a red car speeds"]),
];

pub fn corpus(items: &[(&str, &str, &[&str])]) -> EvalCorpus {
    EvalCorpus::from_sentences(items.iter().map(|(i, c, r)| (*i, *c, r.to_vec()))).unwrap()
}

pub fn dense_cider(items: &[(&'static str, &'static str, &'static [&'static str])]) -> f64 {
    let split = |s: &'static str| s.split_whitespace().collect::<Vec<_>>();
    let mut sorted = items.to_vec();
    sorted.sort_by_key(|c| c.0);
    let owned: Vec<(Vec<&str>, Vec<Vec<&str>>)> = sorted
        .iter()
        .map(|(_, c, r)| (split(c), r.iter().map(|s| split(s)).collect()))
        .collect();
    mmcap_testkit::metrics::cider_dense(&owned)
}
