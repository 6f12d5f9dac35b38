#[path = "support/oracles.rs"]
mod oracles;

use mmcap::metrics::{cider, lcs_len, rouge_l};
use mmcap_testkit::metrics::lcs_exhaustive;
use proptest::prelude::*;
use oracles::{corpus, dense_cider, THREE_CLIPS};

#[test]
fn cider_matches_dense_tf_idf() {
    let got = cider(&corpus(&THREE_CLIPS)).unwrap();
    let want = dense_cider(&THREE_CLIPS);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    assert!(got > 0.0 && got < 10.0);
}

#[test]
fn rouge_swap_case() {
    let c = corpus(&[("x", "a b c d", &["a c b d"])]);
    assert_eq!(lcs_exhaustive(&["a", "b", "c", "d"], &["a", "c", "b", "d"]), 3);
    assert!((rouge_l(&c).unwrap() - 0.75).abs() < 1e-9);
}

fn words() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(prop_oneof!["a", "b", "c", "d"].prop_map(String::from), 0..10)
}

proptest! {
    #[test]
    fn lcs_matches_exhaustive_search(a in words(), b in words()) {
        let ra: Vec<&str> = a.iter().map(String::as_str).collect();
        let rb: Vec<&str> = b.iter().map(String::as_str).collect();
        prop_assert_eq!(lcs_len(&a, &b), lcs_exhaustive(&ra, &rb));
    }
}
