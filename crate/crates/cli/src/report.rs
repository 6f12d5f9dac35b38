//! Attribution reports and their static HTML rendering.

use mmcap::aggregation::{Decision, WordAttribution};
use mmcap::synthetic::Lexicon;
use serde::{Deserialize, Serialize};

/// One clip's generated words with per-word energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub id: String,
    pub words: Vec<String>,
    pub attributions: Vec<WordAttribution>,
    /// Entries whose word is in the lexicon, with its listed modality.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<Vec<LexiconEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub cue: String,
    #[serde(flatten)]
    pub attribution: WordAttribution,
}

impl AttributionReport {
    pub fn new(id: &str, words: Vec<String>, attributions: Vec<WordAttribution>) -> Self {
        AttributionReport {
            id: id.to_owned(),
            words,
            attributions,
            lexicon: None,
        }
    }

    pub fn filter(&mut self, lex: &Lexicon) {
        self.lexicon = Some(
            self.attributions
                .iter()
                .filter_map(|a| {
                    lex.cue(&a.word).map(|cue| LexiconEntry {
                        cue: cue.to_owned(),
                        attribution: a.clone(),
                    })
                })
                .collect(),
        );
    }

    /// Checks word/attribution agreement and `1/T_c ≤ e_v + e_a ≤ 1`.
    pub fn check(&self, t_c: usize) -> Result<(), String> {
        if self.words.len() != self.attributions.len() {
            return Err(format!("{}: {} words, {} attributions", self.id, self.words.len(), self.attributions.len()));
        }
        let lo = 1.0 / t_c as f64 - 1e-9;
        for (i, (w, a)) in self.words.iter().zip(&self.attributions).enumerate() {
            let total = a.e_v + a.e_a;
            if a.index != i || &a.word != w {
                return Err(format!("{}: attribution {i} is for `{}` at {}", self.id, a.word, a.index));
            }
            if !(lo..=1.0 + 1e-9).contains(&total) || a.e_v < 0.0 || a.e_a < 0.0 {
                return Err(format!("{}: word {i} energies ({}, {})", self.id, a.e_v, a.e_a));
            }
        }
        Ok(())
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Visual-driven words in blue, audio-driven in red.
pub fn html(reports: &[AttributionReport]) -> String {
    let mut out = String::from(concat!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>mmcap attributions</title>\n",
        "<style>body{font-family:sans-serif}.visual{color:#1f4fd1}.audio{color:#c8201e}",
        ".tie{color:#666}td{padding:2px 10px}</style></head><body>\n",
        "<p><span class=\"visual\">visual</span> / <span class=\"audio\">audio</span></p>\n<table>\n",
    ));
    for r in reports {
        out.push_str(&format!("<tr><td>{}</td><td>", escape(&r.id)));
        let words: Vec<String> = r
            .attributions
            .iter()
            .map(|a| {
                let class = match a.decision {
                    Decision::Visual => "visual",
                    Decision::Audio => "audio",
                    Decision::Tie => "tie",
                };
                format!(
                    "<span class=\"{class}\" title=\"e_v={:.4} e_a={:.4}\">{}</span>",
                    a.e_v,
                    a.e_a,
                    escape(&a.word)
                )
            })
            .collect();
        out.push_str(&words.join(" "));
        out.push_str("</td></tr>\n");
    }
    out.push_str("</table></body></html>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> AttributionReport {
        let words = vec!["a".to_string(), "dog".to_string(), "barking".to_string()];
        let atts = vec![
            WordAttribution::new(0, "a", &[0.5, 0.5], 1),
            WordAttribution::new(1, "dog", &[0.9, 0.1], 1),
            WordAttribution::new(2, "barking", &[0.2, 0.8], 1),
        ];
        AttributionReport::new("c<1>", words, atts)
    }

    #[test]
    fn lexicon_view_keeps_listed_words() {
        let mut r = report();
        r.filter(&Lexicon::cues());
        let view = r.lexicon.as_ref().unwrap();
        assert_eq!(view.len(), 2);
        assert_eq!((view[0].cue.as_str(), view[0].attribution.decision), ("visual", Decision::Visual));
        assert_eq!((view[1].cue.as_str(), view[1].attribution.decision), ("audio", Decision::Audio));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<AttributionReport>(&json).unwrap(), r);
    }

    #[test]
    fn energy_check() {
        let r = report();
        assert!(r.check(2).is_ok());
        let mut bad = r.clone();
        bad.words.pop();
        assert!(bad.check(2).is_err());
        let mut low = r;
        low.attributions[0].e_v = 0.1;
        low.attributions[0].e_a = 0.1;
        assert!(low.check(2).is_err());
    }

    #[test]
    fn html_marks_decisions() {
        let page = html(&[report()]);
        assert!(page.contains("<span class=\"visual\" title=\"e_v=0.8100 e_a=0.0100\">dog</span>"));
        assert!(page.contains("class=\"audio\""));
        assert!(page.contains("c&lt;1&gt;"));
    }
}
