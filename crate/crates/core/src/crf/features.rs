//! Windowed token/lemma/PoS feature templates.

use serde::{Deserialize, Serialize};

use crate::tokenizer::Sentence;

pub const BIAS: &str = "bias";
pub const BOS: &str = "BOS";
pub const EOS: &str = "EOS";

/// Feature strings of one token.
pub type FeatureVector = Vec<String>;

/// For every offset `d` in `-radius..=radius`: the surface, lowercased
/// surface, lemma and PoS of the token at `d`, or a `BOS`/`EOS` sentinel past
/// the sentence edges. Plus one `bias` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTemplate {
    pub radius: usize,
}

impl Default for FeatureTemplate {
    fn default() -> Self {
        FeatureTemplate { radius: 2 }
    }
}

impl FeatureTemplate {
    pub fn features_per_token(&self) -> usize {
        4 * (2 * self.radius + 1) + 1
    }

    pub fn extract(&self, sentence: &Sentence, index: usize) -> FeatureVector {
        assert!(index < sentence.len(), "token index out of range");
        let radius = self.radius as isize;
        let mut out = Vec::with_capacity(self.features_per_token());
        for d in -radius..=radius {
            let pos = index as isize + d;
            let offset = match d {
                0 => "0".to_string(),
                d if d > 0 => format!("+{d}"),
                d => d.to_string(),
            };
            match usize::try_from(pos).ok().and_then(|p| sentence.tokens.get(p)) {
                Some(tok) => {
                    out.push(format!("w[{offset}]={}", tok.surface));
                    out.push(format!("lower[{offset}]={}", tok.surface.to_lowercase()));
                    out.push(format!("lemma[{offset}]={}", tok.lemma));
                    out.push(format!("pos[{offset}]={}", tok.pos));
                }
                None => {
                    let sentinel = if d < 0 { BOS } else { EOS };
                    for name in ["w", "lower", "lemma", "pos"] {
                        out.push(format!("{name}[{offset}]={sentinel}"));
                    }
                }
            }
        }
        out.push(BIAS.to_string());
        out
    }

    pub fn extract_sentence(&self, sentence: &Sentence) -> Vec<FeatureVector> {
        (0..sentence.len()).map(|i| self.extract(sentence, i)).collect()
    }
}

/// Features at `index` with the default radius of two.
pub fn extract_features(sentence: &Sentence, index: usize) -> FeatureVector {
    FeatureTemplate::default().extract(sentence, index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_of_two_expansion() {
        let s = Sentence::from_words(&["He", "has", "anemia"]);
        let f = extract_features(&s, 2);
        assert_eq!(f.len(), 21);
        for expected in ["w[0]=anemia", "pos[-1]=X", "w[+1]=EOS", "w[+2]=EOS", "w[-2]=He", "lower[-2]=he", "bias"] {
            assert!(f.iter().any(|x| x == expected), "missing {expected}");
        }
    }

    #[test]
    fn single_token_uses_sentinels() {
        let s = Sentence::from_words(&["Fever"]);
        let f = extract_features(&s, 0);
        assert_eq!(f.len(), 21);
        let non_zero: Vec<_> = f
            .iter()
            .filter(|x| !x.contains("[0]") && x.as_str() != BIAS)
            .collect();
        assert_eq!(non_zero.len(), 16);
        for x in non_zero {
            assert!(x.ends_with("=BOS") || x.ends_with("=EOS"), "{x}");
        }
    }

    #[test]
    fn deterministic() {
        let a = Sentence::from_words(&["rare", "ADCY5-related", "dyskinesia"]);
        let b = a.clone();
        assert_eq!(
            FeatureTemplate::default().extract_sentence(&a),
            FeatureTemplate::default().extract_sentence(&b)
        );
    }

    #[test]
    fn radius_is_configurable() {
        let t = FeatureTemplate { radius: 1 };
        let s = Sentence::from_words(&["a", "b"]);
        assert_eq!(t.extract(&s, 0).len(), 13);
    }
}
