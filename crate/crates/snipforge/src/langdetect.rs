//! Pluggable natural-language identification for docstrings.
//!
//! The contract is a ranked (label, confidence) list; the default backend is
//! an embedded trigram detector. Labels are ISO 639-1 codes.

pub trait LanguageDetector: Send + Sync {
    /// Ranked candidates, best first. Labels are ISO 639-1; confidence in [0,1].
    fn detect(&self, text: &str) -> Vec<(String, f64)>;

    fn name(&self) -> &str;
}

/// Default detector backed by whatlang's trigram model.
#[derive(Debug, Default, Clone, Copy)]
pub struct TrigramDetector;

impl LanguageDetector for TrigramDetector {
    fn detect(&self, text: &str) -> Vec<(String, f64)> {
        match whatlang::detect(text) {
            Some(info) => {
                let label = iso639_1(info.lang()).to_string();
                vec![(label, info.confidence())]
            }
            None => Vec::new(),
        }
    }

    fn name(&self) -> &str {
        "trigram"
    }
}

/// Map the detector's 639-3 language codes onto two-letter 639-1 codes.
fn iso639_1(lang: whatlang::Lang) -> &'static str {
    use whatlang::Lang::*;
    match lang {
        Afr => "af",
        Aka => "ak",
        Amh => "am",
        Ara => "ar",
        Aze => "az",
        Bel => "be",
        Ben => "bn",
        Bul => "bg",
        Cat => "ca",
        Cym => "cy",
        Ces => "cs",
        Cmn => "zh",
        Dan => "da",
        Deu => "de",
        Ell => "el",
        Eng => "en",
        Epo => "eo",
        Est => "et",
        Fin => "fi",
        Fra => "fr",
        Guj => "gu",
        Heb => "he",
        Hin => "hi",
        Hrv => "hr",
        Hun => "hu",
        Hye => "hy",
        Ind => "id",
        Ita => "it",
        Jav => "jv",
        Jpn => "ja",
        Kan => "kn",
        Kat => "ka",
        Khm => "km",
        Kor => "ko",
        Lat => "la",
        Lav => "lv",
        Lit => "lt",
        Mal => "ml",
        Mar => "mr",
        Mkd => "mk",
        Mya => "my",
        Nep => "ne",
        Nld => "nl",
        Nob => "nb",
        Ori => "or",
        Pan => "pa",
        Pes => "fa",
        Pol => "pl",
        Por => "pt",
        Ron => "ro",
        Rus => "ru",
        Sin => "si",
        Slk => "sk",
        Slv => "sl",
        Sna => "sn",
        Spa => "es",
        Srp => "sr",
        Swe => "sv",
        Tam => "ta",
        Tel => "te",
        Tgl => "tl",
        Tha => "th",
        Tuk => "tk",
        Tur => "tr",
        Ukr => "uk",
        Urd => "ur",
        Uzb => "uz",
        Vie => "vi",
        Yid => "yi",
        Zul => "zu",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn english_sentence_detected_with_high_confidence() {
        let ranked = TrigramDetector.detect(
            "Returns the sum of two integers and raises on overflow.",
        );
        assert_eq!(ranked[0].0, "en");
        assert!(ranked[0].1 >= 0.9, "confidence {}", ranked[0].1);
    }

    #[test]
    fn gibberish_scores_below_threshold() {
        let ranked = TrigramDetector.detect("xq zz");
        assert!(ranked.is_empty() || ranked[0].1 < 0.9);
    }
}
