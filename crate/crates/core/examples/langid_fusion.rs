//! Fuse the votes of several language detectors into one label.

use claimlink::langid::{
    collect_votes, detect_language, fuse, DetectorVote, FnDetector, FusionConfig, LanguageDetector, LanguageScore,
};

fn vote(detector: &str, language: &str, score: f64) -> DetectorVote {
    DetectorVote {
        detector: detector.into(),
        language: language.into(),
        score,
    }
}

pub fn run_example() -> claimlink::Result<Vec<Option<String>>> {
    let cfg = FusionConfig::default();
    let cases = [
        // a language backed by a single detector is ignored
        vec![vote("a", "en", 0.9), vote("b", "en", 0.8), vote("c", "en", 0.7), vote("d", "es", 0.6)],
        // two votes averaging below 0.5 do not count
        vec![vote("a", "pt", 0.4), vote("b", "pt", 0.5), vote("c", "es", 0.9), vote("d", "es", 0.8)],
        // no language reaches two votes
        vec![vote("a", "en", 0.9), vote("b", "de", 0.9), vote("c", "fr", 0.9), vote("d", "es", 0.9)],
    ];
    let mut out: Vec<Option<String>> = cases.iter().map(|v| fuse(v, &cfg)).collect();

    // detectors with unbounded scores are rescaled by their own maximum
    let keyword = FnDetector::new("keyword", |text: &str| {
        let hits = text.split_whitespace().filter(|w| ["the", "and", "is"].contains(w)).count();
        Ok(vec![LanguageScore {
            language: "en".into(),
            raw_score: hits as f64,
        }])
    });
    let prior = FnDetector::new("prior", |_: &str| {
        Ok(vec![LanguageScore {
            language: "en".into(),
            raw_score: 0.7,
        }])
    });
    let detectors: Vec<Box<dyn LanguageDetector>> = vec![Box::new(keyword), Box::new(prior)];
    let raw = collect_votes("the claim is false and the photo is old", &detectors)?;
    out.push(detect_language(&raw, &cfg)?);

    for (i, r) in out.iter().enumerate() {
        println!("case {i}: {}", r.as_deref().unwrap_or("und"));
    }
    Ok(out)
}

fn main() -> claimlink::Result<()> {
    run_example().map(|_| ())
}
