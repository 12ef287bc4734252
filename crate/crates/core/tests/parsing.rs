use nbest_core::keyword::Keyword;
use nbest_core::parse::*;

// Untuned model output for the "score of the Hawaii game" n-best prompt.
const DESCRIPTIVE_RESPONSE: &str = "Based on the provided n-best list, the most likely hypothesis for the spoken utterance is: `score of the Hawaii game [-144.2]'. This hypothesis is the first in the list, indicating that it is the most likely interpretation of the spoken utterance. The cost associated with this hypothesis is `-144.2', which suggests that the ASR system is not very confident about this hypothesis. Given the content of the utterance, it is more likely to be directed towards a voice assistant rather than a human being. The utterance contains a question about the Hawaii game, which is a sports-related topic that is commonly addressed to voice assistants. Therefore, the answer is `1'.";

#[test]
fn descriptive_binary_counts_as_directed() {
    let p = parse_binary("hawaii", DESCRIPTIVE_RESPONSE);
    assert_eq!(p.value, PredictionValue::Binary(1));
    assert!(p.was_descriptive);
    assert_eq!(p.raw_text, DESCRIPTIVE_RESPONSE);

    let tuned = parse_binary("hawaii", "1");
    assert_eq!(tuned.value, PredictionValue::Binary(1));
    assert!(!tuned.was_descriptive);
}

#[test]
fn descriptive_zero_still_directed() {
    let p = parse_binary("u", "The answer is 0.");
    assert_eq!(p.value, PredictionValue::Binary(1));
    assert!(p.was_descriptive);
}

#[test]
fn scale_examples() {
    let p = parse_scale("u", "73");
    assert_eq!(p.score(), Some(0.73));
    assert!(!p.was_descriptive);
    assert_eq!(probability_to_scale_label(0.734), Ok(73));
}

#[test]
fn scale_label_round_trip_on_grid() {
    for k in 0..=100u8 {
        let p = parse_scale("u", &k.to_string());
        let score = p.score().unwrap();
        assert_eq!(probability_to_scale_label(score), Ok(k));
        assert!(!p.was_descriptive);
    }
}

#[test]
fn keyword_exact_matches_only() {
    for k in Keyword::ALL {
        let p = parse_keyword("u", k.as_str());
        assert_eq!(p.keyword(), Some(k));
        assert!(!p.was_descriptive);
    }
    for raw in ["hive", "up up", "The keyword is up", "", "yes!no", "upp", "0"] {
        let p = parse_keyword("u", raw);
        assert_eq!(p.keyword(), Some(Keyword::Oov), "{raw:?}");
        assert!(p.was_descriptive, "{raw:?}");
    }
}

#[test]
fn descriptive_fraction_counts() {
    let preds = vec![
        parse_binary("a", "1"),
        parse_binary("b", "0"),
        parse_binary("c", DESCRIPTIVE_RESPONSE),
        parse_binary("d", "yes"),
    ];
    assert_eq!(descriptive_fraction(&preds), 0.5);
}
