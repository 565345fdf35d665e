mod support;

use mpt_core::domain::{AnswerOption, AnswerRole, Prediction};
use mpt_core::extract::extract_answer;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    text: String,
    option_texts: Vec<String>,
    option_roles: Vec<AnswerRole>,
    expected_label: Option<usize>,
}

#[test]
fn corpus_agreement_without_wrong_labels() {
    let raw = std::fs::read_to_string(support::fixture("extraction_corpus.jsonl")).unwrap();
    let cases: Vec<Case> = raw.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(cases.len(), 200);
    let mut agree = 0;
    let mut wrong = Vec::new();
    let mut missed = Vec::new();
    for case in &cases {
        let options: Vec<AnswerOption> = case
            .option_texts
            .iter()
            .zip(&case.option_roles)
            .map(|(t, r)| AnswerOption::new(t.clone(), *r))
            .collect();
        let expected = case
            .expected_label
            .map_or(Prediction::Invalid, Prediction::Choice);
        let got = extract_answer(&case.text, &options).label;
        if got == expected {
            agree += 1;
        } else if got.is_invalid() {
            missed.push((&case.text, expected));
        } else {
            wrong.push((&case.text, expected, got));
        }
    }
    for (text, expected) in &missed {
        eprintln!("missed ({expected}): {text:?}");
    }
    assert!(wrong.is_empty(), "wrong labels: {wrong:#?}");
    assert!(agree * 100 >= 95 * cases.len(), "agreement {agree}/200");
}
