use std::collections::BTreeMap;

use metaturing::domain::{Kind, ParticipantId};
use metaturing::winograd::{
    evaluate_meta_wsc, exact_duplicates, random_guess_expectation, score_answer_sheet, validate_bank,
    validate_constrained_pair, AnswerSheet, Bank, ConstraintStyle, SchemaPair, SchemaQuestion, Violation,
    WinogradError, WscThresholds,
};
use metaturing::Fraction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn question(id: String, pair: &str, text: String, choices: usize, correct: usize, special: &str, alt: &str) -> SchemaQuestion {
    SchemaQuestion {
        id,
        pair_id: pair.to_string(),
        sentence_with_question: text,
        choices: ["the box", "the shelf", "the bag"][..choices].iter().map(|s| s.to_string()).collect(),
        correct_index: correct,
        special_word: special.into(),
        alternate_word: alt.into(),
        required_lexemes: vec![],
    }
}

/// `pairs` valid pairs; the last `three_choice` of them offer three answers.
fn bank(pairs: usize, three_choice: usize) -> Bank {
    let mut b = Bank::default();
    for i in 0..pairs {
        let pid = format!("p{i}");
        let k = if i + three_choice >= pairs { 3 } else { 2 };
        let text = |w: &str| format!("Box {i} will not go on shelf {i} because it is too {w}. What is too {w}?");
        b.pairs.push(SchemaPair {
            first: question(format!("{pid}a"), &pid, text("wide"), k, 0, "wide", "narrow"),
            second: question(format!("{pid}b"), &pid, text("narrow"), k, 1, "narrow", "wide"),
            pair_id: pid,
        });
    }
    b
}

fn sheet(bank: &Bank, who: &str, bank_id: &str, correct: usize) -> AnswerSheet {
    let answers = bank
        .questions()
        .enumerate()
        .map(|(i, q)| (q.id.clone(), if i < correct { q.correct_index } else { (q.correct_index + 1) % q.choices.len() }))
        .collect();
    AnswerSheet { respondent_id: who.into(), bank_id: bank_id.into(), answers }
}

#[test]
fn synthetic_bank_is_valid() {
    assert!(validate_bank(&bank(10, 3)).is_valid());
}

#[test]
fn shared_correct_index_is_exactly_one_violation() {
    let mut b = Bank::seed();
    b.pairs[0].second.correct_index = 0;
    let report = validate_bank(&b);
    assert_eq!(report.pairs[0].violations, vec![Violation::ReferentDoesNotFlip]);
    assert!(report.pairs[1].violations.is_empty());
    assert_eq!(report.pairs[0].violations[0].to_string(), "referent does not flip");
}

#[test]
fn missing_special_word_is_exactly_one_violation() {
    let mut b = Bank::seed();
    b.pairs[0].first.special_word = "huge".into();
    assert_eq!(
        validate_bank(&b).violations().cloned().collect::<Vec<_>>(),
        vec![Violation::SpecialWordMissing { question_id: "trophy-big".into() }]
    );
}

#[test]
fn missing_required_lexeme_is_exactly_one_violation() {
    let mut b = Bank::seed();
    b.pairs[1].second.required_lexemes.push("suitcase".into());
    assert_eq!(
        validate_bank(&b).violations().cloned().collect::<Vec<_>>(),
        vec![Violation::RequiredLexemeMissing { question_id: "toy-tall".into(), lexeme: "suitcase".into() }]
    );
}

#[test]
fn stray_token_difference_is_caught() {
    let mut b = Bank::seed();
    b.pairs[1].second.sentence_with_question = "The toy was lost in the grass because it was tall. What is too tall?".into();
    assert_eq!(
        validate_bank(&b).violations().cloned().collect::<Vec<_>>(),
        vec![Violation::TokensDifferOutsideSpecialWords { position: None }]
    );
    b.pairs[1].second.sentence_with_question = "The toy was hidden in the grass because it was tall. What is tall?".into();
    assert_eq!(
        validate_bank(&b).violations().cloned().collect::<Vec<_>>(),
        vec![Violation::TokensDifferOutsideSpecialWords { position: Some(3) }]
    );
}

#[test]
fn noun_phrase_constraint() {
    let toy = &Bank::seed().pairs[1];
    let ok = validate_constrained_pair(toy, &["toy".into(), "grass".into()]);
    assert_eq!(ok.style, ConstraintStyle::NounPhrases);
    assert!(ok.is_ok());
    let bad = validate_constrained_pair(toy, &["suitcase".into()]);
    assert!(!bad.is_ok());
    assert!(bad.violations.iter().all(|v| matches!(v, Violation::RequiredLexemeMissing { lexeme, .. } if lexeme == "suitcase")));
    assert_eq!(bad.violations.len(), 2);
}

#[test]
fn adjective_constraint_is_joint_but_reported_per_question() {
    let toy = &Bank::seed().pairs[1];
    let r = validate_constrained_pair(toy, &["short".into(), "tall".into()]);
    assert_eq!(r.style, ConstraintStyle::AdjectivePair);
    assert!(r.is_ok());
    assert_eq!(r.per_question[0].present, vec!["short".to_string()]);
    assert_eq!(r.per_question[0].missing, vec!["tall".to_string()]);
    assert_eq!(r.per_question[1].present, vec!["tall".to_string()]);
}

#[test]
fn seed_questions_are_flagged_as_duplicates() {
    let seed = Bank::seed();
    assert_eq!(exact_duplicates(&seed, &seed).len(), 4);
    assert!(exact_duplicates(&bank(3, 0), &seed).is_empty());
}

#[test]
fn accuracy_is_exact_and_abstention_is_wrong() {
    let b = bank(50, 0);
    let all = sheet(&b, "h", "b", 100);
    assert_eq!(score_answer_sheet(&all, &b).unwrap().accuracy, Fraction::ONE);
    let s58 = score_answer_sheet(&sheet(&b, "m", "b", 58), &b).unwrap();
    assert_eq!(s58.accuracy, Fraction::of(58, 100));
    assert!(s58.accuracy < Fraction::of(9, 10));
    let s92 = score_answer_sheet(&sheet(&b, "h", "b", 92), &b).unwrap();
    assert_eq!(s92.accuracy, Fraction::of(92, 100));
    assert!(s92.accuracy >= Fraction::of(9, 10));

    let mut partial = all.clone();
    partial.answers.remove("p0a");
    let s = score_answer_sheet(&partial, &b).unwrap();
    assert_eq!(s.accuracy, Fraction::of(99, 100));
    assert_eq!(s.unanswered, vec!["p0a".to_string()]);

    let mut stray = all;
    stray.answers.insert("nope".into(), 0);
    assert_eq!(score_answer_sheet(&stray, &b), Err(WinogradError::UnknownQuestionId("nope".into())));
}

#[test]
fn random_guess_expectations() {
    assert_eq!(random_guess_expectation(&bank(5, 0)).unwrap(), Fraction::of(1, 2));
    assert_eq!(random_guess_expectation(&bank(20, 6)).unwrap(), Fraction::of(45, 100));
    let mut single = bank(1, 0);
    single.pairs[0].first.choices = vec!["a".into(), "b".into(), "c".into(), "d".into()];
    single.pairs[0].second.choices = single.pairs[0].first.choices.clone();
    assert_eq!(random_guess_expectation(&single).unwrap(), Fraction::of(1, 4));
    assert_eq!(random_guess_expectation(&Bank::default()), Err(WinogradError::EmptyBank));
}

#[test]
fn guessing_converges_to_expectation() {
    let b = bank(20, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let draws = 10_000;
    let mut sum = 0.0;
    for _ in 0..draws {
        let answers = b.questions().map(|q| (q.id.clone(), rng.random_range(0..q.choices.len()))).collect();
        let s = AnswerSheet { respondent_id: "g".into(), bank_id: "b".into(), answers };
        sum += score_answer_sheet(&s, &b).unwrap().accuracy.to_f64();
    }
    assert!((sum / draws as f64 - 0.45).abs() < 0.01);
}

struct Arena {
    banks: BTreeMap<String, Bank>,
    authors: BTreeMap<String, ParticipantId>,
    kinds: BTreeMap<ParticipantId, Kind>,
}

/// Machines M (candidate) and F (weak), humans h1..h3. Each machine
/// authors a 50-pair bank.
fn arena() -> Arena {
    let mut kinds = BTreeMap::new();
    for h in ["h1", "h2", "h3"] {
        kinds.insert(ParticipantId::from(h), Kind::Human);
    }
    kinds.insert("M".into(), Kind::Machine);
    kinds.insert("F".into(), Kind::Machine);
    Arena {
        banks: [("bM".to_string(), bank(50, 0)), ("bF".to_string(), bank(50, 0))].into(),
        authors: [("bM".to_string(), "M".into()), ("bF".to_string(), "F".into())].into(),
        kinds,
    }
}

fn run(a: &Arena, m_answers: usize, h_scores: [usize; 3], f_on_m: usize) -> metaturing::winograd::MetaWscReport {
    let mut sheets = vec![sheet(&a.banks["bF"], "M", "bF", m_answers), sheet(&a.banks["bM"], "F", "bM", f_on_m)];
    for (h, c) in ["h1", "h2", "h3"].iter().zip(h_scores) {
        sheets.push(sheet(&a.banks["bM"], h, "bM", c));
        sheets.push(sheet(&a.banks["bF"], h, "bF", 100));
    }
    let reports = evaluate_meta_wsc(&sheets, &a.banks, &a.authors, &a.kinds, &WscThresholds::default()).unwrap();
    reports.into_iter().find(|r| r.machine_id.as_str() == "M").unwrap()
}

#[test]
fn meta_wsc_pass() {
    let r = run(&arena(), 95, [92, 97, 100], 55);
    assert!(r.condition_i && r.condition_ii && r.passed);
    assert_eq!(r.failing_machine_scores.len(), 1);
}

#[test]
fn meta_wsc_fails_on_own_answering() {
    let r = run(&arena(), 88, [92, 97, 100], 55);
    assert!(!r.condition_i);
    assert!(r.condition_ii);
    assert!(!r.passed);
}

#[test]
fn meta_wsc_fails_when_a_human_struggles() {
    let r = run(&arena(), 95, [85, 97, 100], 55);
    assert!(r.condition_i);
    assert!(!r.condition_ii);
}

#[test]
fn meta_wsc_errors() {
    let mut a = arena();
    a.authors.remove("bF");
    let sheets = vec![sheet(&a.banks["bM"], "h1", "bM", 100)];
    assert_eq!(
        evaluate_meta_wsc(&sheets, &a.banks, &a.authors, &a.kinds, &WscThresholds::default()),
        Err(WinogradError::MissingAuthoredBank("F".into()))
    );
    let a = arena();
    assert_eq!(
        evaluate_meta_wsc(&sheets, &a.banks, &a.authors, &a.kinds, &WscThresholds::default()),
        Err(WinogradError::NoRespondents("bF".into()))
    );
}
