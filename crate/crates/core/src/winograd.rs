//! Winograd schema banks: validation, constrained pairs, answer sheets and
//! the meta-challenge, where each machine both answers banks and authors one
//! that must separate humans from machines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Kind, ParticipantId};
use crate::fraction::Fraction;

/// The bundled seed bank: the trophy/suitcase and toy/grass pairs.
pub const SEED_BANK_JSONL: &str = include_str!("../data/seed_bank.jsonl");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaQuestion {
    pub id: String,
    pub pair_id: String,
    pub sentence_with_question: String,
    pub choices: Vec<String>,
    pub correct_index: usize,
    pub special_word: String,
    pub alternate_word: String,
    #[serde(default)]
    pub required_lexemes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaPair {
    pub pair_id: String,
    pub first: SchemaQuestion,
    pub second: SchemaQuestion,
}

impl SchemaPair {
    pub fn questions(&self) -> [&SchemaQuestion; 2] {
        [&self.first, &self.second]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bank {
    pub pairs: Vec<SchemaPair>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BankError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("pair {pair_id} has {count} questions, expected 2")]
    Unpaired { pair_id: String, count: usize },
}

impl Bank {
    /// Parse a JSONL bank, one question per line; blank lines are skipped.
    /// Pairs keep the order in which their first question appears.
    pub fn from_jsonl(text: &str) -> Result<Self, BankError> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<SchemaQuestion>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let q: SchemaQuestion =
                serde_json::from_str(line).map_err(|e| BankError::Parse { line: i + 1, message: e.to_string() })?;
            if !groups.contains_key(&q.pair_id) {
                order.push(q.pair_id.clone());
            }
            groups.entry(q.pair_id.clone()).or_default().push(q);
        }
        let mut pairs = Vec::with_capacity(order.len());
        for pair_id in order {
            let qs = groups.remove(&pair_id).expect("grouped above");
            let count = qs.len();
            let Ok([first, second]) = <[SchemaQuestion; 2]>::try_from(qs) else {
                return Err(BankError::Unpaired { pair_id, count });
            };
            pairs.push(SchemaPair { pair_id, first, second });
        }
        Ok(Bank { pairs })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for q in self.questions() {
            out.push_str(&crate::canonical::to_canonical_json(q).expect("questions serialize"));
            out.push('\n');
        }
        out
    }

    pub fn seed() -> Self {
        Bank::from_jsonl(SEED_BANK_JSONL).expect("bundled seed bank parses")
    }

    pub fn questions(&self) -> impl Iterator<Item = &SchemaQuestion> {
        self.pairs.iter().flat_map(|p| [&p.first, &p.second])
    }

    pub fn len(&self) -> usize {
        self.pairs.len() * 2
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Lowercase, straighten curly quotes, and split on anything that is not a
/// letter, digit or apostrophe.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{02bc}' => '\'',
            '\u{201c}' | '\u{201d}' => '"',
            c => c,
        })
        .collect::<String>()
        .to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn has_token(tokens: &[String], lexeme: &str) -> bool {
    let want = tokenize(lexeme);
    !want.is_empty() && tokens.windows(want.len()).any(|w| w == want.as_slice())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    TooFewChoices { question_id: String },
    CorrectIndexOutOfRange { question_id: String },
    SpecialWordMissing { question_id: String },
    RequiredLexemeMissing { question_id: String, lexeme: String },
    PairIdMismatch { question_id: String },
    DuplicateQuestionId { question_id: String },
    /// The two questions differ somewhere other than the special words.
    TokensDifferOutsideSpecialWords { position: Option<usize> },
    /// Each question's special word should be the other's alternate.
    WordsNotSwapped,
    ReferentDoesNotFlip,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewChoices { question_id } => write!(f, "{question_id}: fewer than 2 choices"),
            Violation::CorrectIndexOutOfRange { question_id } => write!(f, "{question_id}: correct_index out of range"),
            Violation::SpecialWordMissing { question_id } => write!(f, "{question_id}: special word not in text"),
            Violation::RequiredLexemeMissing { question_id, lexeme } => {
                write!(f, "{question_id}: missing required lexeme {lexeme:?}")
            }
            Violation::PairIdMismatch { question_id } => write!(f, "{question_id}: pair_id does not match its pair"),
            Violation::DuplicateQuestionId { question_id } => write!(f, "{question_id}: duplicate question id"),
            Violation::TokensDifferOutsideSpecialWords { position: Some(p) } => {
                write!(f, "questions differ at token {p}, outside the special words")
            }
            Violation::TokensDifferOutsideSpecialWords { position: None } => {
                write!(f, "questions have different token counts")
            }
            Violation::WordsNotSwapped => write!(f, "special and alternate words are not swapped between questions"),
            Violation::ReferentDoesNotFlip => write!(f, "referent does not flip"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair_id: String,
    pub violations: Vec<Violation>,
    /// Token positions at which the two questions differ.
    pub diff_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankReport {
    pub pairs: Vec<PairReport>,
}

impl BankReport {
    pub fn is_valid(&self) -> bool {
        self.pairs.iter().all(|p| p.violations.is_empty())
    }

    pub fn violations(&self) -> impl Iterator<Item = &Violation> {
        self.pairs.iter().flat_map(|p| &p.violations)
    }
}

fn question_violations(q: &SchemaQuestion, out: &mut Vec<Violation>) {
    let id = || q.id.clone();
    if q.choices.len() < 2 {
        out.push(Violation::TooFewChoices { question_id: id() });
    }
    if q.correct_index >= q.choices.len() {
        out.push(Violation::CorrectIndexOutOfRange { question_id: id() });
    }
    let tokens = tokenize(&q.sentence_with_question);
    if !has_token(&tokens, &q.special_word) {
        out.push(Violation::SpecialWordMissing { question_id: id() });
    }
    for lexeme in &q.required_lexemes {
        if !has_token(&tokens, lexeme) {
            out.push(Violation::RequiredLexemeMissing { question_id: id(), lexeme: lexeme.clone() });
        }
    }
}

/// Token positions where the questions differ, or `None` when the token
/// counts differ.
pub fn token_diff(a: &SchemaQuestion, b: &SchemaQuestion) -> Option<Vec<usize>> {
    let (ta, tb) = (tokenize(&a.sentence_with_question), tokenize(&b.sentence_with_question));
    (ta.len() == tb.len()).then(|| (0..ta.len()).filter(|&i| ta[i] != tb[i]).collect())
}

pub fn validate_pair(pair: &SchemaPair) -> PairReport {
    let mut violations = Vec::new();
    for q in pair.questions() {
        if q.pair_id != pair.pair_id {
            violations.push(Violation::PairIdMismatch { question_id: q.id.clone() });
        }
        question_violations(q, &mut violations);
    }
    let (a, b) = (&pair.first, &pair.second);
    // The token comparison is only meaningful once both special words are
    // known to be present; otherwise the missing word is the whole story.
    let anchored = !violations.iter().any(|v| matches!(v, Violation::SpecialWordMissing { .. }));
    let mut diff_positions = Vec::new();
    if anchored {
        if tokenize(&a.special_word) != tokenize(&b.alternate_word)
            || tokenize(&b.special_word) != tokenize(&a.alternate_word)
        {
            violations.push(Violation::WordsNotSwapped);
        }
        match token_diff(a, b) {
            Some(diff) => {
                let (ta, tb) = (tokenize(&a.sentence_with_question), tokenize(&b.sentence_with_question));
                let (sa, sb) = (tokenize(&a.special_word), tokenize(&b.special_word));
                if let Some(&p) = diff.iter().find(|&&p| !(sa.contains(&ta[p]) && sb.contains(&tb[p]))) {
                    violations.push(Violation::TokensDifferOutsideSpecialWords { position: Some(p) });
                }
                diff_positions = diff;
            }
            None => violations.push(Violation::TokensDifferOutsideSpecialWords { position: None }),
        }
    }
    if a.correct_index == b.correct_index {
        violations.push(Violation::ReferentDoesNotFlip);
    }
    PairReport { pair_id: pair.pair_id.clone(), violations, diff_positions }
}

/// Check every question and pair invariant. Violations are data: the bank
/// is valid iff none are reported.
pub fn validate_bank(bank: &Bank) -> BankReport {
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(bank.pairs.len());
    for pair in &bank.pairs {
        let mut report = validate_pair(pair);
        for q in pair.questions() {
            if !seen.insert(q.id.as_str()) {
                report.violations.push(Violation::DuplicateQuestionId { question_id: q.id.clone() });
            }
        }
        pairs.push(report);
    }
    BankReport { pairs }
}

/// Questions of `bank` whose token sequence already appears in `reference`
/// (by default the bundled seed bank). Semantic near-duplicates are not
/// detected.
pub fn exact_duplicates(bank: &Bank, reference: &Bank) -> Vec<String> {
    let known: BTreeSet<Vec<String>> = reference.questions().map(|q| tokenize(&q.sentence_with_question)).collect();
    bank.questions()
        .filter(|q| known.contains(&tokenize(&q.sentence_with_question)))
        .map(|q| q.id.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintStyle {
    /// Every lexeme must appear in both questions.
    NounPhrases,
    /// The two lexemes must be the pair's special words, one per question.
    AdjectivePair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCoverage {
    pub question_id: String,
    pub present: Vec<String>,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub style: ConstraintStyle,
    pub per_question: Vec<QuestionCoverage>,
    pub violations: Vec<Violation>,
}

impl ConstraintReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check that a pair was written around the lexemes a challenger imposed.
///
/// Two lexemes matching the pair's special words are read as an adjective
/// constraint, satisfied when each question uses one of them; anything else
/// is a noun-phrase constraint, where both questions must contain every
/// lexeme. Coverage is reported per question either way.
pub fn validate_constrained_pair(pair: &SchemaPair, required: &[String]) -> ConstraintReport {
    let norm = |s: &str| tokenize(s).join(" ");
    let wanted: BTreeSet<String> = required.iter().map(|l| norm(l)).collect();
    let specials: BTreeSet<String> = [norm(&pair.first.special_word), norm(&pair.second.special_word)].into();
    let style = if wanted.len() == 2 && wanted == specials {
        ConstraintStyle::AdjectivePair
    } else {
        ConstraintStyle::NounPhrases
    };
    let mut per_question = Vec::new();
    let mut violations = Vec::new();
    for q in pair.questions() {
        let tokens = tokenize(&q.sentence_with_question);
        let (present, missing): (Vec<String>, Vec<String>) =
            required.iter().cloned().partition(|l| has_token(&tokens, l));
        if style == ConstraintStyle::NounPhrases {
            for lexeme in &missing {
                violations.push(Violation::RequiredLexemeMissing { question_id: q.id.clone(), lexeme: lexeme.clone() });
            }
        } else if !has_token(&tokens, &q.special_word) {
            violations.push(Violation::SpecialWordMissing { question_id: q.id.clone() });
        }
        per_question.push(QuestionCoverage { question_id: q.id.clone(), present, missing });
    }
    ConstraintReport { style, per_question, violations }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSheet {
    pub respondent_id: ParticipantId,
    pub bank_id: String,
    /// Question id to chosen choice index.
    pub answers: BTreeMap<String, usize>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WinogradError {
    #[error("answer sheet names unknown question {0}")]
    UnknownQuestionId(String),
    #[error("bank is empty")]
    EmptyBank,
    #[error("machine {0} authored no bank")]
    MissingAuthoredBank(ParticipantId),
    #[error("bank {0} has no respondents")]
    NoRespondents(String),
    #[error("unknown bank {0}")]
    UnknownBank(String),
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetScore {
    pub correct: u64,
    pub total: u64,
    pub accuracy: Fraction,
    /// Counted as incorrect.
    pub unanswered: Vec<String>,
}

pub fn score_answer_sheet(sheet: &AnswerSheet, bank: &Bank) -> Result<SheetScore, WinogradError> {
    let by_id: BTreeMap<&str, &SchemaQuestion> = bank.questions().map(|q| (q.id.as_str(), q)).collect();
    if by_id.is_empty() {
        return Err(WinogradError::EmptyBank);
    }
    if let Some(id) = sheet.answers.keys().find(|id| !by_id.contains_key(id.as_str())) {
        return Err(WinogradError::UnknownQuestionId(id.clone()));
    }
    let mut correct = 0;
    let mut unanswered = Vec::new();
    for q in bank.questions() {
        match sheet.answers.get(&q.id) {
            Some(&choice) => correct += u64::from(choice == q.correct_index),
            None => unanswered.push(q.id.clone()),
        }
    }
    let total = bank.len() as u64;
    Ok(SheetScore { correct, total, accuracy: Fraction::of(correct, total), unanswered })
}

/// Expected accuracy of uniform guessing: the mean of `1/choices`.
pub fn random_guess_expectation(bank: &Bank) -> Result<Fraction, WinogradError> {
    let per_question: Vec<Fraction> = bank.questions().map(|q| Fraction::of(1, q.choices.len().max(1) as u64)).collect();
    Fraction::mean(&per_question).ok_or(WinogradError::EmptyBank)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WscThresholds {
    pub answer: Fraction,
    pub human_floor: Fraction,
    pub machine_ceiling: Fraction,
}

impl Default for WscThresholds {
    fn default() -> Self {
        let nine_tenths = Fraction::of(9, 10);
        WscThresholds { answer: nine_tenths, human_floor: nine_tenths, machine_ceiling: nine_tenths }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RespondentScore {
    pub respondent_id: ParticipantId,
    pub accuracy: Fraction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaWscReport {
    pub machine_id: ParticipantId,
    /// The machine's accuracy on each bank it answered.
    pub answering: BTreeMap<String, Fraction>,
    pub condition_i: bool,
    pub authored_bank: String,
    pub human_scores: Vec<RespondentScore>,
    /// Scores of machines that failed condition (i) themselves.
    pub failing_machine_scores: Vec<RespondentScore>,
    pub condition_ii: bool,
    pub passed: bool,
}

/// Meta-challenge: a machine passes when (i) it scores at least
/// `thresholds.answer` on every bank it answered and (ii) on the bank it
/// authored every human scores at least `human_floor` and every machine
/// that failed (i) scores below `machine_ceiling`. Thresholds apply per
/// respondent, not on average.
pub fn evaluate_meta_wsc(
    sheets: &[AnswerSheet],
    banks: &BTreeMap<String, Bank>,
    authors: &BTreeMap<String, ParticipantId>,
    kinds: &BTreeMap<ParticipantId, Kind>,
    thresholds: &WscThresholds,
) -> Result<Vec<MetaWscReport>, WinogradError> {
    let mut scores: BTreeMap<&ParticipantId, BTreeMap<&str, Fraction>> = BTreeMap::new();
    for sheet in sheets {
        let bank = banks.get(&sheet.bank_id).ok_or_else(|| WinogradError::UnknownBank(sheet.bank_id.clone()))?;
        if !kinds.contains_key(&sheet.respondent_id) {
            return Err(WinogradError::UnknownParticipant(sheet.respondent_id.clone()));
        }
        let acc = score_answer_sheet(sheet, bank)?.accuracy;
        scores.entry(&sheet.respondent_id).or_default().insert(sheet.bank_id.as_str(), acc);
    }
    let answers_well = |id: &ParticipantId| {
        scores.get(id).is_some_and(|m| !m.is_empty() && m.values().all(|a| *a >= thresholds.answer))
    };
    let mut reports = Vec::new();
    for (m, _) in kinds.iter().filter(|(_, k)| **k == Kind::Machine) {
        let authored = authors
            .iter()
            .find(|(_, a)| *a == m)
            .map(|(b, _)| b.clone())
            .ok_or_else(|| WinogradError::MissingAuthoredBank(m.clone()))?;
        let answering: BTreeMap<String, Fraction> = scores
            .get(m)
            .map(|s| s.iter().filter(|(b, _)| **b != authored).map(|(b, a)| (b.to_string(), *a)).collect())
            .unwrap_or_default();
        let condition_i = !answering.is_empty() && answering.values().all(|a| *a >= thresholds.answer);
        let mut human_scores = Vec::new();
        let mut failing_machine_scores = Vec::new();
        for (respondent, by_bank) in &scores {
            let Some(acc) = by_bank.get(authored.as_str()) else { continue };
            if *respondent == m {
                continue;
            }
            let entry = RespondentScore { respondent_id: (*respondent).clone(), accuracy: *acc };
            match kinds[*respondent] {
                Kind::Human => human_scores.push(entry),
                Kind::Machine if !answers_well(respondent) => failing_machine_scores.push(entry),
                Kind::Machine => {}
            }
        }
        if human_scores.is_empty() && failing_machine_scores.is_empty() {
            return Err(WinogradError::NoRespondents(authored));
        }
        let condition_ii = human_scores.iter().all(|s| s.accuracy >= thresholds.human_floor)
            && failing_machine_scores.iter().all(|s| s.accuracy < thresholds.machine_ceiling);
        reports.push(MetaWscReport {
            machine_id: m.clone(),
            answering,
            condition_i,
            authored_bank: authored,
            human_scores,
            failing_machine_scores,
            condition_ii,
            passed: condition_i && condition_ii,
        });
    }
    Ok(reports)
}
