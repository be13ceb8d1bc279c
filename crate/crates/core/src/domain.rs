//! Participants, tournament configuration, and pool validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fraction::Fraction;

/// Pool size below which a warning is emitted (one dozen of each kind).
pub const RECOMMENDED_POOL_SIZE: usize = 12;

/// Default hard cap on open-ended sessions: four hours of virtual time.
pub const DEFAULT_OPEN_ENDED_CAP_SECONDS: u64 = 4 * 60 * 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Human,
    Machine,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Human => f.write_str("human"),
            Kind::Machine => f.write_str("machine"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParticipantId(pub String);

impl ParticipantId {
    pub fn new(id: impl Into<String>) -> Self {
        ParticipantId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ParticipantId {
    fn from(s: &str) -> Self {
        ParticipantId(s.to_string())
    }
}

/// One human or machine enrolled in a tournament.
///
/// `kind` is ground truth: known to the engine, never shown to other
/// participants. Sessions only ever expose `display_alias`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Participant {
    pub id: ParticipantId,
    pub kind: Kind,
    #[serde(default)]
    pub display_alias: String,
    #[serde(default)]
    pub affiliations: BTreeSet<String>,
    /// Enrollment attestation for humans. Machines carry the persona
    /// constraint (imitating a college-educated adult) as documentation only.
    #[serde(default)]
    pub attested_college_educated_adult: bool,
}

impl Participant {
    pub fn human(id: impl Into<String>) -> Self {
        Participant {
            id: ParticipantId::new(id),
            kind: Kind::Human,
            display_alias: String::new(),
            affiliations: BTreeSet::new(),
            attested_college_educated_adult: true,
        }
    }

    pub fn machine(id: impl Into<String>) -> Self {
        Participant {
            id: ParticipantId::new(id),
            kind: Kind::Machine,
            display_alias: String::new(),
            affiliations: BTreeSet::new(),
            attested_college_educated_adult: false,
        }
    }

    pub fn with_affiliation(mut self, tag: impl Into<String>) -> Self {
        self.affiliations.insert(tag.into());
        self
    }

    pub fn with_alias(mut self, alias: impl Into<String>) -> Self {
        self.display_alias = alias.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    OneToOne,
    OneToTwo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum DurationPolicy {
    Timed {
        seconds: u64,
    },
    /// Each conversant continues until certain; `hard_cap_seconds`
    /// guarantees termination.
    OpenEnded {
        #[serde(default = "default_open_cap")]
        hard_cap_seconds: u64,
    },
    MessageBudget {
        count: u64,
    },
}

fn default_open_cap() -> u64 {
    DEFAULT_OPEN_ENDED_CAP_SECONDS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopicPolicy {
    Unrestricted,
    /// An outside judge supplies `topics[k mod len]` during the k-th interval.
    ExternalSchedule {
        interval_seconds: u64,
        topics: Vec<String>,
    },
    /// Each player picks the topic for one half of the conversation.
    HalfSplit,
}

/// Reading of one-to-one condition (b).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BRule {
    /// Accuracy on partners in the recognised set R must reach `theta_m`.
    #[default]
    Accuracy,
    /// The machine must never label a member of R as Human.
    Prohibition,
    /// Naive variant: accuracy over ALL machine partners must reach
    /// `theta_m`. Not monotone; kept for the monotonicity experiment.
    AllMachines,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TournamentConfig {
    pub format: Format,
    /// Humanness threshold for condition (a).
    pub theta_h: Fraction,
    /// Machine-judge accuracy threshold for condition (b).
    pub theta_m: Fraction,
    /// Humanness below which a machine counts as recognised (member of R).
    /// Defaults to `theta_h` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_r: Option<Fraction>,
    #[serde(default)]
    pub require_no_human_misjudged: bool,
    pub duration_policy: DurationPolicy,
    pub topic_policy: TopicPolicy,
    pub min_humans: usize,
    pub min_machines: usize,
    pub coi_enabled: bool,
    #[serde(default)]
    pub allow_unequal: bool,
    #[serde(default)]
    pub b_rule: BRule,
    /// Half-width of the "at chance" band for the inverted-test baseline.
    #[serde(default = "default_chance_band")]
    pub chance_band: Fraction,
    /// Minimum judging sessions per group for the inverted-test baseline.
    #[serde(default = "default_min_judge_sessions")]
    pub min_judge_sessions: usize,
    /// Whether participants see the remaining time.
    #[serde(default = "default_true")]
    pub timer_visible: bool,
}

fn default_chance_band() -> Fraction {
    Fraction::of(1, 10)
}

fn default_min_judge_sessions() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl TournamentConfig {
    /// Strict success rule: every human judge deceived (one-to-one), or
    /// picked as human half the time (one-to-two); perfect identification
    /// of recognised machines. Thirty-minute conversations.
    pub fn strict(format: Format) -> Self {
        let theta_h = match format {
            Format::OneToOne => Fraction::ONE,
            Format::OneToTwo => Fraction::of(1, 2),
        };
        TournamentConfig {
            format,
            theta_h,
            theta_m: Fraction::ONE,
            theta_r: None,
            require_no_human_misjudged: false,
            duration_policy: DurationPolicy::Timed { seconds: 1800 },
            topic_policy: TopicPolicy::Unrestricted,
            min_humans: 2,
            min_machines: 2,
            coi_enabled: true,
            allow_unequal: false,
            b_rule: BRule::Accuracy,
            chance_band: default_chance_band(),
            min_judge_sessions: default_min_judge_sessions(),
            timer_visible: true,
        }
    }

    /// Relaxed success rule: 90% in place of 100%.
    pub fn relaxed(format: Format) -> Self {
        let theta_h = match format {
            Format::OneToOne => Fraction::of(9, 10),
            Format::OneToTwo => Fraction::of(1, 2),
        };
        TournamentConfig {
            theta_h,
            theta_m: Fraction::of(9, 10),
            ..Self::strict(format)
        }
    }

    /// Five-minute conversations with the 30% bar.
    pub fn classic(format: Format) -> Self {
        TournamentConfig {
            theta_h: Fraction::of(3, 10),
            duration_policy: DurationPolicy::Timed { seconds: 300 },
            ..Self::strict(format)
        }
    }

    pub fn theta_r(&self) -> Fraction {
        self.theta_r.unwrap_or(self.theta_h)
    }

    /// Copy with the strict or relaxed thresholds substituted, keeping
    /// session policies intact.
    pub fn with_thresholds_of(&self, preset: &TournamentConfig) -> Self {
        TournamentConfig {
            theta_h: preset.theta_h,
            theta_m: preset.theta_m,
            theta_r: preset.theta_r,
            ..self.clone()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: TournamentConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        validate_config(config)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("threshold {name} = {value} is outside its allowed range")]
    ThresholdOutOfRange { name: &'static str, value: Fraction },
    #[error("theta_r ({theta_r}) exceeds theta_h ({theta_h})")]
    ThresholdOrderViolated { theta_r: Fraction, theta_h: Fraction },
    #[error("invalid duration policy: {0}")]
    InvalidDuration(String),
    #[error("invalid topic policy: {0}")]
    InvalidTopicPolicy(String),
    #[error("pool minimums must be at least one of each kind")]
    InvalidPoolMinimum,
    #[error("config parse error: {0}")]
    Parse(String),
}

/// Check every configuration invariant; returns the config unchanged.
pub fn validate_config(config: TournamentConfig) -> Result<TournamentConfig, ConfigError> {
    for (name, value) in [("theta_h", config.theta_h), ("theta_m", config.theta_m)] {
        if !value.is_within_unit() {
            return Err(ConfigError::ThresholdOutOfRange { name, value });
        }
    }
    if config.theta_m == Fraction::ZERO {
        return Err(ConfigError::ThresholdOutOfRange { name: "theta_m", value: config.theta_m });
    }
    if let Some(theta_r) = config.theta_r {
        if !theta_r.is_within_unit() {
            return Err(ConfigError::ThresholdOutOfRange { name: "theta_r", value: theta_r });
        }
        if theta_r > config.theta_h {
            return Err(ConfigError::ThresholdOrderViolated { theta_r, theta_h: config.theta_h });
        }
    }
    if config.chance_band > Fraction::of(1, 2) {
        return Err(ConfigError::ThresholdOutOfRange { name: "chance_band", value: config.chance_band });
    }
    match &config.duration_policy {
        DurationPolicy::Timed { seconds: 0 } => {
            return Err(ConfigError::InvalidDuration("timed duration must be positive".into()))
        }
        DurationPolicy::MessageBudget { count } if *count < 2 => {
            return Err(ConfigError::InvalidDuration("message budget must be at least 2".into()))
        }
        DurationPolicy::OpenEnded { hard_cap_seconds: 0 } => {
            return Err(ConfigError::InvalidDuration("open-ended hard cap must be positive".into()))
        }
        _ => {}
    }
    if let TopicPolicy::ExternalSchedule { interval_seconds, topics } = &config.topic_policy {
        if *interval_seconds == 0 {
            return Err(ConfigError::InvalidTopicPolicy("interval must be positive".into()));
        }
        if topics.is_empty() {
            return Err(ConfigError::InvalidTopicPolicy("topic list is empty".into()));
        }
    }
    if config.min_humans == 0 || config.min_machines == 0 {
        return Err(ConfigError::InvalidPoolMinimum);
    }
    Ok(config)
}

/// A roster that passed [`validate_pool`]. Humans and machines are sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedPool {
    pub humans: Vec<Participant>,
    pub machines: Vec<Participant>,
    pub warnings: Vec<String>,
}

impl ValidatedPool {
    /// All participants, humans first, each group in id order.
    pub fn participants(&self) -> impl Iterator<Item = &Participant> {
        self.humans.iter().chain(self.machines.iter())
    }

    pub fn get(&self, id: &ParticipantId) -> Option<&Participant> {
        self.participants().find(|p| &p.id == id)
    }

    pub fn kinds(&self) -> BTreeMap<ParticipantId, Kind> {
        self.participants().map(|p| (p.id.clone(), p.kind)).collect()
    }

    pub fn len(&self) -> usize {
        self.humans.len() + self.machines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PoolError {
    #[error("roster is empty")]
    EmptyRoster,
    #[error("duplicate participant id {0}")]
    DuplicateId(ParticipantId),
    #[error("duplicate display alias {0:?}")]
    DuplicateAlias(String),
    #[error("human participant {0} has no college-educated-adult attestation")]
    MissingAttestation(ParticipantId),
    #[error("pool too small: {humans} humans and {machines} machines, minimum {min_humans}+{min_machines}")]
    PoolTooSmall { humans: usize, machines: usize, min_humans: usize, min_machines: usize },
    #[error("unequal counts: {humans} humans and {machines} machines")]
    UnequalCounts { humans: usize, machines: usize },
}

pub const WARN_BELOW_DOZEN: &str = "below recommended dozen";

/// Check a roster against the configured pool rules.
///
/// The decision and the warning set do not depend on roster order: ids are
/// sorted before any check, and the first offending id in sort order is
/// the one reported.
pub fn validate_pool(roster: &[Participant], config: &TournamentConfig) -> Result<ValidatedPool, PoolError> {
    if roster.is_empty() {
        return Err(PoolError::EmptyRoster);
    }
    let mut sorted: Vec<Participant> = roster.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for w in sorted.windows(2) {
        if w[0].id == w[1].id {
            return Err(PoolError::DuplicateId(w[0].id.clone()));
        }
    }
    let mut aliases: Vec<&str> = sorted
        .iter()
        .map(|p| p.display_alias.as_str())
        .filter(|a| !a.is_empty())
        .collect();
    aliases.sort_unstable();
    for w in aliases.windows(2) {
        if w[0] == w[1] {
            return Err(PoolError::DuplicateAlias(w[0].to_string()));
        }
    }
    if let Some(p) = sorted
        .iter()
        .find(|p| p.kind == Kind::Human && !p.attested_college_educated_adult)
    {
        return Err(PoolError::MissingAttestation(p.id.clone()));
    }

    let (humans, machines): (Vec<_>, Vec<_>) = sorted.into_iter().partition(|p| p.kind == Kind::Human);
    let (h, m) = (humans.len(), machines.len());
    if h < config.min_humans || m < config.min_machines {
        return Err(PoolError::PoolTooSmall {
            humans: h,
            machines: m,
            min_humans: config.min_humans,
            min_machines: config.min_machines,
        });
    }
    let mut warnings = Vec::new();
    if h != m {
        if !config.allow_unequal {
            return Err(PoolError::UnequalCounts { humans: h, machines: m });
        }
        warnings.push(format!("unequal counts: {h} humans and {m} machines"));
    }
    if h < RECOMMENDED_POOL_SIZE || m < RECOMMENDED_POOL_SIZE {
        warnings.push(WARN_BELOW_DOZEN.to_string());
    }
    Ok(ValidatedPool { humans, machines, warnings })
}

/// Assign opaque sequential aliases (`P01`, `P02`, ...) in a seeded random
/// order, so the label sequence carries no information about kind or id.
pub fn assign_display_aliases(roster: &mut [Participant], seed: u64) {
    let mut order: Vec<usize> = (0..roster.len()).collect();
    order.sort_by(|&a, &b| roster[a].id.cmp(&roster[b].id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let width = roster.len().to_string().len().max(2);
    for (label, &idx) in order.iter().enumerate() {
        roster[idx].display_alias = format!("P{:0width$}", label + 1, width = width);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roster(h: usize, m: usize) -> Vec<Participant> {
        let mut r: Vec<_> = (0..h).map(|i| Participant::human(format!("h{i:02}"))).collect();
        r.extend((0..m).map(|i| Participant::machine(format!("m{i:02}"))));
        r
    }

    fn cfg() -> TournamentConfig {
        TournamentConfig::strict(Format::OneToOne)
    }

    #[test]
    fn dozen_pool_has_no_warnings() {
        let pool = validate_pool(&roster(12, 12), &cfg()).unwrap();
        assert_eq!(pool.humans.len(), 12);
        assert!(pool.warnings.is_empty());
    }

    #[test]
    fn one_and_one_is_too_small() {
        assert!(matches!(validate_pool(&roster(1, 1), &cfg()), Err(PoolError::PoolTooSmall { .. })));
    }

    #[test]
    fn four_and_four_warns() {
        let pool = validate_pool(&roster(4, 4), &cfg()).unwrap();
        assert_eq!(pool.warnings, vec![WARN_BELOW_DOZEN.to_string()]);
    }

    #[test]
    fn unequal_counts_error_unless_allowed() {
        assert_eq!(
            validate_pool(&roster(3, 2), &cfg()),
            Err(PoolError::UnequalCounts { humans: 3, machines: 2 })
        );
        let mut c = cfg();
        c.allow_unequal = true;
        let pool = validate_pool(&roster(3, 2), &c).unwrap();
        assert_eq!(pool.warnings.len(), 2);
    }

    #[test]
    fn unattested_human_is_rejected() {
        let mut r = roster(2, 2);
        r[1].attested_college_educated_adult = false;
        assert_eq!(validate_pool(&r, &cfg()), Err(PoolError::MissingAttestation("h01".into())));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut r = roster(2, 2);
        r.push(Participant::human("h00"));
        assert_eq!(validate_pool(&r, &cfg()), Err(PoolError::DuplicateId("h00".into())));
    }

    #[test]
    fn empty_roster_rejected() {
        assert_eq!(validate_pool(&[], &cfg()), Err(PoolError::EmptyRoster));
    }

    #[test]
    fn presets_validate() {
        for f in [Format::OneToOne, Format::OneToTwo] {
            validate_config(TournamentConfig::strict(f)).unwrap();
            validate_config(TournamentConfig::relaxed(f)).unwrap();
            validate_config(TournamentConfig::classic(f)).unwrap();
        }
        let strict = TournamentConfig::strict(Format::OneToOne);
        assert_eq!((strict.theta_h, strict.theta_m, strict.theta_r()), (Fraction::ONE, Fraction::ONE, Fraction::ONE));
        let relaxed = TournamentConfig::relaxed(Format::OneToOne);
        assert_eq!((relaxed.theta_h, relaxed.theta_m), (Fraction::of(9, 10), Fraction::of(9, 10)));
    }

    #[test]
    fn config_errors() {
        let mut c = cfg();
        c.theta_h = Fraction::of(6, 5);
        assert!(matches!(validate_config(c), Err(ConfigError::ThresholdOutOfRange { name: "theta_h", .. })));

        let mut c = cfg();
        c.theta_h = Fraction::of(1, 2);
        c.theta_r = Some(Fraction::of(3, 4));
        assert!(matches!(validate_config(c), Err(ConfigError::ThresholdOrderViolated { .. })));

        let mut c = cfg();
        c.theta_m = Fraction::ZERO;
        assert!(matches!(validate_config(c), Err(ConfigError::ThresholdOutOfRange { .. })));

        let mut c = cfg();
        c.duration_policy = DurationPolicy::Timed { seconds: 0 };
        assert!(matches!(validate_config(c), Err(ConfigError::InvalidDuration(_))));

        let mut c = cfg();
        c.duration_policy = DurationPolicy::MessageBudget { count: 1 };
        assert!(matches!(validate_config(c), Err(ConfigError::InvalidDuration(_))));
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let json = serde_json::to_string(&cfg()).unwrap();
        let back = TournamentConfig::from_json(&json).unwrap();
        assert_eq!(back, cfg());
        let bad = json.replacen('{', "{\"surprise\":1,", 1);
        assert!(matches!(TournamentConfig::from_json(&bad), Err(ConfigError::Parse(_))));
        let relaxed = r#"{"format":"one_to_one","theta_h":0.9,"theta_m":0.9,
            "duration_policy":{"policy":"timed","seconds":1800},
            "topic_policy":{"policy":"unrestricted"},
            "min_humans":2,"min_machines":2,"coi_enabled":true}"#;
        let c = TournamentConfig::from_json(relaxed).unwrap();
        assert_eq!(c.theta_h, Fraction::of(9, 10));
        assert_eq!(c.theta_r(), Fraction::of(9, 10));
        let out_of_range = relaxed.replace("\"theta_h\":0.9", "\"theta_h\":1.2");
        assert!(matches!(
            TournamentConfig::from_json(&out_of_range),
            Err(ConfigError::ThresholdOutOfRange { name: "theta_h", .. })
        ));
    }

    #[test]
    fn aliases_are_opaque_and_unique() {
        let mut r = roster(3, 3);
        assign_display_aliases(&mut r, 7);
        let aliases: BTreeSet<_> = r.iter().map(|p| p.display_alias.clone()).collect();
        assert_eq!(aliases.len(), 6);
        assert!(aliases.iter().all(|a| a.starts_with('P')));
        let mut again = roster(3, 3);
        again.reverse();
        assign_display_aliases(&mut again, 7);
        for p in &r {
            let q = again.iter().find(|q| q.id == p.id).unwrap();
            assert_eq!(p.display_alias, q.display_alias);
        }
    }
}
