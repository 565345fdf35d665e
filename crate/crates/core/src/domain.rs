//! Domain types shared across the harness.
//!
//! A [`BiasInstance`] can only be obtained through [`validate_instance`]
//! (deserialization goes through the same path), so every instance seen by
//! the methods and metrics modules satisfies the role and gold invariants.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed descriptor of the neutral persona.
pub const NEUTRAL_DESCRIPTOR: &str = "neutral general public";

/// Role an answer option plays with respect to the stereotype probed by an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerRole {
    Biased,
    CounterBiased,
    Unknown,
}

impl AnswerRole {
    pub const ALL: [AnswerRole; 3] = [
        AnswerRole::Biased,
        AnswerRole::CounterBiased,
        AnswerRole::Unknown,
    ];
}

impl fmt::Display for AnswerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerRole::Biased => "biased",
            AnswerRole::CounterBiased => "counter_biased",
            AnswerRole::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Bbq,
    StereoSetWord,
    StereoSetSentence,
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Bbq => "bbq",
            Dataset::StereoSetWord => "stereoset_word",
            Dataset::StereoSetSentence => "stereoset_sentence",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Ambiguous,
    Disambiguated,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Ambiguous => "ambiguous",
            Condition::Disambiguated => "disambiguated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub text: String,
    pub role: AnswerRole,
}

impl AnswerOption {
    pub fn new(text: impl Into<String>, role: AnswerRole) -> Self {
        Self {
            text: text.into(),
            role,
        }
    }
}

/// An unvalidated multiple-choice item, as produced by dataset loaders or
/// read from the canonical instance format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInstance {
    pub id: String,
    pub dataset: Dataset,
    pub category: String,
    pub condition: Condition,
    pub context: String,
    pub question: String,
    pub options: Vec<AnswerOption>,
    pub gold: usize,
    pub target_group: String,
    pub counter_target_group: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("instance {id}: expected 3 options, found {found}")]
    WrongOptionCount { id: String, found: usize },
    #[error("instance {id}: no option carries role {role}")]
    MissingRole { id: String, role: AnswerRole },
    #[error("instance {id}: gold index {gold} is out of range")]
    GoldOutOfRange { id: String, gold: usize },
    #[error("instance {id}: {condition} gold option has role {role}")]
    GoldRoleMismatch {
        id: String,
        condition: Condition,
        role: AnswerRole,
    },
    #[error("instance {id}: target and counter-target groups must be non-empty")]
    EmptyGroup { id: String },
    #[error("instance {id}: target and counter-target groups are both {group:?}")]
    IdenticalGroups { id: String, group: String },
}

/// A validated multiple-choice bias probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct BiasInstance {
    inner: RawInstance,
}

impl TryFrom<RawInstance> for BiasInstance {
    type Error = ValidationError;

    fn try_from(raw: RawInstance) -> Result<Self, Self::Error> {
        validate_instance(raw)
    }
}

impl From<BiasInstance> for RawInstance {
    fn from(instance: BiasInstance) -> Self {
        instance.inner
    }
}

/// Checks every instance invariant and wraps the candidate on success.
pub fn validate_instance(raw: RawInstance) -> Result<BiasInstance, ValidationError> {
    let id = raw.id.clone();
    if raw.options.len() != 3 {
        return Err(ValidationError::WrongOptionCount {
            id,
            found: raw.options.len(),
        });
    }
    for role in AnswerRole::ALL {
        if !raw.options.iter().any(|o| o.role == role) {
            return Err(ValidationError::MissingRole { id, role });
        }
    }
    let Some(gold) = raw.options.get(raw.gold) else {
        return Err(ValidationError::GoldOutOfRange { id, gold: raw.gold });
    };
    let gold_ok = match raw.condition {
        Condition::Ambiguous => gold.role == AnswerRole::Unknown,
        Condition::Disambiguated => gold.role != AnswerRole::Unknown,
    };
    if !gold_ok {
        return Err(ValidationError::GoldRoleMismatch {
            id,
            condition: raw.condition,
            role: gold.role,
        });
    }
    if raw.target_group.trim().is_empty() || raw.counter_target_group.trim().is_empty() {
        return Err(ValidationError::EmptyGroup { id });
    }
    if raw.target_group == raw.counter_target_group {
        return Err(ValidationError::IdenticalGroups {
            id,
            group: raw.target_group,
        });
    }
    Ok(BiasInstance { inner: raw })
}

impl BiasInstance {
    pub fn id(&self) -> &str {
        &self.inner.id
    }

    pub fn dataset(&self) -> Dataset {
        self.inner.dataset
    }

    pub fn category(&self) -> &str {
        &self.inner.category
    }

    pub fn condition(&self) -> Condition {
        self.inner.condition
    }

    pub fn context(&self) -> &str {
        &self.inner.context
    }

    pub fn question(&self) -> &str {
        &self.inner.question
    }

    pub fn options(&self) -> &[AnswerOption] {
        &self.inner.options
    }

    pub fn gold(&self) -> usize {
        self.inner.gold
    }

    pub fn gold_role(&self) -> AnswerRole {
        self.inner.options[self.inner.gold].role
    }

    pub fn target_group(&self) -> &str {
        &self.inner.target_group
    }

    pub fn counter_target_group(&self) -> &str {
        &self.inner.counter_target_group
    }

    /// Role of the option at `index`, if it exists.
    pub fn role_of(&self, index: usize) -> Option<AnswerRole> {
        self.inner.options.get(index).map(|o| o.role)
    }

    /// Index of the option carrying `role`. Always present for a valid instance.
    pub fn index_of(&self, role: AnswerRole) -> usize {
        self.inner
            .options
            .iter()
            .position(|o| o.role == role)
            .expect("validated instance carries every role")
    }

    pub fn as_raw(&self) -> &RawInstance {
        &self.inner
    }

    pub fn into_raw(self) -> RawInstance {
        self.inner
    }
}

/// A parsed model answer: an option index, or `Invalid` when nothing could
/// be extracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Choice(usize),
    Invalid,
}

impl Prediction {
    pub fn choice(self) -> Option<usize> {
        match self {
            Prediction::Choice(i) => Some(i),
            Prediction::Invalid => None,
        }
    }

    pub fn is_invalid(self) -> bool {
        matches!(self, Prediction::Invalid)
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Choice(i) => write!(f, "a{i}"),
            Prediction::Invalid => f.write_str("invalid"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaKind {
    Target,
    CounterTarget,
    Neutral,
    None,
}

/// A reasoning identity adopted through the system prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Persona {
    pub kind: PersonaKind,
    pub descriptor: String,
}

impl Persona {
    pub fn target(group: impl Into<String>) -> Self {
        Self {
            kind: PersonaKind::Target,
            descriptor: group.into(),
        }
    }

    pub fn counter_target(group: impl Into<String>) -> Self {
        Self {
            kind: PersonaKind::CounterTarget,
            descriptor: group.into(),
        }
    }

    pub fn neutral() -> Self {
        Self {
            kind: PersonaKind::Neutral,
            descriptor: NEUTRAL_DESCRIPTOR.to_owned(),
        }
    }

    /// The persona-free default identity.
    pub fn none() -> Self {
        Self {
            kind: PersonaKind::None,
            descriptor: String::new(),
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == PersonaKind::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Sampling parameters sent with every completion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl DecodingParams {
    /// Output budget used for open-weight models.
    pub const OPEN_MODEL_MAX_TOKENS: u32 = 512;
    /// Output budget used for the small hosted model.
    pub const HOSTED_MODEL_MAX_TOKENS: u32 = 128;
    /// Temperature for sampling-based methods (self-consistency and friends).
    pub const SAMPLING_TEMPERATURE: f64 = 0.7;

    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: Self::OPEN_MODEL_MAX_TOKENS,
            seed: 0,
        }
    }

    pub fn sampling() -> Self {
        Self {
            temperature: Self::SAMPLING_TEMPERATURE,
            ..Self::greedy()
        }
    }
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self::greedy()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Direct,
    SelfConsistency,
    RePrompting,
    Mad,
    Mpt,
    MptSelfConsistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    Debias,
    Persona,
    #[serde(rename = "na")]
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MethodSpecError {
    #[error("self-consistency needs at least one sample")]
    ZeroSamples,
    #[error("debate needs at least 2 agents and 1 round (got {agents} agents, {rounds} rounds)")]
    DegenerateDebate { agents: u32, rounds: u32 },
    #[error("variant {variant:?} is not available for {method:?}")]
    UnsupportedVariant { method: MethodKind, variant: Variant },
    #[error("max_tokens must be positive")]
    ZeroMaxTokens,
    #[error("temperature must be finite and non-negative")]
    BadTemperature,
}

/// Full description of one prompting strategy and its budget parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: MethodKind,
    pub variant: Variant,
    /// Review rounds after the initial persona generation (MPT only).
    pub rounds: u32,
    pub include_neutral: bool,
    /// Independent samples for self-consistency style voting.
    pub k: u32,
    pub agents: u32,
    pub debate_rounds: u32,
    pub decoding: DecodingParams,
}

impl MethodSpec {
    fn base(method: MethodKind, variant: Variant, decoding: DecodingParams) -> Self {
        Self {
            method,
            variant,
            rounds: 0,
            include_neutral: true,
            k: 1,
            agents: 0,
            debate_rounds: 0,
            decoding,
        }
    }

    pub fn direct(variant: Variant) -> Self {
        Self::base(MethodKind::Direct, variant, DecodingParams::greedy())
    }

    pub fn self_consistency(variant: Variant, k: u32) -> Self {
        Self {
            k,
            ..Self::base(MethodKind::SelfConsistency, variant, DecodingParams::sampling())
        }
    }

    pub fn reprompting(variant: Variant) -> Self {
        Self::base(MethodKind::RePrompting, variant, DecodingParams::greedy())
    }

    pub fn mad(agents: u32, debate_rounds: u32) -> Self {
        Self {
            agents,
            debate_rounds,
            ..Self::base(
                MethodKind::Mad,
                Variant::NotApplicable,
                DecodingParams::sampling(),
            )
        }
    }

    pub fn mpt(rounds: u32, include_neutral: bool) -> Self {
        Self {
            rounds,
            include_neutral,
            ..Self::base(MethodKind::Mpt, Variant::NotApplicable, DecodingParams::greedy())
        }
    }

    pub fn mpt_sc(rounds: u32, include_neutral: bool, k: u32) -> Self {
        Self {
            rounds,
            include_neutral,
            k,
            ..Self::base(
                MethodKind::MptSelfConsistency,
                Variant::NotApplicable,
                DecodingParams::sampling(),
            )
        }
    }

    pub fn with_decoding(mut self, decoding: DecodingParams) -> Self {
        self.decoding = decoding;
        self
    }

    pub fn validate(&self) -> Result<(), MethodSpecError> {
        if self.decoding.max_tokens == 0 {
            return Err(MethodSpecError::ZeroMaxTokens);
        }
        if !self.decoding.temperature.is_finite() || self.decoding.temperature < 0.0 {
            return Err(MethodSpecError::BadTemperature);
        }
        let variant_ok = match self.method {
            MethodKind::Direct | MethodKind::SelfConsistency => matches!(
                self.variant,
                Variant::Standard | Variant::Debias | Variant::Persona
            ),
            MethodKind::RePrompting => matches!(self.variant, Variant::Debias | Variant::Persona),
            MethodKind::Mad | MethodKind::Mpt | MethodKind::MptSelfConsistency => true,
        };
        if !variant_ok {
            return Err(MethodSpecError::UnsupportedVariant {
                method: self.method,
                variant: self.variant,
            });
        }
        match self.method {
            MethodKind::SelfConsistency | MethodKind::MptSelfConsistency if self.k == 0 => {
                Err(MethodSpecError::ZeroSamples)
            }
            MethodKind::Mad if self.agents < 2 || self.debate_rounds < 1 => {
                Err(MethodSpecError::DegenerateDebate {
                    agents: self.agents,
                    rounds: self.debate_rounds,
                })
            }
            _ => Ok(()),
        }
    }

    /// Number of personas an MPT run uses.
    pub fn persona_count(&self) -> u32 {
        if self.include_neutral {
            3
        } else {
            2
        }
    }

    /// Closed-form number of backend completions per instance.
    pub fn call_budget(&self) -> u64 {
        let mpt_once = u64::from(self.persona_count()) * (u64::from(self.rounds) + 1) + 1;
        match self.method {
            MethodKind::Direct => 1,
            MethodKind::SelfConsistency => u64::from(self.k),
            MethodKind::RePrompting => 2,
            MethodKind::Mad => u64::from(self.agents) * u64::from(self.debate_rounds),
            MethodKind::Mpt => mpt_once,
            MethodKind::MptSelfConsistency => u64::from(self.k) * mpt_once,
        }
    }

    /// Short stable label used in file names and reports, e.g. `mpt-r2`.
    pub fn label(&self) -> String {
        let variant = match self.variant {
            Variant::Standard => "standard",
            Variant::Debias => "debias",
            Variant::Persona => "persona",
            Variant::NotApplicable => "",
        };
        let neutral = if self.include_neutral { "" } else { "-noneutral" };
        match self.method {
            MethodKind::Direct => format!("direct-{variant}"),
            MethodKind::SelfConsistency => format!("sc-{variant}-k{}", self.k),
            MethodKind::RePrompting => format!("reprompt-{variant}"),
            MethodKind::Mad => format!("mad-a{}-r{}", self.agents, self.debate_rounds),
            MethodKind::Mpt => format!("mpt-r{}{neutral}", self.rounds),
            MethodKind::MptSelfConsistency => format!("mpt-sc-r{}-k{}{neutral}", self.rounds, self.k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Single-shot answer to the question prompt.
    Answer,
    /// Second turn of re-prompting carrying a debias instruction.
    Debias,
    /// Persona or agent response to a review prompt.
    Review,
    /// Persona-free integration (MPT final step, optional MAD judge).
    Aggregation,
}

/// One backend completion inside a method run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub persona: Persona,
    /// Position of the persona or agent within its round.
    pub slot: u32,
    pub round: u32,
    /// Independent sample stream this turn belongs to.
    pub sample: u32,
    pub stage: Stage,
    pub prompt_messages: Vec<Message>,
    pub raw_response: String,
    pub extracted: Prediction,
}

/// Ordered record of every model call made for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub instance_id: String,
    pub method: MethodSpec,
    pub turns: Vec<TurnRecord>,
    pub final_answer: Prediction,
    pub call_count: u64,
}
