//! Prompting strategies: direct prompting, self-consistency, re-prompting,
//! multi-agent debate, and multi-persona thinking (MPT), alone or under
//! self-consistency voting.
//!
//! Calls that belong to the same round are issued concurrently; a round's
//! prompts are only built once every response of the previous round exists.

use std::collections::BTreeMap;

use futures::future::try_join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, Conversation};
use crate::domain::{
    AnswerRole, BiasInstance, DecodingParams, Message, MethodKind, MethodSpec, MethodSpecError,
    Persona, Prediction, Stage, Transcript, TurnRecord, Variant,
};
use crate::extract::Extractor;
use crate::prompts::{
    render_debias, render_question, render_review, render_system, DebiasKind, HistoryEntry,
    PromptError,
};

#[derive(Debug, Error)]
pub enum MethodError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Spec(#[from] MethodSpecError),
    #[error("persona construction needs both group names")]
    EmptyGroup,
}

/// How a vote with several equally frequent options is settled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Pick the Unknown-role option when it is among the tied, else the lowest index.
    #[default]
    PreferUnknown,
    LowestIndex,
}

/// Protocol switches that are not part of a method's budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolOptions {
    /// Prefix MPT review entries with the persona descriptor.
    pub label_persona_reviews: bool,
    /// Prefix MAD review entries with `Agent N`.
    pub label_debate_agents: bool,
    /// Add a persona-free judge call after the last debate round instead of voting.
    pub debate_judge: bool,
    /// Prepend the question prompt to the MPT aggregation review prompt.
    pub aggregation_includes_question: bool,
    pub tie_break: TieBreak,
    /// Replaces the built-in unknown-answer phrasings when set.
    pub unknown_keywords: Option<Vec<String>>,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            label_persona_reviews: true,
            label_debate_agents: true,
            debate_judge: false,
            aggregation_includes_question: false,
            tie_break: TieBreak::PreferUnknown,
            unknown_keywords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub transcript: Transcript,
    pub final_answer: Prediction,
    pub calls_used: u64,
}

/// Target and counter-target personas, followed by the neutral one when requested.
pub fn personas_for_groups(
    target: &str,
    counter: &str,
    include_neutral: bool,
) -> Result<Vec<Persona>, MethodError> {
    if target.trim().is_empty() || counter.trim().is_empty() {
        return Err(MethodError::EmptyGroup);
    }
    let mut personas = vec![
        Persona::target(target.trim()),
        Persona::counter_target(counter.trim()),
    ];
    if include_neutral {
        personas.push(Persona::neutral());
    }
    Ok(personas)
}

pub fn build_personas(instance: &BiasInstance, include_neutral: bool) -> Result<Vec<Persona>, MethodError> {
    personas_for_groups(
        instance.target_group(),
        instance.counter_target_group(),
        include_neutral,
    )
}

/// Majority vote with the Unknown-preferring tie rule.
pub fn majority_vote(answers: &[Prediction], unknown_index: Option<usize>) -> Prediction {
    majority_vote_with(answers, unknown_index, TieBreak::PreferUnknown)
}

pub fn majority_vote_with(
    answers: &[Prediction],
    unknown_index: Option<usize>,
    tie_break: TieBreak,
) -> Prediction {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for answer in answers {
        if let Prediction::Choice(i) = answer {
            *counts.entry(*i).or_default() += 1;
        }
    }
    let Some(&best) = counts.values().max() else {
        return Prediction::Invalid;
    };
    let tied: Vec<usize> = counts
        .iter()
        .filter(|(_, &c)| c == best)
        .map(|(&i, _)| i)
        .collect();
    if tie_break == TieBreak::PreferUnknown {
        if let Some(unknown) = unknown_index.filter(|u| tied.contains(u)) {
            return Prediction::Choice(unknown);
        }
    }
    Prediction::Choice(tied[0])
}

/// Runs methods for single instances against one backend.
pub struct MethodRunner<B> {
    backend: B,
    options: ProtocolOptions,
    extractor: Extractor,
    standard_system: String,
}

#[derive(Clone, Copy)]
struct TurnPosition {
    slot: u32,
    round: u32,
    sample: u32,
    stage: Stage,
}

impl TurnPosition {
    fn new(slot: u32, round: u32, sample: u32, stage: Stage) -> Self {
        Self {
            slot,
            round,
            sample,
            stage,
        }
    }
}

/// A conversation in progress for one persona or agent.
struct Thread {
    persona: Persona,
    slot: u32,
    messages: Vec<Message>,
}

impl<B: ChatBackend> MethodRunner<B> {
    pub fn new(backend: B) -> Self {
        Self::with_options(backend, ProtocolOptions::default())
    }

    pub fn with_options(backend: B, options: ProtocolOptions) -> Self {
        let extractor = match &options.unknown_keywords {
            Some(words) => Extractor::new(words.iter().map(String::as_str)),
            None => Extractor::default(),
        };
        Self {
            backend,
            options,
            extractor,
            standard_system: render_system(&Persona::none()).expect("standard prompt renders"),
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn options(&self) -> &ProtocolOptions {
        &self.options
    }

    /// Dispatches on `spec.method`.
    pub async fn run(&self, spec: &MethodSpec, instance: &BiasInstance) -> Result<MethodOutcome, MethodError> {
        spec.validate()?;
        let (turns, final_answer) = match spec.method {
            MethodKind::Direct => {
                let turn = self.direct_turn(instance, spec.variant, spec.decoding, 0).await?;
                let answer = turn.extracted;
                (vec![turn], answer)
            }
            MethodKind::SelfConsistency => self.self_consistency_turns(instance, spec).await?,
            MethodKind::RePrompting => self.reprompting_turns(instance, spec).await?,
            MethodKind::Mad => self.debate_turns(instance, spec).await?,
            MethodKind::Mpt => self.mpt_turns(instance, spec, 0).await?,
            MethodKind::MptSelfConsistency => {
                let runs = try_join_all((0..spec.k).map(|j| self.mpt_turns(instance, spec, j))).await?;
                let finals: Vec<Prediction> = runs.iter().map(|(_, f)| *f).collect();
                let turns = runs.into_iter().flat_map(|(t, _)| t).collect();
                (turns, self.vote(&finals, instance))
            }
        };
        let calls_used = turns.len() as u64;
        Ok(MethodOutcome {
            transcript: Transcript {
                instance_id: instance.id().to_owned(),
                method: spec.clone(),
                turns,
                final_answer,
                call_count: calls_used,
            },
            final_answer,
            calls_used,
        })
    }

    pub async fn run_direct(&self, instance: &BiasInstance, variant: Variant) -> Result<MethodOutcome, MethodError> {
        self.run(&MethodSpec::direct(variant), instance).await
    }

    pub async fn run_self_consistency(
        &self,
        instance: &BiasInstance,
        variant: Variant,
        k: u32,
    ) -> Result<MethodOutcome, MethodError> {
        self.run(&MethodSpec::self_consistency(variant, k), instance).await
    }

    pub async fn run_reprompting(&self, instance: &BiasInstance, variant: Variant) -> Result<MethodOutcome, MethodError> {
        self.run(&MethodSpec::reprompting(variant), instance).await
    }

    pub async fn run_mad(&self, instance: &BiasInstance, agents: u32, rounds: u32) -> Result<MethodOutcome, MethodError> {
        self.run(&MethodSpec::mad(agents, rounds), instance).await
    }

    pub async fn run_mpt(
        &self,
        instance: &BiasInstance,
        rounds: u32,
        include_neutral: bool,
    ) -> Result<MethodOutcome, MethodError> {
        self.run(&MethodSpec::mpt(rounds, include_neutral), instance).await
    }

    pub async fn run_mpt_sc(
        &self,
        instance: &BiasInstance,
        rounds: u32,
        include_neutral: bool,
        k: u32,
    ) -> Result<MethodOutcome, MethodError> {
        self.run(&MethodSpec::mpt_sc(rounds, include_neutral, k), instance).await
    }

    fn vote(&self, answers: &[Prediction], instance: &BiasInstance) -> Prediction {
        majority_vote_with(
            answers,
            Some(instance.index_of(AnswerRole::Unknown)),
            self.options.tie_break,
        )
    }

    fn debias_sentence(instance: &BiasInstance, variant: Variant) -> Result<Option<String>, PromptError> {
        let kind = match variant {
            Variant::Debias => DebiasKind::Explicit,
            Variant::Persona => DebiasKind::Persona,
            Variant::Standard | Variant::NotApplicable => return Ok(None),
        };
        render_debias(kind, instance.target_group(), instance.counter_target_group()).map(Some)
    }

    /// Sends one conversation and records the turn.
    async fn complete_turn(
        &self,
        instance: &BiasInstance,
        persona: Persona,
        at: TurnPosition,
        messages: Vec<Message>,
        decoding: DecodingParams,
    ) -> Result<TurnRecord, MethodError> {
        let TurnPosition {
            slot,
            round,
            sample,
            stage,
        } = at;
        let conversation = Conversation::new(messages, decoding, sample)?;
        let response = self.backend.complete(&conversation).await?;
        let extracted = self.extractor.extract(&response.text, instance.options()).label;
        Ok(TurnRecord {
            persona,
            slot,
            round,
            sample,
            stage,
            prompt_messages: conversation.into_messages(),
            raw_response: response.text,
            extracted,
        })
    }

    /// Completes every thread for one round and appends the replies to the threads.
    async fn complete_round(
        &self,
        instance: &BiasInstance,
        threads: &mut [Thread],
        round: u32,
        sample: u32,
        stage: Stage,
        decoding: DecodingParams,
    ) -> Result<Vec<TurnRecord>, MethodError> {
        let turns = try_join_all(threads.iter().map(|t| {
            self.complete_turn(
                instance,
                t.persona.clone(),
                TurnPosition::new(t.slot, round, sample, stage),
                t.messages.clone(),
                decoding,
            )
        }))
        .await?;
        for (thread, turn) in threads.iter_mut().zip(&turns) {
            thread.messages.push(Message::assistant(turn.raw_response.clone()));
        }
        Ok(turns)
    }

    async fn direct_turn(
        &self,
        instance: &BiasInstance,
        variant: Variant,
        decoding: DecodingParams,
        sample: u32,
    ) -> Result<TurnRecord, MethodError> {
        let mut user = render_question(instance);
        if let Some(sentence) = Self::debias_sentence(instance, variant)? {
            user.push('\n');
            user.push_str(&sentence);
        }
        let messages = vec![Message::system(self.standard_system.clone()), Message::user(user)];
        let at = TurnPosition::new(0, 0, sample, Stage::Answer);
        self.complete_turn(instance, Persona::none(), at, messages, decoding)
            .await
    }

    async fn self_consistency_turns(
        &self,
        instance: &BiasInstance,
        spec: &MethodSpec,
    ) -> Result<(Vec<TurnRecord>, Prediction), MethodError> {
        let turns = try_join_all(
            (0..spec.k).map(|i| self.direct_turn(instance, spec.variant, spec.decoding, i)),
        )
        .await?;
        let answers: Vec<Prediction> = turns.iter().map(|t| t.extracted).collect();
        let answer = self.vote(&answers, instance);
        Ok((turns, answer))
    }

    async fn reprompting_turns(
        &self,
        instance: &BiasInstance,
        spec: &MethodSpec,
    ) -> Result<(Vec<TurnRecord>, Prediction), MethodError> {
        let mut thread = Thread {
            persona: Persona::none(),
            slot: 0,
            messages: vec![
                Message::system(self.standard_system.clone()),
                Message::user(render_question(instance)),
            ],
        };
        let mut turns = self
            .complete_round(instance, std::slice::from_mut(&mut thread), 0, 0, Stage::Answer, spec.decoding)
            .await?;
        let sentence = Self::debias_sentence(instance, spec.variant)?
            .expect("re-prompting variants carry a debias sentence");
        thread.messages.push(Message::user(sentence));
        turns.extend(
            self.complete_round(instance, std::slice::from_mut(&mut thread), 1, 0, Stage::Debias, spec.decoding)
                .await?,
        );
        // The revised answer decides; no fallback to the first turn.
        let answer = turns[1].extracted;
        Ok((turns, answer))
    }

    fn history(&self, turns: &[TurnRecord], label: impl Fn(&TurnRecord) -> Option<String>) -> Vec<HistoryEntry> {
        turns
            .iter()
            .map(|t| HistoryEntry {
                label: label(t),
                text: t.raw_response.clone(),
            })
            .collect()
    }

    async fn debate_turns(
        &self,
        instance: &BiasInstance,
        spec: &MethodSpec,
    ) -> Result<(Vec<TurnRecord>, Prediction), MethodError> {
        let question = render_question(instance);
        let mut threads: Vec<Thread> = (0..spec.agents)
            .map(|slot| Thread {
                persona: Persona::none(),
                slot,
                messages: vec![
                    Message::system(self.standard_system.clone()),
                    Message::user(question.clone()),
                ],
            })
            .collect();

        let label_agents = self.options.label_debate_agents;
        let agent_label = |t: &TurnRecord| label_agents.then(|| format!("Agent {}", t.slot + 1));

        let mut turns: Vec<TurnRecord> = Vec::new();
        let mut previous: Vec<TurnRecord> = Vec::new();
        for round in 0..spec.debate_rounds {
            let stage = if round == 0 {
                Stage::Answer
            } else {
                let review = render_review(&self.history(&previous, agent_label))?;
                for thread in &mut threads {
                    thread.messages.push(Message::user(review.clone()));
                }
                Stage::Review
            };
            // Agents share prompts, so each gets its own sample stream.
            let round_turns = try_join_all(threads.iter().map(|t| {
                self.complete_turn(
                    instance,
                    t.persona.clone(),
                    TurnPosition::new(t.slot, round, t.slot, stage),
                    t.messages.clone(),
                    spec.decoding,
                )
            }))
            .await?;
            for (thread, turn) in threads.iter_mut().zip(&round_turns) {
                thread.messages.push(Message::assistant(turn.raw_response.clone()));
            }
            turns.extend(round_turns.iter().cloned());
            previous = round_turns;
        }

        let answer = if self.options.debate_judge {
            let review = render_review(&self.history(&previous, agent_label))?;
            let judge = self
                .complete_turn(
                    instance,
                    Persona::none(),
                    TurnPosition::new(0, spec.debate_rounds, 0, Stage::Aggregation),
                    vec![Message::system(self.standard_system.clone()), Message::user(review)],
                    spec.decoding,
                )
                .await?;
            let answer = judge.extracted;
            turns.push(judge);
            answer
        } else {
            let last: Vec<Prediction> = previous.iter().map(|t| t.extracted).collect();
            self.vote(&last, instance)
        };
        Ok((turns, answer))
    }

    /// One MPT pass on sample stream `sample`: persona answers, review
    /// rounds, then a persona-free aggregation call.
    async fn mpt_turns(
        &self,
        instance: &BiasInstance,
        spec: &MethodSpec,
        sample: u32,
    ) -> Result<(Vec<TurnRecord>, Prediction), MethodError> {
        let personas = build_personas(instance, spec.include_neutral)?;
        let question = render_question(instance);
        let mut threads = personas
            .into_iter()
            .zip(0u32..)
            .map(|(persona, slot)| {
                Ok(Thread {
                    messages: vec![
                        Message::system(render_system(&persona)?),
                        Message::user(question.clone()),
                    ],
                    persona,
                    slot,
                })
            })
            .collect::<Result<Vec<_>, PromptError>>()?;

        let label_personas = self.options.label_persona_reviews;
        let persona_label = |t: &TurnRecord| label_personas.then(|| t.persona.descriptor.clone());

        let mut turns = self
            .complete_round(instance, &mut threads, 0, sample, Stage::Answer, spec.decoding)
            .await?;
        let mut previous = turns.clone();
        for round in 1..=spec.rounds {
            let review = render_review(&self.history(&previous, persona_label))?;
            for thread in &mut threads {
                thread.messages.push(Message::user(review.clone()));
            }
            previous = self
                .complete_round(instance, &mut threads, round, sample, Stage::Review, spec.decoding)
                .await?;
            turns.extend(previous.iter().cloned());
        }

        let mut review = render_review(&self.history(&previous, persona_label))?;
        if self.options.aggregation_includes_question {
            review = format!("{question}\n\n{review}");
        }
        let aggregation = self
            .complete_turn(
                instance,
                Persona::none(),
                TurnPosition::new(0, spec.rounds + 1, sample, Stage::Aggregation),
                vec![Message::system(self.standard_system.clone()), Message::user(review)],
                spec.decoding,
            )
            .await?;
        let answer = aggregation.extracted;
        turns.push(aggregation);
        Ok((turns, answer))
    }
}
