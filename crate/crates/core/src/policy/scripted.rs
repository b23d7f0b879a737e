//! Deterministic policies: a solo planning agent, an eliciting collaborative
//! agent, a constraint-holding user, and a rule-based progress rater.
//!
//! These are the verifiable reference behaviors, not test stubs: given the
//! same task, catalog, and chat they reproduce the same decision sequence
//! byte for byte.

use crate::env::{
    goals_for, plan_greedy, rebuild_patches, CatalogKind, Constraint, EnvAction, PlanGoals,
    SearchQuery,
};
use crate::eval::constraint_checks;
use crate::trace::ActorId;

use super::{
    AgentContext, AgentDecision, AgentOutput, AgentPolicy, ChatEntry, PolicyError, Rater,
    RaterContext, RatingOutput, RoundKind, UserContext, UserDecision, UserOutput, UserPolicy,
};

/// Solo agent: one greedy itinerary from the public task fields, then
/// finish. Never sends a message, never asks about hidden constraints.
#[derive(Debug, Default)]
pub struct ScriptedAutoAgent {
    has_planned: bool,
}

impl ScriptedAutoAgent {
    pub fn new() -> Self {
        Self::default()
    }
}

impl AgentPolicy for ScriptedAutoAgent {
    fn decide(&mut self, ctx: &AgentContext) -> Result<AgentOutput, PolicyError> {
        if !self.has_planned {
            self.has_planned = true;
            let goals = PlanGoals::default();
            match plan_greedy(ctx.catalog, ctx.task.origin, ctx.task.day_count, &goals) {
                Ok(target) if &target != ctx.plan => {
                    return Ok(AgentOutput::scripted(
                        "Build the cheapest feasible itinerary from the task description alone.",
                        AgentDecision::TakeTaskAction(EnvAction::EditPlan(rebuild_patches(
                            &target,
                        ))),
                    ));
                }
                _ => {}
            }
        }
        Ok(AgentOutput::scripted(
            "The itinerary is drafted; nothing else is inferable without asking.",
            AgentDecision::Finish,
        ))
    }
}

/// The four elicitation slots, in the fixed order they are asked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    PartySize,
    Cities,
    Cuisine,
    Budget,
}

const SLOTS: [Slot; 4] = [Slot::PartySize, Slot::Cities, Slot::Cuisine, Slot::Budget];

impl Slot {
    fn question(self) -> &'static str {
        match self {
            Slot::PartySize => "How many people are traveling?",
            Slot::Cities => "How many cities should we visit, and in which region?",
            Slot::Cuisine => "Do you have any cuisine preferences?",
            Slot::Budget => "What is the total budget for the trip?",
        }
    }

    fn topic(self) -> &'static str {
        match self {
            Slot::PartySize => "party size",
            Slot::Cities => "destination cities",
            Slot::Cuisine => "cuisine preferences",
            Slot::Budget => "the budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum SlotState {
    Unasked,
    /// Question sent; the chat index lets us find the reply.
    Pending { asked_index: usize },
    /// Answered. None means the user had no such constraint.
    Known(Option<Constraint>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollabMode {
    OneStage,
    TwoStage,
}

/// Eliciting agent: keeps the plan consistent with everything learned so
/// far, asks about one unknown slot at a time, waits for answers, and
/// finishes once every disclosed constraint is satisfied.
///
/// Two-stage mode adds the cognitive-load gate: after two consecutive
/// rounds in which it sent a message, it spends a round on catalog work
/// instead of asking again.
pub struct ScriptedCollabAgent {
    mode: CollabMode,
    slots: [SlotState; 4],
    /// Rounds in which this agent sent a message, for the two-stage gate.
    message_rounds: Vec<usize>,
    /// Round already filled with gate work, so the second decision in that
    /// round yields instead of searching forever.
    gate_search_round: Option<usize>,
}

impl ScriptedCollabAgent {
    pub fn new(mode: CollabMode) -> Self {
        Self {
            mode,
            slots: [
                SlotState::Unasked,
                SlotState::Unasked,
                SlotState::Unasked,
                SlotState::Unasked,
            ],
            message_rounds: Vec::new(),
            gate_search_round: None,
        }
    }

    /// The scratchpad of learned constraints, in slot order.
    fn known_constraints(&self) -> Vec<Constraint> {
        self.slots
            .iter()
            .filter_map(|s| match s {
                SlotState::Known(Some(c)) => Some(c.clone()),
                _ => None,
            })
            .collect()
    }

    /// Marks answered slots as known by reading the first human message
    /// after each pending question.
    fn absorb_answers(&mut self, ctx: &AgentContext) {
        for (i, slot) in SLOTS.iter().enumerate() {
            if let SlotState::Pending { asked_index } = self.slots[i] {
                let reply = ctx
                    .chat
                    .iter()
                    .find(|m| m.actor == ActorId::Human && m.index > asked_index);
                if let Some(reply) = reply {
                    self.slots[i] = SlotState::Known(parse_answer(*slot, &reply.content, ctx));
                }
            }
        }
    }

    fn gate_blocks_messaging(&self, round: usize) -> bool {
        self.mode == CollabMode::TwoStage
            && round >= 3
            && self.message_rounds.contains(&(round - 1))
            && self.message_rounds.contains(&(round - 2))
    }
}

impl AgentPolicy for ScriptedCollabAgent {
    fn decide(&mut self, ctx: &AgentContext) -> Result<AgentOutput, PolicyError> {
        self.absorb_answers(ctx);

        if self.slots.iter().any(|s| matches!(s, SlotState::Pending { .. })) {
            return Ok(AgentOutput::scripted(
                "My question is still unanswered; wait instead of spamming the chat.",
                AgentDecision::DoNothing,
            ));
        }

        let known = self.known_constraints();
        let goals = goals_for(&known);
        let target = plan_greedy(ctx.catalog, ctx.task.origin, ctx.task.day_count, &goals).ok();
        if let Some(target) = &target {
            if target != ctx.plan {
                return Ok(AgentOutput::scripted(
                    "Bring the plan in line with everything the user has told me.",
                    AgentDecision::TakeTaskAction(EnvAction::EditPlan(rebuild_patches(target))),
                ));
            }
        }

        if let Some(next) = (0..SLOTS.len()).find(|&i| self.slots[i] == SlotState::Unasked) {
            if self.gate_blocks_messaging(ctx.round) {
                if self.gate_search_round != Some(ctx.round) {
                    self.gate_search_round = Some(ctx.round);
                    let query = SearchQuery {
                        kind: CatalogKind::Restaurants,
                        city: ctx.plan.days.first().and_then(|d| d.city.clone()),
                        region: None,
                        cuisine: None,
                    };
                    return Ok(AgentOutput::scripted(
                        "Two questions in a row already; do some catalog work this round.",
                        AgentDecision::TakeTaskAction(EnvAction::SearchCatalog(query)),
                    ));
                }
                return Ok(AgentOutput::scripted(
                    "Give the user a quiet round before the next question.",
                    AgentDecision::DoNothing,
                ));
            }
            let slot = SLOTS[next];
            // The reply will be the first human message after this one.
            self.slots[next] = SlotState::Pending { asked_index: ctx.chat.len() };
            self.message_rounds.push(ctx.round);
            return Ok(AgentOutput::scripted(
                format!("I still need {}.", slot.topic()),
                AgentDecision::SendMessage(slot.question().to_owned()),
            ));
        }

        let all_pass = constraint_checks(ctx.plan, &known, ctx.catalog)
            .iter()
            .all(|c| c.passed);
        if all_pass {
            Ok(AgentOutput::scripted(
                "Every disclosed requirement is satisfied by the current plan.",
                AgentDecision::Finish,
            ))
        } else {
            Ok(AgentOutput::scripted(
                "A disclosed requirement is unmet and no better plan is available.",
                AgentDecision::DoNothing,
            ))
        }
    }
}

/// Parses a scripted-user answer for one slot. Unparseable or negative
/// answers become Known(None): the slot is resolved with no constraint.
fn parse_answer(slot: Slot, text: &str, ctx: &AgentContext) -> Option<Constraint> {
    if text.contains("don't have") {
        return None;
    }
    match slot {
        Slot::PartySize => first_uint(text).map(|people| Constraint::PartySize {
            people: people as u32,
        }),
        Slot::Cities => {
            let count = first_uint(text)? as u32;
            let region = text.split(" cities in ").nth(1)?.trim().trim_end_matches('.');
            Some(Constraint::CityCount { count, region: region.to_owned() })
        }
        Slot::Cuisine => {
            let mut cuisines: Vec<String> = ctx
                .catalog
                .cuisines()
                .into_iter()
                .filter(|c| text.contains(c))
                .map(str::to_owned)
                .collect();
            cuisines.sort();
            if cuisines.is_empty() {
                None
            } else {
                Some(Constraint::CuisinePreference { cuisines })
            }
        }
        Slot::Budget => {
            let plain: String = text.chars().filter(|c| *c != ',').collect();
            first_uint(&plain).map(|amount| Constraint::BudgetCap { amount })
        }
    }
}

fn first_uint(text: &str) -> Option<u64> {
    let start = text.find(|c: char| c.is_ascii_digit())?;
    let digits: String = text[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

/// Simulated task owner: answers the pending question by disclosing exactly
/// one matching constraint, complains once per plan state about a violated
/// disclosed constraint, finishes when everything is out and satisfied.
pub struct ScriptedUser {
    /// Indices into hidden_constraints already disclosed.
    disclosed: Vec<usize>,
    /// (constraint index, plan fingerprint) pairs already complained about.
    complained: Vec<(usize, String)>,
}

impl Default for ScriptedUser {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedUser {
    pub fn new() -> Self {
        Self { disclosed: Vec::new(), complained: Vec::new() }
    }

    fn pending_question<'c>(&self, chat: &'c [ChatEntry]) -> Option<&'c ChatEntry> {
        let last_agent = chat.iter().rev().find(|m| m.actor == ActorId::Agent)?;
        let answered = chat
            .iter()
            .any(|m| m.actor == ActorId::Human && m.index > last_agent.index);
        (!answered).then_some(last_agent)
    }
}

/// Constraint kind the question is about, by keyword.
fn question_slot(text: &str) -> Option<Slot> {
    let lower = text.to_lowercase();
    if lower.contains("people") || lower.contains("travelers") || lower.contains("party") {
        Some(Slot::PartySize)
    } else if lower.contains("cities") || lower.contains("city") || lower.contains("region") {
        Some(Slot::Cities)
    } else if lower.contains("cuisine") || lower.contains("food") || lower.contains("eat") {
        Some(Slot::Cuisine)
    } else if lower.contains("budget") || lower.contains("cost") || lower.contains("spend") {
        Some(Slot::Budget)
    } else {
        None
    }
}

fn constraint_slot(constraint: &Constraint) -> Slot {
    match constraint {
        Constraint::PartySize { .. } => Slot::PartySize,
        Constraint::CityCount { .. } => Slot::Cities,
        Constraint::CuisinePreference { .. } => Slot::Cuisine,
        Constraint::BudgetCap { .. } => Slot::Budget,
    }
}

impl UserPolicy for ScriptedUser {
    fn decide(&mut self, ctx: &UserContext) -> Result<UserOutput, PolicyError> {
        let constraints = &ctx.task.hidden_constraints;

        if let Some(question) = self.pending_question(ctx.chat) {
            let slot = question_slot(&question.content);
            let undisclosed = slot.and_then(|slot| {
                (0..constraints.len()).find(|i| {
                    !self.disclosed.contains(i) && constraint_slot(&constraints[*i]) == slot
                })
            });
            return Ok(match undisclosed {
                Some(i) => {
                    self.disclosed.push(i);
                    UserOutput::scripted(
                        "Reveal exactly the one detail that was asked about.",
                        UserDecision::AnswerQuestion(constraints[i].describe()),
                    )
                }
                None => UserOutput::scripted(
                    "Nothing in my notes matches that question.",
                    UserDecision::AnswerQuestion("I don't have that.".to_owned()),
                ),
            });
        }

        // Serialized form, not the rendered text: the render collapses all
        // empty itineraries into one string and would eat repeat feedback.
        let fingerprint = serde_json::to_string(ctx.plan).expect("plan serializes");
        let checks = constraint_checks(ctx.plan, constraints, ctx.catalog);
        let violated_disclosed = self.disclosed.iter().copied().find(|&i| {
            !checks[i].passed && !self.complained.contains(&(i, fingerprint.clone()))
        });
        if let Some(i) = violated_disclosed {
            self.complained.push((i, fingerprint));
            return Ok(UserOutput::scripted(
                "Point out the requirement the current plan misses.",
                UserDecision::OfferFeedback(format!(
                    "The current plan does not satisfy: {}.",
                    constraints[i].describe()
                )),
            ));
        }

        if self.disclosed.len() == constraints.len() && checks.iter().all(|c| c.passed) {
            return Ok(UserOutput::scripted(
                "Everything I care about is in the plan.",
                UserDecision::FinishTask,
            ));
        }

        Ok(UserOutput::scripted(
            "Nothing to add right now.",
            UserDecision::DoNothing,
        ))
    }
}

/// Rule-based progress rating on the 5-point scale, from the performance
/// delta and what the agent visibly did during the round.
#[derive(Debug, Default, Clone, Copy)]
pub struct ScriptedRater;

impl ScriptedRater {
    pub fn new() -> Self {
        Self
    }
}

impl Rater for ScriptedRater {
    fn rate(&mut self, ctx: &RaterContext) -> Result<RatingOutput, PolicyError> {
        let rating = if ctx.delta >= 0.15 {
            5
        } else if ctx.delta > 0.0 {
            4
        } else if ctx.delta < 0.0 {
            1
        } else {
            match ctx.round_kind {
                RoundKind::FreshQuestion | RoundKind::Work => 3,
                RoundKind::RepeatedQuestion | RoundKind::NoOp => 2,
            }
        };
        Ok(RatingOutput { rating, usage: None })
    }
}
