//! Task instances: a public description plus hidden typed constraints that
//! only the user policy can see, and a seeded generator that guarantees
//! every drawn constraint set is satisfiable on the catalog.

use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::catalog::Catalog;
use super::planner::{plan_greedy, PlanGoals};

/// Constraint bundled into example task assets and generated tasks.
pub const EXAMPLE_TASKS_JSON: &str = include_str!("../../assets/example_tasks.json");

/// Seed of the shipped benchmark set: 20 generated tasks on the builtin
/// catalog, each with at least two hidden constraints. Pinned so every
/// consumer scores the same tasks.
pub const BENCHMARK_TASK_SEED: u64 = 42;

/// Task count of the shipped benchmark set.
pub const BENCHMARK_TASK_COUNT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    PartySize { people: u32 },
    CityCount { count: u32, region: String },
    CuisinePreference { cuisines: Vec<String> },
    BudgetCap { amount: u64 },
}

impl Constraint {
    /// The phrase the user policy holds as its hidden additional information.
    pub fn describe(&self) -> String {
        match self {
            Constraint::PartySize { people } => format!("Travel for {people} people"),
            Constraint::CityCount { count, region } => {
                format!("Visit {count} cities in {region}")
            }
            Constraint::CuisinePreference { cuisines } => {
                format!("Preference for {} cuisine", join_natural(cuisines))
            }
            Constraint::BudgetCap { amount } => {
                format!("Budget of {}", format_currency(*amount))
            }
        }
    }

    fn check(&self) -> Result<(), String> {
        match self {
            Constraint::PartySize { people } if *people == 0 => {
                Err("party size constraint requires at least 1 person".to_owned())
            }
            Constraint::CityCount { count, .. } if *count == 0 => {
                Err("city count constraint requires at least 1 city".to_owned())
            }
            Constraint::CuisinePreference { cuisines } if cuisines.is_empty() => {
                Err("cuisine preference constraint requires at least one cuisine".to_owned())
            }
            Constraint::BudgetCap { amount } if *amount == 0 => {
                Err("budget cap must be positive".to_owned())
            }
            _ => Ok(()),
        }
    }
}

/// "X", "X and Y", or "X, Y and Z".
fn join_natural(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [head @ .., last] => format!("{} and {last}", head.join(", ")),
    }
}

/// Integer currency with thousands separators: 6300 -> "$6,300".
pub fn format_currency(amount: u64) -> String {
    let digits = amount.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3 + 1);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    format!("${out}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: String,
    pub task_description: String,
    pub origin: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub hidden_constraints: Vec<Constraint>,
}

impl TaskInstance {
    /// Inclusive span: a trip from the 18th to the 22nd is 5 days.
    pub fn day_count(&self) -> u32 {
        (self.end_date - self.start_date).num_days() as u32 + 1
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<(), TaskError> {
        if self.end_date < self.start_date {
            return Err(TaskError::Invalid {
                task_id: self.task_id.clone(),
                reason: "end_date precedes start_date".to_owned(),
            });
        }
        if catalog.city(&self.origin).is_none() {
            return Err(TaskError::Invalid {
                task_id: self.task_id.clone(),
                reason: format!("origin {:?} not in catalog", self.origin),
            });
        }
        for constraint in &self.hidden_constraints {
            constraint.check().map_err(|reason| TaskError::Invalid {
                task_id: self.task_id.clone(),
                reason,
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("could not read task file: {0}")]
    Io(#[from] std::io::Error),
    #[error("task file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("task {task_id}: {reason}")]
    Invalid { task_id: String, reason: String },
    #[error("could not generate a satisfiable task after {attempts} attempts (task index {index})")]
    RetryBudgetExhausted { index: usize, attempts: u32 },
}

/// Load and validate a task list from a JSON array.
pub fn load_tasks(json: &str, catalog: &Catalog) -> Result<Vec<TaskInstance>, TaskError> {
    let tasks: Vec<TaskInstance> = serde_json::from_str(json)?;
    for task in &tasks {
        task.validate(catalog)?;
    }
    Ok(tasks)
}

pub fn load_tasks_from_path(path: &Path, catalog: &Catalog) -> Result<Vec<TaskInstance>, TaskError> {
    load_tasks(&std::fs::read_to_string(path)?, catalog)
}

pub fn save_tasks(tasks: &[TaskInstance], path: &Path) -> Result<(), TaskError> {
    let mut json = serde_json::to_string_pretty(tasks)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

const GENERATION_ATTEMPTS: u32 = 64;

/// Draw `count` tasks, each with 2..=4 hidden constraints, deterministically
/// in `seed`. Satisfiability is witnessed by constructing a passing plan with
/// the greedy planner and scoring it; unsatisfiable draws are resampled.
pub fn generate_task_set(
    seed: u64,
    count: usize,
    catalog: &Catalog,
) -> Result<Vec<TaskInstance>, TaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(count);
    for index in 0..count {
        let mut accepted = None;
        for _ in 0..GENERATION_ATTEMPTS {
            if let Some(task) = draw_task(&mut rng, seed, index, catalog) {
                accepted = Some(task);
                break;
            }
        }
        match accepted {
            Some(task) => tasks.push(task),
            None => {
                return Err(TaskError::RetryBudgetExhausted {
                    index,
                    attempts: GENERATION_ATTEMPTS,
                })
            }
        }
    }
    Ok(tasks)
}

fn draw_task(
    rng: &mut ChaCha8Rng,
    seed: u64,
    index: usize,
    catalog: &Catalog,
) -> Option<TaskInstance> {
    let origin = &catalog.cities[rng.random_range(0..catalog.cities.len())].name;
    let day_count: u32 = rng.random_range(3..=7);
    let start = NaiveDate::from_ymd_opt(2022, 3, 1).unwrap()
        + chrono::Days::new(rng.random_range(0..=180));
    let end = start + chrono::Days::new(u64::from(day_count) - 1);

    // Pick 2..=4 distinct constraint kinds, realized in a canonical order.
    let mut kinds = [0usize, 1, 2, 3];
    kinds.shuffle(rng);
    let mut chosen: Vec<usize> = kinds[..rng.random_range(2..=4usize)].to_vec();
    chosen.sort_unstable();

    let mut constraints = Vec::new();
    for kind in chosen {
        match kind {
            0 => constraints.push(Constraint::PartySize { people: rng.random_range(1..=4) }),
            1 => {
                let regions: Vec<&str> = catalog
                    .regions()
                    .into_iter()
                    .filter(|region| {
                        catalog.cities_in_region(region).any(|c| &c.name != origin)
                    })
                    .collect();
                let region = regions[rng.random_range(0..regions.len())];
                let available =
                    catalog.cities_in_region(region).filter(|c| &c.name != origin).count() as u32;
                let max = available.min(3).min(day_count);
                constraints.push(Constraint::CityCount {
                    count: rng.random_range(1..=max),
                    region: region.to_owned(),
                });
            }
            2 => {
                let mut cuisines: Vec<String> =
                    catalog.cuisines().into_iter().map(str::to_owned).collect();
                cuisines.shuffle(rng);
                let mut picked: Vec<String> =
                    cuisines.into_iter().take(rng.random_range(1..=2usize)).collect();
                picked.sort();
                constraints.push(Constraint::CuisinePreference { cuisines: picked });
            }
            _ => constraints.push(Constraint::BudgetCap { amount: 0 }), // amount filled below
        }
    }

    // Witness the constraint set with a concrete plan; the budget cap is
    // derived from the witness cost so it is always satisfiable.
    let mut goals = goals_for(&constraints);
    goals.budget = None;
    let witness = plan_greedy(catalog, origin, day_count, &goals).ok()?;
    let cap = (witness.total_cost / 100 + 1) * 100;
    for constraint in &mut constraints {
        if let Constraint::BudgetCap { amount } = constraint {
            *amount = cap;
        }
    }

    let task = TaskInstance {
        task_id: format!("task-{seed:08x}-{index:03}"),
        task_description: describe_task(origin, day_count, start, &constraints),
        origin: origin.clone(),
        start_date: start,
        end_date: end,
        hidden_constraints: constraints,
    };
    task.validate(catalog).ok()?;

    // The witness must actually pass the full rule set end to end.
    let full = plan_greedy(catalog, origin, day_count, &goals_for(&task.hidden_constraints)).ok()?;
    let breakdown = crate::eval::evaluate(&full, &task, catalog);
    (breakdown.commonsense_rate == 1.0 && breakdown.constraint_rate == 1.0).then_some(task)
}

/// Planner goals equivalent to a constraint list (used for witnesses and by
/// the scripted agents once constraints are disclosed).
pub fn goals_for(constraints: &[Constraint]) -> PlanGoals {
    let mut goals = PlanGoals::default();
    for constraint in constraints {
        match constraint {
            Constraint::PartySize { people } => goals.party_size = Some(*people),
            Constraint::CityCount { count, region } => {
                goals.city_count = Some((*count, region.clone()))
            }
            Constraint::CuisinePreference { cuisines } => goals.cuisines = cuisines.clone(),
            Constraint::BudgetCap { amount } => goals.budget = Some(*amount),
        }
    }
    goals
}

/// Public description: origin, span, start date, and destination region when
/// one is constrained. Other constraints stay hidden with the user.
fn describe_task(
    origin: &str,
    day_count: u32,
    start: NaiveDate,
    constraints: &[Constraint],
) -> String {
    let region = constraints.iter().find_map(|c| match c {
        Constraint::CityCount { region, .. } => Some(region.as_str()),
        _ => None,
    });
    match region {
        Some(region) => format!(
            "Help me plan a {day_count}-day trip from {origin} to {region} starting on {start}."
        ),
        None => format!("Help me plan a {day_count}-day trip from {origin} starting on {start}."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> &'static Catalog {
        Catalog::builtin()
    }

    #[test]
    fn bundled_example_tasks_parse_and_validate() {
        let tasks = load_tasks(EXAMPLE_TASKS_JSON, catalog()).unwrap();
        assert_eq!(tasks.len(), 1);
        let task = &tasks[0];
        assert_eq!(task.origin, "Denver");
        assert_eq!(task.day_count(), 5);
        assert_eq!(task.hidden_constraints.len(), 4);
        assert_eq!(
            task.hidden_constraints[3],
            Constraint::BudgetCap { amount: 6300 }
        );
    }

    #[test]
    fn constraint_phrases_match_the_additional_info_style() {
        assert_eq!(
            Constraint::PartySize { people: 2 }.describe(),
            "Travel for 2 people"
        );
        assert_eq!(
            Constraint::CityCount { count: 2, region: "New York".to_owned() }.describe(),
            "Visit 2 cities in New York"
        );
        assert_eq!(
            Constraint::CuisinePreference {
                cuisines: vec!["Mexican".to_owned(), "Indian".to_owned()]
            }
            .describe(),
            "Preference for Mexican and Indian cuisine"
        );
        assert_eq!(
            Constraint::BudgetCap { amount: 6300 }.describe(),
            "Budget of $6,300"
        );
    }

    #[test]
    fn currency_grouping_handles_boundaries() {
        assert_eq!(format_currency(0), "$0");
        assert_eq!(format_currency(999), "$999");
        assert_eq!(format_currency(1000), "$1,000");
        assert_eq!(format_currency(1234567), "$1,234,567");
    }

    #[test]
    fn generation_is_deterministic_in_seed() {
        let a = generate_task_set(7, 5, catalog()).unwrap();
        let b = generate_task_set(7, 5, catalog()).unwrap();
        assert_eq!(a, b);
        let c = generate_task_set(8, 5, catalog()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_tasks_carry_two_to_four_constraints_and_validate() {
        let tasks = generate_task_set(42, 20, catalog()).unwrap();
        assert_eq!(tasks.len(), 20);
        for task in &tasks {
            let n = task.hidden_constraints.len();
            assert!((2..=4).contains(&n), "{} has {n} constraints", task.task_id);
            task.validate(catalog()).unwrap();
            assert!((3..=7).contains(&task.day_count()));
        }
        // Ids are unique.
        let mut ids: Vec<_> = tasks.iter().map(|t| t.task_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
    }

    #[test]
    fn every_generated_task_has_a_passing_witness() {
        for task in generate_task_set(11, 10, catalog()).unwrap() {
            let goals = goals_for(&task.hidden_constraints);
            let witness = plan_greedy(catalog(), &task.origin, task.day_count(), &goals).unwrap();
            let breakdown = crate::eval::evaluate(&witness, &task, catalog());
            assert_eq!(breakdown.constraint_rate, 1.0, "{}", task.task_id);
            assert_eq!(breakdown.commonsense_rate, 1.0, "{}", task.task_id);
        }
    }

    #[test]
    fn task_json_round_trips() {
        let tasks = generate_task_set(3, 3, catalog()).unwrap();
        let json = serde_json::to_string(&tasks).unwrap();
        let back = load_tasks(&json, catalog()).unwrap();
        assert_eq!(back, tasks);
    }
}
