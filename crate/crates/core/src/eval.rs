//! Deterministic plan scoring: a fixed seven-item commonsense rule list and
//! per-constraint checks, averaged into the per-round performance score.
//!
//! Vacuity rules keep every rate defined on arbitrary plans: checks that
//! quantify over plan items (entity existence, attraction repetition) pass
//! on an empty plan, presence checks (day count, lodging, transport, meals)
//! fail, and an empty constraint list scores 1.0.

use serde::Serialize;

use crate::env::{compute_total_cost, Catalog, Constraint, PlanDocument, TaskInstance};

pub const COMMONSENSE_CHECKS: [&str; 7] = [
    "day_count_matches_span",
    "entities_exist",
    "lodging_every_night",
    "no_repeated_attraction",
    "transport_connects",
    "cost_consistent",
    "daily_meal",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintResult {
    pub constraint: Constraint,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationBreakdown {
    pub commonsense: Vec<CheckResult>,
    pub constraints: Vec<ConstraintResult>,
    pub commonsense_rate: f64,
    pub constraint_rate: f64,
    pub performance: f64,
}

pub fn evaluate(plan: &PlanDocument, task: &TaskInstance, catalog: &Catalog) -> EvaluationBreakdown {
    let commonsense = commonsense_checks(plan, task, catalog);
    let constraints = constraint_checks(plan, &task.hidden_constraints, catalog);
    let commonsense_rate =
        commonsense.iter().filter(|c| c.passed).count() as f64 / commonsense.len() as f64;
    let constraint_rate = if constraints.is_empty() {
        1.0
    } else {
        constraints.iter().filter(|c| c.passed).count() as f64 / constraints.len() as f64
    };
    EvaluationBreakdown {
        commonsense,
        constraints,
        commonsense_rate,
        constraint_rate,
        performance: (commonsense_rate + constraint_rate) / 2.0,
    }
}

/// Arithmetic average of the two pass rates.
pub fn performance(plan: &PlanDocument, task: &TaskInstance, catalog: &Catalog) -> f64 {
    evaluate(plan, task, catalog).performance
}

pub fn commonsense_checks(
    plan: &PlanDocument,
    task: &TaskInstance,
    catalog: &Catalog,
) -> Vec<CheckResult> {
    let results = [
        plan.days.len() as u32 == task.day_count(),
        entities_exist(plan, catalog),
        !plan.days.is_empty() && plan.days.iter().all(|d| d.lodging.is_some()),
        no_repeated_attraction(plan),
        transport_connects(plan, task),
        plan.total_cost == compute_total_cost(plan, catalog),
        !plan.days.is_empty() && plan.days.iter().all(|d| !d.meals.is_empty()),
    ];
    COMMONSENSE_CHECKS
        .iter()
        .zip(results)
        .map(|(name, passed)| CheckResult { name, passed })
        .collect()
}

fn entities_exist(plan: &PlanDocument, catalog: &Catalog) -> bool {
    plan.days.iter().all(|day| {
        day.city.as_deref().is_none_or(|c| catalog.city(c).is_some())
            && day.attractions.iter().all(|a| catalog.attraction(a).is_some())
            && day.meals.iter().all(|m| catalog.restaurant(m).is_some())
            && day.lodging.as_deref().is_none_or(|l| catalog.lodging(l).is_some())
    }) && plan.transport.iter().all(|t| catalog.leg(&t.origin, &t.destination, &t.mode).is_some())
}

fn no_repeated_attraction(plan: &PlanDocument) -> bool {
    let mut seen = std::collections::BTreeSet::new();
    plan.days.iter().flat_map(|d| d.attractions.iter()).all(|name| seen.insert(name))
}

/// Exact cover: the plan must book the departure from the task origin on
/// day 1 plus one leg per consecutive distinct-city transition, each on the
/// right day, and nothing else. Days without an assigned city fail.
fn transport_connects(plan: &PlanDocument, task: &TaskInstance) -> bool {
    if plan.days.is_empty() || plan.days.iter().any(|d| d.city.is_none()) {
        return false;
    }
    let cities: Vec<&str> = plan.days.iter().map(|d| d.city.as_deref().unwrap()).collect();
    let mut required = vec![(1u32, task.origin.as_str(), cities[0])];
    for (i, pair) in cities.windows(2).enumerate() {
        if pair[0] != pair[1] {
            required.push((i as u32 + 2, pair[0], pair[1]));
        }
    }
    let mut booked: Vec<(u32, &str, &str)> =
        plan.transport.iter().map(|t| (t.day, t.origin.as_str(), t.destination.as_str())).collect();
    required.sort_unstable();
    booked.sort_unstable();
    required == booked
}

pub fn constraint_checks(
    plan: &PlanDocument,
    constraints: &[Constraint],
    catalog: &Catalog,
) -> Vec<ConstraintResult> {
    constraints
        .iter()
        .map(|constraint| ConstraintResult {
            constraint: constraint.clone(),
            passed: constraint_passes(plan, constraint, catalog),
        })
        .collect()
}

fn constraint_passes(plan: &PlanDocument, constraint: &Constraint, catalog: &Catalog) -> bool {
    match constraint {
        Constraint::PartySize { people } => plan.party_size == *people,
        Constraint::CityCount { count, region } => {
            let distinct = plan
                .visited_cities()
                .into_iter()
                .filter(|name| catalog.city(name).is_some_and(|c| &c.region == region))
                .count();
            distinct as u32 == *count
        }
        Constraint::CuisinePreference { cuisines } => {
            let meals: Vec<&str> = plan.days.iter().flat_map(|d| d.meals.iter()).map(String::as_str).collect();
            let cuisine_of = |meal: &str| catalog.restaurant(meal).map(|r| r.cuisine.as_str());
            let every_covered = cuisines
                .iter()
                .all(|want| meals.iter().any(|m| cuisine_of(m) == Some(want.as_str())));
            let matched = meals
                .iter()
                .filter(|m| cuisine_of(m).is_some_and(|c| cuisines.iter().any(|w| w == c)))
                .count();
            (!meals.is_empty() && every_covered) || (!meals.is_empty() && matched * 2 >= meals.len())
        }
        Constraint::BudgetCap { amount } => compute_total_cost(plan, catalog) <= *amount,
    }
}
