//! The deterministic travel-planning world: an immutable catalog, task
//! instances with hidden constraints, and the shared plan document that
//! environment actions edit. Only plan edits flip the output-updated flag.

pub mod catalog;
pub mod plan;
pub mod planner;
pub mod task;

pub use catalog::{Catalog, CatalogError};
pub use plan::{
    apply_patches, compute_total_cost, render_plan, DayPlan, PlanDocument, PlanPatch,
    PlanTransport,
};
pub use planner::{plan_greedy, rebuild_patches, PlanGoals};
pub use task::{
    format_currency, generate_task_set, goals_for, load_tasks, load_tasks_from_path, save_tasks,
    Constraint, TaskError, TaskInstance, BENCHMARK_TASK_COUNT, BENCHMARK_TASK_SEED,
    EXAMPLE_TASKS_JSON,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("invalid plan patch: {reason}")]
    InvalidPatch { reason: String },
    #[error("no itinerary satisfies the request: {reason}")]
    Unplannable { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogKind {
    Cities,
    Attractions,
    Restaurants,
    Lodgings,
    Transport,
}

/// Catalog lookup filters. Unset filters match everything; an unknown city
/// simply matches nothing rather than erroring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub kind: CatalogKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cuisine: Option<String>,
}

/// What either party can do to the task environment.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvAction {
    EditPlan(Vec<PlanPatch>),
    SearchCatalog(SearchQuery),
    Finish,
}

/// Result of applying one action: the (possibly unchanged) plan, the text
/// observation the acting party sees, and whether the shared output changed.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionOutcome {
    pub plan: PlanDocument,
    pub observation: String,
    pub output_updated: bool,
}

pub fn apply_action(
    plan: &PlanDocument,
    action: &EnvAction,
    catalog: &Catalog,
) -> Result<ActionOutcome, EnvError> {
    match action {
        EnvAction::EditPlan(patches) => {
            let next = apply_patches(plan, patches, catalog)?;
            let observation = render_plan(&next);
            Ok(ActionOutcome { plan: next, observation, output_updated: true })
        }
        EnvAction::SearchCatalog(query) => Ok(ActionOutcome {
            plan: plan.clone(),
            observation: render_search(&search(catalog, query)),
            output_updated: false,
        }),
        EnvAction::Finish => Ok(ActionOutcome {
            plan: plan.clone(),
            observation: "TASK FINISHED".to_owned(),
            output_updated: false,
        }),
    }
}

/// Matching catalog rows in catalog order, one rendered line each.
pub fn search(catalog: &Catalog, query: &SearchQuery) -> Vec<String> {
    let city = query.city.as_deref();
    let region = query.region.as_deref();
    let cuisine = query.cuisine.as_deref();
    match query.kind {
        CatalogKind::Cities => catalog
            .cities
            .iter()
            .filter(|c| region.is_none_or(|r| c.region == r))
            .filter(|c| city.is_none_or(|n| c.name == n))
            .map(|c| format!("CITY {} region={}", c.name, c.region))
            .collect(),
        CatalogKind::Attractions => catalog
            .attractions
            .iter()
            .filter(|a| city.is_none_or(|c| a.city == c))
            .map(|a| format!("ATTRACTION {} city={} entry_cost={}", a.name, a.city, a.entry_cost))
            .collect(),
        CatalogKind::Restaurants => catalog
            .restaurants
            .iter()
            .filter(|r| city.is_none_or(|c| r.city == c))
            .filter(|r| cuisine.is_none_or(|c| r.cuisine == c))
            .map(|r| {
                format!(
                    "RESTAURANT {} city={} cuisine={} meal_cost={}",
                    r.name, r.city, r.cuisine, r.meal_cost
                )
            })
            .collect(),
        CatalogKind::Lodgings => catalog
            .lodgings
            .iter()
            .filter(|l| city.is_none_or(|c| l.city == c))
            .map(|l| {
                format!(
                    "LODGING {} city={} nightly_rate={} max_occupancy={}",
                    l.name, l.city, l.nightly_rate, l.max_occupancy
                )
            })
            .collect(),
        CatalogKind::Transport => catalog
            .transport
            .iter()
            .filter(|t| city.is_none_or(|c| t.origin == c))
            .filter(|t| {
                region.is_none_or(|r| {
                    catalog.city(&t.destination).is_some_and(|dest| dest.region == r)
                })
            })
            .map(|t| {
                format!(
                    "TRANSPORT {} -> {} mode={} cost_per_person={}",
                    t.origin, t.destination, t.mode, t.cost_per_person
                )
            })
            .collect(),
    }
}

fn render_search(rows: &[String]) -> String {
    if rows.is_empty() {
        "SEARCH RESULTS: (no matches)".to_owned()
    } else {
        format!("SEARCH RESULTS:\n{}", rows.join("\n"))
    }
}

/// The observation either party reads before deciding: the rendered plan,
/// plus the most recent search result while one is pending.
pub fn render_observation(plan: &PlanDocument, last_search: Option<&str>) -> String {
    match last_search {
        Some(result) => format!("{}\n\n{}", render_plan(plan), result),
        None => render_plan(plan),
    }
}
