//! The shared plan document that collaboration edits, plus the structured
//! patch language used by edit actions. Total cost is derived, never stored
//! by hand: every patch application recomputes it from the catalog.

use serde::{Deserialize, Serialize};

use super::catalog::Catalog;
use super::EnvError;

/// One day of the itinerary. Entity fields hold catalog names; dangling
/// names are allowed structurally and are caught by the evaluator.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DayPlan {
    pub city: Option<String>,
    pub attractions: Vec<String>,
    pub meals: Vec<String>,
    pub lodging: Option<String>,
}

/// A transport booking pinned to a day of the trip (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTransport {
    pub day: u32,
    pub origin: String,
    pub destination: String,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub party_size: u32,
    pub days: Vec<DayPlan>,
    pub transport: Vec<PlanTransport>,
    /// Derived: recomputed after every edit, checked by the evaluator.
    pub total_cost: u64,
}

impl PlanDocument {
    pub fn empty() -> Self {
        PlanDocument { party_size: 1, days: Vec::new(), transport: Vec::new(), total_cost: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty() && self.transport.is_empty()
    }

    /// Distinct day cities in first-visit order.
    pub fn visited_cities(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for day in &self.days {
            if let Some(city) = day.city.as_deref() {
                if !seen.contains(&city) {
                    seen.push(city);
                }
            }
        }
        seen
    }
}

impl Default for PlanDocument {
    fn default() -> Self {
        Self::empty()
    }
}

/// One structured edit step. A batch of patches applies atomically:
/// any invalid patch rejects the whole batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PlanPatch {
    Clear,
    SetPartySize { party_size: u32 },
    /// Resize the itinerary; new days start blank, excess days are dropped.
    SetDays { days: u32 },
    SetDayCity { day: u32, city: String },
    AddAttraction { day: u32, name: String },
    RemoveAttraction { day: u32, name: String },
    AddMeal { day: u32, restaurant: String },
    RemoveMeal { day: u32, restaurant: String },
    SetLodging { day: u32, lodging: Option<String> },
    AddTransport { day: u32, origin: String, destination: String, mode: String },
    ClearTransport,
}

/// Apply a patch batch atomically and recompute the derived total cost.
pub fn apply_patches(
    plan: &PlanDocument,
    patches: &[PlanPatch],
    catalog: &Catalog,
) -> Result<PlanDocument, EnvError> {
    let mut next = plan.clone();
    for patch in patches {
        apply_one(&mut next, patch)?;
    }
    next.total_cost = compute_total_cost(&next, catalog);
    Ok(next)
}

fn apply_one(plan: &mut PlanDocument, patch: &PlanPatch) -> Result<(), EnvError> {
    match patch {
        PlanPatch::Clear => *plan = PlanDocument::empty(),
        PlanPatch::SetPartySize { party_size } => {
            if *party_size == 0 {
                return Err(EnvError::InvalidPatch {
                    reason: "party_size must be at least 1".to_owned(),
                });
            }
            plan.party_size = *party_size;
        }
        PlanPatch::SetDays { days } => {
            plan.days.resize_with(*days as usize, DayPlan::default);
            plan.transport.retain(|t| t.day <= *days);
        }
        PlanPatch::SetDayCity { day, city } => {
            day_mut(plan, *day)?.city = Some(city.clone());
        }
        PlanPatch::AddAttraction { day, name } => {
            day_mut(plan, *day)?.attractions.push(name.clone());
        }
        PlanPatch::RemoveAttraction { day, name } => {
            day_mut(plan, *day)?.attractions.retain(|a| a != name);
        }
        PlanPatch::AddMeal { day, restaurant } => {
            day_mut(plan, *day)?.meals.push(restaurant.clone());
        }
        PlanPatch::RemoveMeal { day, restaurant } => {
            day_mut(plan, *day)?.meals.retain(|m| m != restaurant);
        }
        PlanPatch::SetLodging { day, lodging } => {
            day_mut(plan, *day)?.lodging = lodging.clone();
        }
        PlanPatch::AddTransport { day, origin, destination, mode } => {
            if *day == 0 || *day as usize > plan.days.len() {
                return Err(EnvError::InvalidPatch {
                    reason: format!("transport references nonexistent day {day}"),
                });
            }
            plan.transport.push(PlanTransport {
                day: *day,
                origin: origin.clone(),
                destination: destination.clone(),
                mode: mode.clone(),
            });
        }
        PlanPatch::ClearTransport => plan.transport.clear(),
    }
    Ok(())
}

fn day_mut(plan: &mut PlanDocument, day: u32) -> Result<&mut DayPlan, EnvError> {
    if day == 0 || day as usize > plan.days.len() {
        return Err(EnvError::InvalidPatch {
            reason: format!("patch references nonexistent day {day}"),
        });
    }
    Ok(&mut plan.days[day as usize - 1])
}

/// Itemized cost roll-up. Per-person items (attractions, meals, transport)
/// multiply by party size; lodging is per room with rooms = ceil(party/occupancy).
/// Dangling entity names price at zero; the evaluator flags them separately.
pub fn compute_total_cost(plan: &PlanDocument, catalog: &Catalog) -> u64 {
    let party = u64::from(plan.party_size);
    let mut total = 0u64;
    for day in &plan.days {
        for name in &day.attractions {
            if let Some(a) = catalog.attraction(name) {
                total += a.entry_cost * party;
            }
        }
        for name in &day.meals {
            if let Some(r) = catalog.restaurant(name) {
                total += r.meal_cost * party;
            }
        }
        if let Some(name) = &day.lodging {
            if let Some(l) = catalog.lodging(name) {
                let rooms = u64::from(plan.party_size.div_ceil(l.max_occupancy));
                total += l.nightly_rate * rooms;
            }
        }
    }
    for t in &plan.transport {
        if let Some(leg) = catalog.leg(&t.origin, &t.destination, &t.mode) {
            total += leg.cost_per_person * party;
        }
    }
    total
}

/// Deterministic plan rendering: day-major order, then attractions, meals,
/// lodging; transport listed last. Byte-identical for identical plans.
pub fn render_plan(plan: &PlanDocument) -> String {
    if plan.is_empty() {
        return "PLAN: (empty)".to_owned();
    }
    let mut out = format!(
        "PLAN: party_size={} days={} total_cost={}",
        plan.party_size,
        plan.days.len(),
        plan.total_cost
    );
    for (i, day) in plan.days.iter().enumerate() {
        out.push_str(&format!("\nDAY {}: city={}", i + 1, day.city.as_deref().unwrap_or("(unset)")));
        out.push_str(&format!("\n  attractions: {}", join_or_none(&day.attractions)));
        out.push_str(&format!("\n  meals: {}", join_or_none(&day.meals)));
        out.push_str(&format!("\n  lodging: {}", day.lodging.as_deref().unwrap_or("(none)")));
    }
    if !plan.transport.is_empty() {
        out.push_str("\nTRANSPORT:");
        for t in &plan.transport {
            out.push_str(&format!(
                "\n  day {}: {} -> {} ({})",
                t.day, t.origin, t.destination, t.mode
            ));
        }
    }
    out
}

fn join_or_none(items: &[String]) -> String {
    if items.is_empty() {
        "(none)".to_owned()
    } else {
        items.join(", ")
    }
}
