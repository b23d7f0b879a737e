//! Deterministic greedy itinerary construction. The task generator uses it
//! to witness satisfiability, and the scripted agents use it to build plans,
//! so a full-disclosure agent plan always matches the generation witness.

use super::catalog::Catalog;
use super::plan::{compute_total_cost, DayPlan, PlanDocument, PlanPatch, PlanTransport};
use super::EnvError;

/// What the planner is asked to honor. Defaults encode "nothing disclosed":
/// one traveler, a single destination city, no cuisine or budget pressure.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlanGoals {
    pub party_size: Option<u32>,
    pub city_count: Option<(u32, String)>,
    pub cuisines: Vec<String>,
    pub budget: Option<u64>,
}

/// Build an itinerary greedily: cheapest usable cities, cheapest lodging and
/// meal per day, cuisine coverage meals, then attractions while the budget
/// allows. All ties break on names, so output is deterministic.
pub fn plan_greedy(
    catalog: &Catalog,
    origin: &str,
    day_count: u32,
    goals: &PlanGoals,
) -> Result<PlanDocument, EnvError> {
    let party = goals.party_size.unwrap_or(1).max(1);
    let mut candidates: Vec<&str> = catalog
        .cities
        .iter()
        .filter(|c| c.name != origin)
        .filter(|c| match &goals.city_count {
            Some((_, region)) => &c.region == region,
            None => true,
        })
        .filter(|c| city_cost(catalog, &c.name, party).is_some())
        .map(|c| c.name.as_str())
        .collect();
    candidates.sort_by_key(|name| (city_cost(catalog, name, party), name.to_owned()));

    let wanted = goals.city_count.as_ref().map_or(1, |(n, _)| *n).max(1);
    let k = (wanted.min(day_count) as usize).min(candidates.len());
    if k == 0 {
        return Err(EnvError::Unplannable {
            reason: match &goals.city_count {
                Some((_, region)) => format!("no usable destination city in region {region:?}"),
                None => "no usable destination city".to_owned(),
            },
        });
    }
    let cities = &candidates[..k];

    // Day blocks: day_count split into k contiguous blocks, earlier blocks
    // absorb the remainder.
    let base = day_count as usize / k;
    let rem = day_count as usize % k;
    let mut plan = PlanDocument { party_size: party, ..PlanDocument::empty() };
    let mut block_starts = Vec::with_capacity(k);
    for (i, city) in cities.iter().enumerate() {
        block_starts.push(plan.days.len());
        let len = base + usize::from(i < rem);
        for _ in 0..len {
            plan.days.push(DayPlan {
                city: Some((*city).to_owned()),
                attractions: Vec::new(),
                meals: vec![cheapest_meal(catalog, city).expect("usable city has a restaurant")],
                lodging: Some(cheapest_lodging(catalog, city, party).expect("usable city has lodging")),
            });
        }
    }

    // One covering meal per preferred cuisine not already served, placed on
    // the first day of a matching city when possible.
    for cuisine in &goals.cuisines {
        if covers_cuisine(&plan, catalog, cuisine) {
            continue;
        }
        let mut options: Vec<_> = catalog.restaurants.iter().filter(|r| &r.cuisine == cuisine).collect();
        options.sort_by_key(|r| {
            let visiting = plan.days.iter().any(|d| d.city.as_deref() == Some(r.city.as_str()));
            (!visiting, r.meal_cost, r.name.clone())
        });
        if let Some(restaurant) = options.first() {
            let day = plan
                .days
                .iter()
                .position(|d| d.city.as_deref() == Some(restaurant.city.as_str()))
                .unwrap_or(0);
            plan.days[day].meals.push(restaurant.name.clone());
        }
    }

    // Transport: depart the origin on day 1, then hop at each block start.
    let mut previous = origin;
    for (i, city) in cities.iter().enumerate() {
        if let Some(leg) = catalog.cheapest_leg(previous, city) {
            plan.transport.push(PlanTransport {
                day: block_starts[i] as u32 + 1,
                origin: previous.to_owned(),
                destination: (*city).to_owned(),
                mode: leg.mode.clone(),
            });
        }
        previous = city;
    }

    // Attractions: the d-th day in a block gets that city's d-th cheapest
    // attraction, skipped when it would break the budget cap.
    plan.total_cost = compute_total_cost(&plan, catalog);
    for (i, city) in cities.iter().enumerate() {
        let mut pool: Vec<_> = catalog.attractions.iter().filter(|a| &a.city == city).collect();
        pool.sort_by_key(|a| (a.entry_cost, a.name.clone()));
        let len = base + usize::from(i < rem);
        for offset in 0..len.min(pool.len()) {
            let added = pool[offset].entry_cost * u64::from(party);
            if goals.budget.is_some_and(|cap| plan.total_cost + added > cap) {
                continue;
            }
            plan.days[block_starts[i] + offset].attractions.push(pool[offset].name.clone());
            plan.total_cost += added;
        }
    }

    debug_assert_eq!(plan.total_cost, compute_total_cost(&plan, catalog));
    Ok(plan)
}

/// Canonical patch sequence rebuilding `target` from any starting plan.
pub fn rebuild_patches(target: &PlanDocument) -> Vec<PlanPatch> {
    let mut patches = vec![
        PlanPatch::Clear,
        PlanPatch::SetPartySize { party_size: target.party_size },
        PlanPatch::SetDays { days: target.days.len() as u32 },
    ];
    for (i, day) in target.days.iter().enumerate() {
        let d = i as u32 + 1;
        if let Some(city) = &day.city {
            patches.push(PlanPatch::SetDayCity { day: d, city: city.clone() });
        }
        for name in &day.attractions {
            patches.push(PlanPatch::AddAttraction { day: d, name: name.clone() });
        }
        for restaurant in &day.meals {
            patches.push(PlanPatch::AddMeal { day: d, restaurant: restaurant.clone() });
        }
        if day.lodging.is_some() {
            patches.push(PlanPatch::SetLodging { day: d, lodging: day.lodging.clone() });
        }
    }
    for t in &target.transport {
        patches.push(PlanPatch::AddTransport {
            day: t.day,
            origin: t.origin.clone(),
            destination: t.destination.clone(),
            mode: t.mode.clone(),
        });
    }
    patches
}

/// Nightly lodging (per-room) plus one cheap meal; None if the city lacks either.
fn city_cost(catalog: &Catalog, city: &str, party: u32) -> Option<u64> {
    let lodging = catalog
        .lodgings
        .iter()
        .filter(|l| l.city == city)
        .map(|l| l.nightly_rate * u64::from(party.div_ceil(l.max_occupancy)))
        .min()?;
    let meal = catalog.restaurants.iter().filter(|r| r.city == city).map(|r| r.meal_cost).min()?;
    Some(lodging + meal)
}

fn cheapest_lodging(catalog: &Catalog, city: &str, party: u32) -> Option<String> {
    catalog
        .lodgings
        .iter()
        .filter(|l| l.city == city)
        .min_by_key(|l| (l.nightly_rate * u64::from(party.div_ceil(l.max_occupancy)), l.name.clone()))
        .map(|l| l.name.clone())
}

fn cheapest_meal(catalog: &Catalog, city: &str) -> Option<String> {
    catalog
        .restaurants
        .iter()
        .filter(|r| r.city == city)
        .min_by_key(|r| (r.meal_cost, r.name.clone()))
        .map(|r| r.name.clone())
}

fn covers_cuisine(plan: &PlanDocument, catalog: &Catalog, cuisine: &str) -> bool {
    plan.days
        .iter()
        .flat_map(|d| d.meals.iter())
        .any(|meal| catalog.restaurant(meal).is_some_and(|r| r.cuisine == cuisine))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::plan::apply_patches;

    fn catalog() -> &'static Catalog {
        Catalog::builtin()
    }

    fn archetype_goals() -> PlanGoals {
        PlanGoals {
            party_size: Some(2),
            city_count: Some((2, "New York".to_owned())),
            cuisines: vec!["Indian".to_owned(), "Mexican".to_owned()],
            budget: Some(6300),
        }
    }

    #[test]
    fn archetype_plan_honors_every_goal() {
        let plan = plan_greedy(catalog(), "Denver", 5, &archetype_goals()).unwrap();
        assert_eq!(plan.party_size, 2);
        assert_eq!(plan.days.len(), 5);
        let visited = plan.visited_cities();
        assert_eq!(visited.len(), 2);
        for city in &visited {
            assert_eq!(catalog().city(city).unwrap().region, "New York");
        }
        for cuisine in ["Indian", "Mexican"] {
            assert!(covers_cuisine(&plan, catalog(), cuisine), "missing {cuisine}");
        }
        assert!(plan.total_cost <= 6300);
        assert!(plan.days.iter().all(|d| d.lodging.is_some() && !d.meals.is_empty()));
        assert_eq!(plan.transport.len(), 2);
        assert_eq!(plan.transport[0].origin, "Denver");
        assert_eq!(plan.transport[0].day, 1);
    }

    #[test]
    fn planning_is_deterministic() {
        let a = plan_greedy(catalog(), "Denver", 5, &archetype_goals()).unwrap();
        let b = plan_greedy(catalog(), "Denver", 5, &archetype_goals()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_goals_yield_single_city_trip() {
        let plan = plan_greedy(catalog(), "Chicago", 3, &PlanGoals::default()).unwrap();
        assert_eq!(plan.party_size, 1);
        assert_eq!(plan.visited_cities().len(), 1);
        assert_eq!(plan.days.len(), 3);
        assert_eq!(plan.transport.len(), 1);
    }

    #[test]
    fn zero_budget_suppresses_attractions_only() {
        let goals = PlanGoals { budget: Some(0), ..PlanGoals::default() };
        let plan = plan_greedy(catalog(), "Denver", 4, &goals).unwrap();
        assert!(plan.days.iter().all(|d| d.attractions.is_empty()));
        assert!(plan.days.iter().all(|d| d.lodging.is_some() && !d.meals.is_empty()));
    }

    #[test]
    fn city_shortfall_degrades_instead_of_erroring() {
        // Colorado has exactly one city and it is the origin here.
        let goals = PlanGoals {
            city_count: Some((2, "Colorado".to_owned())),
            ..PlanGoals::default()
        };
        let err = plan_greedy(catalog(), "Denver", 3, &goals).unwrap_err();
        assert!(matches!(err, EnvError::Unplannable { .. }));

        // Nebraska has one non-origin city: a request for two falls back to one.
        let goals = PlanGoals {
            city_count: Some((2, "Nebraska".to_owned())),
            ..PlanGoals::default()
        };
        let plan = plan_greedy(catalog(), "Denver", 3, &goals).unwrap();
        assert_eq!(plan.visited_cities(), vec!["Omaha"]);
    }

    #[test]
    fn rebuild_patches_reconstructs_plan_exactly() {
        let plan = plan_greedy(catalog(), "Denver", 5, &archetype_goals()).unwrap();
        let rebuilt =
            apply_patches(&PlanDocument::empty(), &rebuild_patches(&plan), catalog()).unwrap();
        assert_eq!(rebuilt, plan);

        // Rebuilding over a stale plan clears it first.
        let stale = plan_greedy(catalog(), "Chicago", 2, &PlanGoals::default()).unwrap();
        let rebuilt = apply_patches(&stale, &rebuild_patches(&plan), catalog()).unwrap();
        assert_eq!(rebuilt, plan);
    }
}
