//! The immutable travel world: cities, attractions, restaurants, lodgings,
//! and transport legs, loaded from a versioned JSON asset.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version string of the catalog asset bundled into the library.
pub const DEFAULT_CATALOG_JSON: &str = include_str!("../../assets/default_catalog.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct City {
    pub name: String,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attraction {
    pub city: String,
    pub name: String,
    pub entry_cost: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Restaurant {
    pub city: String,
    pub name: String,
    pub cuisine: String,
    pub meal_cost: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lodging {
    pub city: String,
    pub name: String,
    pub nightly_rate: u64,
    pub max_occupancy: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportLeg {
    pub origin: String,
    pub destination: String,
    pub mode: String,
    pub cost_per_person: u64,
}

/// The full travel world. Immutable after load; safe to share across episodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub version: String,
    pub cities: Vec<City>,
    pub attractions: Vec<Attraction>,
    pub restaurants: Vec<Restaurant>,
    pub lodgings: Vec<Lodging>,
    pub transport: Vec<TransportLeg>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("could not read catalog file: {0}")]
    Io(#[from] std::io::Error),
    #[error("{kind} {name:?} references unknown city {city:?}")]
    UnknownCity {
        kind: &'static str,
        name: String,
        city: String,
    },
    #[error("duplicate {kind} name {name:?}")]
    DuplicateName { kind: &'static str, name: String },
    #[error("lodging {name:?} has max_occupancy 0")]
    ZeroOccupancy { name: String },
    #[error("catalog version string is empty")]
    EmptyVersion,
}

impl Catalog {
    /// Parse and validate a catalog from its JSON representation.
    pub fn from_json(json: &str) -> Result<Self, CatalogError> {
        let catalog: Catalog = serde_json::from_str(json)?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn from_path(path: &Path) -> Result<Self, CatalogError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The catalog bundled with the library, parsed once.
    pub fn builtin() -> &'static Catalog {
        static BUILTIN: OnceLock<Catalog> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            Catalog::from_json(DEFAULT_CATALOG_JSON).expect("bundled catalog is valid")
        })
    }

    /// Referential integrity, per-kind name uniqueness, and occupancy sanity.
    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.version.is_empty() {
            return Err(CatalogError::EmptyVersion);
        }
        let cities: BTreeSet<&str> = self.cities.iter().map(|c| c.name.as_str()).collect();
        if cities.len() != self.cities.len() {
            let dup = duplicate_name(self.cities.iter().map(|c| c.name.as_str()));
            return Err(CatalogError::DuplicateName { kind: "city", name: dup });
        }
        check_unique("attraction", self.attractions.iter().map(|a| a.name.as_str()))?;
        check_unique("restaurant", self.restaurants.iter().map(|r| r.name.as_str()))?;
        check_unique("lodging", self.lodgings.iter().map(|l| l.name.as_str()))?;
        for a in &self.attractions {
            check_city(&cities, "attraction", &a.name, &a.city)?;
        }
        for r in &self.restaurants {
            check_city(&cities, "restaurant", &r.name, &r.city)?;
        }
        for l in &self.lodgings {
            check_city(&cities, "lodging", &l.name, &l.city)?;
            if l.max_occupancy == 0 {
                return Err(CatalogError::ZeroOccupancy { name: l.name.clone() });
            }
        }
        for leg in &self.transport {
            let name = format!("{} -> {}", leg.origin, leg.destination);
            check_city(&cities, "transport leg", &name, &leg.origin)?;
            check_city(&cities, "transport leg", &name, &leg.destination)?;
        }
        Ok(())
    }

    pub fn city(&self, name: &str) -> Option<&City> {
        self.cities.iter().find(|c| c.name == name)
    }

    pub fn attraction(&self, name: &str) -> Option<&Attraction> {
        self.attractions.iter().find(|a| a.name == name)
    }

    pub fn restaurant(&self, name: &str) -> Option<&Restaurant> {
        self.restaurants.iter().find(|r| r.name == name)
    }

    pub fn lodging(&self, name: &str) -> Option<&Lodging> {
        self.lodgings.iter().find(|l| l.name == name)
    }

    /// Cheapest leg between two cities with the given mode, if any.
    pub fn leg(&self, origin: &str, destination: &str, mode: &str) -> Option<&TransportLeg> {
        self.transport
            .iter()
            .filter(|l| l.origin == origin && l.destination == destination && l.mode == mode)
            .min_by_key(|l| l.cost_per_person)
    }

    /// Cheapest leg between two cities over all modes.
    pub fn cheapest_leg(&self, origin: &str, destination: &str) -> Option<&TransportLeg> {
        self.transport
            .iter()
            .filter(|l| l.origin == origin && l.destination == destination)
            .min_by(|a, b| (a.cost_per_person, &a.mode).cmp(&(b.cost_per_person, &b.mode)))
    }

    pub fn cities_in_region<'a>(&'a self, region: &'a str) -> impl Iterator<Item = &'a City> {
        self.cities.iter().filter(move |c| c.region == region)
    }

    pub fn regions(&self) -> BTreeSet<&str> {
        self.cities.iter().map(|c| c.region.as_str()).collect()
    }

    pub fn cuisines(&self) -> BTreeSet<&str> {
        self.restaurants.iter().map(|r| r.cuisine.as_str()).collect()
    }
}

fn check_city(
    cities: &BTreeSet<&str>,
    kind: &'static str,
    name: &str,
    city: &str,
) -> Result<(), CatalogError> {
    if cities.contains(city) {
        Ok(())
    } else {
        Err(CatalogError::UnknownCity {
            kind,
            name: name.to_owned(),
            city: city.to_owned(),
        })
    }
}

fn check_unique<'a>(
    kind: &'static str,
    names: impl Iterator<Item = &'a str> + Clone,
) -> Result<(), CatalogError> {
    let set: BTreeSet<&str> = names.clone().collect();
    if set.len() == names.clone().count() {
        Ok(())
    } else {
        Err(CatalogError::DuplicateName { kind, name: duplicate_name(names) })
    }
}

fn duplicate_name<'a>(names: impl Iterator<Item = &'a str>) -> String {
    let mut seen = BTreeSet::new();
    for name in names {
        if !seen.insert(name) {
            return name.to_owned();
        }
    }
    unreachable!("caller established a duplicate exists")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_is_valid_and_fully_connected() {
        let catalog = Catalog::builtin();
        assert_eq!(catalog.version, "1");
        assert_eq!(catalog.cities.len(), 8);
        for a in &catalog.cities {
            for b in &catalog.cities {
                if a.name != b.name {
                    assert!(
                        catalog.cheapest_leg(&a.name, &b.name).is_some(),
                        "no leg {} -> {}",
                        a.name,
                        b.name
                    );
                }
            }
        }
    }

    #[test]
    fn builtin_catalog_covers_archetype_needs() {
        let catalog = Catalog::builtin();
        assert!(catalog.cities_in_region("New York").count() >= 2);
        let cuisines = catalog.cuisines();
        assert!(cuisines.contains("Mexican") && cuisines.contains("Indian"));
        // Every city offers lodging and food, so the planner never dead-ends.
        for city in &catalog.cities {
            assert!(catalog.lodgings.iter().any(|l| l.city == city.name));
            assert!(catalog.restaurants.iter().any(|r| r.city == city.name));
        }
    }

    #[test]
    fn validate_rejects_dangling_references() {
        let mut catalog = Catalog::builtin().clone();
        catalog.attractions[0].city = "Atlantis".to_owned();
        assert!(matches!(
            catalog.validate(),
            Err(CatalogError::UnknownCity { kind: "attraction", .. })
        ));
    }

    #[test]
    fn validate_rejects_duplicate_names() {
        let mut catalog = Catalog::builtin().clone();
        let clone = catalog.restaurants[0].clone();
        catalog.restaurants.push(clone);
        assert!(matches!(
            catalog.validate(),
            Err(CatalogError::DuplicateName { kind: "restaurant", .. })
        ));
    }
}
