//! JSON listing of the augmentation registry.

use drac_core::augment::{AugmentationId, REGISTRY, REGISTRY_VERSION, SAMPLED};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RegistryEntry {
    pub index: usize,
    pub id: AugmentationId,
    pub domain: &'static str,
    pub sampled: bool,
}

#[derive(Debug, Serialize)]
pub struct Registry {
    pub version: u32,
    pub augmentations: Vec<RegistryEntry>,
}

pub fn registry() -> Registry {
    Registry {
        version: REGISTRY_VERSION,
        augmentations: REGISTRY
            .iter()
            .enumerate()
            .map(|(index, &id)| RegistryEntry { index, id, domain: id.domain(), sampled: SAMPLED.contains(&id) })
            .collect(),
    }
}

pub fn registry_json() -> String {
    serde_json::to_string_pretty(&registry()).expect("registry serializes")
}

/// Looks up an augmentation by name, listing valid names on failure.
pub fn parse_aug(name: &str) -> anyhow::Result<AugmentationId> {
    AugmentationId::parse(name).ok_or_else(|| {
        let names: Vec<&str> = REGISTRY.iter().map(|a| a.as_str()).collect();
        anyhow::anyhow!("unknown augmentation {name:?}; expected one of {}", names.join(", "))
    })
}
