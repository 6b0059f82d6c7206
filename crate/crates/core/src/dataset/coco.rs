use std::collections::BTreeSet;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

pub const PERSON_CATEGORY: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    #[serde(default)]
    pub file_name: String,
    #[serde(default)]
    pub width: u32,
    #[serde(default)]
    pub height: u32,
}

#[derive(Deserialize)]
struct Annotation {
    image_id: u64,
    category_id: u64,
}

#[derive(Deserialize)]
struct Document {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<Annotation>,
}

/// Images carrying at least one person annotation, by ascending id.
pub fn coco_body_filter_str(json: &str) -> Result<Vec<CocoImage>> {
    let doc: Document = serde_json::from_str(json).map_err(|e| Error::Coco {
        line: e.line(),
        column: e.column(),
        detail: e.to_string(),
    })?;
    let with_person: BTreeSet<u64> = doc
        .annotations
        .iter()
        .filter(|a| a.category_id == PERSON_CATEGORY)
        .map(|a| a.image_id)
        .collect();
    let mut out: Vec<CocoImage> = doc
        .images
        .into_iter()
        .filter(|im| with_person.contains(&im.id))
        .collect();
    out.sort_by_key(|im| im.id);
    out.dedup_by_key(|im| im.id);
    Ok(out)
}

pub fn coco_body_filter(annotation_file: &Path) -> Result<Vec<CocoImage>> {
    let text = std::fs::read_to_string(annotation_file).map_err(|e| Error::io(annotation_file, e))?;
    coco_body_filter_str(&text)
}
