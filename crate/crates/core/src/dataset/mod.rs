//! Images, their descriptors and cues, and query ground truth.

mod io;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

pub use io::{load_dataset, read_descriptor_file, save_dataset, write_descriptor_file};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use crate::bitvec::BinaryDescriptor;
use crate::encoders::{CueKind, CueSchema, CueValue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Query,
    Reference,
}

/// Name and kind of one per-feature cue column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueColumn {
    pub name: String,
    pub kind: CueKind,
}

impl CueColumn {
    pub fn new(name: impl Into<String>, kind: CueKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// One image: its descriptors and, in parallel, the raw cues of each feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub role: Role,
    pub descriptors: Vec<BinaryDescriptor>,
    pub cue_values: Vec<Vec<CueValue>>,
}

impl ImageRecord {
    pub fn new(
        image_id: impl Into<String>,
        role: Role,
        descriptors: Vec<BinaryDescriptor>,
        cue_values: Vec<Vec<CueValue>>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if descriptors.len() != cue_values.len() {
            return Err(Error::format(
                format!("image '{image_id}'"),
                format!(
                    "{} descriptors but {} cue rows",
                    descriptors.len(),
                    cue_values.len()
                ),
            ));
        }
        if let Some(first) = descriptors.first() {
            if let Some(bad) = descriptors.iter().find(|d| d.len() != first.len()) {
                return Err(Error::LengthMismatch {
                    expected: first.len(),
                    found: bad.len(),
                });
            }
        }
        Ok(Self {
            image_id,
            role,
            descriptors,
            cue_values,
        })
    }

    /// Image without cues, e.g. an already augmented descriptor set.
    pub fn from_descriptors(
        image_id: impl Into<String>,
        role: Role,
        descriptors: Vec<BinaryDescriptor>,
    ) -> Self {
        let cue_values = vec![Vec::new(); descriptors.len()];
        Self::new(image_id, role, descriptors, cue_values)
            .expect("descriptor lengths must agree within an image")
    }

    pub fn descriptor_bits(&self) -> Option<usize> {
        self.descriptors.first().map(|d| d.len())
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// Relevant image ids per query image. Queries may have no relevant images.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    relevant: BTreeMap<String, BTreeSet<String>>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_query(&mut self, query: impl Into<String>) {
        self.relevant.entry(query.into()).or_default();
    }

    pub fn add_pair(&mut self, query: impl Into<String>, relevant: impl Into<String>) {
        self.relevant
            .entry(query.into())
            .or_default()
            .insert(relevant.into());
    }

    /// Relevant set of `query`; empty for images without ground truth.
    pub fn relevant(&self, query: &str) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.relevant.get(query).unwrap_or(&EMPTY)
    }

    pub fn is_relevant(&self, query: &str, reference: &str) -> bool {
        self.relevant(query).contains(reference)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.relevant.keys().map(String::as_str)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.relevant
            .iter()
            .flat_map(|(q, refs)| refs.iter().map(move |r| (q.as_str(), r.as_str())))
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.pairs()
            .flat_map(|(q, r)| [q, r])
            .chain(self.queries())
            .collect()
    }
}

/// A fully materialized dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub descriptor_bits: usize,
    pub cue_columns: Vec<CueColumn>,
    pub images: Vec<ImageRecord>,
    pub ground_truth: GroundTruth,
}

impl Dataset {
    pub fn new(
        descriptor_bits: usize,
        cue_columns: Vec<CueColumn>,
        images: Vec<ImageRecord>,
        ground_truth: GroundTruth,
    ) -> Result<Self> {
        let dataset = Self {
            descriptor_bits,
            cue_columns,
            images,
            ground_truth,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for image in &self.images {
            if !ids.insert(image.image_id.as_str()) {
                return Err(Error::DuplicateImage(image.image_id.clone()));
            }
            for d in &image.descriptors {
                if d.len() != self.descriptor_bits {
                    return Err(Error::LengthMismatch {
                        expected: self.descriptor_bits,
                        found: d.len(),
                    });
                }
            }
            for row in &image.cue_values {
                if row.len() != self.cue_columns.len() {
                    return Err(Error::CueArity {
                        expected: self.cue_columns.len(),
                        found: row.len(),
                    });
                }
                for (value, column) in row.iter().zip(&self.cue_columns) {
                    if value.kind() != column.kind {
                        return Err(Error::CueKind {
                            name: column.name.clone(),
                            expected: column.kind.as_str(),
                        });
                    }
                }
            }
        }
        if let Some(dangling) = self.ground_truth.ids().into_iter().find(|id| !ids.contains(id)) {
            return Err(Error::UnknownImage(dangling.to_string()));
        }
        Ok(())
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.image_id == id)
    }

    pub fn descriptor_count(&self) -> usize {
        self.images.iter().map(ImageRecord::len).sum()
    }

    /// Column index of every schema cue, matched by name and kind.
    pub fn cue_projection(&self, schema: &CueSchema) -> Result<Vec<usize>> {
        schema
            .cues()
            .iter()
            .map(|cue| {
                let index = self
                    .cue_columns
                    .iter()
                    .position(|c| c.name == cue.name)
                    .ok_or_else(|| {
                        Error::Config(vec![format!(
                            "schema.cues: dataset has no cue column named '{}'",
                            cue.name
                        )])
                    })?;
                if self.cue_columns[index].kind != cue.spec.kind() {
                    return Err(Error::CueKind {
                        name: cue.name.clone(),
                        expected: cue.spec.kind().as_str(),
                    });
                }
                Ok(index)
            })
            .collect()
    }
}
