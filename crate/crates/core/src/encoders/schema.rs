use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::cue::{ContinuousCueSpec, CueKind, CueSpec, CueValue, SelectorCueSpec};
use crate::bitvec::BinaryDescriptor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCue {
    pub name: String,
    #[serde(flatten)]
    pub spec: CueSpec,
}

impl NamedCue {
    pub fn new(name: impl Into<String>, spec: CueSpec) -> Self {
        Self {
            name: name.into(),
            spec,
        }
    }
}

/// Ordered cue list plus augmentation weight. Fixes the augmentation block
/// layout bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct CueSchema {
    cues: Vec<NamedCue>,
    lambda: u32,
    pad_block_to_byte: bool,
}

#[derive(Deserialize)]
struct RawSchema {
    cues: Vec<NamedCue>,
    #[serde(default)]
    lambda: u32,
    #[serde(default = "default_pad")]
    pad_block_to_byte: bool,
}

fn default_pad() -> bool {
    true
}

impl TryFrom<RawSchema> for CueSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        Self::new(raw.cues, raw.lambda, raw.pad_block_to_byte)
    }
}

impl CueSchema {
    pub fn new(cues: Vec<NamedCue>, lambda: u32, pad_block_to_byte: bool) -> Result<Self> {
        if cues.is_empty() {
            return Err(Error::InvalidSpec("schema needs at least one cue".into()));
        }
        let mut seen = HashSet::new();
        for cue in &cues {
            if !seen.insert(cue.name.as_str()) {
                return Err(Error::InvalidSpec(format!("duplicate cue name '{}'", cue.name)));
            }
            // re-validate specs built by struct literal
            match cue.spec {
                CueSpec::Continuous(s) => {
                    ContinuousCueSpec::new(s.alpha, s.beta, s.intervals)?;
                }
                CueSpec::Selector(s) => {
                    SelectorCueSpec::new(s.cardinality)?;
                }
            }
        }
        Ok(Self {
            cues,
            lambda,
            pad_block_to_byte,
        })
    }

    /// Keypoint coordinates: `u` (horizontal) then `v` (vertical).
    pub fn keypoint(
        width: u32,
        height: u32,
        intervals_u: u32,
        intervals_v: u32,
        lambda: u32,
    ) -> Result<Self> {
        Self::new(
            vec![
                NamedCue::new(
                    "u",
                    CueSpec::Continuous(ContinuousCueSpec::pixel_axis(width, intervals_u)?),
                ),
                NamedCue::new(
                    "v",
                    CueSpec::Continuous(ContinuousCueSpec::pixel_axis(height, intervals_v)?),
                ),
            ],
            lambda,
            true,
        )
    }

    /// Single selector cue named `label`.
    pub fn semantic_label(cardinality: u32, lambda: u32) -> Result<Self> {
        Self::new(
            vec![NamedCue::new(
                "label",
                CueSpec::Selector(SelectorCueSpec::new(cardinality)?),
            )],
            lambda,
            true,
        )
    }

    pub fn cues(&self) -> &[NamedCue] {
        &self.cues
    }

    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    pub fn pad_block_to_byte(&self) -> bool {
        self.pad_block_to_byte
    }

    pub fn with_lambda(&self, lambda: u32) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    pub fn with_padding(&self, pad_block_to_byte: bool) -> Self {
        Self {
            pad_block_to_byte,
            ..self.clone()
        }
    }

    pub fn unpadded_block_bits(&self) -> usize {
        self.cues.iter().map(|c| c.spec.bits()).sum()
    }

    pub fn block_bits(&self) -> usize {
        let raw = self.unpadded_block_bits();
        if self.pad_block_to_byte {
            raw.next_multiple_of(8)
        } else {
            raw
        }
    }

    pub fn continuous_block_bits(&self) -> usize {
        self.cues
            .iter()
            .filter(|c| c.spec.kind() == CueKind::Continuous)
            .map(|c| c.spec.bits())
            .sum()
    }

    pub fn selector_count(&self) -> usize {
        self.cues
            .iter()
            .filter(|c| c.spec.kind() == CueKind::Selector)
            .count()
    }

    /// Bit length of an augmented descriptor built from `descriptor_bits`.
    pub fn augmented_bits(&self, descriptor_bits: usize) -> usize {
        descriptor_bits + self.lambda as usize * self.block_bits()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema is always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("cue schema", e.to_string()))
    }
}

/// Per-cue codes concatenated in schema order, zero padded to the block size.
pub fn encode_cues(values: &[CueValue], schema: &CueSchema) -> Result<BinaryDescriptor> {
    if values.len() != schema.cues.len() {
        return Err(Error::CueArity {
            expected: schema.cues.len(),
            found: values.len(),
        });
    }
    let mut parts = Vec::with_capacity(values.len() + 1);
    for (cue, &value) in schema.cues.iter().zip(values) {
        if cue.spec.kind() != value.kind() {
            return Err(Error::CueKind {
                name: cue.name.clone(),
                expected: cue.spec.kind().as_str(),
            });
        }
        parts.push(cue.spec.encode(value)?);
    }
    let pad = schema.block_bits() - schema.unpadded_block_bits();
    if pad > 0 {
        parts.push(BinaryDescriptor::zeros(pad)?);
    }
    BinaryDescriptor::concat(&parts)
}

/// `descriptor` followed by `lambda` copies of its cue block. With
/// `lambda == 0` the descriptor comes back unchanged.
pub fn augment(
    descriptor: &BinaryDescriptor,
    values: &[CueValue],
    schema: &CueSchema,
) -> Result<BinaryDescriptor> {
    let block = encode_cues(values, schema)?;
    augment_with_block(descriptor, &block, schema.lambda)
}

/// Appends a precomputed cue block `lambda` times.
pub fn augment_with_block(
    descriptor: &BinaryDescriptor,
    block: &BinaryDescriptor,
    lambda: u32,
) -> Result<BinaryDescriptor> {
    match block.repeat(lambda as usize) {
        None => Ok(descriptor.clone()),
        Some(repeated) => BinaryDescriptor::concat([descriptor, &repeated]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::cue::encode_continuous;

    fn bits(s: &str) -> BinaryDescriptor {
        BinaryDescriptor::from_bits(&s.bytes().map(|b| b == b'1').collect::<Vec<_>>()).unwrap()
    }

    fn continuous(name: &str, intervals: u32) -> NamedCue {
        NamedCue::new(
            name,
            CueSpec::Continuous(ContinuousCueSpec::new(1.0, 0.0, intervals).unwrap()),
        )
    }

    #[test]
    fn keypoint_composite() {
        // I_u = 5, I_v = 3, keypoint in the third column and bottom row
        let schema = CueSchema::keypoint(500, 300, 5, 3, 1).unwrap().with_padding(false);
        let values = [CueValue::Continuous(250.0), CueValue::Continuous(250.0)];
        assert_eq!(encode_cues(&values, &schema).unwrap(), bits("110011"));
        let padded = schema.with_padding(true);
        assert_eq!(encode_cues(&values, &padded).unwrap(), bits("11001100"));
    }

    #[test]
    fn schema_validation() {
        assert!(CueSchema::new(vec![], 1, true).is_err());
        assert!(CueSchema::new(vec![continuous("a", 4), continuous("a", 4)], 1, true).is_err());
        let bad = NamedCue::new(
            "x",
            CueSpec::Continuous(ContinuousCueSpec {
                alpha: 1.0,
                beta: 0.0,
                intervals: 1,
            }),
        );
        assert!(CueSchema::new(vec![bad], 1, true).is_err());
    }

    #[test]
    fn arity_and_kind_errors() {
        let schema = CueSchema::new(vec![continuous("a", 4)], 1, false).unwrap();
        assert!(matches!(
            encode_cues(&[], &schema),
            Err(Error::CueArity { expected: 1, found: 0 })
        ));
        assert!(matches!(
            encode_cues(&[CueValue::Selector(1)], &schema),
            Err(Error::CueKind { .. })
        ));
    }

    #[test]
    fn block_sizes() {
        let kc = CueSchema::keypoint(640, 480, 8, 8, 1).unwrap();
        assert_eq!(kc.unpadded_block_bits(), 14);
        assert_eq!(kc.block_bits(), 16);
        assert_eq!(kc.augmented_bits(256), 272);
        assert_eq!(kc.with_lambda(0).augmented_bits(256), 256);
        let sl = CueSchema::semantic_label(12, 2).unwrap();
        assert_eq!(sl.block_bits(), 16);
        assert_eq!(sl.selector_count(), 1);
        assert_eq!(sl.continuous_block_bits(), 0);
    }

    #[test]
    fn lambda_zero_is_identity() {
        let schema = CueSchema::keypoint(640, 480, 8, 8, 0).unwrap();
        let d = bits("1011001110");
        let out = augment(&d, &[CueValue::Continuous(3.0), CueValue::Continuous(470.0)], &schema)
            .unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn weighted_distance_example() {
        // descriptors 10 apart, cue blocks 3 apart, lambda 2 -> 16
        let d = BinaryDescriptor::zeros(40).unwrap();
        let d2 = (0..10).fold(d.clone(), |acc, i| acc.with_flipped(i * 3));
        let schema = CueSchema::new(vec![continuous("c", 8)], 2, true).unwrap();
        let v = [CueValue::Continuous(0.05)];
        let v2 = [CueValue::Continuous(0.45)];
        assert_eq!(
            encode_cues(&v, &schema)
                .unwrap()
                .hamming(&encode_cues(&v2, &schema).unwrap())
                .unwrap(),
            3
        );
        let a = augment(&d, &v, &schema).unwrap();
        let b = augment(&d2, &v2, &schema).unwrap();
        assert_eq!(a.hamming(&b).unwrap(), 16);
    }

    #[test]
    fn block_distance_is_manhattan_in_steps() {
        let schema =
            CueSchema::new(vec![continuous("a", 4), continuous("b", 6)], 1, true).unwrap();
        let grid_a: Vec<f64> = (0..4).map(|k| (k as f64 + 0.5) / 4.0).collect();
        let grid_b: Vec<f64> = (0..6).map(|k| (k as f64 + 0.5) / 6.0).collect();
        for (i, &a) in grid_a.iter().enumerate() {
            for (j, &b) in grid_b.iter().enumerate() {
                for (i2, &a2) in grid_a.iter().enumerate() {
                    for (j2, &b2) in grid_b.iter().enumerate() {
                        let x = encode_cues(
                            &[CueValue::Continuous(a), CueValue::Continuous(b)],
                            &schema,
                        )
                        .unwrap();
                        let y = encode_cues(
                            &[CueValue::Continuous(a2), CueValue::Continuous(b2)],
                            &schema,
                        )
                        .unwrap();
                        let k = i.abs_diff(i2) + j.abs_diff(j2);
                        assert_eq!(x.hamming(&y).unwrap() as usize, k);
                    }
                }
            }
        }
        assert_eq!(encode_continuous(grid_a[3], 4).unwrap().count_ones(), 3);
    }

    #[test]
    fn toml_round_trip() {
        let schema = CueSchema::new(
            vec![
                NamedCue::new(
                    "u",
                    CueSpec::Continuous(ContinuousCueSpec::new(1.0 / 1241.0, 0.0, 8).unwrap()),
                ),
                NamedCue::new("label", CueSpec::Selector(SelectorCueSpec::new(12).unwrap())),
            ],
            16,
            false,
        )
        .unwrap();
        let text = schema.to_toml();
        assert_eq!(CueSchema::from_toml(&text).unwrap(), schema);
        assert!(text.contains("kind = \"selector\""));
    }

    #[test]
    fn toml_rejects_invalid_documents() {
        let doc = "lambda = 1\n[[cues]]\nname = \"x\"\nkind = \"selector\"\ncardinality = 1\n";
        assert!(CueSchema::from_toml(doc).is_err());
        assert!(CueSchema::from_toml("lambda = 1\ncues = []\n").is_err());
    }
}
