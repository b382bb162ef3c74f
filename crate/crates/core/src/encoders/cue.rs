use serde::{Deserialize, Serialize};

use crate::bitvec::BinaryDescriptor;
use crate::error::{Error, Result};

/// Largest `f64` strictly below one; the top of the normalized cue range.
pub const MAX_BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Real-valued cue, mapped into `[0, 1)` by `alpha * c + beta` and split
/// into `intervals` even bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawContinuous")]
pub struct ContinuousCueSpec {
    pub alpha: f64,
    pub beta: f64,
    pub intervals: u32,
}

#[derive(Deserialize)]
struct RawContinuous {
    alpha: f64,
    beta: f64,
    intervals: u32,
}

impl TryFrom<RawContinuous> for ContinuousCueSpec {
    type Error = Error;

    fn try_from(raw: RawContinuous) -> Result<Self> {
        Self::new(raw.alpha, raw.beta, raw.intervals)
    }
}

impl ContinuousCueSpec {
    pub fn new(alpha: f64, beta: f64, intervals: u32) -> Result<Self> {
        if intervals < 2 {
            return Err(Error::InvalidSpec(format!(
                "continuous cue needs at least 2 intervals, got {intervals}"
            )));
        }
        if alpha == 0.0 || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "affine map needs finite non-zero alpha and finite beta, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            intervals,
        })
    }

    /// Spec for a coordinate in `[0, extent)` pixels.
    pub fn pixel_axis(extent: u32, intervals: u32) -> Result<Self> {
        if extent == 0 {
            return Err(Error::InvalidSpec("image extent must be positive".into()));
        }
        Self::new(1.0 / f64::from(extent), 0.0, intervals)
    }

    pub fn bits(&self) -> usize {
        self.intervals as usize - 1
    }
}

/// Categorical cue with values `0..cardinality`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSelector")]
pub struct SelectorCueSpec {
    pub cardinality: u32,
}

#[derive(Deserialize)]
struct RawSelector {
    cardinality: u32,
}

impl TryFrom<RawSelector> for SelectorCueSpec {
    type Error = Error;

    fn try_from(raw: RawSelector) -> Result<Self> {
        Self::new(raw.cardinality)
    }
}

impl SelectorCueSpec {
    pub fn new(cardinality: u32) -> Result<Self> {
        if cardinality < 2 {
            return Err(Error::InvalidSpec(format!(
                "selector cue needs cardinality of at least 2, got {cardinality}"
            )));
        }
        Ok(Self { cardinality })
    }

    pub fn bits(&self) -> usize {
        self.cardinality as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CueSpec {
    Continuous(ContinuousCueSpec),
    Selector(SelectorCueSpec),
}

impl CueSpec {
    pub fn bits(&self) -> usize {
        match self {
            CueSpec::Continuous(s) => s.bits(),
            CueSpec::Selector(s) => s.bits(),
        }
    }

    pub fn kind(&self) -> CueKind {
        match self {
            CueSpec::Continuous(_) => CueKind::Continuous,
            CueSpec::Selector(_) => CueKind::Selector,
        }
    }

    /// Encodes one raw value. Continuous values are normalized first.
    pub fn encode(&self, value: CueValue) -> Result<BinaryDescriptor> {
        match (self, value) {
            (CueSpec::Continuous(spec), CueValue::Continuous(c)) => {
                encode_continuous(normalize(c, spec)?, spec.intervals)
            }
            (CueSpec::Selector(spec), CueValue::Selector(i)) => {
                encode_selector(i, spec.cardinality)
            }
            (spec, _) => Err(Error::CueKind {
                name: String::new(),
                expected: spec.kind().as_str(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueKind {
    Continuous,
    Selector,
}

impl CueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CueKind::Continuous => "continuous",
            CueKind::Selector => "selector",
        }
    }
}

/// Raw per-feature cue value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CueValue {
    Continuous(f64),
    Selector(u32),
}

impl CueValue {
    pub fn kind(&self) -> CueKind {
        match self {
            CueValue::Continuous(_) => CueKind::Continuous,
            CueValue::Selector(_) => CueKind::Selector,
        }
    }
}

/// Affine map into `[0, 1)`, clamping anything outside to the nearest end.
pub fn normalize(c: f64, spec: &ContinuousCueSpec) -> Result<f64> {
    if !c.is_finite() {
        return Err(Error::NonFiniteCue(c));
    }
    let mapped = spec.alpha * c + spec.beta;
    if mapped.is_nan() {
        return Err(Error::NonFiniteCue(mapped));
    }
    Ok(mapped.clamp(0.0, MAX_BELOW_ONE))
}

/// Number of thresholds `(i + 1) / intervals` strictly exceeded by `c`.
pub fn quantization_steps(c: f64, intervals: u32) -> usize {
    (0..intervals - 1)
        .filter(|&i| c > f64::from(i + 1) / f64::from(intervals))
        .count()
}

/// Thermometer code of `intervals - 1` bits for a normalized value.
pub fn encode_continuous(c: f64, intervals: u32) -> Result<BinaryDescriptor> {
    if intervals < 2 {
        return Err(Error::InvalidSpec(format!(
            "continuous cue needs at least 2 intervals, got {intervals}"
        )));
    }
    if !(0.0..1.0).contains(&c) {
        return Err(Error::CueOutOfRange { value: c });
    }
    let bits = intervals as usize - 1;
    BinaryDescriptor::from_fn(bits, |i| c > (i + 1) as f64 / f64::from(intervals))
}

/// One-hot code of `cardinality` bits.
pub fn encode_selector(index: u32, cardinality: u32) -> Result<BinaryDescriptor> {
    if cardinality < 2 {
        return Err(Error::InvalidSpec(format!(
            "selector cue needs cardinality of at least 2, got {cardinality}"
        )));
    }
    if index >= cardinality {
        return Err(Error::SelectorOutOfRange { index, cardinality });
    }
    BinaryDescriptor::from_fn(cardinality as usize, |i| i == index as usize)
}
