//! "simple" climate recipes: parsing, validation, compilation into per-variable
//! step functions, and setpoint lookup with hold semantics.
//!
//! A recipe document looks like
//!
//! ```json
//! {"_id": "7ca3134e91aec96acd17a74764000bb8",
//!  "format": "simple",
//!  "operations": [[0, "air_temperature", 25], [43200, "air_temperature", 23]]}
//! ```
//!
//! Each operation is `[offset_seconds, variable, value]`. A setpoint stays
//! active until the next setpoint for the same variable; the recipe ends at
//! its largest offset.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::variable::Variable;

pub const SIMPLE_FORMAT: &str = "simple";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecipeError {
    #[error("malformed recipe document{}: {detail}", at(*.index))]
    MalformedJson { index: Option<usize>, detail: String },
    #[error("unknown recipe format `{format}` (only \"simple\" is supported)")]
    UnknownFormat { format: String },
    #[error("recipe has no operations")]
    EmptyOperations,
    #[error("operation {index}: offset {offset} is smaller than previous offset {previous}")]
    UnsortedOffsets { index: usize, offset: u64, previous: u64 },
    #[error("operation {index}: unknown variable `{name}`")]
    UnknownVariable { index: usize, name: String },
    #[error("operation {index}: {variable} value {value} outside [{min}, {max}]")]
    ValueOutOfRange { index: usize, variable: Variable, value: f64, min: f64, max: f64 },
    #[error("operation {index}: duplicate setpoint for {variable} at offset {offset} (first at operation {first})")]
    DuplicateSetPoint { index: usize, first: usize, offset: u64, variable: Variable },
}

fn at(index: Option<usize>) -> String {
    index.map(|i| format!(" at operation {i}")).unwrap_or_default()
}

impl RecipeError {
    /// Stable machine-readable code, surfaced verbatim by the HTTP API.
    pub fn code(&self) -> &'static str {
        match self {
            RecipeError::MalformedJson { .. } => "malformed_json",
            RecipeError::UnknownFormat { .. } => "unknown_format",
            RecipeError::EmptyOperations => "empty_operations",
            RecipeError::UnsortedOffsets { .. } => "unsorted_offsets",
            RecipeError::UnknownVariable { .. } => "unknown_variable",
            RecipeError::ValueOutOfRange { .. } => "value_out_of_range",
            RecipeError::DuplicateSetPoint { .. } => "duplicate_set_point",
        }
    }

    /// Variant name, e.g. `EmptyOperations`.
    pub fn name(&self) -> &'static str {
        match self {
            RecipeError::MalformedJson { .. } => "MalformedJson",
            RecipeError::UnknownFormat { .. } => "UnknownFormat",
            RecipeError::EmptyOperations => "EmptyOperations",
            RecipeError::UnsortedOffsets { .. } => "UnsortedOffsets",
            RecipeError::UnknownVariable { .. } => "UnknownVariable",
            RecipeError::ValueOutOfRange { .. } => "ValueOutOfRange",
            RecipeError::DuplicateSetPoint { .. } => "DuplicateSetPoint",
        }
    }

    /// Index of the offending operation, when the error concerns one.
    pub fn index(&self) -> Option<usize> {
        match self {
            RecipeError::MalformedJson { index, .. } => *index,
            RecipeError::UnknownFormat { .. } | RecipeError::EmptyOperations => None,
            RecipeError::UnsortedOffsets { index, .. }
            | RecipeError::UnknownVariable { index, .. }
            | RecipeError::ValueOutOfRange { index, .. }
            | RecipeError::DuplicateSetPoint { index, .. } => Some(*index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetPoint {
    pub offset: u64,
    pub variable: Variable,
    pub value: f64,
}

/// A validated "simple" recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    id: String,
    operations: Vec<SetPoint>,
    /// Unknown top-level keys, kept so that round-tripping is lossless.
    extra: Map<String, Value>,
}

impl Recipe {
    /// Builds a recipe from setpoints, applying the same validation as
    /// [`parse_recipe`].
    pub fn new(id: impl Into<String>, operations: Vec<SetPoint>) -> Result<Recipe, RecipeError> {
        let id = id.into();
        if id.is_empty() {
            return Err(malformed(None, "`_id` must be a non-empty string"));
        }
        validate(&operations)?;
        Ok(Recipe { id, operations, extra: Map::new() })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn format(&self) -> &'static str {
        SIMPLE_FORMAT
    }

    pub fn operations(&self) -> &[SetPoint] {
        &self.operations
    }

    pub fn extra(&self) -> &Map<String, Value> {
        &self.extra
    }

    /// Largest offset, i.e. the time at which the recipe ends.
    pub fn duration(&self) -> u64 {
        self.operations.iter().map(|op| op.offset).max().unwrap_or(0)
    }
}

fn malformed(index: Option<usize>, detail: impl Into<String>) -> RecipeError {
    RecipeError::MalformedJson { index, detail: detail.into() }
}

fn validate(operations: &[SetPoint]) -> Result<(), RecipeError> {
    if operations.is_empty() {
        return Err(RecipeError::EmptyOperations);
    }
    let mut seen: BTreeMap<(u64, Variable), usize> = BTreeMap::new();
    let mut previous = 0;
    for (index, op) in operations.iter().enumerate() {
        if op.offset < previous {
            return Err(RecipeError::UnsortedOffsets { index, offset: op.offset, previous });
        }
        previous = op.offset;
        check_range(index, op.variable, op.value)?;
        if let Some(&first) = seen.get(&(op.offset, op.variable)) {
            return Err(RecipeError::DuplicateSetPoint {
                index,
                first,
                offset: op.offset,
                variable: op.variable,
            });
        }
        seen.insert((op.offset, op.variable), index);
    }
    Ok(())
}

fn check_range(index: usize, variable: Variable, value: f64) -> Result<(), RecipeError> {
    let d = variable.descriptor();
    if !(d.min..=d.max).contains(&value) {
        return Err(RecipeError::ValueOutOfRange { index, variable, value, min: d.min, max: d.max });
    }
    Ok(())
}

/// Parses and validates a recipe document.
///
/// Every rejection is a typed [`RecipeError`]; arbitrary input never panics.
pub fn parse_recipe(raw: &[u8]) -> Result<Recipe, RecipeError> {
    let text = std::str::from_utf8(raw).map_err(|e| malformed(None, format!("not UTF-8: {e}")))?;
    let doc: Value = serde_json::from_str(text).map_err(|e| malformed(None, e.to_string()))?;
    let Value::Object(mut obj) = doc else {
        return Err(malformed(None, "top level must be an object"));
    };

    let id = match obj.remove("_id") {
        Some(Value::String(s)) if !s.is_empty() => s,
        Some(_) => return Err(malformed(None, "`_id` must be a non-empty string")),
        None => return Err(malformed(None, "missing `_id`")),
    };
    match obj.remove("format") {
        Some(Value::String(s)) if s == SIMPLE_FORMAT => {}
        Some(Value::String(s)) => return Err(RecipeError::UnknownFormat { format: s }),
        Some(_) => return Err(malformed(None, "`format` must be a string")),
        None => return Err(malformed(None, "missing `format`")),
    }
    let raw_ops = match obj.remove("operations") {
        Some(Value::Array(ops)) => ops,
        Some(_) => return Err(malformed(None, "`operations` must be an array")),
        None => return Err(malformed(None, "missing `operations`")),
    };
    if raw_ops.is_empty() {
        return Err(RecipeError::EmptyOperations);
    }

    let mut operations = Vec::with_capacity(raw_ops.len());
    let mut previous = 0u64;
    for (index, raw_op) in raw_ops.iter().enumerate() {
        let op = parse_operation(index, raw_op)?;
        // ordering is reported before per-element semantics so a reordered
        // document is flagged as such
        if op.offset < previous {
            return Err(RecipeError::UnsortedOffsets { index, offset: op.offset, previous });
        }
        previous = op.offset;
        operations.push(op);
    }
    validate(&operations)?;
    Ok(Recipe { id, operations, extra: obj })
}

fn parse_operation(index: usize, raw: &Value) -> Result<SetPoint, RecipeError> {
    let Value::Array(items) = raw else {
        return Err(malformed(Some(index), "operation must be a [offset, variable, value] list"));
    };
    let [offset, variable, value] = items.as_slice() else {
        return Err(malformed(Some(index), format!("operation has {} elements, expected 3", items.len())));
    };
    let offset = match offset {
        Value::Number(n) => n
            .as_u64()
            .ok_or_else(|| malformed(Some(index), format!("offset {n} is not a non-negative integer")))?,
        _ => return Err(malformed(Some(index), "offset must be a number")),
    };
    let Value::String(name) = variable else {
        return Err(malformed(Some(index), "variable type must be a string"));
    };
    let variable = Variable::from_name(name)
        .ok_or_else(|| RecipeError::UnknownVariable { index, name: name.clone() })?;
    let value = match value {
        Value::Number(n) => n.as_f64().filter(|v| v.is_finite()),
        _ => None,
    }
    .ok_or_else(|| malformed(Some(index), "value must be a finite number"))?;
    check_range(index, variable, value)?;
    Ok(SetPoint { offset, variable, value })
}

/// Serializes a recipe back into its JSON document form. Extra top-level keys
/// captured at parse time are emitted after the three standard keys.
pub fn serialize_recipe(recipe: &Recipe) -> Vec<u8> {
    serde_json::to_vec(&recipe_to_value(recipe)).expect("recipe serializes")
}

pub fn recipe_to_value(recipe: &Recipe) -> Value {
    let mut obj = Map::new();
    obj.insert("_id".into(), Value::String(recipe.id.clone()));
    obj.insert("format".into(), Value::String(SIMPLE_FORMAT.into()));
    let ops = recipe
        .operations
        .iter()
        .map(|op| serde_json::json!([op.offset, op.variable.name(), op.value]))
        .collect();
    obj.insert("operations".into(), Value::Array(ops));
    for (k, v) in &recipe.extra {
        obj.insert(k.clone(), v.clone());
    }
    Value::Object(obj)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Step {
    offset: u64,
    value: f64,
    /// Position in the source operation list.
    ordinal: usize,
}

/// A recipe compiled into one step function per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct RecipeTimeline {
    recipe_id: String,
    steps: BTreeMap<Variable, Vec<Step>>,
    duration: u64,
}

/// Active setpoints at an instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSetpoints {
    pub values: BTreeMap<Variable, f64>,
    pub ended: bool,
}

pub fn compile(recipe: &Recipe) -> RecipeTimeline {
    let mut steps: BTreeMap<Variable, Vec<Step>> = BTreeMap::new();
    for (ordinal, op) in recipe.operations.iter().enumerate() {
        steps.entry(op.variable).or_default().push(Step { offset: op.offset, value: op.value, ordinal });
    }
    RecipeTimeline { recipe_id: recipe.id.clone(), steps, duration: recipe.duration() }
}

impl RecipeTimeline {
    pub fn recipe_id(&self) -> &str {
        &self.recipe_id
    }

    pub fn duration(&self) -> u64 {
        self.duration
    }

    pub fn variables(&self) -> impl Iterator<Item = Variable> + '_ {
        self.steps.keys().copied()
    }

    /// `(offset, value)` steps for one variable, strictly increasing in offset.
    pub fn steps(&self, variable: Variable) -> Vec<(u64, f64)> {
        self.steps
            .get(&variable)
            .map(|s| s.iter().map(|st| (st.offset, st.value)).collect())
            .unwrap_or_default()
    }

    /// Value of `variable` at `t`, if any setpoint for it has taken effect.
    pub fn value_at(&self, variable: Variable, t: u64) -> Option<f64> {
        let steps = self.steps.get(&variable)?;
        let n = steps.partition_point(|s| s.offset <= t);
        (n > 0).then(|| steps[n - 1].value)
    }

    pub fn setpoints_at(&self, t: u64) -> ActiveSetpoints {
        let values = self.steps.keys().filter_map(|&v| self.value_at(v, t).map(|x| (v, x))).collect();
        ActiveSetpoints { values, ended: t >= self.duration }
    }

    /// Reconstructs the source operation list.
    pub fn enumerate(&self) -> Vec<SetPoint> {
        let mut all: Vec<(usize, SetPoint)> = self
            .steps
            .iter()
            .flat_map(|(&variable, steps)| {
                steps.iter().map(move |s| (s.ordinal, SetPoint { offset: s.offset, variable, value: s.value }))
            })
            .collect();
        all.sort_by_key(|(ordinal, _)| *ordinal);
        all.into_iter().map(|(_, sp)| sp).collect()
    }
}

/// The sample document from the original "simple" format description, with
/// the elided tail closed off.
pub const SAMPLE_RECIPE_JSON: &str = r#"{"_id": "7ca3134e91aec96acd17a74764000bb8",
"format": "simple",
"operations": [
    [0, "air_temperature", 25],
    [0, "air_humidity", 25],
    [0, "light_illuminance", 60],
    [43200, "air_temperature", 23],
    [108000, "light_illuminance", 0],
    [172800, "air_humidity", 20]
]
}"#;
