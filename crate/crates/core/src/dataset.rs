//! Multimodal dataset model and its line-oriented JSON file format.
//!
//! A dataset file is UTF-8 with `\n` line endings and one JSON value per
//! line: the first line is the schema, every following line one instance.
//! Absent modalities are encoded as `null`, never as zero vectors. The
//! loader validates instead of repairing: unknown keys, duplicate ids,
//! dimension mismatches and out-of-range labels are all hard errors naming
//! the offending line. Feature values are written as shortest round-trip
//! decimals, so save → load → save is byte-identical.

use std::fmt;
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Multiclass,
    Multilabel,
}

impl Task {
    fn as_str(&self) -> &'static str {
        match self {
            Task::Multiclass => "multiclass",
            Task::Multilabel => "multilabel",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One configured modality: name plus raw feature dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityDef {
    pub name: String,
    pub dim: usize,
}

/// Identifier of a modality within a schema; `index` is 1-based to match
/// the usual "modality m" numbering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityId {
    pub name: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub modalities: Vec<ModalityDef>,
    pub num_classes: usize,
    pub task: Task,
}

impl Schema {
    pub fn new(modalities: Vec<ModalityDef>, num_classes: usize, task: Task) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::Config("schema needs at least one modality".into()));
        }
        for (i, m) in modalities.iter().enumerate() {
            if m.dim == 0 {
                return Err(Error::Config(format!("modality {} has dim 0", m.name)));
            }
            if modalities[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::Config(format!("duplicate modality name {}", m.name)));
            }
        }
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        Ok(Schema {
            modalities,
            num_classes,
            task,
        })
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    /// 0-based position of a modality by name.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m.name == name)
    }

    pub fn modality_id(&self, name: &str) -> Result<ModalityId> {
        let pos = self
            .position(name)
            .ok_or_else(|| Error::Config(format!("unknown modality {name}")))?;
        Ok(ModalityId {
            name: name.to_string(),
            index: pos + 1,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Class(usize),
    Set(Vec<usize>),
}

impl Label {
    pub fn classes(&self) -> Vec<usize> {
        match self {
            Label::Class(c) => vec![*c],
            Label::Set(s) => s.clone(),
        }
    }
}

/// One data instance: per-modality feature vectors in schema order, with
/// `None` marking an absent modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub label: Label,
    pub features: Vec<Option<Vec<f64>>>,
}

impl Instance {
    pub fn present(&self, modality: usize) -> bool {
        self.features[modality].is_some()
    }

    pub fn presence_mask(&self) -> Vec<bool> {
        self.features.iter().map(|f| f.is_some()).collect()
    }

    fn validate(&self, schema: &Schema, at: &str) -> Result<()> {
        if self.features.len() != schema.n_modalities() {
            return Err(Error::Data(format!(
                "{at}: instance {} has {} feature slots for {} modalities",
                self.id,
                self.features.len(),
                schema.n_modalities()
            )));
        }
        let mut any = false;
        for (m, feat) in self.features.iter().enumerate() {
            if let Some(v) = feat {
                any = true;
                let want = schema.modalities[m].dim;
                if v.len() != want {
                    return Err(Error::Data(format!(
                        "{at}: instance {} modality {} has {} values, expected {}",
                        self.id,
                        schema.modalities[m].name,
                        v.len(),
                        want
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Data(format!(
                        "{at}: instance {} modality {} has a non-finite value",
                        self.id, schema.modalities[m].name
                    )));
                }
            }
        }
        if !any {
            return Err(Error::Data(format!(
                "{at}: instance {} has no present modality",
                self.id
            )));
        }
        match (&self.label, schema.task) {
            (Label::Class(c), Task::Multiclass) => {
                if *c >= schema.num_classes {
                    return Err(Error::Data(format!(
                        "{at}: instance {} label {} out of range (num_classes {})",
                        self.id, c, schema.num_classes
                    )));
                }
            }
            (Label::Set(s), Task::Multilabel) => {
                for c in s {
                    if *c >= schema.num_classes {
                        return Err(Error::Data(format!(
                            "{at}: instance {} label {} out of range (num_classes {})",
                            self.id, c, schema.num_classes
                        )));
                    }
                }
                let mut seen = vec![false; schema.num_classes];
                for c in s {
                    if seen[*c] {
                        return Err(Error::Data(format!(
                            "{at}: instance {} repeats label {}",
                            self.id, c
                        )));
                    }
                    seen[*c] = true;
                }
            }
            (Label::Set(_), Task::Multiclass) => {
                return Err(Error::Data(format!(
                    "{at}: instance {} has a label set in a multiclass dataset",
                    self.id
                )));
            }
            (Label::Class(_), Task::Multilabel) => {
                return Err(Error::Data(format!(
                    "{at}: instance {} has a scalar label in a multilabel dataset",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Ordered, schema-conforming collection of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(schema: Schema, instances: Vec<Instance>) -> Result<Self> {
        let ds = Dataset { schema, instances };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for (i, inst) in self.instances.iter().enumerate() {
            inst.validate(&self.schema, &format!("record {}", i + 1))?;
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::Data(format!(
                    "record {}: duplicate id {}",
                    i + 1,
                    inst.id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

fn json_number(x: f64) -> Result<Value> {
    Number::from_f64(x)
        .map(Value::Number)
        .ok_or_else(|| Error::Data(format!("non-finite value {x} cannot be serialized")))
}

fn schema_to_json(schema: &Schema) -> Result<Value> {
    let mut mods = Map::new();
    for m in &schema.modalities {
        mods.insert(m.name.clone(), Value::Number(Number::from(m.dim as u64)));
    }
    let mut obj = Map::new();
    obj.insert("modalities".into(), Value::Object(mods));
    obj.insert(
        "num_classes".into(),
        Value::Number(Number::from(schema.num_classes as u64)),
    );
    obj.insert("task".into(), Value::String(schema.task.as_str().into()));
    Ok(Value::Object(obj))
}

fn instance_to_json(inst: &Instance, schema: &Schema) -> Result<Value> {
    let mut obj = Map::new();
    obj.insert("id".into(), Value::String(inst.id.clone()));
    let label = match &inst.label {
        Label::Class(c) => Value::Number(Number::from(*c as u64)),
        Label::Set(s) => Value::Array(
            s.iter()
                .map(|c| Value::Number(Number::from(*c as u64)))
                .collect(),
        ),
    };
    obj.insert("label".into(), label);
    let mut feats = Map::new();
    for (m, def) in schema.modalities.iter().enumerate() {
        let v = match &inst.features[m] {
            None => Value::Null,
            Some(vals) => Value::Array(vals.iter().map(|x| json_number(*x)).collect::<Result<_>>()?),
        };
        feats.insert(def.name.clone(), v);
    }
    obj.insert("features".into(), Value::Object(feats));
    Ok(Value::Object(obj))
}

/// Serialize a dataset to its canonical file text.
pub fn to_jsonl(dataset: &Dataset) -> Result<String> {
    let mut out = String::new();
    out.push_str(&schema_to_json(&dataset.schema)?.to_string());
    out.push('\n');
    for inst in &dataset.instances {
        out.push_str(&instance_to_json(inst, &dataset.schema)?.to_string());
        out.push('\n');
    }
    Ok(out)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_jsonl(dataset)?)?;
    Ok(())
}

fn expect_object<'v>(v: &'v Value, line: usize, what: &str) -> Result<&'v Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::Data(format!("line {line}: {what} must be a JSON object")))
}

fn reject_unknown_keys(obj: &Map<String, Value>, allowed: &[&str], line: usize) -> Result<()> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::Data(format!("line {line}: unknown key \"{k}\"")));
        }
    }
    for k in allowed {
        if !obj.contains_key(*k) {
            return Err(Error::Data(format!("line {line}: missing key \"{k}\"")));
        }
    }
    Ok(())
}

fn parse_usize(v: &Value, line: usize, what: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::Data(format!("line {line}: {what} must be a non-negative integer")))
}

fn parse_schema(text: &str, line: usize) -> Result<Schema> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| Error::Data(format!("line {line}: malformed JSON: {e}")))?;
    let obj = expect_object(&v, line, "schema")?;
    reject_unknown_keys(obj, &["modalities", "num_classes", "task"], line)?;
    let mods = expect_object(&obj["modalities"], line, "modalities")?;
    let mut modalities = Vec::new();
    for (name, dim) in mods {
        modalities.push(ModalityDef {
            name: name.clone(),
            dim: parse_usize(dim, line, &format!("modality {name} dim"))?,
        });
    }
    let num_classes = parse_usize(&obj["num_classes"], line, "num_classes")?;
    let task = match obj["task"].as_str() {
        Some("multiclass") => Task::Multiclass,
        Some("multilabel") => Task::Multilabel,
        _ => {
            return Err(Error::Data(format!(
                "line {line}: task must be \"multiclass\" or \"multilabel\""
            )))
        }
    };
    Schema::new(modalities, num_classes, task)
        .map_err(|e| Error::Data(format!("line {line}: {e}")))
}

fn parse_instance(text: &str, schema: &Schema, line: usize) -> Result<Instance> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| Error::Data(format!("line {line}: malformed JSON: {e}")))?;
    let obj = expect_object(&v, line, "record")?;
    reject_unknown_keys(obj, &["id", "label", "features"], line)?;
    let id = obj["id"]
        .as_str()
        .ok_or_else(|| Error::Data(format!("line {line}: id must be a string")))?
        .to_string();
    let label = match (&obj["label"], schema.task) {
        (Value::Number(_), Task::Multiclass) => {
            Label::Class(parse_usize(&obj["label"], line, "label")?)
        }
        (Value::Array(items), Task::Multilabel) => {
            let classes = items
                .iter()
                .map(|i| parse_usize(i, line, "label entry"))
                .collect::<Result<Vec<_>>>()?;
            Label::Set(classes)
        }
        (_, Task::Multiclass) => {
            return Err(Error::Data(format!(
                "line {line}: multiclass label must be an integer"
            )))
        }
        (_, Task::Multilabel) => {
            return Err(Error::Data(format!(
                "line {line}: multilabel label must be an array"
            )))
        }
    };
    let feats = expect_object(&obj["features"], line, "features")?;
    let names: Vec<&str> = schema.modalities.iter().map(|m| m.name.as_str()).collect();
    reject_unknown_keys(feats, &names, line)?;
    let mut features = Vec::with_capacity(schema.n_modalities());
    for def in &schema.modalities {
        let entry = &feats[&def.name];
        match entry {
            Value::Null => features.push(None),
            Value::Array(items) => {
                let mut vals = Vec::with_capacity(items.len());
                for item in items {
                    let x = item.as_f64().ok_or_else(|| {
                        Error::Data(format!(
                            "line {line}: modality {} has a non-numeric value",
                            def.name
                        ))
                    })?;
                    vals.push(x);
                }
                features.push(Some(vals));
            }
            _ => {
                return Err(Error::Data(format!(
                    "line {line}: modality {} must be an array or null",
                    def.name
                )))
            }
        }
    }
    let inst = Instance {
        id,
        label,
        features,
    };
    inst.validate(schema, &format!("line {line}"))?;
    Ok(inst)
}

/// Parse a dataset from file text.
pub fn from_jsonl(text: &str) -> Result<Dataset> {
    let mut lines = text.split('\n').collect::<Vec<_>>();
    // a single trailing newline terminates the last record
    if lines.last() == Some(&"") {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(Error::Data("line 1: missing schema line".into()));
    }
    let schema = parse_schema(lines[0], 1)?;
    let mut instances = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, text) in lines.iter().enumerate().skip(1) {
        let line = i + 1;
        if text.trim().is_empty() {
            return Err(Error::Data(format!("line {line}: blank line")));
        }
        let inst = parse_instance(text, &schema, line)?;
        if !seen.insert(inst.id.clone()) {
            return Err(Error::Data(format!(
                "line {line}: duplicate id {}",
                inst.id
            )));
        }
        instances.push(inst);
    }
    Ok(Dataset { schema, instances })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    from_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(
            vec![
                ModalityDef {
                    name: "text".into(),
                    dim: 2,
                },
                ModalityDef {
                    name: "image".into(),
                    dim: 3,
                },
            ],
            3,
            Task::Multiclass,
        )
        .unwrap()
    }

    fn sample_text() -> String {
        concat!(
            r#"{"modalities":{"text":2,"image":3},"num_classes":3,"task":"multiclass"}"#,
            "\n",
            r#"{"id":"a","label":0,"features":{"text":[1.0,2.0],"image":[0.5,-1.25,3.0]}}"#,
            "\n",
            r#"{"id":"b","label":2,"features":{"text":null,"image":[0.1,0.2,0.3]}}"#,
            "\n"
        )
        .to_string()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ds = from_jsonl(&sample_text()).unwrap();
        let saved = to_jsonl(&ds).unwrap();
        assert_eq!(saved, sample_text());
        let reloaded = from_jsonl(&saved).unwrap();
        assert_eq!(reloaded, ds);
    }

    #[test]
    fn empty_instance_list_is_valid() {
        let ds =
            from_jsonl("{\"modalities\":{\"text\":2},\"num_classes\":2,\"task\":\"multiclass\"}\n")
                .unwrap();
        assert_eq!(ds.len(), 0);
    }

    #[test]
    fn null_encodes_absent_modality() {
        let ds = from_jsonl(&sample_text()).unwrap();
        assert_eq!(ds.instances[1].presence_mask(), vec![false, true]);
    }

    #[test]
    fn unknown_key_rejected_with_line_number() {
        let bad = sample_text().replace("\"label\":2", "\"label\":2,\"extra\":1");
        let err = from_jsonl(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("extra"), "{msg}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let bad = sample_text().replace("\"id\":\"b\"", "\"id\":\"a\"");
        let err = from_jsonl(&bad).unwrap_err().to_string();
        assert!(err.contains("duplicate id a"), "{err}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let bad = sample_text().replace("[1.0,2.0]", "[1.0,2.0,9.0]");
        let err = from_jsonl(&bad).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("expected 2"), "{err}");
    }

    #[test]
    fn label_out_of_range_rejected() {
        let bad = sample_text().replace("\"label\":2", "\"label\":7");
        let err = from_jsonl(&bad).unwrap_err().to_string();
        assert!(err.contains("out of range"), "{err}");
    }

    #[test]
    fn all_absent_rejected() {
        let bad = sample_text().replace("[0.1,0.2,0.3]", "null");
        let err = from_jsonl(&bad).unwrap_err().to_string();
        assert!(err.contains("no present modality"), "{err}");
    }

    #[test]
    fn blank_interior_line_rejected() {
        let bad = sample_text().replace(
            "\n{\"id\":\"b\"",
            "\n\n{\"id\":\"b\"",
        );
        let err = from_jsonl(&bad).unwrap_err().to_string();
        assert!(err.contains("blank line"), "{err}");
    }

    #[test]
    fn multilabel_labels_parse_and_roundtrip() {
        let text = concat!(
            r#"{"modalities":{"text":2},"num_classes":3,"task":"multilabel"}"#,
            "\n",
            r#"{"id":"a","label":[0,2],"features":{"text":[1.0,2.0]}}"#,
            "\n"
        );
        let ds = from_jsonl(text).unwrap();
        assert_eq!(ds.instances[0].label, Label::Set(vec![0, 2]));
        assert_eq!(to_jsonl(&ds).unwrap(), text);
    }

    #[test]
    fn modality_id_is_one_based() {
        let s = schema();
        assert_eq!(s.modality_id("image").unwrap().index, 2);
        assert!(s.modality_id("audio").is_err());
    }

    #[test]
    fn scalar_label_in_multilabel_rejected() {
        let text = concat!(
            r#"{"modalities":{"text":2},"num_classes":3,"task":"multilabel"}"#,
            "\n",
            r#"{"id":"a","label":1,"features":{"text":[1.0,2.0]}}"#,
            "\n"
        );
        assert!(from_jsonl(text).is_err());
    }
}
