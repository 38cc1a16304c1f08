//! Declarative payload schemas and the validator that applies them.
//!
//! Schemas are data (see `assets/schemas.json`): per-operation required and
//! optional fields, type tags, closed enumerations, and a couple of
//! cross-field rules. Unknown fields are always rejected.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::Deserialize;
use serde_json::Value;

use crate::{Error, FieldError, Result};

const BUILTIN: &str = include_str!("../assets/schemas.json");

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum FieldType {
    String {
        #[serde(default)]
        nonempty: bool,
    },
    Number,
    Bool,
    Date,
    Enum {
        values: Vec<String>,
    },
    List {
        items: Box<FieldSpec>,
    },
    Object {
        fields: BTreeMap<String, FieldSpec>,
    },
    Map {
        keys: String,
        values: Box<FieldSpec>,
    },
}

#[derive(Debug, Clone, Deserialize)]
struct FieldSpec {
    #[serde(flatten)]
    ty: FieldType,
    #[serde(default)]
    optional: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Rule {
    /// The named date field must not lie after today.
    NotFuture(String),
    /// `field` must be absent while boolean `flag` is true.
    AbsentWhenTrue { field: String, flag: String },
}

#[derive(Debug, Clone, Deserialize)]
struct Schema {
    fields: BTreeMap<String, FieldSpec>,
    #[serde(default)]
    rules: Vec<Rule>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SchemaSet {
    version: u32,
    #[serde(default)]
    key_sets: BTreeMap<String, BTreeSet<String>>,
    schemas: BTreeMap<String, Schema>,
}

impl SchemaSet {
    /// The schemas shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("bundled schema asset is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: SchemaSet = serde_json::from_str(text).map_err(|e| Error::Internal(format!("schema asset: {e}")))?;
        set.check_key_sets()?;
        Ok(set)
    }

    fn check_key_sets(&self) -> Result<()> {
        fn walk(field: &FieldSpec, sets: &BTreeMap<String, BTreeSet<String>>) -> Result<()> {
            match &field.ty {
                FieldType::List { items } => walk(items, sets),
                FieldType::Object { fields } => fields.values().try_for_each(|f| walk(f, sets)),
                FieldType::Map { keys, values } => {
                    if !sets.contains_key(keys) {
                        return Err(Error::Internal(format!("schema asset: unknown key set {keys:?}")));
                    }
                    walk(values, sets)
                }
                _ => Ok(()),
            }
        }
        self.schemas
            .values()
            .flat_map(|s| s.fields.values())
            .try_for_each(|f| walk(f, &self.key_sets))
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Replaces a named key set, e.g. to configure the vitals whitelist.
    pub fn set_key_set(&mut self, name: &str, keys: impl IntoIterator<Item = String>) {
        self.key_sets.insert(name.to_owned(), keys.into_iter().collect());
    }

    pub fn key_set(&self, name: &str) -> Option<&BTreeSet<String>> {
        self.key_sets.get(name)
    }

    pub fn has_schema(&self, id: &str) -> bool {
        self.schemas.contains_key(id)
    }

    /// Validates `payload` against schema `id`. `today` anchors the
    /// not-in-the-future rule. Returns every violation found, not just the
    /// first.
    pub fn validate(&self, id: &str, payload: &Value, today: NaiveDate) -> Result<()> {
        let schema = self
            .schemas
            .get(id)
            .ok_or_else(|| Error::Internal(format!("no schema named {id:?}")))?;
        let mut errs = Vec::new();
        // an absent body is the same as an empty object
        let empty = Value::Object(Default::default());
        let payload = if payload.is_null() { &empty } else { payload };
        self.check_object(&schema.fields, payload, "", &mut errs);
        if errs.is_empty() {
            if let Value::Object(map) = payload {
                check_rules(&schema.rules, map, today, &mut errs);
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    fn check_object(&self, fields: &BTreeMap<String, FieldSpec>, v: &Value, path: &str, errs: &mut Vec<FieldError>) {
        let Value::Object(map) = v else {
            errs.push(FieldError::new(display_path(path), "expected an object"));
            return;
        };
        for key in map.keys().filter(|k| !fields.contains_key(*k)) {
            errs.push(FieldError::new(join(path, key), "unknown field"));
        }
        for (name, field) in fields {
            let p = join(path, name);
            match map.get(name) {
                None | Some(Value::Null) if field.optional => {}
                None | Some(Value::Null) => errs.push(FieldError::new(p, "required field missing")),
                Some(value) => self.check_value(field, value, &p, errs),
            }
        }
    }

    fn check_value(&self, field: &FieldSpec, v: &Value, path: &str, errs: &mut Vec<FieldError>) {
        let mut fail = |msg: String| errs.push(FieldError::new(path, msg));
        match &field.ty {
            FieldType::String { nonempty } => match v.as_str() {
                None => fail("expected a string".into()),
                Some(s) if *nonempty && s.trim().is_empty() => fail("must not be empty".into()),
                Some(_) => {}
            },
            FieldType::Number => {
                if !v.as_f64().is_some_and(f64::is_finite) {
                    fail("expected a finite number".into());
                }
            }
            FieldType::Bool => {
                if !v.is_boolean() {
                    fail("expected true or false".into());
                }
            }
            FieldType::Date => match v.as_str() {
                Some(s) if parse_date(s).is_some() => {}
                Some(s) => fail(format!("{s:?} is not a calendar date (YYYY-MM-DD)")),
                None => fail("expected a date string".into()),
            },
            FieldType::Enum { values } => match v.as_str() {
                Some(s) if values.iter().any(|x| x == s) => {}
                _ => fail(format!("expected one of: {}", values.join(", "))),
            },
            FieldType::List { items } => match v.as_array() {
                None => fail("expected a list".into()),
                Some(arr) => {
                    for (i, item) in arr.iter().enumerate() {
                        self.check_value(items, item, &format!("{path}[{i}]"), errs);
                    }
                }
            },
            FieldType::Object { fields } => self.check_object(fields, v, path, errs),
            FieldType::Map { keys, values } => match v.as_object() {
                None => fail("expected an object".into()),
                Some(map) => {
                    let allowed = self.key_sets.get(keys);
                    for (k, item) in map {
                        let p = join(path, k);
                        if allowed.is_some_and(|a| a.contains(k)) {
                            self.check_value(values, item, &p, errs);
                        } else {
                            errs.push(FieldError::new(p, format!("key not in the {keys} whitelist")));
                        }
                    }
                }
            },
        }
    }
}

fn check_rules(rules: &[Rule], map: &serde_json::Map<String, Value>, today: NaiveDate, errs: &mut Vec<FieldError>) {
    for rule in rules {
        match rule {
            Rule::NotFuture(field) => {
                if let Some(d) = map.get(field).and_then(Value::as_str).and_then(parse_date) {
                    if d > today {
                        errs.push(FieldError::new(field.clone(), "date lies in the future"));
                    }
                }
            }
            Rule::AbsentWhenTrue { field, flag } => {
                let flagged = map.get(flag).and_then(Value::as_bool) == Some(true);
                let present = map.get(field).is_some_and(|v| !v.is_null());
                if flagged && present {
                    errs.push(FieldError::new(
                        field.clone(),
                        format!("must be absent while {flag} is true"),
                    ));
                }
            }
        }
    }
}

/// Strict ISO calendar date, `YYYY-MM-DD`.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    if s.len() != 10 {
        return None;
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_owned()
    } else {
        format!("{path}.{key}")
    }
}

fn display_path(path: &str) -> &str {
    if path.is_empty() {
        "$"
    } else {
        path
    }
}
