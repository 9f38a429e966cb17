//! Name-keyed registries of interchangeable implementations.
//!
//! Dynamics models, target constraints, terminal costs and integration
//! schemes are all looked up by name at runtime (from the command line or a
//! problem document). Each registry maps a name to a factory that builds a
//! trait object from a JSON parameter block.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value;

use crate::error::{Error, Result};

pub type Factory<T> = fn(&Value) -> Result<Arc<T>>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Entry<T>>,
}

struct Entry<T: ?Sized> {
    summary: &'static str,
    factory: Factory<T>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, summary: &'static str, factory: Factory<T>) {
        self.entries
            .insert(name.to_ascii_lowercase(), Entry { summary, factory });
    }

    /// Builds the named entry. Names are matched case-insensitively.
    pub fn build(&self, name: &str, params: &Value) -> Result<Arc<T>> {
        let entry = self
            .entries
            .get(&name.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownName {
                kind: self.kind,
                name: name.to_string(),
            })?;
        (entry.factory)(params)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(&name.to_ascii_lowercase())
    }

    /// Registered names with their one-line summaries, in sorted order.
    pub fn list(&self) -> Vec<(&str, &'static str)> {
        self.entries
            .iter()
            .map(|(k, e)| (k.as_str(), e.summary))
            .collect()
    }
}

/// Reads an optional numeric array parameter.
pub(crate) fn param_vec(params: &Value, key: &str) -> Result<Option<Vec<f64>>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Error::InvalidInput(format!("parameter '{key}': {e}"))),
    }
}

pub(crate) fn param_f64(params: &Value, key: &str) -> Result<Option<f64>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::InvalidInput(format!("parameter '{key}' must be a number"))),
    }
}

pub(crate) fn param_matrix(params: &Value, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Error::InvalidInput(format!("parameter '{key}': {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Send + Sync {
        fn greet(&self) -> String;
    }

    struct Hello;
    impl Greeter for Hello {
        fn greet(&self) -> String {
            "hello".into()
        }
    }

    #[test]
    fn lookup_is_case_insensitive() {
        let mut r: Registry<dyn Greeter> = Registry::new("greeter");
        r.register("Hello", "says hello", |_| Ok(Arc::new(Hello)));
        assert!(r.contains("HELLO"));
        assert_eq!(r.build("hello", &Value::Null).unwrap().greet(), "hello");
        assert_eq!(r.list(), vec![("hello", "says hello")]);
    }

    #[test]
    fn unknown_name_is_reported() {
        let r: Registry<dyn Greeter> = Registry::new("greeter");
        match r.build("nope", &Value::Null) {
            Err(Error::UnknownName { kind, name }) => {
                assert_eq!(kind, "greeter");
                assert_eq!(name, "nope");
            }
            _ => panic!("expected UnknownName"),
        }
    }
}
