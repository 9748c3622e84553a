//! Name-keyed registry of interchangeable strategies.
//!
//! Correlation estimators, extraction methods and retention criteria are
//! each registered under a stable name and looked up at runtime from
//! configuration or command-line flags.

use crate::error::{Error, Result};

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(String, Box<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Registers `strategy` under `name`, replacing any previous entry of
    /// the same name while keeping its position.
    pub fn register(&mut self, name: impl Into<String>, strategy: Box<T>) -> &mut Self {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = strategy,
            None => self.entries.push((name, strategy)),
        }
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    /// Names in registration order.
    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &T)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), s.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }
    struct Hello(&'static str);
    impl Greeter for Hello {
        fn greet(&self) -> String {
            self.0.to_string()
        }
    }

    #[test]
    fn lookup_replace_and_unknown() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register("a", Box::new(Hello("one")))
            .register("b", Box::new(Hello("two")));
        reg.register("a", Box::new(Hello("three")));
        assert_eq!(reg.names(), vec!["a", "b"]);
        assert_eq!(reg.get("a").unwrap().greet(), "three");
        let err = reg.get("zzz").err().unwrap().to_string();
        assert!(err.contains("unknown greeter `zzz`"), "{err}");
        assert!(err.contains("a, b"));
    }
}
