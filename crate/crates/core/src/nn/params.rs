//! Named parameter storage.
//!
//! All learnable parameters live in one ordered map from dotted names
//! (e.g. `model.posterior.head.w`) to `f64` matrices. The BTreeMap ordering
//! makes flattening, checkpoint layout, and optimizer iteration
//! deterministic — a requirement for bit-identical reruns.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::nn::graph::Gradients;

/// Ordered name → matrix parameter store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        let prev = self.params.insert(name.to_string(), value);
        assert!(prev.is_none(), "parameter `{name}` registered twice");
    }

    /// Fetch a parameter; missing names are a programming error.
    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.get(name)
    }

    pub fn set(&mut self, name: &str, value: Array2<f64>) {
        let slot = self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        assert_eq!(slot.dim(), value.dim(), "shape change for `{name}`");
        *slot = value;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Names under a dotted prefix (e.g. all of `actor.`).
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a String> {
        self.params.keys().filter(move |k| k.starts_with(prefix))
    }

    /// Copy every parameter under `src` prefix to the same suffix under
    /// `dst` (used to initialize target networks).
    pub fn copy_prefix(&mut self, src: &str, dst: &str) {
        let copies: Vec<(String, Array2<f64>)> = self
            .params
            .iter()
            .filter(|(k, _)| k.starts_with(src))
            .map(|(k, v)| (format!("{dst}{}", &k[src.len()..]), v.clone()))
            .collect();
        for (name, value) in copies {
            if self.params.contains_key(&name) {
                self.set(&name, value);
            } else {
                self.insert(&name, value);
            }
        }
    }

    /// All scalars concatenated in name order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for v in self.params.values() {
            out.extend(v.iter().copied());
        }
        out
    }

    /// Overwrite every parameter from a flat vector in name order.
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for v in self.params.values_mut() {
            for x in v.iter_mut() {
                *x = flat[at];
                at += 1;
            }
        }
        assert_eq!(at, flat.len(), "flat vector length mismatch");
    }

    /// Flatten a gradient map into the same ordering as `flatten`,
    /// inserting zeros for parameters that received no gradient.
    pub fn flatten_like(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (name, v) in &self.params {
            match grads.get(name) {
                Some(g) => {
                    assert_eq!(g.dim(), v.dim(), "gradient shape mismatch for `{name}`");
                    out.extend(g.iter().copied());
                }
                None => out.extend(std::iter::repeat(0.0).take(v.len())),
            }
        }
        out
    }

    /// Largest |x| over all parameters — cheap sanity probe.
    pub fn max_abs(&self) -> f64 {
        self.params
            .values()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn flatten_roundtrip_preserves_values() {
        let mut s = ParamStore::new();
        s.insert("b.w", array![[1.0, 2.0], [3.0, 4.0]]);
        s.insert("a.w", array![[5.0]]);
        let flat = s.flatten();
        // BTreeMap order: "a.w" first.
        assert_eq!(flat, vec![5.0, 1.0, 2.0, 3.0, 4.0]);
        let mut s2 = s.clone();
        s2.set_from_flat(&[9.0, 8.0, 7.0, 6.0, 5.0]);
        assert_eq!(s2.get("a.w")[(0, 0)], 9.0);
        assert_eq!(s2.get("b.w")[(1, 1)], 5.0);
        s2.set_from_flat(&flat);
        assert_eq!(s2, s);
    }

    #[test]
    fn flatten_like_fills_missing_with_zeros() {
        let mut s = ParamStore::new();
        s.insert("a", array![[1.0, 1.0]]);
        s.insert("b", array![[1.0]]);
        let mut grads = Gradients::new();
        grads.insert("b".to_string(), array![[3.0]]);
        assert_eq!(s.flatten_like(&grads), vec![0.0, 0.0, 3.0]);
    }

    #[test]
    fn copy_prefix_creates_target_copies() {
        let mut s = ParamStore::new();
        s.insert("critic.q1.w", array![[1.0]]);
        s.insert("critic.q2.w", array![[2.0]]);
        s.copy_prefix("critic.", "target.");
        assert_eq!(s.get("target.q1.w")[(0, 0)], 1.0);
        assert_eq!(s.get("target.q2.w")[(0, 0)], 2.0);
        // Updating again overwrites rather than double-registers.
        s.set("critic.q1.w", array![[7.0]]);
        s.copy_prefix("critic.", "target.");
        assert_eq!(s.get("target.q1.w")[(0, 0)], 7.0);
    }

    #[test]
    #[should_panic(expected = "registered twice")]
    fn double_registration_panics() {
        let mut s = ParamStore::new();
        s.insert("a", array![[1.0]]);
        s.insert("a", array![[2.0]]);
    }
}
