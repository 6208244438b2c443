use std::collections::HashMap;
use std::sync::Arc;

use super::{Result, Tensor, TensorError};

/// Ordered set of named, shaped parameter buffers plus gradient accumulators.
///
/// Buffers are shared into forward passes through [`ParamStore::bind`];
/// the optimizer mutates them once those graphs are gone.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    data: Vec<Arc<Vec<f64>>>,
    grads: Vec<Option<Vec<f64>>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its slot. Panics on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> usize {
        let name = name.into();
        assert_eq!(data.len(), shape.iter().product::<usize>(), "parameter {name}");
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let slot = self.names.len();
        self.index.insert(name.clone(), slot);
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        self.data.push(Arc::new(data));
        self.grads.push(None);
        slot
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn shape(&self, slot: usize) -> &[usize] {
        &self.shapes[slot]
    }

    pub fn values(&self, slot: usize) -> &[f64] {
        &self.data[slot]
    }

    /// Mutable access; copies the buffer first if a live graph still shares it.
    pub fn values_mut(&mut self, slot: usize) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.data[slot])
    }

    /// Total number of scalars across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.data.iter().map(|d| d.len()).sum()
    }

    /// One leaf tensor per parameter, sharing storage.
    pub fn bind(&self, requires_grad: bool) -> Vec<Tensor> {
        self.data
            .iter()
            .zip(&self.shapes)
            .map(|(d, s)| Tensor::from_shared(Arc::clone(d), s, requires_grad).expect("store shapes are validated"))
            .collect()
    }

    /// Adds `weight * grad` of each bound leaf into the accumulators.
    pub fn accumulate_grads(&mut self, bound: &[Tensor], weight: f64) -> Result<()> {
        if bound.len() != self.len() {
            return Err(TensorError::Invalid {
                op: "accumulate_grads",
                reason: format!("{} bound tensors for {} parameters", bound.len(), self.len()),
            });
        }
        for (slot, t) in bound.iter().enumerate() {
            let Some(g) = t.grad() else { continue };
            let acc = self.grads[slot].get_or_insert_with(|| vec![0.0; g.len()]);
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += weight * v;
            }
        }
        Ok(())
    }

    pub fn grad(&self, slot: usize) -> Option<&[f64]> {
        self.grads[slot].as_deref()
    }

    pub fn has_any_grad(&self) -> bool {
        self.grads.iter().any(Option::is_some)
    }

    pub fn clear_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Euclidean norm over every parameter scalar.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().flat_map(|d| d.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn take_grads(&mut self) -> Vec<Option<Vec<f64>>> {
        self.grads.iter_mut().map(Option::take).collect()
    }

    /// Bitwise equality of all values, for isolation checks.
    pub fn bits_equal(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_shares_and_grads_accumulate() {
        let mut store = ParamStore::new();
        let w = store.add("w", &[2], vec![1.0, 2.0]);
        let bound = store.bind(true);
        bound[w].mul(&bound[w]).unwrap().sum().backward().unwrap();
        store.accumulate_grads(&bound, 0.5).unwrap();
        assert_eq!(store.grad(w).unwrap(), &[1.0, 2.0]);
        drop(bound);
        store.values_mut(w)[0] = 5.0;
        assert_eq!(store.values(w), &[5.0, 2.0]);
        store.clear_grads();
        assert!(!store.has_any_grad());
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add("a", &[1], vec![0.0]);
        store.add("a", &[1], vec![0.0]);
    }
}
