//! Named parameter storage shared by layers, optimizers and checkpoints.

#[cfg(not(feature = "std"))]
use num_traits::Float;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

static NEXT_STORE: AtomicU32 = AtomicU32::new(1);

/// Identifies one parameter of one [`ParamStore`]. Ids from independently
/// created stores never compare equal, so gradients of two models can share a
/// graph. A clone keeps the ids of its source, so the same layer handles
/// address both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    store: u32,
    index: u32,
}

impl ParamId {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    tag: u32,
    params: Vec<Param<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tag: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, value });
        ParamId {
            store: self.tag,
            index: (self.params.len() - 1) as u32,
        }
    }

    pub fn owns(&self, id: ParamId) -> bool {
        id.store == self.tag && (id.index as usize) < self.params.len()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        assert!(self.owns(id), "parameter id from another store");
        &self.params[id.index as usize].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        assert!(self.owns(id), "parameter id from another store");
        &mut self.params[id.index as usize].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.index as usize].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(|i| ParamId {
            store: self.tag,
            index: i as u32,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(move |i| ParamId {
            store: self.tag,
            index: i as u32,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.ids().zip(self.params.iter())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replace the value of a named parameter, checking its shape.
    pub fn set_by_name(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::contract("set_by_name", format!("unknown parameter {name}")))?;
        let slot = self.get_mut(id);
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "set_by_name",
                format!("{name} {:?}", slot.shape()),
                format!("{:?}", value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    /// Copy every parameter of `other` whose name also exists here.
    /// Returns the number of parameters copied.
    pub fn copy_matching(&mut self, other: &ParamStore<T>) -> Result<usize> {
        let mut copied = 0;
        for p in &other.params {
            if self.find(&p.name).is_some() {
                self.set_by_name(&p.name, p.value.clone())?;
                copied += 1;
            }
        }
        Ok(copied)
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.to_string()).collect()
    }
}

/// Xavier/Glorot uniform initialisation in `±sqrt(6/(fan_in+fan_out))`.
pub fn xavier_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}
