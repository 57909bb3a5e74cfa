//! Named parameter storage shared by models and optimizers.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Flat list of named tensors. Indices are stable once created, so an
/// optimizer can keep per-slot state keyed by index.
#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: BTreeMap<String, usize>,
}

/// Serialized form: name -> (shape, data), ordered by name.
#[derive(Serialize, Deserialize)]
pub struct ParamDump(pub BTreeMap<String, (Vec<usize>, Vec<f64>)>);

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    fn insert(&mut self, name: &str, t: Tensor) -> usize {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let idx = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.by_name.insert(name.to_string(), idx);
        idx
    }

    /// Gaussian init with the given std.
    pub fn add_normal(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| gauss(rng) * std).collect();
        self.insert(name, Tensor::new(shape, data))
    }

    /// Xavier/Glorot uniform for a `[fan_out, fan_in]` matrix.
    pub fn add_xavier(
        &mut self,
        name: &str,
        fan_out: usize,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_out * fan_in)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        self.insert(name, Tensor::new(vec![fan_out, fan_in], data))
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> usize {
        let n: usize = shape.iter().product();
        self.insert(name, Tensor::new(shape, vec![0.0; n]))
    }

    pub fn add_const(&mut self, name: &str, shape: Vec<usize>, value: f64) -> usize {
        let n: usize = shape.iter().product();
        self.insert(name, Tensor::new(shape, vec![value; n]))
    }

    pub fn index_of(&self, name: &str) -> usize {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    /// Lease parameter `idx` onto a tape.
    pub fn leaf(&self, tape: &mut Tape, idx: usize) -> super::Node {
        tape.param(idx, &self.tensors[idx])
    }

    /// Lease by name (convenience for tests).
    pub fn leaf_named(&self, tape: &mut Tape, name: &str) -> super::Node {
        self.leaf(tape, self.index_of(name))
    }

    pub fn dump(&self) -> ParamDump {
        let mut map = BTreeMap::new();
        for (i, name) in self.names.iter().enumerate() {
            let t = &self.tensors[i];
            map.insert(name.clone(), (t.shape.clone(), t.data.clone()));
        }
        ParamDump(map)
    }

    /// Restore values into an already-built store. Every parameter must be
    /// present with a matching shape.
    pub fn load_dump(&mut self, dump: &ParamDump) -> Result<()> {
        if dump.0.len() != self.names.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: checkpoint has {}, model has {}",
                dump.0.len(),
                self.names.len()
            )));
        }
        for (name, (shape, data)) in &dump.0 {
            let idx = *self.by_name.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint has unknown parameter {name}"))
            })?;
            let t = &mut self.tensors[idx];
            if &t.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: checkpoint {:?}, model {:?}",
                    shape, t.shape
                )));
            }
            t.data.clone_from(data);
        }
        Ok(())
    }
}

/// Standard normal via Box-Muller; two uniforms per draw, one output kept
/// so the stream stays deterministic and simple.
pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
