use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

/// Adam with bias correction. Its full state can be saved and restored, so a
/// resumed run continues exactly where it stopped.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update of every variable that received a gradient.
    pub fn step(&mut self, vars: &[(String, Var)], grads: &GradStore) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in vars {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // moments must not keep the autograd history of earlier steps alive
            let g = g.detach();
            let g = &g;
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let m_hat = (&m / c1)?;
            let v_hat = (&v / c2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor() - (update * self.lr)?)?)?;
            self.m.insert(name.clone(), m.detach());
            self.v.insert(name.clone(), v.detach());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: HashMap<String, Tensor> = HashMap::new();
        for (k, m) in &self.m {
            tensors.insert(format!("m.{k}"), m.clone());
        }
        for (k, v) in &self.v {
            tensors.insert(format!("v.{k}"), v.clone());
        }
        // u64 step count split into two exactly representable halves
        let t = Tensor::new(&[(self.t >> 32) as u32, self.t as u32], &Device::Cpu)?;
        tensors.insert("t".into(), t);
        candle_core::safetensors::save(&tensors, path)?;
        Ok(())
    }

    /// Restores moments and step count written by [`save`](Self::save).
    pub fn load(&mut self, path: &Path, device: &Device, dtype: DType) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let tensors = candle_core::safetensors::load(path, device)?;
        let t = tensors
            .get("t")
            .ok_or_else(|| Error::IncompatibleCheckpoint("optimizer state lacks a step count".into()))?
            .to_vec1::<u32>()?;
        if t.len() != 2 {
            return Err(Error::IncompatibleCheckpoint("bad optimizer step count".into()));
        }
        self.t = ((t[0] as u64) << 32) | t[1] as u64;
        self.m.clear();
        self.v.clear();
        for (k, tensor) in tensors {
            let tensor = tensor.to_dtype(dtype)?;
            if let Some(name) = k.strip_prefix("m.") {
                self.m.insert(name.to_string(), tensor);
            } else if let Some(name) = k.strip_prefix("v.") {
                self.v.insert(name.to_string(), tensor);
            }
        }
        Ok(())
    }
}
