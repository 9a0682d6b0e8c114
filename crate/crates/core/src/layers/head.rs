use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamStore, ParamVars, Tape, Tensor, Var};

use super::LayerError;

/// `x + W₂·relu(W₁·x + b₁) + b₂`, applied to every row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    prefix: String,
    width: usize,
    hidden: usize,
}

impl ResidualBlock {
    pub fn new(prefix: impl Into<String>, width: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.into(),
            width,
            hidden,
        }
    }

    fn name(&self, p: &str) -> String {
        format!("{}.{p}", self.prefix)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), LayerError> {
        let n1 = Normal::new(0.0, (2.0 / self.width as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, (1.0 / self.hidden as f64).sqrt()).expect("positive std");
        store.insert(self.name("w1"), Tensor::from_fn(vec![self.width, self.hidden], |_| n1.sample(rng)))?;
        store.insert(self.name("b1"), Tensor::zeros(vec![self.hidden]))?;
        store.insert(self.name("w2"), Tensor::from_fn(vec![self.hidden, self.width], |_| n2.sample(rng)))?;
        store.insert(self.name("b2"), Tensor::zeros(vec![self.width]))?;
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, pv: &ParamVars, x: Var) -> Result<Var, LayerError> {
        match tape.value(x).shape() {
            [_, w] if *w == self.width => {}
            s => {
                return Err(LayerError::Config(format!(
                    "residual block of width {} applied to {s:?}",
                    self.width
                )))
            }
        }
        let h = tape.matmul(x, pv.var(&self.name("w1")))?;
        let h = tape.add_bias(h, pv.var(&self.name("b1")))?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, pv.var(&self.name("w2")))?;
        let h = tape.add_bias(h, pv.var(&self.name("b2")))?;
        Ok(tape.add(x, h)?)
    }
}

/// Linear class scores per pool sample followed by a max over samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxHead {
    prefix: String,
    channels: usize,
    classes: usize,
}

impl MaxHead {
    pub fn new(prefix: impl Into<String>, channels: usize, classes: usize) -> Self {
        Self {
            prefix: prefix.into(),
            channels,
            classes,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.a", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), LayerError> {
        // Small enough that initial scores are close to uniform on
        // unit-variance features.
        let n = Normal::new(0.0, 0.25 / (self.channels as f64).sqrt()).expect("positive std");
        store.insert(
            self.weight_name(),
            Tensor::from_fn(vec![self.channels, self.classes], |_| n.sample(rng)),
        )?;
        store.insert(self.bias_name(), Tensor::zeros(vec![self.classes]))?;
        Ok(())
    }

    /// `x` is `[batch·M, K]` with the pool index innermost; returns
    /// `[batch, classes]`.
    pub fn forward(&self, tape: &mut Tape, pv: &ParamVars, x: Var, pool: usize) -> Result<Var, LayerError> {
        let rows = tape.value(x).shape()[0];
        if pool == 0 || rows % pool != 0 {
            return Err(LayerError::Config(format!(
                "{rows} rows do not split into pools of {pool}"
            )));
        }
        let s = tape.matmul(x, pv.var(&self.weight_name()))?;
        let s = tape.add_bias(s, pv.var(&self.bias_name()))?;
        let s = tape.reshape(s, vec![rows / pool, pool, self.classes])?;
        Ok(tape.max_over_axis(s, 1)?)
    }
}

/// `max_u (A f(u) + b)` per class for features `values` (`[M, K]`
/// row-major), `a` (`[K, C]`) and `b` (`[C]`).
pub fn invariant_max_head(values: &[f64], k: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>, LayerError> {
    let c = b.len();
    if k == 0 || values.is_empty() || values.len() % k != 0 || a.len() != k * c {
        return Err(LayerError::Config(format!(
            "head shapes: {} values, K={k}, A has {}, b has {c}",
            values.len(),
            a.len()
        )));
    }
    let mut best = vec![f64::NEG_INFINITY; c];
    for f in values.chunks(k) {
        for (j, out) in best.iter_mut().enumerate() {
            let s = b[j] + f.iter().enumerate().map(|(i, fi)| fi * a[i * c + j]).sum::<f64>();
            if s > *out {
                *out = s;
            }
        }
    }
    Ok(best)
}
