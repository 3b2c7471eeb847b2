use serde::{Deserialize, Serialize};

use crate::compute::{OdeFieldParams, ParamStore, RngStream, Value};
use crate::error::{Error, Result};

/// Right-hand side of an autonomous ODE `dy/dt = f(y)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64], out: &mut [f64]);
}

/// The tanh MLP field stored in a [`ParamStore`].
pub struct MlpField<'a> {
    pub params: &'a ParamStore,
    pub field: OdeFieldParams,
}

impl VectorField for MlpField<'_> {
    fn dim(&self) -> usize {
        self.params.get(self.field.b[3]).len()
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) {
        let mut x = y.to_vec();
        for layer in 0..4 {
            let w = self.params.get(self.field.w[layer]);
            let b = &self.params.get(self.field.b[layer]).data;
            let next: Vec<f64> = (0..w.rows())
                .map(|r| {
                    let z: f64 = w.row(r).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + b[r];
                    if layer < 3 {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            x = next;
        }
        out.copy_from_slice(&x);
    }
}

/// Explicit Euler over `[0, elapsed]` in `n_steps` equal steps.
///
/// `elapsed == 0` returns `e0` unchanged without evaluating the field.
pub fn evolve_ode<F: VectorField + ?Sized>(field: &F, e0: &[f64], elapsed: f64, n_steps: usize) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::Config("evolve_ode needs n_steps >= 1".into()));
    }
    if !(elapsed >= 0.0 && elapsed.is_finite()) {
        return Err(Error::Data(format!(
            "elapsed time {elapsed} must be finite and non-negative"
        )));
    }
    if field.dim() != e0.len() {
        return Err(Error::Shape {
            context: "evolve_ode",
            expected: vec![field.dim()],
            actual: vec![e0.len()],
        });
    }
    let mut y = e0.to_vec();
    if elapsed == 0.0 {
        return Ok(y);
    }
    let h = elapsed / n_steps as f64;
    let mut f = vec![0.0; y.len()];
    for step in 0..n_steps {
        field.eval(&y, &mut f);
        for (yi, fi) in y.iter_mut().zip(&f) {
            *yi += h * fi;
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::OdeDiverged { step });
        }
    }
    Ok(y)
}

/// Number of Euler steps for a given interval: `max(1, round(elapsed / h_max))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub h_max: f64,
}

impl StepPolicy {
    pub fn new(h_max: f64) -> Result<Self> {
        if !(h_max > 0.0 && h_max.is_finite()) {
            return Err(Error::Config(format!("ODE h_max must be positive, got {h_max}")));
        }
        Ok(Self { h_max })
    }

    pub fn n_steps(&self, elapsed: f64) -> usize {
        ((elapsed / self.h_max).round() as usize).max(1)
    }
}

/// Registers a `d -> d -> d -> d -> d` field under `prefix.l{k}.{w,b}`.
///
/// The output layer is initialized ten times smaller than the hidden layers
/// so that freshly built fields move states slowly.
pub fn init_ode_field(ps: &mut ParamStore, prefix: &str, d: usize, rng: &mut RngStream) -> Result<OdeFieldParams> {
    let a = 1.0 / (d as f64).sqrt();
    let mut w = Vec::with_capacity(4);
    let mut b = Vec::with_capacity(4);
    for layer in 0..4 {
        let scale = if layer == 3 { 0.1 * a } else { a };
        let data = (0..d * d).map(|_| rng.uniform_range(-scale, scale)).collect();
        w.push(ps.insert(format!("{prefix}.l{layer}.w"), Value::new(data, vec![d, d])?, true)?);
        b.push(ps.insert(format!("{prefix}.l{layer}.b"), Value::zeros(&[d]), true)?);
    }
    Ok(OdeFieldParams {
        w: [w[0], w[1], w[2], w[3]],
        b: [b[0], b[1], b[2], b[3]],
    })
}
