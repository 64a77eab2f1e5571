//! First-order optimizers over named parameter matrices.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("gradient set is missing parameter '{0}'")]
    MissingGradient(String),
    #[error("gradient set has unknown parameter '{0}'")]
    UnknownGradient(String),
    #[error("shape mismatch for '{name}': parameter {expected:?}, gradient {found:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
}

/// Ordered map from parameter name to matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: BTreeMap<String, Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a parameter; returns the previous value if the name was taken.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Option<Matrix> {
        self.params.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Same names and shapes, all entries zero.
    pub fn zeros_like(&self) -> ParamSet {
        let params = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
            .collect();
        ParamSet { params }
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<(), OptimError> {
        for (name, p) in &self.params {
            let g = other
                .params
                .get(name)
                .ok_or_else(|| OptimError::MissingGradient(name.clone()))?;
            if g.shape() != p.shape() {
                return Err(OptimError::ShapeMismatch {
                    name: name.clone(),
                    expected: p.shape(),
                    found: g.shape(),
                });
            }
        }
        if let Some(extra) = other.params.keys().find(|k| !self.params.contains_key(*k)) {
            return Err(OptimError::UnknownGradient(extra.clone()));
        }
        Ok(())
    }
}

impl FromIterator<(String, Matrix)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Matrix)>>(iter: I) -> Self {
        ParamSet {
            params: iter.into_iter().collect(),
        }
    }
}

fn check_lr(lr: f64) -> Result<(), OptimError> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(OptimError::InvalidLearningRate(lr))
    }
}

/// Plain gradient descent, `p ← p − lr · g` for every parameter.
pub fn gd_step(
    params: &ParamSet,
    grads: &ParamSet,
    learning_rate: f64,
) -> Result<ParamSet, OptimError> {
    let mut out = params.clone();
    gd_step_in_place(&mut out, grads, learning_rate)?;
    Ok(out)
}

pub fn gd_step_in_place(
    params: &mut ParamSet,
    grads: &ParamSet,
    learning_rate: f64,
) -> Result<(), OptimError> {
    check_lr(learning_rate)?;
    params.check_compatible(grads)?;
    for (name, p) in params.params.iter_mut() {
        p.add_scaled_in_place(-learning_rate, &grads.params[name]);
    }
    Ok(())
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    /// Number of completed steps.
    pub t: u64,
    first_moment: ParamSet,
    second_moment: ParamSet,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, default betas and epsilon.
    pub fn new(params: &ParamSet, learning_rate: f64) -> Result<Self, OptimError> {
        check_lr(learning_rate)?;
        Ok(Self {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps_hat: ADAM_EPS,
            t: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        })
    }

    pub fn first_moment(&self) -> &ParamSet {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &ParamSet {
        &self.second_moment
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<(), OptimError> {
        self.first_moment.check_compatible(params)?;
        params.check_compatible(grads)?;
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, p) in params.params.iter_mut() {
            let g = &grads.params[name];
            let m = self
                .first_moment
                .params
                .get_mut(name)
                .expect("checked above");
            let v = self
                .second_moment
                .params
                .get_mut(name)
                .expect("checked above");
            for j in 0..p.cols() {
                for i in 0..p.rows() {
                    let gi = g[(i, j)];
                    let mi = b1 * m[(i, j)] + (1.0 - b1) * gi;
                    let vi = b2 * v[(i, j)] + (1.0 - b2) * gi * gi;
                    m[(i, j)] = mi;
                    v[(i, j)] = vi;
                    let m_hat = mi / c1;
                    let v_hat = vi / c2;
                    p[(i, j)] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps_hat);
                }
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    state: &AdamState,
    params: &ParamSet,
    grads: &ParamSet,
) -> Result<(AdamState, ParamSet), OptimError> {
    let mut state = state.clone();
    let mut params = params.clone();
    state.step(&mut params, grads)?;
    Ok((state, params))
}
