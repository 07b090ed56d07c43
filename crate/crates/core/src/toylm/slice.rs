//! Parameter-slice selection: a named parameter group with flatten and
//! unflatten maps. Gradient extraction, the autoencoder and interventions
//! all operate on one slice.

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::ModelError;

/// Descriptor of the selected parameter group W_m.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub len: usize,
}

impl ParamSlice {
    /// Resolves a parameter-group name against a model, recording its
    /// flattened length.
    pub fn resolve(params: &ModelParams, name: &str) -> Result<ParamSlice, ModelError> {
        let data = params
            .param(name)
            .ok_or_else(|| ModelError::UnknownParam(name.to_string()))?;
        Ok(ParamSlice {
            name: name.to_string(),
            len: data.len(),
        })
    }

    fn checked<'a>(&self, data: &'a [f64]) -> Result<&'a [f64], ModelError> {
        if data.len() != self.len {
            return Err(ModelError::SliceMismatch {
                name: self.name.clone(),
                expected: self.len,
                got: data.len(),
            });
        }
        Ok(data)
    }

    /// Flatten: copies the group's values in storage order.
    pub fn extract(&self, params: &ModelParams) -> Result<Vec<f64>, ModelError> {
        let data = params
            .param(&self.name)
            .ok_or_else(|| ModelError::UnknownParam(self.name.clone()))?;
        Ok(self.checked(data)?.to_vec())
    }

    /// Unflatten: writes `values` back into the group.
    pub fn write(&self, params: &mut ModelParams, values: &[f64]) -> Result<(), ModelError> {
        self.checked(values)?;
        let data = params
            .param_mut(&self.name)
            .ok_or_else(|| ModelError::UnknownParam(self.name.clone()))?;
        if data.len() != self.len {
            return Err(ModelError::SliceMismatch {
                name: self.name.clone(),
                expected: self.len,
                got: data.len(),
            });
        }
        data.copy_from_slice(values);
        Ok(())
    }

    /// slice += a * dir.
    pub fn add_scaled(
        &self,
        params: &mut ModelParams,
        dir: &[f64],
        a: f64,
    ) -> Result<(), ModelError> {
        self.checked(dir)?;
        let data = params
            .param_mut(&self.name)
            .ok_or_else(|| ModelError::UnknownParam(self.name.clone()))?;
        if data.len() != self.len {
            return Err(ModelError::SliceMismatch {
                name: self.name.clone(),
                expected: self.len,
                got: data.len(),
            });
        }
        for (x, &d) in data.iter_mut().zip(dir) {
            *x += a * d;
        }
        Ok(())
    }

    /// Checks that this slice matches the given model parameters.
    pub fn matches(&self, params: &ModelParams) -> Result<(), ModelError> {
        let data = params
            .param(&self.name)
            .ok_or_else(|| ModelError::UnknownParam(self.name.clone()))?;
        self.checked(data).map(|_| ())
    }
}
