use std::collections::HashMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{Mat, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named parameters packed in one flat buffer, with a gradient buffer of the
/// same layout. Names are hierarchical (`encoder.layers.0.attn.q.weight`) and
/// their order is the insertion order, which checkpoints preserve.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    specs: Vec<ParamSpec>,
    index: HashMap<String, usize>,
    values: Vec<F>,
    grads: Vec<F>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            specs: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<F>) -> Result<Range<usize>> {
        let name = name.into();
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{name}: {} values for shape {shape:?}",
                values.len()
            )));
        }
        if self.index.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter {name}")));
        }
        let spec = ParamSpec {
            name: name.clone(),
            shape: shape.to_vec(),
            offset: self.values.len(),
        };
        let range = spec.range();
        self.index.insert(name, self.specs.len());
        self.specs.push(spec);
        self.values.extend(values);
        self.grads.resize(self.values.len(), F::zero());
        Ok(range)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Result<&ParamSpec> {
        self.index
            .get(name)
            .map(|&i| &self.specs[i])
            .ok_or_else(|| Error::InvalidConfig(format!("no parameter named {name}")))
    }

    /// Range of `name`, checked against the expected shape.
    pub fn slot(&self, name: &str, shape: &[usize]) -> Result<Range<usize>> {
        let spec = self.spec(name)?;
        if spec.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "{name} has shape {:?}, expected {shape:?}",
                spec.shape
            )));
        }
        Ok(spec.range())
    }

    pub fn get(&self, name: &str) -> Result<&[F]> {
        Ok(&self.values[self.spec(name)?.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [F]> {
        let r = self.spec(name)?.range();
        Ok(&mut self.values[r])
    }

    pub fn grad(&self, name: &str) -> Result<&[F]> {
        Ok(&self.grads[self.spec(name)?.range()])
    }

    pub fn mat(&self, name: &str) -> Result<Mat<F>> {
        let spec = self.spec(name)?;
        match spec.shape[..] {
            [r, c] => Mat::from_vec(r, c, self.values[spec.range()].to_vec()),
            _ => Err(Error::ShapeMismatch(format!("{name} is not 2-D"))),
        }
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn grads(&self) -> &[F] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [F] {
        &mut self.grads
    }

    pub fn values_and_grads_mut(&mut self) -> (&mut [F], &mut [F]) {
        (&mut self.values, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = F::zero());
    }

    pub fn num_values(&self) -> usize {
        self.values.len()
    }

    /// Same layout at another precision.
    pub fn convert<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            specs: self.specs.clone(),
            index: self.index.clone(),
            values: self.values.iter().map(|&v| G::lit(v.as_f64())).collect(),
            grads: self.grads.iter().map(|&v| G::lit(v.as_f64())).collect(),
        }
    }
}
