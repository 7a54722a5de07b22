//! Named parameter tensors shared by the trainable modules, the optimizer and
//! the checkpoint format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of named, fixed-shape `f64` tensors visited in a stable order.
///
/// Gradients use the same type as the parameters they belong to, so an
/// optimizer can walk both in lockstep.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, data| n += data.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, _, data| out.extend_from_slice(data));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, data| {
            data.copy_from_slice(&flat[offset..offset + data.len()]);
            offset += data.len();
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, data| ok &= data.iter().all(|x| x.is_finite()));
        ok
    }

    fn fill_zero(&mut self) {
        self.visit_mut(&mut |_, data| data.fill(0.0));
    }

    /// `self += scale · other` for tensors of the same layout.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut(&mut |_, data| {
            for (d, o) in data.iter_mut().zip(&flat[offset..]) {
                *d += scale * o;
            }
            offset += data.len();
        });
    }

    fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit(&mut |name, shape, data| {
            out.push(NamedTensor {
                name: name.to_owned(),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
        out
    }

    /// Copies values from `tensors`, which must match names and shapes exactly.
    fn load_named(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let mut expected = Vec::new();
        self.visit(&mut |name, shape, _| expected.push((name.to_owned(), shape.to_vec())));
        if expected.len() != tensors.len() {
            return Err(Error::Incompatible(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Incompatible(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
        }
        let mut idx = 0;
        self.visit_mut(&mut |_, data| {
            data.copy_from_slice(&tensors[idx].data);
            idx += 1;
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Standard-layout slice of an ndarray array; parameters are always owned,
/// contiguous arrays.
pub(crate) fn slice_of<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

pub(crate) fn slice_of_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}
