use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Tensor;
use crate::error::{Error, Result};

fn check_shape(shape: &[usize]) -> Result<usize> {
    let len: usize = shape.iter().product();
    if shape.is_empty() || len == 0 {
        return Err(Error::dim("init", shape, &[1]));
    }
    Ok(len)
}

/// Xavier (Glorot) normal initialization: N(0, 2 / (fan_in + fan_out)).
///
/// Weights are stored `[fan_in × fan_out]`; trailing dimensions beyond the
/// second count as receptive field and multiply both fans.
pub fn xavier_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor> {
    check_shape(shape)?;
    if shape.len() < 2 {
        return Err(Error::dim("xavier_normal", shape, &[0, 0]));
    }
    let field: usize = shape[2..].iter().product();
    let (fan_in, fan_out) = (shape[0] * field, shape[1] * field);
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    normal(shape, std, rng)
}

pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Result<Tensor> {
    let len = check_shape(shape)?;
    let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    let values = (0..len).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), values)
}

/// Uniform on `[-bound, bound)`.
pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Result<Tensor> {
    let len = check_shape(shape)?;
    let dist = Uniform::new(-bound, bound).map_err(|e| Error::Config(e.to_string()))?;
    let values = (0..len).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), values)
}
