use crate::{Error, Result};

/// Sinusoidal timestep features.
///
/// `dim/2` frequencies are spaced geometrically from 1 down to `1/horizon`
/// radians per step; each contributes a `(sin, cos)` pair.
pub fn time_embedding(t: usize, dim: usize, horizon: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidSpec(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    if t < 1 || t > horizon {
        return Err(Error::OutOfRange {
            what: "timestep",
            detail: format!("{t} not in 1..={horizon}"),
        });
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = if half == 1 {
            1.0
        } else {
            (horizon as f64).powf(-(i as f64) / (half - 1) as f64)
        };
        let angle = t as f64 * freq;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}
