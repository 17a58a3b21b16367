//! Pooling across channels and across space.

use crate::tensor::{Real, Shape4, ShapeError, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoolMode {
    Avg,
    Max,
}

impl PoolMode {
    pub fn name(self) -> &'static str {
        match self {
            PoolMode::Avg => "avg",
            PoolMode::Max => "max",
        }
    }
}

/// Collapses the channel axis: `(n, c, h, w) → (n, 1, h, w)`.
pub fn channel_pool<T: Real>(x: &Tensor4<T>, mode: PoolMode) -> Tensor4<T> {
    let s = x.shape();
    let mut out = Tensor4::zeros(s.with_channels(1));
    let inv_c = T::one() / T::of(s.c as f64);
    for n in 0..s.n {
        let dst = out.plane_mut(n, 0);
        dst.copy_from_slice(x.plane(n, 0));
        for c in 1..s.c {
            for (d, &v) in dst.iter_mut().zip(x.plane(n, c)) {
                *d = match mode {
                    PoolMode::Avg => *d + v,
                    PoolMode::Max => {
                        if v > *d {
                            v
                        } else {
                            *d
                        }
                    }
                };
            }
        }
        if mode == PoolMode::Avg {
            dst.iter_mut().for_each(|d| *d = *d * inv_c);
        }
    }
    out
}

/// Max routes the whole gradient to the lowest channel index attaining the maximum.
pub fn channel_pool_backward<T: Real>(
    grad_out: &Tensor4<T>,
    x: &Tensor4<T>,
    mode: PoolMode,
) -> Result<Tensor4<T>, ShapeError> {
    let s = x.shape();
    grad_out.expect_shape("channel_pool_backward", "grad_out", s.with_channels(1))?;
    let mut gx = Tensor4::zeros(s);
    let plane = s.plane();
    match mode {
        PoolMode::Avg => {
            let inv_c = T::one() / T::of(s.c as f64);
            for n in 0..s.n {
                let g = grad_out.plane(n, 0).to_vec();
                for c in 0..s.c {
                    for (d, &gv) in gx.plane_mut(n, c).iter_mut().zip(&g) {
                        *d = gv * inv_c;
                    }
                }
            }
        }
        PoolMode::Max => {
            for n in 0..s.n {
                for p in 0..plane {
                    let mut best = 0;
                    let mut best_v = x.plane(n, 0)[p];
                    for c in 1..s.c {
                        let v = x.plane(n, c)[p];
                        if v > best_v {
                            best_v = v;
                            best = c;
                        }
                    }
                    gx.plane_mut(n, best)[p] = grad_out.plane(n, 0)[p];
                }
            }
        }
    }
    Ok(gx)
}

/// Spatial mean per channel: `(n, c, h, w) → (n, c, 1, 1)`.
pub fn global_avg_pool<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let inv = T::one() / T::of(s.plane() as f64);
    Tensor4::from_fn(Shape4::new(s.n, s.c, 1, 1), |n, c, _, _| {
        x.plane(n, c).iter().fold(T::zero(), |a, &v| a + v) * inv
    })
}

pub fn global_avg_pool_backward<T: Real>(grad_out: &Tensor4<T>, input_shape: Shape4) -> Result<Tensor4<T>, ShapeError> {
    grad_out.expect_shape(
        "global_avg_pool_backward",
        "grad_out",
        Shape4::new(input_shape.n, input_shape.c, 1, 1),
    )?;
    let inv = T::one() / T::of(input_shape.plane() as f64);
    Ok(Tensor4::from_fn(input_shape, |n, c, _, _| grad_out.at(n, c, 0, 0) * inv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_channel_is_identity() {
        let x = Tensor4::<f32>::from_fn([2, 1, 3, 3], |n, _, h, w| (n + h * 3 + w) as f32 - 4.0);
        assert_eq!(channel_pool(&x, PoolMode::Avg), x);
        assert_eq!(channel_pool(&x, PoolMode::Max), x);
    }

    #[test]
    fn avg_and_max_of_two_channels() {
        let x = Tensor4::<f32>::new([1, 2, 1, 1], vec![1.0, 3.0]).unwrap();
        assert_eq!(channel_pool(&x, PoolMode::Avg).data(), &[2.0]);
        assert_eq!(channel_pool(&x, PoolMode::Max).data(), &[3.0]);
    }

    #[test]
    fn max_gradient_goes_to_first_tied_channel() {
        let x = Tensor4::<f64>::new([1, 3, 1, 1], vec![2.0, 5.0, 5.0]).unwrap();
        let g = Tensor4::<f64>::new([1, 1, 1, 1], vec![1.5]).unwrap();
        let gx = channel_pool_backward(&g, &x, PoolMode::Max).unwrap();
        assert_eq!(gx.data(), &[0.0, 1.5, 0.0]);
    }

    #[test]
    fn global_pool_is_mean() {
        let x = Tensor4::<f64>::from_fn([1, 2, 2, 2], |_, c, h, w| (c * 10 + h * 2 + w) as f64);
        let y = global_avg_pool(&x);
        assert_eq!(y.data(), &[1.5, 11.5]);
    }
}
