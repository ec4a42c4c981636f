//! Central finite-difference check of the backward pass, evaluated in `f64`.

use super::{mean_ce_and_grad, model::forward, ForwardTrace, LAYERS, PARAM_COUNT};
use crate::error::Result;
use crate::sampling::SeedSpec;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn abs_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    pub fn rel_error(&self) -> f64 {
        self.abs_error() / self.analytic.abs().max(self.numeric.abs()).max(f64::MIN_POSITIVE)
    }

    /// Relative error within `rel`, or absolute error within `abs` when the
    /// gradient is below `small` in magnitude.
    pub fn passes(&self, rel: f64, abs: f64, small: f64) -> bool {
        if self.analytic.abs().max(self.numeric.abs()) < small {
            self.abs_error() <= abs
        } else {
            self.rel_error() <= rel
        }
    }
}

struct Region<T> {
    trace: ForwardTrace<T>,
}

fn regions(params: &[f64], batch: &[(&[f64], usize)]) -> Result<Vec<Region<f64>>> {
    batch
        .iter()
        .map(|(image, _)| Ok(Region { trace: forward(params, image)? }))
        .collect()
}

/// True when `up` and `down` share ReLU signs and max-pool routes. A route
/// that moves between two inputs holding bit-identical values at the centre
/// point is a tie between identical patches, not a kink.
fn same_region(centre: &[Region<f64>], up: &[Region<f64>], down: &[Region<f64>]) -> bool {
    let signs = |v: &[f64]| v.iter().map(|&x| x > 0.0).collect::<Vec<_>>();
    centre.iter().zip(up).zip(down).all(|((c, u), d)| {
        let (c, u, d) = (&c.trace, &u.trace, &d.trace);
        let routes_agree = |a: &[u32], b: &[u32], values: &[f64]| {
            a.iter()
                .zip(b)
                .all(|(&x, &y)| x == y || values[x as usize] == values[y as usize])
        };
        signs(&u.conv1) == signs(&d.conv1)
            && signs(&u.conv2) == signs(&d.conv2)
            && routes_agree(u.routing().0, d.routing().0, &c.conv1)
            && routes_agree(u.routing().1, d.routing().1, &c.conv2)
    })
}

fn loss(params: &[f64], batch: &[(&[f64], usize)]) -> Result<f64> {
    Ok(mean_ce_and_grad(params, batch)?.0)
}

/// Checks `count` parameters drawn from `seed`: an even share per layer
/// first, then any shortfall from the other layers. A draw is skipped (and
/// another made) when `theta ± h` lands in a different ReLU/max-pool region,
/// where the difference quotient is not a derivative.
pub fn check_gradient(
    params: &[f64],
    batch: &[(&[f64], usize)],
    count: usize,
    h: f64,
    seed: u64,
) -> Result<Vec<GradCheck>> {
    let (_, analytic, _) = mean_ce_and_grad(params, batch)?;
    let centre = regions(params, batch)?;
    let mut rng = SeedSpec::new(seed, "gradcheck", 0).rng();
    let quota = count.div_ceil(LAYERS.len());
    let mut out: Vec<GradCheck> = Vec::with_capacity(count);
    let mut probe = params.to_vec();
    let mut try_index = |index: usize, out: &mut Vec<GradCheck>| -> Result<bool> {
        if out.iter().any(|c| c.index == index) {
            return Ok(false);
        }
        probe[index] = params[index] + h;
        let up_region = regions(&probe, batch)?;
        let up = loss(&probe, batch)?;
        probe[index] = params[index] - h;
        let down_region = regions(&probe, batch)?;
        let down = loss(&probe, batch)?;
        probe[index] = params[index];
        if !same_region(&centre, &up_region, &down_region) {
            return Ok(false);
        }
        out.push(GradCheck {
            index,
            analytic: analytic[index],
            numeric: (up - down) / (2.0 * h),
        });
        Ok(true)
    };
    for layer in LAYERS.iter() {
        let mut taken = 0;
        for _ in 0..quota * 20 {
            if taken == quota.min(layer.len) {
                break;
            }
            if try_index(layer.offset + rng.gen_range(0..layer.len), &mut out)? {
                taken += 1;
            }
        }
    }
    for _ in 0..count * 20 {
        if out.len() >= count {
            break;
        }
        try_index(rng.gen_range(0..PARAM_COUNT), &mut out)?;
    }
    Ok(out)
}
