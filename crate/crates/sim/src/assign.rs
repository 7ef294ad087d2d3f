use rand::seq::SliceRandom;

use dynfx::rng::stream;

use crate::error::{Result, SimError};
use crate::generate::SimConfig;

const ROLE_ASSIGN: u64 = 100;

/// Treated counts `(g = 1, g = 0)` for the reference size of 20 units.
fn reference_counts(assignment: u8) -> (usize, usize) {
    match assignment {
        1 => (5, 5),
        2 => (9, 1),
        _ => (1, 9),
    }
}

fn scaled(count: usize, d: usize) -> usize {
    let v = (count as f64 * d as f64 / 20.0).round() as usize;
    if count == 1 {
        v.max(1)
    } else {
        v
    }
}

/// Treated counts per stratum `(g = 1, g = 0)` for `d` units. Half of the
/// units are treated in total.
pub fn stratum_counts(assignment: u8, d: usize) -> Result<(usize, usize)> {
    let (ref1, ref0) = reference_counts(assignment);
    let half = d / 2;
    let g1 = if ref1 == 1 { scaled(ref1, d) } else { half.saturating_sub(scaled(ref0, d)) };
    let g0 = half.saturating_sub(g1);
    let minimum_ok = (ref1 != 1 || g1 >= 1) && (ref0 != 1 || g0 >= 1);
    if g1 + g0 != half || g1 > half || g0 > half || !minimum_ok {
        return Err(SimError::Assignment(format!(
            "assignment {assignment} with d = {d}: {g1} treated with g=1 and {g0} with g=0 \
             from groups of size {half}"
        )));
    }
    Ok((g1, g0))
}

/// Binary treatment vector. Units `0..d/2` form the `g = 0` group and the
/// rest `g = 1`; treated units are drawn at random within each group.
pub fn assign(config: &SimConfig, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    let d = config.d;
    let (n1, n0) = stratum_counts(config.assignment, d)?;
    let mut rng = stream(seed, &[ROLE_ASSIGN]);
    let mut t = vec![0.0; d];
    let mut g0: Vec<usize> = (0..d / 2).collect();
    let mut g1: Vec<usize> = (d / 2..d).collect();
    g0.shuffle(&mut rng);
    g1.shuffle(&mut rng);
    for &i in g0.iter().take(n0).chain(g1.iter().take(n1)) {
        t[i] = 1.0;
    }
    Ok(t)
}
