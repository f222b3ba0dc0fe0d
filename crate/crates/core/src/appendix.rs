//! The six closed-form moment conditions of the restricted model with
//! `T = 3` and no covariates.
//!
//! Each condition is `E[sum_k m_k 1{sequence = s_k}] = 0` for every value of
//! the household effect. The weights are polynomials in `G_ij = exp(g_ij)`,
//! `B = exp(kappa)` and `P = exp(rho)`, affine in `P`. The expressions below
//! are a literal transcription and must not be simplified by hand; the
//! exact-expectation check in the GMM module is what certifies them.

use crate::error::{Error, Result};
use crate::model::{Gamma, Pair};

/// Number of closed-form conditions per initial pair.
pub const N_MOMENTS: usize = 6;

// Supporting patterns (y1_1, y1_2, y1_3, y2_1, y2_2, y2_3) of each moment;
// the initial pair is whatever the moment is evaluated at.
const PATTERNS: [[[u8; 6]; 5]; 6] = [
    [[0, 0, 1, 0, 1, 0], [0, 0, 1, 0, 1, 1], [0, 1, 0, 0, 1, 0], [0, 1, 0, 1, 1, 0], [0, 1, 1, 0, 1, 0]],
    [[0, 0, 1, 1, 0, 0], [0, 0, 1, 1, 0, 1], [0, 1, 0, 0, 1, 1], [1, 0, 0, 1, 0, 0], [1, 0, 0, 1, 1, 0]],
    [[0, 1, 1, 1, 0, 1], [0, 1, 1, 1, 1, 1], [1, 0, 0, 1, 1, 1], [1, 1, 1, 0, 1, 0], [1, 1, 1, 0, 1, 1]],
    [[1, 0, 0, 1, 0, 1], [1, 0, 1, 0, 0, 1], [1, 0, 1, 1, 0, 1], [1, 1, 0, 1, 0, 0], [1, 1, 0, 1, 0, 1]],
    [[0, 0, 0, 0, 1, 0], [0, 0, 0, 0, 1, 1], [0, 1, 0, 0, 0, 0], [0, 1, 0, 0, 0, 1], [0, 1, 0, 1, 0, 0]],
    [[0, 0, 0, 1, 0, 1], [0, 1, 0, 1, 0, 1], [0, 1, 1, 0, 0, 0], [0, 1, 1, 0, 0, 1], [1, 0, 0, 0, 1, 0]],
];

/// Continuation code of a `(y1_1..y1_3, y2_1..y2_3)` pattern.
fn code(p: [u8; 6]) -> usize {
    p.iter().fold(0, |acc, &bit| (acc << 1) | bit as usize)
}

/// Continuation codes (`T = 3`) of the five sequences moment `j` (1-based)
/// puts weight on.
pub fn moment_codes(j: usize) -> Result<[usize; 5]> {
    check_index(j)?;
    Ok(PATTERNS[j - 1].map(code))
}

fn check_index(j: usize) -> Result<()> {
    if (1..=N_MOMENTS).contains(&j) {
        Ok(())
    } else {
        Err(Error::InvalidInput(alloc::format!("moment index {j} is outside 1..=6")))
    }
}

#[inline]
fn ip(x: f64, e: i32) -> f64 {
    libm::pow(x, e as f64)
}

/// The five weights of moment `j` with the level terms supplied directly:
/// `big_b` plays the role of `B` and `p` of `P`. Exposed so that alternative
/// readings of `B` can be tested against the exact expectation.
pub fn moment_weights_raw(gamma: &Gamma, big_b: f64, p: f64, initial: Pair, j: usize) -> Result<[f64; 5]> {
    check_index(j)?;
    let g = gamma.to_array().map(libm::exp);
    Ok(raw(j, g[0], g[1], g[2], g[3], big_b, p, initial.0 as i32, initial.1 as i32))
}

/// Weights `m_k` of moment `j` at `(gamma, kappa, rho)`.
pub fn moment_weights(gamma: &Gamma, kappa: f64, rho: f64, initial: Pair, j: usize) -> Result<[f64; 5]> {
    moment_weights_raw(gamma, libm::exp(kappa), libm::exp(rho), initial, j)
}

/// `(u_k, v_k)` with `m_k = u_k + v_k exp(rho)`.
pub fn moment_coefficients(gamma: &Gamma, kappa: f64, initial: Pair, j: usize) -> Result<[(f64, f64); 5]> {
    let b = libm::exp(kappa);
    let u = moment_weights_raw(gamma, b, 0.0, initial, j)?;
    let at_one = moment_weights_raw(gamma, b, 1.0, initial, j)?;
    let mut out = [(0.0, 0.0); 5];
    for k in 0..5 {
        out[k] = (u[k], at_one[k] - u[k]);
    }
    Ok(out)
}

#[rustfmt::skip]
#[allow(unused_parens, clippy::too_many_arguments, clippy::neg_multiply, clippy::double_parens)]
fn raw(j: usize, g11: f64, g12: f64, g21: f64, g22: f64, bb: f64, pp: f64, a: i32, b: i32) -> [f64; 5] {
    let br = g12*(-bb*g21*ip(g22, 2)+(bb+1.0)*g22+g11*(g21*g22*(bb*g22-bb-1.0)+1.0)-1.0)+bb*(g21-1.0)*g22+g11*(g21-1.0)*g22*ip(g12, 2);
    let inner = (g11*((g21-g22)*g12*(bb*g21*g22+1.0)-bb*(g21-1.0)*g21*g22-((g21-1.0)*g22*ip(g12, 2))) +bb*g12*g21*(g22-1.0)*g22+g12*g21*(g22-1.0)*ip(g11, 2));
    let inner4 = (g11*(-bb*g22*ip(g21, 2)+(bb+1.0)*g21+g12*(bb*g22*ip(g21, 2)-(bb+1.0)*g22*g21+1.0)-1.0) +bb*g21*(g22-1.0)+g12*g21*(g22-1.0)*ip(g11, 2));
    let inner5 = (bb*(g22-g21)+g12*(g22*(bb*g21-bb-1.0)+1.0)+g11*(g21*(bb*(-g22)+bb-g12+1.0)+g12*g22-1.0));
    match j {
        1 => {
            // moment 1, m1
            let m1 = bb*g11*g22*pp*br;
            // moment 1, m2
            let m2 = g11*(ip(bb, 2)*(g21-1.0)*ip(g22, 2)+ip(g12, 2)*(-bb*ip(g22, 2)*pp+g11*(bb*g21*ip(g22, 2)*pp-(bb+1.0)*g22+1.0)+(bb+1.0)*g22-1.0) +bb*g22*g12*(bb*g22-g21*((bb+1.0)*g22-1.0)+g11*(1.0-g21*pp)+g22+pp-2.0));
            // moment 1, m3
            let m3 = -bb*g11*g12*g22*br;
            // moment 1, m4
            let m4 = -g11*g12*ip(g21, -a)*ip(g22, 1-b)*(g11*(ip(bb, 2)*(g21-1.0)*g21*ip(g22, 2)+bb*g22*g12*(2.0*g21*(pp-2.0)+ip(g21, 2)+1.0)-((g21-1.0)*ip(g12, 2))) +g12*ip(g11, 2)*(bb*g21*g22*(1.0-g21*pp)+g12*(g21-1.0))+bb*g22*(g12*(g21-pp)-bb*(g21-1.0)*g21*g22));
            // moment 1, m5
            let m5 = bb*g22*(ip(g11, 2)*ip(g12, 2)*(-bb*ip(g21, 2)*ip(g22, 2)*pp+(bb+1.0)*g21*g22-1.0) +g11*g12*(bb*g22*(g21*(-(bb+1.0)*g22+pp-2.0)+(bb+1.0)*g22*ip(g21, 2)+1.0)+g12*(g21*g22*(bb*g22*pp-bb-1.0)+1.0)) +bb*g22*(g12*(g21-pp)-bb*(g21-1.0)*g21*g22));
            [m1, m2, m3, m4, m5]
        }
        2 => {
            // moment 2, m1
            let m1 = -bb*g21*pp*ip(g11, a)*ip(g12, b)*br;
            // moment 2, m2
            let m2 = g21*(-ip(g11, a))*ip(g12, b)*(ip(bb, 2)*(g21-1.0)*ip(g22, 2)+ip(g12, 2)*(-bb*ip(g22, 2)*pp+g11*(bb*g21*ip(g22, 2)*pp-(bb+1.0)*g22+1.0)+(bb+1.0)*g22-1.0) +bb*g22*g12*(bb*g22-g21*((bb+1.0)*g22-1.0)+g11*(1.0-g21*pp)+g22+pp-2.0));
            // moment 2, m3
            let m3 = ip(g11, a)*ip(g21, a)*ip(g12, b)*ip(g22, b-1)*(ip(g11, 2)*ip(g12, 2)*(bb*ip(g21, 2)*ip(g22, 2)*pp-(bb+1.0)*g21*g22+1.0) -g11*g12*(bb*g22*(g21*(-(bb+1.0)*g22+pp-2.0)+(bb+1.0)*g22*ip(g21, 2)+1.0)+g12*(g21*g22*(bb*g22*pp-bb-1.0)+1.0)) +bb*g22*(bb*(g21-1.0)*g21*g22+g12*(pp-g21)));
            // moment 2, m4
            let m4 = bb*g21*br;
            // moment 2, m5
            let m5 = g12*(g11*(ip(bb, 2)*(g21-1.0)*g21*ip(g22, 2)+bb*g22*g12*(2.0*g21*(pp-2.0)+ip(g21, 2)+1.0)-((g21-1.0)*ip(g12, 2))) +g12*ip(g11, 2)*(bb*g21*g22*(1.0-g21*pp)+g12*(g21-1.0))+bb*g22*(g12*(g21-pp)-bb*(g21-1.0)*g21*g22));
            [m1, m2, m3, m4, m5]
        }
        3 => {
            // moment 3, m1
            let m1 = -bb*ip(g11, a+1)*ip(g21, -a)*ip(g12, b)*ip(g22, 1-b)*(g11*(ip(bb, 2)*g21*(g21-g22)*g22+bb*g12*(2.0*g22*g21*(pp-2.0)+ip(g21, 2)+ip(g22, 2))+ip(g12, 2)*(g22-g21)) +ip(g11, 2)*(bb*g21*(g22-g21*pp)+g12*(g21-g22))+bb*g12*g22*(bb*g21*(g22-g21)+g12*(g21-g22*pp)));
            // moment 3, m2
            let m2 = -bb*ip(g11, a+1)*ip(g21, -a)*ip(g12, b)*ip(g22, -b)*inner;
            // moment 3, m3
            let m3 = ip(g11, 2)*g12*ip(g21, -a)*ip(g22, -b-1)*(g11*(ip(bb, 2)*(g21-1.0)*g21*ip(g22, 2)+ip(g12, 2)*(g21*(bb*ip(g22, 2)*pp-bb*g22-1.0)+g22) +bb*g22*g12*(g21*(-g22+pp-2.0)+ip(g21, 2)+g22)) +g12*ip(g11, 2)*(bb*g21*g22*(1.0-g21*pp)+g12*(g21-g22)) +bb*g12*g22*(g12*(g21-g22*pp)-bb*(g21-1.0)*g21*g22));
            // moment 3, m4
            let m4 = ip(bb, 2)*g22*(ip(bb, 2)*g12*ip(g21, 2)*(g22-1.0)*g22 +ip(g11, 2)*(g12*(bb*g22*ip(g21, 2)*pp+g21*(1.0-bb*g22)-g22)+bb*g21*(g22-g21*pp)+(g22-g21)*ip(g12, 2)) +bb*g21*g11*(-bb*g21*(g22-1.0)*g22+ip(g12, 2)*(g22-ip(g22, 2)*pp)+g12*(g22*(g22+pp-2.0)-g21*(g22-1.0))));
            // moment 3, m5
            let m5 = ip(bb, 2)*g11*inner;
            [m1, m2, m3, m4, m5]
        }
        4 => {
            // moment 4, m1
            let m1 = g12*(g11*(-g21*(ip(bb, 2)+g12*(bb-bb*g22*pp)+bb*g22-bb*pp+2.0*bb+1.0)+bb*(bb+1.0)*g22*ip(g21, 2)+bb+1.0) +g12*ip(g11, 2)*(-bb*g22*ip(g21, 2)*pp+(bb+1.0)*g21-1.0)+bb*(-bb*g22*ip(g21, 2)+(bb+1.0)*g21-pp));
            // moment 4, m2
            let m2 = -bb*g12*ip(g21, a)*ip(g22, b)*(g11*(-g21*(ip(bb, 2)-2.0*bb*pp+4.0*bb+1.0)+bb*(bb+1.0)*ip(g21, 2)+bb+1.0) +ip(g11, 2)*(-bb*ip(g21, 2)*pp+(bb+1.0)*g21-1.0)+bb*(-bb*ip(g21, 2)+(bb+1.0)*g21-pp));
            // moment 4, m3
            let m3 = -bb*g12*inner4;
            // moment 4, m4
            let m4 = bb*(ip(bb, 2)*(g22-1.0)*ip(g21, 2)/g11 +bb*g21*(-(bb+1.0)*g21*(g22-1.0)+g12*(1.0-g22*pp)+g22+pp-2.0) +g11*(-bb*ip(g21, 2)*pp+g12*(bb*g22*ip(g21, 2)*pp-(bb+1.0)*g21+1.0)+(bb+1.0)*g21-1.0));
            // moment 4, m5
            let m5 = bb*pp*inner4;
            [m1, m2, m3, m4, m5]
        }
        5 => {
            // moment 5, m1
            let m1 = bb*g12*ip(g21, a)*ip(g22, b)*inner5;
            // moment 5, m2
            let m2 = g12*ip(g21, a)*ip(g22, b-1)*(ip(bb, 2)*g22*(g22-g21)+bb*g12*(g21*((bb+1.0)*g22-1.0)-g22*((bb+1.0)*g22+pp-2.0)) +ip(g12, 2)*(bb*ip(g22, 2)*pp-(bb+1.0)*g22+1.0) +g11*(bb*(g21*pp-g22)+g12*(g22*(bb*g21*(-pp)+bb+1.0)-1.0)));
            // moment 5, m3
            let m3 = -ip(bb, 2)*g12*ip(g21, a)*ip(g22, b)*inner5;
            // moment 5, m4
            let m4 = -bb*g12*ip(g21, a-1)*ip(g22, b)*(ip(g11, 2)*(-bb*ip(g21, 2)*pp+(bb+1.0)*g21-1.0) +g11*(bb*(g21*(-(bb+1.0)*g22+pp-2.0)+(bb+1.0)*ip(g21, 2)+g22)+g12*(g21*(bb*g22*pp-bb-1.0)+1.0)) +bb*(bb*g21*(g22-g21)+g12*(g21-g22*pp)));
            // moment 5, m5
            let m5 = bb*(g11*(ip(bb, 2)*g21*(g21-g22)*g22+bb*g12*(2.0*g22*g21*(pp-2.0)+ip(g21, 2)+ip(g22, 2))+ip(g12, 2)*(g22-g21)) +ip(g11, 2)*(bb*g21*(g22-g21*pp)+g12*(g21-g22))+bb*g12*g22*(bb*g21*(g22-g21)+g12*(g21-g22*pp)));
            [m1, m2, m3, m4, m5]
        }
        6 => {
            // moment 6, m1
            let m1 = ip(g11, a)*ip(g21, 1-a)*ip(g12, b)*ip(g22, -b)*(-g12*(-g22*(ip(bb, 2)-2.0*bb*pp+4.0*bb+1.0)+bb*(bb+1.0)*ip(g22, 2)+bb+1.0) +ip(g12, 2)*(bb*ip(g22, 2)*pp-(bb+1.0)*g22+1.0)+bb*(bb*ip(g22, 2)-(bb+1.0)*g22+pp));
            // moment 6, m2
            let m2 = bb*pp*ip(g11, a)*ip(g21, -a)*ip(g12, b)*ip(g22, 1-b)*(bb*(g21-g22)+g12*(g22*(bb*(-g21)+bb+1.0)-1.0) +g11*(g21*(bb*g22-bb+g12-1.0)-g12*g22+1.0));
            // moment 6, m3
            let m3 = ip(bb, 2)*g21*ip(g11, a-1)*ip(g12, b)*(g12*(-ip(bb, 2)*g22+bb*g22*pp+g11*(g22*(bb*g21*(-pp)+bb+1.0)-1.0) -2.0*bb*g22+bb*g21*((bb+1.0)*g22-1.0)+bb-g22+1.0) +bb*(g22*(bb*(-g21)+bb+1.0)+g11*(g21*pp-g22)-pp));
            // moment 6, m4
            let m4 = ip(bb, 2)*ip(g11, a-1)*ip(g12, b)*inner5;
            // moment 6, m5
            let m5 = bb*(ip(bb, 2)*(g21-g22)*g22+bb*g12*(g22*((bb+1.0)*g22+pp-2.0)-g21*((bb+1.0)*g22-1.0)) +ip(g12, 2)*(-bb*ip(g22, 2)*pp+(bb+1.0)*g22-1.0) +g11*(bb*(g22-g21*pp)+g12*(g22*(bb*g21*pp-bb-1.0)+1.0)));
            [m1, m2, m3, m4, m5]
        }
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PairSequence, INITIAL_PAIRS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vanish_at_zero_parameters() {
        for init in INITIAL_PAIRS {
            for j in 1..=6 {
                for (u, v) in moment_coefficients(&Gamma::default(), 0.0, init, j).unwrap() {
                    assert!(u.abs() < 1e-12 && v.abs() < 1e-12, "moment {j} at {init:?}");
                }
            }
        }
    }

    #[test]
    fn first_pattern_of_moment_one() {
        let codes = moment_codes(1).unwrap();
        let s = PairSequence::from_code(3, (1, 0), codes[0]);
        assert_eq!(s.to_tuple(), vec![1, 0, 0, 1, 0, 0, 1, 0]);
        for j in 1..=6 {
            let mut c = moment_codes(j).unwrap().to_vec();
            c.sort();
            c.dedup();
            assert_eq!(c.len(), 5);
        }
        assert!(moment_codes(0).is_err() && moment_codes(7).is_err());
    }

    #[test]
    fn affine_in_exp_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let g = Gamma::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let kappa = rng.random_range(-1.0..1.0);
            for init in INITIAL_PAIRS {
                for j in 1..=6 {
                    let c = moment_coefficients(&g, kappa, init, j).unwrap();
                    let at0 = moment_weights(&g, kappa, 0.0, init, j).unwrap();
                    let at1 = moment_weights(&g, kappa, 1.0, init, j).unwrap();
                    let rho = rng.random_range(-1.0..2.0);
                    let at = moment_weights(&g, kappa, rho, init, j).unwrap();
                    for k in 0..5 {
                        let scale = c[k].0.abs() + c[k].1.abs() + 1.0;
                        let v = (at1[k] - at0[k]) / (1f64.exp() - 1.0);
                        assert!((c[k].1 - v).abs() < 1e-10 * scale);
                        assert!((c[k].0 + c[k].1 * rho.exp() - at[k]).abs() < 1e-10 * scale);
                    }
                }
            }
        }
    }
}
