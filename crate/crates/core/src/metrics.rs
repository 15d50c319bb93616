//! Link-quality figures derived from an impulse response.
//!
//! Conventions:
//! - RMS delay spread weights each path by the square of its power.
//! - The OOK eye is anchored at the first arrival `t0`: power landing in
//!   `[t0, t0 + T)` builds the '1' level, everything later spills into the
//!   following '0' slot.
//! - Receiver bandwidth equals the bit rate; SNR uses `sigma1 + sigma0`.

use std::io::{self, Write};

use thiserror::Error;

use crate::raytrace::{ImpulseResponse, PathContribution};
use crate::report::fmt_f64;
use crate::scene::{NoiseConfig, Scenario};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("branch {0} not present in impulse response")]
    UnknownBranch(usize),
    #[error("{0} is undefined for a branch without received power")]
    Undefined(&'static str),
    #[error("total noise is zero; SNR is unbounded")]
    ZeroNoise,
    #[error("no branches to select from")]
    NoBranches,
    #[error("bit rate must be positive, got {0}")]
    InvalidBitRate(f64),
}

fn branch(ir: &ImpulseResponse, branch_id: usize) -> Result<&[PathContribution], MetricsError> {
    ir.branch(branch_id)
        .ok_or(MetricsError::UnknownBranch(branch_id))
}

/// Sum of contribution powers in delay order; 0 for an empty branch.
pub fn total_power(ir: &ImpulseResponse, branch_id: usize) -> Result<f64, MetricsError> {
    Ok(branch(ir, branch_id)?.iter().map(|c| c.power_w).sum())
}

/// RMS delay spread with power-squared weights, evaluated on the exact
/// contribution list.
pub fn rms_delay_spread(ir: &ImpulseResponse, branch_id: usize) -> Result<f64, MetricsError> {
    delay_spread_of(branch(ir, branch_id)?)
}

fn delay_spread_of(paths: &[PathContribution]) -> Result<f64, MetricsError> {
    let p_max = paths.iter().map(|c| c.power_w).fold(0.0, f64::max);
    if p_max <= 0.0 {
        return Err(MetricsError::Undefined("delay spread"));
    }
    // Normalized weights and delays relative to the first path keep the sums well scaled.
    let t_ref = paths
        .iter()
        .map(|c| c.delay_s)
        .fold(f64::INFINITY, f64::min);
    let mut w_sum = 0.0;
    let mut tw_sum = 0.0;
    for c in paths {
        let w = (c.power_w / p_max).powi(2);
        w_sum += w;
        tw_sum += (c.delay_s - t_ref) * w;
    }
    let mean = tw_sum / w_sum;
    let var = paths
        .iter()
        .map(|c| {
            let dt = c.delay_s - t_ref - mean;
            dt * dt * (c.power_w / p_max).powi(2)
        })
        .sum::<f64>()
        / w_sum;
    Ok(var.sqrt())
}

/// Splits a branch's power into the '1' slot `[t0, t0 + T)` and the ISI
/// spill after it. `ps1 + ps0` reproduces [`total_power`] bit for bit.
pub fn bit_slot_powers(
    ir: &ImpulseResponse,
    branch_id: usize,
    bit_rate_bps: f64,
) -> Result<(f64, f64), MetricsError> {
    if !(bit_rate_bps > 0.0) {
        return Err(MetricsError::InvalidBitRate(bit_rate_bps));
    }
    let paths = branch(ir, branch_id)?;
    if paths.is_empty() {
        return Err(MetricsError::Undefined("bit slot powers"));
    }
    Ok(slot_split(paths, 1.0 / bit_rate_bps))
}

fn slot_split(paths: &[PathContribution], slot_s: f64) -> (f64, f64) {
    let t0 = paths[0].delay_s;
    let end = t0 + slot_s;
    let k = paths.partition_point(|c| c.delay_s < end);
    let ps1: f64 = paths[..k].iter().map(|c| c.power_w).sum();
    let total: f64 = paths.iter().map(|c| c.power_w).sum();
    if k == paths.len() {
        return (total, 0.0);
    }
    // The slot power may move by one ulp so that a closing complement exists.
    for part in [ps1, ps1.next_down(), ps1.next_up()] {
        if let Some(rest) = complement(total, part) {
            return (part, rest);
        }
    }
    (ps1, (total - ps1).max(0.0))
}

/// The `x >= 0` with `part + x == total` in floating point, closest to the
/// real difference.
fn complement(total: f64, part: f64) -> Option<f64> {
    if !(part >= 0.0 && part <= total) {
        return None;
    }
    let x = total - part;
    [x, x.next_up(), x.next_down()]
        .into_iter()
        .find(|&cand| cand >= 0.0 && part + cand == total)
}

/// Receiver noise current (A rms): shot noise from background and signal
/// photocurrent plus preamplifier noise, over `bandwidth_hz`.
pub fn noise_std(
    noise: &NoiseConfig,
    responsivity: f64,
    received_power_w: f64,
    bandwidth_hz: f64,
) -> f64 {
    let shot = 2.0
        * noise.electron_charge_c
        * (noise.background_current_a + responsivity * received_power_w)
        * bandwidth_hz;
    let preamp = noise.preamp_noise_density_a_per_sqrt_hz.powi(2) * bandwidth_hz;
    (shot + preamp).sqrt()
}

/// OOK decision SNR `(R (ps1 - ps0) / (sigma1 + sigma0))^2`. A closed eye
/// (`ps1 <= ps0`) gives 0.
pub fn snr_ook(
    ps1_w: f64,
    ps0_w: f64,
    responsivity: f64,
    sigma1: f64,
    sigma0: f64,
) -> Result<f64, MetricsError> {
    let sigma = sigma1 + sigma0;
    if !(sigma > 0.0) {
        return Err(MetricsError::ZeroNoise);
    }
    if ps1_w <= ps0_w {
        return Ok(0.0);
    }
    Ok((responsivity * (ps1_w - ps0_w) / sigma).powi(2))
}

/// Gaussian tail probability `Q(x) = erfc(x / sqrt 2) / 2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// OOK bit error rate `Q(sqrt(SNR))`.
pub fn ber_from_snr(snr_linear: f64) -> f64 {
    q_function(snr_linear.max(0.0).sqrt())
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Relative margin within which two scores count as tied.
pub const TIE_RELATIVE_TOLERANCE: f64 = 1e-9;

/// Index and value of the largest score, ignoring NaN. Scores within
/// [`TIE_RELATIVE_TOLERANCE`] of the maximum tie, and ties go to the lowest index.
pub fn argmax_with_ties(scores: &[f64]) -> Option<(usize, f64)> {
    let max = scores
        .iter()
        .copied()
        .filter(|s| !s.is_nan())
        .reduce(f64::max)?;
    let floor = if max.is_finite() {
        max - TIE_RELATIVE_TOLERANCE * max.abs()
    } else {
        max
    };
    scores
        .iter()
        .copied()
        .enumerate()
        .find(|&(_, s)| s >= floor)
}

/// Index and value of the largest SNR; near-ties go to the lowest index.
pub fn select_best_branch(snrs: &[f64]) -> Result<(usize, f64), MetricsError> {
    argmax_with_ties(snrs).ok_or(MetricsError::NoBranches)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchMetrics {
    pub unit_id: usize,
    pub branch_id: usize,
    pub power_w: f64,
    /// `None` when the branch receives no power.
    pub delay_spread_s: Option<f64>,
    pub ps1_w: f64,
    pub ps0_w: f64,
    pub snr_linear: f64,
    pub snr_db: f64,
    pub ber: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkMetrics {
    pub branches: Vec<BranchMetrics>,
    pub best_branch_id: usize,
    pub best_snr_db: f64,
}

impl LinkMetrics {
    pub fn best(&self) -> &BranchMetrics {
        &self.branches[self.best_branch_id]
    }

    /// Best branch within one receiver unit.
    pub fn best_in_unit(&self, unit_id: usize) -> Option<&BranchMetrics> {
        let unit: Vec<&BranchMetrics> = self
            .branches
            .iter()
            .filter(|b| b.unit_id == unit_id)
            .collect();
        let snrs: Vec<f64> = unit.iter().map(|b| b.snr_linear).collect();
        select_best_branch(&snrs).ok().map(|(i, _)| unit[i])
    }

    /// Writes one row per branch followed by one summary row per unit whose
    /// `branch_id` field reads `best:<id>`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "unit_id,branch_id,power_w,delay_spread_s,ps1_w,ps0_w,snr_db,ber"
        )?;
        for b in &self.branches {
            write_row(&mut out, b, &b.branch_id.to_string())?;
        }
        let units = self
            .branches
            .iter()
            .map(|b| b.unit_id)
            .max()
            .map_or(0, |u| u + 1);
        for u in 0..units {
            if let Some(b) = self.best_in_unit(u) {
                write_row(&mut out, b, &format!("best:{}", b.branch_id))?;
            }
        }
        Ok(())
    }
}

fn write_row<W: Write>(out: &mut W, b: &BranchMetrics, branch_field: &str) -> io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        b.unit_id,
        branch_field,
        fmt_f64(b.power_w),
        fmt_f64(b.delay_spread_s.unwrap_or(f64::NAN)),
        fmt_f64(b.ps1_w),
        fmt_f64(b.ps0_w),
        fmt_f64(b.snr_db),
        fmt_f64(b.ber)
    )
}

/// Computes every per-branch figure and the best branch for `ir`.
pub fn evaluate(scenario: &Scenario, ir: &ImpulseResponse) -> Result<LinkMetrics, MetricsError> {
    if !(scenario.bit_rate_bps > 0.0) {
        return Err(MetricsError::InvalidBitRate(scenario.bit_rate_bps));
    }
    let slot = 1.0 / scenario.bit_rate_bps;
    let bandwidth = scenario.bit_rate_bps;
    let mut rows = Vec::with_capacity(ir.branch_count());
    for (id, det) in scenario.branches().into_iter().enumerate() {
        let paths = branch(ir, id)?;
        let power_w = paths.iter().map(|c| c.power_w).sum();
        let (ps1_w, ps0_w) = if paths.is_empty() {
            (0.0, 0.0)
        } else {
            slot_split(paths, slot)
        };
        let r = det.responsivity_a_per_w;
        let sigma1 = noise_std(&scenario.noise, r, ps1_w, bandwidth);
        let sigma0 = noise_std(&scenario.noise, r, ps0_w, bandwidth);
        let snr_linear = snr_ook(ps1_w, ps0_w, r, sigma1, sigma0)?;
        rows.push(BranchMetrics {
            unit_id: id / 4,
            branch_id: id,
            power_w,
            delay_spread_s: delay_spread_of(paths).ok(),
            ps1_w,
            ps0_w,
            snr_linear,
            snr_db: to_db(snr_linear),
            ber: ber_from_snr(snr_linear),
        });
    }
    let snrs: Vec<f64> = rows.iter().map(|b| b.snr_linear).collect();
    let (best_branch_id, best) = select_best_branch(&snrs)?;
    Ok(LinkMetrics {
        branches: rows,
        best_branch_id,
        best_snr_db: to_db(best),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ELECTRON_CHARGE_C;
    use proptest::prelude::*;

    fn ir_of(taps: &[(f64, f64)]) -> ImpulseResponse {
        let list = taps
            .iter()
            .map(|&(delay_s, power_w)| PathContribution {
                branch_id: 0,
                power_w,
                delay_s,
                bounce_order: 0,
            })
            .collect();
        ImpulseResponse::from_branches(vec![list])
    }

    #[test]
    fn total_power_cases() {
        assert_eq!(total_power(&ir_of(&[]), 0).unwrap(), 0.0);
        let ir = ir_of(&[(1e-9, 1e-8), (2e-9, 2e-8), (3e-9, 3e-8)]);
        assert!((total_power(&ir, 0).unwrap() - 6e-8).abs() < 1e-22);
        assert_eq!(total_power(&ir, 1), Err(MetricsError::UnknownBranch(1)));
    }

    #[test]
    fn delay_spread_examples() {
        assert_eq!(rms_delay_spread(&ir_of(&[(7e-9, 3.0)]), 0).unwrap(), 0.0);
        let d = rms_delay_spread(&ir_of(&[(0.0, 1.0), (1e-9, 1.0)]), 0).unwrap();
        assert!((d - 0.5e-9).abs() < 1e-21);
        // mu = 1/101 ns, D = sqrt(mu (1 - mu)) ns.
        let d = rms_delay_spread(&ir_of(&[(0.0, 1.0), (1e-9, 0.1)]), 0).unwrap();
        assert!((d - 0.099_009_900_990_099e-9).abs() < 1e-21, "{d}");
        assert_eq!(
            rms_delay_spread(&ir_of(&[]), 0),
            Err(MetricsError::Undefined("delay spread"))
        );
        assert!(rms_delay_spread(&ir_of(&[(1e-9, 0.0)]), 0).is_err());
    }

    #[test]
    fn slot_examples() {
        assert_eq!(
            bit_slot_powers(&ir_of(&[(3e-9, 2.5e-7)]), 0, 1e9).unwrap(),
            (2.5e-7, 0.0)
        );
        assert_eq!(
            bit_slot_powers(&ir_of(&[(0.0, 4.0), (2e-9, 1.0)]), 0, 1e9).unwrap(),
            (4.0, 1.0)
        );
        assert_eq!(
            bit_slot_powers(&ir_of(&[(0.0, 1.0), (0.5e-9, 2.0), (1.5e-9, 4.0)]), 0, 1e9).unwrap(),
            (3.0, 4.0)
        );
        assert!(bit_slot_powers(&ir_of(&[]), 0, 1e9).is_err());
        assert!(bit_slot_powers(&ir_of(&[(0.0, 1.0)]), 0, 0.0).is_err());
    }

    #[test]
    fn noise_examples() {
        let zero = NoiseConfig {
            background_current_a: 0.0,
            preamp_noise_density_a_per_sqrt_hz: 0.0,
            electron_charge_c: ELECTRON_CHARGE_C,
        };
        assert_eq!(noise_std(&zero, 0.4, 0.0, 3.57e9), 0.0);
        let bg = NoiseConfig {
            background_current_a: 200e-6,
            preamp_noise_density_a_per_sqrt_hz: 0.0,
            electron_charge_c: 1.602e-19,
        };
        assert!((noise_std(&bg, 0.4, 0.0, 3.57e9) - 4.782_944_699_659_405e-7).abs() < 1e-18);
        let amp = NoiseConfig {
            background_current_a: 0.0,
            preamp_noise_density_a_per_sqrt_hz: 2.7e-12,
            electron_charge_c: ELECTRON_CHARGE_C,
        };
        assert!((noise_std(&amp, 0.4, 0.0, 3.57e9) - 1.613_235_878_599_282_6e-7).abs() < 1e-18);
    }

    #[test]
    fn snr_examples() {
        assert_eq!(snr_ook(1e-7, 1e-7, 0.4, 5e-10, 5e-10).unwrap(), 0.0);
        let snr = snr_ook(1e-7, 0.0, 0.4, 5e-10, 5e-10).unwrap();
        assert!((snr - 1600.0).abs() < 1e-9);
        assert!((to_db(snr) - 32.041_199_826_559_25).abs() < 1e-9);
        let scaled = snr_ook(1e-7, 0.0, 0.8, 2.5e-10, 2.5e-10).unwrap();
        assert!((scaled / snr - 16.0).abs() < 1e-12);
        assert_eq!(
            snr_ook(1e-7, 0.0, 0.4, 0.0, 0.0),
            Err(MetricsError::ZeroNoise)
        );
    }

    #[test]
    fn ber_examples() {
        assert_eq!(ber_from_snr(0.0), 0.5);
        // Q(6) from an independent erfc evaluation.
        assert!((ber_from_snr(36.0) - 9.865_876_450_377_018e-10).abs() < 1e-20);
        assert!(ber_from_snr(10.0) > ber_from_snr(11.0));
    }

    #[test]
    fn best_branch_examples() {
        assert_eq!(select_best_branch(&[2.0]).unwrap(), (0, 2.0));
        assert_eq!(select_best_branch(&[3.0, 9.0, 9.0, 1.0]).unwrap(), (1, 9.0));
        assert_eq!(select_best_branch(&[]), Err(MetricsError::NoBranches));
        assert_eq!(
            select_best_branch(&[5.0, 9.0 * (1.0 - 1e-12), 9.0])
                .unwrap()
                .0,
            1
        );
        assert_eq!(select_best_branch(&[5.0, 8.9, 9.0]).unwrap().0, 2);
        assert_eq!(select_best_branch(&[f64::NAN, 1.0]).unwrap(), (1, 1.0));
        assert_eq!(
            argmax_with_ties(&[f64::NEG_INFINITY; 2]),
            Some((0, f64::NEG_INFINITY))
        );
    }

    fn two_pass_oracle(taps: &[(f64, f64)]) -> f64 {
        let w: f64 = taps.iter().map(|t| t.1 * t.1).sum();
        let mu: f64 = taps.iter().map(|t| t.0 * t.1 * t.1).sum::<f64>() / w;
        (taps
            .iter()
            .map(|t| (t.0 - mu).powi(2) * t.1 * t.1)
            .sum::<f64>()
            / w)
            .sqrt()
    }

    fn taps_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((1e-9f64..60e-9, 1e-12f64..1e-6), n)
    }

    proptest! {
        #[test]
        fn delay_spread_matches_oracle(taps in taps_strategy(1..1000)) {
            let d = rms_delay_spread(&ir_of(&taps), 0).unwrap();
            let o = two_pass_oracle(&taps);
            prop_assert!((d - o).abs() <= 1e-12 * o.max(1e-30) + 1e-24, "{} vs {}", d, o);
        }

        #[test]
        fn delay_spread_scale_and_shift_invariant(taps in taps_strategy(1..200), k in 1e-3f64..1e3, shift in 0.0f64..50e-9) {
            let ir = ir_of(&taps);
            let d = rms_delay_spread(&ir, 0).unwrap();
            let scaled = rms_delay_spread(&ir.scaled(k), 0).unwrap();
            let shifted_taps: Vec<_> = taps.iter().map(|&(t, p)| (t + shift, p)).collect();
            let shifted = rms_delay_spread(&ir_of(&shifted_taps), 0).unwrap();
            prop_assert!((scaled - d).abs() <= 1e-12 * d + 1e-24);
            prop_assert!((shifted - d).abs() <= 1e-9 * d + 1e-22);
        }

        #[test]
        fn slot_partition_is_exact(taps in taps_strategy(1..300), rate in 1e8f64..1e10) {
            let ir = ir_of(&taps);
            let (ps1, ps0) = bit_slot_powers(&ir, 0, rate).unwrap();
            prop_assert!(ps1 >= 0.0 && ps0 >= 0.0);
            prop_assert_eq!(ps1 + ps0, total_power(&ir, 0).unwrap());
        }

        #[test]
        fn snr_increasing_in_ps1(ps0 in 0.0f64..1e-6, a in 1e-9f64..1e-5, b in 1e-9f64..1e-5) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(lo < hi);
            let s = |p| snr_ook(ps0 + p, ps0, 0.4, 5e-7, 5e-7).unwrap();
            prop_assert!(s(lo) < s(hi));
        }

        #[test]
        fn ber_decreasing(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            prop_assume!(a < b);
            prop_assert!(ber_from_snr(a) > ber_from_snr(b));
            prop_assert!(ber_from_snr(a) <= 0.5);
        }
    }
}
