//! Energy log and the discrete Gronwall certificate.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyRecord {
    pub step: usize,
    pub t: f64,
    /// `||v||^2 + ||g||^2`.
    pub energy: f64,
    pub dissipation: f64,
    /// `||J||^2` at this time.
    pub source: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallFit {
    /// Smallest `C >= 0` with `E_n <= (E_0 + C sum_{k<=n} S_k dt) e^{C t_n}`
    /// for every step; infinite when no `C` up to the search limit works.
    pub c: f64,
    pub holds: bool,
    /// `max_n E_n / bound_n` at the fitted `C`.
    pub worst_ratio: f64,
}

const RELATIVE_SLACK: f64 = 1e-12;
const C_LIMIT: f64 = 1e8;

fn ratios(records: &[EnergyRecord], dt: f64, c: f64) -> f64 {
    let Some(first) = records.first() else {
        return 0.0;
    };
    let e0 = first.energy;
    let mut accumulated = 0.0;
    let mut worst = 0.0f64;
    for r in records {
        accumulated += r.source * dt;
        let bound = (e0 + c * accumulated) * (c * (r.t - first.t)).exp();
        let ratio = if bound > 0.0 {
            r.energy / bound
        } else if r.energy > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(ratio);
    }
    worst
}

fn holds(records: &[EnergyRecord], dt: f64, c: f64) -> bool {
    ratios(records, dt, c) <= 1.0 + RELATIVE_SLACK
}

/// Fits the Gronwall constant by bisection; the bound is increasing in `C`.
pub fn fit_gronwall(records: &[EnergyRecord], dt: f64) -> GronwallFit {
    if holds(records, dt, 0.0) {
        return GronwallFit {
            c: 0.0,
            holds: true,
            worst_ratio: ratios(records, dt, 0.0),
        };
    }
    let mut hi = 1e-6;
    while !holds(records, dt, hi) {
        hi *= 2.0;
        if hi > C_LIMIT {
            return GronwallFit {
                c: f64::INFINITY,
                holds: false,
                worst_ratio: ratios(records, dt, C_LIMIT),
            };
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if holds(records, dt, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    GronwallFit {
        c: hi,
        holds: true,
        worst_ratio: ratios(records, dt, hi),
    }
}

/// Does the certificate with a given `C` hold on this log?
pub fn certificate_holds(records: &[EnergyRecord], dt: f64, c: f64) -> bool {
    holds(records, dt, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(energies: &[f64], sources: &[f64], dt: f64) -> Vec<EnergyRecord> {
        energies
            .iter()
            .zip(sources)
            .enumerate()
            .map(|(n, (&e, &s))| EnergyRecord {
                step: n,
                t: n as f64 * dt,
                energy: e,
                dissipation: 0.0,
                source: s,
            })
            .collect()
    }

    #[test]
    fn constant_energy_needs_no_constant() {
        let r = log(&[1.0; 10], &[0.0; 10], 0.1);
        let fit = fit_gronwall(&r, 0.1);
        assert_eq!(fit.c, 0.0);
        assert!(fit.holds);
    }

    #[test]
    fn exponential_growth_recovers_rate() {
        let dt = 0.01;
        let e: Vec<f64> = (0..200).map(|n| (0.7 * n as f64 * dt).exp()).collect();
        let fit = fit_gronwall(&log(&e, &[0.0; 200], dt), dt);
        assert!((fit.c - 0.7).abs() < 1e-9, "{}", fit.c);
        assert!(certificate_holds(&log(&e, &[0.0; 200], dt), dt, fit.c));
        assert!(!certificate_holds(&log(&e, &[0.0; 200], dt), dt, 0.69));
    }

    #[test]
    fn source_fed_growth_is_certified() {
        let dt = 0.1;
        let e = [0.0, 0.5, 1.0, 1.2, 1.0];
        let s = [1.0, 1.0, 1.0, 0.0, 0.0];
        let fit = fit_gronwall(&log(&e, &s, dt), dt);
        assert!(fit.holds && fit.c > 0.0 && fit.c.is_finite());
        assert!(fit.worst_ratio <= 1.0 + 1e-12);
    }
}
