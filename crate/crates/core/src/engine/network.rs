//! Quasi-static solution of the PCC bus: every connected DG feeds the PCC
//! through its own line, and the PCC carries the lumped network load.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    /// Fundamental output voltage, pu.
    pub v: f64,
    /// Output angle against the nominal frame, rad.
    pub beta: f64,
    pub z: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Demand {
    /// Net active demand at the PCC (load less BESS injection), pu.
    pub p: f64,
    /// Reactive demand, pu.
    pub q: f64,
    /// Capacitor bank rating at 1 pu voltage, pu.
    pub q_cap: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("PCC power balance did not converge (residual {0:e})")]
    NoConvergence(f64),
    #[error("no converter is connected to the network")]
    NoSource,
}

/// `(P, Q)` delivered by `s` into a PCC at `v_g∠delta`.
pub fn injection(s: &Source, v_g: f64, delta: f64) -> (f64, f64) {
    let phi = s.theta - (s.beta - delta);
    let p = v_g * s.v / s.z * phi.cos() - v_g * v_g / s.z * s.theta.cos();
    let q = v_g * s.v / s.z * phi.sin() - v_g * v_g / s.z * s.theta.sin();
    (p, q)
}

fn residual(sources: &[Source], d: &Demand, v_g: f64, delta: f64) -> [f64; 2] {
    let mut f = [-d.p, d.q_cap * v_g * v_g - d.q];
    for s in sources {
        let (p, q) = injection(s, v_g, delta);
        f[0] += p;
        f[1] += q;
    }
    f
}

fn jacobian(sources: &[Source], d: &Demand, v_g: f64, delta: f64) -> [[f64; 2]; 2] {
    let mut j = [[0.0, 0.0], [0.0, 2.0 * d.q_cap * v_g]];
    for s in sources {
        let phi = s.theta - (s.beta - delta);
        j[0][0] += s.v / s.z * phi.cos() - 2.0 * v_g / s.z * s.theta.cos();
        j[0][1] += -v_g * s.v / s.z * phi.sin();
        j[1][0] += s.v / s.z * phi.sin() - 2.0 * v_g / s.z * s.theta.sin();
        j[1][1] += v_g * s.v / s.z * phi.cos();
    }
    j
}

/// Newton solve for `(v_g, delta)` from a warm start.
pub fn solve_pcc(sources: &[Source], demand: &Demand, guess: (f64, f64)) -> Result<(f64, f64), NetworkError> {
    if sources.is_empty() {
        return Err(NetworkError::NoSource);
    }
    let (mut v, mut d) = guess;
    if !(v > 0.1 && v.is_finite()) {
        v = 1.0;
    }
    if !d.is_finite() {
        d = 0.0;
    }
    let mut f = residual(sources, demand, v, d);
    for _ in 0..60 {
        let norm = f[0].abs().max(f[1].abs());
        if norm < 1e-12 {
            return Ok((v, d));
        }
        let j = jacobian(sources, demand, v, d);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-14 || !det.is_finite() {
            return Err(NetworkError::NoConvergence(norm));
        }
        let dv = (f[0] * j[1][1] - f[1] * j[0][1]) / det;
        let dd = (j[0][0] * f[1] - j[1][0] * f[0]) / det;
        let scale = (0.1 / dv.abs().max(1e-300)).min(0.2 / dd.abs().max(1e-300)).min(1.0);
        v -= scale * dv;
        d -= scale * dd;
        if !(v > 0.0) {
            return Err(NetworkError::NoConvergence(norm));
        }
        f = residual(sources, demand, v, d);
    }
    let norm = f[0].abs().max(f[1].abs());
    if norm < 1e-9 {
        Ok((v, d))
    } else {
        Err(NetworkError::NoConvergence(norm))
    }
}

/// Operating point with every converter at `v = 1` pu delivering `p[i]` pu:
/// returns `(v_g, beta, q)` with the PCC angle as reference.
pub fn flat_start(p: &[f64], lines: &[(f64, f64)], q_load: f64, q_cap: f64) -> Result<(f64, Vec<f64>, Vec<f64>), NetworkError> {
    let angles = |v_g: f64| -> Option<(Vec<f64>, Vec<f64>)> {
        let mut beta = Vec::with_capacity(p.len());
        let mut q = Vec::with_capacity(p.len());
        for (&pi, &(z, theta)) in p.iter().zip(lines) {
            let c = (pi * z + v_g * v_g * theta.cos()) / v_g;
            if c.abs() > 1.0 {
                return None;
            }
            let phi = c.acos();
            beta.push(theta - phi);
            q.push(v_g / z * phi.sin() - v_g * v_g / z * theta.sin());
        }
        Some((beta, q))
    };
    let mismatch = |v_g: f64| angles(v_g).map(|(_, q)| q.iter().sum::<f64>() + q_cap * v_g * v_g - q_load);
    // Reactive balance falls with v_g; bracket it and bisect.
    let mut hi = 2.0;
    let mut lo = hi;
    while lo > 0.05 {
        lo *= 0.9;
        if mismatch(lo).is_some_and(|m| m > 0.0) {
            break;
        }
    }
    match (mismatch(lo), mismatch(hi)) {
        (Some(a), Some(b)) if a > 0.0 && b < 0.0 => {}
        _ => return Err(NetworkError::NoConvergence(f64::NAN)),
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match mismatch(mid) {
            Some(m) if m > 0.0 => lo = mid,
            Some(_) => hi = mid,
            None => lo = mid,
        }
    }
    let v_g = 0.5 * (lo + hi);
    let (beta, q) = angles(v_g).ok_or(NetworkError::NoConvergence(f64::NAN))?;
    Ok((v_g, beta, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::power_flow;
    use std::f64::consts::FRAC_PI_2;

    fn src(v: f64, beta: f64) -> Source {
        Source {
            v,
            beta,
            z: 0.1,
            theta: FRAC_PI_2,
        }
    }

    #[test]
    fn injection_matches_power_flow() {
        let s = src(1.03, 0.07);
        let (p, q) = injection(&s, 0.98, 0.02);
        let (p2, q2) = power_flow(0.98, 1.03, 0.05, 0.1, FRAC_PI_2).unwrap();
        assert!((p - p2).abs() < 1e-12 && (q - q2).abs() < 1e-12);
    }

    #[test]
    fn newton_balances_power() {
        let sources = [src(1.0, 0.1), src(1.02, 0.08), src(0.99, 0.12)];
        let demand = Demand { p: 2.5, q: 0.1, q_cap: 0.0 };
        let (v, d) = solve_pcc(&sources, &demand, (1.0, 0.0)).unwrap();
        let f = residual(&sources, &demand, v, d);
        assert!(f[0].abs() < 1e-12 && f[1].abs() < 1e-12);
    }

    #[test]
    fn flat_start_is_a_solution() {
        let p = [1.0, 1.0, 1.0, 1.0];
        let lines = [(0.1, FRAC_PI_2); 4];
        let (v_g, beta, q) = flat_start(&p, &lines, 0.0, 0.0).unwrap();
        // Symmetric case: v_g^4 - v_g^2 + 0.01 = 0.
        assert!((v_g * v_g - (1.0 + 0.96f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!(q.iter().all(|q| q.abs() < 1e-9));
        let sources: Vec<_> = beta.iter().map(|&b| src(1.0, b)).collect();
        let (v2, d2) = solve_pcc(&sources, &Demand { p: 4.0, q: 0.0, q_cap: 0.0 }, (1.0, 0.1)).unwrap();
        assert!((v2 - v_g).abs() < 1e-10 && d2.abs() < 1e-10);
    }

    #[test]
    fn empty_network_is_an_error() {
        assert_eq!(solve_pcc(&[], &Demand::default(), (1.0, 0.0)), Err(NetworkError::NoSource));
    }
}
