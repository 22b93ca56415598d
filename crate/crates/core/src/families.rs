//! Example fields and their paired weights.

use crate::error::{Error, Result};
use crate::geometry::{dyadic_caps, Cap, CapKind};
use crate::measures::{make_weight, Family, GridMeasure};
use crate::profiles::bump;
use crate::torus::{random_field, Band, GridSpec, Mode, TorusField};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Field whose coefficients are a smooth bump across the cap, summing to one
/// (an `L^1`-normalised spectrum, so `f(0) = 1`).
pub fn bump_packet(spec: GridSpec, cap: &Cap) -> Result<TorusField> {
    let (lo, hi) = cap.interval();
    let half = 0.5 * cap.s;
    let pts: Vec<[i64; 2]> = Band::Parabola
        .lattice_points(&spec)
        .into_iter()
        .filter(|n| {
            let x = spec.xi(*n)[0];
            x >= lo && x < hi
        })
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidParam(format!("cap at c = {} holds no lattice column", cap.c)));
    }
    let w: Vec<f64> = pts.iter().map(|n| bump((spec.xi(*n)[0] - cap.c) / half)).collect();
    let total: f64 = w.iter().sum();
    let modes: Vec<Mode> = pts
        .iter()
        .zip(&w)
        .filter(|(_, w)| **w > 0.0)
        .map(|(n, w)| Mode { n: *n, a: Complex64::new(w / total, 0.0) })
        .collect();
    TorusField::from_modes(spec, Band::Parabola, &modes)
}

/// Sum of bump packets over every finest cap: `|f(0)| = 2 R^{1/2}`.
pub fn ball_field(spec: GridSpec) -> Result<TorusField> {
    let s = 1.0 / spec.rf().sqrt();
    let pieces = dyadic_caps(s, CapKind::Parabola)
        .iter()
        .map(|c| bump_packet(spec, c))
        .collect::<Result<Vec<_>>>()?;
    TorusField::sum(&pieces)
}

/// Finest cap with index `k` along `[-1, 1]`.
pub fn theta(spec: &GridSpec, k: usize) -> Cap {
    let s = 1.0 / spec.rf().sqrt();
    dyadic_caps(s, CapKind::Parabola)[k]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    /// Bump packets on every finest cap.
    Ball,
    /// One bump packet on a single finest cap.
    Packet,
    /// Unit-modulus random phases on every band lattice point.
    Random,
}

/// A field paired with a weight.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairedFamily {
    pub name: String,
    pub field: FieldKind,
    pub weight: Family,
    /// Finest cap index used by packet fields and tube weights.
    pub theta: usize,
    pub seed: u64,
}

impl PairedFamily {
    pub fn build(&self, spec: GridSpec) -> Result<(TorusField, GridMeasure)> {
        let f = match self.field {
            FieldKind::Ball => ball_field(spec)?,
            FieldKind::Packet => bump_packet(spec, &theta(&spec, self.theta))?,
            FieldKind::Random => random_field(spec, Band::Parabola, self.seed),
        };
        let weight = match &self.weight {
            Family::DualTube { alpha, .. } => Family::DualTube { alpha: *alpha, cap_center: theta(&spec, self.theta).c },
            w => w.clone(),
        };
        Ok((f, make_weight(&weight, spec)?))
    }
}

/// The built-in (field, weight) pairs. The packet cap sits just right of the centre.
pub fn builtin_pairs(r: u64) -> Vec<PairedFamily> {
    let mid = (r as f64).sqrt() as usize;
    let pair = |name: &str, field, weight| PairedFamily { name: name.to_string(), field, weight, theta: mid, seed: 7 };
    vec![
        pair("unit_ball", FieldKind::Ball, Family::Ball { center: [0.0, 0.0], radius: 1.0 }),
        pair("packet_constant", FieldKind::Packet, Family::Constant { lambda: 1.0 }),
        pair("packet_dual_tube", FieldKind::Packet, Family::DualTube { alpha: 1.5, cap_center: 0.0 }),
        pair("ball_lattice", FieldKind::Ball, Family::Lattice { kappa: 1.0 / 3.0, c: 0.125, extent: 1.0 }),
        pair("ball_truncated_lattice", FieldKind::Ball, Family::TruncatedLattice { kappa: 1.0 / 12.0, c: 0.125 }),
        pair("random_ball", FieldKind::Random, Family::Ball { center: [0.0, 0.0], radius: 4.0 }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::{grid_eval, lp_norm_pow, AtomSource};

    #[test]
    fn packet_is_l1_normalised_and_inside_its_cap() {
        let g = GridSpec::standard(64).unwrap();
        let cap = theta(&g, 3);
        let f = bump_packet(g, &cap).unwrap();
        let sum: Complex64 = f.modes.iter().map(|m| m.a).sum();
        assert!((sum.re - 1.0).abs() < 1e-14 && sum.im == 0.0);
        let (lo, hi) = cap.interval();
        assert!(f.modes.iter().all(|m| {
            let x = g.xi(m.n)[0];
            x > lo && x < hi
        }));
    }

    #[test]
    fn ball_field_peaks_at_origin() {
        for r in [16u64, 64, 256] {
            let g = GridSpec::standard(r).unwrap();
            let f = ball_field(g).unwrap();
            let v = grid_eval(&f, &[(0, 0)])[0];
            assert!((v.re - 2.0 * (r as f64).sqrt()).abs() < 1e-9);
            let ball = make_weight(&Family::Ball { center: [0.0, 0.0], radius: 1.0 }, g).unwrap();
            let lhs = lp_norm_pow(&f, 2.0, Some(&ball as &dyn AtomSource)).unwrap().sqrt();
            // |f| stays comparable to its peak on the unit ball
            assert!(lhs >= 0.5 * v.re * (ball.total()).sqrt());
        }
    }

    #[test]
    fn builtin_pairs_build() {
        let g = GridSpec::standard(16).unwrap();
        for p in builtin_pairs(16) {
            let (f, h) = p.build(g).unwrap();
            assert!(!f.is_zero(), "{}", p.name);
            assert!(!h.is_empty(), "{}", p.name);
        }
    }
}
