//! Frequency caps at dyadic scales and the tube/envelope tilings of the torus.
//!
//! A parabola cap at scale `s` covers the abscissae `[-1 + k s, -1 + (k + 1) s]`.
//! Circle-arc caps use the same intervals in the angular coordinate
//! `u = arg(xi) + pi/2`, so both kinds share indexing and windows.

use crate::error::{Error, Result};
use crate::torus::{is_power_of_four, GridSpec};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CapKind {
    Parabola,
    CircleArc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cap {
    pub id: usize,
    pub s: f64,
    pub c: f64,
    /// Position along the scale: `c = -1 + (index + 1/2) s` for tree caps.
    pub index: i64,
    pub level: u32,
    pub parent: Option<usize>,
    pub kind: CapKind,
}

impl Cap {
    /// A free-standing cap with arbitrary center, outside any tree.
    pub fn new(s: f64, c: f64, kind: CapKind) -> Cap {
        Cap { id: 0, s, c, index: ((c + 1.0) / s - 0.5).round() as i64, level: 0, parent: None, kind }
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.c - 0.5 * self.s, self.c + 0.5 * self.s)
    }
}

/// Number of caps of width `s` covering `[-1, 1]`.
pub fn caps_per_scale(s: f64) -> usize {
    (2.0 / s).round() as usize
}

/// The caps of one dyadic scale, ids `0..2/s`.
pub fn dyadic_caps(s: f64, kind: CapKind) -> Vec<Cap> {
    (0..caps_per_scale(s))
        .map(|k| Cap {
            id: k,
            s,
            c: -1.0 + (k as f64 + 0.5) * s,
            index: k as i64,
            level: (-s.log2()).round() as u32,
            parent: None,
            kind,
        })
        .collect()
}

/// Coordinate along which caps are cut: `xi1` on the parabola, `arg(xi) + pi/2` on the arc.
pub fn cap_coordinate(kind: CapKind, xi: [f64; 2]) -> f64 {
    match kind {
        CapKind::Parabola => xi[0],
        CapKind::CircleArc => xi[1].atan2(xi[0]) + std::f64::consts::FRAC_PI_2,
    }
}

/// K-ary broad/narrow tree together with the plain dyadic ladder.
#[derive(Clone, Debug, Serialize)]
pub struct CapTree {
    pub r: u64,
    pub k: u64,
    pub m: u32,
    /// `K^m / R^{1/2}`; 1 when the K-ary scales reach `R^{-1/2}` exactly.
    pub mismatch: f64,
    pub kind: CapKind,
    pub caps: Vec<Cap>,
    /// Cap ids of level `j`, scale `max(K^-j, R^-1/2)`.
    pub levels: Vec<Vec<usize>>,
    /// Dyadic scales `1, 1/2, ..., R^{-1/2}`.
    pub ladder: Vec<f64>,
}

pub fn build_cap_tree(r: u64, k: u64, kind: CapKind) -> Result<CapTree> {
    if !is_power_of_four(r) || r < 4 {
        return Err(Error::InvalidParam(format!("R = {r} must be a power of 4, at least 4")));
    }
    let root = (r as f64).sqrt().round() as u64;
    if !k.is_power_of_two() || k < 2 || k > root {
        return Err(Error::InvalidParam(format!("K = {k} must be a power of 2 in [2, {root}]")));
    }
    let lk = k.trailing_zeros();
    let lr = root.trailing_zeros();
    let m = lr.div_ceil(lk);
    let mismatch = 2f64.powi((m * lk - lr) as i32);
    let finest = 1.0 / root as f64;

    let mut caps: Vec<Cap> = Vec::new();
    let mut levels: Vec<Vec<usize>> = Vec::new();
    for j in 0..=m {
        let s = (k as f64).powi(-(j as i32)).max(finest);
        let mut ids = Vec::new();
        for mut cap in dyadic_caps(s, kind) {
            cap.level = j;
            cap.id = caps.len();
            cap.parent = levels.last().map(|prev: &Vec<usize>| {
                let ps = caps[prev[0]].s;
                prev[((cap.index as f64) * s / ps).floor() as usize]
            });
            ids.push(cap.id);
            caps.push(cap);
        }
        levels.push(ids);
    }
    let ladder = (0..=lr).map(|j| 2f64.powi(-(j as i32))).collect();
    Ok(CapTree { r, k, m, mismatch, kind, caps, levels, ladder })
}

impl CapTree {
    pub fn scale(&self, level: u32) -> f64 {
        self.caps[self.levels[level as usize][0]].s
    }

    pub fn finest(&self) -> &[usize] {
        self.levels.last().unwrap()
    }

    pub fn children(&self, id: usize) -> Vec<usize> {
        let lvl = self.caps[id].level as usize + 1;
        if lvl >= self.levels.len() {
            return Vec::new();
        }
        self.levels[lvl].iter().copied().filter(|&c| self.caps[c].parent == Some(id)).collect()
    }

    /// Ancestor of `id` at `level` (itself when already there).
    pub fn ancestor(&self, mut id: usize, level: u32) -> Option<usize> {
        while self.caps[id].level > level {
            id = self.caps[id].parent?;
        }
        (self.caps[id].level == level).then_some(id)
    }
}

/// `A_tau` (affine, frequency side) and `L_tau` (linear, physical side).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapTransforms {
    pub base: [f64; 2],
    pub a: [[f64; 2]; 2],
    pub l: [[f64; 2]; 2],
    pub l_inv: [[f64; 2]; 2],
    pub det: f64,
}

impl CapTransforms {
    pub fn apply_a(&self, eta: [f64; 2]) -> [f64; 2] {
        let v = mat_vec(&self.a, eta);
        [self.base[0] + v[0], self.base[1] + v[1]]
    }

    pub fn apply_l(&self, y: [f64; 2]) -> [f64; 2] {
        mat_vec(&self.l, y)
    }

    pub fn apply_l_inv(&self, x: [f64; 2]) -> [f64; 2] {
        mat_vec(&self.l_inv, x)
    }
}

pub fn mat_vec(m: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

pub fn cap_transforms(cap: &Cap) -> CapTransforms {
    let (s, c) = (cap.s, cap.c);
    match cap.kind {
        CapKind::Parabola => CapTransforms {
            base: [c, c * c],
            a: [[s, 0.0], [2.0 * c * s, s * s]],
            l: [[1.0 / s, -2.0 * c / (s * s)], [0.0, 1.0 / (s * s)]],
            l_inv: [[s, 2.0 * c * s], [0.0, s * s]],
            det: 1.0 / (s * s * s),
        },
        CapKind::CircleArc => {
            let (sn, cs) = c.sin_cos();
            // tangent (cos c, sin c), inward normal (-sin c, cos c) at the point (sin c, -cos c)
            CapTransforms {
                base: [sn, -cs],
                a: [[cs * s, -sn * s * s], [sn * s, cs * s * s]],
                l: [[cs / s, -sn / (s * s)], [sn / s, cs / (s * s)]],
                l_inv: [[cs * s, sn * s], [-sn * s * s, cs * s * s]],
                det: 1.0 / (s * s * s),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TubeKind {
    Tube,
    Envelope,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TubeIndex {
    pub cap: usize,
    pub z: [i64; 2],
    pub kind: TubeKind,
}

/// Period lattice `{(a, 0), (b, d)}` in integer index coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Periods {
    pub a: i64,
    pub b: i64,
    pub d: i64,
}

impl Periods {
    pub fn wrap(&self, z: [i64; 2]) -> [i64; 2] {
        let q = z[1].div_euclid(self.d);
        let z2 = z[1] - q * self.d;
        let z1 = (z[0] - q * self.b).rem_euclid(self.a);
        [z1, z2]
    }

    pub fn count(&self) -> i64 {
        self.a * self.d
    }
}

fn as_int(v: f64) -> Option<i64> {
    let r = v.round();
    ((v - r).abs() <= 1e-9 * v.abs().max(1.0)).then_some(r as i64)
}

/// Point location for one cap on one grid.
#[derive(Clone, Debug)]
pub struct Locator {
    pub spec: GridSpec,
    pub cap: Cap,
    pub tr: CapTransforms,
    /// `R s^2`, the side ratio between envelopes and tubes.
    pub n_env: i64,
    /// Anchor shift so that envelope cells are unions of whole tubes.
    pub shift: i64,
    /// Tube periods, present when the torus periods are integral in tube coordinates.
    pub tube_periods: Option<Periods>,
    pub env_periods: Option<Periods>,
}

impl Locator {
    pub fn new(spec: GridSpec, cap: Cap) -> Locator {
        let tr = cap_transforms(&cap);
        let n_env = (spec.rf() * cap.s * cap.s).round().max(1.0) as i64;
        let p1 = tr.apply_l_inv([spec.l, 0.0]);
        let p2 = tr.apply_l_inv([0.0, spec.l]);
        let periods = |scale: f64| -> Option<Periods> {
            let a = as_int(p1[0] / scale)?;
            let z = as_int(p1[1] / scale)?;
            let b = as_int(p2[0] / scale)?;
            let d = as_int(p2[1] / scale)?;
            (z == 0 && a > 0 && d > 0).then_some(Periods { a, b, d })
        };
        let tube_periods = periods(1.0);
        let env_periods = tube_periods.and_then(|_| periods(n_env as f64));
        Locator { spec, cap, tr, n_env, shift: n_env / 2, tube_periods, env_periods }
    }

    /// Unwrapped tube index `floor(L^-1 x + 1/2)`.
    pub fn tube_raw(&self, x: [f64; 2]) -> [i64; 2] {
        let y = self.tr.apply_l_inv(x);
        [(y[0] + 0.5).floor() as i64, (y[1] + 0.5).floor() as i64]
    }

    pub fn envelope_of_tube(&self, z: [i64; 2]) -> [i64; 2] {
        [(z[0] + self.shift).div_euclid(self.n_env), (z[1] + self.shift).div_euclid(self.n_env)]
    }

    pub fn wrap(&self, z: [i64; 2], kind: TubeKind) -> [i64; 2] {
        let p = match kind {
            TubeKind::Tube => self.tube_periods,
            TubeKind::Envelope => self.env_periods,
        };
        p.map_or(z, |p| p.wrap(z))
    }

    pub fn locate(&self, x: [f64; 2], kind: TubeKind) -> TubeIndex {
        let raw = self.tube_raw(x);
        let z = match kind {
            TubeKind::Tube => self.wrap(raw, kind),
            TubeKind::Envelope => self.wrap(self.envelope_of_tube(raw), kind),
        };
        TubeIndex { cap: self.cap.id, z, kind }
    }

    /// Tube and envelope indices of grid point `(i1, i2)`.
    pub fn locate_grid(&self, i1: usize, i2: usize) -> ([i64; 2], [i64; 2]) {
        let raw = self.tube_raw(self.spec.point(i1, i2));
        (self.wrap(raw, TubeKind::Tube), self.wrap(self.envelope_of_tube(raw), TubeKind::Envelope))
    }

    /// Center of a cell in tube coordinates `y = L^-1 x`, and its half-width there.
    pub fn cell_center_y(&self, z: [i64; 2], kind: TubeKind) -> ([f64; 2], f64) {
        match kind {
            TubeKind::Tube => ([z[0] as f64, z[1] as f64], 0.5),
            TubeKind::Envelope => {
                let n = self.n_env as f64;
                let lo = |w: i64| (w * self.n_env - self.shift) as f64 - 0.5;
                ([lo(z[0]) + 0.5 * n, lo(z[1]) + 0.5 * n], 0.5 * n)
            }
        }
    }

    pub fn cell_center(&self, z: [i64; 2], kind: TubeKind) -> [f64; 2] {
        self.tr.apply_l(self.cell_center_y(z, kind).0)
    }

    /// Lebesgue area of a cell: `s^-3` for tubes and `R^2 s` for envelopes.
    pub fn cell_area(&self, kind: TubeKind) -> f64 {
        match kind {
            TubeKind::Tube => self.tr.det,
            TubeKind::Envelope => self.tr.det * (self.n_env * self.n_env) as f64,
        }
    }

    /// Canonical indices of every cell of the torus tiling.
    pub fn cells(&self, kind: TubeKind) -> Option<Vec<[i64; 2]>> {
        let p = match kind {
            TubeKind::Tube => self.tube_periods?,
            TubeKind::Envelope => self.env_periods?,
        };
        Some((0..p.a).flat_map(|a| (0..p.d).map(move |d| [a, d])).collect())
    }

    /// Sup-distance, in cell units, between two cells modulo the torus.
    pub fn cell_distance(&self, z: [i64; 2], w: [i64; 2], kind: TubeKind) -> i64 {
        let p = match kind {
            TubeKind::Tube => self.tube_periods,
            TubeKind::Envelope => self.env_periods,
        };
        let d = [z[0] - w[0], z[1] - w[1]];
        match p {
            None => d[0].abs().max(d[1].abs()),
            Some(p) => {
                let q0 = d[1].div_euclid(p.d);
                let mut best = i64::MAX;
                for q in [q0 - 1, q0, q0 + 1] {
                    let e2 = d[1] - q * p.d;
                    let e1 = (d[0] - q * p.b).rem_euclid(p.a);
                    let e1 = e1.min(p.a - e1);
                    best = best.min(e1.max(e2.abs()));
                }
                best
            }
        }
    }
}

/// CSV rows `cap_id,s,c,z1,z2,kind` for every cell of the given caps.
pub fn tiling_csv(spec: GridSpec, caps: &[Cap], kind: TubeKind) -> String {
    let mut out = String::from("cap_id,s,c,z1,z2,kind\n");
    let tag = match kind {
        TubeKind::Tube => "tube",
        TubeKind::Envelope => "envelope",
    };
    for cap in caps {
        let loc = Locator::new(spec, *cap);
        if let Some(cells) = loc.cells(kind) {
            for z in cells {
                let _ = writeln!(out, "{},{},{},{},{},{}", cap.id, cap.s, cap.c, z[0], z[1], tag);
            }
        }
    }
    out
}

/// CSV rows `cap_id,s,c,level,parent,kind` for a cap tree.
pub fn caps_csv(tree: &CapTree) -> String {
    let mut out = String::from("cap_id,s,c,level,parent,kind\n");
    for cap in &tree.caps {
        let parent = cap.parent.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{},{:?}", cap.id, cap.s, cap.c, cap.level, parent, cap.kind);
    }
    out
}
