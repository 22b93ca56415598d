//! Broad–narrow pointwise decomposition, parabolic rescaling and bilinear
//! restriction constants.

use crate::envelope::{cap_decompose, coarse_modulus_sq, kappa_max, piece_extent, weighted_l2_sq, SquareData};
use crate::error::{Error, Result};
use crate::geometry::{build_cap_tree, cap_transforms, dyadic_caps, mat_vec, Cap, CapKind, Locator, TubeKind};
use crate::measures::{GridMeasure, MeasureKind};
use crate::torus::{random_field, twiddles, values_at_atoms, Band, ColumnEvaluator, GridSpec, Mode, TorusField};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

const REL_TOL: f64 = 1e-12;

/// Outcome of the two-term split of `(sum a_i)^p`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BgSplit {
    pub lhs: f64,
    /// `max_i a_i^p`.
    pub max_term: f64,
    /// `(#I)^p max_{i, j not in I_i} a_i^{p/2} a_j^{p/2}`.
    pub bilinear_term: f64,
    /// Largest neighbourhood size.
    pub c1: usize,
    /// `2^{p-1} max(C1^p, 1)`.
    pub c: f64,
    pub holds: bool,
}

/// Constant certified by the split for neighbourhoods of size at most `c1`.
pub fn bg_constant(c1: usize, p: f64) -> f64 {
    2f64.powf(p - 1.0) * (c1 as f64).powf(p).max(1.0)
}

/// Splits `(sum a_i)^p` into a largest term and a separated product term.
/// `nbhd[i]` lists the indices close to `i` and must contain `i`.
pub fn bg_split(a: &[f64], nbhd: &[Vec<usize>], p: f64) -> Result<BgSplit> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidParam(format!("p = {p} must be at least 1")));
    }
    if a.is_empty() || nbhd.len() != a.len() {
        return Err(Error::InvalidParam("one neighbourhood per value is required".into()));
    }
    if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParam("values must be finite and non-negative".into()));
    }
    for (i, ni) in nbhd.iter().enumerate() {
        if !ni.contains(&i) || ni.iter().any(|&j| j >= a.len()) {
            return Err(Error::InvalidParam(format!("neighbourhood {i} must contain {i} and stay in range")));
        }
    }
    let c1 = nbhd.iter().map(|ni| ni.len()).max().unwrap();
    let n = a.len() as f64;
    let lhs = a.iter().sum::<f64>().powf(p);
    let max_term = a.iter().fold(0.0f64, |m, v| m.max(*v)).powf(p);
    let mut pair = 0.0f64;
    for (i, ni) in nbhd.iter().enumerate() {
        for j in 0..a.len() {
            if !ni.contains(&j) {
                pair = pair.max(a[i] * a[j]);
            }
        }
    }
    let bilinear_term = n.powf(p) * pair.powf(0.5 * p);
    let c = bg_constant(c1, p);
    let holds = lhs <= c * (max_term + bilinear_term) * (1.0 + REL_TOL);
    Ok(BgSplit { lhs, max_term, bilinear_term, c1, c, holds })
}

/// Caps `i` and `j` of equal width `w` in one row are separated when
/// `d = (|i - j| - 1) w >= threshold * w`.
pub fn separated(i: i64, j: i64, threshold: f64) -> bool {
    i != j && ((i - j).abs() - 1) as f64 >= threshold * (1.0 - REL_TOL)
}

/// Neighbourhood size under [`separated`] for a row of caps.
fn neighbourhood_size(threshold: f64) -> usize {
    let mut k = 1i64;
    while !separated(0, k, threshold) {
        k += 1;
    }
    (2 * k - 1) as usize
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointCertificate {
    pub index: (usize, usize),
    /// `|f(x)|^p`.
    pub value: f64,
    /// `sum_theta |f_theta(x)|^p`.
    pub narrow: f64,
    /// `sum_{s, tau} sum_{separated pairs} |f_tau1(x) f_tau2(x)|^{p/2}`.
    pub bilinear: f64,
    /// `C^m (narrow + N^p bilinear)`.
    pub rhs: f64,
    pub holds: bool,
    /// Smallest `C` with `|f|^p <= C^m (narrow + K^p bilinear)` at this point.
    pub c_emp: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BroadNarrowReport {
    pub r: u64,
    pub k: u64,
    pub p: f64,
    pub threshold: f64,
    /// Tree depth.
    pub m: u32,
    /// Per-stage constant from [`bg_constant`].
    pub c_bg: f64,
    /// Largest number of children of one node (the root has `2K`).
    pub n_children: usize,
    /// Separated pairs per stage, summed over parents.
    pub pairs_per_stage: Vec<usize>,
    pub points: Vec<PointCertificate>,
    pub violations: usize,
    pub c_emp_max: f64,
    pub witness: Option<(usize, usize)>,
}

/// `n` distinct grid points drawn uniformly.
pub fn sample_points(spec: &GridSpec, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = spec.m * spec.m;
    let n = n.min(total);
    let mut seen = std::collections::HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = rng.gen_range(0..total);
        if seen.insert(k) {
            out.push((k / spec.m, k % spec.m));
        }
    }
    out
}

/// Iterated two-term split of `|f(x)|^p` along the `K`-ary cap tree, evaluated at grid points.
pub fn broad_narrow(field: &TorusField, points: &[(usize, usize)], p: f64, k: u64, threshold: f64) -> Result<BroadNarrowReport> {
    if field.band != Band::Parabola {
        return Err(Error::InvalidParam("broad-narrow needs a parabola field".into()));
    }
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidParam(format!("threshold {threshold} must be non-negative")));
    }
    let spec = field.spec;
    let tree = build_cap_tree(spec.r, k, CapKind::Parabola)?;
    let m = tree.m;
    let fine = 1.0 / spec.rf().sqrt();
    let decomp = cap_decompose(field, fine)?;
    let atoms: Vec<((usize, usize), f64)> = points.iter().map(|&i| (i, 1.0)).collect();
    let n_fine = dyadic_caps(fine, CapKind::Parabola).len();
    // theta values, indexed [point][theta]
    let mut theta_vals = vec![vec![Complex64::new(0.0, 0.0); n_fine]; points.len()];
    for (&t, piece) in &decomp.pieces {
        for (row, v) in theta_vals.iter_mut().zip(values_at_atoms(piece, &atoms)) {
            row[t] = v;
        }
    }
    // stage j splits the level j-1 nodes (the whole arc for j = 1) into level j caps
    let stage_groups: Vec<Vec<Vec<usize>>> = (1..=m as usize)
        .map(|j| {
            if j == 1 {
                vec![tree.levels[1].clone()]
            } else {
                tree.levels[j - 1].iter().map(|&id| tree.children(id)).collect()
            }
        })
        .collect();
    let n_children = stage_groups.iter().flatten().map(|g| g.len()).max().unwrap_or(1);
    let c1 = neighbourhood_size(threshold);
    let c_bg = bg_constant(c1, p);
    let cm = c_bg.powi(m as i32);
    let nk = (n_children as f64).powf(p);
    let kp = (k as f64).powf(p);
    let pairs_per_stage = stage_groups
        .iter()
        .map(|groups| {
            groups
                .iter()
                .map(|g| {
                    let idx: Vec<i64> = g.iter().map(|&c| tree.caps[c].index).collect();
                    idx.iter().enumerate().map(|(a, &i)| idx[a + 1..].iter().filter(|&&j| separated(i, j, threshold)).count()).sum::<usize>()
                })
                .sum()
        })
        .collect();

    let mut out = Vec::with_capacity(points.len());
    let mut level_vals: Vec<Vec<Complex64>> = tree.levels.iter().map(|l| vec![Complex64::new(0.0, 0.0); l.len()]).collect();
    for (pt, thetas) in points.iter().zip(&theta_vals) {
        for (lv, ids) in level_vals.iter_mut().zip(&tree.levels) {
            lv.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            let s = tree.caps[ids[0]].s;
            for (t, v) in thetas.iter().enumerate() {
                lv[((t as f64 * fine) / s).floor() as usize] += v;
            }
        }
        let value = thetas.iter().sum::<Complex64>().norm().powf(p);
        let narrow: f64 = thetas.iter().map(|v| v.norm().powf(p)).sum();
        let mut bilinear = 0.0;
        for (j, groups) in stage_groups.iter().enumerate() {
            let lv = &level_vals[j + 1];
            let base = tree.levels[j + 1][0];
            for g in groups {
                for (a, &ca) in g.iter().enumerate() {
                    for &cb in &g[a + 1..] {
                        if separated(tree.caps[ca].index, tree.caps[cb].index, threshold) {
                            let prod = lv[ca - base].norm() * lv[cb - base].norm();
                            bilinear += prod.powf(0.5 * p);
                        }
                    }
                }
            }
        }
        let rhs = cm * (narrow + nk * bilinear);
        let holds = value <= rhs * (1.0 + REL_TOL);
        let denom = narrow + kp * bilinear;
        let c_emp = if value == 0.0 {
            0.0
        } else if denom > 0.0 {
            (value / denom).powf(1.0 / m as f64)
        } else {
            f64::INFINITY
        };
        out.push(PointCertificate { index: *pt, value, narrow, bilinear, rhs, holds, c_emp });
    }
    let violations = out.iter().filter(|c| !c.holds).count();
    let best = out.iter().max_by(|a, b| a.c_emp.partial_cmp(&b.c_emp).unwrap());
    Ok(BroadNarrowReport {
        r: spec.r,
        k,
        p,
        threshold,
        m,
        c_bg,
        n_children,
        pairs_per_stage,
        c_emp_max: best.map_or(0.0, |c| c.c_emp),
        witness: best.map(|c| c.index),
        points: out,
        violations,
    })
}

/// A field rescaled by the parabolic map of a cap: `g(x) = sum a_n e^{i x . A^{-1} xi_n}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RescaledField {
    pub cap: Cap,
    /// `R s^2`.
    pub r_s: f64,
    pub modes: Vec<([f64; 2], Complex64)>,
    /// Area of a period cell of `g`: `L^2 s^3`.
    pub area: f64,
}

impl RescaledField {
    pub fn eval(&self, x: [f64; 2]) -> Complex64 {
        self.modes.iter().map(|(eta, a)| a * Complex64::from_polar(1.0, x[0] * eta[0] + x[1] * eta[1])).sum()
    }

    /// `||g||_2^2` over one period cell.
    pub fn l2_sq(&self) -> f64 {
        self.area * self.modes.iter().map(|(_, a)| a.norm_sqr()).sum::<f64>()
    }

    /// `max |eta_2 - eta_1^2|` over the spectrum.
    pub fn parabola_offset(&self) -> f64 {
        self.modes.iter().map(|(e, _)| (e[1] - e[0] * e[0]).abs()).fold(0.0, f64::max)
    }

    /// `max |eta_1|`.
    pub fn width(&self) -> f64 {
        self.modes.iter().map(|(e, _)| e[0].abs()).fold(0.0, f64::max)
    }
}

/// Pulls the spectrum of `field` back through `A_tau`, so that `|g(x)| = |f(L_tau x)|`.
pub fn parabolic_rescale(field: &TorusField, cap: &Cap) -> Result<RescaledField> {
    if field.band != Band::Parabola || cap.kind != CapKind::Parabola {
        return Err(Error::InvalidParam("parabolic rescaling needs a parabola field and cap".into()));
    }
    let (lo, hi) = cap.interval();
    let tr = cap_transforms(cap);
    let a_inv = [[1.0 / cap.s, 0.0], [-2.0 * cap.c / (cap.s * cap.s), 1.0 / (cap.s * cap.s)]];
    let spec = field.spec;
    let mut modes = Vec::with_capacity(field.modes.len());
    for md in &field.modes {
        let xi = spec.xi(md.n);
        if xi[0] < lo - REL_TOL || xi[0] > hi + REL_TOL {
            return Err(Error::InvalidParam(format!("mode at xi_1 = {} lies outside the cap [{lo}, {hi}]", xi[0])));
        }
        let eta = mat_vec(&a_inv, [xi[0] - tr.base[0], xi[1] - tr.base[1]]);
        modes.push((eta, md.a));
    }
    Ok(RescaledField { cap: *cap, r_s: spec.rf() * cap.s * cap.s, modes, area: spec.area() / tr.det })
}

/// Two separated children of the unit cap at model scale `R_s`.
#[derive(Clone, Debug)]
pub struct BilinearPair {
    pub id: usize,
    pub parent: Cap,
    pub children: [Cap; 2],
    /// `d(tau_1, tau_2)`.
    pub separation: f64,
    pub g: [TorusField; 2],
    pub r_s: u64,
    pub k: u64,
}

impl BilinearPair {
    pub fn new(id: usize, g1: TorusField, g2: TorusField, children: [Cap; 2], k: u64, threshold: f64) -> Result<BilinearPair> {
        if g1.spec != g2.spec {
            return Err(Error::Mismatch("pair fields use different grids".into()));
        }
        let w = 1.0 / k as f64;
        if children.iter().any(|c| (c.s - w).abs() > REL_TOL) {
            return Err(Error::InvalidParam(format!("children must have width 1/K = {w}")));
        }
        if !separated(children[0].index, children[1].index, threshold) {
            return Err(Error::InvalidParam(format!(
                "caps at {} and {} are not separated by {threshold}/K",
                children[0].c, children[1].c
            )));
        }
        for (g, c) in [&g1, &g2].iter().zip(&children) {
            let (lo, hi) = c.interval();
            if g.modes.iter().any(|md| {
                let x = g.spec.xi(md.n)[0];
                x < lo || x > hi
            }) {
                return Err(Error::InvalidParam(format!("field leaves its cap at {}", c.c)));
            }
        }
        let separation = ((children[0].index - children[1].index).abs() - 1) as f64 * w;
        let r_s = g1.spec.r;
        Ok(BilinearPair {
            id,
            parent: Cap::new(2.0, 0.0, CapKind::Parabola),
            children,
            separation,
            g: [g1, g2],
            r_s,
            k,
        })
    }
}

/// Random separated pair: random phases and amplitudes on the band points of two random caps.
pub fn random_pair(id: usize, r_s: u64, k: u64, threshold: f64, seed: u64) -> Result<BilinearPair> {
    let spec = GridSpec::standard(r_s)?;
    let caps = dyadic_caps(1.0 / k as f64, CapKind::Parabola);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = caps.len() as i64;
    let choices: Vec<(i64, i64)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| separated(i, j, threshold)).collect();
    if choices.is_empty() {
        return Err(Error::InvalidParam(format!("no separated pair of 1/{k} caps at threshold {threshold}")));
    }
    let (i, j) = choices[rng.gen_range(0..choices.len())];
    let base = random_field(spec, Band::Parabola, rng.gen());
    let mut part = |cap: &Cap| {
        let (lo, hi) = cap.interval();
        let modes: Vec<Mode> = base
            .modes
            .iter()
            .filter(|md| {
                let x = spec.xi(md.n)[0];
                x >= lo && x < hi
            })
            .map(|md| Mode { n: md.n, a: md.a * rng.gen_range(0.0..1.0) })
            .collect();
        TorusField::from_modes(spec, Band::Parabola, &modes)
    };
    let c = [caps[i as usize], caps[j as usize]];
    let g1 = part(&c[0])?;
    let g2 = part(&c[1])?;
    BilinearPair::new(id, g1, g2, c, k, threshold)
}

/// Bilinear and locally-constant quantities of a pair on a box `B` of side `R_s`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BilinearReport {
    pub pair: usize,
    pub r_s: u64,
    pub k: u64,
    pub corner: (usize, usize),
    /// `int_B |g1 g2|^2`.
    pub i_b: f64,
    /// `int_{B cap Y} |g1 g2|^2`.
    pub i_by: f64,
    /// `sum_{q in B} |q| max_q |g1 g2|^2` over the unit-cube partition of `B`.
    pub i_b_sup: f64,
    /// `max_{q subset B} |q cap Y| / |q|`.
    pub ratio_max: f64,
    /// `||g_i||_{L^2(w_B)}^2`.
    pub n: [f64; 2],
    /// `||(sum_theta |g_theta|^2)^{1/2}||_{L^2(w_B)}^2`.
    pub sq: f64,
    /// `int_B |g1 g2|^2 |B| / (n_1 n_2)`.
    pub c_bil: f64,
    /// The same with `i_b_sup`.
    pub c_bil_sup: f64,
    /// `int_{B cap Y} |g1 g2|^2 |B| / (ratio_max n_1 n_2)`.
    pub c_l4: f64,
    pub l4_holds: bool,
    /// `||g_i||_{L^2(w_B)} / ||(sum |g_theta|^2)^{1/2}||_{L^2(w_B)}`.
    pub orth: [f64; 2],
    pub witness: [f64; 2],
}

/// Decay exponent of the box weight `w_B`.
pub const W_B_EXP: i32 = 10;

/// `(1 + dist_inf(x, B) / side)^{-10}` on the torus, with `B = corner + [0, side]^2`.
pub fn w_b(spec: &GridSpec, corner: [f64; 2], side: f64, x: [f64; 2]) -> f64 {
    let axis = |t: f64, b: f64| {
        let u = (t - b).rem_euclid(spec.l);
        if u <= side {
            0.0
        } else {
            (u - side).min(spec.l - u)
        }
    };
    let d = axis(x[0], corner[0]).max(axis(x[1], corner[1]));
    (1.0 + d / side).powi(-W_B_EXP)
}

/// Evaluates a pair on the box with lower-left grid index `corner` against the weight `y`.
pub fn bilinear_check(pair: &BilinearPair, corner: (usize, usize), y: &GridMeasure) -> Result<BilinearReport> {
    let spec = pair.g[0].spec;
    if y.spec != spec {
        return Err(Error::Mismatch("Y and the pair use different grids".into()));
    }
    let side = spec.rf();
    let d = spec.delta();
    let nb = (side / d).round() as usize;
    let nq = (1.0 / d).round() as usize;
    if nb > spec.m || nq == 0 || (nq as f64 * d - 1.0).abs() > REL_TOL || nb % nq != 0 {
        return Err(Error::InvalidSpec("box and unit cubes must be unions of grid cells".into()));
    }
    let m = spec.m;
    let mut planner = FftPlanner::new();
    let tw = Arc::new(twiddles(m));
    let evals: Vec<ColumnEvaluator> = pair.g.iter().map(|g| ColumnEvaluator::new(g, &mut planner, tw.clone())).collect();
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    let mut scratch = Vec::new();
    // |g1 g2|^2 on B, row-major
    let mut prod = vec![1.0; nb * nb];
    for e in &evals {
        for a in 0..nb {
            e.column((corner.0 + a) % m, &mut col, &mut scratch);
            for b in 0..nb {
                prod[a * nb + b] *= col[(corner.1 + b) % m].norm_sqr();
            }
        }
    }
    let mut ymass = vec![0.0; nb * nb];
    y.for_each_atom(|i1, i2, w| {
        let a = (i1 + m - corner.0) % m;
        let b = (i2 + m - corner.1) % m;
        if a < nb && b < nb {
            ymass[a * nb + b] += w;
        }
    });
    let cell = d * d;
    let i_b = cell * prod.iter().sum::<f64>();
    let i_by: f64 = prod.iter().zip(&ymass).map(|(g, w)| g * w).sum();
    let (wi, _) = prod.iter().enumerate().fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let witness = spec.point((corner.0 + wi / nb) % m, (corner.1 + wi % nb) % m);
    let mut i_b_sup = 0.0;
    for qa in (0..nb).step_by(nq) {
        for qb in (0..nb).step_by(nq) {
            let mut mx = 0.0f64;
            for a in qa..qa + nq {
                for b in qb..qb + nq {
                    mx = mx.max(prod[a * nb + b]);
                }
            }
            i_b_sup += mx;
        }
    }
    // sliding unit-cube masses of Y via a summed-area table
    let mut sat = vec![0.0; (nb + 1) * (nb + 1)];
    for a in 0..nb {
        for b in 0..nb {
            sat[(a + 1) * (nb + 1) + b + 1] = ymass[a * nb + b] + sat[a * (nb + 1) + b + 1] + sat[(a + 1) * (nb + 1) + b] - sat[a * (nb + 1) + b];
        }
    }
    let mut ratio_max = 0.0f64;
    for a in 0..=nb - nq {
        for b in 0..=nb - nq {
            let s = sat[(a + nq) * (nb + 1) + b + nq] - sat[a * (nb + 1) + b + nq] - sat[(a + nq) * (nb + 1) + b] + sat[a * (nb + 1) + b];
            ratio_max = ratio_max.max(s);
        }
    }

    let fine = 1.0 / spec.rf().sqrt();
    let whole = TorusField::sum(&[pair.g[0].clone(), pair.g[1].clone()])?;
    let decomp = cap_decompose(&whole, fine)?;
    let ext = decomp.pieces.values().chain(pair.g.iter()).map(piece_extent).max().unwrap_or(0) as usize;
    let mc = (8 * ext + 2).next_power_of_two().max(((8.0 * spec.l / side).ceil() as usize).next_power_of_two()).min(m);
    let h = spec.l / mc as f64;
    let c0 = spec.point(corner.0, corner.1);
    let wgt: Vec<f64> = (0..mc * mc).map(|i| w_b(&spec, c0, side, [(i / mc) as f64 * h, (i % mc) as f64 * h])).collect();
    let weighted = |v: &[f64]| h * h * v.iter().zip(&wgt).map(|(a, b)| a * b).sum::<f64>();
    let n = [
        weighted(&coarse_modulus_sq(&pair.g[0], mc, &mut planner)),
        weighted(&coarse_modulus_sq(&pair.g[1], mc, &mut planner)),
    ];
    let mut sq2 = vec![0.0; mc * mc];
    for piece in decomp.pieces.values() {
        for (a, b) in sq2.iter_mut().zip(coarse_modulus_sq(piece, mc, &mut planner)) {
            *a += b;
        }
    }
    let sq = weighted(&sq2);

    let area = side * side;
    let div = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a / b };
    let c_bil = div(i_b * area, n[0] * n[1]);
    let c_bil_sup = div(i_b_sup * area, n[0] * n[1]);
    let c_l4 = div(i_by * area, ratio_max * n[0] * n[1]);
    let l4_holds = i_by <= ratio_max * i_b_sup * (1.0 + 1e-9);
    Ok(BilinearReport {
        pair: pair.id,
        r_s: pair.r_s,
        k: pair.k,
        corner,
        i_b,
        i_by,
        i_b_sup,
        ratio_max,
        n,
        sq,
        c_bil,
        c_bil_sup,
        c_l4,
        l4_holds,
        orth: [div(n[0], sq).sqrt(), div(n[1], sq).sqrt()],
        witness,
    })
}

/// Constant-tracking sidecar `R,K,s,pair_id,constant,witness_x1,witness_x2`.
pub fn constants_csv(reports: &[BilinearReport]) -> String {
    let mut out = String::from("R,K,s,pair_id,constant,witness_x1,witness_x2\n");
    for r in reports {
        let _ = writeln!(out, "{},{},1,{},{:e},{},{}", r.r_s, r.k, r.pair, r.c_bil, r.witness[0], r.witness[1]);
    }
    out
}

/// Both sides of the local bilinear estimate on every envelope of one cap `tau`, and their sums.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalBilinearSum {
    pub s: f64,
    pub cap: usize,
    pub p: f64,
    pub k: u64,
    /// Child indices inside `tau`, at scale `s / K`.
    pub pair: [usize; 2],
    /// `|| |f_1 f_2|^{1/2} ||_{L^p(Y)}^p` over the whole torus.
    pub global_lhs: f64,
    /// The same quantity accumulated envelope by envelope.
    pub summed_lhs: f64,
    /// `sum_U kappa_{p,Y}(U)^p |U|^{1-p/2} ||(sum_{theta in tau} |f_theta|^2)^{1/2}||_{L^2(w_U)}^p`.
    pub summed_rhs: f64,
    /// `global_lhs / summed_rhs`.
    pub ratio: f64,
    pub max_local_ratio: f64,
    pub envelopes: usize,
}

/// Sums the local bilinear inequality over `U in U_tau` for the children `pair` of the
/// dyadic cap `cap` at scale `s`.  `K` must be a power of two and the children must not touch.
pub fn local_bilinear_sum(
    field: &TorusField,
    h: &GridMeasure,
    p: f64,
    s: f64,
    cap: usize,
    k: u64,
    pair: [usize; 2],
    data: &SquareData,
) -> Result<LocalBilinearSum> {
    let spec = field.spec;
    if field.band != Band::Parabola || h.kind != MeasureKind::Weight || h.spec != spec || data.spec != spec {
        return Err(Error::Mismatch("local bilinear sums need a parabola field, a weight and square data on one grid".into()));
    }
    if !(2.0..=4.0).contains(&p) {
        return Err(Error::InvalidParam(format!("p = {p} outside [2, 4]")));
    }
    if k < 2 || !k.is_power_of_two() {
        return Err(Error::InvalidParam(format!("K = {k} must be a power of two")));
    }
    let child_s = s / k as f64;
    let fine = 1.0 / spec.rf().sqrt();
    if child_s < fine * (1.0 - 1e-12) {
        return Err(Error::InvalidParam(format!("children of width {child_s} are finer than R^(-1/2)")));
    }
    let caps = dyadic_caps(s, CapKind::Parabola);
    let tau = *caps.get(cap).ok_or_else(|| Error::InvalidParam(format!("no cap {cap} at scale {s}")))?;
    let [i, j] = pair;
    if i >= k as usize || j >= k as usize || i.abs_diff(j) < 2 {
        return Err(Error::InvalidParam(format!("children {i} and {j} of {k} are not separated")));
    }
    let li = data
        .env_mass
        .iter()
        .position(|(t, _)| *t == s)
        .ok_or_else(|| Error::InvalidParam(format!("s = {s} is not a dyadic scale of the square data")))?;
    let decomp = cap_decompose(field, child_s)?;
    let atoms = h.materialize();
    let zero = TorusField::zero(spec, Band::Parabola);
    let base = cap * k as usize;
    let f1 = values_at_atoms(decomp.pieces.get(&(base + i)).unwrap_or(&zero), &atoms);
    let f2 = values_at_atoms(decomp.pieces.get(&(base + j)).unwrap_or(&zero), &atoms);
    let loc = Locator::new(spec, tau);
    let mut local: HashMap<[i64; 2], f64> = HashMap::new();
    let mut global_lhs = 0.0;
    for ((&((a, b), w), v1), v2) in atoms.iter().zip(&f1).zip(&f2) {
        let v = (v1.norm() * v2.norm()).powf(0.5 * p) * w;
        global_lhs += v;
        *local.entry(loc.locate_grid(a, b).1).or_insert(0.0) += v;
    }
    let scan = kappa_max(h, p, true)?;
    let masses = data.env_mass[li].1.get(&cap);
    let total: f64 = masses.map_or(0.0, |m| m.iter().sum());
    let u_area = loc.cell_area(TubeKind::Envelope);
    let mut summed_rhs = 0.0;
    let mut max_local_ratio = 0.0f64;
    let mut rhs_at: HashMap<[i64; 2], f64> = HashMap::new();
    for e in scan.entries.iter().filter(|e| e.s == s && e.cap == cap) {
        let l2 = masses.map_or(0.0, |m| weighted_l2_sq(&loc, m, total, e.z));
        let v = e.kappa.powf(p) * u_area.powf(1.0 - 0.5 * p) * l2.powf(0.5 * p);
        summed_rhs += v;
        rhs_at.insert(e.z, v);
    }
    for (z, l) in &local {
        if *l > 0.0 {
            let r = rhs_at.get(z).copied().unwrap_or(0.0);
            max_local_ratio = max_local_ratio.max(if r > 0.0 { l / r } else { f64::INFINITY });
        }
    }
    let summed_lhs = local.values().sum();
    let ratio = if summed_rhs > 0.0 { global_lhs / summed_rhs } else if global_lhs == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(LocalBilinearSum {
        s,
        cap,
        p,
        k,
        pair,
        global_lhs,
        summed_lhs,
        summed_rhs,
        ratio,
        max_local_ratio,
        envelopes: local.len(),
    })
}
