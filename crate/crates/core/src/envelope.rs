//! Cap decompositions, square functions, the weight functional `kappa` and the
//! two weighted inequalities (square function and wave envelope).

use crate::error::{Error, Result};
use crate::geometry::{cap_coordinate, caps_per_scale, dyadic_caps, Cap, CapKind, Locator, Periods, TubeKind};
use crate::measures::{GridMeasure, MeasureKind};
use crate::profiles::window_pair;
use crate::torus::{lp_norm_pow, AtomSource, Band, GridSpec, Mode, TorusField};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

/// Floor added to `kappa_max` in the square-function bound, as a power of `R`.
pub const KAPPA_FLOOR_EXP: f64 = -40.0;

pub fn cap_kind(band: Band) -> CapKind {
    match band {
        Band::Parabola => CapKind::Parabola,
        Band::Annulus => CapKind::CircleArc,
    }
}

/// Dyadic scales `1, 1/2, ..., R^{-1/2}`.
pub fn dyadic_scales(r: u64) -> Vec<f64> {
    let top = (r as f64).log2() / 2.0;
    (0..=top.round() as i32).map(|k| 0.5f64.powi(k)).collect()
}

fn check_scale(spec: &GridSpec, s: f64) -> Result<()> {
    let fine = 1.0 / spec.rf().sqrt();
    let k = -s.log2();
    if !(s > 0.0 && s <= 1.0 && (k - k.round()).abs() < 1e-12) {
        return Err(Error::InvalidParam(format!("scale {s} is not a dyadic number in (0, 1]")));
    }
    if s < fine * (1.0 - 1e-12) {
        return Err(Error::InvalidParam(format!("scale {s} finer than R^(-1/2) = {fine}")));
    }
    Ok(())
}

/// Window weights of frequency `xi` at scale `s`: at most two `(cap index, weight)` pairs.
/// Windows beyond the first or last cap are folded into it.
pub fn cap_weights(kind: CapKind, s: f64, xi: [f64; 2]) -> Vec<(usize, f64)> {
    let n = caps_per_scale(s) as i64;
    let t = (cap_coordinate(kind, xi) + 1.0) / s - 0.5;
    let (k0, wl, wr) = window_pair(t);
    let clamp = |k: i64| k.clamp(0, n - 1) as usize;
    let (a, b) = (clamp(k0), clamp(k0 + 1));
    let mut out = Vec::with_capacity(2);
    if a == b {
        out.push((a, wl + wr));
    } else {
        if wl > 0.0 {
            out.push((a, wl));
        }
        if wr > 0.0 {
            out.push((b, wr));
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct CapDecomposition {
    pub s: f64,
    pub kind: CapKind,
    /// Non-zero pieces `f_tau`, keyed by cap index along the scale.
    pub pieces: BTreeMap<usize, TorusField>,
    pub window: &'static str,
}

impl CapDecomposition {
    pub fn caps(&self) -> Vec<Cap> {
        dyadic_caps(self.s, self.kind)
    }

    pub fn reconstruct(&self, spec: GridSpec, band: Band) -> TorusField {
        let fields: Vec<TorusField> = self.pieces.values().cloned().collect();
        if fields.is_empty() {
            return TorusField::zero(spec, band);
        }
        TorusField::sum(&fields).expect("pieces share a grid")
    }
}

pub const WINDOW_NAME: &str = "smooth-step difference S(t+1/2) - S(t-1/2) dilated to the cap width";

/// `f = sum_tau f_tau` with `f_tau` the window multiplier of cap `tau` applied to the coefficients.
pub fn cap_decompose(field: &TorusField, s: f64) -> Result<CapDecomposition> {
    check_scale(&field.spec, s)?;
    let kind = cap_kind(field.band);
    let mut modes: BTreeMap<usize, Vec<Mode>> = BTreeMap::new();
    for md in &field.modes {
        for (k, w) in cap_weights(kind, s, field.spec.xi(md.n)) {
            modes.entry(k).or_default().push(Mode { n: md.n, a: md.a * w });
        }
    }
    let pieces = modes
        .into_iter()
        .filter_map(|(k, v)| {
            let f = TorusField::from_modes(field.spec, field.band, &v).expect("sub-spectrum of a valid field");
            (!f.is_zero()).then_some((k, f))
        })
        .collect();
    Ok(CapDecomposition { s, kind, pieces, window: WINDOW_NAME })
}

/// `(sum_tau |f_tau|^2)^{1/2}` on the full grid, stored as `values[i1 * M + i2]`.
pub fn square_function(decomp: &CapDecomposition, spec: GridSpec) -> Vec<f64> {
    let m = spec.m;
    let mut out = vec![0.0; m * m];
    let fields: Vec<&TorusField> = decomp.pieces.values().collect();
    crate::torus::for_each_column(&fields, |i1, cols| {
        let row = &mut out[i1 * m..(i1 + 1) * m];
        for c in cols {
            for (o, v) in row.iter_mut().zip(c) {
                *o += v.norm_sqr();
            }
        }
        row.iter_mut().for_each(|o| *o = o.sqrt());
    });
    out
}

/// `|g|^2` of a piece on the coarse grid `j L / mc`, after removing a carrier frequency.
pub(crate) fn coarse_modulus_sq(field: &TorusField, mc: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = field.modes.len();
    if n == 0 {
        return vec![0.0; mc * mc];
    }
    let mid = |k: usize| {
        let lo = field.modes.iter().map(|m| m.n[k]).min().unwrap();
        let hi = field.modes.iter().map(|m| m.n[k]).max().unwrap();
        (lo + hi).div_euclid(2)
    };
    let (c1, c2) = (mid(0), mid(1));
    let mi = mc as i64;
    let mut data = vec![Complex64::new(0.0, 0.0); mc * mc];
    for md in &field.modes {
        let k1 = (md.n[0] - c1).rem_euclid(mi) as usize;
        let k2 = (md.n[1] - c2).rem_euclid(mi) as usize;
        data[k1 * mc + k2] += md.a;
    }
    let fft = planner.plan_fft_inverse(mc);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for c in data.chunks_mut(mc) {
        fft.process_with_scratch(c, &mut scratch);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); mc];
    for k2 in 0..mc {
        for i1 in 0..mc {
            col[i1] = data[i1 * mc + k2];
        }
        fft.process_with_scratch(&mut col, &mut scratch);
        for i1 in 0..mc {
            data[i1 * mc + k2] = col[i1];
        }
    }
    data.into_iter().map(|v| v.norm_sqr()).collect()
}

/// Largest offset of a piece's lattice indices from their midpoint.
pub(crate) fn piece_extent(field: &TorusField) -> i64 {
    let mut e = 0;
    for k in 0..2 {
        let lo = field.modes.iter().map(|m| m.n[k]).min().unwrap_or(0);
        let hi = field.modes.iter().map(|m| m.n[k]).max().unwrap_or(0);
        let c = (lo + hi).div_euclid(2);
        e = e.max(hi - c).max(c - lo);
    }
    e
}

/// Coarse grid size: resolves `|g|^4` of every piece exactly and has spacing at most 4.
pub fn coarse_size(spec: &GridSpec, decomp: &CapDecomposition) -> usize {
    let ext = decomp.pieces.values().map(piece_extent).max().unwrap_or(0) as usize;
    let need = (8 * ext + 2).next_power_of_two();
    let spacing = ((spec.l / 4.0).ceil() as usize).next_power_of_two();
    need.max(spacing).max(8).min(spec.m)
}

/// Square function data of the finest decomposition, evaluated on a coarse grid:
/// `sum_theta |f_theta|^2` pointwise and its integrals over every envelope of every
/// dyadic cap that contains the pieces.
#[derive(Clone, Debug)]
pub struct SquareData {
    pub spec: GridSpec,
    pub mc: usize,
    /// `sum_theta |f_theta|^2` at `(j1 L / mc, j2 L / mc)`, row-major in `j1`.
    pub sq2: Vec<f64>,
    /// For each dyadic scale (coarse to fine): map cap index -> envelope integrals
    /// of `sum_{theta in tau} |f_theta|^2`, indexed `z2 * a + z1` by wrapped envelope index.
    pub env_mass: Vec<(f64, BTreeMap<usize, Vec<f64>>)>,
}

impl SquareData {
    pub fn build(field: &TorusField) -> Result<SquareData> {
        if field.band != Band::Parabola {
            return Err(Error::InvalidParam("envelope data needs a parabola field".into()));
        }
        let spec = field.spec;
        let fine = 1.0 / spec.rf().sqrt();
        let decomp = cap_decompose(field, fine)?;
        let mc = coarse_size(&spec, &decomp);
        let h = spec.l / mc as f64;
        let cell = h * h;
        let scales = dyadic_scales(spec.r);
        let mut env_mass: Vec<(f64, BTreeMap<usize, Vec<f64>>)> = scales.iter().map(|&s| (s, BTreeMap::new())).collect();
        let mut locators: Vec<Vec<Locator>> = scales
            .iter()
            .map(|&s| dyadic_caps(s, CapKind::Parabola).into_iter().map(|c| Locator::new(spec, c)).collect())
            .collect();
        let mut sq2 = vec![0.0; mc * mc];
        let mut planner = FftPlanner::new();
        // running sum of |f_theta|^2 over the pieces of the current cap at each scale
        let mut pending: Vec<Option<(usize, Vec<f64>)>> = vec![None; scales.len()];
        let flush = |tau: usize, buf: &[f64], loc: &mut Locator, out: &mut BTreeMap<usize, Vec<f64>>| -> Result<()> {
            let per = loc.env_periods.ok_or_else(|| Error::InvalidSpec("envelope periods are not integral".into()))?;
            let mut acc = vec![0.0; (per.a * per.d) as usize];
            for j1 in 0..mc {
                for j2 in 0..mc {
                    let v = buf[j1 * mc + j2];
                    if v == 0.0 {
                        continue;
                    }
                    let z = loc.locate([j1 as f64 * h, j2 as f64 * h], TubeKind::Envelope).z;
                    acc[(z[1] * per.a + z[0]) as usize] += v * cell;
                }
            }
            out.insert(tau, acc);
            Ok(())
        };
        for (&k, piece) in &decomp.pieces {
            let g2 = coarse_modulus_sq(piece, mc, &mut planner);
            for (a, b) in sq2.iter_mut().zip(&g2) {
                *a += b;
            }
            for (li, &s) in scales.iter().enumerate() {
                let tau = ((k as f64 * fine) / s).floor() as usize;
                match &mut pending[li] {
                    Some((t, buf)) if *t == tau => {
                        for (a, b) in buf.iter_mut().zip(&g2) {
                            *a += b;
                        }
                    }
                    slot => {
                        if let Some((t, buf)) = slot.take() {
                            flush(t, &buf, &mut locators[li][t], &mut env_mass[li].1)?;
                        }
                        *slot = Some((tau, g2.clone()));
                    }
                }
            }
        }
        for (li, slot) in pending.into_iter().enumerate() {
            if let Some((t, buf)) = slot {
                flush(t, &buf, &mut locators[li][t], &mut env_mass[li].1)?;
            }
        }
        Ok(SquareData { spec, mc, sq2, env_mass })
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.spec.l / self.mc as f64;
        h * h
    }

    /// `||(sum_theta |f_theta|^2)^{1/2}||_p^p` by coarse quadrature.
    pub fn sq_norm_pow(&self, p: f64) -> f64 {
        self.cell_area() * self.sq2.iter().map(|v| v.max(0.0).powf(0.5 * p)).sum::<f64>()
    }
}

/// Per-envelope kappa values for one cap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KappaEntry {
    pub s: f64,
    pub cap: usize,
    pub z: [i64; 2],
    pub h_u: f64,
    pub h_t_max: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KappaScan {
    pub p: f64,
    pub value: f64,
    pub witness: Option<KappaEntry>,
    /// Largest kappa at each scale, coarse to fine.
    pub per_scale: Vec<(f64, f64)>,
    pub entries: Vec<KappaEntry>,
}

pub fn kappa_value(p: f64, h_t: f64, t_area: f64, h_u: f64, u_area: f64) -> f64 {
    if h_u <= 0.0 || h_t <= 0.0 {
        return 0.0;
    }
    (h_t / t_area).powf(0.25) * (h_u / u_area).powf(1.0 / p - 0.25)
}

/// `kappa_{p,H}(U)` for `U` given by its wrapped envelope index, by direct accumulation.
pub fn kappa(h: &GridMeasure, p: f64, cap: &Cap, u: [i64; 2]) -> Result<f64> {
    let loc = Locator::new(h.spec, *cap);
    let mut tubes: HashMap<[i64; 2], f64> = HashMap::new();
    let mut h_u = 0.0;
    h.for_each_atom(|a, b, w| {
        let (t, e) = loc.locate_grid(a, b);
        if e == u {
            h_u += w;
            *tubes.entry(t).or_insert(0.0) += w;
        }
    });
    let h_t = tubes.values().cloned().fold(0.0, f64::max);
    Ok(kappa_value(p, h_t, loc.cell_area(TubeKind::Tube), h_u, loc.cell_area(TubeKind::Envelope)))
}

fn scan_cap(h: &GridMeasure, p: f64, loc: &Locator, s: f64, keep: bool, out: &mut KappaScan, best_s: &mut f64) {
    let t_area = loc.cell_area(TubeKind::Tube);
    let u_area = loc.cell_area(TubeKind::Envelope);
    let tp = loc.tube_periods.expect("parabola caps have integral periods");
    let ep = loc.env_periods.expect("parabola caps have integral periods");
    // (H(U), max H(T)) per canonical envelope, in `cells` order
    let mut envs = vec![(0.0f64, 0.0f64); ep.count() as usize];
    if let Some(lambda) = h.uniform_density() {
        if lambda == 0.0 {
            return;
        }
        // every tube holds `t_area / Delta^2` grid points, every envelope `n_env^2` tubes
        let n = loc.n_env as f64;
        envs.fill((lambda * t_area * n * n, lambda * t_area));
    } else {
        let mut tubes = vec![(0.0f64, 0usize); tp.count() as usize];
        for &((a, b), w) in h.atoms() {
            let (t, e) = loc.locate_grid(a, b);
            let ei = (e[0] * ep.d + e[1]) as usize;
            let slot = &mut tubes[(t[0] * tp.d + t[1]) as usize];
            slot.0 += w;
            slot.1 = ei;
            envs[ei].0 += w;
        }
        for &(m, e) in &tubes {
            if m > 0.0 {
                envs[e].1 = envs[e].1.max(m);
            }
        }
    }
    let mut scale_best = 0.0f64;
    for (i, &(h_u, h_t)) in envs.iter().enumerate() {
        if h_u == 0.0 {
            continue;
        }
        let z = [i as i64 / ep.d, i as i64 % ep.d];
        let k = kappa_value(p, h_t, t_area, h_u, u_area);
        if k > out.value {
            out.value = k;
            out.witness = Some(KappaEntry { s, cap: loc.cap.id, z, h_u, h_t_max: h_t, kappa: k });
        }
        scale_best = scale_best.max(k);
        if keep && k > 0.0 {
            out.entries.push(KappaEntry { s, cap: loc.cap.id, z, h_u, h_t_max: h_t, kappa: k });
        }
    }
    *best_s = best_s.max(scale_best);
}

/// `max_U kappa_{p,H}(U)` over every dyadic scale, cap and envelope.
/// With `keep_entries` every non-zero `kappa(U)` is returned as well.
pub fn kappa_max(h: &GridMeasure, p: f64, keep_entries: bool) -> Result<KappaScan> {
    if h.kind != MeasureKind::Weight {
        return Err(Error::InvalidParam("kappa needs a weight".into()));
    }
    let mut out = KappaScan { p, value: 0.0, witness: None, per_scale: Vec::new(), entries: Vec::new() };
    for s in dyadic_scales(h.spec.r) {
        let mut best = 0.0;
        for cap in dyadic_caps(s, CapKind::Parabola) {
            let loc = Locator::new(h.spec, cap);
            scan_cap(h, p, &loc, s, keep_entries, &mut out, &mut best);
        }
        out.per_scale.push((s, best));
    }
    Ok(out)
}

/// Image of `y` under the torus lattice `{i (a, 0) + j (b, d)}` (tube coordinates) that lies in
/// `[lo1, lo1 + a) x [lo2, lo2 + d)`.
fn reduce_into(y: [f64; 2], lo: [f64; 2], per: Periods) -> [f64; 2] {
    let (a, b, d) = (per.a as f64, per.b as f64, per.d as f64);
    let j = ((y[1] - lo[1]) / d).floor();
    let y0 = y[0] - j * b;
    let y1 = y[1] - j * d;
    let i = ((y0 - lo[0]) / a).floor();
    [y0 - i * a, y1]
}

fn in_box(y: [f64; 2], c: [f64; 2], hw: f64) -> bool {
    y[0] >= c[0] - hw && y[0] < c[0] + hw && y[1] >= c[1] - hw && y[1] < c[1] + hw
}

/// Exhaustive oracle: enumerates every envelope and every tube of every cap and tests atom
/// membership geometrically, by reducing the atom's image under the inverse shear into the
/// cell's own period parallelogram. `T subset U` is decided from the tube centre.
pub fn kappa_max_brute(h: &GridMeasure, p: f64) -> Result<KappaScan> {
    let spec = h.spec;
    let atoms = h.materialize();
    let mut out = KappaScan { p, value: 0.0, witness: None, per_scale: Vec::new(), entries: Vec::new() };
    for s in dyadic_scales(spec.r) {
        let mut scale_best = 0.0f64;
        for cap in dyadic_caps(s, CapKind::Parabola) {
            let loc = Locator::new(spec, cap);
            let per = loc.tube_periods.ok_or_else(|| Error::InvalidSpec("no tube periods".into()))?;
            let ys: Vec<[f64; 2]> = atoms.iter().map(|&((a, b), _)| loc.tr.apply_l_inv(spec.point(a, b))).collect();
            let t_area = loc.cell_area(TubeKind::Tube);
            let u_area = loc.cell_area(TubeKind::Envelope);
            let tubes = loc.cells(TubeKind::Tube).ok_or_else(|| Error::InvalidSpec("no tube periods".into()))?;
            let envs = loc.cells(TubeKind::Envelope).ok_or_else(|| Error::InvalidSpec("no envelope periods".into()))?;
            // tube candidates: atoms bucketed by their image in the tube fundamental domain
            let lo_t = [-0.5, -0.5];
            let mut buckets: HashMap<[i64; 2], Vec<usize>> = HashMap::new();
            for (k, &y) in ys.iter().enumerate() {
                let q = reduce_into(y, lo_t, per);
                buckets.entry([q[0].floor() as i64, q[1].floor() as i64]).or_default().push(k);
            }
            let mut h_u = Vec::with_capacity(envs.len());
            let mut env_geo = Vec::with_capacity(envs.len());
            for &u in &envs {
                let (c, hw) = loc.cell_center_y(u, TubeKind::Envelope);
                let lo = [c[0] - hw, c[1] - hw];
                let m: f64 = ys
                    .iter()
                    .zip(&atoms)
                    .filter(|(y, _)| in_box(reduce_into(**y, lo, per), c, hw))
                    .map(|(_, a)| a.1)
                    .sum();
                h_u.push(m);
                env_geo.push((c, hw));
            }
            let mut t_max = vec![0.0f64; envs.len()];
            for t in tubes {
                let c = [t[0] as f64, t[1] as f64];
                let mut members = Vec::new();
                for i in -1..=1 {
                    for j in -1..=1 {
                        if let Some(ks) = buckets.get(&[t[0] + i, t[1] + j]) {
                            members.extend(ks.iter().copied().filter(|&k| in_box(reduce_into(ys[k], lo_t, per), c, 0.5)));
                        }
                    }
                }
                if members.is_empty() {
                    continue;
                }
                members.sort_unstable();
                let ht: f64 = members.iter().map(|&k| atoms[k].1).sum();
                let owners: Vec<usize> = env_geo
                    .iter()
                    .enumerate()
                    .filter(|(_, &(ec, hw))| in_box(reduce_into(c, [ec[0] - hw, ec[1] - hw], per), ec, hw))
                    .map(|(k, _)| k)
                    .collect();
                let [k] = owners[..] else {
                    return Err(Error::InvalidSpec(format!("tube {t:?} lies in {} envelopes", owners.len())));
                };
                t_max[k] = t_max[k].max(ht);
            }
            for (k, &u) in envs.iter().enumerate() {
                let v = kappa_value(p, t_max[k], t_area, h_u[k], u_area);
                scale_best = scale_best.max(v);
                if v > out.value {
                    out.value = v;
                    out.witness = Some(KappaEntry { s, cap: cap.id, z: u, h_u: h_u[k], h_t_max: t_max[k], kappa: v });
                }
            }
        }
        out.per_scale.push((s, scale_best));
    }
    Ok(out)
}

/// Cell-constant envelope weight: `(1 + d)^{-10}` at envelope distance `d <= 2`,
/// and the constant `4^{-10}` on every farther envelope.
pub fn w_u(d: i64) -> f64 {
    if d <= 2 {
        (1.0 + d as f64).powi(-10)
    } else {
        4f64.powi(-10)
    }
}

pub const W_U_TAIL: f64 = 9.5367431640625e-7;

/// `||(sum_{theta in tau} |f_theta|^2)^{1/2}||_{L^2(w_U)}^2` from envelope integrals.
pub(crate) fn weighted_l2_sq(loc: &Locator, masses: &[f64], total: f64, u: [i64; 2]) -> f64 {
    let per = loc.env_periods.expect("parabola caps have integral periods");
    let count = (per.a * per.d) as usize;
    let mut near = 0.0;
    let mut near_mass = 0.0;
    if count <= 64 {
        for z2 in 0..per.d {
            for z1 in 0..per.a {
                let d = loc.cell_distance(u, [z1, z2], TubeKind::Envelope);
                if d <= 2 {
                    let g = masses[(z2 * per.a + z1) as usize];
                    near += w_u(d) * g;
                    near_mass += g;
                }
            }
        }
    } else {
        let mut seen: Vec<[i64; 2]> = Vec::with_capacity(25);
        for d1 in -2..=2 {
            for d2 in -2..=2 {
                let v = loc.wrap([u[0] + d1, u[1] + d2], TubeKind::Envelope);
                if seen.contains(&v) {
                    continue;
                }
                seen.push(v);
                let d = loc.cell_distance(u, v, TubeKind::Envelope);
                let g = masses[(v[1] * per.a + v[0]) as usize];
                near += w_u(d) * g;
                near_mass += g;
            }
        }
    }
    near + W_U_TAIL * (total - near_mass).max(0.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvTerm {
    pub s: f64,
    pub cap: usize,
    pub z: [i64; 2],
    pub kappa: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioReport {
    pub p: f64,
    pub r: u64,
    pub weight: String,
    /// `||f||_{L^p(H)}`.
    pub lhs: f64,
    /// `||(sum_theta |f_theta|^2)^{1/2}||_p`.
    pub sq_norm: f64,
    pub kappa_max: f64,
    pub kappa_witness: Option<KappaEntry>,
    pub kappa_floor: f64,
    /// `(kappa_max + R^{-40}) ||(sum |f_theta|^2)^{1/2}||_p`.
    pub sq_rhs: f64,
    /// Wave envelope sum.
    pub env_rhs: f64,
    pub env_per_scale: Vec<(f64, f64)>,
    pub largest_term: Option<EnvTerm>,
    pub terms: Vec<EnvTerm>,
    /// `lhs / sq_rhs`.
    pub sq_ratio: f64,
    /// `lhs^p / env_rhs`.
    pub env_ratio: f64,
    pub zero_field: bool,
    pub coarse_grid: usize,
}

impl RatioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-term sidecar `s,cap_id,z1,z2,kappa,term`.
    pub fn terms_csv(&self) -> String {
        let mut out = String::from("s,cap_id,z1,z2,kappa,term\n");
        for t in &self.terms {
            let _ = writeln!(out, "{},{},{},{},{:e},{:e}", t.s, t.cap, t.z[0], t.z[1], t.kappa, t.value);
        }
        out
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else if a == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Both sides of the weighted square-function and wave-envelope inequalities.
pub fn verify_weighted_sq(field: &TorusField, h: &GridMeasure, p: f64) -> Result<RatioReport> {
    let data = if field.is_zero() || field.band != Band::Parabola { None } else { Some(SquareData::build(field)?) };
    verify_weighted_sq_with(field, h, p, data.as_ref())
}

/// As [`verify_weighted_sq`], reusing square-function data built from `field`.
pub fn verify_weighted_sq_with(field: &TorusField, h: &GridMeasure, p: f64, data: Option<&SquareData>) -> Result<RatioReport> {
    if !(2.0..=4.0).contains(&p) {
        return Err(Error::InvalidParam(format!("p = {p} outside [2, 4]")));
    }
    if h.kind != MeasureKind::Weight {
        return Err(Error::InvalidParam("the inequalities take a weight".into()));
    }
    if h.spec != field.spec {
        return Err(Error::Mismatch("weight and field use different grids".into()));
    }
    let spec = field.spec;
    let floor = spec.rf().powf(KAPPA_FLOOR_EXP);
    let scan = kappa_max(h, p, true)?;
    if field.is_zero() {
        return Ok(RatioReport {
            p,
            r: spec.r,
            weight: h.label.clone(),
            lhs: 0.0,
            sq_norm: 0.0,
            kappa_max: scan.value,
            kappa_witness: scan.witness,
            kappa_floor: floor,
            sq_rhs: 0.0,
            env_rhs: 0.0,
            env_per_scale: Vec::new(),
            largest_term: None,
            terms: Vec::new(),
            sq_ratio: 0.0,
            env_ratio: 0.0,
            zero_field: true,
            coarse_grid: 0,
        });
    }
    let lhs_pow = lp_norm_pow(field, p, Some(h as &dyn AtomSource))?;
    let built;
    let data = match data {
        Some(d) => d,
        None => {
            built = SquareData::build(field)?;
            &built
        }
    };
    let sq_norm = data.sq_norm_pow(p).powf(1.0 / p);
    let mut terms = Vec::new();
    let mut per_scale: BTreeMap<u64, f64> = BTreeMap::new();
    let mut locs: HashMap<(u64, usize), Locator> = HashMap::new();
    for e in &scan.entries {
        let li = data.env_mass.iter().position(|(s, _)| *s == e.s).expect("scale present");
        let Some(masses) = data.env_mass[li].1.get(&e.cap) else { continue };
        let loc = locs
            .entry((e.s.to_bits(), e.cap))
            .or_insert_with(|| Locator::new(spec, dyadic_caps(e.s, CapKind::Parabola)[e.cap]));
        let total: f64 = masses.iter().sum();
        let l2 = weighted_l2_sq(loc, masses, total, e.z);
        let u_area = loc.cell_area(TubeKind::Envelope);
        let value = e.kappa.powf(p) * u_area.powf(1.0 - p / 2.0) * l2.powf(p / 2.0);
        *per_scale.entry(e.s.to_bits()).or_insert(0.0) += value;
        terms.push(EnvTerm { s: e.s, cap: e.cap, z: e.z, kappa: e.kappa, value });
    }
    let env_rhs: f64 = terms.iter().map(|t| t.value).sum();
    let largest_term = terms.iter().cloned().max_by(|a, b| a.value.partial_cmp(&b.value).unwrap());
    let lhs = lhs_pow.powf(1.0 / p);
    let sq_rhs = (scan.value + floor) * sq_norm;
    let mut env_per_scale: Vec<(f64, f64)> = per_scale.into_iter().map(|(k, v)| (f64::from_bits(k), v)).collect();
    env_per_scale.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    Ok(RatioReport {
        p,
        r: spec.r,
        weight: h.label.clone(),
        lhs,
        sq_norm,
        kappa_max: scan.value,
        kappa_witness: scan.witness,
        kappa_floor: floor,
        sq_rhs,
        env_rhs,
        env_per_scale,
        largest_term,
        terms,
        sq_ratio: ratio(lhs, sq_rhs),
        env_ratio: ratio(lhs_pow, env_rhs),
        zero_field: false,
        coarse_grid: data.mc,
    })
}
