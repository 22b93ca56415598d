//! Band-limited functions on the periodic square `[0, L)^2`.
//!
//! A field is a finite trigonometric sum `f(x) = sum a_n exp(i x . xi_n)` with
//! `xi_n = (2 pi / L) n`, `n` in `Z^2`. Samples live on the `M x M` grid of spacing
//! `L / M`; index `(i1, i2)` is the point `(i1 * L / M, i2 * L / M)`.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

const BAND_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub r: u64,
    pub l: f64,
    pub m: usize,
}

pub fn is_power_of_four(r: u64) -> bool {
    r.is_power_of_two() && r.trailing_zeros() % 2 == 0
}

impl GridSpec {
    /// Validated grid: `R` a power of 4, `M` a power of 2 with `M > 5 L / pi`, and a
    /// lattice spacing fine enough that every finest cap holds at least one column.
    pub fn new(r: u64, l: f64, m: usize) -> Result<Self> {
        if !is_power_of_four(r) {
            return Err(Error::InvalidSpec(format!("R = {r} is not a power of 4")));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidSpec(format!("period L = {l} must be positive")));
        }
        if !m.is_power_of_two() {
            return Err(Error::InvalidSpec(format!("M = {m} is not a power of 2")));
        }
        if (m as f64) <= 5.0 * l / PI {
            return Err(Error::InvalidSpec(format!(
                "M = {m} must exceed 5 L / pi = {:.3} for exact quartic quadrature",
                5.0 * l / PI
            )));
        }
        let spacing = 2.0 * PI / l;
        let theta_width = 1.0 / (r as f64).sqrt();
        if spacing > theta_width * (1.0 + 1e-12) {
            return Err(Error::InvalidSpec(format!(
                "lattice spacing 2pi/L = {spacing:.4} exceeds the finest cap width {theta_width:.4}"
            )));
        }
        Ok(GridSpec { r, l, m })
    }

    /// `L = 4R`, `M` the smallest power of two with `M >= 8R` and `M > 5L/pi`.
    pub fn standard(r: u64) -> Result<Self> {
        let l = 4.0 * r as f64;
        let mut m = (8 * r as usize).next_power_of_two();
        while (m as f64) <= 5.0 * l / PI {
            m *= 2;
        }
        Self::new(r, l, m)
    }

    pub fn rf(&self) -> f64 {
        self.r as f64
    }

    pub fn delta(&self) -> f64 {
        self.l / self.m as f64
    }

    pub fn freq_unit(&self) -> f64 {
        2.0 * PI / self.l
    }

    pub fn xi(&self, n: [i64; 2]) -> [f64; 2] {
        let u = self.freq_unit();
        [u * n[0] as f64, u * n[1] as f64]
    }

    pub fn point(&self, i1: usize, i2: usize) -> [f64; 2] {
        let d = self.delta();
        [d * i1 as f64, d * i2 as f64]
    }

    /// Grid index of the sample nearest to `x` (torus-wrapped).
    pub fn nearest_index(&self, x: [f64; 2]) -> (usize, usize) {
        let d = self.delta();
        let m = self.m as i64;
        let a = ((x[0] / d).round() as i64).rem_euclid(m) as usize;
        let b = ((x[1] / d).round() as i64).rem_euclid(m) as usize;
        (a, b)
    }

    /// Minimal-image displacement `x - y` on the torus.
    pub fn wrap_diff(&self, x: [f64; 2], y: [f64; 2]) -> [f64; 2] {
        let w = |t: f64| t - self.l * (t / self.l).round();
        [w(x[0] - y[0]), w(x[1] - y[1])]
    }

    pub fn area(&self) -> f64 {
        self.l * self.l
    }
}

/// Admissible frequency region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Band {
    /// `|xi1| <= 1`, `|xi2 - xi1^2| <= 1/R`.
    Parabola,
    /// `|1 - |xi|| <= 2/R` inside the lower sector `xi2 < 0`, `|xi1| <= |xi2|`.
    Annulus,
}

impl Band {
    pub fn contains(&self, spec: &GridSpec, xi: [f64; 2]) -> bool {
        let inv_r = 1.0 / spec.rf();
        match self {
            Band::Parabola => {
                xi[0].abs() <= 1.0 + BAND_SLACK && (xi[1] - xi[0] * xi[0]).abs() <= inv_r + BAND_SLACK
            }
            Band::Annulus => {
                let rad = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
                xi[1] < 0.0 && xi[0].abs() <= -xi[1] + BAND_SLACK && (1.0 - rad).abs() <= 2.0 * inv_r + BAND_SLACK
            }
        }
    }

    /// All lattice points of the band, ordered by `(n1, n2)`.
    pub fn lattice_points(&self, spec: &GridSpec) -> Vec<[i64; 2]> {
        let u = spec.freq_unit();
        let inv_r = 1.0 / spec.rf();
        let n1max = ((1.0 + BAND_SLACK) / u).floor() as i64;
        let mut out = Vec::new();
        for n1 in -n1max..=n1max {
            let xi1 = u * n1 as f64;
            let (lo, hi) = match self {
                Band::Parabola => (xi1 * xi1 - inv_r, xi1 * xi1 + inv_r),
                Band::Annulus => (-(1.0 + 2.0 * inv_r), -xi1.abs()),
            };
            let a = ((lo - BAND_SLACK) / u).ceil() as i64;
            let b = ((hi + BAND_SLACK) / u).floor() as i64;
            for n2 in a..=b {
                if self.contains(spec, spec.xi([n1, n2])) {
                    out.push([n1, n2]);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub n: [i64; 2],
    pub a: Complex64,
}

/// Coefficients in canonical order (sorted by lattice index, zero amplitudes dropped,
/// repeated indices merged).
pub fn canonical_modes(modes: &[Mode]) -> Vec<Mode> {
    let mut map: BTreeMap<[i64; 2], Complex64> = BTreeMap::new();
    for md in modes {
        *map.entry(md.n).or_insert(Complex64::new(0.0, 0.0)) += md.a;
    }
    map.into_iter()
        .filter(|(_, a)| a.norm_sqr() > 0.0)
        .map(|(n, a)| Mode { n, a })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TorusField {
    pub spec: GridSpec,
    pub band: Band,
    pub modes: Vec<Mode>,
    /// Optional `M x M` samples, stored column by column: `samples[i1 * M + i2]`.
    pub samples: Option<Vec<Complex64>>,
}

impl TorusField {
    /// Validated coefficient-only field.
    pub fn from_modes(spec: GridSpec, band: Band, modes: &[Mode]) -> Result<Self> {
        let modes = canonical_modes(modes);
        for md in &modes {
            let xi = spec.xi(md.n);
            if !band.contains(&spec, xi) {
                return Err(Error::OutOfBand { n1: md.n[0], n2: md.n[1], xi1: xi[0], xi2: xi[1] });
            }
        }
        Ok(TorusField { spec, band, modes, samples: None })
    }

    /// Field from real frequencies; each must sit on the lattice.
    pub fn from_frequencies(spec: GridSpec, band: Band, terms: &[([f64; 2], Complex64)]) -> Result<Self> {
        let u = spec.freq_unit();
        let mut modes = Vec::with_capacity(terms.len());
        for (xi, a) in terms {
            let t = [xi[0] / u, xi[1] / u];
            let n = [t[0].round(), t[1].round()];
            if (t[0] - n[0]).abs() > 1e-9 || (t[1] - n[1]).abs() > 1e-9 {
                return Err(Error::OffLattice(xi[0], xi[1]));
            }
            modes.push(Mode { n: [n[0] as i64, n[1] as i64], a: *a });
        }
        Self::from_modes(spec, band, &modes)
    }

    pub fn zero(spec: GridSpec, band: Band) -> Self {
        TorusField { spec, band, modes: Vec::new(), samples: None }
    }

    pub fn is_zero(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn coeff_l2_sq(&self) -> f64 {
        self.modes.iter().map(|m| m.a.norm_sqr()).sum()
    }

    /// `||f||_2^2 = L^2 sum |a|^2` on the torus.
    pub fn l2_sq(&self) -> f64 {
        self.spec.area() * self.coeff_l2_sq()
    }

    pub fn scaled(&self, c: Complex64) -> TorusField {
        let modes: Vec<Mode> = self.modes.iter().map(|m| Mode { n: m.n, a: m.a * c }).collect();
        TorusField {
            spec: self.spec,
            band: self.band,
            modes: canonical_modes(&modes),
            samples: self.samples.as_ref().map(|s| s.iter().map(|v| v * c).collect()),
        }
    }

    pub fn sample(&self, i1: usize, i2: usize) -> Option<Complex64> {
        self.samples.as_ref().map(|s| s[i1 * self.spec.m + i2])
    }

    /// Sum of fields on the same grid and band.
    pub fn sum(fields: &[TorusField]) -> Result<TorusField> {
        let first = fields.first().ok_or_else(|| Error::InvalidParam("empty sum".into()))?;
        let mut modes = Vec::new();
        for f in fields {
            if f.spec != first.spec || f.band != first.band {
                return Err(Error::Mismatch("summands live on different grids".into()));
            }
            modes.extend_from_slice(&f.modes);
        }
        Ok(TorusField { spec: first.spec, band: first.band, modes: canonical_modes(&modes), samples: None })
    }
}

fn phase(spec: &GridSpec, n: [i64; 2], x: [f64; 2]) -> Complex64 {
    let t = (n[0] as f64 * x[0] + n[1] as f64 * x[1]) / spec.l;
    let t = t - t.floor();
    Complex64::from_polar(1.0, 2.0 * PI * t)
}

/// Direct trigonometric sum at arbitrary points.
pub fn point_eval(field: &TorusField, points: &[[f64; 2]]) -> Vec<Complex64> {
    points
        .iter()
        .map(|&x| field.modes.iter().map(|md| md.a * phase(&field.spec, md.n, x)).sum())
        .collect()
}

/// Direct trigonometric sum at grid indices, using exact integer phase reduction.
pub fn grid_eval(field: &TorusField, idx: &[(usize, usize)]) -> Vec<Complex64> {
    let m = field.spec.m as i64;
    let tw = twiddles(field.spec.m);
    idx.iter()
        .map(|&(i1, i2)| {
            field
                .modes
                .iter()
                .map(|md| {
                    let k = (md.n[0].rem_euclid(m) * i1 as i64 + md.n[1].rem_euclid(m) * i2 as i64).rem_euclid(m);
                    md.a * tw[k as usize]
                })
                .sum()
        })
        .collect()
}

/// `exp(2 pi i k / m)` for `k < m`.
pub fn twiddles(m: usize) -> Vec<Complex64> {
    (0..m).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64)).collect()
}

const DIRECT_ROWS: usize = 8;

/// Column-by-column evaluator: holds the partially transformed rows of a field and
/// produces one grid column `f(x1_i, .)` at a time in `O(M log M)`.
pub struct ColumnEvaluator {
    m: usize,
    rows: Vec<(usize, Vec<Complex64>)>,
    fft: Arc<dyn Fft<f64>>,
    tw: Arc<Vec<Complex64>>,
}

impl ColumnEvaluator {
    pub fn new(field: &TorusField, planner: &mut FftPlanner<f64>, tw: Arc<Vec<Complex64>>) -> Self {
        let m = field.spec.m;
        let fft = planner.plan_fft_inverse(m);
        let mut by_row: BTreeMap<usize, Vec<Complex64>> = BTreeMap::new();
        for md in &field.modes {
            let r = md.n[1].rem_euclid(m as i64) as usize;
            let c = md.n[0].rem_euclid(m as i64) as usize;
            by_row.entry(r).or_insert_with(|| vec![Complex64::new(0.0, 0.0); m])[c] += md.a;
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let rows = by_row
            .into_iter()
            .map(|(r, mut v)| {
                fft.process_with_scratch(&mut v, &mut scratch);
                (r, v)
            })
            .collect();
        ColumnEvaluator { m, rows, fft, tw }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Writes `f(x1_{i1}, x2_j)` for all `j` into `out`.
    pub fn column(&self, i1: usize, out: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let m = self.m;
        if self.rows.len() <= DIRECT_ROWS {
            out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (r, g) in &self.rows {
                let c = g[i1];
                let mut k = 0usize;
                for v in out.iter_mut() {
                    *v += c * self.tw[k];
                    k += r;
                    if k >= m {
                        k -= m;
                    }
                }
            }
        } else {
            out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (r, g) in &self.rows {
                out[*r] = g[i1];
            }
            if scratch.len() < self.fft.get_inplace_scratch_len() {
                scratch.resize(self.fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
            }
            self.fft.process_with_scratch(out, scratch);
        }
    }
}

/// Calls `visit(i1, column)` for every grid column of every field, columns in order.
/// All fields must share the grid. Memory is `O(rows * M)` per field.
pub fn for_each_column<F>(fields: &[&TorusField], mut visit: F)
where
    F: FnMut(usize, &[Vec<Complex64>]),
{
    if fields.is_empty() {
        return;
    }
    let m = fields[0].spec.m;
    let mut planner = FftPlanner::new();
    let tw = Arc::new(twiddles(m));
    let evals: Vec<ColumnEvaluator> = fields.iter().map(|f| ColumnEvaluator::new(f, &mut planner, tw.clone())).collect();
    let mut cols = vec![vec![Complex64::new(0.0, 0.0); m]; fields.len()];
    let mut scratch = Vec::new();
    for i1 in 0..m {
        for (e, c) in evals.iter().zip(cols.iter_mut()) {
            e.column(i1, c, &mut scratch);
        }
        visit(i1, &cols);
    }
}

/// Populates the sample array via inverse FFT.
pub fn synthesize(field: &TorusField) -> TorusField {
    let m = field.spec.m;
    let mut samples = vec![Complex64::new(0.0, 0.0); m * m];
    for_each_column(&[field], |i1, cols| {
        samples[i1 * m..(i1 + 1) * m].copy_from_slice(&cols[0]);
    });
    TorusField { spec: field.spec, band: field.band, modes: field.modes.clone(), samples: Some(samples) }
}

/// Validates coefficients and synthesizes.
pub fn synthesize_modes(spec: GridSpec, band: Band, modes: &[Mode]) -> Result<TorusField> {
    Ok(synthesize(&TorusField::from_modes(spec, band, modes)?))
}

/// Forward transform of the samples: recovers `a_n` for every `n` in the band.
pub fn read_back(field: &TorusField) -> Option<Vec<Mode>> {
    let samples = field.samples.as_ref()?;
    let m = field.spec.m;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    let mut data = samples.clone();
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    // along x2 (contiguous)
    for c in data.chunks_mut(m) {
        fft.process_with_scratch(c, &mut scratch);
    }
    // along x1
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for k2 in 0..m {
        for i1 in 0..m {
            col[i1] = data[i1 * m + k2];
        }
        fft.process_with_scratch(&mut col, &mut scratch);
        for k1 in 0..m {
            data[k1 * m + k2] = col[k1];
        }
    }
    let norm = 1.0 / (m * m) as f64;
    let pts = field.band.lattice_points(&field.spec);
    let mi = m as i64;
    Some(
        pts.into_iter()
            .map(|n| {
                let k1 = n[0].rem_euclid(mi) as usize;
                let k2 = n[1].rem_euclid(mi) as usize;
                Mode { n, a: data[k1 * m + k2] * norm }
            })
            .collect(),
    )
}

/// Grid atoms used by weighted norms: grid index and mass.
/// A uniform source reports its density through `uniform` and an empty atom list.
pub trait AtomSource {
    fn spec(&self) -> &GridSpec;
    fn atoms(&self) -> &[((usize, usize), f64)];
    fn uniform(&self) -> Option<f64> {
        None
    }
}

/// `(Delta^2 sum_grid |f|^p)^{1/p}`, or `(sum_atoms mass |f(atom)|^p)^{1/p}` with a measure.
pub fn lp_norm(field: &TorusField, p: f64, measure: Option<&dyn AtomSource>) -> Result<f64> {
    if !(2.0..=4.0).contains(&p) {
        return Err(Error::InvalidParam(format!("p = {p} outside [2, 4]")));
    }
    Ok(lp_norm_pow(field, p, measure)?.powf(1.0 / p))
}

/// `p`-th power of [`lp_norm`], for any `p > 0`.
pub fn lp_norm_pow(field: &TorusField, p: f64, measure: Option<&dyn AtomSource>) -> Result<f64> {
    match measure {
        None => {
            let d2 = field.spec.delta().powi(2);
            if let Some(s) = &field.samples {
                return Ok(d2 * s.iter().map(|v| pow_abs(*v, p)).sum::<f64>());
            }
            let mut total = 0.0;
            for_each_column(&[field], |_, cols| {
                total += cols[0].iter().map(|v| pow_abs(*v, p)).sum::<f64>();
            });
            Ok(d2 * total)
        }
        Some(mu) => {
            if *mu.spec() != field.spec {
                return Err(Error::Mismatch("measure and field use different grids".into()));
            }
            if let Some(lambda) = mu.uniform() {
                return Ok(lambda * lp_norm_pow(field, p, None)?);
            }
            let vals = values_at_atoms(field, mu.atoms());
            Ok(mu.atoms().iter().zip(vals).map(|((_, w), v)| w * pow_abs(v, p)).sum())
        }
    }
}

pub fn pow_abs(v: Complex64, p: f64) -> f64 {
    let s = v.norm_sqr();
    if p == 2.0 {
        s
    } else if p == 4.0 {
        s * s
    } else {
        s.powf(0.5 * p)
    }
}

/// Field values at grid atoms; picks direct summation or column streaming by cost.
pub fn values_at_atoms(field: &TorusField, atoms: &[((usize, usize), f64)]) -> Vec<Complex64> {
    let m = field.spec.m;
    if let Some(s) = &field.samples {
        return atoms.iter().map(|((a, b), _)| s[a * m + b]).collect();
    }
    let direct_cost = atoms.len() as f64 * field.modes.len() as f64;
    let stream_cost = (m * m) as f64 * ((m as f64).log2() + 4.0);
    if direct_cost <= stream_cost {
        let idx: Vec<(usize, usize)> = atoms.iter().map(|(i, _)| *i).collect();
        return grid_eval(field, &idx);
    }
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.sort_by_key(|&k| atoms[k].0);
    let mut out = vec![Complex64::new(0.0, 0.0); atoms.len()];
    let mut pos = 0;
    for_each_column(&[field], |i1, cols| {
        while pos < order.len() && atoms[order[pos]].0 .0 == i1 {
            out[order[pos]] = cols[0][atoms[order[pos]].0 .1];
            pos += 1;
        }
    });
    out
}

/// `int |f|^4` from coefficients: `L^2 sum_k |sum_{n+n'=k} a_n a_n'|^2`.
pub fn quartic_coefficient_sum(field: &TorusField) -> f64 {
    let mut pair: BTreeMap<[i64; 2], Complex64> = BTreeMap::new();
    for a in &field.modes {
        for b in &field.modes {
            *pair.entry([a.n[0] + b.n[0], a.n[1] + b.n[1]]).or_insert(Complex64::new(0.0, 0.0)) += a.a * b.a;
        }
    }
    field.spec.area() * pair.values().map(|v| v.norm_sqr()).sum::<f64>()
}

/// Unit-modulus coefficients with uniform random phase at every band lattice point.
pub fn random_field(spec: GridSpec, band: Band, seed: u64) -> TorusField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<Mode> = band
        .lattice_points(&spec)
        .into_iter()
        .map(|n| Mode { n, a: Complex64::from_polar(1.0, rng.gen::<f64>() * 2.0 * PI) })
        .collect();
    TorusField { spec, band, modes: canonical_modes(&modes), samples: None }
}

/// `count` distinct band lattice points with unit-modulus random coefficients.
pub fn random_sparse_field(spec: GridSpec, band: Band, count: usize, seed: u64) -> TorusField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = band.lattice_points(&spec);
    let k = count.min(pts.len());
    for i in 0..k {
        let j = rng.gen_range(i..pts.len());
        pts.swap(i, j);
    }
    let modes: Vec<Mode> = pts[..k]
        .iter()
        .map(|&n| Mode { n, a: Complex64::from_polar(1.0, rng.gen::<f64>() * 2.0 * PI) })
        .collect();
    TorusField { spec, band, modes: canonical_modes(&modes), samples: None }
}

/// Binary layout: 32-byte header `(R: u64, L: f64, M: u64, count: u64)`, then per mode
/// two little-endian f64 pairs `(n1, n2)` and `(re, im)`.
pub fn write_binary(field: &TorusField, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + 32 * field.modes.len());
    buf.extend_from_slice(&field.spec.r.to_le_bytes());
    buf.extend_from_slice(&field.spec.l.to_le_bytes());
    buf.extend_from_slice(&(field.spec.m as u64).to_le_bytes());
    buf.extend_from_slice(&(field.modes.len() as u64).to_le_bytes());
    for md in &field.modes {
        for v in [md.n[0] as f64, md.n[1] as f64, md.a.re, md.a.im] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_binary(path: &Path, band: Band) -> Result<TorusField> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 32 {
        return Err(Error::Parse("field file shorter than its header".into()));
    }
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let spec = GridSpec::new(u64_at(0), f64_at(8), u64_at(16) as usize)?;
    let count = u64_at(24) as usize;
    if buf.len() != 32 + 32 * count {
        return Err(Error::Parse(format!("expected {} bytes, found {}", 32 + 32 * count, buf.len())));
    }
    let modes: Vec<Mode> = (0..count)
        .map(|k| {
            let o = 32 + 32 * k;
            Mode { n: [f64_at(o) as i64, f64_at(o + 8) as i64], a: Complex64::new(f64_at(o + 16), f64_at(o + 24)) }
        })
        .collect();
    TorusField::from_modes(spec, band, &modes)
}

/// Spectrum as CSV rows `n1,n2,re,im`.
pub fn spectrum_csv(field: &TorusField) -> String {
    let mut s = String::from("n1,n2,re,im\n");
    for md in &field.modes {
        s.push_str(&format!("{},{},{},{}\n", md.n[0], md.n[1], md.a.re, md.a.im));
    }
    s
}

pub fn parse_spectrum_csv(text: &str, spec: GridSpec, band: Band) -> Result<TorusField> {
    let mut modes = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Parse(format!("line {}: expected 4 columns", k + 1)));
        }
        let bad = |e: String| Error::Parse(format!("line {}: {e}", k + 1));
        let n1: i64 = cols[0].trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        let n2: i64 = cols[1].trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        let re: f64 = cols[2].trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        let im: f64 = cols[3].trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        modes.push(Mode { n: [n1, n2], a: Complex64::new(re, im) });
    }
    TorusField::from_modes(spec, band, &modes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn standard_grid_defaults() {
        let g = GridSpec::standard(64).unwrap();
        assert_eq!((g.l, g.m), (256.0, 512));
        assert_eq!(g.delta(), 0.5);
        assert!(GridSpec::standard(32).is_err());
        assert!(GridSpec::new(64, 256.0, 256).is_err());
        assert!(GridSpec::new(64, 256.0, 500).is_err());
    }

    #[test]
    fn zero_mode_is_constant_one() {
        let g = GridSpec::standard(4).unwrap();
        let f = synthesize_modes(g, Band::Parabola, &[Mode { n: [0, 0], a: c(1.0, 0.0) }]).unwrap();
        for v in f.samples.unwrap() {
            assert!((v - c(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn conjugate_pair_is_cosine() {
        let g = GridSpec::standard(16).unwrap();
        // (1, 0) and (-1, 0) are both admissible for xi1 small, xi2 = 0
        let f = synthesize_modes(
            g,
            Band::Parabola,
            &[Mode { n: [1, 0], a: c(1.0, 0.0) }, Mode { n: [-1, 0], a: c(1.0, 0.0) }],
        )
        .unwrap();
        let s = f.samples.as_ref().unwrap();
        let max = s.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!((max - 2.0).abs() < 1e-12);
        let (i1, i2) = (5usize, 9usize);
        let x = g.point(i1, i2);
        let expect = 2.0 * (g.freq_unit() * x[0]).cos();
        assert!((f.sample(i1, i2).unwrap() - c(expect, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn out_of_band_rejected_with_index() {
        let g = GridSpec::standard(16).unwrap();
        let err = TorusField::from_modes(g, Band::Parabola, &[Mode { n: [0, 5], a: c(1.0, 0.0) }]).unwrap_err();
        match err {
            Error::OutOfBand { n1, n2, .. } => assert_eq!((n1, n2), (0, 5)),
            e => panic!("unexpected {e}"),
        }
        let off = TorusField::from_frequencies(g, Band::Parabola, &[([0.01, 0.0], c(1.0, 0.0))]);
        assert!(matches!(off, Err(Error::OffLattice(..))));
    }

    #[test]
    fn fifty_modes_match_direct_summation() {
        let g = GridSpec::new(16, 128.0, 256).unwrap();
        let f = random_sparse_field(g, Band::Parabola, 50, 11);
        assert_eq!(f.modes.len(), 50);
        let s = synthesize(&f);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (i1, i2) = (rng.gen_range(0..256), rng.gen_range(0..256));
            let direct = point_eval(&f, &[g.point(i1, i2)])[0];
            assert!((direct - s.sample(i1, i2).unwrap()).norm() < 1e-10);
        }
    }

    #[test]
    fn point_eval_basics() {
        let g = GridSpec::standard(16).unwrap();
        let one = TorusField::from_modes(g, Band::Parabola, &[Mode { n: [1, 0], a: c(0.3, -0.2) }]).unwrap();
        assert!((point_eval(&one, &[[0.0, 0.0]])[0] - c(0.3, -0.2)).norm() < 1e-15);
        let five = random_sparse_field(g, Band::Parabola, 5, 2);
        let unit: Vec<Mode> = five.modes.iter().map(|m| Mode { n: m.n, a: c(1.0, 0.0) }).collect();
        let five = TorusField::from_modes(g, Band::Parabola, &unit).unwrap();
        assert!((point_eval(&five, &[[0.0, 0.0]])[0] - c(5.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn refined_grid_matches_off_grid_points() {
        let coarse = GridSpec::new(16, 64.0, 128).unwrap();
        let fine = GridSpec::new(16, 64.0, 256).unwrap();
        let f = random_field(coarse, Band::Parabola, 5);
        let ff = synthesize(&TorusField { spec: fine, ..f.clone() });
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            // odd fine indices are midpoints of the coarse grid
            let (j1, j2) = (2 * rng.gen_range(0..128) + 1, 2 * rng.gen_range(0..128) + 1);
            let x = fine.point(j1, j2);
            let direct = point_eval(&f, &[x])[0];
            assert!((direct - ff.sample(j1, j2).unwrap()).norm() < 1e-6);
        }
    }

    #[test]
    fn lp_norm_trivial_values() {
        let g = GridSpec::new(4, 16.0, 64).unwrap();
        let one = synthesize_modes(g, Band::Parabola, &[Mode { n: [0, 0], a: c(1.0, 0.0) }]).unwrap();
        assert!((lp_norm(&one, 2.0, None).unwrap() - 16.0).abs() < 1e-12);
        let five = random_sparse_field(g, Band::Parabola, 5, 4);
        assert_eq!(five.modes.len(), 5);
        let unit: Vec<Mode> = five.modes.iter().map(|m| Mode { n: m.n, a: Complex64::from_polar(1.0, 0.7) }).collect();
        let five = TorusField::from_modes(g, Band::Parabola, &unit).unwrap();
        assert!((lp_norm(&five, 2.0, None).unwrap() - 1280f64.sqrt()).abs() < 1e-10);
        assert!(lp_norm(&five, 5.0, None).is_err());
    }

    #[test]
    fn quartic_quadrature_at_m64() {
        let g = GridSpec::new(4, 16.0, 64).unwrap();
        for seed in 0..5 {
            let f = random_field(g, Band::Parabola, seed);
            let grid = lp_norm_pow(&f, 4.0, None).unwrap();
            let coef = quartic_coefficient_sum(&f);
            assert!((grid - coef).abs() <= 1e-8 * coef, "{grid} vs {coef}");
        }
    }

    #[test]
    fn read_back_recovers_coefficients() {
        let g = GridSpec::standard(16).unwrap();
        let f = synthesize(&random_field(g, Band::Parabola, 9));
        let back = read_back(&f).unwrap();
        let map: BTreeMap<[i64; 2], Complex64> = f.modes.iter().map(|m| (m.n, m.a)).collect();
        for md in back {
            let want = map.get(&md.n).copied().unwrap_or(c(0.0, 0.0));
            assert!((md.a - want).norm() < 1e-10);
        }
    }

    #[test]
    fn streamed_and_stored_values_agree() {
        let g = GridSpec::standard(16).unwrap();
        let f = random_field(g, Band::Parabola, 1);
        let s = synthesize(&f);
        let atoms: Vec<((usize, usize), f64)> = (0..40).map(|k| ((k * 3 % 128, k * 7 % 128), 1.0)).collect();
        let direct = grid_eval(&f, &atoms.iter().map(|a| a.0).collect::<Vec<_>>());
        for (k, ((i1, i2), _)) in atoms.iter().enumerate() {
            assert!((direct[k] - s.sample(*i1, *i2).unwrap()).norm() < 1e-10);
        }
    }

    #[test]
    fn annulus_lattice_points_in_band() {
        let g = GridSpec::standard(16).unwrap();
        let pts = Band::Annulus.lattice_points(&g);
        assert!(!pts.is_empty());
        for n in pts {
            let xi = g.xi(n);
            let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            assert!((1.0 - r).abs() <= 2.0 / 16.0 + 1e-12 && xi[1] < 0.0);
        }
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let g = GridSpec::standard(16).unwrap();
        let f = random_field(g, Band::Parabola, 21);
        let dir = std::env::temp_dir().join(format!("pc-torus-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.bin");
        write_binary(&f, &path).unwrap();
        let meta = std::fs::metadata(&path).unwrap();
        assert_eq!(meta.len() as usize, 32 + 32 * f.modes.len());
        let back = read_binary(&path, Band::Parabola).unwrap();
        assert_eq!(back.modes, f.modes);
        let csv = spectrum_csv(&f);
        let back = parse_spectrum_csv(&csv, g, Band::Parabola).unwrap();
        assert_eq!(back.modes, f.modes);
        std::fs::remove_dir_all(&dir).ok();
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest, ProptestConfig};

    fn small_field(r: u64, band_annulus: bool, count: usize, seed: u64) -> TorusField {
        let g = GridSpec::standard(r).unwrap();
        let band = if band_annulus { Band::Annulus } else { Band::Parabola };
        random_sparse_field(g, band, count, seed)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn parseval_holds(r in prop::sample::select(vec![4u64, 16]), ann in prop::bool::ANY, count in 1usize..60, seed in 0u64..1000) {
            let f = small_field(r, ann, count, seed);
            let grid = lp_norm_pow(&f, 2.0, None).unwrap();
            let coef = f.l2_sq();
            prop_assert!((grid - coef).abs() <= 1e-9 * coef, "{} vs {}", grid, coef);
        }

        #[test]
        fn quartic_quadrature_is_exact(r in prop::sample::select(vec![4u64, 16]), count in 1usize..30, seed in 0u64..1000) {
            let f = small_field(r, false, count, seed);
            let grid = lp_norm_pow(&f, 4.0, None).unwrap();
            let coef = quartic_coefficient_sum(&f);
            prop_assert!((grid - coef).abs() <= 1e-8 * coef, "{} vs {}", grid, coef);
        }

        #[test]
        fn lp_norm_is_homogeneous(p in 2.0f64..=4.0, re in -5.0f64..5.0, im in -5.0f64..5.0, seed in 0u64..1000) {
            let f = synthesize(&small_field(16, false, 12, seed));
            let c = Complex64::new(re, im);
            let base = lp_norm(&f, p, None).unwrap();
            let scaled = lp_norm(&f.scaled(c), p, None).unwrap();
            prop_assert!((scaled - c.norm() * base).abs() <= 1e-12 * (c.norm() * base).max(1e-300));
        }

        #[test]
        fn read_back_is_identity(r in prop::sample::select(vec![4u64, 16]), ann in prop::bool::ANY, count in 1usize..80, seed in 0u64..1000) {
            let f = synthesize(&small_field(r, ann, count, seed));
            let map: BTreeMap<[i64; 2], Complex64> = f.modes.iter().map(|m| (m.n, m.a)).collect();
            for md in read_back(&f).unwrap() {
                let want = map.get(&md.n).copied().unwrap_or(Complex64::new(0.0, 0.0));
                prop_assert!((md.a - want).norm() < 1e-10);
            }
        }
    }
}
