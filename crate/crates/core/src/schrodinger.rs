//! The free Schrödinger evolution on a periodic line, the circle multiplier `S_R`,
//! the Nikodym maximal function, parabolic rescaling of measures and the
//! local-smoothing exponent experiments.

use crate::error::{Error, Result};
use crate::measures::{exact_certificate, point_certificate, CertMode, Certificate, PointMeasure};
use crate::profiles::{bump, eta, psi_quarter_four, ETA_NAME};
use crate::torus::{Band, Mode, TorusField};
use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::num::NonZeroUsize;

/// Periodic line `[-L/2, L/2)` sampled at `n` equispaced points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineGrid {
    pub period: f64,
    pub n: usize,
}

impl LineGrid {
    pub fn new(period: f64, n: usize) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) || n < 2 {
            return Err(Error::InvalidSpec(format!("line grid needs period > 0 and n >= 2, got {period}, {n}")));
        }
        Ok(LineGrid { period, n })
    }

    /// Period `L` rounded so that `L / dx` is a power of two.
    pub fn with_spacing(min_period: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::InvalidSpec(format!("spacing must be positive, got {dx}")));
        }
        let n = ((min_period / dx).ceil() as usize).max(2).next_power_of_two();
        Self::new(n as f64 * dx, n)
    }

    pub fn dx(&self) -> f64 {
        self.period / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -0.5 * self.period + j as f64 * self.dx()
    }

    pub fn freq_unit(&self) -> f64 {
        2.0 * PI / self.period
    }

    pub fn xi(&self, k: i64) -> f64 {
        k as f64 * self.freq_unit()
    }
}

/// `f(x) = L^{-1} sum_k fhat(xi_k) e^{i x xi_k}` with `xi_k = 2 pi k / L`,
/// the periodic discretisation of `f(x) = (2 pi)^{-1} int fhat(xi) e^{i x xi} dxi`.
#[derive(Clone, Debug)]
pub struct LineSpectrum {
    pub grid: LineGrid,
    /// `(k, fhat(xi_k))`, sorted by `k`.
    pub coeffs: Vec<(i64, Complex64)>,
}

impl LineSpectrum {
    /// Rejects frequencies at or beyond the Nyquist index `n/2`.
    pub fn new(grid: LineGrid, mut coeffs: Vec<(i64, Complex64)>) -> Result<Self> {
        let half = (grid.n / 2) as i64;
        if let Some(&(k, _)) = coeffs.iter().find(|c| c.0.abs() >= half) {
            return Err(Error::InvalidParam(format!(
                "frequency {} exceeds the Nyquist limit {} of the line grid",
                grid.xi(k),
                PI / grid.dx()
            )));
        }
        coeffs.sort_by_key(|c| c.0);
        coeffs.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        Ok(LineSpectrum { grid, coeffs })
    }

    /// Samples `fhat` at every lattice frequency in `[lo, hi]`.
    pub fn from_profile<F: FnMut(f64) -> Complex64>(grid: LineGrid, lo: f64, hi: f64, mut fhat: F) -> Result<Self> {
        let u = grid.freq_unit();
        let a = (lo / u).ceil() as i64;
        let b = (hi / u).floor() as i64;
        let coeffs = (a..=b).map(|k| (k, fhat(grid.xi(k)))).filter(|c| c.1.norm_sqr() > 0.0).collect();
        Self::new(grid, coeffs)
    }

    pub fn xi(&self, k: i64) -> f64 {
        self.grid.xi(k)
    }

    /// `||f||_2^2` over one period.
    pub fn l2_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.1.norm_sqr()).sum::<f64>() / self.grid.period
    }

    /// `e^{it d_x^2} f(x)` by direct summation.
    pub fn eval(&self, x: f64, t: f64) -> Complex64 {
        let s: Complex64 = self
            .coeffs
            .iter()
            .map(|&(k, a)| {
                let xi = self.xi(k);
                a * Complex64::from_polar(1.0, x * xi + t * xi * xi)
            })
            .sum();
        s / self.grid.period
    }
}

/// Evaluates `e^{it d_x^2} f` on the line grid, one inverse transform per time.
pub struct Slicer {
    grid: LineGrid,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Slicer {
    pub fn new(grid: LineGrid) -> Self {
        let fft = FftPlanner::new().plan_fft_inverse(grid.n);
        let scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        Slicer { grid, fft, scratch }
    }

    /// Fills `out` (length `n`) with `e^{it d_x^2} f(x_j)`.
    pub fn slice(&mut self, f: &LineSpectrum, t: f64, out: &mut [Complex64]) {
        let g = self.grid;
        out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        let x0 = g.x(0);
        for &(k, a) in &f.coeffs {
            let xi = g.xi(k);
            out[k.rem_euclid(g.n as i64) as usize] = a * Complex64::from_polar(1.0 / g.period, x0 * xi + t * xi * xi);
        }
        self.fft.process_with_scratch(out, &mut self.scratch);
    }
}

/// Samples of `U_R f(x, t) = eta(t/R) e^{it d_x^2} f(x)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Propagation {
    pub grid: LineGrid,
    pub r: f64,
    pub times: Vec<f64>,
    pub eta: String,
    /// `samples[i * n + j] = U_R f(x_j, t_i)`.
    pub samples: Vec<Complex64>,
    /// `||e^{it d_x^2} f||_2^2` of each slice before the cutoff.
    pub slice_l2_sq: Vec<f64>,
    pub initial_l2_sq: f64,
}

impl Propagation {
    pub fn slice(&self, i: usize) -> &[Complex64] {
        &self.samples[i * self.grid.n..(i + 1) * self.grid.n]
    }

    /// Largest relative deviation of a slice norm from `||f||_2^2`.
    pub fn unitarity_defect(&self) -> f64 {
        let n0 = self.initial_l2_sq;
        self.slice_l2_sq.iter().map(|s| (s - n0).abs() / n0.max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
    }

    /// Time slices as CSV: `t,x,re,im`.
    pub fn slices_csv(&self) -> String {
        let mut s = String::from("t,x,re,im\n");
        for (i, t) in self.times.iter().enumerate() {
            for (j, v) in self.slice(i).iter().enumerate() {
                s.push_str(&format!("{t},{},{},{}\n", self.grid.x(j), v.re, v.im));
            }
        }
        s
    }

    /// Little-endian `f64` pairs, slice after slice.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.samples.iter().flat_map(|v| v.re.to_le_bytes().into_iter().chain(v.im.to_le_bytes())).collect()
    }
}

pub fn propagate(f: &LineSpectrum, r: f64, times: &[f64]) -> Propagation {
    let g = f.grid;
    let mut slicer = Slicer::new(g);
    let mut samples = vec![Complex64::new(0.0, 0.0); g.n * times.len()];
    let mut norms = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let out = &mut samples[i * g.n..(i + 1) * g.n];
        slicer.slice(f, t, out);
        norms.push(g.dx() * out.iter().map(|v| v.norm_sqr()).sum::<f64>());
        let c = eta(t / r);
        out.iter_mut().for_each(|v| *v *= c);
    }
    Propagation {
        grid: g,
        r,
        times: times.to_vec(),
        eta: ETA_NAME.to_string(),
        samples,
        slice_l2_sq: norms,
        initial_l2_sq: f.l2_sq(),
    }
}

/// `S_R f` with multiplier `psi(R(1 - |xi|))`, `psi` the unit bump on `(-1, 1)`.
pub fn apply_s_r(field: &TorusField) -> Result<TorusField> {
    if field.band != Band::Annulus {
        return Err(Error::InvalidParam("S_R acts on annulus fields".into()));
    }
    let spec = field.spec;
    let r = spec.rf();
    let mut modes = Vec::with_capacity(field.modes.len());
    for m in &field.modes {
        let xi = spec.xi(m.n);
        let d = 1.0 - xi[0].hypot(xi[1]);
        if d.abs() > 2.0 / r + 1e-12 {
            return Err(Error::OutOfBand { n1: m.n[0], n2: m.n[1], xi1: xi[0], xi2: xi[1] });
        }
        modes.push(Mode { n: m.n, a: m.a * bump(r * d) });
    }
    TorusField::from_modes(spec, Band::Annulus, &modes)
}

/// A non-negative function on `[x0, x0 + nx hx) x [-1, 1]`, constant on cells.
/// Row `i` covers `t in [-1 + i ht, -1 + (i+1) ht)` with `ht = 2 / nt`.
#[derive(Clone, Debug)]
pub struct SpaceTimeGrid {
    pub x0: f64,
    pub hx: f64,
    pub nx: usize,
    pub nt: usize,
    /// `values[i * nx + j]`.
    pub values: Vec<f64>,
}

impl SpaceTimeGrid {
    pub fn new(x0: f64, hx: f64, nx: usize, nt: usize, values: Vec<f64>) -> Result<Self> {
        if !(hx > 0.0) || nx == 0 || nt == 0 || values.len() != nx * nt {
            return Err(Error::InvalidParam(format!("space-time grid {nx} x {nt} with {} values", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("space-time values must be finite".into()));
        }
        let values = values.into_iter().map(f64::abs).collect();
        Ok(SpaceTimeGrid { x0, hx, nx, nt, values })
    }

    /// Samples `f` at cell centres.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(x0: f64, hx: f64, nx: usize, nt: usize, f: F) -> Result<Self> {
        let ht = 2.0 / nt as f64;
        let values = (0..nt)
            .flat_map(|i| {
                let t = -1.0 + (i as f64 + 0.5) * ht;
                let f = &f;
                (0..nx).map(move |j| f(x0 + (j as f64 + 0.5) * hx, t))
            })
            .collect();
        Self::new(x0, hx, nx, nt, values)
    }

    pub fn ht(&self) -> f64 {
        2.0 / self.nt as f64
    }

    pub fn lq_norm(&self, q: f64) -> f64 {
        (self.values.iter().map(|v| v.powf(q)).sum::<f64>() * self.hx * self.ht()).powf(1.0 / q)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NikodymResult {
    pub r: f64,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
    /// Direction `w` attaining the supremum at each `y`.
    pub best_w: Vec<f64>,
}

impl NikodymResult {
    /// `||N g||_{L^q}` as a Riemann sum with spacing `hy`.
    pub fn lq_norm(&self, q: f64, hy: f64) -> f64 {
        (self.values.iter().map(|v| v.powf(q)).sum::<f64>() * hy).powf(1.0 / q)
    }
}

/// Points of `R^{-1} Z` in `[lo, hi]`.
pub fn nikodym_ys(lo: f64, hi: f64, r: f64) -> Vec<f64> {
    let a = (lo * r).ceil() as i64;
    let b = (hi * r).floor() as i64;
    (a..=b).map(|k| k as f64 / r).collect()
}

/// `N g(y) = sup_w |T_w|^{-1} int_{T_w + (y, 0)} |g|` over `T_w = {|x + 2tw| <= 1/R, |t| <= 1}`,
/// `w` on `R^{-1} Z` in `[-1, 1]`.  Each row integral is exact for the cellwise-constant `g`.
pub fn nikodym_max(g: &SpaceTimeGrid, r: f64, ys: &[f64]) -> Result<NikodymResult> {
    if !(r >= 1.0) {
        return Err(Error::InvalidParam(format!("R must be at least 1, got {r}")));
    }
    if g.hx > 1.0 / r * (1.0 + 1e-12) {
        return Err(Error::InvalidParam(format!(
            "space-time grid too coarse: spacing {} but R = {r} needs spacing at most {}",
            g.hx,
            1.0 / r
        )));
    }
    let ht = g.ht();
    let prefix: Vec<Vec<f64>> = (0..g.nt)
        .map(|i| {
            let row = &g.values[i * g.nx..(i + 1) * g.nx];
            let mut p = Vec::with_capacity(g.nx + 1);
            p.push(0.0);
            let mut s = 0.0;
            for v in row {
                s += v * g.hx;
                p.push(s);
            }
            p
        })
        .collect();
    let cum = |i: usize, x: f64| -> f64 {
        let u = (x - g.x0) / g.hx;
        if u <= 0.0 {
            return 0.0;
        }
        if u >= g.nx as f64 {
            return prefix[i][g.nx];
        }
        let j = u.floor() as usize;
        prefix[i][j] + (u - j as f64) * g.values[i * g.nx + j] * g.hx
    };
    let nw = (r.floor() as i64).max(1);
    let ws: Vec<f64> = (-nw..=nw).map(|k| (k as f64 / r).clamp(-1.0, 1.0)).collect();
    let ts: Vec<f64> = (0..g.nt).map(|i| -1.0 + (i as f64 + 0.5) * ht).collect();
    let half = 1.0 / r;
    let area = 2.0 * half * 2.0;
    let mut values = Vec::with_capacity(ys.len());
    let mut best_w = Vec::with_capacity(ys.len());
    for &y in ys {
        let mut best = (0.0, 0.0);
        for &w in &ws {
            let mut s = 0.0;
            for (i, &t) in ts.iter().enumerate() {
                let c = y - 2.0 * t * w;
                s += cum(i, c + half) - cum(i, c - half);
            }
            let avg = s * ht / area;
            if avg > best.0 {
                best = (avg, w);
            }
        }
        values.push(best.0);
        best_w.push(best.1);
    }
    Ok(NikodymResult { r, ys: ys.to_vec(), values, best_w })
}

/// `||N g||_q / ||g||_q` for `g` with independent uniform cell values on
/// `[-1, 1]^2`, cells `R^{-1} x 2/nt`, and `y` over `[-3, 3]`.
pub fn nikodym_random_ratio(r: f64, q: f64, nt: usize, seed: u64) -> Result<f64> {
    let nx = (2.0 * r).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..nx * nt).map(|_| rng.gen::<f64>()).collect();
    let g = SpaceTimeGrid::new(-1.0, 2.0 / nx as f64, nx, nt, values)?;
    let ys = nikodym_ys(-3.0, 3.0, r);
    let n = nikodym_max(&g, r, &ys)?;
    Ok(n.lq_norm(q, 1.0 / r) / g.lq_norm(q))
}

/// The four bounds on the rescaled measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureBound {
    /// `[mu]_{beta,par} <= 1`, `beta in [1, 3]`: `<mu_R>_{(beta+1)/2} <~ R^{-beta}`.
    ParabolicHigh,
    /// `[mu]_{beta,par} <= 1`, `beta in [0, 1]`: `<mu_R>_beta <~ R^{-beta}`.
    ParabolicLow,
    /// `[mu]_alpha <= 1`, `alpha in [1, 2]`: `<mu_R>_alpha <~ R^{1-2 alpha}`.
    AlphaHigh,
    /// `[mu]_alpha <= 1`, `alpha in [0, 1]`: `<mu_R>_alpha <~ R^{-alpha}`.
    AlphaLow,
}

impl MeasureBound {
    /// Bounds that apply to a measure of Euclidean dimension `alpha` and parabolic dimension `beta`.
    pub fn applicable(alpha: f64, beta: f64) -> Vec<MeasureBound> {
        let mut v = Vec::new();
        if (1.0..=3.0).contains(&beta) {
            v.push(MeasureBound::ParabolicHigh);
        }
        if (0.0..=1.0).contains(&beta) {
            v.push(MeasureBound::ParabolicLow);
        }
        if (1.0..=2.0).contains(&alpha) {
            v.push(MeasureBound::AlphaHigh);
        }
        if (0.0..=1.0).contains(&alpha) {
            v.push(MeasureBound::AlphaLow);
        }
        v
    }

    /// `(source mode, rescaled exponent, R-power)` for dimension `d`.
    fn shape(&self, d: f64) -> (CertMode, f64, f64) {
        match self {
            MeasureBound::ParabolicHigh => (CertMode::Parabolic, 0.5 * (d + 1.0), -d),
            MeasureBound::ParabolicLow => (CertMode::Parabolic, d, -d),
            MeasureBound::AlphaHigh => (CertMode::AlphaAllRadii, d, 1.0 - 2.0 * d),
            MeasureBound::AlphaLow => (CertMode::AlphaAllRadii, d, -d),
        }
    }
}

pub const LEM_MEASURE_FACTOR: f64 = 8.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundCheck {
    pub bound: MeasureBound,
    /// `beta` or `alpha` of the source measure.
    pub dim: f64,
    /// Certificate of `mu` at the resolution scale and above.
    pub source: Certificate,
    /// `<mu_R>` over radii from `min_radius` up.
    pub rescaled: Certificate,
    /// `R^{power}` from the lemma.
    pub predicted: f64,
    /// `rescaled / (source * predicted)`.
    pub ratio: f64,
    /// The same ratio with the rescaled certificate's dyadic bracket applied.
    pub ratio_upper: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RescaleReport {
    pub r: f64,
    /// Smallest radius probed on `mu_R`: `max(1, R^2 h)` with `h` the atom resolution of `mu`.
    pub min_radius: f64,
    pub exact: bool,
    pub total_before: f64,
    pub total_after: f64,
    pub checks: Vec<BoundCheck>,
}

/// `mu_R(E) = mu({(x, t) : (R x, R^2 t) in E})` together with the lemma's certificate checks.
/// Radii on `mu_R` start at `R^2 h`, so every ball in the covering argument has radius
/// at least the resolution `h` at which the source certificate is taken.
pub fn rescale_measure(
    mu: &PointMeasure,
    r: f64,
    alpha: Option<f64>,
    beta: Option<f64>,
    exact: bool,
) -> Result<(PointMeasure, RescaleReport)> {
    if !(r >= 1.0) {
        return Err(Error::InvalidParam(format!("R must be at least 1, got {r}")));
    }
    let rho0 = (r * r * mu.min_radius).max(1.0);
    let mu_r = mu.rescaled(r, rho0);
    let cert = |m: &PointMeasure, mode, d: f64| {
        if exact {
            exact_certificate(m, mode, &[d])
        } else {
            point_certificate(m, mode, &[d])
        }
    };
    let mut checks = Vec::new();
    let mut push = |bound: MeasureBound, d: f64| -> Result<()> {
        let (mode, a, power) = bound.shape(d);
        let source = cert(mu, mode, d)?;
        let rescaled = cert(&mu_r, CertMode::Alpha, a)?;
        let predicted = r.powf(power);
        let denom = source.value * predicted;
        let ratio = if denom > 0.0 { rescaled.value / denom } else { f64::INFINITY };
        let ratio_upper = ratio * rescaled.quantization;
        checks.push(BoundCheck {
            bound,
            dim: d,
            source,
            rescaled,
            predicted,
            ratio,
            ratio_upper,
            holds: ratio <= LEM_MEASURE_FACTOR,
        });
        Ok(())
    };
    if let Some(b) = beta {
        for bound in MeasureBound::applicable(f64::NAN, b) {
            push(bound, b)?;
        }
    }
    if let Some(a) = alpha {
        for bound in MeasureBound::applicable(a, f64::NAN) {
            push(bound, a)?;
        }
    }
    let report = RescaleReport { r, min_radius: rho0, exact, total_before: mu.total(), total_after: mu_r.total(), checks };
    Ok((mu_r, report))
}

/// How a measured slope is compared with its prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Equal,
    AtLeast,
    AtMost,
}

/// Least-squares slope of `log ratio` against `log R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    /// `sigma`, `zeta` or `gamma`.
    pub name: String,
    pub family: String,
    pub p: f64,
    pub r: Vec<f64>,
    pub ratios: Vec<f64>,
    pub log_ratios: Vec<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Root-mean-square deviation of the log ratios from the fitted line.
    pub residual: Option<f64>,
    pub prediction: f64,
    pub comparison: Comparison,
    pub band: f64,
    /// Exponent of the matching upper bound, when one applies.
    pub sufficiency: Option<f64>,
    pub passes: bool,
    pub eta: String,
    /// Set when a ratio is zero or not finite.
    pub flagged: Option<String>,
}

impl ExponentFit {
    #[allow(clippy::too_many_arguments)]
    pub fn from_ratios(
        name: &str,
        family: &str,
        p: f64,
        r: Vec<f64>,
        ratios: Vec<f64>,
        prediction: f64,
        comparison: Comparison,
        band: f64,
        sufficiency: Option<f64>,
    ) -> Result<Self> {
        if r.len() < 3 || r.len() != ratios.len() {
            return Err(Error::InvalidParam(format!(
                "an exponent fit needs at least 3 scales with one ratio each, got {} and {}",
                r.len(),
                ratios.len()
            )));
        }
        let mut fit = ExponentFit {
            name: name.to_string(),
            family: family.to_string(),
            p,
            log_ratios: Vec::new(),
            r,
            ratios,
            slope: None,
            intercept: None,
            residual: None,
            prediction,
            comparison,
            band,
            sufficiency,
            passes: false,
            eta: ETA_NAME.to_string(),
            flagged: None,
        };
        if let Some(i) = fit.ratios.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            fit.flagged = Some(format!("degenerate family: ratio {} at R = {}", fit.ratios[i], fit.r[i]));
            return Ok(fit);
        }
        fit.log_ratios = fit.ratios.iter().map(|v| v.ln()).collect();
        let xs: Vec<f64> = fit.r.iter().map(|v| v.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = fit.log_ratios.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&fit.log_ratios).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let rss: f64 = xs.iter().zip(&fit.log_ratios).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        fit.slope = Some(slope);
        fit.intercept = Some(intercept);
        fit.residual = Some((rss / n).sqrt());
        fit.passes = match comparison {
            Comparison::Equal => (slope - prediction).abs() <= band,
            Comparison::AtLeast => slope >= prediction - band,
            Comparison::AtMost => slope <= prediction + band,
        };
        Ok(fit)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("exponent fits serialise")
    }
}

/// The lower-bound families for the local-smoothing exponents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlsFamily {
    /// `fhat = e^{-i R xi^2} psi(xi)` with `mu = 1_F`, `F = {|x| <= c, R - c <= t <= R}`.
    Chirp { c: f64 },
    /// `ghat = psi(R^{1/2}(xi + 1))` with `mu = min(R^{(alpha-2)/2}, R^{alpha-3/2}) 1_G`,
    /// `G = {|x - 2t| <= c R^{1/2}, 0 <= t <= R}`.
    Slab { alpha: f64, c: f64 },
    /// Sum of `f_l`, `l in R^{-kappa} Z`, measured on `Y = Gamma + B_c` against the square function.
    Lattice { kappa: f64, c: f64 },
}

impl FlsFamily {
    pub fn name(&self) -> String {
        match self {
            FlsFamily::Chirp { c } => format!("chirp(c={c})"),
            FlsFamily::Slab { alpha, c } => format!("slab(alpha={alpha},c={c})"),
            FlsFamily::Lattice { kappa, c } => format!("lattice(kappa={kappa},c={c})"),
        }
    }

    /// `(exponent name, predicted slope, sufficiency exponent)`.
    pub fn prediction(&self, p: f64) -> (&'static str, f64, Option<f64>) {
        match *self {
            FlsFamily::Chirp { .. } => ("zeta", 0.5 - 1.0 / p, None),
            FlsFamily::Slab { alpha, .. } => {
                ("zeta", alpha.min(2.0 * alpha - 1.0) / (2.0 * p), Some(1.0 / p - (2.0 - alpha) * (1.0 / p - 0.25)))
            }
            FlsFamily::Lattice { kappa, .. } => {
                let alpha = 2.0 - 3.0 * kappa;
                ("sigma", -(2.0 - alpha) * (1.0 / p - 1.0 / 6.0), Some(-(2.0 - alpha) * (1.0 / p - 0.25)))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            FlsFamily::Chirp { c } => c > 0.0 && c <= 1.0,
            FlsFamily::Slab { alpha, c } => (0.0..=2.0).contains(&alpha) && c > 0.0,
            FlsFamily::Lattice { kappa, c } => kappa > 0.0 && kappa <= 0.5 && c > 0.0 && c < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("invalid family parameters {self:?}")))
        }
    }
}

/// One scale of a local-smoothing experiment: `ratio = numerator / denominator`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlsSample {
    pub r: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

fn gl_rule(n: usize) -> Vec<(f64, f64)> {
    GaussLegendre::new(NonZeroUsize::new(n).expect("positive degree")).as_node_weight_pairs().to_vec()
}

/// Composite Gauss-Legendre nodes on `[a, b]`.
fn gl_panels(rule: &[(f64, f64)], a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|k| {
            let lo = a + k as f64 * h;
            rule.iter().map(move |&(x, w)| (lo + 0.5 * h * (x + 1.0), 0.5 * h * w))
        })
        .collect()
}

fn line_lp_pow(grid: LineGrid, values: &[Complex64], p: f64) -> f64 {
    grid.dx() * values.iter().map(|v| v.norm().powf(p)).sum::<f64>()
}

fn initial_lp(f: &LineSpectrum, p: f64) -> f64 {
    let mut v = vec![Complex64::new(0.0, 0.0); f.grid.n];
    Slicer::new(f.grid).slice(f, 0.0, &mut v);
    line_lp_pow(f.grid, &v, p).powf(1.0 / p)
}

pub fn chirp_spectrum(r: f64) -> Result<LineSpectrum> {
    let grid = LineGrid::with_spacing(32.0 * r, 0.5)?;
    LineSpectrum::from_profile(grid, 0.25, 4.0, |xi| Complex64::from_polar(psi_quarter_four(xi), -r * xi * xi))
}

/// `||U_R f||_{L^p(F)} / ||f||_p` for the chirp.
pub fn chirp_sample(r: f64, p: f64, c: f64) -> Result<FlsSample> {
    let f = chirp_spectrum(r)?;
    let rule = gl_rule(8);
    let xs = gl_panels(&rule, -c, c, 2);
    let ts = gl_panels(&rule, r - c, r, 1);
    let mut s = 0.0;
    for &(t, wt) in &ts {
        let cut = eta(t / r);
        for &(x, wx) in &xs {
            s += wt * wx * (cut * f.eval(x, t).norm()).powf(p);
        }
    }
    let num = s.powf(1.0 / p);
    let den = initial_lp(&f, p);
    Ok(FlsSample { r, numerator: num, denominator: den, ratio: num / den })
}

pub fn slab_spectrum(r: f64) -> Result<LineSpectrum> {
    let grid = LineGrid::with_spacing(8.0 * r, 0.5)?;
    let sr = r.sqrt();
    LineSpectrum::from_profile(grid, -1.0 + 0.25 / sr, -1.0 + 4.0 / sr, |xi| {
        Complex64::new(psi_quarter_four(sr * (xi + 1.0)), 0.0)
    })
}

/// Midpoint times on `[0, R]`.
pub fn slab_times(r: f64, slices: usize) -> Vec<f64> {
    (0..slices).map(|i| (i as f64 + 0.5) * r / slices as f64).collect()
}

/// Length of `[x - dx/2, x + dx/2]` inside `[lo, hi]`.
fn overlap(x: f64, dx: f64, lo: f64, hi: f64) -> f64 {
    ((x + 0.5 * dx).min(hi) - (x - 0.5 * dx).max(lo)).max(0.0)
}

/// `||U_R g||_{L^p(mu)} / ||g||_p` for the slab packet, `slices` time slices on `[0, R]`.
pub fn slab_sample(r: f64, p: f64, alpha: f64, c: f64, slices: usize) -> Result<FlsSample> {
    let g = slab_spectrum(r)?;
    let grid = g.grid;
    let dx = grid.dx();
    let half = c * r.sqrt();
    let density = r.powf(0.5 * (alpha - 2.0)).min(r.powf(alpha - 1.5));
    let dt = r / slices as f64;
    let mut slicer = Slicer::new(grid);
    let mut v = vec![Complex64::new(0.0, 0.0); grid.n];
    let mut s = 0.0;
    for t in slab_times(r, slices) {
        slicer.slice(&g, t, &mut v);
        let cut = eta(t / r);
        let (lo, hi) = (2.0 * t - half, 2.0 * t + half);
        let j0 = (((lo - grid.x(0)) / dx).floor() as i64 - 1).max(0) as usize;
        let j1 = ((((hi - grid.x(0)) / dx).ceil() as i64 + 1).max(0) as usize).min(grid.n - 1);
        for (j, val) in v.iter().enumerate().take(j1 + 1).skip(j0) {
            let w = overlap(grid.x(j), dx, lo, hi);
            if w > 0.0 {
                s += w * dt * (cut * val.norm()).powf(p);
            }
        }
    }
    let num = (density * s).powf(1.0 / p);
    let den = initial_lp(&g, p);
    Ok(FlsSample { r, numerator: num, denominator: den, ratio: num / den })
}

/// `min` and `max` of `R^{1/2} |U_R g|` over the grid points of `G`.
pub fn slab_modulus_band(r: f64, c: f64, slices: usize) -> Result<(f64, f64)> {
    let g = slab_spectrum(r)?;
    let grid = g.grid;
    let half = c * r.sqrt();
    let mut slicer = Slicer::new(grid);
    let mut v = vec![Complex64::new(0.0, 0.0); grid.n];
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for t in slab_times(r, slices) {
        slicer.slice(&g, t, &mut v);
        let cut = eta(t / r);
        for (j, val) in v.iter().enumerate() {
            if (grid.x(j) - 2.0 * t).abs() <= half {
                let m = r.sqrt() * cut * val.norm();
                lo = lo.min(m);
                hi = hi.max(m);
            }
        }
    }
    Ok((lo, hi))
}

/// The lattice family at scale `R`.
#[derive(Clone, Debug)]
pub struct LatticeFamily {
    pub r: f64,
    pub kappa: f64,
    pub c: f64,
    /// Centres `l in R^{-kappa} Z cap [-1/2, 1/2]`.
    pub ls: Vec<f64>,
    /// `Gamma = (2 pi R^kappa Z x 2 pi R^{2 kappa} Z) cap B_{cR}`.
    pub gamma: Vec<[f64; 2]>,
    rule: Vec<(f64, f64)>,
}

impl LatticeFamily {
    pub fn new(r: f64, kappa: f64, c: f64) -> Result<Self> {
        FlsFamily::Lattice { kappa, c }.validate()?;
        let rk = r.powf(kappa);
        let kmax = (0.5 * rk + 1e-9).floor() as i64;
        let ls = (-kmax..=kmax).map(|k| k as f64 / rk).collect();
        let (sx, st) = (2.0 * PI * rk, 2.0 * PI * rk * rk);
        let rad = c * r;
        let (na, nb) = ((rad / sx).floor() as i64, (rad / st).floor() as i64);
        let mut gamma = Vec::new();
        for a in -na..=na {
            for b in -nb..=nb {
                let z = [a as f64 * sx, b as f64 * st];
                if z[0].hypot(z[1]) <= rad {
                    gamma.push(z);
                }
            }
        }
        Ok(LatticeFamily { r, kappa, c, ls, gamma, rule: gl_rule(8) })
    }

    /// `int_{-1}^{1} e^{i(a v + b v^2)} dv`, panels keeping the phase change per panel at most 2.
    fn chirp_integral(&self, a: f64, b: f64) -> Complex64 {
        let panels = ((2.0 * a.abs() + b.abs()) / 2.0).ceil().max(1.0) as usize;
        gl_panels(&self.rule, -1.0, 1.0, panels)
            .into_iter()
            .map(|(v, w)| Complex64::from_polar(w, a * v + b * v * v))
            .sum()
    }

    /// `f_l(x, t) = eta(t/R) eta(x/R) R int_{Omega_l} e^{i(x xi + t xi^2)} dxi`.
    pub fn piece(&self, l: f64, x: f64, t: f64) -> Complex64 {
        let r = self.r;
        let inner = self.chirp_integral((x + 2.0 * t * l) / r, t / (r * r));
        inner * Complex64::from_polar(eta(t / r) * eta(x / r), x * l + t * l * l)
    }

    pub fn value(&self, x: f64, t: f64) -> Complex64 {
        self.ls.iter().map(|&l| self.piece(l, x, t)).sum()
    }

    /// `||f||_{L^p(Y)}` with a polar rule on each disk `B_c(gamma)`.
    pub fn norm_on_y(&self, p: f64) -> f64 {
        let radial = gl_panels(&gl_rule(3), 0.0, self.c, 1);
        let na = 8;
        let mut s = 0.0;
        for z in &self.gamma {
            for &(rho, wr) in &radial {
                for k in 0..na {
                    let th = 2.0 * PI * k as f64 / na as f64;
                    let v = self.value(z[0] + rho * th.cos(), z[1] + rho * th.sin());
                    s += wr * rho * (2.0 * PI / na as f64) * v.norm().powf(p);
                }
            }
        }
        s.powf(1.0 / p)
    }

    /// `||(sum_l |f_l|^2)^{1/2}||_p` over `[-16R, 16R]^2` at spacing `R/8`.
    pub fn square_function_norm(&self, p: f64) -> f64 {
        let n = 256usize;
        let h = 32.0 * self.r / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            let x = -16.0 * self.r + (i as f64 + 0.5) * h;
            for j in 0..n {
                let t = -16.0 * self.r + (j as f64 + 0.5) * h;
                let sq: f64 = self.ls.iter().map(|&l| self.piece(l, x, t).norm_sqr()).sum();
                s += sq.powf(0.5 * p);
            }
        }
        (s * h * h).powf(1.0 / p)
    }
}

pub fn lattice_sample(r: f64, p: f64, kappa: f64, c: f64) -> Result<FlsSample> {
    let fam = LatticeFamily::new(r, kappa, c)?;
    let num = fam.norm_on_y(p);
    let den = fam.square_function_norm(p);
    Ok(FlsSample { r, numerator: num, denominator: den, ratio: num / den })
}

pub const FLS_BAND: f64 = 0.1;
pub const SLAB_SLICES: usize = 256;

pub fn fls_sample(family: &FlsFamily, p: f64, r: f64) -> Result<FlsSample> {
    match *family {
        FlsFamily::Chirp { c } => chirp_sample(r, p, c),
        FlsFamily::Slab { alpha, c } => slab_sample(r, p, alpha, c, SLAB_SLICES),
        FlsFamily::Lattice { kappa, c } => lattice_sample(r, p, kappa, c),
    }
}

/// Measures the ratio at every `R` and fits its exponent.
pub fn fls_experiment(family: &FlsFamily, p: f64, rs: &[f64]) -> Result<ExponentFit> {
    family.validate()?;
    if !(p >= 1.0) {
        return Err(Error::InvalidParam(format!("p must be at least 1, got {p}")));
    }
    let ratios = rs.iter().map(|&r| fls_sample(family, p, r).map(|s| s.ratio)).collect::<Result<Vec<_>>>()?;
    let (name, pred, suff) = family.prediction(p);
    ExponentFit::from_ratios(name, &family.name(), p, rs.to_vec(), ratios, pred, Comparison::Equal, FLS_BAND, suff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{unit_family, UnitFamily};
    use crate::torus::{random_field, GridSpec};
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn grid() -> LineGrid {
        LineGrid::with_spacing(64.0, 0.5).unwrap()
    }

    fn random_spectrum(g: LineGrid, seed: u64) -> LineSpectrum {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LineSpectrum::from_profile(g, -1.0, 1.0, |_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .unwrap()
    }

    #[test]
    fn delta_at_zero_propagates_to_the_cutoff() {
        let g = grid();
        let f = LineSpectrum::new(g, vec![(0, Complex64::new(g.period, 0.0))]).unwrap();
        let r = 16.0;
        let prop = propagate(&f, r, &[0.0, 3.0, 16.0, -20.0]);
        for (i, t) in prop.times.iter().enumerate() {
            for v in prop.slice(i) {
                assert!((v.norm() - eta(t / r).abs()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_mode_has_unimodular_phase() {
        let g = grid();
        let f = LineSpectrum::new(g, vec![(7, Complex64::new(g.period, 0.0))]).unwrap();
        let prop = propagate(&f, 32.0, &[1.0, 10.0, 31.0]);
        for (i, t) in prop.times.iter().enumerate() {
            let c = eta(t / 32.0);
            assert!(prop.slice(i).iter().all(|v| (v.norm() - c).abs() < 1e-12));
            let (x, xi) = (g.x(5), g.xi(7));
            let want = Complex64::from_polar(c, x * xi + t * xi * xi);
            assert!((prop.slice(i)[5] - want).norm() < 1e-10);
        }
    }

    #[test]
    fn slices_match_direct_summation() {
        let f = random_spectrum(grid(), 3);
        let prop = propagate(&f, 8.0, &[0.0, 2.5]);
        for (i, &t) in prop.times.iter().enumerate() {
            for j in [0, 17, 100] {
                let want = f.eval(f.grid.x(j), t) * eta(t / 8.0);
                assert!((prop.slice(i)[j] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn frequencies_beyond_nyquist_are_rejected() {
        let g = LineGrid::new(16.0, 16).unwrap();
        assert!(LineSpectrum::new(g, vec![(8, Complex64::new(1.0, 0.0))]).is_err());
        assert!(LineSpectrum::new(g, vec![(7, Complex64::new(1.0, 0.0))]).is_ok());
    }

    #[test]
    fn cutoff_has_band_limited_time_spectrum() {
        // eta(t/R) e^{it xi^2} has time frequencies within 1/R of xi^2
        let rule = gl_rule(16);
        let nodes = gl_panels(&rule, -2000.0, 2000.0, 2000);
        let transform = |sigma: f64| -> f64 { nodes.iter().map(|&(s, w)| w * eta(s) * (sigma * s).cos()).sum() };
        let centre = transform(0.0);
        assert!(centre > 1.0);
        for sigma in [1.05, 1.5, 3.0] {
            assert!(transform(sigma).abs() < 1e-6 * centre, "{sigma}");
        }
        assert!(transform(0.9).abs() > 1e-4 * centre);
    }

    #[test]
    fn slab_modulus_is_bounded_above_and_below_uniformly_in_r() {
        let (lo1, hi1) = slab_modulus_band(256.0, 0.5, 64).unwrap();
        let (lo2, hi2) = slab_modulus_band(1024.0, 0.5, 64).unwrap();
        assert!(lo1 > 0.05 && hi1 < 1.0, "{lo1} {hi1}");
        assert!((lo1 - lo2).abs() < 1e-3 * lo1 && (hi1 - hi2).abs() < 1e-3 * hi1);
    }

    fn circle_grid() -> GridSpec {
        GridSpec::new(16, 32.0 * PI, 256).unwrap()
    }

    #[test]
    fn s_r_keeps_the_unit_circle_and_kills_the_edge() {
        let spec = circle_grid();
        let a = Complex64::new(0.5, -1.0);
        let on = TorusField::from_modes(spec, Band::Annulus, &[Mode { n: [0, -16], a }]).unwrap();
        assert_eq!(spec.xi([0, -16]), [0.0, -1.0]);
        let out = apply_s_r(&on).unwrap();
        assert_eq!(out.modes.len(), 1);
        assert!((out.modes[0].a - a * bump(0.0)).norm() < 1e-15);
        let edge = TorusField::from_modes(spec, Band::Annulus, &[Mode { n: [0, -18], a }]).unwrap();
        assert!(apply_s_r(&edge).unwrap().is_zero());
    }

    #[test]
    fn s_r_is_bounded_on_random_annulus_fields() {
        let spec = circle_grid();
        for seed in 0..5 {
            let f = random_field(spec, Band::Annulus, seed);
            let g = apply_s_r(&f).unwrap();
            assert!(g.l2_sq() <= f.l2_sq() * (1.0 + 1e-12));
            assert!(g.l2_sq() > 0.0);
        }
    }

    #[test]
    fn s_r_rejects_modes_outside_the_annulus() {
        let spec = circle_grid();
        let f = TorusField {
            spec,
            band: Band::Annulus,
            modes: vec![Mode { n: [0, -20], a: Complex64::new(1.0, 0.0) }],
            samples: None,
        };
        assert!(matches!(apply_s_r(&f), Err(Error::OutOfBand { .. })));
        let p = TorusField::zero(spec, Band::Parabola);
        assert!(apply_s_r(&p).is_err());
    }

    #[test]
    fn nikodym_of_one_is_one() {
        let r = 32.0;
        let g = SpaceTimeGrid::from_fn(-4.0, 0.5 / r, (16.0 * r) as usize, 16, |_, _| 1.0).unwrap();
        let n = nikodym_max(&g, r, &nikodym_ys(-1.0, 1.0, r)).unwrap();
        assert!(n.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn nikodym_finds_the_witness_tube() {
        let r = 32.0;
        let y0 = 0.25;
        let g = SpaceTimeGrid::from_fn(-4.0, 0.25 / r, (32.0 * r) as usize, 16, |x, _| {
            if (x - y0).abs() <= 1.0 / r {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let n = nikodym_max(&g, r, &[y0, y0 + 0.5]).unwrap();
        assert!((n.values[0] - 1.0).abs() < 1e-12);
        assert_eq!(n.best_w[0], 0.0);
        assert!(n.values[1] < 1.0);
    }

    #[test]
    fn nikodym_rejects_coarse_grids() {
        let g = SpaceTimeGrid::from_fn(0.0, 0.1, 10, 4, |_, _| 1.0).unwrap();
        let err = nikodym_max(&g, 64.0, &[0.5]).unwrap_err();
        assert!(err.to_string().contains("0.015625"));
    }

    #[test]
    fn nikodym_random_ratio_grows_slowly() {
        let q2 = [nikodym_random_ratio(64.0, 2.0, 32, 1).unwrap(), nikodym_random_ratio(256.0, 2.0, 32, 1).unwrap()];
        let q4 = [nikodym_random_ratio(64.0, 4.0, 32, 1).unwrap(), nikodym_random_ratio(256.0, 4.0, 32, 1).unwrap()];
        for v in [q2, q4] {
            assert!((v[1] / v[0]).ln() / 4f64.ln() < 0.1, "{v:?}");
        }
    }

    fn small_grid(vals: &[f64]) -> SpaceTimeGrid {
        SpaceTimeGrid::new(-1.0, 0.125, 16, vals.len() / 16, vals.to_vec()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn nikodym_is_a_sup_norm_contraction(vals in prop::collection::vec(0.0f64..5.0, 64)) {
            let g = small_grid(&vals);
            let n = nikodym_max(&g, 8.0, &nikodym_ys(-2.0, 2.0, 8.0)).unwrap();
            let sup = vals.iter().cloned().fold(0.0, f64::max);
            prop_assert!(n.values.iter().all(|v| *v <= sup * (1.0 + 1e-12)));
        }

        #[test]
        fn nikodym_is_monotone(vals in prop::collection::vec(0.0f64..5.0, 64), bump in prop::collection::vec(0.0f64..1.0, 64)) {
            let hi: Vec<f64> = vals.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let ys = nikodym_ys(-2.0, 2.0, 8.0);
            let a = nikodym_max(&small_grid(&vals), 8.0, &ys).unwrap();
            let b = nikodym_max(&small_grid(&hi), 8.0, &ys).unwrap();
            prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| *x <= *y + 1e-12));
        }

        #[test]
        fn propagation_is_unitary_per_slice(seed in 0u64..1000, t in -500.0f64..500.0) {
            let f = random_spectrum(grid(), seed);
            let prop = propagate(&f, 64.0, &[t, 0.5 * t]);
            prop_assert!(prop.unitarity_defect() < 1e-10);
        }

        #[test]
        fn rescaling_preserves_mass(pts in prop::collection::vec(((-1.0f64..1.0, -1.0f64..1.0), 0.0f64..3.0), 1..40), r in 1.0f64..300.0) {
            let mu = PointMeasure {
                points: pts.iter().map(|&((x, t), m)| ([x, t], m)).collect(),
                min_radius: 0.01,
                cell_area: None,
                period: None,
            };
            let (mr, rep) = rescale_measure(&mu, r, None, None, false).unwrap();
            prop_assert_eq!(rep.total_before, rep.total_after);
            prop_assert_eq!(mu.total(), mr.total());
        }
    }

    #[test]
    fn point_mass_stays_a_point_mass() {
        let mu = PointMeasure { points: vec![([0.0, 0.0], 1.0)], min_radius: 0.0, cell_area: None, period: None };
        let (mr, _) = rescale_measure(&mu, 64.0, None, None, true).unwrap();
        assert_eq!(mr.points, vec![([0.0, 0.0], 1.0)]);
        for a in [0.0, 0.5, 1.0, 2.0] {
            let c = exact_certificate(&mr, CertMode::Alpha, &[a]).unwrap();
            assert!((c.value - 1.0).abs() < 1e-15);
            assert_eq!(c.radius, 1.0);
        }
    }

    #[test]
    fn rescaled_disk_mass_is_the_preimage_mass() {
        let mu = unit_family(UnitFamily::Square, 1.0 / 32.0, 1.0 / 32.0);
        let r = 16.0;
        let (mr, _) = rescale_measure(&mu, r, None, None, false).unwrap();
        for k in 0..9 {
            let rho = 2f64.powi(k);
            let z = [8.0, 100.0];
            let direct: f64 = mr.points.iter().filter(|(y, _)| (y[0] - z[0]).hypot(y[1] - z[1]) <= rho).map(|p| p.1).sum();
            let pulled: f64 = mu
                .points
                .iter()
                .filter(|(x, _)| (r * x[0] - z[0]).hypot(r * r * x[1] - z[1]) <= rho)
                .map(|p| p.1)
                .sum();
            assert_eq!(direct, pulled);
        }
    }

    #[test]
    fn parabolic_two_dimensional_family_scales_like_r_to_minus_two() {
        let mu = unit_family(UnitFamily::Vertical, 1.0 / 32.0, 1.0 / 32.0);
        let scaled: Vec<f64> = [64.0, 256.0]
            .iter()
            .map(|&r| {
                let (_, rep) = rescale_measure(&mu, r, None, Some(2.0), r == 64.0).unwrap();
                let c = &rep.checks[0];
                assert_eq!(c.bound, MeasureBound::ParabolicHigh);
                assert!(c.holds);
                c.rescaled.value * r * r / c.source.value
            })
            .collect();
        assert!(scaled.iter().all(|v| *v > 0.0 && *v <= LEM_MEASURE_FACTOR), "{scaled:?}");
    }

    #[test]
    fn unit_families_satisfy_the_rescaling_bounds() {
        for f in UnitFamily::ALL {
            let (a, b) = f.dimensions();
            let mu = unit_family(f, 1.0 / 32.0, 1.0 / 32.0);
            let (_, rep) = rescale_measure(&mu, 64.0, Some(a), Some(b), false).unwrap();
            assert!(rep.checks.len() >= 2);
            assert!(rep.checks.iter().all(|c| c.holds), "{}", f.name());
        }
        let covered: std::collections::HashSet<_> = UnitFamily::ALL
            .iter()
            .flat_map(|f| {
                let (a, b) = f.dimensions();
                let mut v = MeasureBound::applicable(f64::NAN, b);
                v.extend(MeasureBound::applicable(a, f64::NAN));
                v
            })
            .map(|b| format!("{b:?}"))
            .collect();
        assert_eq!(covered.len(), 4);
    }

    #[test]
    fn change_of_variables_identity_holds_on_samples() {
        let mu = unit_family(UnitFamily::Cantor, 1.0 / 16.0, 1.0 / 16.0);
        let r = 8.0;
        let (mr, _) = rescale_measure(&mu, r, None, None, false).unwrap();
        let f = random_spectrum(LineGrid::with_spacing(256.0, 0.5).unwrap(), 9);
        let big_r = r * r;
        let u = |x: f64, t: f64| (eta(t / big_r) * f.eval(x, t).norm()).powi(3);
        let lhs: f64 = mr.points.iter().map(|(y, m)| u(y[0], y[1]) * m).sum();
        let rhs: f64 = mu.points.iter().map(|(x, m)| u(r * x[0], r * r * x[1]) * m).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn exponent_fit_recovers_a_power_law() {
        let r = vec![64.0, 256.0, 1024.0];
        let ratios: Vec<f64> = r.iter().map(|v: &f64| 3.0 * v.powf(-0.375)).collect();
        let fit = ExponentFit::from_ratios("zeta", "test", 2.0, r, ratios, -0.375, Comparison::Equal, 0.1, None).unwrap();
        assert!((fit.slope.unwrap() + 0.375).abs() < 1e-12);
        assert!(fit.residual.unwrap() < 1e-12);
        assert!((fit.intercept.unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!(fit.passes);
        let back: ExponentFit = serde_json::from_str(&fit.to_json()).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn exponent_fit_comparisons() {
        let r = vec![1.0, 2.0, 4.0];
        let ratios = vec![1.0, 2.0, 4.0];
        let mk = |c| ExponentFit::from_ratios("gamma", "t", 2.0, r.clone(), ratios.clone(), 0.5, c, 0.1, None).unwrap();
        assert!(mk(Comparison::AtLeast).passes);
        assert!(!mk(Comparison::AtMost).passes);
        assert!(!mk(Comparison::Equal).passes);
    }

    #[test]
    fn exponent_fit_needs_three_scales_and_flags_zero_norms() {
        assert!(ExponentFit::from_ratios("s", "t", 2.0, vec![1.0, 2.0], vec![1.0, 1.0], 0.0, Comparison::Equal, 0.1, None)
            .is_err());
        let fit =
            ExponentFit::from_ratios("s", "t", 2.0, vec![1.0, 2.0, 4.0], vec![1.0, 0.0, 1.0], 0.0, Comparison::Equal, 0.1, None)
                .unwrap();
        assert!(fit.flagged.is_some() && fit.slope.is_none() && !fit.passes);
    }

    #[test]
    fn chirp_slope_at_small_scales() {
        let fit = fls_experiment(&FlsFamily::Chirp { c: 0.25 }, 4.0, &[64.0, 128.0, 256.0]).unwrap();
        assert!(fit.passes, "{fit:?}");
        assert!(fit.slope.unwrap() >= 0.5 - 0.25 - 0.1);
    }

    #[test]
    fn slab_slope_at_small_scales() {
        for alpha in [0.5, 1.5] {
            let fit = fls_experiment(&FlsFamily::Slab { alpha, c: 0.5 }, 3.0, &[64.0, 256.0, 1024.0]).unwrap();
            assert!(fit.passes, "{fit:?}");
            assert!(fit.slope.unwrap() <= fit.sufficiency.unwrap() + 0.1);
        }
    }

    #[test]
    fn lattice_family_geometry() {
        let counts: Vec<usize> =
            [256.0, 4096.0, 65536.0].iter().map(|&r| LatticeFamily::new(r, 0.25, 0.25).unwrap().ls.len()).collect();
        assert_eq!(counts, vec![5, 9, 17]);
        let fam = LatticeFamily::new(4096.0, 0.25, 0.25).unwrap();
        assert!(!fam.gamma.is_empty());
        for z in &fam.gamma {
            assert!(z[0].hypot(z[1]) <= 0.25 * 4096.0);
            // every phase x l + t l^2 is a multiple of 2 pi on Gamma
            for &l in &fam.ls {
                let ph = (z[0] * l + z[1] * l * l) / (2.0 * PI);
                assert!((ph - ph.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lattice_pieces_add_coherently_on_gamma() {
        let fam = LatticeFamily::new(4096.0, 0.25, 0.25).unwrap();
        for z in fam.gamma.iter().take(40) {
            let sum: f64 = fam.ls.iter().map(|&l| fam.piece(l, z[0], z[1]).norm()).sum();
            assert!(fam.value(z[0], z[1]).norm() >= 0.5 * sum);
        }
        let at_origin = fam.value(0.0, 0.0);
        assert!((at_origin.re - 2.0 * fam.ls.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn invalid_family_parameters_are_rejected() {
        assert!(fls_experiment(&FlsFamily::Lattice { kappa: 0.8, c: 0.25 }, 2.0, &[1.0, 2.0, 3.0]).is_err());
        assert!(fls_experiment(&FlsFamily::Chirp { c: 0.25 }, 2.0, &[64.0, 128.0]).is_err());
    }
}
