//! The eight experiment pipelines.

use parabola_core::decomp::{bilinear_check, broad_narrow, constants_csv, random_pair, sample_points, BilinearReport};
use parabola_core::envelope::{kappa_max, verify_weighted_sq_with, SquareData};
use parabola_core::families::{ball_field, builtin_pairs};
use parabola_core::measures::{make_weight, unit_family, Family, GridMeasure, MeasureKind, UnitFamily, DEFAULT_BALL_C};
use parabola_core::schrodinger::{fls_experiment, rescale_measure, Comparison, ExponentFit, FlsFamily};
use parabola_core::torus::{lp_norm_pow, random_field, AtomSource, Band, GridSpec};
use std::fmt::Write as _;
use std::time::Instant;

use crate::config::{Experiment, ExperimentConfig};
use crate::memory::estimate_bytes;
use crate::report::{Bundle, CriterionResult, Report, Row};
use crate::{par_map, threads, CliError, Result};

/// Runs the configured experiment after the memory pre-flight and seals the report.
pub fn run(cfg: &ExperimentConfig) -> Result<Bundle> {
    cfg.validate()?;
    let estimate = estimate_bytes(cfg);
    if estimate > cfg.memory_cap_mb << 20 {
        return Err(CliError::Memory { estimate_mb: estimate.div_ceil(1 << 20), cap_mb: cfg.memory_cap_mb });
    }
    let start = Instant::now();
    let mut report = Report::new(cfg);
    report.memory_estimate_bytes = estimate;
    let mut sidecars = Vec::new();
    match cfg.experiment {
        Experiment::KappaScan => kappa_scan(cfg, &mut report, &mut sidecars)?,
        Experiment::SquareVerify => weighted_verify(cfg, false, &mut report, &mut sidecars)?,
        Experiment::EnvelopeVerify => weighted_verify(cfg, true, &mut report, &mut sidecars)?,
        Experiment::BroadNarrow => broad_narrow_run(cfg, &mut report, &mut sidecars)?,
        Experiment::Bilinear => bilinear_run(cfg, &mut report, &mut sidecars)?,
        Experiment::SchrodingerFls => schrodinger_run(cfg, &mut report)?,
        Experiment::Certificates => certificates_run(cfg, &mut report, &mut sidecars)?,
        Experiment::ExamplesSuite => examples_suite(cfg, &mut report)?,
    }
    if !cfg.deterministic {
        report.elapsed_ms = Some(start.elapsed().as_millis() as u64);
    }
    report.seal();
    Ok(Bundle { report, sidecars })
}

fn spec(r: u64) -> Result<GridSpec> {
    Ok(GridSpec::standard(r)?)
}

fn rs_f64(rs: &[u64]) -> Vec<f64> {
    rs.iter().map(|&r| r as f64).collect()
}

/// Weight family by name, with parameters from the config or their defaults.
pub fn weight_family(cfg: &ExperimentConfig, name: &str) -> Result<Family> {
    Ok(match name {
        "constant" => Family::Constant { lambda: cfg.lambda.unwrap_or(1.0) },
        "ball" => Family::Ball { center: [0.0, 0.0], radius: cfg.c.unwrap_or(1.0) },
        "lattice" => Family::Lattice { kappa: cfg.kappa.unwrap_or(1.0 / 3.0), c: cfg.c.unwrap_or(DEFAULT_BALL_C), extent: 1.0 },
        "truncated-lattice" => {
            Family::TruncatedLattice { kappa: cfg.kappa.unwrap_or(1.0 / 12.0), c: cfg.c.unwrap_or(DEFAULT_BALL_C) }
        }
        "dual-tube" => Family::DualTube { alpha: cfg.alpha.unwrap_or(1.5), cap_center: 0.0 },
        _ => return Err(CliError::Config(format!("unknown weight family `{name}`"))),
    })
}

/// Predicted `kappa_max` exponent in `R` for the families with a closed form.
pub fn kappa_prediction(family: &Family, p: f64) -> Option<(f64, Comparison)> {
    match family {
        Family::Constant { .. } => Some((0.0, Comparison::Equal)),
        Family::Ball { .. } => Some((-2.0 * (1.0 / p - 0.25), Comparison::Equal)),
        Family::Lattice { kappa, .. } => {
            let alpha = 2.0 - 3.0 * kappa;
            Some((-(2.0 - alpha) * (1.0 / p - 0.25), Comparison::AtMost))
        }
        Family::TruncatedLattice { kappa, .. } => Some((ex_y_exponent(2.0 - 6.0 * kappa, p), Comparison::Equal)),
        _ => None,
    }
}

/// Piecewise `kappa_max` exponent of the truncated lattice at dimension `alpha`.
pub fn ex_y_exponent(alpha: f64, p: f64) -> f64 {
    if p <= 4.0 / (3.0 - alpha) {
        -(2.0 - alpha) / (2.0 * p)
    } else {
        -((3.0 - alpha) / 2.0) * (1.0 / p - 0.25)
    }
}

fn fit_criterion(name: &str, fits: &[ExponentFit]) -> CriterionResult {
    let bad: Vec<String> = fits
        .iter()
        .filter(|f| !f.passes)
        .map(|f| {
            let s = f.slope.map(|s| format!("{s:.4}")).unwrap_or_else(|| "none".into());
            format!("{}[{} p={}] slope {s} vs {:.4}", f.name, f.family, f.p, f.prediction)
        })
        .collect();
    let detail = if fits.is_empty() {
        "no fits".into()
    } else if bad.is_empty() {
        // distance toward failure: |slope - prediction| for equalities, the signed excess otherwise
        let worst = fits
            .iter()
            .filter_map(|f| {
                f.slope.map(|s| match f.comparison {
                    Comparison::Equal => (s - f.prediction).abs(),
                    Comparison::AtMost => s - f.prediction,
                    Comparison::AtLeast => f.prediction - s,
                })
            })
            .fold(f64::NEG_INFINITY, f64::max);
        format!("{} fits within band, worst deviation {worst:.4} (band {})", fits.len(), fits[0].band)
    } else {
        bad.join("; ")
    };
    CriterionResult::new(name, bad.is_empty() && !fits.is_empty(), detail)
}

fn kappa_scan(cfg: &ExperimentConfig, report: &mut Report, sidecars: &mut Vec<(String, String)>) -> Result<()> {
    let family = weight_family(cfg, &cfg.family)?;
    let mut per_scale = String::from("R,p,s,kappa\n");
    let mut values = vec![Vec::new(); cfg.p.len()];
    let mut identity_dev = 0.0f64;
    for &r in &cfg.r {
        let g = spec(r)?;
        let h = make_weight(&family, g)?;
        for (pi, &p) in cfg.p.iter().enumerate() {
            let scan = kappa_max(&h, p, false)?;
            let predicted = match family {
                Family::Constant { lambda } => Some(lambda.powf(1.0 / p)),
                _ => None,
            };
            report.rows.push(Row::new(&cfg.family, "kappa_max", r, Some(p), scan.value, predicted));
            for (s, k) in &scan.per_scale {
                let _ = writeln!(per_scale, "{r},{p},{s},{k:e}");
            }
            values[pi].push(scan.value);
        }
        if let Family::Constant { lambda } = family {
            if r <= 256 {
                let explicit = GridMeasure::from_atoms(g, MeasureKind::Weight, "explicit", h.materialize())?;
                for &p in &cfg.p {
                    let want = lambda.powf(1.0 / p);
                    let scan = kappa_max(&explicit, p, true)?;
                    for e in &scan.entries {
                        identity_dev = identity_dev.max((e.kappa - want).abs());
                    }
                }
            }
        }
    }
    sidecars.push(("per_scale".into(), per_scale));
    if let Family::Constant { lambda } = family {
        let rows_dev = report
            .rows
            .iter()
            .map(|row| (row.measured - row.predicted.unwrap_or(f64::NAN)).abs())
            .fold(0.0f64, f64::max);
        let dev = identity_dev.max(rows_dev);
        report.criteria.push(CriterionResult::new(
            "kappa identities",
            dev <= 1e-12,
            format!("largest deviation of kappa(U) from lambda^(1/p) = {lambda}^(1/p): {dev:.2e}"),
        ));
    }
    if cfg.r.len() >= 3 {
        for (pi, &p) in cfg.p.iter().enumerate() {
            if let Some((pred, cmp)) = kappa_prediction(&family, p) {
                report.fits.push(ExponentFit::from_ratios(
                    "kappa_max",
                    &cfg.family,
                    p,
                    rs_f64(&cfg.r),
                    values[pi].clone(),
                    pred,
                    cmp,
                    cfg.tolerance,
                    None,
                )?);
            }
        }
        if !report.fits.is_empty() {
            report.criteria.push(fit_criterion("kappa_max exponents", &report.fits));
        }
    } else {
        report.notes.push("exponent fits need at least 3 values of R".into());
    }
    Ok(())
}

fn weighted_verify(
    cfg: &ExperimentConfig,
    envelope: bool,
    report: &mut Report,
    sidecars: &mut Vec<(String, String)>,
) -> Result<()> {
    let names: Vec<String> = builtin_pairs(cfg.r[0])
        .into_iter()
        .map(|f| f.name)
        .filter(|n| cfg.family == "all" || *n == cfg.family)
        .collect();
    if names.is_empty() {
        return Err(CliError::Config(format!("unknown field-weight pair `{}`", cfg.family)));
    }
    let jobs: Vec<(u64, String)> = cfg.r.iter().flat_map(|&r| names.iter().map(move |n| (r, n.clone()))).collect();
    let results = par_map(&jobs, threads(cfg.deterministic), |(r, name)| -> Result<Vec<_>> {
        let g = spec(*r)?;
        let fam = builtin_pairs(*r).into_iter().find(|f| f.name == *name).expect("pair exists at every R");
        let (f, h) = fam.build(g)?;
        let data = SquareData::build(&f)?;
        cfg.p.iter().map(|&p| Ok(verify_weighted_sq_with(&f, &h, p, Some(&data))?)).collect()
    });
    let mut scales = String::from("R,family,p,s,value\n");
    let mut ratios: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); cfg.p.len()]; names.len()];
    for ((r, name), res) in jobs.iter().zip(results) {
        let ni = names.iter().position(|n| n == name).unwrap();
        for (pi, rep) in res?.into_iter().enumerate() {
            let p = cfg.p[pi];
            report.rows.push(Row::new(name, "lhs", *r, Some(p), rep.lhs, None));
            if envelope {
                report.rows.push(Row::new(name, "env_rhs", *r, Some(p), rep.env_rhs, None));
                report.rows.push(Row::new(name, "env_ratio", *r, Some(p), rep.env_ratio, None));
                ratios[ni][pi].push(rep.env_ratio);
                for (s, v) in &rep.env_per_scale {
                    let _ = writeln!(scales, "{r},{name},{p},{s},{v:e}");
                }
            } else {
                report.rows.push(Row::new(name, "kappa_max", *r, Some(p), rep.kappa_max, None));
                report.rows.push(Row::new(name, "sq_rhs", *r, Some(p), rep.sq_rhs, None));
                report.rows.push(Row::new(name, "sq_ratio", *r, Some(p), rep.sq_ratio, None));
                ratios[ni][pi].push(rep.sq_ratio);
            }
        }
    }
    if envelope {
        sidecars.push(("per_scale".into(), scales));
    }
    let quantity = if envelope { "env_ratio" } else { "sq_ratio" };
    if cfg.r.len() >= 3 {
        for (ni, name) in names.iter().enumerate() {
            for (pi, &p) in cfg.p.iter().enumerate() {
                report.fits.push(ExponentFit::from_ratios(
                    quantity,
                    name,
                    p,
                    rs_f64(&cfg.r),
                    ratios[ni][pi].clone(),
                    0.0,
                    Comparison::AtMost,
                    cfg.tolerance,
                    None,
                )?);
            }
        }
        report.criteria.push(fit_criterion(&format!("{quantity} grows slower than R^{}", cfg.tolerance), &report.fits));
    } else {
        let ok = ratios.iter().flatten().flatten().all(|v| v.is_finite());
        report.criteria.push(CriterionResult::new(&format!("{quantity} finite"), ok, "fits need at least 3 values of R"));
    }
    Ok(())
}

fn broad_narrow_run(cfg: &ExperimentConfig, report: &mut Report, sidecars: &mut Vec<(String, String)>) -> Result<()> {
    let mut csv = String::from("R,K,p,trial,violations,c_emp_max,c_bg,m\n");
    let mut violations = 0usize;
    let mut checked = 0usize;
    for &r in &cfg.r {
        let g = spec(r)?;
        let trials: Vec<usize> = (0..cfg.trials).collect();
        let res = par_map(&trials, threads(cfg.deterministic), |&t| -> Result<Vec<_>> {
            let f = random_field(g, Band::Parabola, cfg.seed.wrapping_mul(1_000_003).wrapping_add(t as u64));
            let pts = sample_points(&g, cfg.points, cfg.seed.wrapping_add(1000 + t as u64));
            let mut out = Vec::new();
            for &k in &cfg.k {
                for &p in &cfg.p {
                    let rep = broad_narrow(&f, &pts, p, k, cfg.threshold)?;
                    out.push((k, p, rep.violations, rep.points.len(), rep.c_emp_max, rep.c_bg, rep.m));
                }
            }
            Ok(out)
        });
        let mut worst: Vec<((u64, f64), f64)> = Vec::new();
        for (t, res) in res.into_iter().enumerate() {
            for (k, p, v, n, c_emp, c_bg, m) in res? {
                violations += v;
                checked += n;
                let _ = writeln!(csv, "{r},{k},{p},{t},{v},{c_emp:e},{c_bg:e},{m}");
                match worst.iter_mut().find(|(key, _)| *key == (k, p)) {
                    Some(w) => w.1 = w.1.max(c_emp),
                    None => worst.push(((k, p), c_emp)),
                }
            }
        }
        for ((k, p), c) in worst {
            report.rows.push(Row::new(&format!("random K={k}"), "c_emp_max", r, Some(p), c, None));
        }
    }
    sidecars.push(("trials".into(), csv));
    report.criteria.push(CriterionResult::new(
        "pointwise iteration bound",
        violations == 0,
        format!("{violations} violations over {checked} point checks"),
    ));
    Ok(())
}

/// `Y` for trial `t`: a fixed family, or a rotation through four families with `mixed`.
fn bilinear_weight(cfg: &ExperimentConfig, g: GridSpec, t: usize) -> Result<GridMeasure> {
    let rs = g.rf();
    let fam = if cfg.family == "mixed" {
        match t % 4 {
            0 => Family::Constant { lambda: 1.0 },
            1 => Family::Lattice { kappa: 1.0 / 3.0, c: DEFAULT_BALL_C, extent: 1.0 },
            2 => Family::Ball { center: [rs, rs], radius: rs.sqrt() },
            _ => Family::TruncatedLattice { kappa: 1.0 / 12.0, c: DEFAULT_BALL_C },
        }
    } else {
        weight_family(cfg, &cfg.family)?
    };
    Ok(make_weight(&fam, g)?)
}

fn bilinear_run(cfg: &ExperimentConfig, report: &mut Report, sidecars: &mut Vec<(String, String)>) -> Result<()> {
    let mut all: Vec<BilinearReport> = Vec::new();
    let mut finite = true;
    let mut l4_fail = 0usize;
    let mut spread = Vec::new();
    for &k in &cfg.k {
        let mut per_r = Vec::new();
        for &rs in &cfg.r {
            let g = spec(rs)?;
            let ys: Vec<GridMeasure> = (0..4.min(cfg.trials.max(1))).map(|t| bilinear_weight(cfg, g, t)).collect::<Result<_>>()?;
            let trials: Vec<usize> = (0..cfg.trials).collect();
            let reps = par_map(&trials, threads(cfg.deterministic), |&t| -> Result<BilinearReport> {
                let seed = cfg.seed.wrapping_mul(7919).wrapping_add(7 * t as u64 + rs);
                let pair = random_pair(t, rs, k, cfg.threshold, seed)?;
                let corner = ((t * 37) % g.m, (t * 91) % g.m);
                Ok(bilinear_check(&pair, corner, &ys[t % ys.len()])?)
            });
            let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;
            let cmax = reps.iter().map(|r| r.c_bil).fold(0.0f64, f64::max);
            let cmin = reps.iter().map(|r| r.c_bil).fold(f64::MAX, f64::min);
            let l4 = reps.iter().map(|r| r.c_l4).fold(0.0f64, f64::max);
            finite &= reps.iter().all(|r| r.c_bil.is_finite() && r.c_bil > 0.0 && r.c_l4.is_finite());
            l4_fail += reps.iter().filter(|r| !r.l4_holds).count();
            let ex = format!("K={k}");
            report.rows.push(Row::new(&ex, "c_bil_max", rs, None, cmax, None));
            report.rows.push(Row::new(&ex, "c_bil_min", rs, None, cmin, None));
            report.rows.push(Row::new(&ex, "c_l4_max", rs, None, l4, None));
            per_r.push(cmax);
            all.extend(reps);
        }
        let (lo, hi) = per_r.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        spread.push((k, hi / lo));
    }
    sidecars.push(("constants".into(), constants_csv(&all)));
    report.criteria.push(CriterionResult::new("bilinear constants finite", finite, format!("{} pairs", all.len())));
    report.criteria.push(CriterionResult::new(
        "local L4 inequality",
        l4_fail == 0,
        format!("{l4_fail} failures over {} pairs", all.len()),
    ));
    let worst = spread.iter().map(|s| s.1).fold(0.0f64, f64::max);
    report.criteria.push(CriterionResult::new(
        "bilinear constants vary by at most x4 across R_s",
        worst <= 4.0,
        spread.iter().map(|(k, s)| format!("K={k}: x{s:.3}")).collect::<Vec<_>>().join(", "),
    ));
    Ok(())
}

/// Line-model family by name, with parameters from the config or their defaults.
pub fn fls_family(cfg: &ExperimentConfig, name: &str) -> Result<FlsFamily> {
    Ok(match name {
        "chirp" => FlsFamily::Chirp { c: cfg.c.unwrap_or(0.25) },
        "slab" => FlsFamily::Slab { alpha: cfg.alpha.unwrap_or(1.0), c: cfg.c.unwrap_or(0.5) },
        "lattice" => FlsFamily::Lattice { kappa: cfg.kappa.unwrap_or(0.25), c: cfg.c.unwrap_or(0.25) },
        _ => return Err(CliError::Config(format!("unknown line family `{name}`"))),
    })
}

fn schrodinger_run(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    if cfg.r.len() < 3 {
        return Err(CliError::Config("schrodinger-fls fits need at least 3 values of R".into()));
    }
    let fam = fls_family(cfg, &cfg.family)?;
    let rs = rs_f64(&cfg.r);
    let fits = par_map(&cfg.p, threads(cfg.deterministic), |&p| fls_experiment(&fam, p, &rs));
    for fit in fits {
        let fit = fit?;
        for (r, v) in fit.r.iter().zip(&fit.ratios) {
            report.rows.push(Row::new(&fam.name(), &fit.name, *r as u64, Some(fit.p), *v, None));
        }
        report.fits.push(fit);
    }
    report.criteria.push(fit_criterion(&format!("{} exponents", fam.name()), &report.fits));
    Ok(())
}

fn certificates_run(cfg: &ExperimentConfig, report: &mut Report, sidecars: &mut Vec<(String, String)>) -> Result<()> {
    let families: Vec<UnitFamily> = UnitFamily::ALL.into_iter().filter(|f| cfg.family == "all" || f.name() == cfg.family).collect();
    if families.is_empty() {
        return Err(CliError::Config(format!("unknown unit family `{}`", cfg.family)));
    }
    let mut jobs = Vec::new();
    for &f in &families {
        for &r in &cfg.r {
            jobs.push((f, r, false));
            if r <= cfg.exact_max_r {
                jobs.push((f, r, true));
            }
        }
    }
    let results = par_map(&jobs, threads(cfg.deterministic), |&(f, r, exact)| {
        let (a, b) = f.dimensions();
        let mu = unit_family(f, cfg.resolution, cfg.resolution);
        rescale_measure(&mu, r as f64, Some(a), Some(b), exact).map(|(_, rep)| rep)
    });
    let mut csv = String::from("family,R,exact,bound,dim,source,rescaled,predicted,ratio,ratio_upper,holds\n");
    let (mut failures, mut checks, mut mass_dev, mut exact_checks) = (0usize, 0usize, 0.0f64, 0usize);
    let mut worst = 0.0f64;
    for (&(f, r, exact), rep) in jobs.iter().zip(results) {
        let rep = rep?;
        mass_dev = mass_dev.max((rep.total_after - rep.total_before).abs());
        for c in &rep.checks {
            checks += 1;
            exact_checks += exact as usize;
            failures += !c.holds as usize;
            worst = worst.max(c.ratio);
            let _ = writeln!(
                csv,
                "{},{r},{exact},{:?},{},{:e},{:e},{:e},{:e},{:e},{}",
                f.name(),
                c.bound,
                c.dim,
                c.source.value,
                c.rescaled.value,
                c.predicted,
                c.ratio,
                c.ratio_upper,
                c.holds
            );
            let q = format!("{:?}{}", c.bound, if exact { " exact" } else { "" });
            report.rows.push(Row::new(f.name(), &q, r, None, c.ratio, None));
        }
    }
    sidecars.push(("checks".into(), csv));
    report.criteria.push(CriterionResult::new(
        "rescaled certificates within factor 8",
        failures == 0 && checks > 0,
        format!("{failures} failures over {checks} checks ({exact_checks} exact), largest ratio {worst:.4}"),
    ));
    report.criteria.push(CriterionResult::new(
        "rescaling preserves total mass",
        mass_dev == 0.0,
        format!("largest mass change {mass_dev:e}"),
    ));
    Ok(())
}

/// Grid for the suite: extended upward by factors of 4 to at least three scales.
pub fn suite_grid(rs: &[u64]) -> Vec<u64> {
    let mut out: Vec<u64> = rs.to_vec();
    out.sort_unstable();
    out.dedup();
    while out.len() < 3 {
        out.push(out[out.len() - 1] * 4);
    }
    out
}

/// Unit-ball, alpha-dimensional and truncated-lattice examples, one exponent fit each per `p`.
fn examples_suite(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let rs = suite_grid(&cfg.r);
    if rs != cfg.r {
        report.notes.push(format!("R grid extended to {rs:?} so that every fit has three scales"));
    }
    let ball = Family::Ball { center: [0.0, 0.0], radius: 1.0 };
    let lattice = Family::Lattice { kappa: 1.0 / 3.0, c: DEFAULT_BALL_C, extent: 1.0 };
    let ex_y = Family::TruncatedLattice { kappa: 1.0 / 12.0, c: DEFAULT_BALL_C };
    let np = cfg.p.len();
    // [example][p] -> values over R
    let mut series = vec![vec![Vec::new(); np]; 4];
    for &r in &rs {
        let g = spec(r)?;
        let f = ball_field(g)?;
        let data = SquareData::build(&f)?;
        let hb = make_weight(&ball, g)?;
        let hl = make_weight(&lattice, g)?;
        let hy = make_weight(&ex_y, g)?;
        for (pi, &p) in cfg.p.iter().enumerate() {
            let lhs = lp_norm_pow(&f, p, Some(&hb as &dyn AtomSource))?.powf(1.0 / p);
            let sq = data.sq_norm_pow(p).powf(1.0 / p);
            let vals = [
                lhs / sq,
                kappa_max(&hb, p, false)?.value,
                kappa_max(&hl, p, false)?.value,
                kappa_max(&hy, p, false)?.value,
            ];
            for (e, v) in vals.into_iter().enumerate() {
                series[e][pi].push(v);
            }
        }
    }
    let specs: [(&str, &str, &Family); 4] = [
        ("ex_ball", "lp_over_square_function", &ball),
        ("ex_ball", "kappa_max", &ball),
        ("ex_alpha", "kappa_max", &lattice),
        ("ex_Y", "kappa_max", &ex_y),
    ];
    for (e, (example, quantity, fam)) in specs.iter().enumerate() {
        let mut fits = Vec::new();
        for (pi, &p) in cfg.p.iter().enumerate() {
            let (pred, cmp) = kappa_prediction(fam, p).expect("suite families have predictions");
            for (r, v) in rs.iter().zip(&series[e][pi]) {
                report.rows.push(Row::new(example, quantity, *r, Some(p), *v, None));
            }
            fits.push(ExponentFit::from_ratios(quantity, example, p, rs_f64(&rs), series[e][pi].clone(), pred, cmp, cfg.tolerance, None)?);
        }
        report.criteria.push(fit_criterion(&format!("{example} {quantity}"), &fits));
        report.fits.extend(fits);
    }
    Ok(())
}

/// Exponent table of one example as fixed-precision CSV.
pub fn exponent_table(report: &Report, example: &str) -> String {
    let mut out = String::from("quantity,p,slope,prediction,passes\n");
    for f in report.fits.iter().filter(|f| f.family == example) {
        let slope = f.slope.map(|s| format!("{s:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{slope},{:.6},{}", f.name, f.p, f.prediction + 0.0, f.passes);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_grid_pads_upward() {
        assert_eq!(suite_grid(&[64, 256]), vec![64, 256, 1024]);
        assert_eq!(suite_grid(&[256, 64, 1024]), vec![64, 256, 1024]);
        assert_eq!(suite_grid(&[16]), vec![16, 64, 256]);
    }

    #[test]
    fn ex_y_exponent_is_continuous_at_the_break() {
        let alpha: f64 = 1.5;
        let pb = 4.0 / (3.0 - alpha);
        let lo = -(2.0 - alpha) / (2.0 * pb);
        let hi = -((3.0 - alpha) / 2.0) * (1.0 / pb - 0.25);
        assert!((lo - hi).abs() < 1e-12);
        assert_eq!(ex_y_exponent(alpha, 2.0), -0.125);
        assert_eq!(ex_y_exponent(alpha, 4.0), 0.0);
    }

    #[test]
    fn kappa_scan_constant_weight_is_identically_one() {
        let mut cfg = ExperimentConfig::defaults(Experiment::KappaScan);
        cfg.family = "constant".into();
        cfg.r = vec![16, 64];
        let b = run(&cfg).unwrap();
        assert!(b.report.passed(), "{:?}", b.report.criteria);
        assert!(b.report.rows.iter().all(|r| (r.measured - 1.0).abs() < 1e-12));
        assert_eq!(b.report.rows.len(), 6);
    }

    #[test]
    fn unknown_families_are_rejected() {
        let cfg = ExperimentConfig { family: "nope".into(), ..ExperimentConfig::defaults(Experiment::KappaScan) };
        assert!(matches!(run(&cfg), Err(CliError::Config(_))));
        let cfg = ExperimentConfig { family: "nope".into(), ..ExperimentConfig::defaults(Experiment::SchrodingerFls) };
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn memory_preflight_rejects_with_estimate() {
        let cfg = ExperimentConfig { memory_cap_mb: 1, ..ExperimentConfig::defaults(Experiment::SquareVerify) };
        match run(&cfg) {
            Err(CliError::Memory { estimate_mb, cap_mb }) => assert!(estimate_mb > cap_mb),
            other => panic!("expected a pre-flight rejection, got {other:?}"),
        }
    }
}
