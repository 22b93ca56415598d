//! The twelve acceptance criteria, one PASS/FAIL line each.

use parabola_cli::{run, CriterionResult, Experiment, ExperimentConfig, Report};
use parabola_core::envelope::{kappa_max, kappa_max_brute};
use parabola_core::measures::{make_weight, Family, DEFAULT_BALL_C};
use parabola_core::torus::{lp_norm_pow, quartic_coefficient_sum, random_field, Band, GridSpec};
use std::process::ExitCode;
use std::time::Instant;

fn cfg(exp: Experiment) -> ExperimentConfig {
    ExperimentConfig { deterministic: true, ..ExperimentConfig::defaults(exp) }
}

fn report(c: &ExperimentConfig) -> Report {
    run(c).unwrap_or_else(|e| panic!("{} failed to run: {e}", c.experiment)).report
}

/// Merges the criteria of one or more reports into a single verdict.
fn merge(name: &str, parts: &[&CriterionResult]) -> CriterionResult {
    let passed = !parts.is_empty() && parts.iter().all(|c| c.passed);
    let detail = parts.iter().map(|c| format!("[{}] {}", c.name, c.detail)).collect::<Vec<_>>().join(" ");
    CriterionResult::new(name, passed, detail)
}

fn find<'a>(r: &'a Report, name: &str) -> &'a CriterionResult {
    r.criteria.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("no criterion `{name}` in {}", r.experiment))
}

fn quadrature() -> CriterionResult {
    let (mut worst2, mut worst4) = (0.0f64, 0.0f64);
    for r in [16u64, 64] {
        let g = GridSpec::standard(r).unwrap();
        for t in 0..20u64 {
            let band = if t % 2 == 0 { Band::Parabola } else { Band::Annulus };
            let f = random_field(g, band, 1000 * r + t);
            let two = lp_norm_pow(&f, 2.0, None).unwrap();
            worst2 = worst2.max((two - f.l2_sq()).abs() / f.l2_sq());
            let four = lp_norm_pow(&f, 4.0, None).unwrap();
            let oracle = quartic_coefficient_sum(&f);
            worst4 = worst4.max((four - oracle).abs() / oracle);
        }
    }
    CriterionResult::new(
        "1 quadrature exactness",
        worst2 <= 1e-9 && worst4 <= 1e-8,
        format!("40 fields, worst relative error p=2 {worst2:.2e}, p=4 {worst4:.2e}"),
    )
}

fn kappa_identities() -> CriterionResult {
    let mut parts = Vec::new();
    for lambda in [1.0, 0.3] {
        let mut c = cfg(Experiment::KappaScan);
        c.family = "constant".into();
        c.lambda = Some(lambda);
        c.r = vec![64, 256];
        parts.push(find(&report(&c), "kappa identities").clone());
    }
    merge("2 kappa identities", &parts.iter().collect::<Vec<_>>())
}

fn brute_force() -> CriterionResult {
    let g = GridSpec::standard(64).unwrap();
    let families = [
        Family::Constant { lambda: 1.0 },
        Family::Ball { center: [0.0, 0.0], radius: 1.0 },
        Family::Lattice { kappa: 1.0 / 3.0, c: DEFAULT_BALL_C, extent: 1.0 },
        Family::TruncatedLattice { kappa: 1.0 / 12.0, c: DEFAULT_BALL_C },
        Family::DualTube { alpha: 1.5, cap_center: 0.0 },
    ];
    let mut mismatches = Vec::new();
    for fam in &families {
        let h = make_weight(fam, g).unwrap();
        for p in [2.0, 3.0, 4.0] {
            let fast = kappa_max(&h, p, false).unwrap();
            let brute = kappa_max_brute(&h, p).unwrap();
            if fast.value != brute.value || fast.per_scale != brute.per_scale {
                mismatches.push(format!("{} p={p}: {} vs {}", h.label, fast.value, brute.value));
            }
        }
    }
    let detail = if mismatches.is_empty() { "5 families x 3 exponents identical".into() } else { mismatches.join("; ") };
    CriterionResult::new("3 kappa brute-force equivalence", mismatches.is_empty(), detail)
}

fn weighted_envelope() -> CriterionResult {
    let r = report(&cfg(Experiment::EnvelopeVerify));
    let c = &r.criteria[0];
    merge("9 weighted square function", &[c])
}

fn schrodinger() -> CriterionResult {
    let mut parts = Vec::new();
    let mut run_family = |family: &str, rs: Vec<u64>, alpha: Option<f64>| {
        let mut c = cfg(Experiment::SchrodingerFls);
        c.family = family.into();
        c.r = rs;
        c.alpha = alpha;
        let r = report(&c);
        parts.push(r.criteria[0].clone());
    };
    run_family("chirp", vec![256, 1024, 4096], None);
    for a in [0.5, 1.0, 1.5] {
        run_family("slab", vec![256, 1024, 4096], Some(a));
    }
    run_family("lattice", vec![256, 4096, 65536], None);
    merge("10 schrodinger lower bounds", &parts.iter().collect::<Vec<_>>())
}

fn main() -> ExitCode {
    let mut lines: Vec<CriterionResult> = Vec::new();
    let mut timed = |f: &dyn Fn() -> Vec<CriterionResult>| {
        let t = Instant::now();
        for mut c in f() {
            c.detail = format!("{} ({:.1}s)", c.detail, t.elapsed().as_secs_f64());
            println!("{}", c.line());
            lines.push(c);
        }
    };
    timed(&|| vec![quadrature()]);
    timed(&|| vec![kappa_identities()]);
    timed(&|| vec![brute_force()]);
    let suite_json = std::cell::RefCell::new(String::new());
    timed(&|| {
        let r = report(&cfg(Experiment::ExamplesSuite));
        *suite_json.borrow_mut() = r.to_json();
        vec![
            merge("4 unit-ball sharpness", &[find(&r, "ex_ball lp_over_square_function"), find(&r, "ex_ball kappa_max")]),
            merge("5 alpha-dimensional bound", &[find(&r, "ex_alpha kappa_max")]),
            merge("6 ex:Y piecewise exponents", &[find(&r, "ex_Y kappa_max")]),
        ]
    });
    timed(&|| {
        let r = report(&cfg(Experiment::BroadNarrow));
        vec![merge("7 broad-narrow certificate", &r.criteria.iter().collect::<Vec<_>>())]
    });
    timed(&|| {
        let r = report(&cfg(Experiment::Bilinear));
        vec![merge("8 bilinear constants", &r.criteria.iter().collect::<Vec<_>>())]
    });
    timed(&|| vec![weighted_envelope()]);
    timed(&|| vec![schrodinger()]);
    timed(&|| {
        let r = report(&cfg(Experiment::Certificates));
        vec![merge("11 measure certificates", &r.criteria.iter().collect::<Vec<_>>())]
    });
    timed(&|| {
        let again = report(&cfg(Experiment::ExamplesSuite)).to_json();
        let same = again == *suite_json.borrow();
        vec![CriterionResult::new("12 determinism", same, format!("examples-suite JSON {} bytes, identical: {same}", again.len()))]
    });
    let failed = lines.iter().filter(|c| !c.passed).count();
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
