//! Acceptance suite. Each criterion prints one `criterion N ... PASS|FAIL`
//! line and then asserts it; the process exits nonzero if any fails. Run
//! with `cargo test -p laplace-certify --test acceptance`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use laplace_certify::bvm::compute_mle;
use laplace_certify::experiment::{self, ExperimentConfig, RunOutput, RunRecord};
use laplace_certify::laplace::{certify, estimate_delta3, find_mode, Delta3Mode, Delta3Options, ModeOptions, Soundness};
use laplace_certify::metric::{tensor_op_norm, MetricContext, NormMode};
use laplace_certify::models::pmf::{pmf_third_form, pmf_third_norm_closed_form};
use laplace_certify::models::{make_cubic_radial, make_ones_cubic, pmf_fisher, ModelInstance, PmfModel};
use laplace_certify::rng::stream;
use laplace_certify::tv::{tv_gaussian_bound, tv_gaussian_exact_1d};

fn report(id: u32, name: &str, pass: bool, secs: f64, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} ({name}): {verdict} [{secs:.1}s] {detail}");
}

fn run_json(json: &str) -> RunOutput {
    let cfg = ExperimentConfig::from_json(json).expect("config parses");
    experiment::run(&cfg).expect("experiment runs")
}

fn certified(r: &RunRecord) -> bool {
    r.soundness == "certified"
}

/// Quadrature TV never exceeds a certified Laplace certificate.
fn criterion_1_certificate_soundness() {
    let t0 = Instant::now();
    let mut g = stream(2024, "acceptance-1", 0);
    let mut configs = Vec::new();
    for i in 0..24u64 {
        let d = 1 + (i % 3) as usize;
        let n = 10f64.powf(g.random_range(2.5..5.0)).round();
        let model = if i % 2 == 0 { "cubic_radial" } else { "ones_cubic" };
        configs.push(format!(r#"{{"experiment":"certify","model":"{model}","d":{d},"n":{n},"seed":{i}}}"#));
    }
    for i in 0..18u64 {
        let d = 1 + (i % 3) as usize;
        let n = [2000, 5000, 20000][(i / 3 % 3) as usize];
        let ts: Vec<f64> = (0..d).map(|_| g.random_range(-0.5..0.5)).collect();
        let design = if d == 1 { "gaussian" } else { "rademacher" };
        configs.push(format!(
            r#"{{"experiment":"certify","model":"logistic","d":{d},"n":{n},"theta_star":{ts:?},"design":"{design}","seed":{}}}"#,
            100 + i
        ));
    }
    for i in 0..16u64 {
        let d = 1 + (i % 2) as usize;
        let n = [5000, 20000, 100000, 1000000][(i / 2 % 4) as usize];
        let raw: Vec<f64> = (0..=d).map(|_| g.random_range(0.2..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let mut ts: Vec<f64> = raw.iter().map(|x| x / s).collect();
        ts[d] = 1.0 - ts[..d].iter().sum::<f64>();
        configs.push(format!(
            r#"{{"experiment":"certify","model":"pmf","d":{d},"n":{n},"theta_star":{ts:?},"seed":{}}}"#,
            200 + i
        ));
    }
    let mut total_certified = 0;
    let mut violations = Vec::new();
    let mut worst_ratio = 0.0_f64;
    for json in &configs {
        let out = run_json(json);
        for r in out.records.iter().filter(|r| certified(r)) {
            total_certified += 1;
            let (tv, err, bound) = (r.tv_measured.unwrap(), r.tv_err.unwrap(), r.bound_total.unwrap());
            worst_ratio = worst_ratio.max(tv / bound);
            if tv > bound + err {
                violations.push(format!("{} d={} n={}: tv {tv:e} > {bound:e} + {err:e}", r.model, r.d, r.n));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = total_certified >= 50 && violations.is_empty() && secs < 300.0;
    report(
        1,
        "certificate soundness",
        pass,
        secs,
        &format!(
            "{total_certified} certified of {} instances, {} violations, max tv/bound {worst_ratio:.3}",
            configs.len(),
            violations.len()
        ),
    );
    assert!(pass, "{violations:?}");
}

/// Known closed forms of δ₃ for the two cubic synthetic potentials.
fn criterion_2_closed_form_delta3() {
    let t0 = Instant::now();
    let mut worst = 0.0_f64;
    let mut lines = Vec::new();
    let opts = Delta3Options { budget: 2048, seed: 5, force_empirical: false };
    let empirical = Delta3Options { force_empirical: true, ..opts };
    for d in 1..=3 {
        let f = make_cubic_radial(d, 1e4);
        let fit = find_mode(&f, &DVector::zeros(d), ModeOptions::default()).unwrap();
        for r in [6.0, 10.0] {
            let a = estimate_delta3(&f, &fit, r, opts).unwrap();
            assert_eq!(a.mode, Delta3Mode::Analytic);
            let e = estimate_delta3(&f, &fit, r, empirical).unwrap();
            let rel = (e.value - 1.0).abs();
            worst = worst.max(rel).max((a.value - 1.0).abs());
            lines.push(format!("cubic_radial d={d} r={r}: analytic {} empirical {:.5}", a.value, e.value));
        }
    }
    for d in 1..=6 {
        let f = make_ones_cubic(d, 1e4);
        let fit = find_mode(&f, &DVector::zeros(d), ModeOptions::default()).unwrap();
        let e = estimate_delta3(&f, &fit, 6.0, empirical).unwrap();
        let target = (d as f64).powf(1.5);
        let rel = (e.value - target).abs() / target;
        worst = worst.max(rel);
        lines.push(format!("ones_cubic d={d}: empirical {:.5} vs {target:.5}", e.value));
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= 0.01 && secs < 60.0;
    report(2, "closed-form delta3", pass, secs, &format!("max relative error {worst:.2e}"));
    assert!(pass, "{lines:#?}");
}

/// Multinomial third-derivative norm at `N̄ = θ*` against its closed form.
fn criterion_3_multinomial_tensor_norm() {
    let t0 = Instant::now();
    let mut g = stream(77, "acceptance-3", 0);
    let mut worst = 0.0_f64;
    for i in 0..20u64 {
        let d = 1 + (i % 3) as usize;
        let counts: Vec<u64> = (0..=d).map(|_| g.random_range(50..1000)).collect();
        let n: u64 = counts.iter().sum();
        let mut ts: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        ts[d] = 1.0 - ts[..d].iter().sum::<f64>();
        let m = PmfModel::new(counts, ts.clone()).unwrap();
        let ctx = MetricContext::new(pmf_fisher(&ts).unwrap()).unwrap();
        let form = pmf_third_form(&m, &m.theta_star());
        let got = tensor_op_norm(&form, &ctx, NormMode::multistart(i)).unwrap().value;
        let tmin = ts.iter().copied().fold(f64::INFINITY, f64::min);
        let want = pmf_third_norm_closed_form(tmin);
        worst = worst.max((got - want).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= 1e-3 && secs < 60.0;
    report(3, "multinomial tensor norm", pass, secs, &format!("20 pmfs, max abs error {worst:.2e}"));
    assert!(pass);
}

/// Equal-mean Gaussian comparison bound dominates the exact 1-d TV.
fn criterion_4_gaussian_comparison_bound() {
    let t0 = Instant::now();
    let mut g = stream(4, "acceptance-4", 0);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..1000 {
        let s1: f64 = 10f64.powf(g.random_range(-2.0..2.0));
        let s2: f64 = s1 * 10f64.powf(g.random_range(-1.0..1.0));
        let mu: f64 = g.random_range(-5.0..5.0);
        let p1 = DMatrix::from_element(1, 1, 1.0 / (s1 * s1));
        let p2 = DMatrix::from_element(1, 1, 1.0 / (s2 * s2));
        let bound = tv_gaussian_bound(&p1, &p2).unwrap();
        let exact = tv_gaussian_exact_1d(mu, s1, mu, s2).unwrap();
        tightest = tightest.min(bound - exact);
        if bound < exact {
            violations += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = violations == 0 && secs < 10.0;
    report(4, "gaussian comparison bound", pass, secs, &format!("1000 pairs, {violations} violations, min slack {tightest:.2e}"));
    assert!(pass);
}

/// Score event frequency against its closed-form floor.
fn criterion_5_event_floor() {
    let t0 = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for d in [1, 2] {
        let out = run_json(&format!(
            r#"{{"experiment":"events","model":"logistic","d":{d},"n":5000,"s":12,"replications":500,"seed":{d},"design":"gaussian"}}"#
        ));
        let e1 = out.summary.frequencies.iter().find(|f| f.event == "E1").unwrap();
        let floor = e1.floor.unwrap();
        let half = 0.5 * (e1.wilson_hi - e1.wilson_lo);
        let ok = e1.total == 500 && e1.freq >= floor - half;
        pass &= ok;
        details.push(format!("d={d}: P(E1) {}/{} vs floor {floor:.4} - {half:.4}", e1.count, e1.total));
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 180.0;
    report(5, "event floor", pass, secs, &details.join("; "));
    assert!(pass);
}

/// Measured TV(posterior, Fisher Gaussian) never exceeds a non-vacuous,
/// fully certified BvM bound on replications where all events hold.
fn criterion_6_bvm_soundness() {
    let t0 = Instant::now();
    let cases = [
        ("pmf n=1e4 s=12", r#"{"experiment":"bvm","model":"pmf","d":2,"n":10000,"s":12,"theta_star":[0.3,0.3,0.4],"replications":100,"seed":61}"#),
        ("pmf n=1e9 s=16", r#"{"experiment":"bvm","model":"pmf","d":2,"n":1e9,"s":16,"theta_star":[0.3,0.3,0.4],"replications":100,"seed":62}"#),
        ("logistic n=1e6 s=16", r#"{"experiment":"bvm","model":"logistic","d":2,"n":1e6,"s":16,"theta_star":[0.3,-0.2],"design":"rademacher","replications":100,"seed":63}"#),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (name, json) in cases {
        let out = run_json(json);
        let tested = out
            .records
            .iter()
            .filter(|r| {
                r.soundness == "certified"
                    && r.e1 == Some(true)
                    && r.e2 == Some(true)
                    && r.e3 == Some(true)
                    && r.bound_total.is_some_and(|b| b < 1.0)
                    && r.tv_measured.is_some()
            })
            .count();
        let worst = out
            .records
            .iter()
            .filter_map(|r| Some(r.tv_measured? / r.bound_total?))
            .fold(0.0_f64, f64::max);
        pass &= out.summary.violations == 0;
        details.push(format!(
            "{name}: {tested}/100 non-vacuous, {} violations, {} error rows, max tv/bound {worst:.2e}",
            out.summary.violations, out.summary.errors
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    report(6, "BvM soundness", pass, secs, &details.join("; "));
    assert!(pass);
}

/// Quadrature TV decays like n^{-1/2} at fixed d.
fn criterion_7_scaling_rate() {
    let t0 = Instant::now();
    let out = run_json(
        r#"{"experiment":"sweep","model":"cubic_radial","d":2,"n":100,"seed":7,"replications":3,"grid":{"n":[100,1000,10000,100000]}}"#,
    );
    let slope = out
        .summary
        .slopes
        .iter()
        .find(|s| s.axis == "n" && s.column == "tv_measured")
        .expect("slope fitted");
    let secs = t0.elapsed().as_secs_f64();
    let pass = (slope.slope + 0.5).abs() <= 0.1 && secs < 300.0;
    report(7, "scaling rate", pass, secs, &format!("slope {:.4} (se {:.1e}) over {} points", slope.slope, slope.se, slope.points));
    assert!(pass);
}

/// Quadratic, pmf and GLM cases where the answer is exact.
fn criterion_8_exact_degenerate_cases() {
    let t0 = Instant::now();
    let mut checks = Vec::new();

    let out = run_json(
        r#"{"experiment":"certify","model":"quadratic","d":2,"n":300,"center":[0.5,-1.0],"seed":8,"replications":3}"#,
    );
    let quad_tv = out.records.iter().all(|r| r.tv_measured.unwrap() <= r.tv_err.unwrap());
    checks.push(("quadratic tv within error bar", quad_tv));
    let spec: laplace_certify::models::ModelSpec =
        serde_json::from_str(r#"{"model":"quadratic","d":3,"n":50,"center":[1,2,3]}"#).unwrap();
    let f = spec.instantiate(0).unwrap().posterior(&spec.prior().unwrap());
    let fit = find_mode(f.as_ref(), &f.default_start(), ModeOptions::default()).unwrap();
    let rep = estimate_delta3(f.as_ref(), &fit, 8.0, Delta3Options::default()).unwrap();
    let cert = certify(f.as_ref(), &fit, 8.0, &rep);
    checks.push(("quadratic first term zero", cert.laplace_term == 0.0 && cert.soundness == Soundness::Certified));

    let spec: laplace_certify::models::ModelSpec =
        serde_json::from_str(r#"{"model":"pmf","d":3,"n":777,"theta_star":[0.1,0.2,0.3,0.4]}"#).unwrap();
    let mut bitwise = true;
    for seed in 0..10 {
        let inst = spec.instantiate(seed).unwrap();
        let ModelInstance::Pmf(m) = &inst else { unreachable!() };
        let mle = compute_mle(&inst).unwrap();
        bitwise &= mle.mode.iter().zip(m.nbar().iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    checks.push(("pmf MLE equals N/n bitwise", bitwise));

    let spec: laplace_certify::models::ModelSpec =
        serde_json::from_str(r#"{"model":"logistic","d":3,"n":400,"theta_star":[0.5,-0.5,0.2],"seed":3}"#).unwrap();
    let probe = DVector::from_column_slice(&[0.1, 0.7, -0.3]);
    let hess: Vec<DMatrix<f64>> = (0..5)
        .map(|seed| spec.instantiate(seed).unwrap().likelihood().hessian(&probe))
        .collect();
    let labels_differ = {
        let a = spec.instantiate(0).unwrap().likelihood().gradient(&probe);
        let b = spec.instantiate(1).unwrap().likelihood().gradient(&probe);
        a != b
    };
    let same = hess.iter().all(|h| h.iter().zip(hess[0].iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    checks.push(("GLM Hessian identical across label resamples", same && labels_differ));

    let secs = t0.elapsed().as_secs_f64();
    let pass = checks.iter().all(|c| c.1) && secs < 30.0;
    let detail: Vec<String> = checks.iter().map(|(n, ok)| format!("{n}: {ok}")).collect();
    report(8, "exact degenerate cases", pass, secs, &detail.join("; "));
    assert!(pass);
}

fn csv_without_elapsed(out: &RunOutput) -> String {
    let mut buf = Vec::new();
    experiment::write_csv(&out.records, &mut buf).unwrap();
    String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Same seed, same CSV, regardless of thread count.
fn criterion_9_determinism() {
    let t0 = Instant::now();
    let configs = [
        r#"{"experiment":"certify","model":"ones_cubic","d":2,"n":2000,"seed":9,"replications":4}"#,
        r#"{"experiment":"bvm","model":"pmf","d":2,"n":1e9,"s":16,"theta_star":[0.3,0.3,0.4],"replications":4,"seed":9}"#,
        r#"{"experiment":"events","model":"logistic","d":2,"n":3000,"replications":6,"seed":9}"#,
        r#"{"experiment":"tv","model":"logistic","d":1,"n":500,"replications":3,"tv":"mc","seed":9}"#,
        r#"{"experiment":"sweep","model":"cubic_radial","d":1,"n":100,"seed":9,"grid":{"n":[100,1000,10000]}}"#,
    ];
    let mut pass = true;
    for json in configs {
        let cfg = ExperimentConfig::from_json(json).unwrap();
        let runs: Vec<String> = [1, 2, 1]
            .iter()
            .map(|&threads| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
                csv_without_elapsed(&pool.install(|| experiment::run(&cfg)).unwrap())
            })
            .collect();
        pass &= runs.iter().all(|r| r == &runs[0]);
    }
    let secs = t0.elapsed().as_secs_f64();
    report(9, "determinism", pass, secs, &format!("{} configs, three runs each", configs.len()));
    assert!(pass);
}

fn main() {
    let criteria: [(&str, fn()); 9] = [
        ("1", criterion_1_certificate_soundness),
        ("2", criterion_2_closed_form_delta3),
        ("3", criterion_3_multinomial_tensor_norm),
        ("4", criterion_4_gaussian_comparison_bound),
        ("5", criterion_5_event_floor),
        ("6", criterion_6_bvm_soundness),
        ("7", criterion_7_scaling_rate),
        ("8", criterion_8_exact_degenerate_cases),
        ("9", criterion_9_determinism),
    ];
    let failed: Vec<&str> = criteria
        .iter()
        .filter(|(_, f)| std::panic::catch_unwind(f).is_err())
        .map(|(id, _)| *id)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
