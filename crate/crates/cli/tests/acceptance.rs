//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::process::Command;
use std::time::Instant;

use basestation::expectation::{
    expected_next_cov, lemma_gap, subset_weight, two_sensor_terms, two_sensor_terms_equal_noise,
};
use basestation::filter::{kf_step, FilterState};
use basestation::instances::{
    random_equal_noise_pair, random_matrix, random_pd, random_psd, random_scalar_measurement_pair, random_stable,
    random_system, two_sensor_scenario,
};
use basestation::linalg::{blkcol, blkdiag, loewner_leq, CovMatrix, PsdTolerance};
use basestation::model::{enumerate_subsets, LinearSystem, LossModel, Point, Scenario};
use basestation::montecarlo::empirical_one_step;
use basestation::placement::{expected_at, place_1d, place_2d, scan_piecewise_concavity, verify_concavity_1d};
use basestation::Definiteness;
use basestation_cli::scenario::builtin;
use nalgebra::{dmatrix, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = (bool, String);
type Criterion = (&'static str, fn() -> Verdict);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Two sensors at 0 and 1 with equal `C` and `R`, the loss family chosen by
/// `linear`.
fn equal_noise_instance(r: &mut ChaCha8Rng, linear: bool) -> Scenario<f64> {
    let n = r.random_range(1..=4);
    let m = r.random_range(1..=n.min(2));
    let system = LinearSystem::new(
        random_stable(r, n, 0.95),
        random_psd::<f64, _>(r, n).into_inner(),
        random_pd::<f64, _>(r, n, 0.1).into_inner(),
    )
    .unwrap();
    let c = random_matrix(r, m, n);
    let noise = random_pd::<f64, _>(r, m, 0.05).into_inner();
    let model = if linear {
        LossModel::linear(r.random_range(0.1..1.0), 1.0).unwrap()
    } else {
        LossModel::exponential(r.random_range(0.2..3.0), 1.0).unwrap()
    };
    two_sensor_scenario(system, c, noise.clone(), noise, model).unwrap()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut forms = 0;
    for i in 0..50 {
        let n = r.random_range(1..=4);
        let sc = if i % 2 == 0 {
            let m = r.random_range(1..=2);
            random_equal_noise_pair(&mut r, n, m)
        } else {
            random_scalar_measurement_pair(&mut r, n)
        };
        let p = random_psd::<f64, _>(&mut r, n);
        let s = sc.sensors();
        let mut all_terms = vec![two_sensor_terms(&p, sc.system(), s[0].c(), s[0].r(), s[1].r()).unwrap()];
        if i % 2 == 0 {
            all_terms.push(two_sensor_terms_equal_noise(&p, sc.system(), s[0].c(), s[0].r()).unwrap());
        }
        forms += all_terms.len();
        for d in grid(101) {
            let lambda = [sc.loss_model().eval(d).unwrap(), sc.loss_model().eval(1.0 - d).unwrap()];
            let oracle = expected_next_cov(&p, &sc, &lambda).unwrap();
            for terms in &all_terms {
                let closed = terms.expected_cov(lambda[0], lambda[1]).unwrap();
                worst = worst.max(rel_err(closed.matrix(), oracle.matrix()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst <= 1e-10 && secs < 5.0,
        format!(
            "{forms} closed-form evaluations x 101 points, max rel err {worst:.2e} (tol 1e-10), {secs:.2} s (< 5 s)"
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = r.random_range(1..=4);
        let m = r.random_range(1..=3);
        let system = random_system::<f64, _>(&mut r, n);
        let p = random_psd::<f64, _>(&mut r, n);
        let c = random_matrix::<f64, _>(&mut r, m, n);
        let noise = random_pd::<f64, _>(&mut r, m, 0.05).into_inner();
        let f = blkcol([&c, &c]).unwrap();
        let g = blkdiag([&noise, &noise]).unwrap();
        let state = FilterState::with_covariance(p);
        let joint = kf_step(&state, &system, &f, &g, &DVector::zeros(2 * m)).unwrap();
        let half = kf_step(&state, &system, &c, &(&noise * 0.5), &DVector::zeros(m)).unwrap();
        worst = worst.max(rel_err(joint.state.p.matrix(), half.state.p.matrix()));
    }
    (
        worst <= 1e-10,
        format!("200 instances, max rel err {worst:.2e} (tol 1e-10)"),
    )
}

fn prop1_instances() -> Vec<(Scenario<f64>, CovMatrix<f64>)> {
    let mut r = rng(3);
    (0..100)
        .map(|i| {
            let sc = equal_noise_instance(&mut r, i % 2 == 1);
            let p = random_psd::<f64, _>(&mut r, sc.system().n());
            (sc, p)
        })
        .collect()
}

fn prop2_instances() -> Vec<(Scenario<f64>, CovMatrix<f64>)> {
    let mut r = rng(4);
    (0..100)
        .map(|_| {
            let n = r.random_range(1..=4);
            let sc = random_scalar_measurement_pair(&mut r, n);
            let p = random_psd::<f64, _>(&mut r, n);
            (sc, p)
        })
        .collect()
}

fn criterion_3() -> Verdict {
    let count = |set: &[(Scenario<f64>, CovMatrix<f64>)]| {
        let mut worst = f64::NEG_INFINITY;
        let ok = set
            .iter()
            .filter(|(sc, p)| {
                let rep = verify_concavity_1d(p, sc, 101, 1e-3).unwrap();
                worst = worst.max(rep.intervals[0].worst_matrix_margin);
                rep.all_nsd
            })
            .count();
        (ok, worst)
    };
    let (a, wa) = count(&prop1_instances());
    let (b, wb) = count(&prop2_instances());
    (
        a == 100 && b == 100,
        format!(
            "NSD second differences: equal C/R {a}/100 (worst margin {wa:.2e}), scalar C with R1 != R2 {b}/100 \
             (worst margin {wb:.2e}); grid 101, h 1e-3, tol 1e-7"
        ),
    )
}

fn criterion_4() -> Verdict {
    let hits = |set: &[(Scenario<f64>, CovMatrix<f64>)]| {
        set.iter()
            .filter(|(sc, p)| place_1d(p, sc, 101).unwrap().endpoint_optimal)
            .count()
    };
    let a = hits(&prop1_instances());
    let b = hits(&prop2_instances());
    (
        a == 100 && b == 100,
        format!("argmin at a sensor: equal C/R {a}/100, scalar C {b}/100"),
    )
}

fn criterion_5() -> Verdict {
    let mut r = rng(5);
    let tol = PsdTolerance::default();
    let mut argmin_ok = 0;
    let mut loewner_ok = 0;
    for _ in 0..100 {
        let n = r.random_range(1..=4);
        let sc = random_scalar_measurement_pair(&mut r, n);
        let p = random_psd::<f64, _>(&mut r, n);
        let res = place_1d(&p, &sc, 101).unwrap();
        if res.best_location == sc.sensors()[1].position() {
            argmin_ok += 1;
        }
        let at_1 = expected_at(&p, &sc, &Point::Line(1.0)).unwrap();
        let at_0 = expected_at(&p, &sc, &Point::Line(0.0)).unwrap();
        if loewner_leq(&at_1, &at_0, tol).unwrap() {
            loewner_ok += 1;
        }
    }
    (
        argmin_ok == 100 && loewner_ok == 100,
        format!("R1 > R2: argmin at sensor 2 {argmin_ok}/100, E[P'|d=1] <= E[P'|d=0] {loewner_ok}/100"),
    )
}

fn criterion_6() -> Verdict {
    let mut r = rng(6);
    let mut nsd = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..500 {
        let n = r.random_range(1..=4);
        let system = random_system::<f64, _>(&mut r, n);
        let p = random_psd::<f64, _>(&mut r, n);
        let c = random_matrix::<f64, _>(&mut r, 1, n);
        let r1 = CovMatrix::new(dmatrix![r.random_range(0.05..3.0)]).unwrap();
        let r2 = CovMatrix::new(dmatrix![r.random_range(0.05..3.0)]).unwrap();
        let gap = lemma_gap(&two_sensor_terms(&p, &system, &c, &r1, &r2).unwrap()).unwrap();
        worst = worst.max(gap.max_eig);
        if matches!(gap.verdict, Definiteness::Nsd | Definiteness::Zero) {
            nsd += 1;
        }
    }
    let one = CovMatrix::new(dmatrix![1.0]).unwrap();
    let system = LinearSystem::scalar(1.0, 1.0, 1.0).unwrap();
    let hand = lemma_gap(&two_sensor_terms(&one, &system, &dmatrix![1.0], &one, &one).unwrap()).unwrap();
    let g: f64 = hand.gap[(0, 0)];
    (
        nsd == 500 && (g + 1.0 / 3.0).abs() <= 1e-12,
        format!(
            "M0 - M1 - M2 NSD in {nsd}/500 (largest eigenvalue {worst:.2e}); unit instance gap {g:.15} (-1/3 +- 1e-12)"
        ),
    )
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let mut r = rng(7);
    let trials = 100_000;
    let mut worst_z = 0.0f64;
    let mut worst_mask_z = 0.0f64;
    for k in 0..10 {
        let n = r.random_range(1..=3);
        let sc = if k % 2 == 0 {
            random_equal_noise_pair(&mut r, n, 1)
        } else {
            random_scalar_measurement_pair(&mut r, n)
        };
        let p = random_psd::<f64, _>(&mut r, n);
        let loc = Point::Line(r.random_range(0.0..1.0));
        let lambda = basestation::model::arrival_probs(&sc, &loc).unwrap();
        let exact = expected_next_cov(&p, &sc, &lambda).unwrap();
        let est = empirical_one_step(&p, &sc, &lambda, trials, 1000 + k).unwrap();
        let floor = 1e-12 * exact.matrix().amax();
        for (d, se) in (est.mean.matrix() - exact.matrix()).iter().zip(est.stderr.iter()) {
            let z = if *se > 0.0 {
                d.abs() / se
            } else if d.abs() <= floor {
                0.0
            } else {
                f64::INFINITY
            };
            worst_z = worst_z.max(z);
        }
        for subset in enumerate_subsets(2).unwrap() {
            let alpha = subset_weight(&lambda, &subset).unwrap();
            let freq = *est.mask_counts.get(&subset.mask()).unwrap_or(&0) as f64 / trials as f64;
            let sd = (alpha * (1.0 - alpha) / trials as f64).sqrt();
            let z = if sd > 0.0 {
                (freq - alpha).abs() / sd
            } else if freq == alpha {
                0.0
            } else {
                f64::INFINITY
            };
            worst_mask_z = worst_mask_z.max(z);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst_z <= 4.0 && worst_mask_z <= 4.0 && secs < 60.0,
        format!(
            "10 scenarios x 1e5 trials: worst entry deviation {worst_z:.2} SE, worst mask frequency deviation \
             {worst_mask_z:.2} sigma (limit 4), {secs:.2} s (< 60 s)"
        ),
    )
}

fn criterion_8() -> Verdict {
    let sc = builtin("fig3_triangle").unwrap().scenario;
    let p = CovMatrix::identity(1);
    let placed = place_2d(&p, &sc, 0.005).unwrap();
    let centroid = (0.25, 3f64.sqrt() / 12.0);
    let near = placed.interior_minima().find(|m| {
        let c = m.location.coords();
        (c[0] - centroid.0).hypot(c[1] - centroid.1) <= 0.01
    });
    match near {
        Some(m) => (
            true,
            format!(
                "interior local minimum at {} (cost {:.6}), centroid ({:.4}, {:.4})",
                m.location, m.cost, centroid.0, centroid.1
            ),
        ),
        None => (
            false,
            format!(
                "no interior local minimum within 0.01 of the centroid; minima: {:?}",
                placed
                    .local_minima
                    .iter()
                    .map(|m| m.location.to_string())
                    .collect::<Vec<_>>()
            ),
        ),
    }
}

fn criterion_9() -> Verdict {
    let sc = builtin("fig2_colinear3").unwrap().scenario;
    let rep = scan_piecewise_concavity(sc.system().p0(), &sc, 101).unwrap();
    let concave = rep.intervals.iter().filter(|i| i.trace_concave).count();
    let total = rep.intervals.len();
    (
        concave == total && total == sc.sensors().len() - 1,
        format!(
            "{} sensors: trace concave on {concave} of {total} inter-sensor intervals",
            sc.sensors().len()
        ),
    )
}

fn simulate(extra: &[&str]) -> Vec<u8> {
    let mut args = vec![
        "simulate",
        "builtin:fig1_default",
        "--location",
        "0.5",
        "--horizon",
        "40",
        "--trials",
        "3000",
        "--seed",
        "42",
    ];
    args.extend_from_slice(extra);
    let out = Command::new(env!("CARGO_BIN_EXE_basestation"))
        .args(&args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn criterion_10() -> Verdict {
    let a = simulate(&[]);
    let b = simulate(&[]);
    let one = simulate(&["--threads", "1"]);
    let four = simulate(&["--threads", "4"]);
    let same = a == b && a == one && a == four;
    (
        same && !a.is_empty(),
        format!(
            "{} bytes; two runs, 1 thread and 4 threads {}",
            a.len(),
            if same { "identical" } else { "differ" }
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 closed form vs power set", criterion_1),
        ("2 duplicated sensor equals halved noise", criterion_2),
        ("3 matrix concavity", criterion_3),
        ("4 endpoint optimality", criterion_4),
        ("5 lower-noise sensor wins", criterion_5),
        ("6 correction gap sign", criterion_6),
        ("7 Monte Carlo consistency", criterion_7),
        ("8 triangle interior minimum", criterion_8),
        ("9 colinear piecewise concavity", criterion_9),
        ("10 simulate determinism", criterion_10),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let (ok, detail) = match std::panic::catch_unwind(run) {
            Ok(v) => v,
            Err(_) => (false, "panicked".to_string()),
        };
        if !ok {
            failed += 1;
        }
        println!("{} criterion {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
