use proptest::prelude::*;
use rand::Rng;
use setcf::model::{
    adjustment_q, cf_binary_roy, cf_censored, cf_dynamic, cf_entry_game, cf_interval_treatment, cf_random_coef,
    control_set, dynamic_mu1, entry_regions, lambda_fn, location, predict_additive_mean, predict_binary,
    predict_multinomial, predict_ordered, Cell, ModelError, ModelSpec, PiTable, ThetaPoint,
};
use setcf::num::{keyed_rng, linspace, phi, phi_inv};
use setcf::oracle::grid_range;
use setcf::rset::{extremize, sample_grid, Mode, SetExpr};
use setcf::school::{best, cf_local_pref, feasible, local_preference};

fn pis(entries: &[(Vec<i64>, f64)]) -> PiTable {
    entries.iter().cloned().collect()
}

fn roy(pi0: f64, pi1: f64, rho: f64) -> ThetaPoint {
    ThetaPoint::new(vec![0.2, 0.5], vec![rho], pis(&[(vec![0], pi0), (vec![1], pi1)]))
}

fn interval(s: &SetExpr) -> (f64, f64) {
    match s {
        SetExpr::Interval(i) => (i.lo(), i.hi()),
        other => panic!("expected an interval, got {other:?}"),
    }
}

#[test]
fn roy_control_set_branches() {
    let t = roy(0.6, 1.0, 0.0);
    assert_eq!(interval(&cf_binary_roy(1.0, &[0.0], &[], &t).unwrap()), (0.0, 0.6));
    assert_eq!(interval(&cf_binary_roy(0.0, &[0.0], &[], &t).unwrap()), (0.6, 1.0));
    assert_eq!(interval(&cf_binary_roy(1.0, &[1.0], &[], &t).unwrap()), (0.0, 1.0));
    let bad = roy(1.2, 0.5, 0.0);
    assert!(matches!(cf_binary_roy(1.0, &[0.0], &[], &bad), Err(ModelError::Infeasible(_))));
}

#[test]
fn random_coefficient_sets() {
    let t = roy(0.3, 0.7, 0.0);
    let s = cf_random_coef(1.0, 1.0, &[], &t).unwrap();
    // v0 is free when z = 1
    for v0 in [0.0, 0.5, 1.0] {
        assert!(s.contains(&[v0, 0.7]).unwrap());
        assert!(!s.contains(&[v0, 0.71]).unwrap());
    }
    let s = cf_random_coef(0.0, 0.0, &[], &t).unwrap();
    assert!(s.contains(&[0.3, 0.9]).unwrap());
    assert!(s.contains(&[0.8, 0.0]).unwrap());
    assert!(!s.contains(&[0.29, 0.5]).unwrap());
}

#[test]
fn random_coefficient_area_matches_the_index() {
    let t = roy(0.35, 0.62, 0.0);
    let s = cf_random_coef(1.0, 1.0, &[], &t).unwrap();
    let mut rng = keyed_rng(11, &[]);
    let n = 200_000;
    let hits = (0..n)
        .filter(|_| s.contains(&[rng.random::<f64>(), rng.random::<f64>()]).unwrap())
        .count();
    let area = hits as f64 / n as f64;
    assert!((area - 0.62).abs() < 4.0 * (0.62f64 * 0.38 / n as f64).sqrt(), "area {area}");
}

fn dynamic_theta() -> ThetaPoint {
    let mut pi = PiTable::new();
    for z in 0..2 {
        pi.insert(vec![1, z], 0.4 + 0.1 * z as f64);
        for y1 in 0..2 {
            for d1 in 0..2 {
                pi.insert(vec![2, y1, d1, z], 0.3 + 0.1 * (y1 + d1 + z) as f64);
            }
        }
    }
    ThetaPoint::new(vec![0.3, 0.2, 0.3, 0.1, 0.1, 0.1], vec![0.3, 0.2, 0.1, 0.2, 0.1], pi)
}

#[test]
fn dynamic_box_picks_branches() {
    let t = dynamic_theta();
    let SetExpr::Box(b) = cf_dynamic(1.0, 1.0, 0.0, &[1.0, 0.0], &[], &t).unwrap() else {
        panic!("box expected")
    };
    let d = b.dims();
    assert_eq!((d[0].lo(), d[0].hi()), (0.0, dynamic_mu1(&t, 1.0)));
    assert_eq!((d[1].lo(), d[1].hi()), (0.0, 0.5));
    assert_eq!((d[2].lo(), d[2].hi()), (t.pi_at(&[2, 1, 1, 0]).unwrap(), 1.0));

    let mut half = PiTable::new();
    half.insert(vec![1, 0], 0.5);
    half.insert(vec![2, 1, 1, 0], 0.5);
    let t = ThetaPoint::new(vec![0.5, 0.0], vec![], half);
    let s = cf_dynamic(1.0, 1.0, 1.0, &[0.0, 0.0], &[], &t).unwrap();
    assert_eq!(s, SetExpr::boxed(&[(0.0, 0.5), (0.0, 0.5), (0.0, 0.5)]).unwrap());
}

#[test]
fn dynamic_vertices_satisfy_threshold_equations() {
    let t = dynamic_theta();
    for code in 0..32u32 {
        let bit = |k: u32| f64::from(code >> k & 1);
        let (y1, d1, d2, z1, z2) = (bit(0), bit(1), bit(2), bit(3), bit(4));
        let s = cf_dynamic(y1, d1, d2, &[z1, z2], &[], &t).unwrap();
        let mu1 = dynamic_mu1(&t, d1);
        let pi1 = t.pi_at(&[1, z1 as i64]).unwrap();
        let pi2 = t.pi_at(&[2, y1 as i64, d1 as i64, z2 as i64]).unwrap();
        for v in sample_grid(&s, 2).unwrap() {
            let weak = |flag: f64, latent: f64, index: f64| if flag == 1.0 { latent <= index } else { latent >= index };
            assert!(weak(y1, v[0], mu1) && weak(d1, v[1], pi1) && weak(d2, v[2], pi2), "{v:?}");
        }
    }
}

fn entry_theta(a: [f64; 2], b: [f64; 2]) -> ThetaPoint {
    let mut pi = PiTable::new();
    for j in 0..2 {
        pi.insert(vec![j as i64 + 1, 1, 0], a[j]);
        pi.insert(vec![j as i64 + 1, 0, 0], b[j]);
    }
    ThetaPoint::new(vec![], vec![], pi)
}

#[test]
fn entry_multiplicity_region() {
    let r = entry_regions(&[0.0, 0.0], &[], &entry_theta([0.3, 0.3], [0.7, 0.7])).unwrap();
    assert_eq!(r.multi, SetExpr::boxed(&[(0.3, 0.7), (0.3, 0.7)]).unwrap());
    let r = entry_regions(&[0.0, 0.0], &[], &entry_theta([0.5, 0.4], [0.5, 0.4])).unwrap();
    let SetExpr::Box(b) = &r.multi else { panic!("box expected") };
    assert!(b.dims().iter().all(|i| i.width() == 0.0));
}

#[test]
fn complements_are_rejected() {
    let e = entry_regions(&[0.0, 0.0], &[], &entry_theta([0.7, 0.3], [0.3, 0.7]));
    assert!(matches!(e, Err(ModelError::Infeasible(_))));
}

#[test]
fn entry_control_set_tags() {
    let t = entry_theta([0.3, 0.3], [0.7, 0.7]);
    let s = cf_entry_game(&[0.0, 0.0], &[0.0, 0.0], &[], &t).unwrap();
    assert!(s.contains(&[0.9, 0.9, 0.0]).unwrap() && s.contains(&[0.9, 0.9, 1.0]).unwrap());
    assert!(!s.contains(&[0.5, 0.5, 0.0]).unwrap());
    let s = cf_entry_game(&[1.0, 0.0], &[0.0, 0.0], &[], &t).unwrap();
    // the multiplicity box resolves to (1, 0) only under the tag 1
    assert!(s.contains(&[0.5, 0.5, 1.0]).unwrap());
    assert!(!s.contains(&[0.5, 0.5, 0.0]).unwrap());
    assert!(s.contains(&[0.1, 0.9, 0.0]).unwrap() && s.contains(&[0.1, 0.9, 1.0]).unwrap());
}

#[test]
fn censored_sets() {
    let t = ThetaPoint::new(vec![1.0, 0.5], vec![0.4], pis(&[(vec![0], 0.5)]));
    assert_eq!(interval(&cf_censored(2.0, &[0.0], &[], &t).unwrap()), (1.5, 1.5));
    assert_eq!(interval(&cf_censored(0.0, &[0.0], &[], &t).unwrap()), (f64::NEG_INFINITY, -0.5));
    assert!(matches!(cf_censored(-1.0, &[0.0], &[], &t), Err(ModelError::Input(_))));
}

#[test]
fn censored_corner_infimum_sits_on_the_truncation() {
    let spec = ModelSpec::censored();
    let t = ThetaPoint::new(vec![1.0, 0.5], vec![0.4], pis(&[(vec![0], 0.5)]));
    let cf = cf_censored(0.0, &[0.0], &[], &t).unwrap();
    let (lambda, opts) = lambda_fn(&spec, &t, &[0.0]).unwrap();
    let lo = extremize(&cf, lambda.as_ref(), Mode::Inf, &opts).unwrap();
    assert!(lo.at_truncation);
    // λ(v) = 0.4 v is increasing, so the limit is the truncated endpoint
    assert_eq!(lo.value, 0.4 * -spec.truncation);
    let hi = extremize(&cf, lambda.as_ref(), Mode::Sup, &opts).unwrap();
    assert_eq!(hi.value, 0.4 * -0.5);
    assert!(!hi.at_truncation);
}

#[test]
fn interval_treatment_sets() {
    let t = ThetaPoint::new(vec![1.0, 0.5], vec![0.4], pis(&[(vec![0], 0.2), (vec![1], 0.0)]));
    let (v, d) = cf_interval_treatment(1.0, 1.0, &[0.0], &[], &t).unwrap();
    assert!((interval(&v).0 - 0.8).abs() < 1e-15 && v.is_singleton());
    assert_eq!(interval(&d), (1.0, 1.0));
    let (v, d) = cf_interval_treatment(0.0, 2.0, &[1.0], &[], &t).unwrap();
    assert_eq!(interval(&v), (0.0, 2.0));
    assert_eq!(interval(&d), (0.0, 2.0));
    assert!(cf_interval_treatment(2.0, 1.0, &[0.0], &[], &t).is_err());
}

#[test]
fn interval_treatment_bounds_are_ordered() {
    let spec = ModelSpec::interval_treatment();
    for slope in linspace(0.0, 2.0, 9) {
        for rho in linspace(-0.9, 0.9, 7) {
            let t = ThetaPoint::new(vec![0.3, slope], vec![rho], pis(&[(vec![0], 0.2)]));
            for (dl, du) in [(0.0, 1.0), (-1.0, 0.5), (2.0, 2.0)] {
                let cell = Cell::new(vec![dl, du], vec![], vec![0.0]);
                let cf = control_set(&spec, &cell, &t).unwrap();
                let iv = predict_additive_mean(&spec, &[dl, du], &[], &cf, &t).unwrap();
                assert!(iv.lo() <= iv.hi());
            }
        }
    }
}

#[test]
fn local_preference_first_and_second_branch() {
    let cutoffs = [0.5, 0.5, 0.5];
    // all feasible, report (2): assigned 2; for j = 2 the pair is (2, best of the rest)
    let s = [0.9, 0.8, 0.7];
    let f = cf_local_pref(&s, &[2], &cutoffs, 1).unwrap();
    // school 1 is not listed: best with and without it are both 2
    assert_eq!(f.elements(), &[vec![2, 2]]);
    let f = cf_local_pref(&s, &[1, 2], &cutoffs, 1).unwrap();
    // N⁻ = {3}: the unlisted feasible school may rank anywhere below 1
    assert_eq!(f.elements(), &[vec![1, 2], vec![1, 3]]);
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

#[test]
fn local_preference_truth_table() {
    let cutoffs = [0.5, 0.5, 0.5];
    let mut checked = 0;
    for feasible_mask in 0..8u32 {
        let scores: Vec<f64> = (0..3).map(|k| if feasible_mask >> k & 1 == 1 { 0.75 } else { 0.25 }).collect();
        let b = feasible(&scores, &cutoffs).unwrap();
        for truth in permutations(&[0, 1, 2, 3]) {
            let assigned = best(&truth, &b).unwrap();
            let acceptable: Vec<usize> = truth.iter().copied().take_while(|&o| o != 0).collect();
            let mut reports: Vec<Vec<usize>> = vec![vec![]];
            reports.extend(acceptable.iter().map(|&o| vec![o]));
            for report in reports {
                let mut order = report.clone();
                order.push(0);
                // stable: the report places the student where the truth does
                if best(&order, &b) != Some(assigned) {
                    continue;
                }
                for j in 1..=3 {
                    let (hi, lo) = local_preference(&truth, &b, j);
                    let set = cf_local_pref(&scores, &report, &cutoffs, j).unwrap();
                    assert!(
                        set.contains_label(&[hi as i64, lo as i64]),
                        "truth {truth:?} report {report:?} b {b:?} j {j}: {:?} not in {:?}",
                        (hi, lo),
                        set.elements()
                    );
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 300);
}

#[test]
fn adjustment_examples() {
    let spec = ModelSpec::binary_roy();
    let t = roy(0.5, 0.5, 0.0);
    assert_eq!(adjustment_q(&spec, &t, &[0.3], &[0.9]).unwrap()[0], phi_inv(0.3));
    let t = roy(0.5, 0.5, 0.5);
    assert_eq!(adjustment_q(&spec, &t, &[0.5], &[0.5]).unwrap()[0], 0.0);
    assert!(adjustment_q(&spec, &t, &[1.5], &[0.5]).is_err());
}

#[test]
fn adjusted_error_is_standard_normal() {
    let spec = ModelSpec::binary_roy();
    let t = roy(0.5, 0.5, 0.7);
    let mut rng = keyed_rng(12, &[]);
    let n = 100_000;
    let mut u: Vec<f64> = (0..n)
        .map(|_| adjustment_q(&spec, &t, &[rng.random::<f64>()], &[rng.random::<f64>()]).unwrap()[0])
        .collect();
    u.sort_by(f64::total_cmp);
    let ks = u
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = phi(x);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value of the one-sample statistic
    assert!(ks < 1.63 / (n as f64).sqrt(), "KS {ks}");
}

#[test]
fn binary_thresholds() {
    let spec = ModelSpec::binary_roy();
    let t = roy(0.4, 0.6, 0.0);
    let cf = SetExpr::interval(0.1, 0.9).unwrap();
    let (lo, hi) = predict_binary(&spec, &[1.0], &[], &cf, &t).unwrap();
    assert_eq!((lo, hi), (phi(0.7), phi(0.7)));

    let t = roy(0.4, 0.6, 0.6);
    let point = SetExpr::interval(0.35, 0.35).unwrap();
    let (lo, hi) = predict_binary(&spec, &[0.0], &[], &point, &t).unwrap();
    assert_eq!(lo, hi);

    let loc = location(&spec, &t).unwrap();
    let h = |v: &[f64]| phi((0.7 - loc.g(v)) / loc.sigma);
    let (blo, bhi) = grid_range(&cf, h, 1000).unwrap();
    let (lo, hi) = predict_binary(&spec, &[1.0], &[], &cf, &t).unwrap();
    assert!((lo - blo).abs() < 1e-6 && (hi - bhi).abs() < 1e-6);
}

#[test]
fn ordered_thresholds_limits() {
    let spec = ModelSpec::ordered();
    let cf = SetExpr::interval(0.0, 1.0).unwrap();
    let t = roy(0.5, 0.5, 0.0).with_cutoffs(-1.0, 1.0);
    let o = predict_ordered(&spec, 0.0, &[], &cf, &ThetaPoint { mu: vec![0.0], ..t.clone() }).unwrap();
    assert_eq!(o.contain0(), o.capacity0());
    assert_eq!(o.contain6(), o.capacity6());
    assert!((o.contain0() - phi(-1.0)).abs() < 1e-15);
    assert!((o.contain6() - (1.0 - phi(1.0))).abs() < 1e-15);

    let t = roy(0.5, 0.5, 0.999).with_cutoffs(-1.0, 1.0);
    let o = predict_ordered(&spec, 0.0, &[], &cf, &t).unwrap();
    assert!(o.contain0() < 1e-6, "{}", o.contain0());
    assert!(o.capacity0() > 1.0 - 1e-6, "{}", o.capacity0());
}

fn mn_theta(mu: [f64; 3], rho: [f64; 3]) -> ThetaPoint {
    ThetaPoint::new(
        vec![mu[0], 0.0, mu[1], 0.0, mu[2], 0.0],
        rho.to_vec(),
        pis(&[(vec![0], 0.4), (vec![1], 0.6)]),
    )
}

fn argmax_at(theta: &ThetaPoint, eta: &[f64], s: f64) -> Vec<usize> {
    let lines = setcf::model::multinomial_lines(theta, 3, 0.0, eta).unwrap();
    let vals: Vec<f64> = lines.iter().map(|l| l.0 + l.1 * s).collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..3).filter(|&k| vals[k] == m).map(|k| k + 1).collect()
}

#[test]
fn multinomial_point_control_is_the_argmax() {
    let t = mn_theta([0.1, 0.3, -0.2], [0.5, -0.4, 0.2]);
    let v = [0.3, 0.6];
    let cf = SetExpr::point(&v).unwrap();
    let s = setcf::model::multinomial_index(&v);
    let mut rng = keyed_rng(13, &[]);
    for _ in 0..200 {
        let eta: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        assert_eq!(predict_multinomial(&eta, 0.0, 3, &cf, &t).unwrap(), argmax_at(&t, &eta, s));
    }
}

#[test]
fn multinomial_relabeling_symmetry() {
    let t = mn_theta([0.2, 0.2, 0.2], [0.3, 0.3, 0.3]);
    let cf = SetExpr::boxed(&[(0.2, 0.8), (0.2, 0.8)]).unwrap();
    let mut rng = keyed_rng(14, &[]);
    for _ in 0..200 {
        let eta: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let base = predict_multinomial(&eta, 0.0, 3, &cf, &t).unwrap();
        let swapped = [eta[1], eta[0], eta[2]];
        let mut relabeled: Vec<usize> = predict_multinomial(&swapped, 0.0, 3, &cf, &t)
            .unwrap()
            .into_iter()
            .map(|k| match k {
                1 => 2,
                2 => 1,
                k => k,
            })
            .collect();
        relabeled.sort_unstable();
        assert_eq!(base, relabeled);
    }
}

#[test]
fn multinomial_set_is_the_union_over_a_grid() {
    let t = mn_theta([0.1, 0.0, -0.1], [0.6, -0.5, 0.1]);
    let cf = control_set(&ModelSpec::multinomial(3).unwrap(), &Cell::new(vec![1.0], vec![], vec![1.0]), &t).unwrap();
    let pts = sample_grid(&cf, 100).unwrap();
    let mut rng = keyed_rng(15, &[]);
    for _ in 0..100 {
        let eta: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let mut union: Vec<usize> = pts
            .iter()
            .flat_map(|v| argmax_at(&t, &eta, setcf::model::multinomial_index(v)))
            .collect();
        union.sort_unstable();
        union.dedup();
        assert_eq!(predict_multinomial(&eta, 1.0, 3, &cf, &t).unwrap(), union);
    }
}

#[test]
fn additive_mean_prediction() {
    let spec = ModelSpec::roy_mean();
    let t = roy(0.4, 0.6, 0.5);
    let point = SetExpr::interval(0.3, 0.3).unwrap();
    let iv = predict_additive_mean(&spec, &[1.0], &[], &point, &t).unwrap();
    assert_eq!(iv.width(), 0.0);
    assert_eq!(iv.lo(), 0.7 + 0.5 * phi_inv(0.3));

    let t0 = roy(0.4, 0.6, 0.0);
    let cf = SetExpr::interval(0.1, 0.9).unwrap();
    let iv = predict_additive_mean(&spec, &[1.0], &[], &cf, &t0).unwrap();
    assert_eq!((iv.lo(), iv.hi()), (0.7, 0.7));

    let iv = predict_additive_mean(&spec, &[1.0], &[], &cf, &t).unwrap();
    let (lo, hi) = grid_range(&cf, |v| 0.5 * phi_inv(v[0]), 1000).unwrap();
    assert!((iv.width() - (hi - lo)).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exogeneity_collapses_thresholds(mu0 in -2.0f64..2.0, mu1 in -2.0f64..2.0, p in 0.0f64..1.0, d in 0u8..2) {
        let spec = ModelSpec::binary_roy();
        let t = ThetaPoint::new(vec![mu0, mu1], vec![0.0], pis(&[(vec![0], p)]));
        let cf = cf_binary_roy(f64::from(d), &[0.0], &[], &t).unwrap();
        let (lo, hi) = predict_binary(&spec, &[f64::from(d)], &[], &cf, &t).unwrap();
        prop_assert_eq!(lo, hi);
    }

    #[test]
    fn point_controls_give_complete_predictions(rho in -0.95f64..0.95, v in 0.001f64..0.999, mu in -2.0f64..2.0) {
        let spec = ModelSpec::ordered().with_observed_control();
        let t = ThetaPoint::new(vec![mu], vec![rho], PiTable::new()).with_cutoffs(-0.5, 0.7);
        let cell = Cell::new(vec![0.0], vec![], vec![v]);
        let cf = control_set(&spec, &cell, &t).unwrap();
        prop_assert!(cf.is_singleton());
        let o = predict_ordered(&spec, 0.0, &[], &cf, &t).unwrap();
        prop_assert_eq!(o.g_lo, o.g_hi);
        prop_assert_eq!(o.contain0(), o.capacity0());
    }
}
