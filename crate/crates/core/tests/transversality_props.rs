use ifsdim::measures::fit_line;
use ifsdim::symbolic::InfiniteWord;
use ifsdim::systems::load_builtin;
use ifsdim::transversality::{
    audit_gtc, distortion_constant, kstar_select, mixed_jacobian_log_sup, pair_ratio, AuditConfig, DEFAULT_Z_SAMPLES,
};
use proptest::prelude::*;

fn word_starting(first: u8) -> impl Strategy<Value = InfiniteWord> {
    (
        proptest::collection::vec(1u8..=3, 0..4),
        proptest::collection::vec(1u8..=3, 1..4),
    )
        .prop_map(move |(mut pre, per)| {
            pre.insert(0, first);
            InfiniteWord::new(pre, per).unwrap()
        })
}

fn contraction_ratios() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..0.49, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn kstar_certificate_holds(rho in contraction_ratios(), a in word_starting(1), b in word_starting(2)) {
        let (rho_bar, _) = pair_ratio(&rho);
        prop_assume!(rho_bar < 1.0);
        let k = kstar_select(&rho, &a, &b, 200).unwrap();
        prop_assert!(k.lambda[k.k_star - 1] + k.tail < rho_bar);
        prop_assert!((k.rho_bar - rho_bar).abs() < 1e-15);
    }
}

#[test]
fn audit_is_scale_covariant() {
    let cfg = load_builtin("gtc_family").unwrap();
    let fam = cfg.family.unwrap();
    let config = AuditConfig {
        t0: vec![0.0, 0.0],
        delta: 0.5,
        pairs: vec![
            ("pre:|per:1".parse().unwrap(), "pre:|per:2".parse().unwrap()),
            ("pre:1|per:2".parse().unwrap(), "pre:2|per:1".parse().unwrap()),
        ],
        r_grid: vec![0.5, 0.3, 0.1, 0.03, 0.01, 0.003],
        n_mc: 20_000,
        seed: 4,
        z_samples: DEFAULT_Z_SAMPLES,
        psi_bound: 0.1,
    };
    let rep = audit_gtc(&fam, &config).unwrap();
    for c in &rep.cells {
        assert!(
            (c.ratio * c.z - c.measure).abs() <= 1e-12 * c.measure.max(1e-300) + 3.0 * c.stderr,
            "{c:?}"
        );
        assert!(c.measure >= 0.0 && c.measure <= rep.region_volume + 1e-12);
    }
}

#[test]
fn mixed_jacobian_growth_flattens_as_delta_shrinks() {
    let fam = load_builtin("nonlinear_triangular").unwrap().family.unwrap();
    let levels = [2usize, 4, 6, 8, 10, 12];
    let xs: Vec<f64> = levels.iter().map(|&n| n as f64).collect();
    let slope = |delta: f64| {
        let ys: Vec<f64> = levels
            .iter()
            .map(|&n| mixed_jacobian_log_sup(&fam, n, delta, 1000, 3).unwrap())
            .collect();
        fit_line(&xs, &ys).0
    };
    let slopes: Vec<f64> = [0.1, 0.01, 0.001].iter().map(|&d| slope(d)).collect();
    for s in &slopes {
        assert!(*s < 0.01, "{slopes:?}");
    }
    assert!(slopes[2] <= slopes[0] + 0.002, "{slopes:?}");
}

#[test]
fn distortion_rate_decreases() {
    let f = load_builtin("nonlinear_triangular").unwrap().spec;
    let rates: Vec<f64> = (1..=6)
        .map(|n| distortion_constant(&f, n, 21, 0.02, 1).unwrap().log_rate)
        .collect();
    assert!(rates.windows(2).all(|w| w[1] < w[0]), "{rates:?}");
    let affine = load_builtin("triangular_affine").unwrap().spec;
    assert_eq!(distortion_constant(&affine, 5, 11, 0.02, 1).unwrap().c_n, 1.0);
}
