use ifsdim::expr::{differentiate, parse_expr, BinaryOp, Expr, UnaryOp};
use proptest::prelude::*;

const DIM: usize = 3;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0u32..1000).prop_map(|k| Expr::Const(k as f64 / 100.0)),
        (1..=DIM).prop_map(Expr::Var),
    ]
}

fn unary_op() -> impl Strategy<Value = UnaryOp> {
    prop_oneof![
        Just(UnaryOp::Neg),
        Just(UnaryOp::Sin),
        Just(UnaryOp::Cos),
        Just(UnaryOp::Exp),
        Just(UnaryOp::Log),
        Just(UnaryOp::Sqrt),
    ]
}

fn binary_op() -> impl Strategy<Value = BinaryOp> {
    prop_oneof![
        Just(BinaryOp::Add),
        Just(BinaryOp::Sub),
        Just(BinaryOp::Mul),
        Just(BinaryOp::Div)
    ]
}

/// Trees of depth at most 6.
fn tree() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(6, 48, 2, |inner| {
        prop_oneof![
            (unary_op(), inner.clone()).prop_map(|(op, a)| Expr::Unary(op, Box::new(a))),
            (binary_op(), inner.clone(), inner.clone()).prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
            (inner, prop_oneof![Just(2.0), Just(3.0), Just(0.5), Just(-1.0)]).prop_map(|(a, e)| Expr::Pow(Box::new(a), e)),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.1f64..0.9, DIM)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn render_round_trip(e in tree()) {
        let text = e.to_string();
        let back = parse_expr(&text, DIM).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn derivative_matches_central_differences(e in tree(), x in point(), k in 1..=DIM) {
        let h = 1e-6;
        let mut lo = x.clone();
        let mut hi = x.clone();
        lo[k - 1] -= h;
        hi[k - 1] += h;
        let (Ok(f0), Ok(flo), Ok(fhi)) = (e.eval(&x), e.eval(&lo), e.eval(&hi)) else {
            return Ok(());
        };
        let d = differentiate(&e, k);
        let Ok(exact) = d.eval(&x) else { return Ok(()) };
        // skip points where finite differences are meaningless
        let fd = (fhi - flo) / (2.0 * h);
        prop_assume!(f0.abs() < 1e6 && fd.is_finite() && exact.is_finite() && exact.abs() < 1e6);
        let d2 = differentiate(&d, k);
        if let Ok(curv) = d2.eval(&x) {
            prop_assume!(curv.abs() < 1e4);
        }
        prop_assert!(
            (fd - exact).abs() <= 1e-5 * exact.abs().max(1.0),
            "{} at {:?}: fd {} vs {}", e, x, fd, exact
        );
    }

    #[test]
    fn parsing_is_total(s in "[x0-9+*/^().a-z -]{0,40}") {
        match parse_expr(&s, DIM) {
            Ok(_) => {}
            Err(e) => {
                let _ = e.to_string();
            }
        }
    }
}
