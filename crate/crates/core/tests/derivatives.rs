use gje_core::genfun::{DerivSpec, DerivativeMode, GeneratingFunction, Var};
use proptest::prelude::*;

fn specs(n: usize, max_order: usize) -> Vec<DerivSpec> {
    let vars: Vec<Var> = (0..2 * n + 1).map(|k| Var::from_flat(k, n)).collect();
    let mut out = Vec::new();
    fn rec(vars: &[Var], start: usize, cur: &mut Vec<Var>, left: usize, out: &mut Vec<DerivSpec>) {
        if !cur.is_empty() {
            out.push(DerivSpec::new(cur));
        }
        if left == 0 {
            return;
        }
        for k in start..vars.len() {
            cur.push(vars[k]);
            rec(vars, k, cur, left - 1, out);
            cur.pop();
        }
    }
    rec(&vars, 0, &mut Vec::new(), max_order, &mut out);
    out
}

fn families() -> Vec<GeneratingFunction> {
    vec![
        GeneratingFunction::builtin("bilinear", &[]).unwrap(),
        GeneratingFunction::builtin("quad-cost", &[]).unwrap(),
        GeneratingFunction::builtin("log-cost", &[]).unwrap(),
        GeneratingFunction::builtin("sqrt-cost", &[]).unwrap(),
        GeneratingFunction::builtin("perturbed-bilinear", &[0.1]).unwrap(),
    ]
}

#[test]
fn spec_enumeration_covers_all_multisets() {
    // multisets of size 1..=4 drawn from 5 variables
    assert_eq!(specs(2, 4).len(), 125);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn finite_differences_match_closed_forms(tx in 0.1..0.9f64, ty in 0.1..0.9f64, sx in 0.1..0.9f64,
                                             sy in 0.1..0.9f64, tz in 0.3..0.7f64) {
        for gf in families() {
            let dom = gf.domain().clone();
            let lerp = |lo: f64, hi: f64, t: f64| lo + t * (hi - lo);
            let x = [lerp(dom.x_lo[0], dom.x_hi[0], tx), lerp(dom.x_lo[1], dom.x_hi[1], ty)];
            let y = [lerp(dom.y_lo[0], dom.y_hi[0], sx), lerp(dom.y_lo[1], dom.y_hi[1], sy)];
            let (zlo, zhi) = gf.z_interval(&x, &y);
            let z = lerp(zlo, zhi, tz);
            let fd = gf.clone().with_mode(DerivativeMode::FiniteDifference);
            for spec in specs(2, 4) {
                let exact = gf.partial(&x, &y, z, &spec).unwrap();
                let approx = fd.partial(&x, &y, z, &spec).unwrap();
                let err = (approx - exact).abs() / exact.abs().max(1.0);
                prop_assert!(err < 1e-5, "{} {:?}: fd {approx} vs {exact}", gf.name(), spec.vars());
            }
        }
    }

    #[test]
    fn mixed_partials_commute(tx in -0.9..0.9f64, ty in -0.9..0.9f64, sx in 1.6..3.4f64, sy in -0.9..0.9f64) {
        for gf in families() {
            let (x, y) = ([tx, ty], [sx.min(gf.domain().y_hi[0] - 0.1), sy]);
            let a = gf.partial(&x, &y, 0.3, &DerivSpec::new(&[Var::X(0), Var::Y(1), Var::X(1), Var::X(0)])).unwrap();
            let b = gf.partial(&x, &y, 0.3, &DerivSpec::new(&[Var::X(1), Var::X(0), Var::X(0), Var::Y(1)])).unwrap();
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
        }
    }
}
