use std::collections::BTreeMap;

use proptest::prelude::*;

use msfrail::classification::{classify, ConfusionCounts, CutoffVector, DecisionRule};
use msfrail::data::{Pair, TransitionPanel, TransitionRow};
use msfrail::diagnostics::{auc, deviance_residual};
use msfrail::likelihood::Likelihood;
use msfrail::model::{BaselineSpec, FrailtySpec, ModelSpec, ParameterVector};
use msfrail::prediction::{adjusted_row, competing_adjust, mat_mul, normalize_row};
use msfrail::quadrature::gauss_hermite;

fn table() -> impl Strategy<Value = [[u64; 3]; 3]> {
    prop::array::uniform3(prop::array::uniform3(0u64..500))
}

fn small_panel() -> impl Strategy<Value = TransitionPanel> {
    prop::collection::vec((1u32..=6, any::<bool>(), -2.0f64..2.0), 1..40).prop_map(|rows| {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, (n, y, x))| TransitionRow {
                account_id: format!("a{:03}", i / 3),
                time: n + (i % 3) as u32 * 7,
                y,
                covariates: vec![x],
            })
            .collect();
        TransitionPanel::from_rows(Pair(1, 1), vec!["x1".into()], rows).unwrap()
    })
}

proptest! {
    #[test]
    fn mcc_is_bounded_and_transpose_invariant(t in table()) {
        let mut a = ConfusionCounts::new(1);
        let mut b = ConfusionCounts::new(1);
        for k in 0..3 {
            for m in 0..3 {
                a.add(k as u8 + 1, m as u8 + 1, t[k][m]);
                b.add(m as u8 + 1, k as u8 + 1, t[k][m]);
            }
        }
        let v = a.mcc();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
        prop_assert!((v - b.mcc()).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_monotone_transforms(
        pts in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pts.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
        let moved: Vec<f64> = scores.iter().map(|s| (scale * s + shift).exp()).collect();
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - auc(&moved, &labels).unwrap()).abs() < 1e-12);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        prop_assert!((a + auc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plain_rule_ignores_common_cutoff_shift(
        q in prop::array::uniform3(0.0f64..1.0),
        c in prop::array::uniform3(0.0f64..0.5),
        k in 0.0f64..0.5,
    ) {
        let base = CutoffVector::new(1, c).unwrap();
        let moved = CutoffVector::new(1, c.map(|v| v + k)).unwrap();
        prop_assert_eq!(
            classify(q, &base, DecisionRule::Plain, None).unwrap(),
            classify(q, &moved, DecisionRule::Plain, None).unwrap()
        );
    }

    #[test]
    fn adjusted_rows_are_distributions(q in prop::array::uniform2(0.0f64..1.0), origin in 1u8..=3) {
        let dests: Vec<u8> = (1..=3).filter(|&d| d != 2).collect();
        let modeled: BTreeMap<u8, f64> = dests.into_iter().zip(q).collect();
        let row = adjusted_row(&modeled, origin).unwrap();
        prop_assert!((row.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(row.probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn products_of_stochastic_matrices_stay_stochastic(
        rows in prop::collection::vec(prop::array::uniform3(prop::array::uniform3(0.001f64..1.0)), 1..8),
    ) {
        let mut acc = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for m in rows {
            let p = [0, 1, 2].map(|h| normalize_row(competing_adjust(m[h]), h as u8 + 1).0);
            acc = mat_mul(&acc, &p);
        }
        for r in acc {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_sign_follows_excess(n in 1u32..500, o_frac in 0.0f64..=1.0, e_frac in 0.001f64..0.999) {
        let n = f64::from(n);
        let o = (o_frac * n).round();
        let e = e_frac * n;
        let d = deviance_residual(o, e, n);
        prop_assert!(d.is_finite());
        if o > e {
            prop_assert!(d > 0.0);
        } else if o < e {
            prop_assert!(d < 0.0);
        }
        prop_assert_eq!(deviance_residual(e, e, n), 0.0);
    }

    #[test]
    fn rules_integrate_low_moments(q in 1usize..=60) {
        let r = gauss_hermite(q).unwrap();
        let w: f64 = r.weights().iter().sum();
        prop_assert!((w - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        let m1: f64 = r.nodes().iter().zip(r.weights()).map(|(z, w)| z * w).sum();
        prop_assert!(m1.abs() < 1e-12);
        prop_assert!(r.nodes().windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn log_sigma_below_floor_is_flat(panel in small_panel(), b0 in -2.0f64..2.0, b1 in -2.0f64..2.0, ls in -30.0f64..-10.0) {
        let spec = ModelSpec::new(Pair(1, 1), FrailtySpec::intercept(), BaselineSpec::None, vec!["x1".into()]).unwrap();
        let lik = Likelihood::new(&spec, &panel).unwrap();
        let p = |l: f64| ParameterVector {
            alpha: BTreeMap::new(),
            beta_names: spec.beta_names(),
            beta: vec![b0, b1],
            log_sigma: vec![Some(l)],
        };
        let (v_floor, _) = lik.value_grad(&lik.design().pack(&p(-10.0)).unwrap()).unwrap();
        let (v, g) = lik.value_grad(&lik.design().pack(&p(ls)).unwrap()).unwrap();
        prop_assert!((v - v_floor).abs() < 1e-12);
        if ls < -10.0 {
            prop_assert_eq!(*g.last().unwrap(), 0.0);
        }
    }
}
