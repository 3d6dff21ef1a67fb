use hle_core::lifetable::life_expectancy;
use hle_core::sullivan::{sullivan_hle, LifeTableSchedule, PrevalenceGroup, PrevalenceSchedule};
use hle_core::{standard_normal_cdf, Covariates, Gender, HealthMeasure, ProbitCoefficientSet, ProbitEquation};
use proptest::prelude::*;

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #[test]
    fn probit_outcomes_form_a_distribution(
        cuts in prop::collection::vec(-4.0f64..4.0, 1..5).prop_map(sorted),
        age_coeff in -0.1f64..0.1,
        gender_coeff in -1.0f64..1.0,
        age in 0u32..=99,
        female in any::<bool>(),
    ) {
        let eq = ProbitEquation::new(0, cuts.clone(), age_coeff, gender_coeff).unwrap();
        let g = if female { Gender::Female } else { Gender::Male };
        let p = eq.transition_distribution(&Covariates::new(age, g).unwrap());
        prop_assert_eq!(p.len(), cuts.len() + 1);
        prop_assert!(p.iter().all(|v| *v >= 0.0 && *v <= 1.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bundled_matrices_are_substochastic(age in 0u32..=99, female in any::<bool>(), hh in any::<bool>()) {
        let m = if hh { HealthMeasure::Hh } else { HealthMeasure::Sah };
        let g = if female { Gender::Female } else { Gender::Male };
        let t = ProbitCoefficientSet::bundled(m).build_transition_matrix(age, g).unwrap();
        for k in 0..t.states() {
            let d = t.death_probability(k);
            prop_assert!(d > 0.0 && d < 1.0);
        }
    }

    #[test]
    fn normal_cdf_symmetric_and_monotone(x in -40.0f64..40.0, dx in 0.0f64..1.0) {
        let a = standard_normal_cdf(x).unwrap();
        prop_assert!((a + standard_normal_cdf(-x).unwrap() - 1.0).abs() < 1e-15);
        prop_assert!(standard_normal_cdf(x + dx).unwrap() >= a);
    }

    #[test]
    fn life_expectancy_grows_with_survival(
        q in prop::collection::vec(0.001f64..0.3, 100),
        factor in 0.1f64..1.0,
        from in 0u32..60,
    ) {
        let curve = |scale: f64| {
            let mut s = 1.0;
            q.iter().map(|q| { s *= 1.0 - q * scale; s }).collect::<Vec<_>>()
        };
        let base = life_expectancy(&curve(1.0), 0, false).unwrap();
        let better = life_expectancy(&curve(factor), 0, false).unwrap();
        prop_assert!(better >= base - 1e-12);
        let later = life_expectancy(&curve(1.0), from, true).unwrap();
        prop_assert!(later >= 0.5 && later <= (100 - from) as f64 + 0.5);
    }

    #[test]
    fn sullivan_bounded_and_monotone(
        d in prop::collection::vec(0.0f64..1.0, 3),
        bump in 0.0f64..0.5,
    ) {
        let schedule = LifeTableSchedule::new([(60, 100.0, 20.0), (70, 80.0, 12.0), (80, 50.0, 5.0)]).unwrap();
        let prev = |d: &[f64]| PrevalenceSchedule::new(vec![
            PrevalenceGroup { age_from: 60, age_to: 70, ill_health_rate: d[0] },
            PrevalenceGroup { age_from: 70, age_to: 80, ill_health_rate: d[1] },
            PrevalenceGroup { age_from: 80, age_to: 120, ill_health_rate: d[2] },
        ]).unwrap();
        let h = sullivan_hle(&schedule, &prev(&d), 60).unwrap();
        prop_assert!((-1e-12..=20.0 + 1e-12).contains(&h));
        let worse: Vec<f64> = d.iter().map(|v| (v + bump).min(1.0)).collect();
        prop_assert!(sullivan_hle(&schedule, &prev(&worse), 60).unwrap() <= h + 1e-12);
    }
}
