use gtr_core::effects::{order_effect_deltas, qq_value, replicability_report};
use gtr_core::{
    outcome_probabilities, pair_scenario, sequence_distribution, Answer, BreakDensity, MeasurementAxis, PairDensities,
    Scenario, ScenarioGeometry, SequenceSpec, UnitVector3,
};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = UnitVector3> {
    (0.0..=std::f64::consts::PI, 0.0..std::f64::consts::TAU).prop_map(|(p, a)| UnitVector3::from_spherical(p, a))
}

fn geometry() -> impl Strategy<Value = ScenarioGeometry> {
    (unit(), unit(), unit())
        .prop_map(|(s, a, b)| ScenarioGeometry::from_vectors(&s, &MeasurementAxis::new(a), &MeasurementAxis::new(b)))
}

fn density() -> impl Strategy<Value = BreakDensity> {
    prop_oneof![
        Just(BreakDensity::Uniform),
        (-0.95..0.95f64, 0.01..1.0f64)
            .prop_map(|(c, h)| { BreakDensity::locally_uniform(c, h.min(1.0 - c.abs()).max(1e-3)).unwrap() }),
        prop::collection::vec((0.0..1.0f64, 0.01..1.0f64), 1..6).prop_map(|cells| {
            let mut inner: Vec<f64> = cells[1..].iter().map(|(x, _)| 2.0 * x - 1.0).collect();
            inner.sort_by(f64::total_cmp);
            inner.dedup();
            inner.retain(|x| *x > -1.0);
            let mut bp = vec![-1.0];
            bp.extend(inner);
            bp.push(1.0);
            let raw: Vec<f64> = cells.iter().take(bp.len() - 1).map(|(_, w)| *w).collect();
            let total: f64 = raw.iter().sum();
            let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let residue = 1.0 - w.iter().sum::<f64>();
            w[0] += residue;
            BreakDensity::piecewise(bp, w).unwrap()
        }),
    ]
}

fn densities() -> impl Strategy<Value = PairDensities> {
    prop::collection::vec(density(), 6).prop_map(|d| PairDensities {
        a_initial: d[0].clone(),
        b_initial: d[1].clone(),
        b_after_a_yes: d[2].clone(),
        b_after_a_no: d[3].clone(),
        a_after_b_yes: d[4].clone(),
        a_after_b_no: d[5].clone(),
    })
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (geometry(), densities()).prop_map(|(g, d)| pair_scenario(&g, &d, "A", "B").unwrap())
}

fn seq(s: &str) -> SequenceSpec {
    s.parse().unwrap()
}

const SEQUENCES: [&str; 8] = ["A", "A,B", "B,A", "A,A", "A,B,A", "B,A,B", "A,B,B,A", "B,B,A,A"];

proptest! {
    #[test]
    fn tables_are_normalized(s in scenario()) {
        for text in SEQUENCES {
            let t = sequence_distribution(&s, &seq(text)).unwrap();
            let total: f64 = t.probabilities().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-10, "{text}: {total}");
            prop_assert!(t.probabilities().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn summing_the_second_step_recovers_the_first(s in scenario()) {
        for (first, pair) in [("A", "A,B"), ("B", "B,A")] {
            let (p_yes, p_no) = outcome_probabilities(s.initial_state(), s.measurement(first).unwrap(), "initial").unwrap();
            let t = sequence_distribution(&s, &seq(pair)).unwrap();
            let p = t.probabilities();
            // each entry is a separately rounded product, so the sum is exact to within rounding
            prop_assert!((p[0] + p[1] - p_yes).abs() <= 2.0 * f64::EPSILON * p_yes);
            prop_assert!((p[2] + p[3] - p_no).abs() <= 2.0 * f64::EPSILON * p_no);
        }
    }

    #[test]
    fn repeated_measurements_never_flip(s in scenario()) {
        for x in ["A,A", "B,B"] {
            let p = sequence_distribution(&s, &seq(x)).unwrap().probabilities().to_vec();
            prop_assert_eq!(p[1], 0.0);
            prop_assert_eq!(p[2], 0.0);
        }
        let report = replicability_report(&s, "A", "B").unwrap();
        prop_assert!(report.adjacent.values().all(|r| *r));
    }

    #[test]
    fn uniform_pairs_follow_half_angle_products(g in geometry()) {
        let s = pair_scenario(&g, &PairDensities::uniform(), "A", "B").unwrap();
        let t = sequence_distribution(&s, &seq("A,B")).unwrap();
        let half = |cos: f64| ((1.0 + cos) / 2.0, (1.0 - cos) / 2.0);
        let (ay, an) = half(g.cos_theta_a);
        let (by, bn) = half(g.cos_theta);
        let want = [ay * by, ay * bn, an * bn, an * by];
        for (got, want) in t.probabilities().iter().zip(want) {
            prop_assert!((got - want).abs() <= 1e-12);
        }
        let ba = sequence_distribution(&s, &seq("B,A")).unwrap();
        prop_assert!(qq_value(&t, &ba).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn qq_is_the_sum_of_diagonal_deltas(s in scenario()) {
        let ab = sequence_distribution(&s, &seq("A,B")).unwrap();
        let ba = sequence_distribution(&s, &seq("B,A")).unwrap();
        let d = order_effect_deltas(&ab, &ba).unwrap();
        prop_assert_eq!(qq_value(&ab, &ba).unwrap(), d.get(Answer::Yes, Answer::Yes) + d.get(Answer::No, Answer::No));
    }

    #[test]
    fn separated_replication_needs_mass_on_the_returning_side(
        g in geometry(),
        center in -0.9..0.9f64,
        half_width in 0.01..0.9f64,
    ) {
        // branch A:yes,B:yes,A:yes replicates iff rho_A(.|B:yes) has all its mass below cos_theta
        let half_width = half_width.min(1.0 - center.abs());
        let a_after_b_yes = BreakDensity::locally_uniform(center, half_width).unwrap();
        let densities = PairDensities { a_after_b_yes, ..PairDensities::uniform() };
        let s = pair_scenario(&g, &densities, "A", "B").unwrap();
        let report = replicability_report(&s, "A", "B").unwrap();
        let entry = &report.separated["A:yes,B:yes,A:yes"];
        if let Some(conditional) = entry.conditional {
            let below = center + half_width <= g.cos_theta;
            prop_assert_eq!(conditional == 1.0, below, "conditional {}", conditional);
        }
    }
}

#[test]
fn globally_uniform_values() {
    // globally uniform density: p = (1 + cos)/2
    let g = ScenarioGeometry::new(0.6, 0.0, 0.5).unwrap();
    let s = pair_scenario(&g, &PairDensities::uniform(), "A", "B").unwrap();
    let (p_yes, p_no) = outcome_probabilities(s.initial_state(), s.measurement("A").unwrap(), "initial").unwrap();
    assert!((p_yes - 0.8).abs() < 1e-15 && (p_no - 0.2).abs() < 1e-15);
    let t = sequence_distribution(&s, &seq("A,B")).unwrap();
    assert!((t.get(&[Answer::Yes, Answer::Yes]).unwrap() - 0.6).abs() < 1e-15);
}
