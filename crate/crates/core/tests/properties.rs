use proptest::prelude::*;
use riskreach_core::analysis::{build_choice_dataset, compensation_probability, ClusterRule};
use riskreach_core::estimation::{fit_cpt, nll, ChoiceDataset, FitConfig};
use riskreach_core::model::{
    blr_choice_prob, cpt_choice_prob, delta_utility, prelec_weight, softmax_choice, BlrParams, CptBounds, CptParams,
    HumanAction, PayoffSpec, Probability, RobotAction,
};
use riskreach_core::protocol::{
    classify_action, outcome, simulate_session, synthesize_force_trace, AgentSpec, Order, ProtocolConfig, TrialRecord,
};

fn params() -> impl Strategy<Value = CptParams> {
    let b = CptBounds::STANDARD;
    (b.lower[0]..=b.upper[0], b.lower[1]..=b.upper[1], b.lower[2]..=b.upper[2], b.lower[3]..=b.upper[3])
        .prop_map(|(a, be, c, l)| CptParams::from_array([a, be, c, l]))
}

fn prob() -> impl Strategy<Value = Probability> {
    (0.0f64..=1.0).prop_map(|p| Probability::new(p).unwrap())
}

fn order() -> impl Strategy<Value = Order> {
    prop_oneof![Just(Order::Ascending), Just(Order::Descending), Just(Order::RandomizedPerTrial)]
}

fn dataset() -> impl Strategy<Value = ChoiceDataset> {
    proptest::collection::vec((0u32..30, 0u32..30), 1..=9).prop_map(|counts| {
        let rows: Vec<(f64, u32, u32)> = counts
            .iter()
            .enumerate()
            .map(|(i, &(n1, n2))| ((i as f64 + 1.0) / 10.0, n1, n2.max(u32::from(n1 == 0))))
            .collect();
        ChoiceDataset::from_counts(&rows).unwrap()
    })
}

proptest! {
    #[test]
    fn prelec_is_monotone_and_bounded(a in 0.5f64..=3.0, b in 0.5f64..=5.0, p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let wl = prelec_weight(Probability::new(lo).unwrap(), a, b).get();
        let wh = prelec_weight(Probability::new(hi).unwrap(), a, b).get();
        prop_assert!((0.0..=1.0).contains(&wl) && (0.0..=1.0).contains(&wh));
        prop_assert!(wl <= wh);
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(u in proptest::collection::vec(-20.0f64..20.0, 1..6), shift in -50.0f64..50.0, lambda in 0.1f64..30.0) {
        let p = softmax_choice(&u, lambda).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = u.iter().map(|x| x + shift).collect();
        let q = softmax_choice(&shifted, lambda).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn utility_difference_decomposes(theta in params(), p in prob(), g in 0.1f64..5.0, v in 0.1f64..5.0) {
        let payoff = PayoffSpec::new(v, g, theta.cost).unwrap();
        let du = delta_utility(p, &theta, &payoff);
        let w = prelec_weight(p, theta.alpha, theta.beta).get();
        prop_assert!((du + theta.cost - (g + v) * w).abs() <= 1e-12);
    }

    #[test]
    fn choice_curves_increase_with_risk(theta in params(), b0 in -10.0f64..10.0, b1 in 0.01f64..20.0) {
        let payoff = PayoffSpec::normalized(theta.cost);
        let grid: Vec<Probability> = (0..=100).map(|i| Probability::new(i as f64 / 100.0).unwrap()).collect();
        let blr = BlrParams::new(b0, b1);
        for w in grid.windows(2) {
            prop_assert!(cpt_choice_prob(w[0], &theta, &payoff).get() <= cpt_choice_prob(w[1], &theta, &payoff).get());
            prop_assert!(blr_choice_prob(w[0], &blr).get() <= blr_choice_prob(w[1], &blr).get());
        }
    }

    #[test]
    fn nll_is_nonnegative(ds in dataset(), theta in params()) {
        prop_assert!(nll(&ds, &theta, &PayoffSpec::normalized(0.0)).unwrap() >= 0.0);
    }

    #[test]
    fn synthesized_traces_classify_back(action in prop_oneof![Just(HumanAction::Relax), Just(HumanAction::Compensate)], seed in any::<u64>()) {
        let cfg = ProtocolConfig::default();
        prop_assert_eq!(classify_action(&synthesize_force_trace(action, &cfg, seed), &cfg).unwrap(), action);
    }

    #[test]
    fn compensation_probability_ignores_trial_order(actions in proptest::collection::vec(any::<bool>(), 1..40), rotate in 0usize..40) {
        let trials: Vec<TrialRecord> = actions
            .iter()
            .map(|&ha2| {
                let h = if ha2 { HumanAction::Compensate } else { HumanAction::Relax };
                TrialRecord {
                    round: 0,
                    block: 0,
                    p_r: Probability::new(0.5).unwrap(),
                    robot_action: RobotAction::Assist,
                    human_action: h,
                    success: outcome(h, RobotAction::Assist),
                    chosen_at_ms: 0,
                    force_trace: None,
                }
            })
            .collect();
        let mut shuffled = trials.clone();
        shuffled.rotate_left(rotate % trials.len());
        shuffled.reverse();
        prop_assert_eq!(compensation_probability(&trials).unwrap(), compensation_probability(&shuffled).unwrap());
    }

    #[test]
    fn cluster_rule_is_pure(c in 0.0f64..5.0, p2 in proptest::collection::vec(0.0f64..=1.0, 0..10)) {
        let rule = ClusterRule::default();
        prop_assert_eq!(rule.classify(c, &p2), rule.classify(c, &p2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sessions_replay_and_conserve_counts(theta in params(), seed in any::<u64>(), agent_seed in any::<u64>(), ord in order()) {
        let cfg = ProtocolConfig::default().with_order(ord);
        let agent = AgentSpec::cpt(theta, agent_seed);
        let a = simulate_session(&agent, &cfg, seed, "P").unwrap();
        let b = simulate_session(&agent, &cfg, seed, "P").unwrap();
        prop_assert_eq!(a.to_jsonl(), b.to_jsonl());
        prop_assert_eq!(&a, &b);
        for (r, blk) in a.blocks() {
            let block = a.block_trials(r, blk);
            prop_assert!(block.len() >= 10);
            prop_assert_eq!(block.iter().filter(|t| t.success).count(), 10);
            prop_assert!(block.iter().all(|t| t.success == outcome(t.human_action, t.robot_action)));
        }
        let ds = build_choice_dataset(&a).unwrap();
        prop_assert_eq!(ds.total_trials(), a.trials.len() as u64);
        prop_assert_eq!(ds.pooled().total_trials(), a.trials.len() as u64);
    }

    #[test]
    fn fits_stay_inside_the_box(ds in dataset(), seed in any::<u64>()) {
        let config = FitConfig { starts: 4, seed, ..FitConfig::default() };
        let a = fit_cpt(&ds, &config).unwrap();
        prop_assert!(config.bounds.contains(&a.params));
        prop_assert!(a.local_optima.iter().all(|o| config.bounds.contains(&o.params)));
        let b = fit_cpt(&ds, &config).unwrap();
        prop_assert_eq!(a, b);
    }
}
