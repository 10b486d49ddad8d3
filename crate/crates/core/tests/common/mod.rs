//! Generators, independent oracles and the invariant suite shared by the
//! property tests and the acceptance target.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use neurocep::dataio::{assemble_sequence, synth_generate, synth_ruleset, SynthConfig};
use neurocep::ec::annotate_ground_truth;
use neurocep::inference::{at_least_k_prob, enumerate_oracle, filter_series, holds_at_filter, pattern_prob};
use neurocep::nn::{classify_stream, mlp_forward, Mlp};
use neurocep::training::build_training_points;
use neurocep::{
    parse_ruleset, pretty_print, ClassDistribution, ClassId, EventKey, EventStream, FluentId, PatternRule, Polarity,
    RuleSet,
};

/// Normalized distribution from positive weights.
pub fn dist_from(weights: &[f64]) -> ClassDistribution {
    let total: f64 = weights.iter().sum();
    let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    // push the rounding residue into the largest entry
    let residue = 1.0 - probs.iter().sum::<f64>();
    let imax = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
    probs[imax] = (probs[imax] + residue).clamp(0.0, 1.0);
    ClassDistribution::new(probs).unwrap()
}

pub fn arb_dist(classes: usize) -> impl Strategy<Value = ClassDistribution> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 6 => 0.0f64..1.0, 1 => Just(1.0)], classes)
        .prop_filter("some mass", |w| w.iter().sum::<f64>() > 1e-6)
        .prop_map(|w| dist_from(&w))
}

/// One-fluent ruleset with both rules on the given classes.
pub fn one_fluent(classes: usize, start: usize, end: usize, count: usize, window: usize) -> RuleSet {
    RuleSet {
        classes: (0..classes).map(|c| format!("c{c}")).collect(),
        fluents: vec!["f".into()],
        rules: vec![
            PatternRule {
                fluent: FluentId(0),
                polarity: Polarity::Start,
                trigger_class: ClassId(start),
                count,
                window,
            },
            PatternRule { fluent: FluentId(0), polarity: Polarity::End, trigger_class: ClassId(end), count, window },
        ],
    }
}

/// A random query instance: distributions, ruleset, key, time point.
#[derive(Debug, Clone)]
pub struct QueryInstance {
    pub dists: Vec<ClassDistribution>,
    pub rs: RuleSet,
    pub key: EventKey,
    pub t: usize,
}

pub fn arb_query_instance(
    max_len: usize,
    max_classes: usize,
    fixed_count: Option<usize>,
) -> impl Strategy<Value = QueryInstance> {
    (2..=max_classes, 2usize..=5)
        .prop_flat_map(move |(classes, window)| {
            let len_lo = window;
            let len_hi = max_len.max(window);
            (
                Just(classes),
                Just(window),
                len_lo..=len_hi,
                0..classes,
                0..classes,
                match fixed_count {
                    Some(k) => Just(k).boxed(),
                    None => (2..=window).boxed(),
                },
                any::<bool>(),
            )
        })
        .prop_flat_map(|(classes, window, len, start, end, count, is_start)| {
            (
                prop::collection::vec(arb_dist(classes), len),
                Just(one_fluent(classes, start, end, count, window)),
                Just(EventKey { kind: if is_start { Polarity::Start } else { Polarity::End }, fluent: FluentId(0) }),
                (window - 1)..len,
            )
        })
        .prop_map(|(dists, rs, key, t)| QueryInstance { dists, rs, key, t })
}

/// Direct enumeration of all `2^n` Bernoulli outcomes.
pub fn at_least_k_brute(ps: &[f64], k: usize) -> f64 {
    (0u32..1 << ps.len())
        .filter(|m| m.count_ones() as usize >= k)
        .map(|m| ps.iter().enumerate().map(|(i, p)| if m >> i & 1 == 1 { *p } else { 1.0 - p }).product::<f64>())
        .sum()
}

fn arb_name() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,8}"
}

/// Valid rulesets with distinct names.
pub fn arb_ruleset() -> impl Strategy<Value = RuleSet> {
    (prop::collection::hash_set(arb_name(), 1..10), prop::collection::hash_set(arb_name(), 1..5))
        .prop_flat_map(|(classes, fluents)| {
            let classes: Vec<String> = classes.into_iter().collect();
            let fluents: Vec<String> = fluents.into_iter().collect();
            let c = classes.len();
            let rule = (0..c, 2usize..=7).prop_flat_map(|(class, window)| (Just(class), 2..=window, Just(window)));
            let n = fluents.len();
            (Just(classes), Just(fluents), prop::collection::vec((rule.clone(), rule), n))
        })
        .prop_map(|(classes, fluents, pairs)| {
            let rules =
                pairs
                    .into_iter()
                    .enumerate()
                    .flat_map(|(f, (s, e))| {
                        [(Polarity::Start, s), (Polarity::End, e)].map(|(polarity, (class, count, window))| {
                            PatternRule { fluent: FluentId(f), polarity, trigger_class: ClassId(class), count, window }
                        })
                    })
                    .collect();
            RuleSet { classes, fluents, rules }
        })
}

/// One named invariant checked over `cases` generated inputs.
pub struct InvariantOutcome {
    pub name: &'static str,
    pub cases: u32,
    pub result: Result<(), String>,
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn check<S: Strategy>(
    name: &'static str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> InvariantOutcome {
    let result = runner(cases).run(&strategy, test).map_err(|e| e.to_string());
    InvariantOutcome { name, cases, result }
}

pub fn probability_bounds(cases: u32) -> InvariantOutcome {
    check("probability bounds", cases, (arb_query_instance(10, 4, None), 0.0f64..=1.0), |(q, h0)| {
        let p = pattern_prob(&q.dists, q.rs.rule(q.key).unwrap(), q.t).unwrap();
        prop_assert!((0.0..=1.0).contains(&p), "pattern {p}");
        let h = holds_at_filter(&q.dists, &q.rs, FluentId(0), h0).unwrap();
        prop_assert!(h.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let ps: Vec<f64> = q.dists.iter().map(|d| d.prob(ClassId(0))).collect();
        for k in 0..=ps.len() + 1 {
            let v = at_least_k_prob(&ps, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
        Ok(())
    })
}

pub fn dp_matches_enumeration(cases: u32) -> InvariantOutcome {
    let strat = prop::collection::vec(0.0f64..=1.0, 0..=12).prop_flat_map(|ps| {
        let n = ps.len();
        (Just(ps), 0..=n + 1)
    });
    check("at-least-k DP equals enumeration", cases, strat, |(ps, k)| {
        let dp = at_least_k_prob(&ps, k).unwrap();
        let brute = at_least_k_brute(&ps, k);
        prop_assert!((dp - brute).abs() < 1e-12, "{dp} vs {brute}");
        Ok(())
    })
}

pub fn oracle_equivalence(cases: u32) -> InvariantOutcome {
    check("closed form equals enumeration oracle", cases, arb_query_instance(8, 3, None), |q| {
        let rule = q.rs.rule(q.key).unwrap();
        let closed = pattern_prob(&q.dists, rule, q.t).unwrap();
        let exact = enumerate_oracle(&q.dists, q.key, q.t, &q.rs).unwrap();
        prop_assert!((closed - exact).abs() < 1e-9, "{closed} vs {exact}");
        Ok(())
    })
}

/// Moves mass `delta` onto class `c` at step `s`, taking it proportionally
/// from the other classes.
fn boost(d: &ClassDistribution, c: usize, delta: f64) -> ClassDistribution {
    let p = d.probs();
    let room = 1.0 - p[c];
    let delta = delta.min(room);
    let weights: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == c {
                v + delta
            } else if room > 0.0 {
                v * (1.0 - delta / room)
            } else {
                v
            }
        })
        .collect();
    dist_from(&weights)
}

pub fn monotonicity(cases: u32) -> InvariantOutcome {
    let strat = arb_query_instance(10, 4, None).prop_flat_map(|q| {
        let w = q.rs.rule(q.key).unwrap().window;
        let lo = q.t + 1 - w;
        let t = q.t;
        (Just(q), lo..=t, 0.0f64..1.0)
    });
    check("monotone in trigger-class probability", cases, strat, |(q, s, delta)| {
        let rule = q.rs.rule(q.key).unwrap();
        let before = pattern_prob(&q.dists, rule, q.t).unwrap();
        let mut boosted = q.dists.clone();
        boosted[s] = boost(&q.dists[s], rule.trigger_class.0, delta);
        let after = pattern_prob(&boosted, rule, q.t).unwrap();
        prop_assert!(after >= before - 1e-12, "{before} -> {after}");
        Ok(())
    })
}

pub fn softmax_normalization(cases: u32) -> InvariantOutcome {
    let strat = (1usize..8, 1usize..10, 2usize..12, any::<u64>())
        .prop_flat_map(|(d, h, c, seed)| (Just(Mlp::init(d, h, c, seed)), prop::collection::vec(-50.0f64..50.0, d)));
    check("softmax output is a distribution", cases, strat, |(mlp, x)| {
        let out = mlp_forward(&mlp, &x).unwrap();
        let sum: f64 = out.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(out.probs().iter().all(|p| (0.0..=1.0).contains(p)));
        Ok(())
    })
}

pub fn parser_round_trip(cases: u32) -> InvariantOutcome {
    check("parse . pretty_print = identity", cases, arb_ruleset(), |rs| {
        let text = pretty_print(&rs);
        let back = parse_ruleset(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &rs);
        prop_assert_eq!(pretty_print(&back), text);
        Ok(())
    })
}

pub fn annotation_is_deterministic_specialization(cases: u32) -> InvariantOutcome {
    let strat = (2usize..=4, 2usize..=5)
        .prop_flat_map(|(c, w)| (Just(c), Just(w), 2..=w, 0..c, 0..c, prop::collection::vec(0..c, w..=w + 10)));
    check("annotation equals one-hot inference", cases, strat, |(c, w, k, s, e, gt)| {
        let rs = one_fluent(c, s, e, k, w);
        let stream =
            EventStream::new(vec![vec![0.0]; gt.len()], Some(gt.iter().map(|&g| ClassId(g)).collect())).unwrap();
        let labels = annotate_ground_truth(&stream, &rs).unwrap();
        let dists: Vec<ClassDistribution> = gt.iter().map(|&g| ClassDistribution::one_hot(ClassId(g), c)).collect();
        for key in rs.event_keys() {
            for (t, at_t) in labels.iter().enumerate().skip(w - 1) {
                let p = pattern_prob(&dists, rs.rule(key).unwrap(), t).unwrap();
                let expected = if at_t.contains(&key) { 1.0 } else { 0.0 };
                prop_assert_eq!(p, expected);
            }
        }
        Ok(())
    })
}

pub fn filter_fixed_points(cases: u32) -> InvariantOutcome {
    let strat = (0.0f64..=1.0, 1e-3f64..=1.0, 1e-3f64..=1.0, 1usize..40);
    check("holdsAt filter fixed points", cases, strat, |(h0, i, e, n)| {
        let flat = filter_series(&vec![0.0; n], &vec![0.0; n], h0);
        prop_assert!(flat.values().iter().all(|v| *v == h0));
        let star = i / (i + e);
        let fixed = filter_series(&vec![i; n], &vec![e; n], star);
        prop_assert!(fixed.values().iter().all(|v| (v - star).abs() < 1e-12));
        let half = filter_series(&vec![0.5; n], &vec![0.5; n], 0.5);
        prop_assert!(half.values().iter().all(|v| *v == 0.5));
        Ok(())
    })
}

pub fn determinism_under_seed(cases: u32) -> InvariantOutcome {
    let data = synth_generate(&SynthConfig { per_class: 3, ..SynthConfig::default() }).unwrap();
    let strat = (any::<u64>(), 2usize..=5, 1usize..60, 0.25f64..4.0);
    check("determinism under seed", cases, strat, move |(seed, w, budget, ratio)| {
        let rs = synth_ruleset(10, 5, w);
        let a = assemble_sequence(&data, &[1, 2, 3], seed, &rs).unwrap();
        let b = assemble_sequence(&data, &[1, 2, 3], seed, &rs).unwrap();
        prop_assert_eq!(&a, &b);
        let pa = build_training_points(&a, &rs, budget, ratio, seed).unwrap();
        let pb = build_training_points(&b, &rs, budget, ratio, seed).unwrap();
        prop_assert_eq!(pa, pb);
        let dists = classify_stream(&Mlp::init(16, 4, 10, seed), &a).unwrap();
        let h1 = holds_at_filter(&dists, &rs, FluentId(0), 0.0).unwrap();
        let h2 = holds_at_filter(&dists, &rs, FluentId(0), 0.0).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(h1.values()), bits(h2.values()));
        Ok(())
    })
}

/// Every invariant of the suite at `cases` generated inputs each.
pub fn invariant_suite(cases: u32) -> Vec<InvariantOutcome> {
    vec![
        probability_bounds(cases),
        dp_matches_enumeration(cases),
        oracle_equivalence(cases),
        monotonicity(cases),
        softmax_normalization(cases),
        parser_round_trip(cases),
        annotation_is_deterministic_specialization(cases),
        filter_fixed_points(cases),
        determinism_under_seed(cases),
    ]
}
