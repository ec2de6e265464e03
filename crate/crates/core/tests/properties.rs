//! Property-based tests over the core simulation, learning operators, and
//! file round-trips.

use fcm_core::{
    activate, crossover_pair_at, fitness_of, load_longitudinal, mutate, normalize,
    read_weight_matrix, simulate_fcm, trajectory_error, write_dataset, write_weight_matrix,
    ActivationSpec, ConceptDef, ConceptSchema, ConceptVector, LongitudinalDataset, Participant,
    RawDataset, SimulationSpec, Trajectory, WeightMatrix,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A valid FCM: (initial state, flat weights, n).
fn arb_system() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=4).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0..=1.0f64, n),
            prop::collection::vec(-1.0..=1.0f64, n * n),
        )
    })
}

fn arb_activation() -> impl Strategy<Value = ActivationSpec> {
    prop_oneof![
        Just(ActivationSpec::Clip),
        (0.25..=8.0f64).prop_map(|steepness| ActivationSpec::sigmoid(steepness).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn activation_is_bounded_and_monotone(
        x1 in -60.0..=60.0f64,
        x2 in -60.0..=60.0f64,
        act in arb_activation(),
    ) {
        let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
        let a = activate(lo, &act);
        let b = activate(hi, &act);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!(a <= b, "activation must be nondecreasing: f({lo})={a} > f({hi})={b}");
    }

    #[test]
    fn simulated_trajectories_stay_in_unit_range(
        (initial, weights) in arb_system(),
        act in arb_activation(),
        steps in 1usize..=6,
    ) {
        let n = initial.len();
        let initial = ConceptVector::new(initial).unwrap();
        let w = WeightMatrix::new(n, weights).unwrap();
        let run = simulate_fcm(&initial, &w, &act, &SimulationSpec::fixed_steps(steps)).unwrap();
        prop_assert_eq!(run.trajectory.len(), steps + 1, "no early stop with an empty output set");
        prop_assert_eq!(run.trajectory.step(0), &initial);
        for step in run.trajectory.steps() {
            for &v in step.values() {
                prop_assert!((0.0..=1.0).contains(&v), "state {v} escaped [0,1]");
            }
        }
        let again = simulate_fcm(&initial, &w, &act, &SimulationSpec::fixed_steps(steps)).unwrap();
        prop_assert_eq!(run.trajectory, again.trajectory, "simulation must be deterministic");
    }

    #[test]
    fn crossover_swaps_exactly_the_suffix(
        (_, a_flat) in arb_system(),
        b_seed in any::<u32>(),
        point_frac in 0.0..1.0f64,
    ) {
        let cells = a_flat.len();
        let n = (cells as f64).sqrt() as usize;
        // An arbitrary but reproducible partner of the same size.
        let b_flat: Vec<f64> = (0..cells)
            .map(|i| (((i as f64 + 1.3) * (b_seed as f64 + 0.7)).sin()).clamp(-1.0, 1.0))
            .collect();
        let a = WeightMatrix::new(n, a_flat.clone()).unwrap();
        let b = WeightMatrix::new(n, b_flat.clone()).unwrap();
        let point = ((point_frac * cells as f64) as usize).min(cells - 1);
        let (a2, b2) = crossover_pair_at(&a, &b, point).unwrap();
        prop_assert_eq!(&a2.as_flat()[..point], &a_flat[..point]);
        prop_assert_eq!(&a2.as_flat()[point..], &b_flat[point..]);
        prop_assert_eq!(&b2.as_flat()[..point], &b_flat[..point]);
        prop_assert_eq!(&b2.as_flat()[point..], &a_flat[point..]);
    }

    #[test]
    fn mutation_respects_count_grid_and_untouched_cells(
        (_, flat) in arb_system(),
        count_frac in 0.0..=1.0f64,
        seed in any::<u64>(),
    ) {
        let cells = flat.len();
        let n = (cells as f64).sqrt() as usize;
        let count = (count_frac * cells as f64) as usize;
        let w = WeightMatrix::new(n, flat).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mutated = mutate(&w, count, &mut rng).unwrap();
        let changed = (0..cells)
            .filter(|&c| w.as_flat()[c] != mutated.as_flat()[c])
            .count();
        prop_assert!(changed <= count, "{changed} cells changed, allowed {count}");
        for c in 0..cells {
            let v = mutated.as_flat()[c];
            prop_assert!((-1.0..=1.0).contains(&v));
            if v != w.as_flat()[c] {
                let ticks = (v / 0.01).round();
                prop_assert!(ticks.abs() <= 100.0 && ticks * 0.01 == v,
                    "rewritten cell {c} = {v} is off the 0.01 grid");
            }
        }
    }

    #[test]
    fn fitness_is_monotone_into_unit_interval(e1 in 0.0..=1000.0f64, e2 in 0.0..=1000.0f64) {
        let f1 = fitness_of(e1);
        let f2 = fitness_of(e2);
        prop_assert!(f1 > 0.0 && f1 <= 1.0);
        if e1 < e2 {
            prop_assert!(f1 > f2, "lower error must mean strictly higher fitness");
        }
        if e1 == e2 {
            prop_assert_eq!(f1, f2);
        }
    }

    #[test]
    fn trajectory_error_separates_identity_from_perturbation(
        (initial, weights) in arb_system(),
        steps in 1usize..=4,
        wave_frac in 0.0..1.0f64,
        concept_frac in 0.0..1.0f64,
    ) {
        let n = initial.len();
        let initial = ConceptVector::new(initial).unwrap();
        let w = WeightMatrix::new(n, weights).unwrap();
        let act = ActivationSpec::default();
        let run = simulate_fcm(&initial, &w, &act, &SimulationSpec::fixed_steps(steps)).unwrap();
        let desired: Vec<ConceptVector> = run.trajectory.steps()[1..].to_vec();
        prop_assert_eq!(trajectory_error(&run.trajectory, &desired).unwrap(), 0.0);

        // Shift one target value by exactly 0.25: the error must be 0.25.
        let s = ((wave_frac * steps as f64) as usize).min(steps - 1);
        let m = ((concept_frac * n as f64) as usize).min(n - 1);
        let mut perturbed = desired.clone();
        let mut values = perturbed[s].values().to_vec();
        values[m] = if values[m] <= 0.5 { values[m] + 0.25 } else { values[m] - 0.25 };
        perturbed[s] = ConceptVector::new(values).unwrap();
        let err = trajectory_error(&run.trajectory, &perturbed).unwrap();
        prop_assert!((err - 0.25).abs() < 1e-12, "single 0.25 shift gave error {err}");
    }

    #[test]
    fn weight_matrix_files_round_trip(
        (_, flat) in arb_system(),
    ) {
        let cells = flat.len();
        let n = (cells as f64).sqrt() as usize;
        let w = WeightMatrix::new(n, flat).unwrap();
        let labels: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        write_weight_matrix(&path, &w, &labels).unwrap();
        let (back, back_labels) = read_weight_matrix(&path).unwrap();
        prop_assert_eq!(back, w, "matrix files must round-trip bit-exactly");
        prop_assert_eq!(back_labels, labels);
    }

    #[test]
    fn datasets_round_trip_through_long_form_csv(
        values in prop::collection::vec(0.0..=1.0f64, 12),
    ) {
        // 2 participants x 3 waves x 2 concepts from the generated values.
        let mut it = values.into_iter();
        let mut wave = || {
            ConceptVector::new(vec![it.next().unwrap(), it.next().unwrap()]).unwrap()
        };
        let participants = vec![
            Participant::new("px", vec![wave(), wave(), wave()]).unwrap(),
            Participant::new("py", vec![wave(), wave(), wave()]).unwrap(),
        ];
        let data = LongitudinalDataset::new(
            vec!["c0".to_string(), "c1".to_string()],
            participants,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&path, &data).unwrap();
        let loaded = load_longitudinal(&path).unwrap();
        prop_assert!(loaded.dropped.is_empty());
        prop_assert_eq!(&loaded.dataset, &data);
        prop_assert_eq!(loaded.dataset.digest(), data.digest());
    }

    #[test]
    fn normalization_maps_ranges_onto_the_unit_interval(
        fracs in prop::collection::vec(0.0..=1.0f64, 8),
        lo in -50.0..=50.0f64,
        span in 0.5..=100.0f64,
    ) {
        // One concept on [lo, lo+span], one on [0, 1]; raw values placed at
        // known fractions of each range.
        let schema = ConceptSchema {
            concepts: vec![
                ConceptDef { id: 0, label: "wide".into(), domain: None, raw_min: lo, raw_max: lo + span },
                ConceptDef { id: 1, label: "unit".into(), domain: None, raw_min: 0.0, raw_max: 1.0 },
            ],
        };
        let mut it = fracs.iter();
        let mut row = || {
            let f0 = *it.next().unwrap();
            let f1 = *it.next().unwrap();
            vec![lo + f0 * span, f1]
        };
        let raw = RawDataset {
            concept_count: 2,
            participants: vec![
                ("a".to_string(), vec![row(), row()]),
                ("b".to_string(), vec![row(), row()]),
            ],
            dropped: vec![],
        };
        let expected: Vec<Vec<Vec<f64>>> = raw
            .participants
            .iter()
            .map(|(_, waves)| waves.clone())
            .collect();
        let data = normalize(&raw, &schema).unwrap();
        for (p, waves) in data.participants().iter().zip(&expected) {
            for (wave, raw_wave) in p.waves().iter().zip(waves) {
                for (c, (&v, &rv)) in wave.values().iter().zip(raw_wave).enumerate() {
                    prop_assert!((0.0..=1.0).contains(&v));
                    let def = &schema.concepts[c];
                    let back = def.raw_min + v * (def.raw_max - def.raw_min);
                    prop_assert!((back - rv).abs() < 1e-9 * (1.0 + rv.abs()),
                        "normalize must be the exact min-max map");
                }
            }
        }
    }

    #[test]
    fn trajectory_slices_are_consistent(
        (initial, weights) in arb_system(),
        steps in 1usize..=5,
    ) {
        let n = initial.len();
        let initial = ConceptVector::new(initial).unwrap();
        let w = WeightMatrix::new(n, weights).unwrap();
        let run = simulate_fcm(
            &initial,
            &w,
            &ActivationSpec::Clip,
            &SimulationSpec::fixed_steps(steps),
        )
        .unwrap();
        let t = &run.trajectory;
        prop_assert_eq!(t.concept_count(), n);
        prop_assert_eq!(t.last(), t.step(t.len() - 1));
        let rebuilt = Trajectory::new(t.steps().to_vec()).unwrap();
        prop_assert_eq!(&rebuilt, t);
    }
}
