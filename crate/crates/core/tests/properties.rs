//! Property tests for the metric, configurations, trajectories and coupling.

use bdsim::config_space::{
    compactness_statistic, euclidean_matching_distance, exp_weight, optimal_matching, psi_functional,
};
use bdsim::coupling::simulate_coupled;
use bdsim::io::{read_trajectory_jsonl, write_trajectory_jsonl};
use bdsim::simulate::CapKind;
use bdsim::{dist, simulate, Caps, Configuration, EventKind, Kernel, Point, RateModel, RngStreamKey, Status};
use proptest::prelude::*;

fn points(n: std::ops::RangeInclusive<usize>, d: usize, side: f64) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-side..side, d), n)
}

fn config(raw: &[Vec<f64>], d: usize) -> Option<Configuration> {
    let pts = raw.iter().map(|p| Point::new(p.clone()).unwrap()).collect();
    Configuration::from_points(d, pts).ok()
}

/// Exhaustive minimum of `Σ_i |a_i - b_σ(i)|²` with the permutation that
/// attains it.
fn brute_force(a: &Configuration, b: &Configuration) -> (f64, Vec<usize>) {
    fn rec(k: usize, p: &mut Vec<usize>, a: &Configuration, b: &Configuration, best: &mut (f64, Vec<usize>)) {
        if k == p.len() {
            let s: f64 = (0..p.len())
                .map(|i| a.particles()[i].position.distance_squared(&b.particles()[p[i]].position))
                .sum();
            if s < best.0 {
                *best = (s, p.clone());
            }
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            rec(k + 1, p, a, b, best);
            p.swap(k, i);
        }
    }
    let mut p: Vec<usize> = (0..a.len()).collect();
    let mut best = (f64::INFINITY, p.clone());
    rec(0, &mut p, a, b, &mut best);
    best
}

fn contact_pairwise(lambda: f64, m0: f64, strength: f64) -> RateModel {
    RateModel::contact(lambda, Kernel::UniformBall { radius: 1.0 })
        .unwrap()
        .plus(&RateModel::pairwise_death(m0, strength, 0.8).unwrap())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn assignment_matches_permutations(
        (a, b, d) in (1usize..=7, 1usize..=3)
            .prop_flat_map(|(n, d)| (points(n..=n, d, 1.0), points(n..=n, d, 1.0), Just(d)))
    ) {
        let (Some(a), Some(b)) = (config(&a, d), config(&b, d)) else { return Ok(()); };
        let (best, _) = brute_force(&a, &b);
        prop_assert_eq!(euclidean_matching_distance(&a, &b).unwrap(), best.sqrt());
    }

    #[test]
    fn dist_is_a_metric(n in 1usize..=8, d in 1usize..=3,
                        a in points(8..=8, 3, 0.5), b in points(8..=8, 3, 0.5), c in points(8..=8, 3, 0.5)) {
        let cut = |v: &Vec<Vec<f64>>| v[..n].iter().map(|p| p[..d].to_vec()).collect::<Vec<_>>();
        let (Some(a), Some(b), Some(c)) = (config(&cut(&a), d), config(&cut(&b), d), config(&cut(&c), d)) else {
            return Ok(());
        };
        let ab = dist(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - dist(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(dist(&a, &a).unwrap(), 0.0);
        prop_assert!(ab > 0.0 || a.same_points(&b));
        prop_assert!(dist(&a, &c).unwrap() <= ab + dist(&b, &c).unwrap() + 1e-12);
    }

    #[test]
    fn dist_is_one_across_cardinalities(a in points(1..=5, 2, 1.0), b in points(6..=8, 2, 1.0)) {
        let (Some(a), Some(b)) = (config(&a, 2), config(&b, 2)) else { return Ok(()); };
        prop_assert_eq!(dist(&a, &b).unwrap(), 1.0);
    }

    /// Adding or removing a common point leaves `dist` unchanged whenever
    /// the exhaustive optimum pairs that point with itself.
    #[test]
    fn common_point_invariance(a in points(1..=5, 2, 0.3), shift in prop::collection::vec(-0.05f64..0.05, 10),
                               x in prop::collection::vec(-3.0f64..3.0, 2)) {
        let Some(za) = config(&a, 2) else { return Ok(()); };
        let b: Vec<Vec<f64>> = a.iter().enumerate().map(|(i, p)| vec![p[0] + shift[2 * i], p[1] + shift[2 * i + 1]]).collect();
        let Some(zb) = config(&b, 2) else { return Ok(()); };
        let xp = Point::new(x).unwrap();
        let (Ok(ax), Ok(bx)) = (za.with_point(&xp), zb.with_point(&xp)) else { return Ok(()); };
        let (_, perm) = brute_force(&ax, &bx);
        let ia = ax.particles().iter().position(|p| p.position == xp).unwrap();
        let ib = bx.particles().iter().position(|p| p.position == xp).unwrap();
        prop_assume!(perm[ia] == ib);
        let base = dist(&za, &zb).unwrap();
        prop_assert!((dist(&ax, &bx).unwrap() - base).abs() <= 1e-12);
        let ia_idx = ax.particles()[ia].index;
        let ib_idx = bx.particles()[ib].index;
        let back = dist(&ax.without(ia_idx).unwrap(), &bx.without(ib_idx).unwrap()).unwrap();
        prop_assert!((back - base).abs() <= 1e-12);
    }

    #[test]
    fn matching_is_a_permutation(a in points(1..=8, 2, 1.0), b in points(8..=8, 2, 1.0)) {
        let n = a.len();
        let (Some(za), Some(zb)) = (config(&a, 2), config(&b[..n], 2)) else { return Ok(()); };
        let m = optimal_matching(&za, &zb).unwrap();
        let mut rows: Vec<usize> = m.pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
        rows.sort_unstable();
        cols.sort_unstable();
        prop_assert_eq!(rows, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(cols, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn psi_ignores_storage_order(a in points(0..=7, 2, 3.0), rot in 0usize..7) {
        let Some(z) = config(&a, 2) else { return Ok(()); };
        let mut labelled: Vec<(i64, Point)> = z.iter().map(|p| (p.index, p.position.clone())).collect();
        if !labelled.is_empty() {
            let k = rot % labelled.len();
            labelled.rotate_left(k);
            labelled.reverse();
        }
        let shuffled = Configuration::with_indices(2, labelled).unwrap();
        let (p1, p2) = (psi_functional(&z, exp_weight), psi_functional(&shuffled, exp_weight));
        prop_assert!((p1 - p2).abs() <= 1e-12 * p1.abs().max(1.0));
    }

    #[test]
    fn compactness_grows_with_radius(a in points(0..=8, 2, 6.0), n in 1u32..6) {
        let Some(z) = config(&a, 2) else { return Ok(()); };
        prop_assert!(compactness_statistic(&z, n + 1) >= compactness_statistic(&z, n));
    }

    #[test]
    fn initial_labels_follow_lexicographic_order(a in points(1..=8, 2, 2.0)) {
        let Some(z) = config(&a, 2) else { return Ok(()); };
        let mut sorted = a.clone();
        sorted.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for (k, p) in sorted.iter().enumerate() {
            prop_assert_eq!(z.index_at(&Point::new(p.clone()).unwrap()), Some(-(k as i64)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_are_consistent(seed in any::<u64>(), n0 in 0usize..6, lambda in 0.0f64..3.0) {
        let model = contact_pairwise(lambda, 0.5, 0.5);
        let eta = Configuration::from_points(2, (0..n0).map(|i| Point::new(vec![0.3 * i as f64, 0.1]).unwrap()).collect()).unwrap();
        let caps = Caps { max_population: 60, max_events: 5_000 };
        let traj = simulate(&model, &eta, 2.0, caps, RngStreamKey::new(seed)).unwrap();
        traj.validate().unwrap();
        let mut next_birth = 1;
        for w in traj.events.windows(2) {
            prop_assert!(w[1].time > w[0].time);
        }
        for e in &traj.events {
            if e.kind == EventKind::Birth {
                prop_assert_eq!(e.particle_index, next_birth);
                next_birth += 1;
            }
        }
        match traj.status {
            Status::Absorbed { time } => prop_assert!(traj.final_state().unwrap().is_empty() && time <= 2.0),
            Status::CapHit { kind: CapKind::Population, .. } => prop_assert!(traj.final_state().unwrap().len() > 60),
            _ => {}
        }
        // right-continuity at jump times
        for e in traj.events.iter().take(5) {
            let s = traj.state_at(e.time).unwrap();
            match e.kind {
                EventKind::Birth => prop_assert!(s.contains_index(e.particle_index)),
                EventKind::Death => prop_assert!(!s.contains_index(e.particle_index)),
            }
        }
        let again = simulate(&model, &eta, 2.0, caps, RngStreamKey::new(seed)).unwrap();
        prop_assert_eq!(&again, &traj);
        let mut buf = Vec::new();
        write_trajectory_jsonl(&traj, &mut buf).unwrap();
        prop_assert_eq!(read_trajectory_jsonl(buf.as_slice()).unwrap(), traj);
    }

    #[test]
    fn coupling_keeps_inclusion(seed in any::<u64>(), l1 in 0.0f64..2.0, extra in 0.0f64..2.0,
                                strength in 0.0f64..1.0, mu2 in 0.1f64..1.0, drop in any::<u8>()) {
        // b1 ≤ b2 because l1 ≤ l2 and the contact sum grows with η;
        // d1 = 1 + strength·(neighbours) ≥ 1 ≥ mu2 = d2
        let m1 = contact_pairwise(l1, 1.0, strength);
        let m2 = RateModel::contact(l1 + extra, Kernel::UniformBall { radius: 1.0 })
            .unwrap()
            .plus(&RateModel::constant_death(mu2).unwrap())
            .unwrap();
        let upper = Configuration::from_points(2, (0..6).map(|i| Point::new(vec![0.4 * i as f64, 0.0]).unwrap()).collect()).unwrap();
        let kept = upper.iter().enumerate().filter(|(i, _)| drop & (1 << i) == 0).map(|(_, p)| (p.index, p.position.clone())).collect();
        let lower = Configuration::with_indices(2, kept).unwrap();
        let caps = Caps { max_population: 200, max_events: 20_000 };
        let pair = simulate_coupled(&m1, &m2, &lower, &upper, 1.5, caps, RngStreamKey::new(seed)).unwrap();
        prop_assert!(pair.inclusion_held());
        pair.lower.validate().unwrap();
        pair.upper.validate().unwrap();
        for k in 0..=6 {
            let t = 0.25 * k as f64;
            if t <= pair.upper.valid_until() {
                prop_assert!(pair.lower.state_at(t).unwrap().is_subset_of(&pair.upper.state_at(t).unwrap()));
            }
        }
    }
}
