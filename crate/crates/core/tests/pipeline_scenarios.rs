use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use swarm_refine::recovery::broad_prior;
use swarm_refine::{
    prepare_prior, refine_position, Cov3, Estimate, LinkObservables, LinkParams, NeighborConstraint, NeighborMessage,
    PipelineParams, PriorCase, RangeObservation, RecoveryParams, RefinedState, SolverParams, StateSummary,
    TrustParams, UavId, UavPipelineState, Vec3,
};

fn params(gamma_loss: f64) -> PipelineParams {
    PipelineParams {
        link: LinkParams::default(),
        trust: TrustParams::default(),
        recovery: RecoveryParams {
            gamma_loss,
            ..RecoveryParams::default()
        },
        solver: SolverParams::default(),
        trust_enabled: true,
        fallback_prior: broad_prior(Vec3::ZERO, Vec3::new(50.0, 50.0, 50.0)).unwrap(),
    }
}

fn message(id: u32, t: u64, p: Vec3) -> NeighborMessage {
    NeighborMessage {
        sender: UavId(id),
        state: StateSummary::present(UavId(id), t, p, Cov3::identity()),
        sent_epoch: t,
        link: LinkObservables::new(1.0, 1.0).unwrap(),
    }
}

/// Newton iteration on the exact sphere equations, started at the centroid.
fn sphere_intersection(anchors: &[Vec3], ranges: &[f64]) -> Vec3 {
    let n = anchors.len() as f64;
    let mut x = anchors.iter().fold(Vector3::zeros(), |s, a| s + Vector3::new(a.x, a.y, a.z)) / n;
    for _ in 0..100 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (a, &d) in anchors.iter().zip(ranges) {
            let diff = x - Vector3::new(a.x, a.y, a.z);
            let u = diff / diff.norm();
            jtj += u * u.transpose();
            jtr += u * (diff.norm() - d);
        }
        x -= jtj.lu().solve(&jtr).unwrap();
    }
    Vec3::new(x[0], x[1], x[2])
}

#[test]
fn one_epoch_loss_is_bridged_by_neighbors() {
    let truth = Vec3::new(20.0, 22.0, 18.0);
    let anchors = [
        Vec3::new(30.0, 22.0, 18.0),
        Vec3::new(20.0, 35.0, 18.0),
        Vec3::new(20.0, 22.0, 30.0),
        Vec3::new(10.0, 12.0, 10.0),
    ];
    let mut ranges = BTreeMap::new();
    let mut messages = Vec::new();
    for (k, a) in anchors.iter().enumerate() {
        let id = k as u32 + 1;
        ranges.insert(UavId(id), RangeObservation::new(truth.distance(*a), 0.05).unwrap());
        messages.push(message(id, 6, *a));
    }
    let oracle = sphere_intersection(&anchors, &anchors.map(|a| truth.distance(a)));
    assert!(oracle.distance(truth) < 1e-9);

    let mut state = UavPipelineState {
        last_refined: Some(RefinedState {
            position: truth + Vec3::new(0.4, -0.3, 0.5),
            covariance: Cov3::identity(),
            epoch: 5,
        }),
        ..UavPipelineState::default()
    };
    let out = state
        .refine_epoch(&StateSummary::missing(UavId(0), 6), &messages, &ranges, &params(100.0))
        .unwrap();
    assert_eq!(out.prior_case, PriorCase::Loss);
    assert!(out.refined.position.distance(oracle) < 1e-2, "{:?}", out.refined.position);
}

#[test]
fn flagged_neighbor_can_be_deleted() {
    let me = Vec3::new(10.0, 10.0, 10.0);
    let honest = [Vec3::new(20.0, 10.0, 10.0), Vec3::new(10.0, 22.0, 10.0), Vec3::new(10.0, 10.0, 25.0)];
    let liar_truth = Vec3::new(0.0, 5.0, 10.0);
    let liar_report = liar_truth + Vec3::new(0.0, 0.0, 20.0);
    let liar = UavId(9);
    let mut ranges = BTreeMap::new();
    for (k, a) in honest.iter().enumerate() {
        ranges.insert(UavId(k as u32 + 1), RangeObservation::new(me.distance(*a), 0.5).unwrap());
    }
    ranges.insert(liar, RangeObservation::new(me.distance(liar_truth), 0.5).unwrap());
    let p = params(4.0);

    let mut state = UavPipelineState::new();
    for t in 0..6u64 {
        let local = StateSummary::present(UavId(0), t, me, Cov3::identity());
        let mut msgs: Vec<NeighborMessage> = honest
            .iter()
            .enumerate()
            .map(|(k, a)| message(k as u32 + 1, t, *a))
            .collect();
        msgs.push(message(liar.0, t, liar_report));

        let mut without = state.clone();
        let with_out = state.refine_epoch(&local, &msgs, &ranges, &p).unwrap();
        if state.trust_ledger.is_flagged(liar) {
            let honest_only: Vec<NeighborMessage> = msgs.iter().copied().filter(|m| m.sender != liar).collect();
            let without_out = without.refine_epoch(&local, &honest_only, &ranges, &p).unwrap();
            assert_eq!(with_out.weights[&liar], 0.0);
            assert_eq!(with_out.refined, without_out.refined);
            return;
        }
    }
    panic!("spoofing neighbor never flagged");
}

fn point() -> impl Strategy<Value = Vec3> {
    (-20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn spd() -> impl Strategy<Value = Cov3> {
    (0.01f64..50.0, 0.01f64..50.0, 0.01f64..50.0, -0.9f64..0.9).prop_map(|(a, b, c, rho)| {
        let off = rho * (a * b).sqrt();
        Cov3::new(swarm_refine::Mat3([[a, off, 0.0], [off, b, 0.0], [0.0, 0.0, c]])).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 256,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn exactly_one_prior_case(
        fix in prop::option::of((point(), spd())),
        prev in prop::option::of((point(), spd())),
        sigma_max in 0.1f64..200.0,
    ) {
        let local = match fix {
            Some((p, c)) => StateSummary::present(UavId(0), 1, p, c),
            None => StateSummary::missing(UavId(0), 1),
        };
        let prev = prev.map(|(position, covariance)| RefinedState { position, covariance, epoch: 0 });
        let rp = RecoveryParams { sigma_max, ..RecoveryParams::default() };
        let expected = match (fix, prev) {
            (Some((_, c)), _) if c.trace() <= sigma_max => Some(PriorCase::Confident),
            (Some(_), _) => Some(PriorCase::LowConfidence),
            (None, Some(_)) => Some(PriorCase::Loss),
            (None, None) => None,
        };
        prop_assert_eq!(prepare_prior(&local, prev.as_ref(), &rp).ok().map(|(_, c)| c), expected);
    }

    #[test]
    fn zero_weight_neighbors_are_inert(
        prior_at in point(),
        cov in spd(),
        live in prop::collection::vec((point(), 0.0f64..40.0, 0.1f64..3.0, 0.01f64..=1.0), 0..5),
        dead in prop::collection::vec((point(), 0.0f64..40.0, 0.1f64..3.0), 1..5),
    ) {
        let prior = Estimate::new(prior_at, cov);
        let mk = |k: usize, (p, d, s, w): (Vec3, f64, f64, f64)| NeighborConstraint {
            id: UavId(k as u32),
            p_j: p,
            obs: RangeObservation::new(d, s).unwrap(),
            omega: w,
        };
        let live: Vec<NeighborConstraint> = live.into_iter().enumerate().map(|(k, c)| mk(k, c)).collect();
        let dead: Vec<NeighborConstraint> =
            dead.into_iter().enumerate().map(|(k, (p, d, s))| mk(100 + k, (p, d, s, 0.0))).collect();
        let mixed: Vec<NeighborConstraint> = live.iter().chain(&dead).copied().collect();
        let solver = SolverParams::default();

        let a = refine_position(&prior, &live, &solver).unwrap();
        let b = refine_position(&prior, &mixed, &solver).unwrap();
        prop_assert_eq!(a.estimate, b.estimate);

        let only_dead = refine_position(&prior, &dead, &solver).unwrap();
        prop_assert_eq!(only_dead.estimate.position, prior_at);
    }

    #[test]
    fn isolated_uav_keeps_its_fix(p in point(), cov in spd(), t in 0u64..50) {
        let mut state = UavPipelineState::new();
        let local = StateSummary::present(UavId(3), t, p, cov);
        let out = state.refine_epoch(&local, &[], &BTreeMap::new(), &params(4.0)).unwrap();
        prop_assert_eq!(out.refined.position, p);
        prop_assert!(out.weights.is_empty());
    }
}
