use proptest::prelude::*;
use sa_core::assist::{autonomous_action, blend, goal_centroid};
use sa_core::feedback::{criticality, expected_info_gain, select_prompt, Prompt};
use sa_core::inference::update_belief;
use sa_core::model::{clip_action, optimal_action, q_value, transition};
use sa_core::{Belief, Goal, Scene, SimConfig, Vec3};

fn coord() -> impl Strategy<Value = f64> {
    -5.0..5.0f64
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (coord(), coord(), coord()).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn config() -> impl Strategy<Value = SimConfig> {
    (0.01..1.0f64, 0.1..3.0f64, 0.01..10.0f64, 0.0..=1.0f64).prop_map(|(dt, a_max, beta, alpha)| {
        SimConfig {
            dt,
            a_max,
            beta,
            alpha,
            ..SimConfig::default()
        }
    })
}

/// Goal points with a normalized belief over them.
fn world(max_goals: usize) -> impl Strategy<Value = (Vec<Vec3>, Vec<f64>)> {
    (1..=max_goals).prop_flat_map(|n| {
        (
            prop::collection::vec(vec3(), n),
            prop::collection::vec(0.01..1.0f64, n).prop_map(|w| {
                let t: f64 = w.iter().sum();
                w.into_iter().map(|x| x / t).collect::<Vec<_>>()
            }),
        )
    })
}

fn scene(points: &[Vec3], start: Vec3) -> Scene {
    let goals = points
        .iter()
        .enumerate()
        .map(|(i, p)| Goal::new(&format!("g{i}"), *p))
        .collect();
    Scene::new("prop", start, goals).unwrap()
}

fn belief(scene: &Scene, probs: &[f64]) -> Belief {
    Belief::from_pairs(scene.goal_ids().into_iter().zip(probs.iter().copied())).unwrap()
}

fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
    (a - b).norm() <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn clip_is_idempotent_and_bounded(a in vec3(), a_max in 0.05..4.0f64) {
        let once = clip_action(a, a_max).unwrap();
        prop_assert_eq!(clip_action(once, a_max).unwrap(), once);
        prop_assert!(once.norm() <= a_max * (1.0 + 1e-12));
        if a.norm() <= a_max {
            prop_assert_eq!(once, a);
        }
    }

    #[test]
    fn optimal_action_beats_sampled_actions(s in vec3(), g in vec3(), other in vec3(), cfg in config()) {
        let goal = Goal::new("g", g);
        let best = optimal_action(s, &goal, &cfg).unwrap();
        let q_best = q_value(s, best, &goal, &cfg).unwrap();
        prop_assert!(q_best >= q_value(s, other, &goal, &cfg).unwrap() - 1e-9);
        prop_assert!(q_best <= 0.0);
    }

    #[test]
    fn dynamics_are_translation_equivariant(s in vec3(), a in vec3(), shift in vec3(), cfg in config()) {
        let moved = transition(s + shift, a, &cfg).unwrap();
        prop_assert!(close(moved, transition(s, a, &cfg).unwrap() + shift, 1e-9));
    }

    #[test]
    fn posterior_is_normalized((points, probs) in world(8), s in vec3(), a in vec3(), cfg in config()) {
        let sc = scene(&points, s);
        let b = belief(&sc, &probs);
        let post = update_belief(&b, &sc, s, a, &cfg).unwrap();
        let total: f64 = post.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(post.probs().iter().all(|&p| p >= cfg.belief_floor * (1.0 - 1e-12)));
    }

    #[test]
    fn posterior_is_permutation_invariant((points, probs) in world(6), s in vec3(), a in vec3(), cfg in config()) {
        let sc = scene(&points, s);
        let post = update_belief(&belief(&sc, &probs), &sc, s, a, &cfg).unwrap();
        let rev_points: Vec<Vec3> = points.iter().rev().copied().collect();
        let rev_probs: Vec<f64> = probs.iter().rev().copied().collect();
        // Keep ids attached to their goals.
        let n = points.len();
        let goals = rev_points
            .iter()
            .enumerate()
            .map(|(i, p)| Goal::new(&format!("g{}", n - 1 - i), *p))
            .collect();
        let rev_scene = Scene::new("prop", s, goals).unwrap();
        let rev_b = Belief::from_pairs(rev_scene.goal_ids().into_iter().zip(rev_probs)).unwrap();
        let rev_post = update_belief(&rev_b, &rev_scene, s, a, &cfg).unwrap();
        for id in sc.goal_ids() {
            let (p, q) = (post.prob(&id).unwrap(), rev_post.prob(&id).unwrap());
            prop_assert!((p - q).abs() < 1e-12, "{id}: {p} vs {q}");
        }
    }

    #[test]
    fn posterior_is_translation_invariant((points, probs) in world(6), s in vec3(), a in vec3(), shift in vec3(), cfg in config()) {
        let sc = scene(&points, s);
        let post = update_belief(&belief(&sc, &probs), &sc, s, a, &cfg).unwrap();
        let moved: Vec<Vec3> = points.iter().map(|p| *p + shift).collect();
        let msc = scene(&moved, s + shift);
        let mpost = update_belief(&belief(&msc, &probs), &msc, s + shift, a, &cfg).unwrap();
        for (p, q) in post.probs().iter().zip(mpost.probs()) {
            prop_assert!((p - q).abs() < 1e-6, "{p} vs {q}");
        }
    }

    #[test]
    fn deadzone_input_changes_nothing((points, probs) in world(5), s in vec3(), cfg in config()) {
        let sc = scene(&points, s);
        let b = belief(&sc, &probs);
        let tiny = Vec3::new(cfg.deadzone, 0.0, 0.0) * 0.5;
        prop_assert_eq!(update_belief(&b, &sc, s, tiny, &cfg).unwrap(), b);
    }

    #[test]
    fn scaling_beta_and_q_together_is_invariant((points, probs) in world(5), s in vec3(), a in vec3(), beta in 0.05..2.0f64) {
        // Doubling every distance (positions, action, dt-scaled speed limit)
        // quadruples each Q; quartering β leaves the posterior unchanged.
        let cfg = SimConfig { beta, dt: 0.1, a_max: 1.0, belief_floor: 0.0, ..SimConfig::default() };
        let scaled_cfg = SimConfig { beta: beta / 4.0, a_max: 2.0, ..cfg.clone() };
        let sc = scene(&points, s);
        let post = update_belief(&belief(&sc, &probs), &sc, s, a, &cfg).unwrap();
        let big: Vec<Vec3> = points.iter().map(|p| *p * 2.0).collect();
        let bsc = scene(&big, s * 2.0);
        let bpost = update_belief(&belief(&bsc, &probs), &bsc, s * 2.0, a * 2.0, &scaled_cfg).unwrap();
        for (p, q) in post.probs().iter().zip(bpost.probs()) {
            prop_assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }
    }

    #[test]
    fn rational_teacher_never_lowers_its_goal((points, probs) in world(8), s in vec3(), k in 0usize..8, cfg in config()) {
        let k = k % points.len();
        let sc = scene(&points, s);
        let b = belief(&sc, &probs);
        let a = optimal_action(s, &sc.goals[k], &cfg).unwrap();
        let post = update_belief(&b, &sc, s, a, &cfg).unwrap();
        prop_assert!(post.probs()[k] >= b.probs()[k] - 1e-12);
    }

    #[test]
    fn assist_heads_for_centroid((points, probs) in world(8), s in vec3(), cfg in config()) {
        let sc = scene(&points, s);
        let b = belief(&sc, &probs);
        let a_r = autonomous_action(s, &b, &sc, &cfg);
        prop_assert!(a_r.norm() <= cfg.a_max * (1.0 + 1e-12));
        let to_c = goal_centroid(&b, &sc) - s;
        if to_c.norm() > 1e-9 && a_r.norm() > 1e-9 {
            prop_assert!(a_r.normalized().dot(to_c.normalized()) > 1.0 - 1e-9);
        }
    }

    #[test]
    fn blend_endpoints_and_fixed_point(a in vec3(), b in vec3(), cfg in config()) {
        let a = clip_action(a, cfg.a_max).unwrap();
        let b = clip_action(b, cfg.a_max).unwrap();
        prop_assert!(close(blend(a, a, &cfg).unwrap(), a, 1e-12));
        let human_only = SimConfig { alpha: 0.0, ..cfg.clone() };
        let robot_only = SimConfig { alpha: 1.0, ..cfg.clone() };
        prop_assert_eq!(blend(a, b, &human_only).unwrap(), a);
        prop_assert_eq!(blend(a, b, &robot_only).unwrap(), b);
    }

    #[test]
    fn criticality_nonnegative_and_zero_when_certain((points, probs) in world(8), s in vec3(), k in 0usize..8, cfg in config()) {
        let sc = scene(&points, s);
        prop_assert!(criticality(s, &belief(&sc, &probs), &sc, &cfg) >= 0.0);
        let k = k % points.len();
        let one_hot: Vec<f64> = (0..points.len()).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
        prop_assert_eq!(criticality(s, &belief(&sc, &one_hot), &sc, &cfg), 0.0);
    }

    #[test]
    fn info_gain_bounded((points, probs) in world(8), s in vec3(), cfg in config()) {
        let sc = scene(&points, s);
        let b = belief(&sc, &probs);
        let bound = (points.len() as f64).log2().min(1.0) + 1e-12;
        for u in Prompt::all(cfg.a_max) {
            let i = expected_info_gain(&u, s, &b, &sc, &cfg);
            prop_assert!((0.0..=bound).contains(&i), "{i}");
        }
        let (_, pattern) = select_prompt(s, &b, &sc, &cfg);
        prop_assert!(pattern.squeeze);
    }
}
