use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rational_nets::matrix::Matrix;
use rational_nets::rl::{
    build_q_network, dqn_train, epsilon_at, normalize_score, ActivationKind, Cell, DqnAgent, DqnConfig, Env,
    GridWorld, ReplayBuffer, ScoreReport, Transition, ACTIONS,
};

/// Finite-horizon, undiscounted value iteration over `max_steps` stages.
fn value_iteration(world: &GridWorld) -> f64 {
    let idx = |c: Cell| c.1 * world.width + c.0;
    let mut v = vec![0.0; world.cells()];
    for _ in 0..world.max_steps {
        let mut next = vec![0.0; world.cells()];
        for y in 0..world.height {
            for x in 0..world.width {
                let c = (x, y);
                if world.is_wall(c) || c == world.goal {
                    continue;
                }
                next[idx(c)] = (0..ACTIONS)
                    .map(|a| {
                        let n = world.moved(c, a).unwrap();
                        if n == world.goal {
                            world.step_reward + world.goal_reward
                        } else {
                            world.step_reward + v[idx(n)]
                        }
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
        v = next;
    }
    v[idx(world.start)]
}

#[test]
fn default_world_optimum_is_two() {
    let world = GridWorld::default();
    assert_eq!(value_iteration(&world), 2.0);
    assert_eq!(world.optimal_return(), Some(2.0));
}

proptest! {
    #[test]
    fn shortest_path_return_matches_value_iteration(walls in prop::collection::vec((0usize..5, 0usize..5), 0..10)) {
        let mut world = GridWorld::default();
        world.walls = walls.into_iter().filter(|&c| c != world.start && c != world.goal).collect();
        let vi = value_iteration(&world);
        match world.optimal_return() {
            Some(r) => prop_assert_eq!(r, vi),
            None => prop_assert_eq!(vi, world.max_steps as f64 * world.step_reward),
        }
    }

    #[test]
    fn epsilon_is_monotone_and_clamped(start in 0.0f64..1.0, frac in 0.0f64..1.0, decay in 0usize..500, s in 0usize..1000) {
        let cfg = DqnConfig {
            epsilon_start: start,
            epsilon_end: start * frac,
            epsilon_decay_steps: decay,
            ..DqnConfig::default()
        };
        let (a, b) = (epsilon_at(&cfg, s), epsilon_at(&cfg, s + 1));
        prop_assert!(b <= a);
        prop_assert!(a <= cfg.epsilon_start && a >= cfg.epsilon_end);
    }

    #[test]
    fn replay_buffer_respects_capacity_and_fill(capacity in 1usize..40, fill_frac in 0.0f64..1.0, pushes in 0usize..100, seed in any::<u64>()) {
        let fill = ((capacity as f64 * fill_frac) as usize).max(1);
        let mut buf = ReplayBuffer::new(capacity, fill).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..pushes {
            prop_assert_eq!(buf.sample(4, &mut rng).is_some(), i >= fill);
            buf.push(Transition { state: vec![i as f64], action: 0, reward: i as f64, next_state: vec![], terminal: false });
            prop_assert_eq!(buf.len(), (i + 1).min(capacity));
        }
        if let Some(batch) = buf.sample(16, &mut rng) {
            // Only the most recent `capacity` pushes survive.
            let oldest = pushes.saturating_sub(capacity) as f64;
            prop_assert!(batch.iter().all(|t| t.reward >= oldest && t.reward < pushes as f64));
        }
    }
}

#[test]
fn environment_examples() {
    let world = GridWorld::default();
    let mut env = Env::new(world.clone()).unwrap();
    assert_eq!(env.reset(), world.encode((0, 0)));
    let r = env.step(3).unwrap();
    assert_eq!(r.state, world.encode((1, 0)));
    assert_eq!((r.reward, r.done), (-1.0, false));

    env.reset();
    let r = env.step(2).unwrap();
    assert_eq!(r.state, world.encode((0, 0)));
    assert!(env.step(4).is_err());

    // Eight moves along the border collect 2 in total.
    env.reset();
    let mut total = 0.0;
    for a in [3, 3, 3, 3, 1, 1, 1, 1] {
        let r = env.step(a).unwrap();
        total += r.reward;
        assert_eq!(r.done, env.position() == world.goal);
    }
    assert_eq!(total, 2.0);
}

#[test]
fn episode_ends_at_step_limit() {
    let world = GridWorld { max_steps: 3, ..GridWorld::default() };
    let mut env = Env::new(world).unwrap();
    env.reset();
    let done: Vec<bool> = (0..3).map(|_| env.step(0).unwrap().done).collect();
    assert_eq!(done, [false, false, true]);
}

#[test]
fn normalization_examples() {
    assert!((normalize_score(18.1, -20.2, 15.9).unwrap() - 106.1).abs() < 0.05);
    let skiing = normalize_score(-23582.0, -16104.0, -27365.0).unwrap();
    assert!((skiing - 100.0 * 11261.0 / 7478.0).abs() < 1e-9);
    assert!((skiing - 150.6).abs() < 0.05);
    assert_eq!(normalize_score(7.0, 3.0, 7.0).unwrap(), 100.0);
    assert_eq!(normalize_score(3.0, 3.0, 7.0).unwrap(), 0.0);
    assert!(normalize_score(1.0, 2.0, 2.0).is_err());
    assert!(normalize_score(-2.0, -2.0, -5.0).is_err());

    let report = ScoreReport::new(2.0, -30.0, 2.0).unwrap();
    assert_eq!(report.normalized, 100.0);
    assert_eq!(report.to_csv().unwrap(), "agent,random,baseline,normalized\n2,-30,2,100\n");
}

fn short_config() -> DqnConfig {
    DqnConfig {
        target_update_freq: 50,
        buffer_capacity: 300,
        initial_fill: 64,
        train_steps: 400,
        eval_every: 100,
        epsilon_decay_steps: 300,
        seed: 7,
        ..DqnConfig::default()
    }
}

#[test]
fn target_tracks_online_only_at_syncs() {
    let world = GridWorld::default();
    let cfg = short_config();
    let net = build_q_network(&world, &[16], ActivationKind::SharedRational, 1).unwrap();
    let mut agent = DqnAgent::new(world, net, cfg.clone()).unwrap();
    let mut frozen = agent.target().parameters();
    // Stop between syncs so the last stretch leaves the two apart.
    for _ in 0..cfg.train_steps + 10 {
        agent.step().unwrap();
        let target = agent.target().parameters();
        if agent.steps() % cfg.target_update_freq == 0 {
            assert_eq!(target, agent.online().parameters());
            frozen = target;
        } else {
            assert_eq!(target, frozen, "target moved at step {}", agent.steps());
        }
    }
    assert!(agent.buffer().len() <= cfg.buffer_capacity);
    assert_ne!(agent.online().parameters(), agent.target().parameters());
}

#[test]
fn training_is_deterministic_per_seed() {
    let world = GridWorld::default();
    let cfg = short_config();
    let run = |seed: u64| {
        let net = build_q_network(&world, &[16], ActivationKind::Rational, 3).unwrap();
        dqn_train(&world, net, &DqnConfig { seed, ..cfg.clone() }).unwrap()
    };
    let (a, ca) = run(7);
    let (b, cb) = run(7);
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_eq!(ca.curve.iter().map(|p| p.step).collect::<Vec<_>>(), [100, 200, 300, 400]);
    let (c, _) = run(8);
    assert_ne!(a, c);
}

#[test]
fn zero_discount_learns_immediate_rewards() {
    // 3×1 corridor: moving right from the middle reaches the goal for −1 + 10.
    let world = GridWorld {
        width: 3,
        height: 1,
        start: (0, 0),
        goal: (2, 0),
        ..GridWorld::default()
    };
    let cfg = DqnConfig {
        gamma: 0.0,
        epsilon_start: 1.0,
        epsilon_end: 1.0,
        learning_rate: 1e-2,
        buffer_capacity: 1000,
        initial_fill: 100,
        train_steps: 3000,
        eval_every: 3000,
        ..DqnConfig::default()
    };
    let net = build_q_network(&world, &[16], ActivationKind::Rational, 0).unwrap();
    let (net, _) = dqn_train(&world, net, &cfg).unwrap();
    for c in [(0, 0), (1, 0)] {
        let q = net.predict(&Matrix::from_vec(1, 3, world.encode(c)).unwrap()).unwrap();
        for a in 0..ACTIONS {
            let n = world.moved(c, a).unwrap();
            let r = world.step_reward + if n == world.goal { world.goal_reward } else { 0.0 };
            assert!((q.get(0, a) - r).abs() < 0.25, "cell {c:?} action {a}: {} vs {r}", q.get(0, a));
        }
    }
    let q = net.predict(&Matrix::from_vec(1, 3, world.encode((1, 0))).unwrap()).unwrap();
    let best = (0..ACTIONS).max_by(|&i, &j| q.get(0, i).total_cmp(&q.get(0, j))).unwrap();
    assert_eq!(best, 3);
}
