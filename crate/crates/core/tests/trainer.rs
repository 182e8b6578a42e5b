use eamod::city::{reset, Scenario};
use eamod::game::{local_states, AdversaryBounds};
use eamod::neural::{Head, Mlp};
use eamod::rng::{stream_rng, Stream};
use eamod::trainer::{
    blend, critic_gradient, dpg_gradient, policy_gradients, regression_gradient, select_actions,
    td_targets, AgentNets, JointState, TargetMode, Trainer, TrainerConfig, Transition,
};
use ndarray::Array2;
use rand::Rng;

fn small_config(episodes: usize, steps: usize, batch: usize) -> TrainerConfig {
    TrainerConfig {
        episodes,
        steps_per_episode: steps,
        batch_size: batch,
        replay_capacity: 1000,
        ..Default::default()
    }
}

fn tiny_city() -> Scenario {
    Scenario::skewed_city(2, 2, 8, 3).unwrap()
}

/// Transitions recorded from a short training run.
fn recorded(batch: usize, seed: u64) -> (Trainer, Vec<Transition>) {
    let cfg = TrainerConfig {
        seed,
        ..small_config(2, 12, 1000)
    };
    let mut tr = Trainer::new(cfg, Scenario::skewed_city(3, 3, 18, 6).unwrap()).unwrap();
    tr.train().unwrap();
    let mut rng = stream_rng(seed, Stream::Replay, 99);
    let items = (0..batch)
        .map(|_| tr.replay().get(rng.random_range(0..tr.replay().len())).clone())
        .collect();
    (tr, items)
}

#[test]
fn bookkeeping_counts_for_one_short_episode() {
    let mut tr = Trainer::new(small_config(1, 2, 8), tiny_city()).unwrap();
    tr.train().unwrap();
    let c = tr.state().counters;
    assert_eq!(tr.replay().len(), 2);
    assert_eq!(c.transitions, 2);
    assert_eq!(c.target_updates, 2);
    assert_eq!(c.snapshots, 1);
    assert_eq!(c.policy_updates, 0);
    assert_eq!(tr.state().log.len(), 1);
}

#[test]
fn warmup_leaves_parameters_untouched() {
    let mut tr = Trainer::new(small_config(2, 5, 20), tiny_city()).unwrap();
    let before = tr.state().online.clone();
    tr.train().unwrap();
    assert_eq!(tr.state().online, before);
    // soft updates still run, blending identical weights
    let t = &tr.state().target;
    for (a, b) in t.critic.params().iter().zip(before.critic.params()) {
        assert!((a - b).abs() <= 1e-15);
    }
    assert!(tr.state().log.iter().all(|m| m.critic_loss == 0.0));
}

#[test]
fn updates_start_once_a_batch_is_stored() {
    let mut tr = Trainer::new(small_config(3, 5, 8), tiny_city()).unwrap();
    let before = tr.state().online.clone();
    tr.train().unwrap();
    let c = tr.state().counters;
    assert_eq!(c.policy_updates, 15 - 7);
    assert_eq!(c.critic_updates, 15 - 7);
    assert_ne!(tr.state().online.region, before.region);
    assert_ne!(tr.state().online.adversary, before.adversary);
    assert_ne!(tr.state().online.critic, before.critic);
}

#[test]
fn same_seed_gives_identical_logs() {
    let run = || {
        let mut tr = Trainer::new(small_config(3, 6, 8), tiny_city()).unwrap();
        tr.train().unwrap().to_vec()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let other = {
        let mut tr = Trainer::new(TrainerConfig { seed: 9, ..small_config(3, 6, 8) }, tiny_city()).unwrap();
        tr.train().unwrap().to_vec()
    };
    assert_ne!(a, other);
}

#[test]
fn adversary_return_is_negated_region_return() {
    let mut tr = Trainer::new(small_config(4, 6, 8), tiny_city()).unwrap();
    for m in tr.train().unwrap() {
        assert_eq!(m.adversary_return, -m.region_return);
    }
}

#[test]
fn snapshot_is_refreshed_once_per_episode() {
    let mut tr = Trainer::new(small_config(3, 6, 8), tiny_city()).unwrap();
    for e in 0..3 {
        tr.run_episode().unwrap();
        assert_eq!(tr.state().counters.snapshots, e + 1);
    }
    // the snapshot holds the start-of-episode weights, not the live ones
    assert_ne!(tr.state().snapshot, tr.state().online);
}

#[test]
fn baseline_matches_robust_with_pinned_adversary() {
    let steps = (4, 6, 8);
    let baseline = TrainerConfig {
        baseline: true,
        ..small_config(steps.0, steps.1, steps.2)
    };
    let mut b = Trainer::new(baseline, tiny_city()).unwrap();
    let pinned = TrainerConfig {
        adversary_bounds: AdversaryBounds::zero(),
        ..small_config(steps.0, steps.1, steps.2)
    };
    let mut r = Trainer::new(pinned, tiny_city()).unwrap();
    {
        let s = r.state_mut();
        for nets in [&mut s.online, &mut s.target, &mut s.snapshot] {
            nets.adversary.params_mut().fill(0.0);
        }
    }
    let lb = b.train().unwrap().to_vec();
    let lr = r.train().unwrap().to_vec();
    assert_eq!(lb, lr);
    assert_eq!(b.state().online.region, r.state().online.region);
    assert_eq!(b.state().online.critic, r.state().online.critic);
}

#[test]
fn baseline_region_observations_are_true_states() {
    let tr = Trainer::new(TrainerConfig { baseline: true, ..small_config(1, 4, 8) }, tiny_city()).unwrap();
    let state = reset(tr.scenario(), 5);
    let states = local_states(&state);
    let acts = select_actions(tr.space(), &tr.state().online, &states, 0, None).unwrap();
    assert!(acts.adversary.iter().all(|&v| v == 0.0));
    let layout = &tr.space().layout;
    let mut obs = Array2::zeros((4, layout.obs_len()));
    tr.space().write_region_obs(&states, 0, &acts.adversary, &mut obs, 0);
    for i in 0..4 {
        assert_eq!(obs.row(i).to_vec(), layout.observation(&states, 0, i, &states[i]));
    }
}

#[test]
fn selection_without_exploration_is_deterministic() {
    let tr = Trainer::new(small_config(1, 4, 8), tiny_city()).unwrap();
    let states = local_states(&reset(tr.scenario(), 2));
    let a = select_actions(tr.space(), &tr.state().online, &states, 1, None).unwrap();
    let b = select_actions(tr.space(), &tr.state().online, &states, 1, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn blend_collapses_at_the_ends() {
    let a = [0.2, 0.3, 0.5];
    let x = [0.0, 1.0, 0.0];
    assert_eq!(blend(&a, &x, 0.0), a.to_vec());
    assert_eq!(blend(&a, &x, 1.0), x.to_vec());
    assert_eq!(blend(&[0.5, 0.5], &[1.0, 0.0], 0.5), vec![0.75, 0.25]);
}

#[test]
fn regression_targets_are_feasible() {
    let (tr, batch) = recorded(16, 3);
    let refs: Vec<&Transition> = batch.iter().collect();
    let space = tr.space();
    let pass = eamod::trainer::batch_pass(space, &tr.state().snapshot, &refs, true).unwrap();
    let (region, adversary) =
        eamod::trainer::regression_targets(space, &pass, TargetMode::Constrained { delta: 0.3 }).unwrap();
    let flat: Vec<f64> = region.iter().copied().collect();
    let w = space.region_action_len();
    for chunk in flat.chunks(w * space.num_regions()) {
        assert!(space.region_feasible(chunk, 1e-9));
    }
    for row in adversary.rows() {
        assert!(space.adversary_box().contains(row.as_slice().unwrap(), 1e-12));
    }
}

#[test]
fn regression_gradient_is_zero_at_the_targets() {
    let mut rng = stream_rng(1, Stream::Init, 7);
    let net = Mlp::init(5, 4, Head::SoftmaxBlocks { block: 2 }, &mut rng).unwrap();
    let obs = Array2::from_shape_fn((6, 5), |(r, c)| (r as f64 - c as f64) * 0.3);
    let targets = net.forward_batch(obs.view(), None).unwrap().output;
    let (grad, loss) = regression_gradient(&net, &obs, None, &targets, 3).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn regression_gradient_matches_finite_differences() {
    let mut rng = stream_rng(2, Stream::Init, 7);
    let net = Mlp::init(4, 3, Head::BoundedAffine { lower: vec![-1.0; 3], upper: vec![1.0; 3] }, &mut rng).unwrap();
    let obs = Array2::from_shape_vec((1, 4), vec![0.3, -0.2, 0.8, 0.1]).unwrap();
    let targets = Array2::from_shape_vec((1, 3), vec![0.5, -0.5, 0.1]).unwrap();
    let (grad, _) = regression_gradient(&net, &obs, None, &targets, 1).unwrap();
    let loss = |n: &Mlp| -> f64 {
        let out = n.forward(obs.row(0).as_slice().unwrap()).unwrap();
        out.iter().zip(targets.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    let h = 1e-6;
    let mut work = net.clone();
    let mut worst: f64 = 0.0;
    for k in 0..net.params().len() {
        let p = net.params()[k];
        work.params_mut()[k] = p + h;
        let hi = loss(&work);
        work.params_mut()[k] = p - h;
        let lo = loss(&work);
        work.params_mut()[k] = p;
        let fd = (hi - lo) / (2.0 * h);
        if fd.abs() > 1e-7 {
            worst = worst.max((fd - grad[k]).abs() / fd.abs().max(grad[k].abs()));
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

fn constant_critic(space: &eamod::trainer::ActionSpace, value: f64) -> Mlp {
    let mut critic = Mlp::zeros(space.critic_input_len(), 1, Head::Linear).unwrap();
    let last = critic.params().len() - 1;
    critic.params_mut()[last] = value;
    critic
}

fn single_transition(tr: &Trainer, reward: f64) -> Transition {
    let state = local_states(&reset(tr.scenario(), 1));
    let locals: Vec<f64> = state.iter().flat_map(|s| s.fields()).collect();
    let n = tr.space().num_regions();
    Transition {
        state: JointState { t: 0, locals: locals.clone() },
        region_actions: vec![0.0; n * tr.space().region_action_len()],
        adversary_actions: vec![0.0; 3 * n],
        reward,
        next_state: JointState { t: 1, locals },
    }
}

#[test]
fn td_target_hand_case() {
    let tr = Trainer::new(small_config(1, 4, 8), tiny_city()).unwrap();
    let mut target: AgentNets = tr.state().online.clone();
    target.critic = constant_critic(tr.space(), 2.0);
    let t = single_transition(&tr, 1.0);
    let y = td_targets(tr.space(), &target, &[&t], 0.99, 1.0).unwrap();
    assert!((y[0] - 2.98).abs() < 1e-12, "{}", y[0]);
    let y0 = td_targets(tr.space(), &target, &[&t], 0.0, 1.0).unwrap();
    assert_eq!(y0[0], 1.0);
}

#[test]
fn critic_gradient_vanishes_when_q_equals_y() {
    let tr = Trainer::new(small_config(1, 4, 8), tiny_city()).unwrap();
    let critic = constant_critic(tr.space(), 2.5);
    let t = single_transition(&tr, 1.0);
    let (grad, mse) = critic_gradient(tr.space(), &critic, &[&t, &t], &[2.5, 2.5]).unwrap();
    assert_eq!(mse, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn unconstrained_regression_follows_the_policy_gradient() {
    for seed in 0..3 {
        let (tr, batch) = recorded(24, seed);
        let refs: Vec<&Transition> = batch.iter().collect();
        let nets = &tr.state().online;
        let g = policy_gradients(tr.space(), nets, nets, &refs, TargetMode::Unconstrained { eta: 1e-4 }).unwrap();
        let (d_region, d_adversary) = dpg_gradient(tr.space(), nets, &refs).unwrap();
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        assert!(cosine(&neg(&g.region), &d_region) >= 0.999);
        assert!(cosine(&neg(&g.adversary), &d_adversary) >= 0.999);
    }
}
