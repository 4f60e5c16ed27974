import numpy as np
import pytest

from terraincl.policy import (
    ActorCritic,
    CheckpointMeta,
    entropy,
    load_checkpoint,
    log_prob,
    sample_actions,
    save_checkpoint,
)
from terraincl.rng import substream


def make_policy(obs_dim=6, act_dim=3, hidden=(8, 8, 8), dtype=np.float64, seed=0):
    policy = ActorCritic(obs_dim, act_dim, hidden, dtype=dtype)
    policy.initialize(substream(seed, "policy-init"))
    return policy


def test_zero_params_give_zero_outputs():
    policy = ActorCritic(6, 3, (8, 8, 8))
    obs = np.ones((4, 6), dtype=np.float32)
    mean, value = policy.forward(obs)
    assert np.all(mean == 0.0)
    assert np.all(value == 0.0)


def test_zeroed_input_column_makes_input_irrelevant():
    policy = make_policy()
    policy.actor.weights[0][2, :] = 0.0
    policy.critic.weights[0][2, :] = 0.0
    obs = substream(1, "obs").standard_normal((5, 6))
    bumped = obs.copy()
    bumped[:, 2] *= 2.0
    m1, v1 = policy.forward(obs)
    m2, v2 = policy.forward(bumped)
    assert np.array_equal(m1, m2)
    assert np.array_equal(v1, v2)


def test_forward_matches_tiny_matrix_oracle():
    # Independent reimplementation on a 4 -> 3 -> 2 net.
    policy = ActorCritic(4, 2, hidden=(3,), dtype=np.float64)
    policy.initialize(substream(3, "policy-init"))
    obs = substream(4, "obs").standard_normal((6, 4))
    w0, b0 = policy.actor.weights[0], policy.actor.biases[0]
    w1, b1 = policy.actor.weights[1], policy.actor.biases[1]
    z = obs @ w0 + b0
    h = np.where(z > 0, z, np.exp(z) - 1.0)
    want_mean = h @ w1 + b1
    mean, _ = policy.forward(obs)
    assert np.allclose(mean, want_mean, atol=1e-12)


def test_log_prob_closed_form_at_mean():
    mean = np.zeros((1, 12))
    actions = np.zeros((1, 12))
    log_std = np.zeros(12)  # sigma = 1
    got = log_prob(mean, log_std, actions)[0]
    assert got == pytest.approx(-6.0 * np.log(2 * np.pi), abs=1e-10)
    assert got == pytest.approx(-11.0273, abs=1e-3)


def test_log_prob_shape_with_sigma():
    mean = np.zeros((1, 12))
    far = np.full((1, 12), 3.0)
    lp_narrow_far = log_prob(mean, np.zeros(12), far)[0]
    lp_wide_far = log_prob(mean, np.full(12, 1.0), far)[0]
    assert lp_wide_far > lp_narrow_far
    lp_narrow_at = log_prob(mean, np.zeros(12), mean)[0]
    lp_wide_at = log_prob(mean, np.full(12, 1.0), mean)[0]
    assert lp_wide_at < lp_narrow_at


def test_log_prob_normalizes_on_1d_slice():
    # Quadrature oracle: density integrates to 1 along one dimension.
    log_std = np.array([-0.3])
    mean = np.array([[0.7]])
    xs = np.linspace(-8, 8, 20001)[:, None]
    dens = np.exp(log_prob(np.broadcast_to(mean, xs.shape), log_std, xs))
    integral = np.trapezoid(dens, xs[:, 0])
    assert integral == pytest.approx(1.0, abs=1e-6)


def test_entropy_closed_form_and_laws():
    assert entropy(np.zeros(12)) == pytest.approx(
        12 * 0.5 * (1 + np.log(2 * np.pi)), abs=1e-12
    )
    assert entropy(np.zeros(12)) == pytest.approx(17.0273, abs=1e-3)
    # Mean-independent by construction (no mean argument), scale law:
    base = entropy(np.full(12, 0.2))
    assert entropy(np.full(12, 0.2) + np.log(2.0)) == pytest.approx(
        base + 12 * np.log(2.0), abs=1e-10
    )


def test_backward_zero_upstream_gives_zero_grads():
    policy = make_policy()
    obs = substream(5, "obs").standard_normal((7, 6))
    _, _, caches = policy.forward_cached(obs)
    grads = policy.backward(caches, np.zeros((7, 3)), np.zeros(7))
    assert all(np.all(g == 0.0) for g in grads)


def test_value_loss_grad_at_critic_output_bias():
    policy = make_policy(seed=8)
    obs = substream(9, "obs").standard_normal((16, 6))
    target = substream(10, "t").standard_normal(16)
    _, value, caches = policy.forward_cached(obs)
    d_value = 2.0 * (value - target) / value.shape[0]
    grads = policy.backward(caches, np.zeros((16, 3)), d_value)
    # Last critic bias grad is the mean of 2(V - target).
    critic_out_bias_grad = grads[-2]
    assert critic_out_bias_grad.shape == (1,)
    assert critic_out_bias_grad[0] == pytest.approx(
        np.mean(2.0 * (value - target)), rel=1e-12
    )


def test_backward_matches_finite_differences():
    # Scalar loss with fixed random head weights; checks the MLP chain rule
    # for every parameter on a shrunken float64 net.
    rng = substream(11, "fd")
    for draw in range(3):
        policy = make_policy(seed=100 + draw)
        obs = rng.standard_normal((5, 6))
        c_mean = rng.standard_normal((5, 3))
        c_val = rng.standard_normal(5)

        def loss(p):
            mean, value = p.forward(obs)
            return float(np.sum(c_mean * mean) + np.sum(c_val * value))

        _, _, caches = policy.forward_cached(obs)
        grads = policy.backward(caches, c_mean, c_val)
        params = policy.parameters()
        h = 1e-6
        for pi, (p, g) in enumerate(zip(params, grads)):
            idx = rng.integers(0, p.size, size=min(10, p.size))
            for j in idx:
                orig = p.flat[j]
                p.flat[j] = orig + h
                up = loss(policy)
                p.flat[j] = orig - h
                down = loss(policy)
                p.flat[j] = orig
                fd = (up - down) / (2 * h)
                assert g.flat[j] == pytest.approx(fd, rel=1e-5, abs=1e-7), (
                    pi,
                    j,
                )


def test_parameter_count_matches_closed_form():
    policy = ActorCritic(235, 12)
    want = 0
    for sizes in ((235, 512, 256, 128, 12), (235, 512, 256, 128, 1)):
        want += sum(a * b + b for a, b in zip(sizes, sizes[1:]))
    want += 12
    assert policy.parameter_count() == want
    assert policy.expected_parameter_count() == want


def test_sampling_deterministic_given_rng_state():
    policy = make_policy(dtype=np.float32)
    obs = substream(2, "obs").standard_normal((4, 6)).astype(np.float32)
    mean, _ = policy.forward(obs)
    a1 = sample_actions(mean, policy.log_std, substream(7, "act"))
    a2 = sample_actions(mean, policy.log_std, substream(7, "act"))
    assert np.array_equal(a1, a2)


def test_checkpoint_round_trip_bit_identical(tmp_path):
    policy = ActorCritic(235, 12).initialize(substream(42, "policy-init"))
    path = tmp_path / "policy.ckpt"
    meta = CheckpointMeta(iteration=17, seed=42, scenario="easy2hard")
    save_checkpoint(path, policy, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta.iteration == 17
    assert got_meta.seed == 42
    assert got_meta.scenario == "easy2hard"
    for a, b in zip(policy.parameters(), loaded.parameters()):
        assert np.array_equal(a, b)
    obs = substream(1, "obs").standard_normal((3, 235)).astype(np.float32)
    m1, v1 = policy.forward(obs)
    m2, v2 = loaded.forward(obs)
    assert np.array_equal(m1, m2)
    assert np.array_equal(v1, v2)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_rejects_truncated(tmp_path):
    policy = ActorCritic(10, 2, hidden=(4,)).initialize(substream(0, "p"))
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, policy, CheckpointMeta())
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="parameters"):
        load_checkpoint(path)
