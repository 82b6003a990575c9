import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discrl.envs import Env, EnvSpec, EpisodeDone, mixing_matrix


def scripted_episode(spec, p0, actions, noise_draws, mix=None):
    """Independent re-simulation of the documented dynamics, one coordinate at a time."""
    D = spec.action_dim
    p, v, total = list(p0), [0.0] * D, 0.0
    for a, eps in zip(actions, noise_draws):
        ac = [min(max(x, -1.0), 1.0) for x in a]
        total += -sum(x * x for x in p) - 0.1 * sum(x * x for x in ac)
        force = ac if mix is None else [sum(mix[i][j] * ac[j] for j in range(D)) for i in range(D)]
        v = [0.9 * v[i] + 0.1 * force[i] for i in range(D)]
        p = [p[i] + 0.1 * (v[i] + spec.noise * eps[i]) for i in range(D)]
    return total


def test_reset_is_seed_deterministic():
    env = Env(EnvSpec(action_dim=3))
    assert env.reset(seed=5).tolist() == env.reset(seed=5).tolist()


def test_observation_length():
    obs = Env(EnvSpec(action_dim=3)).reset(seed=0)
    assert obs.shape == (6,)
    np.testing.assert_array_equal(obs[3:], 0.0)
    assert np.all(np.abs(obs[:3]) <= 1.0)


def test_reset_distribution():
    env = Env(EnvSpec(action_dim=2, seed=11))
    ps = np.array([env.reset()[:2] for _ in range(10000)])
    assert np.all(np.abs(ps.mean(axis=0)) < 0.03)


@pytest.mark.parametrize("family", ["point_mass", "coupled_chain"])
def test_origin_is_fixed_point(family):
    env = Env(EnvSpec(family, action_dim=3, noise=0.0))
    env.set_state(np.zeros(3))
    total = 0.0
    for _ in range(200):
        obs, r, done = env.step(np.zeros(3))
        total += r
    assert total == 0.0 and done
    np.testing.assert_array_equal(obs, 0.0)


def test_reward_of_unit_offset():
    env = Env(EnvSpec(action_dim=3, noise=0.0))
    env.set_state([1.0, 0.0, 0.0])
    assert env.step(np.zeros(3))[1] == -1.0


def test_zero_policy_from_origin_with_noise_is_small():
    env = Env(EnvSpec(action_dim=4, noise=0.01, seed=3))
    env.set_state(np.zeros(4))
    total, done = 0.0, False
    while not done:
        _, r, done = env.step(np.zeros(4))
        total += r
    assert -0.5 < total <= 0.0


@pytest.mark.parametrize("family", ["point_mass", "coupled_chain"])
def test_episode_matches_scripted_simulation(family):
    spec = EnvSpec(family, action_dim=3, noise=0.01, seed=9)
    env = Env(spec)
    p0 = env.reset()[:3].tolist()
    rng = np.random.default_rng(1)
    actions = rng.normal(0, 1.5, size=(200, 3))
    total = 0.0
    for a in actions:
        total += env.step(a)[1]
    # replay the env's own noise stream: a uniform reset draw, then one normal vector per step
    noise_rng = np.random.default_rng(9)
    noise_rng.uniform(-1, 1, size=3)
    draws = noise_rng.standard_normal((200, 3))
    mix = mixing_matrix(3).tolist() if family == "coupled_chain" else None
    assert abs(total - scripted_episode(spec, p0, actions.tolist(), draws.tolist(), mix)) < 1e-10


def test_step_after_done():
    env = Env(EnvSpec(action_dim=1, episode_cap=2))
    env.reset(seed=0)
    env.step([0.0])
    assert env.step([0.0])[2]
    with pytest.raises(EpisodeDone):
        env.step([0.0])


def test_step_before_reset():
    with pytest.raises(EpisodeDone):
        Env(EnvSpec(action_dim=1)).step([0.0])


def test_bad_action_shape():
    env = Env(EnvSpec(action_dim=2))
    env.reset(seed=0)
    with pytest.raises(ValueError):
        env.step(np.zeros(3))


@pytest.mark.parametrize("kwargs", [dict(action_dim=0), dict(episode_cap=0), dict(noise=-1.0),
                                    dict(family="hopper")])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        EnvSpec(**kwargs)


def test_mixing_is_orthogonal_and_independent_of_seed():
    m = mixing_matrix(5)
    np.testing.assert_allclose(m @ m.T, np.eye(5), atol=1e-12)
    a = Env(EnvSpec("coupled_chain", action_dim=5, seed=1)).mix
    b = Env(EnvSpec("coupled_chain", action_dim=5, seed=2)).mix
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), D=st.integers(1, 6),
       family=st.sampled_from(["point_mass", "coupled_chain"]))
def test_rewards_nonpositive_and_trajectories_reproducible(seed, D, family):
    spec = EnvSpec(family, action_dim=D, episode_cap=50, seed=seed)
    acts = np.random.default_rng(seed).normal(0, 2, size=(50, D))
    runs = []
    for _ in range(2):
        env = Env(spec)
        env.reset()
        runs.append([env.step(a)[:2] for a in acts])
    for (o1, r1), (o2, r2) in zip(*runs):
        assert r1 <= 0.0 and r1 == r2 and o1.tobytes() == o2.tobytes()


def test_dimension_only_changes_shape():
    # a single coordinate behaves identically whatever D is
    for D in (1, 4):
        env = Env(EnvSpec(action_dim=D, noise=0.0))
        env.set_state(np.r_[0.5, np.zeros(D - 1)])
        obs = None
        for _ in range(10):
            obs, _, _ = env.step(np.r_[0.7, np.zeros(D - 1)])
        if D == 1:
            ref = obs[0]
        else:
            assert obs[0] == ref
