import numpy as np
import pytest

from streetwise.behavior import UkfBehavior
from streetwise.errors import ConfigError
from streetwise.evaluate import (
    BehaviorEstimator,
    EvalResult,
    EvalScenario,
    PolicyEstimator,
    StreetwiseEstimator,
    UkfEstimator,
    build_eval_env,
    evaluate_policy,
)
from streetwise.netsim import NetsimEnv
from streetwise.physenv import PhysEnv

from test_shaping import tiny_agent, tiny_detector, OBS_DIM  # noqa: F401


STABLE = EvalScenario(name="stable", family="stable", episode_len=80)


class ConstantEstimator:
    """Fixed action; used to probe the evaluation protocol itself."""

    name = "constant"

    def __init__(self, value, dims=1):
        self.value = value
        self.dims = dims

    def reset(self, env, rng):
        pass

    def act(self, obs, env):
        return np.full(self.dims, self.value)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        EvalScenario(name="x", env="minecraft")
    with pytest.raises(ConfigError):
        EvalScenario(name="x", family="not-a-family")


def test_same_episode_index_gives_identical_env():
    e1 = build_eval_env(STABLE, episode_index=3, master_seed=11)
    e2 = build_eval_env(STABLE, episode_index=3, master_seed=11)
    assert isinstance(e1, NetsimEnv)
    assert e1.profile == e2.profile
    r1, r2 = [], []
    for env, acc in ((e1, r1), (e2, r2)):
        obs = env.reset_observation()
        while not env.done:
            obs, rew = env.step(0.25)
            acc.append(rew)
    assert r1 == r2


def test_different_episode_index_varies_conditions():
    profiles = {build_eval_env(STABLE, i, 11).profile.base_capacity for i in range(6)}
    assert len(profiles) > 1


def test_paired_conditions_across_estimators():
    res_a = evaluate_policy(ConstantEstimator(0.25), STABLE, 3, master_seed=5)
    res_b = evaluate_policy(ConstantEstimator(0.25), STABLE, 3, master_seed=5)
    assert np.array_equal(res_a.returns, res_b.returns)


def test_zero_magnitude_disturbance_is_bit_identical_to_clean():
    clean = EvalScenario(name="c", family="random-loss", episode_len=80)
    zero = EvalScenario(
        name="z",
        family="random-loss",
        disturbance_kind="capacity-scale",
        disturbance_magnitude=0.0,
        episode_len=80,
    )
    r_clean = evaluate_policy(UkfEstimator(), clean, 3, master_seed=9)
    r_zero = evaluate_policy(UkfEstimator(), zero, 3, master_seed=9)
    assert np.array_equal(r_clean.returns, r_zero.returns)


def test_returns_are_per_episode_mean_reward():
    res = evaluate_policy(ConstantEstimator(0.1), STABLE, 1, master_seed=3)
    env = build_eval_env(STABLE, 0, 3)
    obs = env.reset_observation()
    rewards = []
    while not env.done:
        obs, rew = env.step(0.1)
        rewards.append(rew)
    assert res.returns[0] == pytest.approx(np.mean(rewards), abs=1e-12)


def test_result_stats():
    res = EvalResult("e", "s", 0, returns=np.array([1.0, 3.0]))
    assert res.mean_return == 2.0
    assert res.std_return == 1.0


def test_bad_episode_count():
    with pytest.raises(ConfigError):
        evaluate_policy(ConstantEstimator(0.0), STABLE, 0, master_seed=1)


def test_traces_optional():
    res = evaluate_policy(ConstantEstimator(0.0), STABLE, 2, master_seed=1, keep_traces=False)
    assert res.traces == []
    res = evaluate_policy(ConstantEstimator(0.0), STABLE, 2, master_seed=1)
    assert len(res.traces) == 2
    assert set(res.traces[0][0]) == {
        "time", "capacity", "send_rate", "receive_rate", "loss", "delay", "action", "reward",
    }


def test_behavior_estimator_adapter():
    res = evaluate_policy(BehaviorEstimator(UkfBehavior()), STABLE, 2, master_seed=4)
    assert len(res.returns) == 2
    assert np.all(res.returns > 0)


def test_phys_scenarios():
    clean = EvalScenario(name="p", env="phys", episode_len=50)
    env = build_eval_env(clean, 0, 7)
    assert isinstance(env, PhysEnv)
    spiky = EvalScenario(name="pv", env="phys", disturbance_kind="viscosity", episode_len=50)
    env2 = build_eval_env(spiky, 0, 7)
    vs = [env2.schedule.at(t) for t in range(50)]
    assert len(set(vs)) > 1  # generated schedule varies
    res = evaluate_policy(ConstantEstimator(0.3, dims=2), spiky, 2, master_seed=7)
    assert len(res.returns) == 2
    assert set(res.traces[0][0]) == {
        "time", "viscosity", "velocity_x", "velocity_y", "action", "reward",
    }


def test_streetwise_estimator_logs_every_step():
    agent = tiny_agent(seed=1)
    det = tiny_detector(seed=2)
    # detector and agent widths must agree with the env; use synthetic 3-dim
    # obs instead of netsim: drive the estimator directly
    est = StreetwiseEstimator(agent, det)
    rng = np.random.default_rng(0)
    est.shaping_log = []
    est.reset(None, rng)
    for _ in range(12):
        est.act(rng.normal(size=OBS_DIM), None)
    est.reset(None, rng)
    for _ in range(12):
        est.act(rng.normal(size=OBS_DIM), None)
    assert len(est.shaping_log) == 24
    # warm-up rows carry rho_norm = 0 (third CSV field)
    for row in est.shaping_log[: det.k - 1]:
        assert row.split(",")[2] == "0"


def test_estimator_names():
    agent = tiny_agent(seed=3)
    assert PolicyEstimator(agent).name == "iql"
    assert UkfEstimator().name == "ukf"
    assert StreetwiseEstimator(agent, tiny_detector()).name == "streetwise(0.05)"
    assert StreetwiseEstimator(agent, None).name == "streetwise-ungated(0.05)"
