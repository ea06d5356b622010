import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streetwise.data import (
    Dataset,
    compute_normalization,
    deserialize_dataset,
    load_dataset,
    save_dataset,
    serialize_dataset,
)
from streetwise.errors import ConfigError, ContractError, ModelLoadError


def toy_dataset(n=10, obs_dim=3, act_dim=2, starts=(0, 4), seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        obs=rng.normal(size=(n, obs_dim)),
        act=rng.uniform(-1, 1, size=(n, act_dim)),
        rew=rng.uniform(0, 5, size=n),
        next_obs=rng.normal(size=(n, obs_dim)),
        done=np.zeros(n, dtype=bool),
        episode_starts=starts,
        metadata={"env": "netsim", "note": "toy"},
    )


def test_length_and_dims():
    ds = toy_dataset()
    assert len(ds) == 10
    assert ds.obs_dim == 3 and ds.act_dim == 2
    assert ds.n_episodes == 2


def test_episode_slices():
    ds = toy_dataset(starts=(0, 4, 7))
    assert ds.episode_slices() == [slice(0, 4), slice(4, 7), slice(7, 10)]


def test_transition_accessor():
    ds = toy_dataset()
    tr = ds.transition(3)
    assert np.array_equal(tr.state, ds.obs[3])
    assert tr.reward == ds.rew[3]
    assert tr.done == bool(ds.done[3])


def test_validation_rejects_bad_shapes():
    ds = toy_dataset()
    with pytest.raises(ContractError):
        Dataset(ds.obs, ds.act[:-1], ds.rew, ds.next_obs, ds.done, (0,))
    with pytest.raises(ContractError):
        Dataset(ds.obs, ds.act, ds.rew, ds.next_obs[:, :2], ds.done, (0,))


def test_validation_rejects_nonfinite():
    ds = toy_dataset()
    bad = ds.obs.copy()
    bad[2, 1] = np.nan
    with pytest.raises(ContractError):
        Dataset(bad, ds.act, ds.rew, ds.next_obs, ds.done, (0,))


def test_validation_rejects_bad_starts():
    ds = toy_dataset()
    with pytest.raises(ContractError):
        Dataset(ds.obs, ds.act, ds.rew, ds.next_obs, ds.done, (1, 4))
    with pytest.raises(ContractError):
        Dataset(ds.obs, ds.act, ds.rew, ds.next_obs, ds.done, (0, 4, 4))
    with pytest.raises(ContractError):
        Dataset(ds.obs, ds.act, ds.rew, ds.next_obs, ds.done, (0, 10))


def test_normalization_stats():
    obs = np.array([[0.0, 5.0], [2.0, 5.0], [4.0, 5.0]])
    mean, std = compute_normalization(obs)
    assert mean == pytest.approx([2.0, 5.0])
    assert std[0] == pytest.approx(np.std(obs[:, 0]))
    assert std[1] >= 1e-6  # constant feature floored


def test_roundtrip_bit_exact():
    ds = toy_dataset(n=23, starts=(0, 9, 15))
    blob = serialize_dataset(ds)
    back = deserialize_dataset(blob)
    assert np.array_equal(back.obs, ds.obs)
    assert np.array_equal(back.act, ds.act)
    assert np.array_equal(back.rew, ds.rew)
    assert np.array_equal(back.next_obs, ds.next_obs)
    assert np.array_equal(back.done, ds.done)
    assert back.episode_starts == ds.episode_starts
    assert back.metadata == ds.metadata


def test_serialization_deterministic():
    a = serialize_dataset(toy_dataset(seed=5))
    b = serialize_dataset(toy_dataset(seed=5))
    assert a == b


def test_file_roundtrip(tmp_path):
    ds = toy_dataset()
    path = tmp_path / "d.swds"
    save_dataset(path, ds)
    back = load_dataset(path)
    assert np.array_equal(back.obs, ds.obs)


def test_load_missing_file():
    with pytest.raises(ConfigError):
        load_dataset("/nonexistent/d.swds")


def test_bad_magic_and_truncation():
    blob = serialize_dataset(toy_dataset())
    with pytest.raises(ModelLoadError):
        deserialize_dataset(b"XXXX" + blob[4:])
    for cut in (0, 3, 11, len(blob) // 2, len(blob) - 5):
        with pytest.raises(ModelLoadError):
            deserialize_dataset(blob[:cut])
    with pytest.raises(ModelLoadError):
        deserialize_dataset(blob + b"\x00")


@given(
    n=st.integers(1, 40),
    obs_dim=st.integers(1, 6),
    act_dim=st.integers(1, 3),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=30, deadline=None)
def test_roundtrip_property(n, obs_dim, act_dim, seed):
    rng = np.random.default_rng(seed)
    n_eps = int(rng.integers(1, min(n, 4) + 1))
    starts = (0, *sorted(rng.choice(np.arange(1, n), size=n_eps - 1, replace=False))) if n_eps > 1 else (0,)
    ds = Dataset(
        obs=rng.normal(size=(n, obs_dim)),
        act=rng.uniform(-1, 1, size=(n, act_dim)),
        rew=rng.uniform(0, 5, size=n),
        next_obs=rng.normal(size=(n, obs_dim)),
        done=rng.random(n) < 0.1,
        episode_starts=tuple(int(s) for s in starts),
    )
    back = deserialize_dataset(serialize_dataset(ds))
    assert np.array_equal(back.obs, ds.obs)
    assert np.array_equal(back.done, ds.done)
    assert back.episode_starts == ds.episode_starts
