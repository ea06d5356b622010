import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from streetwise.nn import (
    LstmAeArch,
    MlpArch,
    deserialize_params,
    init_lstm_ae,
    init_mlp,
    mlp_forward,
    serialize_params,
)


@st.composite
def mlp_arch(draw):
    depth = draw(st.integers(min_value=2, max_value=4))
    sizes = tuple(draw(st.integers(min_value=1, max_value=6)) for _ in range(depth))
    return MlpArch(sizes)


@settings(max_examples=50, deadline=None)
@given(arch=mlp_arch(), seed=st.integers(min_value=0, max_value=2**31 - 1))
def test_forward_is_pure_function_of_params_and_input(arch, seed):
    rng = np.random.default_rng(seed)
    ps = init_mlp(arch, rng)
    x = rng.normal(size=arch.in_dim)
    assert np.array_equal(mlp_forward(ps, x), mlp_forward(ps, x))


@settings(max_examples=50, deadline=None)
@given(arch=mlp_arch(), seed=st.integers(min_value=0, max_value=2**31 - 1))
def test_serialize_roundtrip_preserves_values(arch, seed):
    ps = init_mlp(arch, np.random.default_rng(seed))
    back = deserialize_params(serialize_params(ps))
    assert back.arch == ps.arch
    assert np.array_equal(back.values, ps.values)


@settings(max_examples=20, deadline=None)
@given(
    input_dim=st.integers(min_value=1, max_value=4),
    hidden=st.integers(min_value=1, max_value=5),
    bottleneck=st.integers(min_value=1, max_value=4),
    layers=st.integers(min_value=1, max_value=3),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_lstm_roundtrip_preserves_values(input_dim, hidden, bottleneck, layers, seed):
    arch = LstmAeArch(input_dim, hidden, bottleneck, layers)
    ps = init_lstm_ae(arch, np.random.default_rng(seed))
    back = deserialize_params(serialize_params(ps))
    assert back.arch == ps.arch
    assert np.array_equal(back.values, ps.values)
