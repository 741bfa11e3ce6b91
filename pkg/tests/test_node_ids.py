import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idgnn.core.node_ids import IdConfig, IdDist, IdMode, assemble_input, input_dim, sample_ids
from idgnn.errors import ContractViolation, ShapeError


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 40), r=st.integers(1, 4), seed=st.integers(0, 2**20))
def test_sampled_rows_are_distinct(n, r, seed):
    ids = sample_ids(n, r, np.random.default_rng(seed))
    assert ids.values.shape == (n, r)
    assert np.unique(ids.values, axis=0).shape[0] == n


def test_uniform_ids_live_in_unit_interval():
    ids = sample_ids(500, 2, np.random.default_rng(1), IdDist.UNIFORM)
    assert ids.values.min() >= 0.0 and ids.values.max() < 1.0


def test_same_stream_same_ids():
    a = sample_ids(10, 3, np.random.default_rng(5), "normal")
    b = sample_ids(10, 3, np.random.default_rng(5), "normal")
    np.testing.assert_array_equal(a.values, b.values)


def test_seed_info_names_the_stream():
    ids = sample_ids(3, 1, np.random.default_rng(np.random.SeedSequence(9)))
    assert "entropy=9" in ids.seed_info


def test_sample_ids_rejects_empty():
    with pytest.raises(ContractViolation):
        sample_ids(0, 1, np.random.default_rng(0))


def test_rows_slice():
    ids = sample_ids(6, 2, np.random.default_rng(0))
    part = ids.rows(2, 5)
    np.testing.assert_array_equal(part.values, ids.values[2:5])
    assert part.num_nodes == 3 and part.r == 2


def test_rni_input_is_features_then_ids():
    x = np.arange(6.0).reshape(3, 2)
    ids = sample_ids(3, 4, np.random.default_rng(0))
    h = assemble_input(x, ids, IdMode.RNI)
    assert h.shape == (3, 6)
    np.testing.assert_array_equal(h.data[:, :2], x)
    np.testing.assert_array_equal(h.data[:, 2:], ids.values)


def test_featureless_rni_gets_constant_column():
    ids = sample_ids(4, 2, np.random.default_rng(0))
    h = assemble_input(None, ids, IdMode.RNI)
    np.testing.assert_array_equal(h.data[:, 0], np.ones(4))


@pytest.mark.parametrize("mode,feature_dim,expected", [
    (IdMode.NONE, 3, 3),
    (IdMode.CONSTANT, 3, 4),
    (IdMode.CONSTANT, 0, 1),
    (IdMode.RNI, 0, 17),
    (IdMode.RNI, 2, 18),
])
def test_input_dim(mode, feature_dim, expected):
    assert input_dim(feature_dim, IdConfig(id_mode=mode, id_dim=16)) == expected


def test_constant_mode_appends_ones():
    h = assemble_input(np.zeros((2, 1)), None, IdMode.CONSTANT)
    np.testing.assert_array_equal(h.data, [[0.0, 1.0], [0.0, 1.0]])


def test_rni_requires_ids():
    with pytest.raises(ContractViolation):
        assemble_input(np.zeros((2, 1)), None, IdMode.RNI)


def test_id_count_must_match_nodes():
    ids = sample_ids(3, 1, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        assemble_input(np.zeros((4, 1)), ids, IdMode.RNI)


def test_id_config_from_ini():
    cfg = IdConfig.from_ini({"Ids": {"id_mode": "constant", "id_dim": "8", "id_dist": "normal", "other": "x"}})
    assert cfg.id_mode == IdMode.CONSTANT and cfg.id_dim == 8 and cfg.id_dist == IdDist.NORMAL


def test_uniform_ids_have_unit_interval_moments():
    ids = sample_ids(1000, 8, np.random.default_rng(2024))
    assert np.unique(ids.values, axis=0).shape[0] == 1000
    assert 0.47 <= ids.values.mean() <= 0.53
    assert ids.values.var() == pytest.approx(1 / 12, abs=0.005)


def test_independent_streams_give_independent_ids():
    streams = np.random.SeedSequence(77).spawn(100)
    trials = np.stack([sample_ids(1000, 8, np.random.default_rng(s)).values for s in streams])
    for values in trials:
        assert 0.47 <= values.mean() <= 0.53
        assert values.var() == pytest.approx(1 / 12, abs=0.005)
    # each (node, channel) entry averaged over the streams behaves like a mean of 100 uniforms
    per_entry = trials.mean(axis=0)
    assert per_entry.mean() == pytest.approx(0.5, abs=0.005)
    assert per_entry.std() == pytest.approx(np.sqrt(1 / 1200), rel=0.1)
    corr = np.corrcoef(trials[0].ravel(), trials[1].ravel())[0, 1]
    assert abs(corr) < 0.05
