import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learncollide.dataset import (
    LabeledDataset,
    SplitSpec,
    dataset_metadata,
    read_dataset,
    sample_dataset,
    scale_targets,
    split,
    split_indices,
    write_dataset,
)
from learncollide.geometry import Environment, generate_environment, measure_collision_density
from learncollide.kinematics import desk_robot, fk_features_batch


@pytest.fixture(scope="module")
def env():
    return generate_environment(1, 8, 4, "far")


def test_exact_row_count(env):
    ds = sample_dataset(env, 5000, 0)
    assert len(ds) == 5000 and ds.configurations.shape == (5000, 7)


def test_single_row_obstacle_free_is_free():
    env = Environment((desk_robot(),), ())
    q0 = np.zeros((1, 7))
    from learncollide.geometry import label_configurations
    assert label_configurations(env, q0)[0] == -1
    ds = sample_dataset(env, 1, 0)
    assert len(ds) == 1


def test_label_mean_matches_density_within_three_standard_errors(env):
    ds = sample_dataset(env, 10_000, 1)
    p = measure_collision_density(env, 10_000, 2)
    se = math.sqrt(2 * p * (1 - p) / 10_000)
    assert abs(ds.collision_fraction - p) < 3 * se


def test_sampling_marginals(env):
    ds = sample_dataset(env, 10_000, 3)
    # uniform on [-pi, pi]: standard error of the mean is pi / sqrt(3 n)
    se = math.pi / math.sqrt(3 * 10_000)
    assert np.all(np.abs(ds.configurations.mean(axis=0)) < 3 * se + 1e-3)


def test_sampling_deterministic(env):
    a = sample_dataset(env, 300, 9)
    b = sample_dataset(env, 300, 9)
    np.testing.assert_array_equal(a.configurations, b.configurations)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.configurations, sample_dataset(env, 300, 10).configurations)


def test_split_sizes_and_partition():
    tr, va = split_indices(1000, SplitSpec(0.95, 3))
    assert (len(tr), len(va)) == (950, 50)
    assert set(tr) | set(va) == set(range(1000))
    assert not set(tr) & set(va)
    tr2, va2 = split_indices(1000, SplitSpec(0.95, 3))
    np.testing.assert_array_equal(tr, tr2)
    np.testing.assert_array_equal(va, va2)


def test_split_rejects_empty_validation():
    with pytest.raises(ValueError):
        split_indices(10, SplitSpec(0.95, 0))
    with pytest.raises(ValueError):
        SplitSpec(1.0)
    with pytest.raises(ValueError):
        SplitSpec(0.0)


def test_split_keeps_rows_together(env):
    ds = sample_dataset(env, 200, 0)
    ds.features(env)
    tr, va = split(ds, SplitSpec(0.9, 1))
    assert len(tr) == 180 and len(va) == 20
    np.testing.assert_array_equal(tr.fk_features, fk_features_batch(env.robots, tr.configurations))


def test_scale_targets_examples():
    np.testing.assert_array_equal(scale_targets([-1, 1, 1], 5.0), [-1, 5, 5])
    np.testing.assert_array_equal(scale_targets([-1, 1, -1], 1.0), [-1, 1, -1])
    np.testing.assert_array_equal(scale_targets([1, -1], 500.0), [500, -1])
    with pytest.raises(ValueError):
        scale_targets([1], 0.0)
    with pytest.raises(ValueError):
        scale_targets([1], -2.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=50), st.floats(0.01, 1000))
def test_scale_targets_properties(labels, beta):
    out = scale_targets(labels, beta)
    np.testing.assert_array_equal(np.sign(out), labels)
    np.testing.assert_array_equal(scale_targets(scale_targets(labels, 1.0), 1.0), labels)


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_file_round_trip_is_exact(env, tmp_path, suffix):
    ds = sample_dataset(env, 257, 5)
    path = tmp_path / f"d{suffix}"
    write_dataset(ds, path)
    back = read_dataset(path, ds.env_ref)
    assert back.configurations.tobytes() == ds.configurations.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.env_ref == ds.env_ref


def test_csv_header_and_format(env, tmp_path):
    ds = sample_dataset(env, 3, 0)
    write_dataset(ds, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "q0,q1,q2,q3,q4,q5,q6,y"
    assert len(lines) == 4
    assert lines[1].rsplit(",", 1)[1] in {"1", "-1"}


def test_binary_header(env, tmp_path):
    ds = sample_dataset(env, 4, 0)
    write_dataset(ds, tmp_path / "d.bin")
    raw = (tmp_path / "d.bin").read_bytes()
    assert raw[:4] == b"CSL1"
    assert len(raw) == 4 + 16 + 4 * 7 * 8 + 4


def test_bad_files_rejected(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_dataset(tmp_path / "bad.csv")
    (tmp_path / "bad2.csv").write_text("q0,y\n0.5,3\n")
    with pytest.raises(ValueError):
        read_dataset(tmp_path / "bad2.csv")


def test_metadata_fields(env):
    ds = sample_dataset(env, 100, 2)
    meta = dataset_metadata(ds, 2)
    assert {"env_ref", "n", "seed", "density_estimate"} <= set(meta)
    assert meta["n"] == 100 and meta["env_ref"] == env.fingerprint()
    assert meta["density_estimate"] == ds.collision_fraction


def test_invalid_dataset_rejected():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 2)), np.array([1, -1]))
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 2)), np.array([1, 0]))
