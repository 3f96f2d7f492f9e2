import numpy as np
import pytest

from xea import data


def test_schema_layout(schema):
    assert schema.size == 64
    seen = []
    for group in data.GROUP_ORDER:
        start, end = schema.groups[group]
        assert end - start == data.DEFAULT_WIDTHS[group]
        seen.append((start, end))
    # contiguous canonical order
    assert seen == sorted(seen)
    assert seen[0][0] == 0 and seen[-1][1] == schema.size
    for i in schema.group_indices("strings"):
        assert schema.is_simplex(i)
        assert (schema.features[i].lo, schema.features[i].hi) == (0.0, 1.0)


def test_schema_rejects_bad_widths():
    with pytest.raises(data.SchemaError):
        data.make_schema({"no_such_group": 4})
    with pytest.raises(data.SchemaError):
        data.make_schema({"strings": 0})


def test_generated_rows_satisfy_schema(schema, small_dataset):
    for i in range(0, small_dataset.n_samples, 97):
        data.validate_vector(schema, small_dataset.X[i])


def test_validate_vector_rejections(schema, small_dataset):
    x = np.array(small_dataset.X[0])
    with pytest.raises(data.SchemaError):
        data.validate_vector(schema, x[:-1])
    bad = x.copy()
    bad[list(schema.group_indices("strings"))[0]] += 0.5  # breaks the simplex sum
    with pytest.raises(data.SchemaError):
        data.validate_vector(schema, bad)
    bad = x.copy()
    bad[list(schema.group_indices("imports"))[0]] = 1.5  # counts must be integers
    with pytest.raises(data.SchemaError):
        data.validate_vector(schema, bad)
    bad = x.copy()
    bad[0] = np.nan
    with pytest.raises(data.SchemaError):
        data.validate_vector(schema, bad)


def test_generate_basics(schema, small_dataset):
    ds = small_dataset
    assert ds.n_samples == 1500
    assert len(ds.informative_indices) == 8
    assert ds.y.sum() == 750  # balance 0.5
    again = data.generate(schema, 1500, 8, seed=7)
    np.testing.assert_array_equal(ds.X, again.X)
    np.testing.assert_array_equal(ds.y, again.y)
    other = data.generate(schema, 1500, 8, seed=8)
    assert not np.array_equal(ds.X, other.X)


@pytest.mark.parametrize("seed", [7, 0, 42, 3])
def test_informative_separation(schema, seed):
    """Every planted feature separates the classes by at least 1.5 pooled sd."""
    ds = data.generate(schema, 4000, 12, seed=seed)
    mal = ds.y == 1
    for i in ds.informative_indices:
        a, b = ds.X[mal, i], ds.X[~mal, i]
        sep = abs(a.mean() - b.mean()) / np.sqrt((a.var() + b.var()) / 2)
        assert sep >= 1.5, f"feature {i} separation {sep:.3f}"


def test_informative_stump_accuracy(schema, small_dataset):
    """A one-feature threshold on any planted feature beats chance clearly;
    a null feature does not."""
    ds = small_dataset
    mal = ds.y == 1

    def stump_acc(i):
        thr = (ds.X[mal, i].mean() + ds.X[~mal, i].mean()) / 2
        up = ds.X[mal, i].mean() > ds.X[~mal, i].mean()
        pred = (ds.X[:, i] > thr) if up else (ds.X[:, i] <= thr)
        return (pred == mal).mean()

    for i in ds.informative_indices:
        assert stump_acc(i) > 0.70
    null = next(i for i in range(schema.size) if i not in ds.informative_indices)
    assert stump_acc(null) < 0.60


def test_split_disjoint_exhaustive(small_dataset):
    a, b = data.split(small_dataset, 0.6, seed=1)
    assert a.n_samples + b.n_samples == small_dataset.n_samples
    rows = {tuple(r) for r in small_dataset.X}
    rows_a = {tuple(r) for r in a.X}
    rows_b = {tuple(r) for r in b.X}
    assert rows_a | rows_b == rows
    assert not rows_a & rows_b
    # label-stratified within one sample
    assert abs(a.y.mean() - small_dataset.y.mean()) < 0.01


def test_sample_feature_mask(schema):
    m = data.sample_feature_mask(schema, 0.5, seed=2)
    assert m.popcount == 32
    again = data.sample_feature_mask(schema, 0.5, seed=2)
    np.testing.assert_array_equal(m.bits, again.bits)
    other = data.sample_feature_mask(schema, 0.5, seed=3)
    assert not np.array_equal(m.bits, other.bits)
    assert (m & other).popcount <= min(m.popcount, other.popcount)


def test_dataset_roundtrip(tmp_path, small_dataset):
    path = tmp_path / "ds.txt"
    data.save_dataset(small_dataset, path)
    back = data.load_dataset(path)
    np.testing.assert_allclose(back.X, small_dataset.X, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(back.y, small_dataset.y)
    assert back.informative_indices == small_dataset.informative_indices


def test_mask_roundtrip(tmp_path, schema):
    m = data.sample_feature_mask(schema, 0.5, seed=2)
    path = tmp_path / "mask.txt"
    data.save_mask(m, path)
    np.testing.assert_array_equal(data.load_mask(path).bits, m.bits)


def test_load_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("not a dataset\n")
    with pytest.raises(data.FormatError):
        data.load_dataset(bad)
    with pytest.raises(data.FormatError):
        data.load_mask(bad)
