import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mempredict.errors import EmptyTrainingSet, InvalidConfig, MissingLabel
from mempredict.featurization import (
    OTHER,
    EncoderSnapshot,
    FeatureSelection,
    bin_to_request_mib,
    build_dictionary,
    encode_dataset,
    encode_jobs,
    fit_encoder,
    memory_to_bin,
)

from conftest import make_job


@pytest.mark.parametrize("mem,expected", [(0.0, 0), (511.9, 0), (512.0, 1), (1500.0, 2), (1e9, 256)])
def test_memory_to_bin(mem, expected):
    assert memory_to_bin(mem) == expected


def test_request_is_upper_edge():
    assert bin_to_request_mib(0) == 512.0
    assert bin_to_request_mib(2) == 1536.0


@given(st.floats(min_value=0.0, max_value=256 * 512 - 1e-6, allow_nan=False))
def test_request_covers_usage(mem):
    assert bin_to_request_mib(memory_to_bin(mem)) >= mem


def test_selection_validation():
    with pytest.raises(InvalidConfig):
        FeatureSelection(categorical=("colour",))
    with pytest.raises(InvalidConfig):
        FeatureSelection(categorical=(), numeric=())
    sel = FeatureSelection(categorical=("queue", "user"), numeric=("req_procs",))
    assert sel.ordered() == (("user", "queue"), ("req_procs",))


def test_dictionary_frequency_order_and_cap():
    jobs = [make_job(i, user=u) for i, u in enumerate(["b", "a", "b", "c", "a", "b", "d"])]
    d = build_dictionary(jobs, FeatureSelection(), cardinality_cap=3)
    # b:3, then a:2, then the tie c/d broken lexicographically
    assert d.ids["user"] == {"b": 0, "a": 1, "c": 2}
    assert d.lookup("user", "d") == 3
    assert d.lookup("user", "zzz") == 3


def test_one_hot_and_other_column():
    jobs = [make_job(i, user=u) for i, u in enumerate(["a", "b", "a"])]
    snap = fit_encoder(jobs)
    rows = encode_jobs([make_job(9, user="never-seen")], snap)
    cols = list(snap.columns)
    assert rows.raw[0, cols.index(f"user={OTHER}")] == 1.0
    assert rows.raw[0, cols.index("user=a")] == 0.0


def test_zscore_uses_population_std():
    jobs = [make_job(i, priority=p) for i, p in enumerate([1, 2, 3])]
    snap = fit_encoder(jobs)
    assert snap.stds["priority"] == pytest.approx(0.816496580927726, abs=1e-15)
    col = snap.columns.index("priority")
    ds = encode_dataset(jobs, snap)
    np.testing.assert_allclose(ds.X[:, col], np.array([-1.0, 0.0, 1.0]) / 0.816496580927726)
    assert (ds.X_raw[:, col] == [1, 2, 3]).all()


def test_constant_column_encodes_as_zero():
    jobs = [make_job(i) for i in range(4)]
    snap = fit_encoder(jobs)
    ds = encode_dataset(jobs, snap)
    assert (ds.X[:, snap.columns.index("req_procs")] == 0.0).all()


def test_errors():
    with pytest.raises(EmptyTrainingSet):
        fit_encoder([])
    with pytest.raises(MissingLabel):
        fit_encoder([make_job(0, finish_time=None, max_mem_mib=None)])


def test_snapshot_roundtrip(small_trace):
    snap = fit_encoder(small_trace[:500])
    again = EncoderSnapshot.from_dict(snap.to_dict())
    a = encode_jobs(small_trace[500:600], snap)
    b = encode_jobs(small_trace[500:600], again)
    assert (a.normalized == b.normalized).all() and (a.raw == b.raw).all()


def test_labels_and_ids(small_trace):
    snap = fit_encoder(small_trace[:100])
    ds = encode_dataset(small_trace[:100], snap)
    assert ds.job_ids == [j.job_id for j in small_trace[:100]]
    assert list(ds.y) == [memory_to_bin(j.max_mem_mib) for j in small_trace[:100]]
    sub = ds.subset([3, 1])
    assert sub.job_ids == [ds.job_ids[3], ds.job_ids[1]]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=30))
def test_exactly_one_hot_per_feature(users):
    jobs = [make_job(i, user=u) for i, u in enumerate(users)]
    snap = fit_encoder(jobs[: max(1, len(jobs) // 2)])
    rows = encode_jobs(jobs, snap).raw
    start = 0
    cats, _ = snap.selection.ordered()
    for feat in cats:
        width = snap.dictionary.cardinality(feat) + 1
        assert (rows[:, start:start + width].sum(axis=1) == 1).all()
        start += width
