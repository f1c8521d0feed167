import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subgroup_ope.data import (
    Dataset,
    EvalRecord,
    Trajectory,
    discounted_return,
    importance_ratio,
    load_jsonl,
    save_jsonl,
    split_dataset,
    to_records,
)
from subgroup_ope.errors import EmptyDataset, MixedWidth, ParseError, SchemaError, SupportViolation

from conftest import make_dataset


def traj(rewards=(1.0,), b=None, e=None, x0=(0.0,), tid="t"):
    k = len(rewards)
    b = [1.0] * k if b is None else b
    e = list(b) if e is None else e
    return Trajectory(tid, list(x0), [0] * k, list(rewards), list(b), list(e))


def test_discounted_return_examples():
    assert discounted_return(traj([1, 1, 1]), 1.0) == 3.0
    assert discounted_return(traj([0, 0, 1]), 0.5) == 0.25
    assert discounted_return(traj([-1]), 0.99) == -1.0
    assert discounted_return(traj([]), 0.9) == 0.0


def test_importance_ratio_examples():
    assert importance_ratio(traj([0, 0], b=[0.3, 0.7])) == 1.0
    assert importance_ratio(traj([0, 0], b=[0.25, 1.0], e=[0.5, 0.5])) == 1.0
    with pytest.raises(SupportViolation):
        importance_ratio(traj([0, 0], b=[0.5, 0.0], e=[0.5, 0.5]))
    with pytest.raises(SupportViolation):
        to_records([traj([1.0], b=[0.0], e=[0.5])], 1.0)


@given(st.lists(st.floats(0.01, 1.0), min_size=0, max_size=8))
def test_importance_ratio_identical_policies_is_one(probs):
    assert importance_ratio(traj([0.0] * len(probs), b=probs)) == 1.0


def test_trajectory_validation():
    with pytest.raises(SchemaError):
        Trajectory("x", [0.0], [0, 1], [1.0], [0.5], [0.5])
    with pytest.raises(SchemaError):
        Trajectory("x", [0.0], [0], [float("inf")], [0.5], [0.5])
    with pytest.raises(SchemaError):
        Trajectory("x", [0.0], [0], [1.0], [0.5], [-0.1])


def test_to_records_examples():
    ds = to_records([traj([1.0], x0=(0.3,))], 1.0)
    assert len(ds) == 1 and ds.g_inf == 1.0
    assert ds[0] == EvalRecord((0.3,), 1.0, 1.0)

    t1 = traj([0, 0, 1], b=[0.5, 0.5, 0.5], e=[1.0, 0.5, 0.25], x0=(1.0,))
    t2 = traj([-2.0], b=[0.25], e=[0.5], x0=(2.0,))
    ds = to_records([t1, t2], 0.5)
    assert ds.rho.tolist() == [1.0, 2.0]
    assert ds.g.tolist() == [0.25, -2.0]
    assert ds.g_inf == 2.0
    assert ds.X.tolist() == [[1.0], [2.0]]

    empty = to_records([], 0.9)
    assert len(empty) == 0 and empty.g_inf == 0.0


def test_to_records_mixed_width():
    with pytest.raises(MixedWidth):
        to_records([traj(x0=(0.0,)), traj(x0=(0.0, 1.0))], 1.0)


@given(st.lists(st.lists(st.floats(-5, 5), min_size=1, max_size=4), min_size=1, max_size=20))
def test_to_records_preserves_count_order_and_g_inf(reward_lists):
    trajs = [traj(r, x0=(float(i),)) for i, r in enumerate(reward_lists)]
    ds = to_records(trajs, 0.9)
    assert len(ds) == len(trajs)
    assert ds.X[:, 0].tolist() == list(range(len(trajs)))
    assert ds.g_inf == max(abs(r.g) for r in ds)


def test_dataset_is_read_only():
    ds = make_dataset([0.0, 1.0], [1.0, 2.0], [3.0, 4.0])
    with pytest.raises(ValueError):
        ds.rho[0] = 5.0


def test_split_examples():
    ds = make_dataset(np.arange(10.0), np.ones(10), np.arange(10.0))
    a, b = split_dataset(ds, 0.5, seed=7)
    assert len(a) == len(b) == 5
    assert sorted(a.X[:, 0].tolist() + b.X[:, 0].tolist()) == list(range(10))
    a2, b2 = split_dataset(ds, 0.5, seed=7)
    assert a.X.tolist() == a2.X.tolist() and b.X.tolist() == b2.X.tolist()

    small = make_dataset([0.0, 1.0, 2.0], [1, 1, 1], [0, 0, 0])
    a, b = split_dataset(small, 0.5, seed=0)
    assert (len(a), len(b)) == (2, 1)

    with pytest.raises(EmptyDataset):
        split_dataset(Dataset.empty(1), 0.5, 0)


def test_split_recomputes_g_inf():
    ds = make_dataset(np.arange(4.0), np.ones(4), [1.0, -10.0, 2.0, 3.0])
    a, b = split_dataset(ds, 0.5, seed=1)
    for part in (a, b):
        assert part.g_inf == np.max(np.abs(part.g))


@settings(max_examples=50)
@given(st.integers(1, 200), st.floats(0.01, 0.99), st.integers(0, 2**32))
def test_split_disjoint_cover_and_content_independent(n, fraction, seed):
    ds = make_dataset(np.arange(n, dtype=float), np.ones(n), np.zeros(n))
    other = make_dataset(np.arange(n, dtype=float) * 3 + 1, np.full(n, 2.0), np.ones(n))
    a, b = split_dataset(ds, fraction, seed)
    ids = a.X[:, 0].tolist() + b.X[:, 0].tolist()
    assert sorted(ids) == list(range(n))
    assert len(a) == int(np.floor(fraction * n + 0.5))
    # the split depends only on (N, fraction, seed)
    a2, _ = split_dataset(other, fraction, seed)
    assert ((a2.X[:, 0] - 1) / 3).tolist() == a.X[:, 0].tolist()


def test_jsonl_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    trajs = [
        Trajectory(str(i), rng.random(2).tolist(), [1, 0], rng.normal(size=2).tolist(), [0.3, 0.1 + 1e-17], [0.7, 0.0])
        for i in range(5)
    ]
    path = tmp_path / "d.jsonl"
    save_jsonl(trajs, path)
    assert load_jsonl(path) == trajs


def test_load_jsonl_examples(tmp_path):
    good = {"id": "a", "x0": [0.1], "actions": [0], "rewards": [1.0], "b_probs": [0.5], "e_probs": [0.5]}
    p = tmp_path / "three.jsonl"
    p.write_text("\n".join(json.dumps({**good, "id": str(i)}) for i in range(3)) + "\n")
    assert [t.id for t in load_jsonl(p)] == ["0", "1", "2"]

    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert load_jsonl(p) == []

    p = tmp_path / "bad_len.jsonl"
    p.write_text(json.dumps(good) + "\n" + json.dumps({**good, "rewards": [1.0, 2.0]}) + "\n")
    with pytest.raises(SchemaError) as exc:
        load_jsonl(p)
    assert exc.value.line == 2

    p = tmp_path / "bad_json.jsonl"
    p.write_text(json.dumps(good) + "\n{not json\n")
    with pytest.raises(ParseError) as exc:
        load_jsonl(p)
    assert exc.value.line == 2

    p = tmp_path / "missing.jsonl"
    p.write_text(json.dumps({k: v for k, v in good.items() if k != "e_probs"}) + "\n")
    with pytest.raises(SchemaError) as exc:
        load_jsonl(p)
    assert exc.value.field == "e_probs"

    p = tmp_path / "width.jsonl"
    p.write_text(json.dumps(good) + "\n" + json.dumps({**good, "x0": [1.0, 2.0]}) + "\n")
    with pytest.raises(SchemaError):
        load_jsonl(p)
