import math

import numpy as np
import pytest

from ctn.autograd import ContractViolation
from ctn.data import DotAnnotations, render_density
from ctn.metrics import EvalRecord, count_of, kfold_splits, mae, records_csv, records_table, rmse


def recs(ys, yhats):
    return [EvalRecord(f"i{n}", y, yh) for n, (y, yh) in enumerate(zip(ys, yhats))]


def test_hand_computed_values():
    r = recs([10, 20], [12.0, 16.0])
    assert mae(r) == 3.0
    assert rmse(r) == math.sqrt(10.0)


def test_perfect_predictions():
    r = recs([3, 7, 0], [3.0, 7.0, 0.0])
    assert mae(r) == 0.0 and rmse(r) == 0.0


def test_single_record():
    r = recs([5], [7.5])
    assert mae(r) == rmse(r) == 2.5


def test_empty_rejected():
    with pytest.raises(ContractViolation):
        mae([])
    with pytest.raises(ContractViolation):
        rmse([])


def test_rmse_dominates_mae():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        r = recs(rng.integers(0, 500, size=n), rng.uniform(0, 500, size=n))
        assert rmse(r) >= mae(r)


def test_permutation_invariant():
    rng = np.random.default_rng(1)
    r = recs(rng.integers(0, 100, size=40), rng.uniform(0, 100, size=40))
    shuffled = [r[i] for i in rng.permutation(40)]
    assert mae(shuffled) == mae(r) and rmse(shuffled) == rmse(r)


def test_count_of_examples():
    assert count_of(np.zeros((5, 5))) == 0.0
    dens = render_density(DotAnnotations([[20.0, 20.0], [40.0, 30.0], [30.0, 45.0]]), 64, 64)
    assert count_of(dens) == pytest.approx(3.0, abs=3e-3)


def test_kfold_fifty_ids():
    ids = [f"img{i:02d}" for i in range(50)]
    plan = kfold_splits(ids, 5, seed=0)
    folds = [plan.fold(i) for i in range(5)]
    assert [len(f) for f in folds] == [10] * 5
    assert sorted(sum(folds, [])) == ids
    assert set(plan.train_ids(0)) == set(ids) - set(folds[0])


def test_kfold_deterministic_and_balanced():
    ids = [str(i) for i in range(23)]
    assert kfold_splits(ids, 4, seed=3) == kfold_splits(ids, 4, seed=3)
    sizes = [len(kfold_splits(ids, 4, seed=3).fold(i)) for i in range(4)]
    assert max(sizes) - min(sizes) <= 1


def test_kfold_errors():
    with pytest.raises(ContractViolation):
        kfold_splits(["a", "b"], 3)
    with pytest.raises(ContractViolation):
        kfold_splits(["a", "a", "b"], 2)


def test_csv_and_table():
    r = recs([10, 20], [12.0, 16.0])
    assert records_csv(r) == "image_id,y,y_hat,abs_error\ni0,10,12.0,2.0\ni1,20,16.0,4.0\n"
    table = records_table(r)
    assert "MAE 3.0000" in table and "RMSE 3.1623" in table
