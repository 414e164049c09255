import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mfdrreg.data import (
    Binary,
    Continuous,
    DataError,
    Dataset,
    RiskSetIndex,
    Survival,
    read_csv,
    standardize,
    unstandardize_coefficients,
)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (12, 4), elements=st.floats(-1e3, 1e3)).filter(lambda a: np.all(a.std(axis=0) > 1e-3)))
def test_standardized_columns_have_mean_zero_and_unit_mean_square(raw):
    x, rec = standardize(raw)
    n = raw.shape[0]
    np.testing.assert_allclose(x.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose((x * x).sum(axis=0), n, rtol=1e-9)
    assert not rec.constant.any()


def test_constant_column_is_zeroed_and_flagged():
    rng = np.random.default_rng(0)
    raw = np.column_stack([rng.standard_normal(10), np.full(10, 7.0), rng.standard_normal(10)])
    x, rec = standardize(raw)
    assert rec.constant.tolist() == [False, True, False]
    assert np.all(x[:, 1] == 0)
    ds = Dataset(x, Continuous(rng.standard_normal(10)), record=rec)
    assert ds.selectable.tolist() == [True, False, True]


def test_all_penalized_constant_is_rejected():
    raw = np.column_stack([np.ones(5), np.arange(5.0)])
    with pytest.raises(DataError, match="no usable penalized features"):
        standardize(raw, penalized=[True, False])


def test_unstandardize_preserves_predictions():
    rng = np.random.default_rng(1)
    raw = rng.normal(3.0, 2.5, size=(15, 3))
    x, rec = standardize(raw)
    beta = np.array([0.4, -1.2, 0.0])
    b0 = 0.7
    beta_raw, adj = unstandardize_coefficients(beta, rec)
    np.testing.assert_allclose(raw @ beta_raw + b0 + adj, x @ beta + b0, atol=1e-12)


@pytest.mark.parametrize("make", [
    lambda: Binary([0, 1, 2]),
    lambda: Binary([1, 1, 1]),
    lambda: Continuous([1.0, np.nan]),
    lambda: Survival([1.0, -2.0], [1, 0]),
    lambda: Survival([1.0, 2.0], [0, 0]),
    lambda: Survival([1.0, 2.0], [1, 3]),
])
def test_invalid_responses_raise(make):
    with pytest.raises(DataError):
        make()


def test_risk_sets_with_ties():
    time = np.array([1.0, 2.0, 2.0, 2.0, 3.0, 4.0])
    status = np.array([1, 1, 0, 1, 0, 1.0])
    r = RiskSetIndex.build(time, status)
    assert r.event_times.tolist() == [1.0, 2.0, 4.0]
    assert r.start.tolist() == [0, 1, 5]
    assert r.count.tolist() == [1, 2, 1]
    assert r.first.tolist() == [0, 1, 1, 1, 4, 5]


def test_survival_dataset_is_sorted_and_remembers_order():
    time = np.array([3.0, 1.0, 2.0])
    ds = Dataset(np.array([[1.0], [2.0], [3.0]]), Survival(time, [1, 1, 0]))
    assert ds.response.time.tolist() == [1.0, 2.0, 3.0]
    assert ds.order.tolist() == [1, 2, 0]
    assert ds.x[:, 0].tolist() == [2.0, 3.0, 1.0]
    assert not ds.x.flags.writeable


def test_subset_keeps_standardization():
    rng = np.random.default_rng(2)
    ds = Dataset.from_raw(rng.standard_normal((20, 3)), Continuous(rng.standard_normal(20)))
    sub = ds.subset(np.arange(5))
    assert sub.record is ds.record
    np.testing.assert_array_equal(sub.x, ds.x[:5])


def test_read_csv(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("y,age,a,b\n1,50,0.1,2\n0,61,0.3,1\n1,47,-0.2,0\n0,55,0.9,3\n")
    ds = read_csv(f, "y", "binomial", unpenalized=["age"])
    assert ds.feature_names == ("age", "a", "b")
    assert ds.penalized.tolist() == [False, True, True]
    assert ds.family == "binomial"


def test_read_csv_reports_missing_cell(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("y,a\n1,0.5\n2,\n")
    with pytest.raises(DataError, match=r"row 3, column 'a'"):
        read_csv(f, "y", "gaussian")


def test_read_csv_unknown_column(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("y,a\n1,0.5\n2,1\n")
    with pytest.raises(DataError, match="not found"):
        read_csv(f, "outcome", "gaussian")
