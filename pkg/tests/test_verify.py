import numpy as np
import pytest

from cirche.verify import (
    SUITES,
    SuiteResult,
    circulant_block,
    dense_conv,
    dense_matmul,
    run_suite,
    run_suites,
    schoolbook_cyclic,
    schoolbook_negacyclic,
)


def test_oracles_small_cases():
    assert schoolbook_cyclic([1, 2], [3, 4], 97).tolist() == [11, 10]
    assert schoolbook_negacyclic([1, 2], [3, 4], 97).tolist() == [(3 - 8) % 97, 10]
    assert circulant_block([1, 2, 3]).tolist() == [[1, 3, 2], [2, 1, 3], [3, 2, 1]]
    assert dense_matmul([[1, 2], [2, 1]], [[3], [4]], 97).tolist() == [[11], [10]]
    k = np.ones((1, 1, 2, 2), dtype=np.int64)
    x = np.arange(9).reshape(1, 3, 3)
    assert dense_conv(k, x, 97).tolist() == [[[8, 12], [20, 24]]]


@pytest.mark.parametrize("name", SUITES)
def test_each_suite_passes(name):
    res = run_suite(name, seed=0, cases=10, exhaustive=name != "conv")
    assert res.ok, [f.repro() for f in res.failures[:3]]
    assert res.checks > 0


def test_suite_replays_by_seed():
    a = run_suite("encode", seed=17, n=64, cases=1, exhaustive=False)
    b = run_suite("encode", seed=17, n=64, cases=1, exhaustive=False)
    assert a.checks == b.checks and a.ok


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite("nope")


def test_failure_repro_line():
    res = SuiteResult("ring")
    res.record("cyclic-product", False, {"seed": 3, "n": 64}, "bad")
    assert not res.ok
    assert res.failures[0].repro() == "[ring/cyclic-product] seed=3 n=64 bad"


def test_run_suites_order():
    assert [r.name for r in run_suites(["ring", "encode"], cases=2, exhaustive=False)] == ["ring", "encode"]
