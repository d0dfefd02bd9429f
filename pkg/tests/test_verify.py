import pytest

from dropletmm import verify


def test_unknown_suite():
    with pytest.raises(verify.UnknownSuite):
        verify.verify("nonsense")


@pytest.mark.parametrize("suite", ["lattice", "comparison"])
def test_random_suites_pass(suite):
    ok, rows = verify.verify(suite, seed=3, n=6)
    assert ok, [r for r in rows if not r.passed]
    assert all(len(r.as_list()) == len(verify.REPORT_COLUMNS) for r in rows)


def test_oracle_suite():
    rows = verify.suite_oracle(1)
    assert len(rows) == 3 and all(r.passed for r in rows)


def test_branching_suite():
    rows = verify.suite_branching(1)
    assert [r.prop for r in rows] == ["branch_count", "masks_differ_after_t1", "jump_right_continuous",
                                      "no_jump_left_limit"]
    assert all(r.passed for r in rows)


def test_comparison_pairs_deterministic():
    a = verify.comparison_pair(5, 3)
    b = verify.comparison_pair(5, 3)
    assert a[1:] == b[1:] and a[1] <= a[2]
    assert verify.comparison_pair(5, 10)[1] == verify.comparison_pair(5, 10)[2]
