"""The twelve acceptance criteria at their stated tolerances and time budgets."""

import pytest

from oscbc.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    crit = run_criterion(number)
    with capsys.disabled():
        print("\n" + crit.line())
    assert crit.error is None, crit.error
    failed = [c.describe() for c in crit.checks if not c.passed]
    assert not failed, "; ".join(failed)
    assert crit.within_budget, f"runtime {crit.runtime:.2f}s over budget {crit.budget:g}s"
