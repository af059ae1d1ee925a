import pytest

from helpers import fd_relative_error, module_cases

NAMES = [name for name, _, _ in module_cases(0)]


@pytest.mark.parametrize("name", NAMES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_finite_difference_agreement(name, seed):
    case = {n: (fn, ts) for n, fn, ts in module_cases(seed)}[name]
    assert fd_relative_error(*case, seed=seed) < 1e-4
