import pytest

from trivial_cases import CASES


@pytest.mark.parametrize("name", sorted(CASES))
def test_trivial_case(name):
    CASES[name]()
