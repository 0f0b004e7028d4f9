import pytest
from cellrcov import ScenarioSyntaxError
from cellrcov._parsing import parse_grid


def test_ranges_and_lists():
    grid = parse_grid("gamma=0:10:2; p=30,60,120; contamination=cellwise,both")
    assert list(grid) == ["gamma", "p", "contamination"]
    assert grid["gamma"] == [0, 2, 4, 6, 8, 10]
    assert grid["p"] == [30, 60, 120]
    assert grid["contamination"] == ["cellwise", "both"]


def test_single_values_and_trailing_separator():
    assert parse_grid("model=A06;") == {"model": ["A06"]}
    assert parse_grid("na_rate = 0.2") == {"na_rate": [0.2]}


def test_fractional_range_is_inclusive():
    assert parse_grid("cell_rate=0.1:0.3:0.1")["cell_rate"] == [0.1, 0.2, 0.3]


@pytest.mark.parametrize("text", [
    "gamma=",
    "gamma 0,1",
    "gamma=0:10",
    "gamma=0:10:0",
    "gamma=1; gamma=2",
    "colour=red",
    "gamma=1,,2",
])
def test_malformed(text):
    with pytest.raises(ScenarioSyntaxError):
        parse_grid(text)
