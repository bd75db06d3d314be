import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdrb.errors import ConfigError, StepOutOfRange
from cdrb.schedule import DistanceSchedule


def test_linear_examples():
    assert DistanceSchedule("linear", 3.0, 10).epsilon(0) == 0.0
    assert DistanceSchedule("linear", 5.0, 10).epsilon(10) == 5.0
    assert DistanceSchedule("linear", 4.0, 10).epsilon(5) == 2.0


def test_log_examples():
    s = DistanceSchedule("log", 2.0, 9)
    assert s.epsilon(0) == 0.0
    assert s.epsilon(9) == 2.0
    assert s.epsilon(4) == pytest.approx(2.0 * math.log(5) / math.log(10))


@given(st.sampled_from(["linear", "log"]), st.floats(1e-3, 100), st.integers(1, 500))
def test_endpoints_and_monotonicity(kind, d_max, t):
    tab = DistanceSchedule(kind, d_max, t).table()
    assert tab[0] == 0.0 and tab[-1] == d_max
    assert np.all(np.diff(tab) > 0)


@given(st.floats(1e-3, 100), st.integers(2, 500))
def test_log_dominates_linear_inside(d_max, t):
    lin = DistanceSchedule("linear", d_max, t).table()
    log = DistanceSchedule("log", d_max, t).table()
    assert np.all(log[1:-1] >= lin[1:-1])


def test_validation():
    with pytest.raises(StepOutOfRange):
        DistanceSchedule("linear", 1.0, 5).epsilon(6)
    with pytest.raises(StepOutOfRange):
        DistanceSchedule("linear", 1.0, 5).epsilon(-1)
    with pytest.raises(ConfigError):
        DistanceSchedule("cosine", 1.0, 5)
    with pytest.raises(ConfigError):
        DistanceSchedule("linear", 0.0, 5)
    with pytest.raises(ConfigError):
        DistanceSchedule("linear", 1.0, 0)


def test_array_input():
    s = DistanceSchedule("linear", 2.0, 4)
    np.testing.assert_array_equal(s.epsilon(np.array([0, 2, 4])), [0.0, 1.0, 2.0])
