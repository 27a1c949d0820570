import numpy as np
import pytest

from app.core.errors import InvalidArgumentError, InvalidMatrixError
from app.services.chain import (
    check_doubly_stochastic,
    check_ergodic,
    is_stationary_uniform,
    stationary_gap,
)
from app.services.forward import NoiseSchedule, build_perm_transition, build_token_transition
from app.services.permcore import SequenceSpec


class TestChecks:
    def test_doubly_stochastic(self):
        assert check_doubly_stochastic([[0.5, 0.5], [0.5, 0.5]])
        check = check_doubly_stochastic([[1.0, 0.0], [0.5, 0.5]])
        assert not check
        assert check.max_col_deviation == pytest.approx(0.5)

    def test_not_square(self):
        with pytest.raises(InvalidMatrixError):
            check_doubly_stochastic(np.ones((2, 3)))

    def test_negative(self):
        with pytest.raises(InvalidMatrixError):
            check_ergodic([[1.5, -0.5], [0.0, 1.0]])

    def test_periodic_is_not_ergodic(self):
        assert not check_ergodic([[0.0, 1.0], [1.0, 0.0]])

    def test_disconnected_is_not_ergodic(self):
        assert not check_ergodic(np.eye(3))

    def test_uniform_stationary(self):
        assert is_stationary_uniform([[0.7, 0.3], [0.3, 0.7]])
        assert not is_stationary_uniform([[1.0, 0.0], [0.5, 0.5]])


class TestStationaryGap:
    @pytest.mark.parametrize("l_o", [3, 4, 5])
    @pytest.mark.parametrize("beta", [0.1, 0.3, 0.5])
    def test_perm_converges_to_uniform(self, l_o, beta):
        tm = build_perm_transition(SequenceSpec(l_s=l_o, l_o=l_o), NoiseSchedule(beta, 5))
        report = stationary_gap(tm, 400)
        assert report.is_doubly_stochastic
        assert report.is_ergodic
        tv = [v for _, v in report.tv_curve]
        assert all(b <= a + 1e-12 for a, b in zip(tv, tv[1:]))
        assert report.mixing_time() is not None

    @pytest.mark.parametrize("l_s", [3, 6])
    def test_token_converges_to_uniform(self, l_s):
        tm = build_token_transition(SequenceSpec(l_s=l_s, l_o=3), NoiseSchedule(0.3, 4))
        report = stationary_gap(tm, 100)
        assert report.is_ergodic
        assert report.tv_curve[0] == (0, pytest.approx(1 - 1 / l_s))
        assert report.tv_curve[-1][1] < 1e-3

    def test_two_item_token_uniform_after_one_step(self):
        tm = build_token_transition(SequenceSpec(l_s=2, l_o=2), NoiseSchedule(0.5, 2))
        report = stationary_gap(tm, 6)
        assert report.tv_curve[0] == (0, 0.5)
        assert all(v == 0.0 for _, v in report.tv_curve[1:])
        assert report.mixing_time() == 1

    def test_beyond_horizon_continues_product(self):
        tm = build_perm_transition(SequenceSpec(l_s=4, l_o=4), NoiseSchedule(0.3, 2))
        report = stationary_gap(tm, 6)
        expected = np.linalg.matrix_power(tm.Q, 6)
        tv = 0.5 * np.abs(expected - 1 / 24).sum(axis=1).max()
        assert report.tv_curve[6][1] == pytest.approx(tv, abs=1e-12)

    def test_summary(self):
        tm = build_perm_transition(SequenceSpec(l_s=3, l_o=3), NoiseSchedule(0.3, 2))
        summary = stationary_gap(tm, 10).to_summary()
        assert summary["n_states"] == 6
        assert summary["t_max"] == 10
        assert summary["is_ergodic"] is True

    def test_t_max_positive(self):
        tm = build_perm_transition(SequenceSpec(l_s=3, l_o=3), NoiseSchedule(0.3, 2))
        with pytest.raises(InvalidArgumentError):
            stationary_gap(tm, 0)
