"""Schedule formulas, monotonicity, endpoints, and the intervention coin."""

import numpy as np
import pytest

from abstainqa.curriculum import Schedule, prob, should_intervene
from abstainqa.errors import ConfigError

P_R_GRID = (0.0, 0.25, 0.3, 0.5, 0.75, 1.0)


def test_quadratic_exact_formula_exhaustive():
    for epochs in range(1, 51):
        for p_r in P_R_GRID:
            sched = Schedule(kind="quadratic", epochs=epochs, p_r=p_r)
            for e in range(1, epochs + 1):
                expected = p_r * (e - epochs) ** 2 / epochs**2
                assert prob(sched, e) == expected


def test_quadratic_known_values():
    sched = Schedule(kind="quadratic", epochs=10, p_r=0.3)
    assert prob(sched, 10) == 0.0
    assert prob(sched, 1) == pytest.approx(0.3 * 81 / 100)


def test_linear_formula_and_endpoints():
    for epochs in range(2, 51):
        for p_r in P_R_GRID:
            sched = Schedule(kind="linear", epochs=epochs, p_r=p_r)
            assert prob(sched, 1) == p_r
            assert prob(sched, epochs) == 0.0
            for e in range(1, epochs + 1):
                assert prob(sched, e) == pytest.approx(p_r * (epochs - e) / (epochs - 1))


def test_linear_single_epoch_is_zero():
    assert prob(Schedule(kind="linear", epochs=1, p_r=0.5), 1) == 0.0


def test_exponential_formula():
    for epochs in range(2, 51):
        for p_r in P_R_GRID:
            sched = Schedule(kind="exponential", epochs=epochs, p_r=p_r, lam=5.0)
            assert prob(sched, 1) == pytest.approx(p_r)
            for e in range(1, epochs + 1):
                expected = p_r * np.exp(-5.0 * (e - 1) / (epochs - 1))
                assert prob(sched, e) == pytest.approx(expected)


def test_exponential_single_epoch_returns_p_r():
    assert prob(Schedule(kind="exponential", epochs=1, p_r=0.4), 1) == 0.4


def test_fixed_constant_everywhere():
    sched = Schedule(kind="fixed", epochs=20, fixed_p=0.75)
    assert all(prob(sched, e) == 0.75 for e in range(1, 21))


def test_monotone_non_increasing_and_in_unit_interval():
    for kind in ("quadratic", "linear", "exponential"):
        for epochs in range(1, 51):
            for p_r in P_R_GRID:
                sched = Schedule(kind=kind, epochs=epochs, p_r=p_r)
                values = [prob(sched, e) for e in range(1, epochs + 1)]
                assert all(0.0 <= v <= 1.0 for v in values)
                assert all(a >= b for a, b in zip(values, values[1:]))


def test_epoch_out_of_range():
    sched = Schedule(kind="quadratic", epochs=10, p_r=0.3)
    with pytest.raises(ConfigError):
        prob(sched, 0)
    with pytest.raises(ConfigError):
        prob(sched, 11)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        Schedule(kind="nope", epochs=10)
    with pytest.raises(ConfigError):
        Schedule(kind="quadratic", epochs=0)
    with pytest.raises(ConfigError):
        Schedule(kind="quadratic", epochs=10, p_r=1.5)
    with pytest.raises(ConfigError):
        Schedule(kind="exponential", epochs=10, lam=0.0)
    with pytest.raises(ConfigError):
        Schedule(kind="fixed", epochs=10, fixed_p=-0.1)


def test_should_intervene_degenerate_probabilities():
    rng = np.random.default_rng(0)
    assert not any(should_intervene(0.0, rng) for _ in range(1000))
    assert all(should_intervene(1.0, rng) for _ in range(1000))


def test_should_intervene_rate_within_binomial_bounds():
    # 10000 draws at p=0.3: +-5 sigma is ~0.023, so [0.27, 0.33] is generous.
    rng = np.random.default_rng(7)
    hits = sum(should_intervene(0.3, rng) for _ in range(10000))
    assert 0.27 <= hits / 10000 <= 0.33
