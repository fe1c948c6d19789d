import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calibkit.calibrators import (
    IsotonicModel,
    apply_isotonic,
    apply_platt,
    apply_temperature,
    fit_isotonic,
    fit_platt,
    fit_temperature,
    prob_to_logit,
    temperature_scale_prob,
)
from calibkit.errors import DegenerateDataError, SeparationWarning


def binary_nll(z, y, a, b):
    p = np.clip(1 / (1 + np.exp(-(a * z + b))), 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def multiclass_nll(logits, labels, t):
    z = logits / t
    z = z - z.max(axis=1, keepdims=True)
    return float(np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(labels)), labels]))


def grid_temperature(logits, labels, step=1e-4):
    """Brute-force minimizer of the temperature NLL over [0.01, 100]."""
    ts = np.arange(0.01, 100.0 + step / 2, step)
    best_t, best_v = None, math.inf
    idx = np.arange(len(labels))
    for chunk in np.array_split(ts, 64):
        z = logits[None, :, :] / chunk[:, None, None]
        z = z - z.max(axis=2, keepdims=True)
        nlls = (np.log(np.exp(z).sum(axis=2)) - z[:, idx, labels]).mean(axis=1)
        j = int(np.argmin(nlls))
        if nlls[j] < best_v:
            best_v, best_t = float(nlls[j]), float(chunk[j])
    return best_t


def exhaustive_isotonic(scores, labels):
    """Exact monotone least-squares fit by enumerating partitions of the
    tie-pooled score blocks into consecutive groups with non-decreasing
    means."""
    distinct = sorted(set(scores))
    groups = [[y for s2, y in zip(scores, labels) if s2 == s] for s in distinct]
    m = len(groups)
    best_sse, best_fit = math.inf, None
    for mask in range(1 << (m - 1)):
        parts, cur = [], [0]
        for i in range(1, m):
            if mask & (1 << (i - 1)):
                parts.append(cur)
                cur = [i]
            else:
                cur.append(i)
        parts.append(cur)
        means, sse = [], 0.0
        for part in parts:
            ys = [y for gi in part for y in groups[gi]]
            mu = sum(ys) / len(ys)
            means.append(mu)
            sse += sum((y - mu) ** 2 for y in ys)
        if all(a <= b + 1e-12 for a, b in zip(means, means[1:])) and sse < best_sse - 1e-12:
            best_sse = sse
            best_fit = {distinct[gi]: mu for part, mu in zip(parts, means) for gi in part}
    return [best_fit[s] for s in scores], best_sse


class TestFitPlatt:
    def test_recovers_known_coefficients(self):
        rng = np.random.default_rng(101)
        n = 50_000
        z = rng.normal(0, 1, n)
        y = (rng.random(n) < 1 / (1 + np.exp(-(2 * z + 1)))).astype(int)
        m = fit_platt(z, y)
        assert m.a == pytest.approx(2.0, abs=0.1)
        assert m.b == pytest.approx(1.0, abs=0.1)

    def test_separable_data_clamped_with_warning(self):
        z = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
        y = np.array([0, 0, 0, 1, 1, 1])
        with pytest.warns(SeparationWarning):
            m = fit_platt(z, y)
        assert abs(m.a) <= 30.0
        assert abs(m.b) <= 30.0

    def test_constant_logits_fall_back_to_base_rate(self):
        z = np.full(10, 0.7)
        y = np.array([1, 0, 1, 1, 0, 1, 0, 1, 1, 0])
        m = fit_platt(z, y)
        assert m.a == 0.0
        assert m.b == pytest.approx(math.log(0.6 / 0.4), abs=1e-9)

    def test_single_class_errors(self):
        with pytest.raises(DegenerateDataError):
            fit_platt([0.1, 0.2, 0.3], [1, 1, 1])

    def test_nonfinite_logits_error(self):
        with pytest.raises(ValueError):
            fit_platt([0.1, np.inf], [0, 1])

    def test_fit_beats_reference_points(self):
        rng = np.random.default_rng(7)
        z = rng.normal(0, 2, 400)
        y = (rng.random(400) < 1 / (1 + np.exp(-(0.7 * z - 0.5)))).astype(int)
        m = fit_platt(z, y)
        fitted = binary_nll(z, y, m.a, m.b)
        assert fitted <= binary_nll(z, y, 1.0, 0.0) + 1e-12
        base = math.log(y.mean() / (1 - y.mean()))
        assert fitted <= binary_nll(z, y, 0.0, base) + 1e-12

    def test_gradient_small_at_solution(self):
        rng = np.random.default_rng(13)
        z = rng.normal(0, 1, 500)
        y = (rng.random(500) < 1 / (1 + np.exp(-z))).astype(int)
        m = fit_platt(z, y)
        p = 1 / (1 + np.exp(-(m.a * z + m.b)))
        grad = np.array([np.dot(p - y, z), np.sum(p - y)])
        assert np.abs(grad).max() <= 1e-8


class TestApplyPlatt:
    def test_sigma_zero(self):
        from calibkit.calibrators import PlattModel

        assert apply_platt(PlattModel(1.0, 0.0), 0.0) == 0.5

    def test_constant_model(self):
        from calibkit.calibrators import PlattModel

        assert apply_platt(PlattModel(0.0, 0.0), 123.4) == 0.5

    def test_algebraic_cancellation(self):
        from calibkit.calibrators import PlattModel

        assert apply_platt(PlattModel(2.0, 1.0), -0.5) == 0.5

    def test_clamped_into_open_interval(self):
        from calibkit.calibrators import PlattModel

        assert 0 < apply_platt(PlattModel(30.0, 0.0), 100.0) < 1


class TestFitTemperature:
    def test_recovers_t0(self):
        rng = np.random.default_rng(41)
        n, K, t0 = 50_000, 4, 2.67
        z = rng.normal(0, 1.5, (n, K))
        p = np.exp(z - z.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        labels = (p.cumsum(axis=1) < rng.random(n)[:, None]).sum(axis=1)
        m = fit_temperature(t0 * z, labels)
        assert m.t == pytest.approx(t0, abs=0.05)

    def test_already_calibrated_gives_t_one(self):
        rng = np.random.default_rng(43)
        n, K = 50_000, 4
        z = rng.normal(0, 1.5, (n, K))
        p = np.exp(z - z.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        labels = (p.cumsum(axis=1) < rng.random(n)[:, None]).sum(axis=1)
        m = fit_temperature(z, labels)
        assert m.t == pytest.approx(1.0, abs=0.05)

    def test_two_sample_toy_matches_grid(self):
        logits = np.array([[2.0, 0.5, -1.0], [0.2, 1.4, -0.3]])
        labels = np.array([0, 2])
        m = fit_temperature(logits, labels)
        t_star = grid_temperature(logits, labels)
        assert m.t == pytest.approx(t_star, abs=1e-3)

    def test_never_worse_than_identity(self):
        rng = np.random.default_rng(47)
        for _ in range(10):
            z = rng.normal(0, 2, (60, 3))
            labels = rng.integers(0, 3, 60)
            m = fit_temperature(z, labels)
            assert multiclass_nll(z, labels, m.t) <= multiclass_nll(z, labels, 1.0) + 1e-10

    def test_k1_errors(self):
        with pytest.raises(ValueError):
            fit_temperature(np.ones((4, 1)), [0, 0, 0, 0])


class TestApplyTemperature:
    def test_identity_temperature(self):
        from calibkit.calibrators import TemperatureModel

        z = np.array([1.2, -0.3, 0.8])
        expected = np.exp(z) / np.exp(z).sum()
        np.testing.assert_allclose(apply_temperature(TemperatureModel(1.0), z), expected,
                                   atol=1e-12)

    def test_flattening_limit(self):
        from calibkit.calibrators import TemperatureModel

        rng = np.random.default_rng(53)
        for _ in range(20):
            z = rng.normal(0, 3, 5)
            out = apply_temperature(TemperatureModel(100.0), z)
            assert out.max() - out.min() <= 5 * (z.max() - z.min()) / 100

    def test_frozen_value(self):
        from calibkit.calibrators import TemperatureModel

        # softmax([1, 0.5, 0]) evaluated in 50-digit arithmetic beforehand
        out = apply_temperature(TemperatureModel(2.0), np.array([2.0, 1.0, 0.0]))
        np.testing.assert_allclose(
            out,
            [0.5064803910556540, 0.3071958857184984, 0.1863237232258476],
            atol=1e-12,
        )

    def test_sums_to_one_and_keeps_argmax(self):
        from calibkit.calibrators import TemperatureModel

        rng = np.random.default_rng(59)
        for _ in range(50):
            z = rng.normal(0, 4, 6)
            t = float(rng.uniform(0.02, 90))
            out = apply_temperature(TemperatureModel(t), z)
            assert out.sum() == pytest.approx(1.0, abs=1e-9)
            assert int(np.argmax(out)) == int(np.argmax(z))

    def test_entropy_non_decreasing_for_t_above_one(self):
        from calibkit.calibrators import TemperatureModel

        def entropy(p):
            p = p[p > 0]
            return float(-(p * np.log(p)).sum())

        rng = np.random.default_rng(61)
        for _ in range(50):
            z = rng.normal(0, 3, 4)
            h1 = entropy(apply_temperature(TemperatureModel(1.0), z))
            h2 = entropy(apply_temperature(TemperatureModel(float(rng.uniform(1, 50))), z))
            assert h2 >= h1 - 1e-12

    def test_scalar_route_is_strictly_monotone(self):
        from calibkit.calibrators import TemperatureModel

        m = TemperatureModel(2.67)
        ps = np.linspace(0.01, 0.99, 200)
        out = temperature_scale_prob(m, ps)
        assert np.all(np.diff(out) > 0)


class TestFitIsotonic:
    def test_monotone_labels_two_steps(self):
        m = fit_isotonic([0.1, 0.2, 0.3, 0.7, 0.8], [0, 0, 0, 1, 1])
        np.testing.assert_allclose(m.values, [0.0, 1.0])

    def test_violating_pair_pools_to_half(self):
        m = fit_isotonic([0.1, 0.9], [1, 0])
        np.testing.assert_allclose(m.values, [0.5])
        assert apply_isotonic(m, 0.05) == 0.5
        assert apply_isotonic(m, 0.95) == 0.5

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(67)
        for _ in range(60):
            n = int(rng.integers(1, 9))
            scores = np.round(rng.uniform(0, 1, n), 2)
            labels = rng.integers(0, 2, n)
            m = fit_isotonic(scores, labels)
            got = [apply_isotonic(m, s) for s in scores]
            want, _ = exhaustive_isotonic(list(scores), list(labels))
            np.testing.assert_allclose(got, want, atol=1e-3)

    def test_idempotent_refit(self):
        rng = np.random.default_rng(71)
        scores = rng.uniform(0, 1, 40)
        labels = rng.integers(0, 2, 40)
        m1 = fit_isotonic(scores, labels)
        fitted = np.asarray(apply_isotonic(m1, scores))
        m2 = fit_isotonic(fitted, labels)
        np.testing.assert_allclose(np.unique(np.asarray(apply_isotonic(m2, fitted))),
                                   np.unique(fitted), atol=1e-12)

    def test_empty_errors(self):
        with pytest.raises(DegenerateDataError):
            fit_isotonic([], [])

    def test_boundaries_cover_unit_interval(self):
        m = fit_isotonic([0.2, 0.4, 0.9], [0, 1, 1])
        assert m.boundaries[0] == 0.0
        assert m.boundaries[-1] == 1.0


class TestApplyIsotonic:
    def model(self):
        return IsotonicModel(boundaries=np.array([0.0, 0.3, 0.7, 1.0]),
                             values=np.array([0.1, 0.5, 0.9]))

    def test_first_bin(self):
        assert apply_isotonic(self.model(), 0.05) == 0.1

    def test_last_bin_right_closed(self):
        assert apply_isotonic(self.model(), 1.0) == 0.9

    def test_monotone_spot_check(self):
        m = self.model()
        assert apply_isotonic(m, 0.2) <= apply_isotonic(m, 0.8)

    @given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=60, deadline=None)
    def test_monotone_property_on_fitted_models(self, seed, p1, p2):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 40))
        m = fit_isotonic(rng.uniform(0, 1, n), rng.integers(0, 2, n))
        lo, hi = min(p1, p2), max(p1, p2)
        assert apply_isotonic(m, lo) <= apply_isotonic(m, hi) + 1e-12


class TestProbToLogit:
    def test_round_trip(self):
        p = np.array([0.1, 0.5, 0.93])
        back = 1 / (1 + np.exp(-prob_to_logit(p)))
        np.testing.assert_allclose(back, p, atol=1e-12)
