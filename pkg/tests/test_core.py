"""SSM primitive tests: projections, discretization, scans, and mixers.

Derived expectations come from independent oracles coded here: dense
matrix-vector products for the projections, mpmath extended precision for
softplus and the ZOH input integral, and term-by-term rollouts of the scan's
explicit sum for the recurrence.
"""

import mpmath as mp
import numpy as np
import pytest

from hidssm import core
from hidssm.errors import ConfigError, ScanOverflowError, SizeCapError

mp.mp.dps = 40


def random_projections(rng, d, n, a_scale=1.0):
    return core.SsmProjections(
        w_delta=rng.normal(size=d),
        b_delta=float(rng.normal()),
        w_b=rng.normal(size=(d, n)),
        b_b=rng.normal(size=n),
        w_c=rng.normal(size=(d, n)),
        b_c=rng.normal(size=n),
        a=-np.abs(rng.normal(size=d)) * a_scale - 0.1,
    )


def random_coeffs(rng, t, d, n):
    u = rng.normal(size=(t, d))
    return core.discretize(u, random_projections(rng, d, n)), u


class TestProjectInputs:
    def test_zero_input_zero_bias_gives_zeros(self):
        p = core.SsmProjections(
            w_delta=np.ones(3), b_delta=0.0,
            w_b=np.ones((3, 2)), b_b=np.zeros(2),
            w_c=np.ones((3, 2)), b_c=np.zeros(2),
            a=-np.ones(3),
        )
        s_delta, s_b, s_c = core.project_inputs(np.zeros((4, 3)), p)
        assert np.all(s_delta == 0) and np.all(s_b == 0) and np.all(s_c == 0)

    def test_single_weight_passthrough(self):
        p = core.SsmProjections(
            w_delta=np.array([1.0, 0.0]), b_delta=0.0,
            w_b=np.zeros((2, 1)), b_b=np.zeros(1),
            w_c=np.zeros((2, 1)), b_c=np.zeros(1),
            a=-np.ones(2),
        )
        u = np.array([[3.0, 9.0], [3.0, -4.0]])
        s_delta, _, _ = core.project_inputs(u, p)
        np.testing.assert_array_equal(s_delta, [3.0, 3.0])

    def test_matches_dense_matvec_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            d, n, t = rng.integers(1, 9), rng.integers(1, 9), rng.integers(1, 17)
            p = random_projections(rng, d, n)
            u = rng.normal(size=(t, d))
            s_delta, s_b, s_c = core.project_inputs(u, p)
            for i in range(t):
                # row-by-row dot products, no vectorized shortcut
                want_delta = sum(u[i, k] * p.w_delta[k] for k in range(d)) + p.b_delta
                assert abs(s_delta[i] - want_delta) <= 1e-12 * max(1.0, abs(want_delta))
                for j in range(n):
                    want_b = sum(u[i, k] * p.w_b[k, j] for k in range(d)) + p.b_b[j]
                    want_c = sum(u[i, k] * p.w_c[k, j] for k in range(d)) + p.b_c[j]
                    assert abs(s_b[i, j] - want_b) <= 1e-12 * max(1.0, abs(want_b))
                    assert abs(s_c[i, j] - want_c) <= 1e-12 * max(1.0, abs(want_c))

    def test_dimension_mismatch_raises(self):
        rng = np.random.default_rng(0)
        p = random_projections(rng, 4, 3)
        with pytest.raises(ConfigError):
            core.project_inputs(np.zeros((5, 3)), p)


class TestComputeDelta:
    def test_zero_maps_to_ln2(self):
        delta = core.compute_delta(np.zeros(3), 2)
        np.testing.assert_allclose(delta, np.log(2.0), rtol=0, atol=1e-15)
        assert delta.shape == (3, 2)

    def test_large_input_asymptote(self):
        delta = core.compute_delta(np.array([50.0]), 1)
        assert abs(delta[0, 0] - 50.0) <= 1e-9

    def test_matches_extended_precision_oracle(self):
        # frozen from mpmath: log(1 + exp(-2.5)) at 25 significant digits
        want = 0.07888973429254962334404392
        got = core.compute_delta(np.array([-2.5]), 1)[0, 0]
        assert abs(got - want) <= 1e-12
        rng = np.random.default_rng(3)
        xs = rng.uniform(-30, 30, size=64)
        got = core.compute_delta(xs, 1)[:, 0]
        for x, g in zip(xs, got):
            ref = float(mp.log(1 + mp.exp(mp.mpf(x))))
            assert abs(g - ref) <= 1e-12 * max(1.0, abs(ref))

    def test_always_positive(self):
        xs = np.linspace(-700, 700, 2001)
        assert np.all(core.compute_delta(xs, 1) > 0)


class TestDiscretizeZoh:
    def test_closed_form_point(self):
        delta = np.array([[np.log(2.0)]])
        a_bar, b_bar = core.discretize_zoh(delta, np.array([-1.0]), np.array([[1.0]]))
        assert abs(a_bar[0, 0] - 0.5) <= 1e-12
        assert abs(b_bar[0, 0, 0] - 0.5) <= 1e-12

    def test_zero_timescale_limit(self):
        delta = np.full((1, 1), 1e-12)
        a_bar, b_bar = core.discretize_zoh(delta, np.array([-1.0]), np.array([[1.0]]))
        np.testing.assert_allclose(a_bar, 1.0, atol=1e-11)
        np.testing.assert_allclose(b_bar, 0.0, atol=1e-11)

    def test_a_zero_handled_by_series(self):
        delta = np.array([[0.7]])
        a_bar, b_bar = core.discretize_zoh(delta, np.array([0.0]), np.array([[2.0]]))
        assert a_bar[0, 0] == 1.0
        # limit of (exp(z)-1)/z * delta * s_b as a -> 0 is delta * s_b
        np.testing.assert_allclose(b_bar[0, 0, 0], 1.4, rtol=1e-9)

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            delta = float(rng.uniform(0.01, 5.0))
            a = float(-rng.uniform(0.05, 4.0))
            s_b = float(rng.normal())
            a_bar, b_bar = core.discretize_zoh(
                np.array([[delta]]), np.array([a]), np.array([[s_b]])
            )
            z = mp.mpf(delta) * mp.mpf(a)
            ref_a = mp.e**z
            ref_b = (1 / z) * (mp.e**z - 1) * mp.mpf(delta) * mp.mpf(s_b)
            assert abs(a_bar[0, 0] - float(ref_a)) <= 1e-10 * max(1.0, abs(float(ref_a)))
            assert abs(b_bar[0, 0, 0] - float(ref_b)) <= 1e-10 * max(1.0, abs(float(ref_b)))

    def test_series_branch_is_continuous(self):
        eps = core.ZOH_SERIES_THRESHOLD
        for z_mag in (eps * (1 - 1e-9), eps * (1 + 1e-9)):
            for sign in (-1.0, 1.0):
                lo = core.zoh_phi(np.array(sign * z_mag * (1 - 1e-9)))
                hi = core.zoh_phi(np.array(sign * z_mag * (1 + 1e-9)))
                assert abs(hi - lo) <= 1e-9

    def test_a_bar_in_open_unit_interval_for_negative_a(self):
        rng = np.random.default_rng(5)
        delta = rng.uniform(1e-6, 10.0, size=(32, 4))
        a = -rng.uniform(0.01, 5.0, size=4)
        a_bar, _ = core.discretize_zoh(delta, a, rng.normal(size=(32, 3)))
        assert np.all(a_bar > 0) and np.all(a_bar < 1)

    def test_delta_monotonicity(self):
        # larger timescale, stronger state reset: a_bar strictly decreases
        deltas = np.linspace(0.05, 6.0, 50)[:, None]
        a_bar, _ = core.discretize_zoh(deltas, np.array([-0.8]), np.ones((50, 1)))
        assert np.all(np.diff(a_bar[:, 0]) < 0)


def rollout_oracle(coeffs, u):
    """Explicit-sum rollout, y_t = <c_t, sum_i prod_{j=i+1..t} a_j * b_i * u_i>."""
    t_len, d, n = coeffs.b_bar.shape
    y = np.zeros((t_len, d))
    for ch in range(d):
        for t in range(t_len):
            total = np.zeros(n)
            for i in range(t + 1):
                prod = 1.0
                for j in range(i + 1, t + 1):
                    prod *= coeffs.a_bar[j, ch]
                total += prod * coeffs.b_bar[i, ch] * u[i, ch]
            y[t, ch] = coeffs.c[t] @ total
    return y


class TestRecurrentScan:
    def test_single_step(self):
        rng = np.random.default_rng(1)
        coeffs, u = random_coeffs(rng, 1, 3, 4)
        y = core.recurrent_scan(coeffs, u)
        want = np.einsum("n,dn,d->d", coeffs.c[0], coeffs.b_bar[0], u[0])
        np.testing.assert_allclose(y[0], want, atol=1e-14)

    def test_scalar_halving_case(self):
        ln2 = np.log(2.0)
        coeffs = core.DiscretizedCoefficients(
            delta=np.full((2, 1), ln2),
            a_bar=np.full((2, 1), 0.5),
            b_bar=np.full((2, 1, 1), 0.5),
            c=np.ones((2, 1)),
        )
        y = core.recurrent_scan(coeffs, np.ones((2, 1)))
        np.testing.assert_allclose(y[:, 0], [0.5, 0.75], atol=1e-15)

    def test_matches_rollout_oracle(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            t = int(rng.integers(1, 9))
            d = int(rng.integers(1, 4))
            n = int(rng.integers(1, 4))
            coeffs, u = random_coeffs(rng, t, d, n)
            y = core.recurrent_scan(coeffs, u)
            np.testing.assert_allclose(y, rollout_oracle(coeffs, u), atol=1e-10)

    def test_causality_bit_exact(self):
        rng = np.random.default_rng(9)
        p = random_projections(rng, 3, 5)
        u = rng.normal(size=(24, 3))
        y = core.recurrent_scan(core.discretize(u, p), u)
        u2 = u.copy()
        u2[17] += 11.0
        y2 = core.recurrent_scan(core.discretize(u2, p), u2)
        assert np.array_equal(y[:17], y2[:17])
        assert not np.array_equal(y[17:], y2[17:])

    def test_zero_input_fixed_point(self):
        rng = np.random.default_rng(2)
        p = random_projections(rng, 4, 3)
        u = np.zeros((12, 4))
        y = core.recurrent_scan(core.discretize(u, p), u)
        np.testing.assert_array_equal(y, np.zeros_like(y))

    def test_overflow_names_first_bad_timestep(self):
        coeffs = core.DiscretizedCoefficients(
            delta=np.ones((4, 1)),
            a_bar=np.full((4, 1), 2.0),
            b_bar=np.full((4, 1, 1), 1e308),
            c=np.ones((4, 1)),
        )
        u = np.full((4, 1), 1e308)
        with pytest.raises(ScanOverflowError) as err:
            core.recurrent_scan(coeffs, u)
        assert err.value.timestep == 0

    def test_selective_activation_identity(self):
        # scalar configuration: x_t = exp(-d_t) x_{t-1} + (1 - exp(-d_t)) u_t
        rng = np.random.default_rng(77)
        t = 1000
        delta = rng.uniform(0.01, 4.0, size=(t, 1))
        a_bar, b_bar = core.discretize_zoh(delta, np.array([-1.0]), np.ones((t, 1)))
        coeffs = core.DiscretizedCoefficients(
            delta=delta, a_bar=a_bar, b_bar=b_bar, c=np.ones((t, 1))
        )
        u = rng.normal(size=(t, 1))
        y = core.recurrent_scan(coeffs, u)
        x = 0.0
        for i in range(t):
            x = np.exp(-delta[i, 0]) * x + (1.0 - np.exp(-delta[i, 0])) * u[i, 0]
            assert abs(y[i, 0] - x) <= 1e-12


class TestMixers:
    def test_t1_matrix(self):
        rng = np.random.default_rng(4)
        coeffs, _ = random_coeffs(rng, 1, 2, 3)
        m = core.materialize_mixer_causal(coeffs, 0)
        want = coeffs.c[0] @ coeffs.b_bar[0, 0]
        np.testing.assert_allclose(m.matrix, [[want]], atol=1e-14)
        assert m.structure_tag == core.CAUSAL_LOWER_TRIANGULAR

    def test_full_reset_gives_diagonal(self):
        rng = np.random.default_rng(6)
        coeffs, _ = random_coeffs(rng, 8, 2, 3)
        coeffs.a_bar[...] = 0.0
        m = core.materialize_mixer_causal(coeffs, 1).matrix
        diag = np.einsum("tn,tn->t", coeffs.c, coeffs.b_bar[:, 1, :])
        np.testing.assert_allclose(m, np.diag(diag), atol=1e-12)

    def test_scan_mixer_equivalence(self):
        rng = np.random.default_rng(16)
        coeffs, u = random_coeffs(rng, 16, 3, 4)
        y = core.recurrent_scan(coeffs, u)
        for ch in range(3):
            m = core.materialize_mixer_causal(coeffs, ch).matrix
            assert np.max(np.abs(m @ u[:, ch] - y[:, ch])) <= 1e-10
            assert np.all(np.triu(m, 1) == 0)

    def test_row_accessor_matches_dense(self):
        rng = np.random.default_rng(21)
        coeffs, _ = random_coeffs(rng, 12, 2, 3)
        dense = core.materialize_mixer_causal(coeffs, 1).matrix
        for row in (0, 5, 11):
            np.testing.assert_allclose(
                core.mixer_row_causal(coeffs, 1, row), dense[row], atol=1e-12
            )

    def test_size_cap(self):
        rng = np.random.default_rng(8)
        coeffs, _ = random_coeffs(rng, 10, 1, 2)
        with pytest.raises(SizeCapError):
            core.materialize_mixer_causal(coeffs, 0, cap=8)


def contextual_mixer_oracle(coeffs_fwd, coeffs_bwd, channel, t_len):
    """Brute-force quasi-separable assembly: lower (with diagonal) from the
    forward pass, strict upper from the backward pass run on reversed time."""
    m = np.zeros((t_len, t_len))
    for i in range(t_len):
        for j in range(i + 1):
            prod = 1.0
            for k in range(j + 1, i + 1):
                prod *= coeffs_fwd.a_bar[k, channel]
            m[i, j] = prod * (coeffs_fwd.c[i] @ coeffs_fwd.b_bar[j, channel])
    for i in range(t_len):
        for j in range(i + 1, t_len):
            prod = 1.0
            for k in range(j - 1, i - 1, -1):
                prod *= coeffs_bwd.a_bar[k, channel]
            m[i, j] = prod * (coeffs_bwd.c[i] @ coeffs_bwd.b_bar[j, channel])
    return m


class TestContextualScan:
    def test_single_step_is_forward_only(self):
        rng = np.random.default_rng(13)
        cf, u = random_coeffs(rng, 1, 2, 3)
        cb, _ = random_coeffs(rng, 1, 2, 3)
        y = core.contextual_scan(cf, cb, u)
        want = np.einsum("n,dn,d->d", cf.c[0], cf.b_bar[0], u[0])
        np.testing.assert_allclose(y[0], want, atol=1e-13)

    def test_palindromic_output_for_symmetric_input(self):
        rng = np.random.default_rng(14)
        half = rng.normal(size=(6, 3))
        u = np.concatenate([half, half[::-1]], axis=0)
        p = random_projections(rng, 3, 4)
        coeffs = core.discretize(u, p)
        y = core.contextual_scan(coeffs, coeffs, u)
        np.testing.assert_allclose(y, y[::-1], atol=1e-12)

    def test_matches_quasi_separable_oracle(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            t, d, n = 12, int(rng.integers(1, 4)), int(rng.integers(1, 4))
            u = rng.normal(size=(t, d))
            cf = core.discretize(u, random_projections(rng, d, n))
            cb = core.discretize(u, random_projections(rng, d, n))
            y = core.contextual_scan(cf, cb, u)
            for ch in range(d):
                m = contextual_mixer_oracle(cf, cb, ch, t)
                np.testing.assert_allclose(m @ u[:, ch], y[:, ch], atol=1e-10)
                np.testing.assert_allclose(
                    np.array([core.mixer_row_contextual(cf, cb, ch, i) for i in range(t)]),
                    m,
                    atol=1e-11,
                )

    def test_anticausal_sensitivity(self):
        rng = np.random.default_rng(17)
        u = rng.normal(size=(10, 2))
        pf, pb = random_projections(rng, 2, 3), random_projections(rng, 2, 3)
        y = core.contextual_scan(core.discretize(u, pf), core.discretize(u, pb), u)
        u2 = u.copy()
        u2[8] += 1.0
        y2 = core.contextual_scan(core.discretize(u2, pf), core.discretize(u2, pb), u2)
        assert np.any(y[:8] != y2[:8])


class TestScanScaling:
    def test_wall_clock_is_linear(self):
        import time

        rng = np.random.default_rng(19)
        p = random_projections(rng, 8, 8)

        def timed(t_len):
            u = rng.normal(size=(t_len, 8))
            coeffs = core.discretize(u, p)
            start = time.perf_counter()
            core.recurrent_scan(coeffs, u)
            return time.perf_counter() - start

        timed(1000)  # warm-up
        ratios = []
        for _ in range(5):
            ratios.append(timed(2000) / timed(1000))
        assert np.median(ratios) <= 2.5
