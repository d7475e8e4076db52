import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import trapkit as tk
from trapkit.errors import BoundViolation, NotApplicable


def adjoint_kernel(chain):
    pi = tk.stationary_measure(chain).weights
    return (chain.matrix.T * pi[None, :]) / pi[:, None]


def oracle_escape(chain, part, window):
    """Symmetrized escape scores by plain matrix powers."""
    idx = list(part.trap)
    pi = tk.stationary_measure(chain).weights
    pi_a = pi[idx] / pi[idx].sum()
    fwd_block = chain.matrix[np.ix_(idx, idx)]
    bwd_block = adjoint_kernel(chain)[np.ix_(idx, idx)]
    fwd = 1.0 - np.linalg.matrix_power(fwd_block, int(window)).sum(axis=1)
    bwd = 1.0 - np.linalg.matrix_power(bwd_block, int(window)).sum(axis=1)
    scores = 0.5 * (fwd + bwd)
    return scores, float(pi_a @ scores), pi_a


@pytest.fixture(scope="module")
def tiar10_verified(tiar10, tiar10_cert):
    chain, part = tiar10
    return tk.verify_certificate_bounds(chain, part, tiar10_cert)


def test_arithmetic_pinned_example():
    f, d, r = 1e-4, 1e-3, 1e-3
    c, c_bar, e1, e2, ok = tk.certificate_arithmetic(f, d, r, 0.5)
    assert ok
    assert c == pytest.approx(0.021, abs=1e-15)
    assert c_bar == pytest.approx(0.02146, abs=5e-6)
    assert e1 == pytest.approx(0.13064, abs=5e-6)
    assert e2 == pytest.approx(0.14064, abs=5e-6)
    own_bar = 0.5 - math.sqrt(0.25 - (r + 2.0 * math.sqrt(f)))
    assert c_bar == pytest.approx(own_bar, rel=1e-15)
    assert e1 == pytest.approx(4.0 * (own_bar + 2.0 * f + math.sqrt(f) + d), rel=1e-14)
    assert e2 == pytest.approx(e1 + math.sqrt(f), rel=1e-15)


def test_arithmetic_inapplicable_is_nan():
    c, c_bar, e1, e2, ok = tk.certificate_arithmetic(0.04, 1e-3, 0.01, 0.5)
    assert not ok and c >= 0.25
    assert math.isnan(c_bar) and math.isnan(e1) and math.isnan(e2)


def test_parameter_validation():
    with pytest.raises(ValueError):
        tk.CertificateParameters(0.0)
    with pytest.raises(ValueError):
        tk.CertificateParameters(1.0, alpha=1.0)
    with pytest.raises(ValueError):
        tk.CertificateParameters(1.0, t_grid=(2.0, 2.0))
    with pytest.raises(ValueError):
        tk.CertificateParameters(1.0, t_grid=(0.0, 1.0))


def test_escape_functional_matches_power_oracle(tiar10, tiar10_cert):
    chain, part = tiar10
    scores, f, pi_a = oracle_escape(chain, part, 184)
    assert abs(tiar10_cert.f - f) < 1e-12
    pi = tk.stationary_measure(chain)
    assert abs(tk.escape_functional(chain, pi, part, 184.0) - f) < 1e-12
    got, passed = tk.check_escape(chain, part, 92.0, threshold=1e-3)
    assert abs(got - f) < 1e-12 and passed
    _, failed = tk.check_escape(chain, part, 92.0, threshold=1e-6)
    assert not failed


def test_basin_matches_threshold_oracle(tiar10, tiar10_cert):
    chain, part = tiar10
    scores, f, pi_a = oracle_escape(chain, part, 184)
    expected = tuple(
        part.trap[i] for i in range(len(part.trap)) if scores[i] <= f**0.5
    )
    assert tiar10_cert.basin == expected
    assert tk.compute_basin(chain, part, 92.0) == expected
    # the guaranteed stationary mass floor, zero tolerance
    mass = float(pi_a[[part.trap.index(x) for x in expected]].sum())
    assert mass >= 1.0 - f**0.5


def test_thermalization_matches_power_oracle(tiar10, tiar10_cert):
    chain, part = tiar10
    staged = part.with_basin(tiar10_cert.basin)
    power = np.linalg.matrix_power(chain.matrix, 92)
    rows = power[list(tiar10_cert.basin)]
    worst = max(
        0.5 * np.abs(rows[i] - rows[j]).sum()
        for i in range(len(rows))
        for j in range(i + 1, len(rows))
    )
    assert abs(tk.check_thermalization(chain, staged, 92.0) - worst) < 1e-12
    assert abs(tiar10_cert.d - worst) < 1e-12


def test_recurrence_matches_power_oracle(tiar10, tiar10_cert):
    chain, part = tiar10
    staged = part.with_basin(tiar10_cert.basin)
    outside = [x for x in part.trap if x not in tiar10_cert.basin]
    block = chain.matrix[np.ix_(outside, outside)]
    worst = float(np.linalg.matrix_power(block, 92).sum(axis=1).max())
    got = tk.check_recurrence(chain, staged, 92.0)
    assert abs(got - worst) <= 1e-9 * worst
    assert abs(tiar10_cert.r - worst) <= 1e-9 * worst


def test_certificate_combines_measurements(tiar10, tiar10_cert):
    cert = tiar10_cert
    c, c_bar, e1, e2, ok = tk.certificate_arithmetic(cert.f, cert.d, cert.r, cert.alpha)
    assert cert.applicable and ok
    assert (cert.c, cert.c_bar, cert.epsilon1, cert.epsilon2) == (c, c_bar, e1, e2)
    assert cert.basin == (3, 4, 5, 6, 7, 8, 9)


def test_verified_bounds_hold(tiar10_verified, tiar10_cert):
    ver = tiar10_verified
    assert ver.conditioned_sup <= tiar10_cert.epsilon1
    assert ver.mixture_sup <= tiar10_cert.epsilon2
    assert ver.stationary_vs_qsd <= tiar10_cert.epsilon2
    assert ver.conditioned_vs_qsd_sup <= tiar10_cert.epsilon1 + tiar10_cert.epsilon2
    assert ver.empirical_sup <= tiar10_cert.epsilon1
    assert ver.delta >= 0.0
    # conditioning on a visit is impossible at t = 2R from outside the basin
    assert ver.skipped == ((1, 184.0), (2, 184.0))
    assert float(ver.t_grid[0]) == 184.0


def test_verify_rejects_tampered_certificate(tiar10, tiar10_cert):
    chain, part = tiar10
    fake = tk.TrapCertificate(
        R=tiar10_cert.R,
        alpha=tiar10_cert.alpha,
        f=tiar10_cert.f,
        d=tiar10_cert.d,
        r=tiar10_cert.r,
        c=tiar10_cert.c,
        c_bar=tiar10_cert.c_bar,
        epsilon1=1e-9,
        epsilon2=1e-9,
        applicable=True,
        basin=tiar10_cert.basin,
    )
    with pytest.raises(BoundViolation) as err:
        tk.verify_certificate_bounds(chain, part, fake, t_grid=(184.0, 368.0))
    assert "state" in str(err.value) or "time" in str(err.value)


def test_survival_ratio_window(tiar10, tiar10_cert):
    # short shifts cannot raise survival, and gain at most 1 + 2 c_bar
    chain, part = tiar10
    cert = tiar10_cert
    from trapkit.semigroup import block_propagator

    prop = block_propagator(chain, part.trap)
    eye = np.eye(len(part.trap))
    pos = [part.trap.index(x) for x in cert.basin]
    for t in (184.0, 368.0, 736.0):
        base = np.asarray(prop.survival(eye, t))[pos]
        for shift in (46.0, 92.0):
            shifted = np.asarray(prop.survival(eye, t - shift))[pos]
            ratio = shifted / base
            assert np.all(ratio >= 1.0 - 1e-12)
            assert np.all(ratio <= 1.0 + 2.0 * cert.c_bar + 1e-12)


def test_reference_time_vs_exit_scale(tiar10, tiar10_cert, tiar10_verified):
    chain, part = tiar10
    qsd = tk.quasi_stationary(chain, part.with_basin(tiar10_cert.basin))
    ratio = tiar10_cert.R / qsd.mean_exit_time
    assert ratio <= 10.0 * (tiar10_cert.f + tiar10_verified.delta)


def test_survival_decay_bound(tiar10, tiar10_cert, tiar10_verified):
    chain, part = tiar10
    cert, ver = tiar10_cert, tiar10_verified
    qsd = tk.quasi_stationary(chain, part.with_basin(cert.basin))
    slack = 1.0 + 10.0 * (ver.delta + cert.r + cert.R / qsd.mean_exit_time)
    from trapkit.semigroup import block_propagator

    prop = block_propagator(chain, part.trap)
    eye = np.eye(len(part.trap))
    for k in (1, 2, 4, 8):
        t = 2.0 * k * cert.R
        sup = float(np.asarray(prop.survival(eye, t)).max())
        assert sup <= math.exp(-t / qsd.mean_exit_time) * slack


def test_recurrence_is_submultiplicative(tiar10, tiar10_cert):
    chain, part = tiar10
    staged = part.with_basin(tiar10_cert.basin)
    r1 = tk.check_recurrence(chain, staged, 92.0)
    for k in (2, 3):
        rk = tk.check_recurrence(chain, staged, 92.0 * k)
        assert rk <= r1**k * (1.0 + 1e-9)


def test_recurrence_bounded_by_spread_and_escape(tiar10, tiar10_cert):
    chain, part = tiar10
    cert = tiar10_cert
    spread = tk.pairwise_distance(chain, part.trap, cert.R)
    assert cert.r <= spread + cert.f + cert.f ** (1.0 - cert.alpha)


def test_mean_exit_agreement(tiar10, tiar10_cert):
    chain, part = tiar10
    cert = tiar10_cert
    qsd = tk.quasi_stationary(chain, part.with_basin(cert.basin))
    pi_a = tk.restricted_invariant(tk.stationary_measure(chain), part)
    means = np.array(
        [tk.mean_hitting_time(chain, x, part.goal) for x in part.trap]
    )
    weights = pi_a.weights[list(part.trap)]
    mixture_mean = float(weights @ means)
    qsd_mean = float(qsd.measure.weights[list(part.trap)] @ means)
    assert abs(qsd_mean / mixture_mean - 1.0) <= cert.epsilon2
    for x in cert.basin:
        assert abs(means[part.trap.index(x)] / qsd_mean - 1.0) <= cert.epsilon2


def test_degenerate_basin_mixture_stays_near_invariant():
    # three states, fast internal mixing, slow leak: the basin swallows
    # the whole trap and the conditioned mixture sticks to pi_A
    gen = np.array(
        [
            [-1.0, 1.0, 0.0],
            [1.0, -1.001, 0.001],
            [1.0, 0.0, -1.0],
        ]
    )
    chain = tk.continuous_chain(gen)
    part = tk.TrapPartition.from_goal(3, (2,))
    cert = tk.certify(chain, part, tk.CertificateParameters(1.0, 0.5))
    assert cert.basin == (0, 1)
    assert cert.r == 0.0
    pi_a = tk.restricted_invariant(tk.stationary_measure(chain), part)
    mix = np.zeros(3)
    for x in part.trap:
        res = tk.conditioned_evolution(chain, tk.point_mass(3, x), part, 2.0)
        mix += pi_a.weights[x] * res.measure.weights
    dist = tk.tv_distance(tk.ProbabilityVector(mix), pi_a)
    assert dist <= cert.f / (1.0 - cert.f)


def test_time_reversal_identity_nonreversible():
    # directed cycle with a leak: strongly irreversible, yet the
    # stationary-start escape law must match its time reversal
    gen = np.array(
        [
            [-1.0, 1.0, 0.0, 0.0],
            [0.05, -1.05, 1.0, 0.0],
            [1.0, 0.02, -1.12, 0.1],
            [1.0, 0.0, 0.0, -1.0],
        ]
    )
    chain = tk.continuous_chain(gen)
    rev = tk.adjoint(chain)
    assert np.abs(chain.matrix - rev.matrix).max() > 1e-3
    part = tk.TrapPartition.from_goal(4, (3,))
    pi_a = tk.restricted_invariant(tk.stationary_measure(chain), part)
    grid = tk.geometric_grid(0.1, 200.0, 16)
    fwd = tk.survival_function(chain, pi_a, part.goal, grid).survival
    bwd = tk.survival_function(rev, pi_a, part.goal, grid).survival
    assert np.abs(fwd - bwd).max() < 1e-10


def test_certificate_json_round_trip(tiar10_cert):
    data = json.loads(json.dumps(tiar10_cert.to_dict()))
    assert set(data) == {
        "R", "alpha", "f", "d", "r", "c_bar",
        "epsilon1", "epsilon2", "applicable", "B_alpha",
    }
    back = tk.TrapCertificate.from_dict(data)
    assert back == tiar10_cert or all(
        getattr(back, k) == getattr(tiar10_cert, k)
        for k in ("R", "alpha", "f", "d", "r", "c", "c_bar",
                  "epsilon1", "epsilon2", "applicable", "basin")
    )


def test_inapplicable_certificate_round_trips_none():
    chain = tk.build_birth_death(20)
    part = tk.TrapPartition.from_goal(21, tuple(range(10, 21)))
    cert = tk.certify(chain, part, tk.CertificateParameters(1e4, 0.5))
    assert not cert.applicable
    data = cert.to_dict()
    assert data["c_bar"] is None and data["epsilon1"] is None
    back = tk.TrapCertificate.from_dict(json.loads(json.dumps(data)))
    assert math.isnan(back.c_bar) and not back.applicable
    assert back.c == cert.c
    with pytest.raises(NotApplicable) as err:
        tk.certify(chain, part, tk.CertificateParameters(1e4, 0.5), strict=True)
    assert err.value.f == cert.f and err.value.r == cert.r


def test_exponentiality_report_fields(tiar10, tiar10_cert):
    chain, part = tiar10
    rep = tk.exponentiality_report(chain, part, tiar10_cert)
    assert rep.bound_reference == 10.0 * (tiar10_cert.r + tiar10_cert.epsilon2)
    assert rep.bound_satisfied
    assert rep.mixture_deviation <= rep.epsilon_measured
    # the guarantee window starts where both reference windows fit
    assert abs(rep.scaled_grid[0] * rep.time_scale - 2.0 * tiar10_cert.R) < 1.0
    for x, w, dev in rep.per_start:
        if x in tiar10_cert.basin:
            assert w == 1.0
        else:
            assert 0.0 <= w < 1.0
        assert dev <= rep.epsilon_measured
    assert set(rep.per_start_deviations) == set(part.trap)
    assert rep.prefactors[3] == 1.0
    rows = list(rep.curves())
    assert len(rows) == len(rep.scaled_grid) * (len(part.trap) + 1)
    start, t, surv, ref, dev = rows[0]
    assert start == -1 and abs(dev - math.exp(t) * abs(surv - ref)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 50.0), st.floats(1.1, 40.0), st.integers(4, 64))
def test_geometric_grid_properties(start, factor, ppd):
    stop = start * factor
    grid = tk.geometric_grid(start, stop, ppd)
    assert grid[0] == pytest.approx(start) and grid[-1] == pytest.approx(stop)
    ratios = grid[1:] / grid[:-1]
    assert ratios.max() - ratios.min() < 1e-9
    allowed = math.ceil(math.log10(stop / start) * ppd) + 1
    assert 2 <= len(grid) <= max(allowed, 2)
    integer = tk.geometric_grid(start, stop, ppd, integer=True)
    assert np.array_equal(integer, np.unique(np.round(integer)))
    assert np.all(integer >= 1.0)
