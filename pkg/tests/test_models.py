import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import trapkit as tk
from trapkit.errors import BoundViolation, LumpingViolation, TooLarge


def test_well_detailed_balance():
    chain = tk.build_birth_death(50)
    pi = tk.stationary_measure(chain).weights
    for x in range(50):
        flow = pi[x] * chain.matrix[x, x + 1]
        back = pi[x + 1] * chain.matrix[x + 1, x]
        assert abs(flow - back) < 1e-15


def test_well_depth_ratio():
    spec = tk.birth_death_spec(100)
    w = spec.stationary.weights
    assert abs(w[0] / w[50] - 125.0) < 1e-10
    # symmetric double well
    assert np.abs(w - w[::-1]).max() < 1e-15


def test_drift_signs_inside_the_well():
    n = 40
    chain = tk.build_birth_death(n)
    for x in range(2, n // 2):
        assert chain.matrix[x, x + 1] < 1.0
        assert chain.matrix[x, x - 1] == 1.0
    # edge exceptions: the bottom state climbs freely, its neighbour
    # does not descend at full rate
    assert chain.matrix[0, 1] == 1.0
    assert chain.matrix[1, 0] < 1.0


def test_normalization_scale():
    for n in (100, 400, 1600):
        spec = tk.birth_death_spec(n)
        assert 6.0 < spec.normalization * n**1.5 < 8.0


def test_half_chain_reflects():
    chain = tk.build_birth_death_half(40)
    assert chain.state_count == 21
    assert chain.matrix[20, 20] < 0.0
    assert np.count_nonzero(chain.matrix[20, :20]) == 1


def test_size_validation():
    for bad in (3, 7, 2):
        with pytest.raises(ValueError):
            tk.build_birth_death(bad)
    with pytest.raises(ValueError):
        tk.barrier_weights(1)


def test_projection_measure_closed_form():
    for n in (2, 3, 10, 30):
        spec = tk.tiar_spec(n)
        expected = [1.0 / math.factorial(n)]
        expected += [
            (n - k) / math.factorial(n - k + 1) for k in range(1, n)
        ]
        assert np.abs(spec.stationary.weights - np.array(expected)).max() < 1e-12
        got = tk.stationary_measure(tk.build_tiar_projection(n)).weights
        assert np.abs(got - np.array(expected)).max() < 1e-12


def test_projection_cumulative_mass():
    n = 12
    exact = tk.tiar_projection_invariant(n)
    for k in range(n):
        cum = sum(exact[: k + 1])
        assert cum == Fraction(1, math.factorial(n - k))
    assert sum(exact) == 1


def test_projection_rows(tiar10):
    chain, _ = tiar10
    n = 10
    mat = chain.matrix
    assert np.abs(mat.sum(axis=1) - 1.0).max() < 1e-15
    assert np.abs(mat[0] - 1.0 / n).max() < 1e-15
    for i in range(1, n):
        assert mat[i, i - 1] == pytest.approx(1.0 / n, abs=1e-15)
        assert mat[i, i] == pytest.approx(i / n, abs=1e-15)
        for j in range(i + 1, n):
            assert mat[i, j] == pytest.approx(1.0 / n, abs=1e-15)
        if i >= 2:
            assert np.abs(mat[i, : i - 1]).max() == 0.0


def test_sigma_examples():
    assert tk.sigma((0, 1, 2, 3)) == 0
    assert tk.sigma((1, 0, 2, 3)) == 1
    assert tk.sigma((0, 2, 1, 3)) == 2
    assert tk.sigma((3, 0, 1, 2)) == 1
    assert tk.sigma((0, 1, 3, 2)) == 3


@settings(max_examples=60, deadline=None)
@given(st.permutations(tuple(range(6))))
def test_sigma_is_last_descent(perm):
    perm = tuple(perm)
    descents = [i for i in range(1, 6) if perm[i - 1] > perm[i]]
    assert tk.sigma(perm) == (max(descents) if descents else 0)
    assert (tk.sigma(perm) == 0) == (perm == tuple(sorted(perm)))


def test_full_shuffle_structure():
    chain = tk.build_tiar_full(4)
    assert chain.state_count == 24
    assert np.abs(chain.matrix.sum(axis=1) - 1.0).max() < 1e-15
    # uniform measure is invariant for a random-insertion walk
    uniform = np.full(24, 1.0 / 24.0)
    assert np.abs(uniform @ chain.matrix - uniform).max() < 1e-15
    # holding happens exactly when the top card returns to the top
    assert chain.matrix[0, 0] == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(TooLarge):
        tk.build_tiar_full(9)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_lumping_is_exact(n):
    full = tk.build_tiar_full(n)
    ok, discrepancy = tk.project_and_verify_lumping(full, n)
    assert ok and discrepancy == 0.0


def test_lumping_violation_names_a_witness():
    full = tk.build_tiar_full(3)
    kernel = full.matrix.copy()
    # reroute one transition: preserves stochasticity, breaks the lump
    row = kernel[2].copy()
    moved = np.flatnonzero(row > 0)[:2]
    row[moved[0]] -= 1.0 / 3.0
    row[moved[1]] += 1.0 / 3.0
    kernel[2] = row
    broken = tk.discrete_chain(kernel, labels=full.labels)
    with pytest.raises(LumpingViolation) as err:
        tk.project_and_verify_lumping(broken, 3)
    assert err.value.witness is not None


def test_return_bounds_small_cases():
    rows = tk.return_bound_table(5)
    assert [r.k for r in rows] == [1, 2, 3, 4]
    for r in rows:
        assert r.probability <= r.bound + 1e-15
        assert r.mean_visits == pytest.approx(1.0 / r.probability, rel=1e-12)
    assert rows[0].probability == pytest.approx(1.0 / 5.0, abs=1e-12)
    assert rows[0].bound == pytest.approx(
        float(Fraction(4 * math.factorial(3), math.factorial(5))), abs=1e-15
    )


def test_return_probability_matches_embedded_oracle():
    # one-step decomposition on the projection kernel, done by hand
    n = 6
    chain = tk.build_tiar_projection(n)
    kernel = chain.matrix
    for k in range(1, n):
        # absorb at 0 and at k, take one step from k first
        interior = [x for x in range(1, n) if x != k]
        a = np.eye(len(interior)) - kernel[np.ix_(interior, interior)]
        b = kernel[np.ix_(interior, [0])].sum(axis=1)
        h = np.linalg.solve(a, b)
        h_full = {x: h[i] for i, x in enumerate(interior)}
        h_full[0] = 1.0
        h_full[k] = 0.0
        p = sum(kernel[k, y] * h_full.get(y, 0.0) for y in range(n))
        assert abs(tk.return_vs_hit_probability(chain, k, (0,)) - p) < 1e-12


@pytest.mark.parametrize("n", list(range(8, 13)))
def test_projection_certificates_scale(n):
    chain = tk.build_tiar_projection(n)
    part = tk.TrapPartition.from_goal(n, (0,))
    R = round(4 * n * math.log(n))
    cert = tk.certify(chain, part, tk.CertificateParameters(float(R), 0.5))
    assert cert.applicable
    assert cert.f <= 1.5 * R * n * math.log(n) / math.factorial(n)


def test_asymptotics_table_contract():
    with pytest.raises(ValueError):
        tk.birth_death_asymptotics_check((200, 100))
    with pytest.raises(TooLarge):
        tk.birth_death_asymptotics_check((2002,))
    rows = tk.birth_death_asymptotics_check((100, 200))
    assert [r.n for r in rows] == [100, 200]
    for r in rows:
        assert r.uphill > 0 and r.downhill > 0 and r.barrier > 0
