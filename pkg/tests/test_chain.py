import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

import trapkit as tk
from trapkit.chain import CONTINUOUS, DISCRETE
from trapkit.errors import (
    ChainFormatError,
    InvalidChain,
    InvalidDistribution,
    NonIntegerTime,
)

from conftest import random_generator, random_kernel


def two_state_chain():
    return tk.continuous_chain([[-1.0, 1.0], [1.0, -1.0]])


def test_two_state_relaxation_closed_form():
    chain = two_state_chain()
    nu = tk.point_mass(2, 0)
    out = tk.evolve(chain, nu, 1.0)
    expected = np.array([(1.0 + np.exp(-2.0)) / 2.0, (1.0 - np.exp(-2.0)) / 2.0])
    assert np.abs(out.weights - expected).max() < 1e-12


def test_evolve_matches_expm(rng):
    gen = random_generator(rng, 6)
    chain = tk.continuous_chain(gen)
    nu = tk.ProbabilityVector(np.full(6, 1.0 / 6.0))
    for t in (0.3, 1.7, 8.0):
        expected = scipy.linalg.expm(t * gen).T @ nu.weights
        out = tk.evolve(chain, nu, t).weights
        assert np.abs(out - expected).max() < 1e-9


def test_semigroup_property(rng):
    chain = tk.continuous_chain(random_generator(rng, 5))
    nu = tk.point_mass(5, 2)
    for s, t in ((0.5, 0.25), (1.0, 3.0), (4.0, 6.0)):
        once = tk.evolve(chain, nu, s + t).weights
        twice = tk.evolve(chain, tk.evolve(chain, nu, s), t).weights
        assert np.abs(once - twice).max() < 1e-9


def test_discrete_semigroup_and_integer_times(rng):
    chain = tk.discrete_chain(random_kernel(rng, 5))
    nu = tk.point_mass(5, 0)
    once = tk.evolve(chain, nu, 7.0).weights
    twice = tk.evolve(chain, tk.evolve(chain, nu, 3.0), 4.0).weights
    assert np.abs(once - twice).max() < 1e-12
    with pytest.raises(NonIntegerTime):
        tk.evolve(chain, nu, 0.5)


def test_stationary_measure_is_fixed(rng):
    for chain in (
        tk.continuous_chain(random_generator(rng, 7)),
        tk.discrete_chain(random_kernel(rng, 7)),
        two_state_chain(),
    ):
        pi = tk.stationary_measure(chain)
        if chain.is_continuous():
            assert np.abs(pi.weights @ chain.matrix).max() < 1e-12
        else:
            assert np.abs(pi.weights @ chain.matrix - pi.weights).max() < 1e-12
        assert np.abs(tk.evolve(chain, pi, 5.0).weights - pi.weights).max() < 1e-10


def test_uniformization_rate_does_not_matter(rng):
    gen = random_generator(rng, 5)
    base = tk.continuous_chain(gen)
    doubled = tk.continuous_chain(gen, uniformization_rate=2.0 * base.uniformization_rate)
    nu = tk.point_mass(5, 1)
    for t in (0.1, 2.0, 9.0):
        a = tk.evolve(base, nu, t).weights
        b = tk.evolve(doubled, nu, t).weights
        assert np.abs(a - b).max() < 1e-9


def test_adjoint_reverses_and_involutes(rng):
    chain = tk.continuous_chain(random_generator(rng, 6))
    pi = tk.stationary_measure(chain)
    rev = tk.adjoint(chain)
    # same stationary measure, and reversing twice is the identity
    assert np.abs(tk.stationary_measure(rev).weights - pi.weights).max() < 1e-10
    back = tk.adjoint(rev)
    assert np.abs(back.matrix - chain.matrix).max() < 1e-12
    # detailed-balance chains are self-adjoint
    bd = tk.build_birth_death(20)
    assert np.abs(tk.adjoint(bd).matrix - bd.matrix).max() < 1e-12


def test_validate_flags_defects():
    gen = np.array([[-1.0, 1.0], [1.0, -1.0]])
    chain = tk.continuous_chain(gen)
    object.__setattr__(chain, "matrix", np.array([[-1.0, 0.5], [1.0, -1.0]]))
    violations = tk.validate(chain)
    assert violations and any("row" in v for v in violations)


def test_invalid_chain_raises_on_construction():
    with pytest.raises(InvalidChain):
        tk.continuous_chain([[-1.0, 2.0], [1.0, -1.0]])
    with pytest.raises(InvalidChain):
        tk.discrete_chain([[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(InvalidChain):
        tk.continuous_chain([[-1.0, 1.0], [-1.0, 1.0]])


def test_probability_vector_guards():
    with pytest.raises(InvalidDistribution):
        tk.ProbabilityVector(np.array([0.5, -0.1, 0.6]))
    with pytest.raises(InvalidDistribution):
        tk.ProbabilityVector(np.array([0.3, 0.3]))
    pv = tk.point_mass(4, 2)
    assert pv.weights[2] == 1.0 and pv.mass((2,)) == 1.0
    assert pv.support() == (2,)


def test_json_round_trip_is_bit_exact(tmp_path, rng):
    # diagonals are derived rather than stored, so bit-exactness is a
    # property of the serialized form, not of arbitrary in-memory kernels
    for chain in (
        tk.continuous_chain(random_generator(rng, 5), labels=tuple("abcde")),
        tk.discrete_chain(random_kernel(rng, 4)),
        tk.build_tiar_projection(6),
    ):
        data = tk.chain_to_dict(chain)
        back = tk.chain_from_dict(json.loads(json.dumps(data)))
        assert back.time_kind == chain.time_kind
        assert back.labels == chain.labels
        assert tk.chain_to_dict(back) == data
        assert np.abs(back.matrix - chain.matrix).max() < 1e-15
        path = tmp_path / "chain.json"
        tk.save_chain(chain, path)
        first = path.read_bytes()
        tk.save_chain(tk.load_chain(path), path)
        assert path.read_bytes() == first


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda d: d.pop("states"), "states"),
        (lambda d: d["entries"].append([0, 0, 1.0]), "diagonal"),
        (lambda d: d["entries"].append([0, 99, 1.0]), "index"),
        (lambda d: d["entries"].append(d["entries"][0]), "duplicate"),
        (lambda d: d["entries"].__setitem__(0, [0, 1, -2.0]), "nonnegative"),
        (lambda d: d.update(time="weekly"), "time"),
    ],
)
def test_format_errors_name_the_field(mutate, needle):
    data = tk.chain_to_dict(tk.continuous_chain([[-1.0, 1.0], [1.0, -1.0]]))
    mutate(data)
    with pytest.raises(ChainFormatError) as err:
        tk.chain_from_dict(data)
    assert needle in str(err.value)


def test_restrict_reindexes():
    chain = tk.build_tiar_projection(5)
    sub = tk.restrict(chain, (1, 2, 3, 4))
    assert sub.kept_states == (1, 2, 3, 4)
    assert sub.sub_generator.shape == (4, 4)
    assert np.array_equal(sub.sub_generator, chain.matrix[1:, 1:])


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10**6))
def test_random_discrete_chains_validate_and_fix_pi(n, seed):
    kernel = random_kernel(np.random.default_rng(seed), n)
    chain = tk.discrete_chain(kernel)
    assert tk.validate(chain) == []
    pi = tk.stationary_measure(chain).weights
    assert np.abs(pi @ kernel - pi).max() < 1e-10


def test_time_kind_constants():
    assert tk.build_birth_death(10).time_kind == CONTINUOUS
    assert tk.build_tiar_projection(4).time_kind == DISCRETE
