from itertools import combinations_with_replacement
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toruspolaron.errors import CapacityError, ContractViolation
from toruspolaron.fock import (enumerate_sector, rank_multisets,
                               sector_dimension, state_index)
from toruspolaron.lattice import TWO_PI, build_lattice

LAT6 = build_lattice(TWO_PI)


def test_vacuum_only():
    b = enumerate_sector(LAT6, 0)
    assert b.dim == 1
    assert b.state_modes(0) == ()


def test_one_boson_count():
    b = enumerate_sector(LAT6, 1)
    assert b.dim == 7


def test_two_boson_count_against_bruteforce():
    b = enumerate_sector(LAT6, 2)
    brute = 1 + 6 + len(list(combinations_with_replacement(range(6), 2)))
    assert b.dim == 28 == brute == sector_dimension(6, 2)


def test_dimension_formula_larger():
    lat = build_lattice(np.sqrt(2) * TWO_PI)
    b = enumerate_sector(lat, 3)
    assert b.dim == sum(comb(lat.size + j - 1, j) for j in range(4))
    assert b.dim == b.offsets[-1]


def test_vacuum_is_state_zero_and_ordering_deterministic():
    b1 = enumerate_sector(LAT6, 2)
    b2 = enumerate_sector(LAT6, 2)
    assert b1.state_modes(0) == ()
    for j in range(3):
        assert np.array_equal(b1.blocks[j], b2.blocks[j])


def test_state_index_roundtrip():
    b = enumerate_sector(LAT6, 2)
    rng = np.random.default_rng(0)
    for i in rng.integers(0, b.dim, size=10):
        assert state_index(b, b.state_modes(int(i))) == int(i)
        assert state_index(b, b.occupations(int(i))) == int(i)


def test_lookup_errors():
    b = enumerate_sector(LAT6, 1)
    with pytest.raises(KeyError):
        state_index(b, {(5, 5, 5): 1})      # off-lattice mode
    with pytest.raises(KeyError):
        state_index(b, (0, 1))              # beyond the boson cap
    with pytest.raises(KeyError):
        state_index(b, (17,))               # mode ordinal outside lattice


def test_capacity_error_reports_dimension():
    lat = build_lattice(3 * TWO_PI)
    with pytest.raises(CapacityError) as err:
        enumerate_sector(lat, 3, max_states=100)
    assert err.value.requested == sector_dimension(lat.size, 3)


def test_negative_cap_rejected():
    with pytest.raises(ContractViolation):
        enumerate_sector(LAT6, -1)


def test_boson_momentum_cache():
    b = enumerate_sector(LAT6, 2, p_total=(1, 0, 0))
    for i in range(b.dim):
        total = np.zeros(3, dtype=int)
        for m in b.state_modes(i):
            total += LAT6.ints[m]
        assert np.array_equal(b.boson_momentum[i], total)
    imp = b.impurity_momentum_int()
    assert np.array_equal(imp[0], (1, 0, 0))


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=1, max_value=4), st.integers(min_value=2, max_value=9))
def test_rank_multisets_matches_enumeration(j, n_modes):
    rows = np.array(list(combinations_with_replacement(range(n_modes), j)),
                    dtype=np.int32)
    ranks = rank_multisets(rows, n_modes)
    assert np.array_equal(ranks, np.arange(rows.shape[0]))


def test_impurity_filter():
    # only states whose implicit impurity momentum stays on the 6-point set
    b = enumerate_sector(LAT6, 1, p_total=(1, 0, 0),
                         impurity_ints=LAT6.ints)
    # vacuum keeps impurity (1,0,0): allowed; a boson at k needs (1,0,0)-k
    # on the set, which fails for k = (1,0,0) (origin) and k = (2,0,0)-type
    allowed = {tuple(v) for v in LAT6.ints.tolist()}
    expected = 1 + sum(1 for v in LAT6.ints
                       if tuple((np.array((1, 0, 0)) - v).tolist()) in allowed)
    assert b.dim == expected
