"""Tests for per-stage seed derivation."""

import numpy as np

from genetic_rehearsal._rng import as_generator, derive_rng, derive_seed


def test_same_inputs_same_seed():
    assert derive_seed(7, "ga", 1, 0) == derive_seed(7, "ga", 1, 0)


def test_stages_and_indices_separate_streams():
    seeds = {
        derive_seed(7, "ga"),
        derive_seed(7, "enrich"),
        derive_seed(7, "ga", 0),
        derive_seed(7, "ga", 1),
        derive_seed(8, "ga"),
    }
    assert len(seeds) == 5


def test_seed_fits_in_32_bits():
    assert 0 <= derive_seed(2**40, "train") < 2**32


def test_derive_rng_matches_seed():
    a = derive_rng(3, "init", 2).random(4)
    b = np.random.default_rng(derive_seed(3, "init", 2)).random(4)
    np.testing.assert_array_equal(a, b)


def test_as_generator_passes_generators_through():
    rng = np.random.default_rng(0)
    assert as_generator(rng) is rng
    np.testing.assert_array_equal(as_generator(5).random(2), np.random.default_rng(5).random(2))


def test_trailing_zero_index_is_a_new_stream():
    assert derive_seed(7, "ga") != derive_seed(7, "ga", 0)
    assert derive_seed(7, "train") != derive_seed(7, "train", 0)
    assert derive_seed(7, "ga", 1) != derive_seed(7, "ga", 1, 0)
