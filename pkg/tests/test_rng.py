"""Tests for the per-particle random streams."""

import numpy as np
import pytest

from mv_maxprinciple.forward.rng import brownian_increments, derived_generator, particle_generator


class TestParticleStreams:
    def test_stream_depends_only_on_key(self):
        a = particle_generator(1, 0, 5).standard_normal(3)
        b = particle_generator(1, 0, 5).standard_normal(3)
        assert np.array_equal(a, b)

    def test_namespaces_differ(self):
        a = particle_generator(1, 0, 5).standard_normal(3)
        b = particle_generator(1, 1, 5).standard_normal(3)
        assert not np.array_equal(a, b)

    def test_increments_independent_of_workers(self):
        one = brownian_increments(3, 0, 17, 6, 2, 0.1, workers=1)
        four = brownian_increments(3, 0, 17, 6, 2, 0.1, workers=4)
        assert one.shape == (17, 6, 2)
        assert np.array_equal(one, four)

    def test_increments_prefix_shared_across_sizes(self):
        small = brownian_increments(3, 0, 5, 4, 1, 0.1)
        large = brownian_increments(3, 0, 9, 4, 1, 0.1)
        assert np.array_equal(small, large[:5])

    def test_variance_is_dt(self):
        dw = brownian_increments(3, 0, 4000, 5, 1, 0.04)
        assert dw.var() == pytest.approx(0.04, rel=0.05)

    def test_derived_stream_disjoint_from_particles(self):
        aux = derived_generator(1, 0, 5).standard_normal(3)
        particle = particle_generator(1, 0, 5).standard_normal(3)
        assert not np.array_equal(aux, particle)
