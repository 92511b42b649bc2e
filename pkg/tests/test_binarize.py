"""Sign, stochastic sign, and clipping."""

import math

import numpy as np
import pytest

from binfed.nn.binarize import clip_params, sign, sto_sign
from binfed.rng import stream

N_BIG = 10**6


class TestSign:
    def test_tie_rule(self):
        assert sign(np.array([0.3, -0.2, 0.0])).tolist() == [1.0, -1.0, 1.0]

    def test_all_negative(self):
        assert (sign(-np.ones(5)) == -1).all()

    def test_idempotent(self):
        w = stream(1, "w").uniform(-1, 1, 100)
        assert np.array_equal(sign(sign(w)), sign(w))


class TestStoSign:
    def test_boundary_deterministic(self):
        assert (sto_sign(np.ones(1000), stream(2, "s")) == 1).all()
        assert (sto_sign(-np.ones(1000), stream(2, "s")) == -1).all()

    def test_unbiased_at_half(self):
        out = sto_sign(np.full(N_BIG, 0.5), stream(3, "s"))
        sigma3 = 3 * math.sqrt((1 - 0.25) / N_BIG)
        assert abs(out.mean() - 0.5) <= sigma3
        assert sigma3 < 0.0026665

    def test_symmetric_at_zero(self):
        out = sto_sign(np.zeros(N_BIG), stream(4, "s"))
        assert abs(out.mean()) <= 0.003

    def test_output_is_signs(self):
        out = sto_sign(stream(5, "w").uniform(-1, 1, 10000), stream(5, "s"))
        assert set(np.unique(out)) <= {-1.0, 1.0}

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            sto_sign(np.array([1.5]), stream(6, "s"))


class TestClip:
    def test_values(self):
        out = clip_params(np.array([1.5, -3.0, 0.2]))
        assert out.tolist() == [1.0, -1.0, 0.2]

    def test_idempotent(self):
        w = stream(7, "w").normal(0, 2, 1000)
        assert np.array_equal(clip_params(clip_params(w)), clip_params(w))

    def test_noop_in_range(self):
        w = stream(8, "w").uniform(-1, 1, 1000)
        assert np.array_equal(clip_params(w), w)
