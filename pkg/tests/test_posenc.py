import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memtrack.posenc import (
    EncodingTable,
    expand_piecewise,
    expand_uniform,
    piecewise_coefficients,
    reference_base_table,
    uniform_coefficients,
)


def random_base(seed=0, dim=5):
    rng = np.random.default_rng(seed)
    return EncodingTable(rng.normal(size=(7, dim)))


def interp_oracle_piecewise(base, m):
    """Independent per-dimension 1-D linear interpolation via np.interp."""
    out = np.empty((m, base.dim))
    out[0] = base.entries[0]
    out[m - 1] = base.entries[6]
    interior_positions = np.array([1.0 + 4.0 * (k - 1) / (m - 3) for k in range(1, m - 1)])
    xs = np.arange(1.0, 6.0)
    for d in range(base.dim):
        out[1 : m - 1, d] = np.interp(interior_positions, xs, base.entries[1:6, d])
    return out


def interp_oracle_uniform(base, m):
    positions = np.array([6.0 * k / (m - 1) for k in range(m)])
    xs = np.arange(0.0, 7.0)
    out = np.empty((m, base.dim))
    for d in range(base.dim):
        out[:, d] = np.interp(positions, xs, base.entries[:, d])
    return out


class TestPiecewise:
    def test_m7_identity_bit_exact(self):
        base = random_base(1)
        out = expand_piecewise(base, 7)
        assert np.array_equal(out.entries, base.entries)

    def test_m15_slot1_is_p1(self):
        # k=1: t=0, u=1 -> exactly p1
        base = random_base(2)
        out = expand_piecewise(base, 15)
        assert np.array_equal(out.entries[1], base.entries[1])

    def test_m15_slot7_is_p3(self):
        # k=7: t=6/12=0.5, u=3.0, alpha=0 -> exactly p3
        base = random_base(3)
        out = expand_piecewise(base, 15)
        assert np.array_equal(out.entries[7], base.entries[3])

    def test_m15_slot12_blend(self):
        # k=12: t=11/12, u=1+44/12=4.6667, alpha=0.6667 -> (1/3) p4 + (2/3) p5
        base = random_base(4)
        out = expand_piecewise(base, 15)
        alpha = (1.0 + 4.0 * (11.0 / 12.0)) - 4.0
        expected = (1.0 - alpha) * base.entries[4] + alpha * base.entries[5]
        np.testing.assert_allclose(out.entries[12], expected, rtol=0, atol=1e-15)
        assert alpha == pytest.approx(2 / 3, abs=1e-12)

    @pytest.mark.parametrize("m", [8, 10, 13, 15, 20, 31])
    def test_boundary_slots_fixed(self, m):
        base = random_base(m)
        out = expand_piecewise(base, m)
        assert np.array_equal(out.entries[0], base.entries[0])
        assert np.array_equal(out.entries[m - 1], base.entries[6])
        assert np.array_equal(out.entries[1], base.entries[1])
        assert np.array_equal(out.entries[m - 2], base.entries[5])

    @pytest.mark.parametrize("m", [7, 9, 12, 15, 24])
    def test_matches_interp_oracle(self, m):
        base = random_base(m + 100)
        out = expand_piecewise(base, m)
        np.testing.assert_allclose(out.entries, interp_oracle_piecewise(base, m), rtol=1e-12)

    def test_rejects_bad_sizes(self):
        base = random_base(9)
        with pytest.raises(ValueError):
            expand_piecewise(base, 6)
        with pytest.raises(ValueError):
            expand_piecewise(EncodingTable(np.zeros((6, 3)) + np.arange(6)[:, None]), 10)


class TestUniform:
    def test_m7_identity_bit_exact(self):
        base = random_base(11)
        assert np.array_equal(expand_uniform(base, 7).entries, base.entries)

    @pytest.mark.parametrize("m", [7, 8, 13, 15, 20])
    def test_endpoints(self, m):
        base = random_base(m)
        out = expand_uniform(base, m)
        assert np.array_equal(out.entries[0], base.entries[0])
        assert np.array_equal(out.entries[m - 1], base.entries[6])

    def test_m13_slot1_halfway(self):
        # k=1: u=6/12=0.5 -> midpoint of p0 and p1
        base = random_base(13)
        out = expand_uniform(base, 13)
        expected = 0.5 * base.entries[0] + 0.5 * base.entries[1]
        np.testing.assert_allclose(out.entries[1], expected, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("m", [7, 10, 15, 20, 33])
    def test_matches_interp_oracle(self, m):
        base = random_base(m + 200)
        out = expand_uniform(base, m)
        np.testing.assert_allclose(out.entries, interp_oracle_uniform(base, m), rtol=1e-12)

    def test_uniform_violates_interior_pinning_generically(self):
        # distinguishes the two schemes: uniform moves slot 1 off p1 for m > 7
        base = random_base(17)
        out = expand_uniform(base, 15)
        assert not np.allclose(out.entries[1], base.entries[1])

    def test_affine_base_reproduced_exactly(self):
        # if p_j = a + j*b the uniform resampling must give a + u*b at each slot
        a = np.array([2.0, -1.0, 0.5])
        b = np.array([0.25, 1.5, -3.0])
        base = EncodingTable(a[None, :] + np.arange(7)[:, None] * b[None, :])
        for m in (7, 9, 16):
            out = expand_uniform(base, m)
            us = np.array([6.0 * k / (m - 1) for k in range(m)])
            np.testing.assert_allclose(out.entries, a[None, :] + us[:, None] * b[None, :], atol=1e-12)


@settings(max_examples=80)
@given(st.integers(7, 40), st.sampled_from(["piecewise", "uniform"]))
def test_convex_combination_of_adjacent_entries(m, scheme):
    coeffs = piecewise_coefficients(m) if scheme == "piecewise" else uniform_coefficients(m)
    assert len(coeffs) == m
    for low, high, alpha in coeffs:
        assert 0 <= low <= high <= 6
        assert high - low <= 1
        assert 0.0 <= alpha < 1.0 or (alpha == 0.0 and low == high)
        # weights (1-alpha, alpha) are nonnegative and sum to one by construction
        assert (1.0 - alpha) + alpha == pytest.approx(1.0)


def test_reference_base_table_shape():
    table = reference_base_table(dim=12)
    assert len(table) == 7 and table.dim == 12
    assert np.isfinite(table.entries).all()
