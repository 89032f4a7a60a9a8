from __future__ import annotations

import pytest

from src.convolution.edges import (
    edge_by_stability,
    find_lower_edge,
    find_upper_edge,
    m_inverse_real,
    m_real,
    z_tilde_upper,
)
from src.errors import EdgeBracketFailure
from src.measures.spectral import SpectralMeasure


def _m_two_atom(x: float) -> float:
    # ½(δ_1 + δ_3) の実軸上の M
    return x * (2.0 - x) / (3.0 - 2.0 * x)


# -------------------
# 実軸上の M
# -------------------

@pytest.mark.parametrize("x", [3.5, 5.0, 20.0])
def test_m_real_closed_form(two_atom, x):
    assert m_real(two_atom, x) == pytest.approx(_m_two_atom(x), rel=1e-13)


def test_m_inverse_upper(two_atom):
    assert m_inverse_real(two_atom, 15.0 / 7.0, "upper") == pytest.approx(5.0, rel=1e-13)


def test_m_inverse_lower(two_atom):
    # (0, 1) 側: M(0.5) = 0.75/2 = 0.375
    assert m_inverse_real(two_atom, 0.375, "lower") == pytest.approx(0.5, rel=1e-12)


def test_m_inverse_out_of_range(two_atom):
    # 上側の M は 1 より大きい
    with pytest.raises(EdgeBracketFailure):
        m_inverse_real(two_atom, 0.5, "upper")


def test_z_tilde_identity_factor(delta1, two_atom):
    # μ_A = δ_1 なら z̃(Ω) = Ω
    assert z_tilde_upper(delta1, two_atom, 5.0) == pytest.approx(5.0, rel=1e-12)


# -------------------
# 端
# -------------------

def test_two_atom_pair_hard_edges(two_atom):
    up = find_upper_edge(two_atom, two_atom)
    low = find_lower_edge(two_atom, two_atom)
    assert up.e_plus == pytest.approx(9.0, abs=1e-6)
    assert low.e_minus == pytest.approx(1.0, abs=1e-6)


def test_identity_factor_keeps_support(delta1, two_atom):
    up = find_upper_edge(delta1, two_atom)
    assert up.e_plus == pytest.approx(3.0, abs=1e-6)
    # 閾値 Ω_B(E₊) は M_B(3⁺) = 1、Ω_A(E₊) = E₊
    assert up.omega_b_at_edge == pytest.approx(1.0, abs=1e-6)
    assert up.omega_a_at_edge == pytest.approx(3.0, abs=1e-6)


def test_dilated_semicircle_edges(semicircle):
    a = SpectralMeasure.point_mass(2.0)
    assert find_upper_edge(a, semicircle).e_plus == pytest.approx(6.0, abs=1e-6)
    assert find_lower_edge(a, semicircle).e_minus == pytest.approx(2.0, abs=1e-6)


def test_regular_pair_soft_edge(semicircle):
    up = find_upper_edge(semicircle, semicircle)
    low = find_lower_edge(semicircle, semicircle)
    assert 1.0 < low.e_minus < up.e_plus < 9.0
    # 臨界点は台の外
    assert up.omega_a_at_edge > semicircle.support_hi
    assert up.omega_b_at_edge > semicircle.support_hi


def test_edge_by_stability_agrees(semicircle):
    up = find_upper_edge(semicircle, semicircle)
    assert edge_by_stability(semicircle, semicircle) == pytest.approx(up.e_plus, rel=1e-6)
