from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
import hypothesis as h
import hypothesis.strategies as st

from src.cli.presets import get_preset
from src.errors import ScheduleError
from src.measures.spectral import SpectralMeasure, transforms
from src.subordination.config import DEFAULT_CONFIG
from src.subordination.kantorovich import certify
from src.subordination.solver import (
    PointStatus,
    SubordinationSolution,
    convolution_stieltjes,
    geometric_schedule,
    solve_at,
    solve_grid,
    solve_path,
    solve_real,
)
from src.subordination.system import default_guess, phi


@st.composite
def lattice_measures(draw):
    # 0.5 刻みの {0.5, ..., 3} 上の atom
    k = draw(st.integers(1, 3))
    xs = draw(st.lists(st.integers(1, 6), min_size=k, max_size=k, unique=True))
    ws = draw(st.lists(st.integers(1, 4), min_size=k, max_size=k))
    total = float(sum(ws))
    return SpectralMeasure.atomic([(0.5 * x, w / total) for x, w in zip(xs, ws)])


# -------------------
# system
# -------------------

def test_phi_vanishes_for_identity_factor(delta1, two_atom):
    z = 2.0 + 0.5j
    mb = transforms(two_atom, z).M
    pa, pb = phi(delta1, two_atom, z, mb, z)
    assert abs(pa) <= 1e-14
    assert abs(pb) <= 1e-14


def test_phi_vanishes_for_point_masses():
    a, b = SpectralMeasure.point_mass(2.0), SpectralMeasure.point_mass(3.0)
    z = 1.0 + 2.0j
    pa, pb = phi(a, b, z / 2.0, z / 3.0, z)
    assert abs(pa) <= 1e-14 and abs(pb) <= 1e-14


def test_default_guess_scales_with_mean(two_atom, delta1):
    z = np.array([4.0 + 10.0j])
    ga, gb = default_guess(two_atom, delta1, z)
    assert ga[0] == z[0] / 2.0
    assert gb[0] == z[0]


# -------------------
# schedule
# -------------------

def test_geometric_schedule_stops_at_target():
    assert geometric_schedule(1.0, 0.1, 0.5) == [1.0, 0.5, 0.25, 0.125, 0.1]


def test_geometric_schedule_to_real_axis():
    s = geometric_schedule(1.0, 0.0, 0.5, floor=1e-3)
    assert s[-1] == 0.0
    assert s[-2] == 1e-3
    assert all(b < a for a, b in zip(s, s[1:]))


@pytest.mark.parametrize("ratio", [0.0, 1.0, 1.5])
def test_geometric_schedule_rejects_ratio(ratio):
    with pytest.raises(ScheduleError):
        geometric_schedule(1.0, 0.1, ratio)


def test_solve_path_rejects_increasing_schedule(two_atom):
    with pytest.raises(ScheduleError):
        solve_path(two_atom, two_atom, 2.0, [1.0, 2.0])
    with pytest.raises(ScheduleError):
        solve_path(two_atom, two_atom, 2.0, [1.0, 0.0, 0.5])


def test_solve_at_rejects_origin(two_atom):
    with pytest.raises(ScheduleError):
        solve_at(two_atom, two_atom, 0.0)


# -------------------
# closed forms
# -------------------

def test_point_masses_give_linear_omegas():
    a, b = SpectralMeasure.point_mass(2.0), SpectralMeasure.point_mass(3.0)
    z = 4.0 + 0.3j
    sol = solve_at(a, b, z)
    assert abs(sol.omega_a - z / 2.0) <= 1e-10
    assert abs(sol.omega_b - z / 3.0) <= 1e-10


def test_identity_factor_closed_form(delta1, two_atom):
    z = 2.0 + 0.5j
    sol = solve_at(delta1, two_atom, z)
    assert abs(sol.omega_a - z) <= 1e-9
    assert abs(sol.omega_b - transforms(two_atom, z).M) <= 1e-9
    # 畳み込みは μ_B そのもの
    assert abs(convolution_stieltjes(delta1, sol) - transforms(two_atom, z).m) <= 1e-9


def test_identity_factor_far_from_axis(delta1, two_atom):
    sol = solve_at(delta1, two_atom, 10.0 + 0.01j)
    assert sol.residual <= DEFAULT_CONFIG.tol
    assert abs(sol.omega_a - (10.0 + 0.01j)) <= 1e-9


def test_solve_real_outside_support(delta1, two_atom):
    # M_B(x) = x(2 - x)/(3 - 2x)、x = 5 で 15/7
    sol = solve_real(delta1, two_atom, 5.0)
    assert sol.z == 5.0
    assert abs(sol.omega_a - 5.0) <= 1e-8
    assert abs(sol.omega_b - 15.0 / 7.0) <= 1e-8


# ½(δ_1+δ_3) 同士では Ω_A = Ω_B = Ω で 2Ω² - (3+z)Ω + 2z = 0、台は [1, 9]

def test_continuation_outside_support_becomes_real(two_atom):
    sched = geometric_schedule(DEFAULT_CONFIG.eta_start(3.0, 3.0), 1e-8)
    right = solve_path(two_atom, two_atom, 9.5, sched)[-1]
    assert right.omega_b.imag < 1e-4
    assert abs(right.omega_b - (12.5 + np.sqrt(4.25)) / 4.0) <= 1e-6
    left = solve_path(two_atom, two_atom, 0.5, sched)[-1]
    assert left.omega_b.imag < 1e-4


def test_continuation_inside_bulk_keeps_imaginary_part(two_atom):
    # z = 5 で判別式は -16、Ω = 2 + i
    sol = solve_at(two_atom, two_atom, 5.0 + 1e-6j)
    assert sol.omega_a.imag > 0.01
    assert abs(sol.omega_a - (2.0 + 1.0j)) <= 1e-5
    assert abs(sol.omega_b - (2.0 + 1.0j)) <= 1e-5


def test_solve_path_returns_every_eta(two_atom):
    sched = [90.0, 10.0, 1.0, 0.1]
    path = solve_path(two_atom, two_atom, 4.0, sched)
    assert [s.z.imag for s in path] == sched
    assert all(s.residual <= DEFAULT_CONFIG.tol for s in path)


def test_solution_record_roundtrip(two_atom):
    sol = solve_at(two_atom, two_atom, 3.0 + 1.0j)
    back = SubordinationSolution.from_record(sol.to_record())
    assert back == sol


def test_grid_identity_factor(delta1, two_atom):
    xs = np.array([0.5, 2.0, 5.0])
    sol = solve_grid(delta1, two_atom, xs, 0.1)
    assert np.all(sol.ok())
    assert np.allclose(sol.omega_a, xs + 0.1j, atol=1e-9)
    want = np.array([transforms(two_atom, x + 0.1j).M for x in xs])
    assert np.allclose(sol.omega_b, want, atol=1e-9)


def test_grid_matches_pointwise(two_atom, semicircle):
    xs = np.linspace(1.5, 8.5, 7)
    cfg = replace(DEFAULT_CONFIG, chunk_size=3, threads=2)
    grid = solve_grid(two_atom, semicircle, xs, 0.05, cfg)
    assert np.all(grid.status == PointStatus.OK)
    for k, x in enumerate(xs):
        sol = solve_at(two_atom, semicircle, x + 0.05j)
        assert abs(sol.omega_a - grid.omega_a[k]) <= 1e-7
        assert abs(sol.omega_b - grid.omega_b[k]) <= 1e-7


@h.settings(max_examples=20, deadline=None)
@h.given(
    lattice_measures(),
    lattice_measures(),
    st.floats(min_value=0.5, max_value=10.0),
    st.floats(min_value=0.2, max_value=1.0),
)
def test_random_atomic_pairs(muA, muB, E, eta):
    z = complex(E, eta)
    sol = solve_at(muA, muB, z)
    pa, pb = phi(muA, muB, sol.omega_a, sol.omega_b, z)
    assert max(abs(pa), abs(pb)) <= 1e-9
    # M_A(Ω_B) = M_B(Ω_A)
    assert abs(transforms(muA, sol.omega_b).M - transforms(muB, sol.omega_a).M) <= 1e-8 * (1.0 + abs(sol.omega_a))
    # A と B を入れ替えると Ω も入れ替わる
    swapped = solve_at(muB, muA, z)
    assert abs(swapped.omega_a - sol.omega_b) <= 1e-8
    assert abs(swapped.omega_b - sol.omega_a) <= 1e-8


# -------------------
# Kantorovich
# -------------------

def test_certificate_far_from_axis(two_atom):
    z = 4.0 + 10.0j
    ga, gb = default_guess(two_atom, two_atom, np.array([z]))
    x0 = (complex(ga[0]), complex(gb[0]))
    cert = certify(two_atom, two_atom, z, x0)
    assert cert.passed
    assert 0.0 < cert.b <= cert.t_star < np.inf

    cfg = replace(DEFAULT_CONFIG, tol=1e-12)
    sol = solve_at(two_atom, two_atom, z, guess=x0, cfg=cfg)
    dist = np.hypot(abs(sol.omega_a - x0[0]), abs(sol.omega_b - x0[1]))
    assert dist <= cert.t_star * (1.0 + 1e-9)


def test_certificate_attached_when_requested(two_atom):
    cfg = replace(DEFAULT_CONFIG, certify=True)
    sol = solve_at(two_atom, two_atom, 4.0 + 10.0j, cfg=cfg)
    assert sol.certificate is not None
    assert sol.certificate.passed
    assert "certificate" in sol.to_record()


def test_certificate_fails_on_support(two_atom):
    # ω_b = 1 は μ_A の atom の上
    cert = certify(two_atom, two_atom, 2.0 + 1.0j, (2.0 + 1.0j, 1.0 + 0.0j))
    assert not cert.passed


@pytest.mark.parametrize("name", ["two-atom", "regular"])
@pytest.mark.parametrize("E", [2.0, 5.0, 8.0])
def test_certificates_pass_high_above_axis(name, E):
    muA, muB = get_preset(name).measures()
    z = complex(E, 10.0)
    ga, gb = default_guess(muA, muB, np.array([z]))
    cert = certify(muA, muB, z, (complex(ga[0]), complex(gb[0])))
    assert cert.passed
    assert 2.0 * cert.b * cert.L < 1.0
