from __future__ import annotations

import numpy as np
import pytest

from src.convolution.quantiles import QuantileTable
from src.errors import ConfigError
from src.rmt_lab.checks import (
    delocalization_check,
    delocalization_statistic,
    far_local_law_check,
    global_law_distance,
    local_law_check,
    rigidity_check,
    rigidity_ratios,
)
from src.rmt_lab.haar import Ensemble, sample_haar
from src.rmt_lab.instance import ModelInstance, build_and_decompose, instance_from_measures, trial_rng
from src.spiked.model import SpikedModel
from src.subordination.solver import SubordinationSolution, solve_at


def _identity_instance(n: int) -> ModelInstance:
    return ModelInstance(n=n, a_diag=np.ones(n), b_diag=np.ones(n))


# -------------------
# Haar
# -------------------

@pytest.mark.parametrize("ensemble", list(Ensemble))
def test_haar_is_unitary(ensemble):
    U = sample_haar(40, ensemble, np.random.default_rng(1))
    assert np.allclose(U @ U.conj().T, np.eye(40), atol=1e-12)
    if ensemble == Ensemble.ORTHOGONAL:
        assert not np.iscomplexobj(U)


def test_haar_single_entry_is_a_phase():
    U = sample_haar(1, Ensemble.UNITARY, np.random.default_rng(0))
    assert U.shape == (1, 1)
    assert abs(abs(U[0, 0]) - 1.0) <= 1e-15


def test_haar_first_moment():
    # |U_11|² ~ Beta(1, n-1): 平均 1/n、分散 (n-1)/(n²(n+1))
    n, reps = 4, 2000
    rng = np.random.default_rng(123)
    vals = np.array([abs(sample_haar(n, Ensemble.UNITARY, rng)[0, 0]) ** 2 for _ in range(reps)])
    se = np.sqrt((n - 1) / (n * n * (n + 1)) / reps)
    assert abs(vals.mean() - 1.0 / n) <= 4.0 * se


def test_trial_rng_is_reproducible():
    a = trial_rng(5, 2).standard_normal(3)
    b = trial_rng(5, 2).standard_normal(3)
    c = trial_rng(5, 3).standard_normal(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# -------------------
# instance
# -------------------

@pytest.mark.parametrize(
    "kwargs",
    [
        {"n": 1, "a_diag": [1.0], "b_diag": [1.0]},
        {"n": 3, "a_diag": [1.0, 1.0], "b_diag": [1.0, 1.0, 1.0]},
        {"n": 2, "a_diag": [1.0, 0.0], "b_diag": [1.0, 1.0]},
        {"n": 2, "a_diag": [1.0, 2.0], "b_diag": [1.0, 1.0]},
    ],
)
def test_instance_validation(kwargs):
    with pytest.raises(ConfigError):
        ModelInstance(**kwargs)


def test_instance_from_measures_places_spikes(delta1, two_atom):
    model = SpikedModel(muA=delta1, muB=two_atom, d_a=(0.5,), d_b=(0.0,), n=10)
    inst = instance_from_measures(delta1, two_atom, 10, model=model, seed=3)
    assert inst.a_diag[0] == pytest.approx(1.5)
    assert inst.a_spike_pos == (0,)
    assert inst.b_spike_pos == (0,)
    assert np.all(np.diff(inst.a_diag) <= 0.0)
    with pytest.raises(ConfigError):
        instance_from_measures(delta1, two_atom, 12, model=model)


def test_identity_matrices_give_unit_spectrum():
    d = build_and_decompose(_identity_instance(5))
    assert np.allclose(d.eigenvalues, 1.0, atol=1e-12)
    assert np.allclose(d.right_eigenvalues, 1.0, atol=1e-12)


def test_scalar_a_rescales_b(two_atom):
    n = 6
    inst = ModelInstance(n=n, a_diag=np.full(n, 2.0), b_diag=two_atom.quantile_values(n))
    d = build_and_decompose(inst)
    assert np.allclose(d.eigenvalues, [6.0, 6.0, 6.0, 2.0, 2.0, 2.0], atol=1e-10)


def test_decomposition_identities(two_atom, semicircle):
    inst = instance_from_measures(two_atom, semicircle, 30, seed=11)
    d = build_and_decompose(inst)
    assert np.max(np.abs(d.eigenvalues - d.right_eigenvalues)) <= 1e-9
    assert d.reconstruction_error() <= 1e-10
    assert np.all(np.diff(d.eigenvalues) <= 0.0)
    G = d.resolvent(4.0 + 0.1j)
    assert np.allclose(np.diag(G), d.resolvent_diag(4.0 + 0.1j), atol=1e-12)


def test_same_seed_same_matrix(two_atom):
    inst = instance_from_measures(two_atom, two_atom, 8, seed=4)
    a = build_and_decompose(inst.with_trial(1))
    b = build_and_decompose(inst.with_trial(1))
    assert np.array_equal(a.eigenvalues, b.eigenvalues)


# -------------------
# checks
# -------------------

def test_local_law_exact_for_identity():
    d = build_and_decompose(_identity_instance(6))
    z = 1.5 + 0.5j
    sol = SubordinationSolution(z=z, omega_a=z, omega_b=z, residual=0.0, iterations=0)
    (res,) = local_law_check(d, [sol])
    assert res.diag_dev_a <= 1e-12
    assert res.diag_dev_b <= 1e-12
    assert res.offdiag_max <= 1e-12
    assert res.averaged_dev <= 1e-12
    assert res.ward_dev <= 1e-12


def test_ward_identity_random(two_atom):
    d = build_and_decompose(instance_from_measures(two_atom, two_atom, 40, seed=2))
    sol = solve_at(two_atom, two_atom, 4.0 + 0.1j)
    (res,) = local_law_check(d, [sol])
    assert res.ward_dev <= 1e-9
    assert set(res.to_record()) == {"z", "diag_dev_a", "diag_dev_b", "offdiag_max", "averaged_dev", "ward_dev"}


def test_far_local_law_exact_for_identity():
    d = build_and_decompose(_identity_instance(6))
    z = 3.0 + 0.0j
    sol = SubordinationSolution(z=z, omega_a=z, omega_b=z, residual=0.0, iterations=0)
    (res,) = far_local_law_check(d, [sol], [-0.5 + 0j], e_plus=1.0)
    assert res.kappa == pytest.approx(2.0)
    assert res.diag_dev <= 1e-12
    assert res.stieltjes_dev <= 1e-12
    assert res.entry_max == pytest.approx(0.5)
    assert res.stieltjes_scale == pytest.approx(1.0 / 12.0)


def test_far_local_law_rejects_inside_support():
    d = build_and_decompose(_identity_instance(4))
    z = 0.5 + 0.1j
    sol = SubordinationSolution(z=z, omega_a=z, omega_b=z, residual=0.0, iterations=0)
    with pytest.raises(ConfigError):
        far_local_law_check(d, [sol], [0j], e_plus=1.0)


def test_rigidity_zero_on_exact_quantiles():
    n = 10
    table = QuantileTable(n=n, gammas=np.ones(n))
    assert np.all(rigidity_ratios(np.ones(n), table) == 0.0)
    summary = rigidity_check([np.ones(n), np.ones(n)], table)
    assert summary.median == 0.0
    assert summary.top_gap == [0.0, 0.0]


def test_rigidity_scaling():
    n = 8
    table = QuantileTable(n=n, gammas=np.zeros(n))
    r = rigidity_ratios(np.full(n, 1e-2), table, fraction=0.5)
    i = np.arange(1, 5)
    assert np.allclose(r, 1e-2 * i ** (1.0 / 3.0) * n ** (2.0 / 3.0))


def test_rigidity_rejects_mismatch():
    with pytest.raises(ConfigError):
        rigidity_ratios(np.ones(5), QuantileTable(n=4, gammas=np.ones(4)))
    with pytest.raises(ConfigError):
        rigidity_check([], QuantileTable(n=4, gammas=np.ones(4)))


def test_delocalization_bounds(two_atom):
    d = build_and_decompose(instance_from_measures(two_atom, two_atom, 2, seed=0))
    v = delocalization_statistic(d)
    assert 1.0 - 1e-12 <= v <= 2.0 + 1e-12
    assert delocalization_statistic(d, exclude=5) == 0.0
    with pytest.raises(ConfigError):
        delocalization_statistic(d, fraction=0.9)


def test_delocalization_summary(two_atom):
    inst = instance_from_measures(two_atom, two_atom, 20, seed=0)
    decomps = [build_and_decompose(inst.with_trial(t)) for t in range(3)]
    s = delocalization_check(decomps)
    assert len(s.per_trial) == 3
    assert s.median == pytest.approx(np.median(s.per_trial))


def test_global_law_distance_on_quantiles(two_atom):
    from src.convolution.density import density

    result = density(two_atom, two_atom, grid=np.linspace(0.5, 9.5, 600))
    cdf_grid = result.cdf(result.grid)
    n = 200
    # ρ の分位点をそのまま固有値とみなすと距離は 1/n 程度
    eig = np.interp((np.arange(n) + 0.5) / n, cdf_grid, result.grid)
    assert global_law_distance(eig, result) <= 2.0 / n + 1e-3
