import numpy as np
import pytest

from oracle_kle import (dense_eigenvalues_2d, gaussian_kernel, nystrom_eigenpairs,
                        trapezoid_weights)
from porobayes.mesh import GridSpec, build_fine_mesh
from porobayes.randfield import (CovarianceSpec, MaterialLaw, axis_eigenpairs,
                                 build_kle, energy_ratio, material_fields,
                                 porosity_from_field, realize_field, sample_theta)


def _mesh(cells=20, dim=2):
    return build_fine_mesh(GridSpec(dim=dim, fine_cells=cells, coarse_cells=2))


def test_axis_eigenpairs_match_nystrom_oracle():
    coords = np.linspace(0.0, 1.0, 41)
    vals_o, vecs_o = nystrom_eigenpairs(coords, 2.0, 0.3, 8)
    vals, vecs, w = axis_eigenpairs(coords, 0.3, 2.0)
    np.testing.assert_allclose(vals[:8], vals_o, rtol=0, atol=1e-8)
    for k in range(8):
        v = vecs[:, k] / np.sqrt(np.sum(w * vecs[:, k] ** 2))
        err = min(np.abs(v - vecs_o[k]).max(), np.abs(v + vecs_o[k]).max())
        assert err < 1e-8


def test_product_spectrum_matches_dense_2d_oracle():
    mesh = build_fine_mesh(GridSpec(dim=2, fine_cells=8, coarse_cells=1))
    spec = CovarianceSpec(sigma2=1.5, corr_len=(0.4, 0.25), L=6)
    kle = build_kle(spec, mesh)
    coords = np.linspace(0.0, 1.0, 9)
    dense = dense_eigenvalues_2d(coords, coords, 1.5, (0.4, 0.25), 6)
    np.testing.assert_allclose(kle.eigenvalues, dense, rtol=0, atol=1e-10)


def test_eigenvalues_descending_and_truncated():
    kle = build_kle(CovarianceSpec(sigma2=1.0, corr_len=0.2, L=12), _mesh())
    assert kle.eigenvalues.shape == (12,)
    assert np.all(np.diff(kle.eigenvalues) <= 1e-14)
    assert np.all(kle.eigenvalues > 0)


def test_eigenfunctions_orthonormal_in_lumped_mass():
    kle = build_kle(CovarianceSpec(sigma2=1.0, corr_len=0.3, L=8), _mesh())
    gram = (kle.eigenfunctions * kle.weights[None, :]) @ kle.eigenfunctions.T
    np.testing.assert_allclose(gram, np.eye(8), atol=1e-12)


def test_total_mass_is_variance_times_volume():
    kle = build_kle(CovarianceSpec(sigma2=2.0, corr_len=0.15, L=5), _mesh())
    assert kle.total_mass == pytest.approx(2.0, rel=1e-12)


def test_truncation_bounds():
    mesh = build_fine_mesh(GridSpec(dim=2, fine_cells=2, coarse_cells=1))
    with pytest.raises(ValueError):
        build_kle(CovarianceSpec(sigma2=1.0, corr_len=0.2, L=10), mesh)  # 9 nodes


def test_energy_ratio():
    kle = build_kle(CovarianceSpec(sigma2=1.0, corr_len=0.4, L=10), _mesh())
    ratios = [energy_ratio(kle, L) for L in range(1, 11)]
    assert all(b >= a for a, b in zip(ratios, ratios[1:]))
    assert 0 < ratios[0] < ratios[-1] <= 1.0
    assert energy_ratio(kle) == ratios[-1]
    with pytest.raises(ValueError):
        energy_ratio(kle, 0)
    with pytest.raises(ValueError):
        energy_ratio(kle, 11)


def test_realize_field_is_linear_in_theta():
    kle = build_kle(CovarianceSpec(sigma2=1.0, corr_len=0.2, L=6), _mesh())
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    Ya, Yb = realize_field(kle, a), realize_field(kle, b)
    np.testing.assert_allclose(realize_field(kle, a + 2 * b), Ya + 2 * Yb, atol=1e-12)
    assert Ya.shape == (kle.eigenfunctions.shape[1],)


def test_sample_theta_shape_and_determinism():
    kle = build_kle(CovarianceSpec(sigma2=1.0, corr_len=0.2, L=7), _mesh())
    t1 = sample_theta(kle, np.random.default_rng(5))
    t2 = sample_theta(kle, np.random.default_rng(5))
    assert t1.shape == (7,)
    np.testing.assert_array_equal(t1, t2)


def test_empirical_covariance_tracks_truncated_kernel():
    # quick version; the full 10^4-sample check runs in the acceptance suite
    mesh = _mesh(cells=10)
    spec = CovarianceSpec(sigma2=1.0, corr_len=0.4, L=15)
    kle = build_kle(spec, mesh)
    rng = np.random.default_rng(42)
    thetas = rng.standard_normal((4000, 15))
    Y = (np.sqrt(kle.eigenvalues) * thetas) @ kle.eigenfunctions
    # nearby pairs: sampling noise is absolute-scale, so relative comparison
    # needs covariances well away from zero
    probes = [(0, 0), (60, 60), (60, 61), (0, 22), (60, 63)]
    analytic = kle.eigenfunctions.T * kle.eigenvalues[None, :] @ kle.eigenfunctions
    for i, j in probes:
        emp = np.mean(Y[:, i] * Y[:, j])
        assert emp == pytest.approx(analytic[i, j], rel=0.2)


def test_porosity_minmax_mapping():
    law = MaterialLaw()
    Y = np.array([-1.0, 0.0, 3.0])
    phi = porosity_from_field(Y, law)
    np.testing.assert_allclose(phi, [0.05, 0.05 + 0.15 / 4.0, 0.2])
    assert phi.min() == law.phi_min and phi.max() == law.phi_max


def test_porosity_constant_field_maps_to_midpoint():
    law = MaterialLaw()
    phi = porosity_from_field(np.full(5, 2.7), law)
    np.testing.assert_allclose(phi, 0.125)


def test_material_laws_hand_values():
    law = MaterialLaw()
    fields = material_fields(np.array([0.1]), law)
    assert fields.permeability[0] == pytest.approx(np.exp(4.0), rel=1e-14)
    # E = 0.1 * 9^1.5 = 2.7; mu = E / 2.6; lam = 0.3 E / 0.52
    assert fields.mu[0] == pytest.approx(2.7 / 2.6, rel=1e-12)
    assert fields.lam[0] == pytest.approx(0.81 / 0.52, rel=1e-12)


def test_material_fields_rejects_bad_porosity():
    law = MaterialLaw()
    with pytest.raises(ValueError):
        material_fields(np.array([0.0, 0.1]), law)
    with pytest.raises(ValueError):
        material_fields(np.array([1.0]), law)


def test_material_law_validation():
    with pytest.raises(ValueError):
        MaterialLaw(phi_min=0.3, phi_max=0.2)
    with pytest.raises(ValueError):
        MaterialLaw(eta=0.6)


def test_covariance_spec_validation():
    with pytest.raises(ValueError):
        CovarianceSpec(sigma2=-1.0, corr_len=0.2, L=4)
    with pytest.raises(ValueError):
        CovarianceSpec(sigma2=1.0, corr_len=0.0, L=4)
    with pytest.raises(ValueError):
        CovarianceSpec(sigma2=1.0, corr_len=0.2, L=0)
