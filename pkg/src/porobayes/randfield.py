"""Gaussian random fields by truncated Karhunen-Loeve expansion.

The covariance is the separable squared-exponential kernel

    R(x, y) = sigma2 * prod_c exp(-(x_c - y_c)**2 / l_c**2),

discretized by nodal (lumped-mass) Galerkin on the fine grid.  Separability
lets the d-dimensional eigenpairs be formed as products of per-axis 1D
eigenpairs, so full-scale grids never need a dense eigensolve; small grids can
be cross-checked against one.

A realization Y_L(x) = sum_k sqrt(psi_k) nu_k phi_k(x) is mapped to porosity
by per-realization min-max rescaling, and porosity to permeability and
elastic moduli by fixed monotone laws.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CovarianceSpec",
    "KleModel",
    "MaterialLaw",
    "MaterialFields",
    "axis_eigenpairs",
    "build_kle",
    "sample_theta",
    "realize_field",
    "energy_ratio",
    "porosity_from_field",
    "material_fields",
    "lame_parameters",
]


@dataclass
class CovarianceSpec:
    """Kernel parameters and truncation order.

    Attributes
    ----------
    sigma2 : float
        Pointwise variance sigma_R^2.
    corr_len : tuple of float
        Correlation length per axis.
    L : int
        Number of retained eigenpairs.
    """

    sigma2: float
    corr_len: tuple
    L: int

    def __post_init__(self):
        self.sigma2 = float(self.sigma2)
        self.corr_len = tuple(float(l) for l in np.atleast_1d(self.corr_len))
        self.L = int(self.L)
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if any(l <= 0 for l in self.corr_len):
            raise ValueError("correlation lengths must be positive")
        if self.L <= 0:
            raise ValueError("truncation order L must be positive")


@dataclass
class KleModel:
    """Truncated expansion on a fixed fine grid.

    Attributes
    ----------
    eigenvalues : (L,) float array, descending.
    eigenfunctions : (L, n_nodes) float array, orthonormal in the lumped
        mass inner product ``phi_i^T W phi_j = delta_ij``.
    total_mass : float
        Sum of the full (untruncated) product spectrum; equals
        sigma2 * |domain| by the unit kernel diagonal.
    weights : (n_nodes,) lumped mass (nodal quadrature) weights.
    spec : CovarianceSpec
    grid_hash : str
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray = field(repr=False)
    total_mass: float
    weights: np.ndarray = field(repr=False)
    spec: CovarianceSpec
    grid_hash: str = ""

    @property
    def L(self):
        return self.eigenvalues.shape[0]

    @property
    def n_nodes(self):
        return self.eigenfunctions.shape[1]


def _axis_weights(coords):
    """Trapezoidal (lumped mass) weights of a sorted 1D node set."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 1 or coords.size < 2:
        raise ValueError("axis needs at least two nodes")
    w = np.zeros_like(coords)
    d = np.diff(coords)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def axis_eigenpairs(coords, corr_len, sigma2=1.0):
    """Eigenpairs of the 1D kernel sigma2*exp(-(x-y)^2/l^2) on a node set.

    Lumped-mass Galerkin: the symmetrized kernel matrix
    ``W^(1/2) R W^(1/2)`` is diagonalized and eigenvectors are returned in
    nodal form, orthonormal under the weighted inner product.

    Returns
    -------
    vals : (n,) descending eigenvalues (clipped at zero).
    vecs : (n, n) columns are nodal eigenvectors.
    weights : (n,) lumped mass weights.
    """
    coords = np.asarray(coords, dtype=float)
    w = _axis_weights(coords)
    diff = coords[:, None] - coords[None, :]
    R = sigma2 * np.exp(-((diff / corr_len) ** 2))
    sw = np.sqrt(w)
    sym = sw[:, None] * R * sw[None, :]
    vals, vecs = np.linalg.eigh(sym)
    order = np.argsort(vals)[::-1]
    vals = np.maximum(vals[order], 0.0)
    vecs = vecs[:, order] / sw[:, None]
    return vals, vecs, w


def build_kle(spec, fine):
    """Build the truncated expansion on a fine mesh.

    Per-axis 1D spectra are combined into product eigenpairs, sorted by
    eigenvalue, and truncated at ``spec.L``.

    Raises
    ------
    ValueError
        If L exceeds the available product-eigenpair count.
    """
    dim = fine.dim
    corr = spec.corr_len
    if len(corr) == 1:
        corr = corr * dim
    if len(corr) != dim:
        raise ValueError(f"corr_len needs 1 or {dim} entries, got {len(corr)}")

    axes = []
    npa = fine.nodes_per_axis
    for c in range(dim):
        coords = np.linspace(0.0, fine.spec.extent[c], npa[c])
        axes.append(axis_eigenpairs(coords, corr[c]))

    counts = tuple(len(a[0]) for a in axes)
    n_products = int(np.prod(counts))
    if spec.L > n_products:
        raise ValueError(f"L={spec.L} exceeds the {n_products} available product eigenpairs")

    # product eigenvalues over the index grid, x axis fastest:
    # outer(new, prev).ravel() puts the new axis slowest
    prod_vals = np.ones(1)
    for c in range(dim):
        prod_vals = np.multiply.outer(axes[c][0], prod_vals).reshape(-1)
    prod_vals = spec.sigma2 * prod_vals
    order = np.argsort(prod_vals, kind="stable")[::-1][: spec.L]
    vals = prod_vals[order]

    n_nodes = int(np.prod(npa))
    funcs = np.empty((spec.L, n_nodes))
    for k, flat in enumerate(order):
        rem = int(flat)
        vec = np.ones(1)
        for c in range(dim):
            ic = rem % counts[c]
            rem //= counts[c]
            vec = np.multiply.outer(axes[c][1][:, ic], vec).reshape(-1)
        funcs[k] = vec

    weights = np.ones(1)
    for c in range(dim):
        weights = np.multiply.outer(axes[c][2], weights).reshape(-1)

    total = spec.sigma2 * float(np.prod([a[0].sum() for a in axes]))
    return KleModel(eigenvalues=vals, eigenfunctions=funcs, total_mass=total,
                    weights=weights, spec=spec, grid_hash=fine.spec.grid_hash())


def sample_theta(model_or_L, rng):
    """Draw theta ~ N(0, I_L)."""
    L = model_or_L.L if hasattr(model_or_L, "L") and not isinstance(model_or_L, int) else int(model_or_L)
    return rng.standard_normal(L)


def realize_field(model, theta):
    """Evaluate Y_L = sum_k sqrt(psi_k) theta_k phi_k at the fine nodes."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.L,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({model.L},)")
    return (np.sqrt(model.eigenvalues) * theta) @ model.eigenfunctions


def energy_ratio(model, L_prime=None):
    """Retained spectral mass fraction e(L') = sum_{k<=L'} psi_k / total."""
    if L_prime is None:
        L_prime = model.spec.L
    L_prime = int(L_prime)
    if L_prime < 1 or L_prime > model.spec.L:
        raise ValueError(f"L_prime must be in [1, {model.spec.L}], got {L_prime}")
    return float(model.eigenvalues[:L_prime].sum() / model.total_mass)


@dataclass
class MaterialLaw:
    """Porosity bounds and porosity-to-property maps.

    permeability  k = exp(a * phi)
    Young modulus E = b * ((1 - phi) / phi) ** exponent
    Lame moduli   mu = E / (2 (1 + eta)),
                  lam = E eta / ((1 + eta)(1 - 2 eta))
    """

    phi_min: float = 0.05
    phi_max: float = 0.2
    a: float = 40.0
    b: float = 0.1
    exponent: float = 1.5
    eta: float = 0.3

    def __post_init__(self):
        if not (0.0 < self.phi_min < self.phi_max < 1.0):
            raise ValueError("need 0 < phi_min < phi_max < 1")
        if not (0.0 < self.eta < 0.5):
            raise ValueError("Poisson ratio must lie in (0, 0.5)")


@dataclass
class MaterialFields:
    """Nodal property fields of one realization."""

    porosity: np.ndarray
    permeability: np.ndarray
    young: np.ndarray
    lam: np.ndarray
    mu: np.ndarray


def porosity_from_field(Y, law):
    """Min-max rescale a field realization onto [phi_min, phi_max].

    A constant field maps to the midpoint of the porosity interval.
    """
    Y = np.asarray(Y, dtype=float)
    lo, hi = Y.min(), Y.max()
    if hi - lo <= 0.0:
        return np.full_like(Y, 0.5 * (law.phi_min + law.phi_max))
    return law.phi_min + (Y - lo) / (hi - lo) * (law.phi_max - law.phi_min)


def lame_parameters(young, eta):
    """Lame moduli (lam, mu) from Young modulus and Poisson ratio."""
    young = np.asarray(young, dtype=float)
    mu = young / (2.0 * (1.0 + eta))
    lam = young * eta / ((1.0 + eta) * (1.0 - 2.0 * eta))
    return lam, mu


def material_fields(phi, law):
    """Nodal permeability and elastic moduli from a porosity field."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0.0) or np.any(phi >= 1.0):
        raise ValueError("porosity must lie strictly inside (0, 1)")
    k = np.exp(law.a * phi)
    E = law.b * ((1.0 - phi) / phi) ** law.exponent
    lam, mu = lame_parameters(E, law.eta)
    return MaterialFields(porosity=phi, permeability=k, young=E, lam=lam, mu=mu)
