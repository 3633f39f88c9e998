"""Generalized multiscale basis construction and the coarse solver.

Offline stage, per coarse-node neighborhood omega_i:

1. Snapshot space.  Type 1 solves local harmonic-extension problems: for
   each offline realization and each fine node on the neighborhood boundary,
   extend the nodal delta into the interior with the realization's operator
   (Darcy for pressure, elasticity for displacement).  Type 2 takes all fine
   nodal functions on the neighborhood.
2. Spectral reduction.  Snapshots are orthonormalized (SVD, dropping
   directions below 1e-10 of the largest singular value) and a generalized
   eigenproblem with averaged coefficients selects the smallest modes:
   k-bar weighted stiffness against k-bar weighted mass for pressure,
   averaged-Lame elasticity against (lam-bar + 2 mu-bar) weighted mass for
   displacement.
3. Multiplication by the partition of unity hat of the coarse node turns the
   local modes into conforming global basis functions, stacked into the
   projection matrices R_p and R_u.

Online stage: Galerkin projection of the fine operators onto R_p / R_u and
the same implicit Euler loop at coarse size, then reconstruction on the fine
grid.  Per coarse node the space keeps M_p = 1 + M_plus pressure and
M_u = dim + M_plus displacement modes, so the coarse problem has
(M_p + M_u) * N_c unknowns.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

from .biot_fem import q1_reference, pressure_mass_matrix
from .errors import NumericalError
from .randfield import lame_parameters

__all__ = [
    "OfflineConfig",
    "AveragedFields",
    "SnapshotSpace",
    "LocalBasis",
    "MsBasis",
    "averaged_fields",
    "pressure_snapshots",
    "displacement_snapshots",
    "pressure_spectral",
    "displacement_spectral",
    "build_local_bases",
    "assemble_ms_basis",
    "build_ms_basis",
    "solve_coarse",
    "coarse_observable",
    "relative_errors",
    "dof_table",
]

_SVD_DROP = 1.0e-10
_ZERO_EIG = 1.0e-8


@dataclass
class OfflineConfig:
    """Offline-stage settings.

    ``m_plus`` is the enrichment count M_plus; the per-node space sizes are
    M_p = 1 + M_plus (pressure) and M_u = dim + M_plus (displacement).
    ``weights`` are the realization weights t_r, uniform by default.
    """

    n_realizations: int = 10
    snapshot_type: str = "type1"
    m_plus: int = 2
    weights: tuple = None

    def __post_init__(self):
        if self.snapshot_type not in ("type1", "type2"):
            raise ValueError(f"unknown snapshot_type {self.snapshot_type!r}")
        if self.n_realizations < 1:
            raise ValueError("need at least one offline realization")
        if self.m_plus < 0:
            raise ValueError("m_plus must be nonnegative")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.n_realizations,):
                raise ValueError("weights length must equal n_realizations")
            self.weights = tuple(w)

    def weight_vector(self):
        if self.weights is None:
            return np.full(self.n_realizations, 1.0 / self.n_realizations)
        return np.asarray(self.weights, dtype=float)


@dataclass
class AveragedFields:
    """Weighted nodal averages over the offline realizations."""

    permeability: np.ndarray
    young: np.ndarray
    lam: np.ndarray
    mu: np.ndarray


def averaged_fields(realizations, eta, weights=None):
    """Average material fields over realizations; Lame moduli from E-bar.

    Parameters
    ----------
    realizations : sequence of MaterialFields
    eta : float
        Poisson ratio used to convert the averaged Young modulus.
    weights : array, optional
        Realization weights t_r; uniform when omitted.
    """
    n = len(realizations)
    if n == 0:
        raise ValueError("need at least one realization")
    if weights is None:
        weights = np.full(n, 1.0 / n)
    weights = np.asarray(weights, dtype=float)
    kbar = sum(w * r.permeability for w, r in zip(weights, realizations))
    Ebar = sum(w * r.young for w, r in zip(weights, realizations))
    lam, mu = lame_parameters(Ebar, eta)
    return AveragedFields(permeability=kbar, young=Ebar, lam=lam, mu=mu)


@dataclass
class SnapshotSpace:
    """Raw snapshot matrix of one neighborhood.

    ``matrix`` has one column per snapshot; local dofs are nodal for
    pressure and component-major for displacement.
    """

    kind: str
    node: int
    matrix: np.ndarray = field(repr=False)
    n_boundary: int
    n_realizations: int


def _local_connectivity(fine, nb):
    """Element connectivity of a neighborhood in local node numbering."""
    conn = fine.elems[nb.elems]
    return np.searchsorted(nb.nodes, conn)


def _local_scalar_matrix(lconn, n_loc, coeff_e, refmat):
    data = coeff_e[:, None, None] * refmat[None, :, :]
    shp = data.shape
    rows = np.broadcast_to(lconn[:, :, None], shp).ravel()
    cols = np.broadcast_to(lconn[:, None, :], shp).ravel()
    return sparse.coo_matrix((data.ravel(), (rows, cols)), shape=(n_loc, n_loc)).toarray()


def _local_vector_matrix(lconn, n_loc, data, dim):
    edofs = np.concatenate([lconn + c * n_loc for c in range(dim)], axis=1)
    shp = data.shape
    rows = np.broadcast_to(edofs[:, :, None], shp).ravel()
    cols = np.broadcast_to(edofs[:, None, :], shp).ravel()
    n = dim * n_loc
    return sparse.coo_matrix((data.ravel(), (rows, cols)), shape=(n, n)).toarray()


def _local_elasticity(fine, nb, lconn, mu_nodal, lam_nodal, ref):
    mu_e = mu_nodal[fine.elems[nb.elems]].mean(axis=1)
    lam_e = lam_nodal[fine.elems[nb.elems]].mean(axis=1)
    data = (mu_e[:, None, None] * ref["elast_mu"][None]
            + lam_e[:, None, None] * ref["elast_lam"][None])
    return _local_vector_matrix(lconn, nb.n_nodes, data, fine.dim)


def _local_darcy(fine, nb, lconn, k_nodal, ref):
    k_e = k_nodal[fine.elems[nb.elems]].mean(axis=1)
    return _local_scalar_matrix(lconn, nb.n_nodes, k_e, ref["stiff"])


def _local_weighted_mass(fine, nb, lconn, w_nodal, ref):
    w_e = w_nodal[fine.elems[nb.elems]].mean(axis=1)
    return _local_scalar_matrix(lconn, nb.n_nodes, w_e, ref["mass"])


def _interior_boundary_split(nb):
    ib = np.searchsorted(nb.nodes, nb.boundary_nodes)
    mask = np.ones(nb.n_nodes, dtype=bool)
    mask[ib] = False
    ii = np.nonzero(mask)[0]
    return ii, ib


def _harmonic_columns(K, ii, bb):
    """Extend boundary deltas: identity on bb, -K_II^{-1} K_Ib inside."""
    n = K.shape[0]
    cols = np.zeros((n, bb.size))
    cols[bb, np.arange(bb.size)] = 1.0
    if ii.size:
        rhs = -K[np.ix_(ii, bb)]
        try:
            lu = linalg.lu_factor(K[np.ix_(ii, ii)])
        except linalg.LinAlgError as exc:
            raise NumericalError(f"singular local interior block: {exc}") from exc
        cols[ii] = linalg.lu_solve(lu, rhs)
    return cols


def pressure_snapshots(fine, nb, node, realizations, ref=None):
    """Type 1 pressure snapshots of one neighborhood.

    One harmonic extension per boundary fine node and offline realization;
    the local operator is the realization's permeability-weighted stiffness.
    """
    if nb.n_nodes == nb.boundary_nodes.size:
        raise ValueError("neighborhood has no interior nodes; refine the fine grid")
    ref = ref or q1_reference(fine.dim, fine.h)
    lconn = _local_connectivity(fine, nb)
    ii, ib = _interior_boundary_split(nb)
    blocks = []
    for fields in realizations:
        K = _local_darcy(fine, nb, lconn, fields.permeability, ref)
        blocks.append(_harmonic_columns(K, ii, ib))
    return SnapshotSpace(kind="pressure", node=node, matrix=np.concatenate(blocks, axis=1),
                         n_boundary=ib.size, n_realizations=len(realizations))


def displacement_snapshots(fine, nb, node, realizations, ref=None):
    """Type 1 displacement snapshots: vector deltas per component and node."""
    if nb.n_nodes == nb.boundary_nodes.size:
        raise ValueError("neighborhood has no interior nodes; refine the fine grid")
    ref = ref or q1_reference(fine.dim, fine.h)
    lconn = _local_connectivity(fine, nb)
    ii, ib = _interior_boundary_split(nb)
    n_loc = nb.n_nodes
    iiu = np.concatenate([ii + c * n_loc for c in range(fine.dim)])
    ibu = np.concatenate([ib + c * n_loc for c in range(fine.dim)])
    blocks = []
    for fields in realizations:
        K = _local_elasticity(fine, nb, lconn, fields.mu, fields.lam, ref)
        blocks.append(_harmonic_columns(K, iiu, ibu))
    return SnapshotSpace(kind="displacement", node=node,
                         matrix=np.concatenate(blocks, axis=1),
                         n_boundary=ib.size, n_realizations=len(realizations))


def snapshot_identity(kind, node, n_loc, dim):
    """Type 2 snapshot space: all fine nodal functions on the neighborhood."""
    n = n_loc if kind == "pressure" else dim * n_loc
    return SnapshotSpace(kind=kind, node=node, matrix=np.eye(n),
                         n_boundary=0, n_realizations=0)


def _orthonormal_span(matrix):
    """SVD basis of the snapshot span with small directions dropped."""
    n, m = matrix.shape
    if m == n and np.array_equal(matrix, np.eye(n)):
        return matrix
    U, s, _ = np.linalg.svd(matrix, full_matrices=False)
    keep = s > _SVD_DROP * s[0]
    return U[:, keep]


def _fix_signs(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _spectral_modes(snapshots, K, M, n_modes):
    """Smallest generalized eigenpairs of (K, M) within the snapshot span."""
    span = _orthonormal_span(snapshots)
    if n_modes > span.shape[1]:
        raise ValueError(
            f"requested {n_modes} modes but the snapshot space has rank {span.shape[1]}"
        )
    Koff = span.T @ K @ span
    Moff = span.T @ M @ span
    Koff = 0.5 * (Koff + Koff.T)
    Moff = 0.5 * (Moff + Moff.T)
    try:
        vals, vecs = linalg.eigh(Koff, Moff)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"local spectral problem failed: {exc}") from exc
    return vals[:n_modes], span @ vecs[:, :n_modes], vals


def pressure_spectral(snapshots, Kbar, Mbar, n_modes):
    """Select the dominant pressure modes of one neighborhood.

    Parameters
    ----------
    snapshots : SnapshotSpace
    Kbar, Mbar : dense local k-bar weighted stiffness and mass.
    n_modes : int
        M_p modes to keep (smallest eigenvalues).

    Returns
    -------
    vals : (n_modes,) ascending eigenvalues.
    vecs : (n_loc, n_modes); when the smallest eigenvalue is numerically
        zero the first column is the exact constant vector.
    """
    vals, vecs, all_vals = _spectral_modes(snapshots.matrix, Kbar, Mbar, n_modes)
    scale = max(abs(all_vals[-1]), 1.0e-300)
    if vals.size and vals[0] < _ZERO_EIG * scale:
        vecs = vecs.copy()
        vecs[:, 0] = 1.0
    return vals, _fix_signs(vecs)


def displacement_spectral(snapshots, Kbar, Mbar, n_modes, dim):
    """Select the dominant displacement modes of one neighborhood.

    Numerically-zero eigenvalues span the rigid motions; the first ``dim``
    kernel columns are replaced by the exact unit translations and remaining
    kernel columns are re-orthogonalized against them in the Mbar inner
    product.
    """
    vals, vecs, all_vals = _spectral_modes(snapshots.matrix, Kbar, Mbar, n_modes)
    scale = max(abs(all_vals[-1]), 1.0e-300)
    kernel = int(np.sum(all_vals < _ZERO_EIG * scale))
    n_loc = Kbar.shape[0] // dim
    k_here = min(kernel, n_modes)
    if k_here > 0:
        vecs = vecs.copy()
        trans = np.zeros((dim * n_loc, dim))
        for c in range(dim):
            trans[c * n_loc:(c + 1) * n_loc, c] = 1.0
        n_tr = min(dim, k_here)
        old = vecs[:, :k_here].copy()
        vecs[:, :n_tr] = trans[:, :n_tr]
        # fill remaining kernel columns from the computed ones, orthogonal
        # to the translations in the Mbar inner product
        basis = [trans[:, c] for c in range(n_tr)]
        pos = n_tr
        for j in range(old.shape[1]):
            if pos >= k_here:
                break
            v = old[:, j].copy()
            for b in basis:
                v -= b * (b @ Mbar @ v) / (b @ Mbar @ b)
            nrm = np.sqrt(abs(v @ Mbar @ v))
            if nrm > 1.0e-8 * np.sqrt(abs(old[:, j] @ Mbar @ old[:, j]) + 1.0e-300):
                v /= nrm
                basis.append(v)
                vecs[:, pos] = v
                pos += 1
    return vals, _fix_signs(vecs)


@dataclass
class LocalBasis:
    """Selected local modes of one coarse node."""

    node: int
    pressure: np.ndarray = field(repr=False)
    displacement: np.ndarray = field(repr=False)
    pressure_vals: np.ndarray
    displacement_vals: np.ndarray


def build_local_bases(fine, coarse, realizations, avg, offline, max_m_plus=None, workers=1):
    """Run the offline stage for every coarse node.

    Parameters
    ----------
    fine, coarse : meshes
    realizations : sequence of MaterialFields (offline sample set)
    avg : AveragedFields
    offline : OfflineConfig
    max_m_plus : int, optional
        Keep enough modes for this enrichment level (default
        ``offline.m_plus``); bases for any ``m_plus`` up to it can then be
        assembled without redoing the offline stage.
    workers : int
        Thread count for the per-node loop (local problems are independent;
        results are stored per node, so the assembly is deterministic).
    """
    dim = fine.dim
    m_max = offline.m_plus if max_m_plus is None else int(max_m_plus)
    n_p = 1 + m_max
    n_u = dim + m_max
    ref = q1_reference(dim, fine.h)

    def one_node(i):
        nb = coarse.neighborhoods[i]
        lconn = _local_connectivity(fine, nb)
        Kp = _local_darcy(fine, nb, lconn, avg.permeability, ref)
        Mpm = _local_weighted_mass(fine, nb, lconn, avg.permeability, ref)
        Ku = _local_elasticity(fine, nb, lconn, avg.mu, avg.lam, ref)
        wu = avg.lam + 2.0 * avg.mu
        Mu_scalar = _local_weighted_mass(fine, nb, lconn, wu, ref)
        n_loc = nb.n_nodes
        Mu = np.zeros((dim * n_loc, dim * n_loc))
        for c in range(dim):
            Mu[c * n_loc:(c + 1) * n_loc, c * n_loc:(c + 1) * n_loc] = Mu_scalar

        if offline.snapshot_type == "type1":
            snap_p = pressure_snapshots(fine, nb, i, realizations, ref)
            snap_u = displacement_snapshots(fine, nb, i, realizations, ref)
        else:
            snap_p = snapshot_identity("pressure", i, n_loc, dim)
            snap_u = snapshot_identity("displacement", i, n_loc, dim)

        pv, pvecs = pressure_spectral(snap_p, Kp, Mpm, n_p)
        uv, uvecs = displacement_spectral(snap_u, Ku, Mu, n_u, dim)
        return LocalBasis(node=i, pressure=pvecs, displacement=uvecs,
                          pressure_vals=pv, displacement_vals=uv)

    indices = range(coarse.n_nodes)
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            bases = list(pool.map(one_node, indices))
    else:
        bases = [one_node(i) for i in indices]
    return bases


@dataclass
class MsBasis:
    """Stacked multiscale projection matrices.

    ``R_p`` is (M_p N_c, n_fine_nodes) and ``R_u`` is
    (M_u N_c, dim n_fine_nodes), rows grouped by coarse node.  Coarse-space
    coefficients x map to fine functions via ``R_p.T @ x`` / ``R_u.T @ x``.
    """

    R_p: object = field(repr=False)
    R_u: object = field(repr=False)
    m_plus: int
    n_coarse: int
    dim: int
    snapshot_type: str = "type1"
    grid_hash: str = ""

    @property
    def M_p(self):
        return self.R_p.shape[0] // self.n_coarse

    @property
    def M_u(self):
        return self.R_u.shape[0] // self.n_coarse

    @property
    def dof_coarse(self):
        return self.R_p.shape[0] + self.R_u.shape[0]


def assemble_ms_basis(fine, coarse, pou, local_bases, m_plus, constrained=None,
                      snapshot_type="type1"):
    """Multiply local modes by the partition of unity and stack them.

    Parameters
    ----------
    constrained : int array, optional
        Displacement dofs to zero in the basis (roller constraints), so the
        multiscale space conforms to the fine boundary conditions.
    """
    dim = fine.dim
    n = fine.n_nodes
    M_p = 1 + int(m_plus)
    M_u = dim + int(m_plus)
    for lb in local_bases:
        if lb.pressure.shape[1] < M_p or lb.displacement.shape[1] < M_u:
            raise ValueError(
                f"local basis at node {lb.node} holds fewer modes than requested m_plus={m_plus}"
            )

    free = None
    if constrained is not None and len(constrained):
        free = np.ones(dim * n)
        free[np.asarray(constrained, dtype=np.int64)] = 0.0

    rows_p, cols_p, vals_p = [], [], []
    rows_u, cols_u, vals_u = [], [], []
    for i, lb in enumerate(local_bases):
        nb = coarse.neighborhoods[i]
        chi = pou.on_nodes(i, nb.nodes)
        n_loc = nb.n_nodes
        for j in range(M_p):
            v = chi * lb.pressure[:, j]
            nz = v != 0.0
            rows_p.append(np.full(int(nz.sum()), i * M_p + j, dtype=np.int64))
            cols_p.append(nb.nodes[nz])
            vals_p.append(v[nz])
        for j in range(M_u):
            for c in range(dim):
                v = chi * lb.displacement[c * n_loc:(c + 1) * n_loc, j]
                gcols = c * n + nb.nodes
                if free is not None:
                    v = v * free[gcols]
                nz = v != 0.0
                rows_u.append(np.full(int(nz.sum()), i * M_u + j, dtype=np.int64))
                cols_u.append(gcols[nz])
                vals_u.append(v[nz])

    R_p = sparse.csr_matrix(
        (np.concatenate(vals_p), (np.concatenate(rows_p), np.concatenate(cols_p))),
        shape=(M_p * coarse.n_nodes, n),
    )
    R_u = sparse.csr_matrix(
        (np.concatenate(vals_u), (np.concatenate(rows_u), np.concatenate(cols_u))),
        shape=(M_u * coarse.n_nodes, dim * n),
    )
    return MsBasis(R_p=R_p, R_u=R_u, m_plus=int(m_plus), n_coarse=coarse.n_nodes,
                   dim=dim, snapshot_type=snapshot_type,
                   grid_hash=fine.spec.grid_hash())


def build_ms_basis(fine, coarse, pou, realizations, law, offline, constrained=None,
                   workers=1):
    """One-shot offline stage: averaged fields, local bases, assembly."""
    avg = averaged_fields(realizations, law.eta, offline.weight_vector()[: len(realizations)])
    local = build_local_bases(fine, coarse, realizations, avg, offline, workers=workers)
    return assemble_ms_basis(fine, coarse, pou, local, offline.m_plus,
                             constrained=constrained, snapshot_type=offline.snapshot_type)


class _DenseSolver:
    """LU solve with a rank-revealing QR fallback for rank-deficient systems.

    Redundant multiscale bases make the projected matrix singular while the
    system stays consistent: full snapshot spaces overcount by construction,
    and even spectral bases carry one dependency per rigid rotation (the
    rotation appears both as a zero-energy local mode and as the partition
    of unity telescoping the translation modes).  A basic solution of the
    pivoted QR then reconstructs the unique fine-grid function.  Near-zero
    pivots are detected up front because a backward-stable LU would
    otherwise return a kernel-polluted solution with a deceptively small
    residual.
    """

    def __init__(self, K):
        self.K = K
        self.scale = np.linalg.norm(K)
        self._lu = None
        self._lu_tried = False
        self._qr = None

    def _lu_factor(self):
        if not self._lu_tried:
            self._lu_tried = True
            try:
                lu = linalg.lu_factor(self.K)
            except linalg.LinAlgError:
                lu = None
            if lu is not None:
                diag = np.abs(np.diag(lu[0]))
                if diag.min() > 1.0e-12 * max(diag.max(), 1.0e-300):
                    self._lu = lu
        return self._lu

    def _basic_solution(self, rhs):
        if self._qr is None:
            Q, R, piv = linalg.qr(self.K, mode="economic", pivoting=True)
            diag = np.abs(np.diag(R))
            tol = (diag[0] if diag.size else 0.0) * 1.0e-12
            self._qr = (Q, R, piv, int(np.count_nonzero(diag > tol)))
        Q, R, piv, rank = self._qr
        y = Q.T @ rhs
        x = np.zeros(self.K.shape[1])
        if rank:
            x[piv[:rank]] = linalg.solve_triangular(R[:rank, :rank], y[:rank])
        return x

    def solve(self, rhs):
        if not np.any(rhs):
            return np.zeros(self.K.shape[1])  # exact for any consistent system
        ref = np.linalg.norm(rhs) + 1.0e-300
        lu = self._lu_factor()
        if lu is not None:
            x = linalg.lu_solve(lu, rhs)
            if np.all(np.isfinite(x)):
                res = np.linalg.norm(self.K @ x - rhs)
                if res <= 1.0e-8 * (ref + self.scale * np.linalg.norm(x)):
                    return x
        x = self._basic_solution(rhs)
        res = np.linalg.norm(self.K @ x - rhs)
        if not np.all(np.isfinite(x)) or res > 1.0e-6 * (ref + self.scale * np.linalg.norm(x)):
            raise NumericalError("singular coarse matrix")
        return x


def project_coarse(system, basis):
    """Galerkin projection of the fine operators onto the multiscale space."""
    Rp, Ru = basis.R_p, basis.R_u
    A_H = (Ru @ system.A @ Ru.T).toarray()
    G_H = (Ru @ system.G @ Rp.T).toarray()
    D_H = (Rp @ system.D @ Ru.T).toarray()
    M_H = (Rp @ system.Mp @ Rp.T).toarray()
    B_H = (Rp @ system.B @ Rp.T).toarray()
    F_H = Rp @ system.F
    return A_H, G_H, D_H, M_H, B_H, F_H


def _coarse_trajectory(system, basis, ts):
    """Coarse-coefficient implicit Euler loop; returns (u_H, p_H) arrays."""
    A_H, G_H, D_H, M_H, B_H, F_H = project_coarse(system, basis)
    tau = ts.tau
    K = np.block([[A_H, G_H], [D_H / tau, M_H / tau + B_H]])
    stepper = _DenseSolver(K)

    n_uH = A_H.shape[0]
    p0 = np.full(system.n_p, float(ts.p0))
    pH0 = _DenseSolver(M_H).solve(basis.R_p @ (system.Mp @ p0))
    uH0 = _DenseSolver(A_H).solve(-G_H @ pH0)

    uH = np.empty((ts.n_steps + 1, n_uH))
    pH = np.empty((ts.n_steps + 1, M_H.shape[0]))
    uH[0], pH[0] = uH0, pH0
    for n in range(ts.n_steps):
        rhs = np.concatenate([
            np.zeros(n_uH),
            F_H + D_H @ (uH[n] / tau) + M_H @ (pH[n] / tau),
        ])
        x = stepper.solve(rhs)
        uH[n + 1], pH[n + 1] = x[:n_uH], x[n_uH:]
    return uH, pH


def solve_coarse(system, basis, ts):
    """Coarse solve plus reconstruction on the fine grid.

    Returns
    -------
    FineSolution
        Multiscale trajectory (u_ms, p_ms) on fine-grid dofs.
    """
    from .biot_fem import FineSolution

    uH, pH = _coarse_trajectory(system, basis, ts)
    u = (basis.R_u.T @ uH.T).T
    p = (basis.R_p.T @ pH.T).T
    times = np.linspace(0.0, ts.t_max, ts.n_steps + 1)
    return FineSolution(u=u, p=p, times=times)


def coarse_observable(system, basis, ts, surface_ids):
    """Final-time surface displacement trace of the coarse solve.

    Avoids reconstructing full trajectories; used by samplers.
    """
    uH, _ = _coarse_trajectory(system, basis, ts)
    n = system.mesh.n_nodes
    surface_ids = np.asarray(surface_ids, dtype=np.int64)
    dofs = np.concatenate([c * n + surface_ids for c in range(system.mesh.dim)])
    Rsurf = basis.R_u[:, dofs]
    return Rsurf.T @ uH[-1]


def relative_errors(fine_sol, ms_sol, mesh, at_step=-1):
    """Mass-weighted relative errors (percent) at one time step.

    Returns
    -------
    (e_p, e_u) : float pair, 100 * ||diff|| / ||reference|| in the L2 norms
        induced by the consistent mass matrix.
    """
    Mq = pressure_mass_matrix(mesh, 1.0)
    p_ref = fine_sol.p[at_step]
    u_ref = fine_sol.u[at_step]
    dp = ms_sol.p[at_step] - p_ref
    du = ms_sol.u[at_step] - u_ref

    denom_p = p_ref @ (Mq @ p_ref)
    if denom_p <= 0.0:
        raise ValueError("reference pressure has zero norm")
    e_p = 100.0 * np.sqrt((dp @ (Mq @ dp)) / denom_p)

    n = mesh.n_nodes
    num_u = denom_u = 0.0
    for c in range(mesh.dim):
        seg = slice(c * n, (c + 1) * n)
        num_u += du[seg] @ (Mq @ du[seg])
        denom_u += u_ref[seg] @ (Mq @ u_ref[seg])
    if denom_u <= 0.0:
        raise ValueError("reference displacement has zero norm")
    e_u = 100.0 * np.sqrt(num_u / denom_u)
    return e_p, e_u


def dof_table(dim, n_coarse, m_plus_list):
    """Coarse dof bookkeeping rows (m_plus, M_p, M_u, dof_coarse)."""
    rows = []
    for m in m_plus_list:
        M_p = 1 + int(m)
        M_u = dim + int(m)
        rows.append((int(m), M_p, M_u, (M_p + M_u) * n_coarse))
    return rows
