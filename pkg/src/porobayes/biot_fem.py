"""Fine-grid solver for linearized Biot poroelasticity.

Weak form on displacement u and pressure p with bilinear forms

    a(u, v) = int 2 mu eps(u):eps(v) + lam div u div v dx
    g(p, v) = int alpha grad p . v dx
    d(u, q) = int alpha div u q dx
    b(p, q) = int (k / nu) grad p . grad q dx + int_{Gamma_p} gamma p q ds
    m(p, q) = int (1 / M) p q dx
    l(q)    = int_{Gamma_p} gamma p_far q ds

discretized with Q1 elements on a structured grid and stepped by implicit
Euler on the monolithic block system

    [ A      G           ] [u]   [ 0                        ]
    [ D/tau  Mp/tau + B  ] [p] = [ F + D u_prev/tau + Mp p_prev/tau ].

The time-step matrix is factorized once per step size and reused.  Material
coefficients are taken elementwise as the average of nodal values, so the
element matrices are fixed reference blocks scaled per element.

Displacement dofs are component-major: dof = c * n_nodes + node.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import NumericalError
from .mesh import _parse_side

__all__ = [
    "PhysicalParams",
    "BoundarySpec",
    "TimeSteppingConfig",
    "FineSystem",
    "FineSolution",
    "q1_reference",
    "face_reference",
    "element_average",
    "assemble_fine",
    "step",
    "solve_fine",
    "trace_surface",
    "roller_dofs",
]


@dataclass
class PhysicalParams:
    """Scalar physical constants of the coupled model."""

    biot_modulus: float = 1.0
    alpha: float = 0.1
    viscosity: float = 1.0
    eta: float = 0.3

    def __post_init__(self):
        if self.biot_modulus <= 0 or self.viscosity <= 0:
            raise ValueError("biot_modulus and viscosity must be positive")


@dataclass
class BoundarySpec:
    """Boundary conditions per axis-aligned side.

    Sides listed in ``rollers`` constrain the normal displacement component
    to zero (tangential traction free); all other sides are traction free.
    The flow Robin condition q.n = gamma (p - p_far) acts on ``robin_side``;
    every other side is no-flux.  ``surface`` names the observation side.
    """

    dim: int
    rollers: tuple = None
    robin_side: str = "y1"
    gamma: float = 1.0e4
    p_far: float = 1.0
    surface: str = None

    def __post_init__(self):
        if self.rollers is None:
            self.rollers = ("x0", "y0", "z0")[: self.dim]
        self.rollers = tuple(self.rollers)
        axes_with_roller = set()
        for tag in self.rollers:
            axis, _ = _parse_side(tag, self.dim)
            axes_with_roller.add(axis)
        if axes_with_roller != set(range(self.dim)):
            raise ValueError(
                "every axis needs at least one roller side, else the "
                "constrained elasticity block is singular"
            )
        _parse_side(self.robin_side, self.dim)
        if self.surface is None:
            self.surface = "y1" if self.dim == 2 else "z1"
        _parse_side(self.surface, self.dim)


@dataclass
class TimeSteppingConfig:
    """Implicit Euler settings: horizon, step count, initial pressure."""

    t_max: float = 1.0e-3
    n_steps: int = 20
    p0: float = 0.0

    def __post_init__(self):
        if self.t_max <= 0 or self.n_steps < 1:
            raise ValueError("need t_max > 0 and n_steps >= 1")

    @property
    def tau(self):
        return self.t_max / self.n_steps


def _gauss_points(dim):
    """Tensor 2-point Gauss rule on [0, 1]^dim: (points, weights)."""
    g = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
    pts_1d = [g] * dim
    pts = np.stack(np.meshgrid(*pts_1d, indexing="ij"), axis=-1).reshape(-1, dim)
    w = np.full(pts.shape[0], 0.5**dim)
    return pts, w


def _shape_values(dim, pts):
    """Q1 shapes N (n_pts, 2^dim) and reference gradients dN (n_pts, 2^dim, dim)."""
    n_pts = pts.shape[0]
    nb = 2**dim
    N = np.ones((n_pts, nb))
    dN = np.ones((n_pts, nb, dim))
    for a in range(nb):
        bits = [(a >> c) & 1 for c in range(dim)]
        for c in range(dim):
            f = pts[:, c] if bits[c] else 1.0 - pts[:, c]
            df = 1.0 if bits[c] else -1.0
            N[:, a] *= f
            for cc in range(dim):
                dN[:, a, cc] *= df if cc == c else f
    return N, dN


def q1_reference(dim, h):
    """Reference element integrals on an axis-aligned cell of size ``h``.

    Returns a dict with

    - ``mass``:  int N_a N_b
    - ``stiff``: int grad N_a . grad N_b
    - ``grad``:  list over axes c of int N_a dN_b/dx_c
    - ``cross``: cross[p][q] = int dN_a/dx_p dN_b/dx_q
    - ``elast_mu``, ``elast_lam``: (dim 2^dim)^2 blocks so the element
      elasticity matrix is mu_e * elast_mu + lam_e * elast_lam, dofs ordered
      component-major.
    """
    h = np.asarray(h, dtype=float)
    pts, w = _gauss_points(dim)
    N, dN = _shape_values(dim, pts)
    det = float(np.prod(h))
    dNx = dN / h[None, None, :]
    wdet = w * det

    nb = 2**dim
    mass = np.einsum("g,ga,gb->ab", wdet, N, N)
    cross = [[np.einsum("g,ga,gb->ab", wdet, dNx[:, :, p], dNx[:, :, q])
              for q in range(dim)] for p in range(dim)]
    stiff = sum(cross[c][c] for c in range(dim))
    grad = [np.einsum("g,ga,gb->ab", wdet, N, dNx[:, :, c]) for c in range(dim)]

    ndof = dim * nb
    elast_mu = np.zeros((ndof, ndof))
    elast_lam = np.zeros((ndof, ndof))
    for c in range(dim):
        for cp in range(dim):
            blk = slice(c * nb, (c + 1) * nb), slice(cp * nb, (cp + 1) * nb)
            elast_mu[blk] += cross[cp][c]
            if c == cp:
                elast_mu[blk] += stiff
            elast_lam[blk] += cross[c][cp]

    return {"mass": mass, "stiff": stiff, "grad": grad, "cross": cross,
            "elast_mu": elast_mu, "elast_lam": elast_lam}


def face_reference(dim, h, axis):
    """Face mass matrix and load vector on a boundary face normal to ``axis``.

    Face-local node ordering is lexicographic in the in-plane axes, matching
    ``FineMesh.side_faces``.
    """
    in_axes = [c for c in range(dim) if c != axis]
    hf = np.asarray([h[c] for c in in_axes], dtype=float)
    fdim = dim - 1
    pts, w = _gauss_points(fdim)
    N, _ = _shape_values(fdim, pts)
    det = float(np.prod(hf))
    mass = np.einsum("g,ga,gb->ab", w * det, N, N)
    load = np.einsum("g,ga->a", w * det, N)
    return mass, load


def element_average(mesh, nodal):
    """Elementwise mean of a nodal field."""
    nodal = np.asarray(nodal, dtype=float)
    if nodal.shape != (mesh.n_nodes,):
        raise ValueError(f"field has shape {nodal.shape}, expected ({mesh.n_nodes},)")
    return nodal[mesh.elems].mean(axis=1)


def _scatter(rows, cols, data, shape):
    """Assemble a CSR matrix from per-element dense blocks."""
    nr, nc = data.shape[1], data.shape[2]
    r = np.broadcast_to(rows[:, :, None], (rows.shape[0], nr, nc)).ravel()
    c = np.broadcast_to(cols[:, None, :], (cols.shape[0], nr, nc)).ravel()
    return sparse.csr_matrix((data.ravel(), (r, c)), shape=shape)


def displacement_dofs(mesh, node_ids, axis):
    """Component-major displacement dof ids for nodes and one component."""
    return axis * mesh.n_nodes + np.asarray(node_ids, dtype=np.int64)


def roller_dofs(mesh, bc):
    """Constrained displacement dofs (normal components on roller sides)."""
    out = []
    for tag in bc.rollers:
        axis, _ = _parse_side(tag, mesh.dim)
        out.append(displacement_dofs(mesh, mesh.side_node_ids[tag], axis))
    return np.unique(np.concatenate(out))


def darcy_matrix(mesh, perm_elem, viscosity, ref=None):
    """(k / nu)-weighted pressure stiffness, no boundary terms."""
    ref = ref or q1_reference(mesh.dim, mesh.h)
    coeff = np.asarray(perm_elem, dtype=float) / viscosity
    data = coeff[:, None, None] * ref["stiff"][None, :, :]
    n = mesh.n_nodes
    return _scatter(mesh.elems, mesh.elems, data, (n, n))


def elasticity_matrix(mesh, mu_elem, lam_elem, ref=None):
    """Linear elasticity stiffness with elementwise Lame coefficients."""
    ref = ref or q1_reference(mesh.dim, mesh.h)
    data = (np.asarray(mu_elem, dtype=float)[:, None, None] * ref["elast_mu"][None]
            + np.asarray(lam_elem, dtype=float)[:, None, None] * ref["elast_lam"][None])
    edofs = np.concatenate([mesh.elems + c * mesh.n_nodes for c in range(mesh.dim)], axis=1)
    n = mesh.dim * mesh.n_nodes
    return _scatter(edofs, edofs, data, (n, n))


def coupling_matrices(mesh, alpha, ref=None):
    """Pressure-gradient matrix G and volumetric coupling D.

    G[(c,a), b] = alpha int N_a dN_b/dx_c;  D[b, (c,a)] = alpha int dN_a/dx_c N_b.
    """
    ref = ref or q1_reference(mesh.dim, mesh.h)
    Ge = alpha * np.vstack(ref["grad"])
    De = alpha * np.hstack(ref["grad"])
    edofs = np.concatenate([mesh.elems + c * mesh.n_nodes for c in range(mesh.dim)], axis=1)
    n, nu = mesh.n_nodes, mesh.dim * mesh.n_nodes
    n_el = mesh.n_elems
    G = _scatter(edofs, mesh.elems, np.broadcast_to(Ge, (n_el,) + Ge.shape), (nu, n))
    D = _scatter(mesh.elems, edofs, np.broadcast_to(De, (n_el,) + De.shape), (n, nu))
    return G, D


def pressure_mass_matrix(mesh, coeff=1.0, ref=None):
    """Pressure mass matrix scaled by a constant coefficient."""
    ref = ref or q1_reference(mesh.dim, mesh.h)
    n = mesh.n_nodes
    n_el = mesh.n_elems
    data = np.broadcast_to(coeff * ref["mass"], (n_el,) + ref["mass"].shape)
    return _scatter(mesh.elems, mesh.elems, data, (n, n))


def robin_terms(mesh, bc):
    """Robin face mass (added to B) and load vector F."""
    axis, _ = _parse_side(bc.robin_side, mesh.dim)
    mass, load = face_reference(mesh.dim, mesh.h, axis)
    faces = mesh.side_faces[bc.robin_side]
    n = mesh.n_nodes
    data = np.broadcast_to(bc.gamma * mass, (faces.shape[0],) + mass.shape)
    R = _scatter(faces, faces, data, (n, n))
    F = np.zeros(n)
    np.add.at(F, faces.ravel(), np.broadcast_to(bc.gamma * bc.p_far * load, faces.shape).ravel())
    return R, F


@dataclass
class FineSystem:
    """Assembled fine-grid operators plus factorization caches.

    ``A`` and ``G`` carry the roller constraints (rows/columns eliminated,
    unit diagonal on constrained dofs); ``A_raw`` and ``G_raw`` are the
    unconstrained assemblies kept for diagnostics.
    """

    mesh: object
    params: PhysicalParams
    bc: BoundarySpec
    A: object = field(repr=False)
    G: object = field(repr=False)
    D: object = field(repr=False)
    Mp: object = field(repr=False)
    B: object = field(repr=False)
    F: np.ndarray = field(repr=False)
    constrained: np.ndarray = field(repr=False)
    A_raw: object = field(default=None, repr=False)
    G_raw: object = field(default=None, repr=False)
    _step_lu: dict = field(default_factory=dict, repr=False)
    _elas_lu: object = field(default=None, repr=False)

    @property
    def n_p(self):
        return self.mesh.n_nodes

    @property
    def n_u(self):
        return self.mesh.dim * self.mesh.n_nodes

    @property
    def dof_f(self):
        return self.n_u + self.n_p

    def monolithic(self, tau):
        """Block time-step matrix for step size tau (CSC)."""
        return sparse.bmat(
            [[self.A, self.G], [self.D / tau, self.Mp / tau + self.B]], format="csc"
        )

    def step_factor(self, tau):
        """Cached (matrix, LU) pair for one step size."""
        key = float(tau)
        if key not in self._step_lu:
            K = self.monolithic(tau)
            try:
                self._step_lu[key] = (K, splu(K))
            except RuntimeError as exc:
                raise NumericalError(f"time-step matrix factorization failed: {exc}") from exc
        return self._step_lu[key]

    def elasticity_factor(self):
        if self._elas_lu is None:
            try:
                self._elas_lu = splu(self.A.tocsc())
            except RuntimeError as exc:
                raise NumericalError(f"elasticity factorization failed: {exc}") from exc
        return self._elas_lu


def assemble_fine(mesh, fields, params, bc, keep_raw=True):
    """Assemble all fine-grid operators for one material realization.

    Parameters
    ----------
    mesh : FineMesh
    fields : MaterialFields with nodal arrays on ``mesh``.
    params : PhysicalParams
    bc : BoundarySpec
    keep_raw : bool
        Keep the unconstrained A and G for diagnostics and tests.
    """
    if bc.dim != mesh.dim:
        raise ValueError("boundary spec dimension does not match the mesh")
    ref = q1_reference(mesh.dim, mesh.h)

    k_e = element_average(mesh, fields.permeability)
    mu_e = element_average(mesh, fields.mu)
    lam_e = element_average(mesh, fields.lam)

    A0 = elasticity_matrix(mesh, mu_e, lam_e, ref)
    B0 = darcy_matrix(mesh, k_e, params.viscosity, ref)
    G0, D = coupling_matrices(mesh, params.alpha, ref)
    Mp = pressure_mass_matrix(mesh, 1.0 / params.biot_modulus, ref)
    R, F = robin_terms(mesh, bc)
    B = B0 + R

    fixed = roller_dofs(mesh, bc)
    n_u = mesh.dim * mesh.n_nodes
    free = np.ones(n_u)
    free[fixed] = 0.0
    Z = sparse.diags(free)
    pin = sparse.csr_matrix(
        (np.ones(fixed.size), (fixed, fixed)), shape=(n_u, n_u)
    )
    A = (Z @ A0 @ Z + pin).tocsr()
    G = (Z @ G0).tocsr()

    return FineSystem(mesh=mesh, params=params, bc=bc, A=A, G=G, D=D.tocsr(),
                      Mp=Mp, B=B.tocsr(), F=F, constrained=fixed,
                      A_raw=A0 if keep_raw else None,
                      G_raw=G0 if keep_raw else None)


@dataclass
class FineSolution:
    """Trajectory of one implicit Euler run, states 0..n_steps inclusive."""

    u: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    times: np.ndarray

    @property
    def n_steps(self):
        return self.u.shape[0] - 1

    @property
    def final_u(self):
        return self.u[-1]

    @property
    def final_p(self):
        return self.p[-1]


def step(system, u_prev, p_prev, tau):
    """Advance one implicit Euler step; returns (u, p)."""
    K, lu = system.step_factor(tau)
    rhs = np.concatenate([
        np.zeros(system.n_u),
        system.F + system.D @ (u_prev / tau) + system.Mp @ (p_prev / tau),
    ])
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise NumericalError("time-step solve produced non-finite values")
    res = np.linalg.norm(K @ x - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and res > 1.0e-8 * scale:
        raise NumericalError(f"time-step residual {res / scale:.2e} exceeds tolerance")
    return x[: system.n_u], x[system.n_u:]


def initial_state(system, ts):
    """Initial pressure p0 and the compatible displacement A u0 = -G p0."""
    p0 = np.full(system.n_p, float(ts.p0))
    rhs = -system.G @ p0
    u0 = system.elasticity_factor().solve(rhs)
    if not np.all(np.isfinite(u0)):
        raise NumericalError("initial elasticity solve produced non-finite values")
    return u0, p0


def solve_fine(system, ts):
    """Run the implicit Euler loop; returns the full trajectory."""
    tau = ts.tau
    u = np.empty((ts.n_steps + 1, system.n_u))
    p = np.empty((ts.n_steps + 1, system.n_p))
    u[0], p[0] = initial_state(system, ts)
    for n in range(ts.n_steps):
        u[n + 1], p[n + 1] = step(system, u[n], p[n], tau)
    times = np.linspace(0.0, ts.t_max, ts.n_steps + 1)
    return FineSolution(u=u, p=p, times=times)


def trace_surface(solution, mesh, surface_ids, at_step=-1):
    """Concatenated displacement components on the surface at one step.

    Layout: all x-components in surface node order, then y (then z).
    """
    u = solution.u[at_step] if hasattr(solution, "u") else np.asarray(solution)
    surface_ids = np.asarray(surface_ids, dtype=np.int64)
    n = mesh.n_nodes
    return np.concatenate([u[c * n + surface_ids] for c in range(mesh.dim)])
