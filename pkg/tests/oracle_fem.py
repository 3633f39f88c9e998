"""Independent dense reference for the coupled solver tests.

Everything here is intentionally written from scratch against the weak form,
with different numerics than the library: 3-point Gauss quadrature, plain
Python element loops, dense matrices, boundary conditions by index removal
and dense linear solves.  Only feasible on very small grids; used to freeze
expected values.
"""

import itertools

import numpy as np

# 3-point Gauss on [0, 1]
_GP = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GW = 0.5 * np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def _shape_1d(t):
    return np.array([1.0 - t, t]), np.array([-1.0, 1.0])


def oracle_nodes(dim, cells, extent):
    """Node coordinates, lexicographic with x fastest."""
    counts = [c + 1 for c in cells]
    h = [e / c for e, c in zip(extent, cells)]
    coords = []
    for idx in itertools.product(*[range(n) for n in reversed(counts)]):
        rev = idx[::-1]
        coords.append([rev[a] * h[a] for a in range(dim)])
    return np.array(coords)


def _node_id(ix, counts):
    nid = 0
    for a in reversed(range(len(ix))):
        nid = nid * counts[a] + ix[a]
    return nid


def _elements(dim, cells):
    counts = [c + 1 for c in cells]
    elems = []
    for idx in itertools.product(*[range(c) for c in reversed(cells)]):
        cell = idx[::-1]
        corners = []
        for a_local in range(2**dim):
            offs = [(a_local >> a) & 1 for a in range(dim)]
            corners.append(_node_id([cell[a] + offs[a] for a in range(dim)], counts))
        elems.append(corners)
    return elems


def _quad(dim, h):
    """Quadrature data: per point (weight*vol, N (2^dim,), dN (2^dim, dim))."""
    out = []
    vol = np.prod(h)
    for pt in itertools.product(range(3), repeat=dim):
        w = vol * np.prod([_GW[p] for p in pt])
        n1 = [_shape_1d(_GP[p]) for p in pt]
        N = np.ones(2**dim)
        dN = np.ones((2**dim, dim))
        for a_local in range(2**dim):
            for a in range(dim):
                bit = (a_local >> a) & 1
                N[a_local] *= n1[a][0][bit]
                for c in range(dim):
                    dN[a_local, c] *= (n1[a][1][bit] / h[a]) if c == a else n1[a][0][bit]
        out.append((w, N, dN))
    return out


def _robin_faces(dim, cells, side):
    """Face node-id tuples (lexicographic in-plane) for one box side."""
    axis = "xyz".index(side[0])
    end = int(side[1])
    counts = [c + 1 for c in cells]
    faces = []
    plane_axes = [a for a in range(dim) if a != axis]
    for idx in itertools.product(*[range(cells[a]) for a in reversed(plane_axes)]):
        cell_plane = dict(zip(reversed(plane_axes), idx))
        corners = []
        for a_local in range(2 ** (dim - 1)):
            ix = [0] * dim
            ix[axis] = end * cells[axis]
            for k, a in enumerate(plane_axes):
                ix[a] = cell_plane[a] + ((a_local >> k) & 1)
            corners.append(_node_id(ix, counts))
        faces.append(corners)
    return faces


def _face_quad(dim, h, axis):
    plane_axes = [a for a in range(dim) if a != axis]
    area = np.prod([h[a] for a in plane_axes])
    out = []
    for pt in itertools.product(range(3), repeat=dim - 1):
        w = area * np.prod([_GW[p] for p in pt])
        n1 = [_shape_1d(_GP[p]) for p in pt]
        N = np.ones(2 ** (dim - 1))
        for a_local in range(2 ** (dim - 1)):
            for k in range(dim - 1):
                N[a_local] *= n1[k][0][(a_local >> k) & 1]
        out.append((w, N))
    return out


def oracle_matrices(dim, cells, extent, mu_e, lam_e, k_e, alpha, viscosity,
                    inv_modulus, robin_side, gamma, p_far):
    """Dense operator set for one material realization.

    Element coefficient arrays follow the library's element ordering
    (lexicographic, x fastest).

    Returns a dict with A (elasticity), B (flow + boundary mass), G, D
    (coupling), Mp (storage mass), F (boundary load).
    """
    n = int(np.prod([c + 1 for c in cells]))
    nu_dofs = dim * n
    A = np.zeros((nu_dofs, nu_dofs))
    B = np.zeros((n, n))
    G = np.zeros((nu_dofs, n))
    D = np.zeros((n, nu_dofs))
    Mp = np.zeros((n, n))
    F = np.zeros(n)
    h = [e / c for e, c in zip(extent, cells)]
    quad = _quad(dim, h)
    elems = _elements(dim, cells)
    nloc = 2**dim

    for e, corners in enumerate(elems):
        mu, lam, k = mu_e[e], lam_e[e], k_e[e]
        for (w, N, dN) in quad:
            for a in range(nloc):
                ga = corners[a]
                for b in range(nloc):
                    gb = corners[b]
                    B[ga, gb] += w * (k / viscosity) * np.dot(dN[a], dN[b])
                    Mp[ga, gb] += w * inv_modulus * N[a] * N[b]
                    for c in range(dim):
                        G[c * n + ga, gb] += w * alpha * N[a] * dN[b, c]
                        D[ga, c * n + gb] += w * alpha * dN[b, c] * N[a]
            # strain: eps(u)_ij = (du_i/dx_j + du_j/dx_i) / 2 for each basis pair
            for a in range(nloc):
                for c in range(dim):
                    for b in range(nloc):
                        for cp in range(dim):
                            val = lam * dN[a, c] * dN[b, cp]
                            for i in range(dim):
                                for j in range(dim):
                                    ea = 0.5 * (dN[a, j] * (i == c) + dN[a, i] * (j == c))
                                    eb = 0.5 * (dN[b, j] * (i == cp) + dN[b, i] * (j == cp))
                                    val += 2.0 * mu * ea * eb
                            A[c * n + corners[a], cp * n + corners[b]] += w * val

    axis = "xyz".index(robin_side[0])
    fq = _face_quad(dim, h, axis)
    for corners in _robin_faces(dim, cells, robin_side):
        for (w, N) in fq:
            for a, ga in enumerate(corners):
                F[ga] += w * gamma * p_far * N[a]
                for b, gb in enumerate(corners):
                    B[ga, gb] += w * gamma * N[a] * N[b]
    return {"A": A, "B": B, "G": G, "D": D, "Mp": Mp, "F": F}


def oracle_roller_dofs(dim, cells, rollers):
    n = int(np.prod([c + 1 for c in cells]))
    counts = [c + 1 for c in cells]
    fixed = set()
    for side in rollers:
        axis = "xyz".index(side[0])
        end = int(side[1])
        for idx in itertools.product(*[range(c) for c in reversed(counts)]):
            ix = idx[::-1]
            if ix[axis] == end * cells[axis]:
                fixed.add(axis * n + _node_id(list(ix), counts))
    return sorted(fixed)


def oracle_solve(mats, dim, cells, rollers, tau, n_steps, p0):
    """Implicit Euler trajectory with rollers eliminated by index removal.

    Returns (u, p) with full-length dof vectors per step, zeros reinserted
    at the constrained entries.
    """
    n = mats["B"].shape[0]
    nu_dofs = dim * n
    fixed = oracle_roller_dofs(dim, cells, rollers)
    free = np.setdiff1d(np.arange(nu_dofs), fixed)

    A = mats["A"][np.ix_(free, free)]
    G = mats["G"][free]
    D = mats["D"][:, free]
    B, Mp, F = mats["B"], mats["Mp"], mats["F"]

    p = np.full(n, float(p0))
    u_free = np.linalg.solve(A, -G @ p)
    K = np.block([[A, G], [D / tau, Mp / tau + B]])
    us = [u_free]
    ps = [p]
    for _ in range(n_steps):
        rhs = np.concatenate([np.zeros(free.size), F + (D @ u_free + Mp @ p) / tau])
        x = np.linalg.solve(K, rhs)
        u_free, p = x[: free.size], x[free.size:]
        us.append(u_free)
        ps.append(p)
    u_full = np.zeros((n_steps + 1, nu_dofs))
    u_full[:, free] = np.array(us)
    return u_full, np.array(ps)
