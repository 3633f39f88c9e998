"""Structured tensor-product grids on axis-aligned boxes.

Fine and coarse grids share the same box; the coarse grid must be nested in
the fine one (cell counts divide evenly per axis).  Fine nodes are numbered
lexicographically with x fastest, elements likewise.  Coarse nodes carry a
neighborhood (the union of adjacent coarse cells, resolved into fine elements
and fine nodes) and a multilinear hat function used as partition of unity.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "FineMesh",
    "CoarseMesh",
    "Neighborhood",
    "PartitionOfUnity",
    "build_fine_mesh",
    "build_coarse_mesh",
    "partition_of_unity",
    "surface_nodes",
    "side_tags",
]

_AXIS_NAMES = "xyz"


def side_tags(dim):
    """Axis-aligned side tags, e.g. ('x0', 'x1', 'y0', 'y1') in 2D."""
    return tuple(f"{_AXIS_NAMES[c]}{e}" for c in range(dim) for e in (0, 1))


def _parse_side(tag, dim):
    """Return (axis, end) for a side tag like 'y1'."""
    tag = str(tag)
    if len(tag) != 2 or tag[0] not in _AXIS_NAMES[:dim] or tag[1] not in "01":
        raise ValueError(f"unknown side tag {tag!r} for dim={dim}")
    return _AXIS_NAMES.index(tag[0]), int(tag[1])


def _as_axis_tuple(value, dim, name):
    if np.isscalar(value):
        value = (value,) * dim
    value = tuple(value)
    if len(value) != dim:
        raise ValueError(f"{name} must have {dim} entries, got {len(value)}")
    return value


@dataclass
class GridSpec:
    """Grid sizes for one box domain.

    Attributes
    ----------
    dim : int
        Spatial dimension, 2 or 3.
    fine_cells : tuple of int
        Fine cells per axis.
    coarse_cells : tuple of int
        Coarse cells per axis; must divide ``fine_cells`` entrywise.
    extent : tuple of float
        Box side lengths; defaults to the unit box.
    """

    dim: int
    fine_cells: tuple
    coarse_cells: tuple
    extent: tuple = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        self.fine_cells = tuple(int(n) for n in _as_axis_tuple(self.fine_cells, self.dim, "fine_cells"))
        self.coarse_cells = tuple(int(n) for n in _as_axis_tuple(self.coarse_cells, self.dim, "coarse_cells"))
        if self.extent is None:
            self.extent = (1.0,) * self.dim
        self.extent = tuple(float(e) for e in _as_axis_tuple(self.extent, self.dim, "extent"))
        for n in self.fine_cells + self.coarse_cells:
            if n <= 0:
                raise ValueError("cell counts must be positive on every axis")
        for e in self.extent:
            if e <= 0:
                raise ValueError("extent must be positive on every axis")
        for nf, nc in zip(self.fine_cells, self.coarse_cells):
            if nf % nc != 0:
                raise ValueError(
                    f"coarse grid not nested: {nc} coarse cells do not divide {nf} fine cells"
                )

    @property
    def refinement(self):
        """Fine cells per coarse cell, per axis."""
        return tuple(nf // nc for nf, nc in zip(self.fine_cells, self.coarse_cells))

    def grid_hash(self):
        """Short stable identifier used to match persisted artifacts to grids."""
        import hashlib

        key = f"{self.dim}|{self.fine_cells}|{self.coarse_cells}|{self.extent}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]


@dataclass
class FineMesh:
    """Fine grid: nodes, element connectivity and boundary entities.

    Nodes are ordered lexicographically (x fastest).  Element node ordering is
    the local lexicographic corner ordering, i.e. corner ``a`` of a cell has
    local index ``a_x + 2 a_y (+ 4 a_z)``.

    Attributes
    ----------
    spec : GridSpec
    nodes : (n_nodes, dim) float array
    elems : (n_elems, 2**dim) int array
    h : tuple of float
        Cell size per axis.
    side_node_ids : dict tag -> sorted int array of node ids on that side.
    side_faces : dict tag -> (n_faces, 2**(dim-1)) int array of face node ids,
        faces and face-local nodes both ordered lexicographically in the
        in-plane axes.
    """

    spec: GridSpec
    nodes: np.ndarray
    elems: np.ndarray
    h: tuple
    side_node_ids: dict = field(repr=False)
    side_faces: dict = field(repr=False)

    @property
    def dim(self):
        return self.spec.dim

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elems(self):
        return self.elems.shape[0]

    @property
    def nodes_per_axis(self):
        return tuple(n + 1 for n in self.spec.fine_cells)

    def node_multi_index(self, node_ids):
        """Per-axis integer grid coordinates of the given node ids."""
        shape = self.nodes_per_axis
        out = np.empty((np.size(node_ids), self.dim), dtype=np.int64)
        rem = np.asarray(node_ids, dtype=np.int64).ravel()
        for c in range(self.dim):
            out[:, c] = rem % shape[c]
            rem = rem // shape[c]
        return out


def _lex_node_ids(shape):
    """Node id array of the full grid, shaped per axis with x fastest."""
    n = int(np.prod(shape))
    axes = tuple(range(len(shape)))[::-1]
    return np.arange(n, dtype=np.int64).reshape(shape[::-1]).transpose(axes)


def build_fine_mesh(spec):
    """Build the fine mesh for a grid spec.

    Returns
    -------
    FineMesh
    """
    dim = spec.dim
    shape = tuple(n + 1 for n in spec.fine_cells)
    h = tuple(e / n for e, n in zip(spec.extent, spec.fine_cells))

    axes = [np.linspace(0.0, e, n + 1) for e, n in zip(spec.extent, spec.fine_cells)]
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.reshape(-1, order="F") for g in grids], axis=1)

    ids = _lex_node_ids(shape)
    corner_offsets = [np.array(c, dtype=np.int64) for c in np.ndindex(*(2,) * dim)]
    # np.ndindex iterates the last axis fastest; local ordering needs x fastest
    corner_offsets = [c[::-1] for c in corner_offsets]
    cell_ranges = [np.arange(n) for n in spec.fine_cells]
    cells = np.meshgrid(*cell_ranges, indexing="ij")
    cells = np.stack([g.reshape(-1, order="F") for g in cells], axis=1)
    elems = np.empty((cells.shape[0], 2**dim), dtype=np.int64)
    for a, off in enumerate(corner_offsets):
        idx = cells + off
        elems[:, a] = ids[tuple(idx[:, c] for c in range(dim))]

    side_node_ids = {}
    side_faces = {}
    for tag in side_tags(dim):
        axis, end = _parse_side(tag, dim)
        sel = [slice(None)] * dim
        sel[axis] = -1 if end else 0
        plane = ids[tuple(sel)]
        side_node_ids[tag] = np.sort(plane.reshape(-1))
        # faces: take the in-plane corner structure of the boundary cells
        in_axes = [c for c in range(dim) if c != axis]
        face_ranges = [np.arange(spec.fine_cells[c]) for c in in_axes]
        fgrids = np.meshgrid(*face_ranges, indexing="ij")
        fcells = np.stack([g.reshape(-1, order="F") for g in fgrids], axis=1)
        n_faces = fcells.shape[0]
        face = np.empty((n_faces, 2 ** (dim - 1)), dtype=np.int64)
        fixed = spec.fine_cells[axis] if end else 0
        for a, off in enumerate(np.ndindex(*(2,) * (dim - 1))):
            off = off[::-1]
            idx = np.empty((n_faces, dim), dtype=np.int64)
            idx[:, axis] = fixed
            for k, c in enumerate(in_axes):
                idx[:, c] = fcells[:, k] + off[k]
            face[:, a] = ids[tuple(idx[:, c] for c in range(dim))]
        side_faces[tag] = face

    return FineMesh(spec=spec, nodes=nodes, elems=elems, h=h,
                    side_node_ids=side_node_ids, side_faces=side_faces)


@dataclass
class Neighborhood:
    """Fine-grid footprint of one coarse node.

    The neighborhood is the union of coarse cells touching the node, which on
    a structured grid is always an axis-aligned box of fine cells.

    Attributes
    ----------
    node_lo, node_hi : tuple of int
        Inclusive fine-node index range per axis.
    elems : int array of fine element ids inside the box.
    nodes : sorted int array of fine node ids inside the box.
    boundary_nodes : sorted int array of fine node ids on the box surface.
    """

    node_lo: tuple
    node_hi: tuple
    elems: np.ndarray
    nodes: np.ndarray
    boundary_nodes: np.ndarray

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def interior_nodes(self):
        mask = np.ones(self.nodes.shape[0], dtype=bool)
        mask[np.searchsorted(self.nodes, self.boundary_nodes)] = False
        return self.nodes[mask]


@dataclass
class CoarseMesh:
    """Coarse grid with per-node neighborhoods resolved on the fine grid."""

    spec: GridSpec
    nodes: np.ndarray
    elems: np.ndarray
    neighborhoods: list

    @property
    def dim(self):
        return self.spec.dim

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elems(self):
        return self.elems.shape[0]


def build_coarse_mesh(spec, fine=None):
    """Build the coarse mesh and its fine-grid neighborhoods.

    Parameters
    ----------
    spec : GridSpec
    fine : FineMesh, optional
        Reused if already built; must share ``spec``.
    """
    if fine is None:
        fine = build_fine_mesh(spec)
    dim = spec.dim
    m = spec.refinement
    ncp = tuple(n + 1 for n in spec.coarse_cells)
    fshape = tuple(n + 1 for n in spec.fine_cells)
    ids = _lex_node_ids(fshape)

    axes = [np.linspace(0.0, e, n + 1) for e, n in zip(spec.extent, spec.coarse_cells)]
    grids = np.meshgrid(*axes, indexing="ij")
    cnodes = np.stack([g.reshape(-1, order="F") for g in grids], axis=1)

    cids = _lex_node_ids(ncp)
    cell_ranges = [np.arange(n) for n in spec.coarse_cells]
    cells = np.meshgrid(*cell_ranges, indexing="ij")
    cells = np.stack([g.reshape(-1, order="F") for g in cells], axis=1)
    celems = np.empty((cells.shape[0], 2**dim), dtype=np.int64)
    for a, off in enumerate(np.ndindex(*(2,) * dim)):
        off = np.array(off[::-1], dtype=np.int64)
        idx = cells + off
        celems[:, a] = cids[tuple(idx[:, c] for c in range(dim))]

    # element ids on the fine grid, shaped per axis
    eshape = spec.fine_cells
    eids = _lex_node_ids(eshape)

    neighborhoods = []
    for flat in range(int(np.prod(ncp))):
        rem = flat
        cidx = []
        for c in range(dim):
            cidx.append(rem % ncp[c])
            rem //= ncp[c]
        # coarse cells adjacent to this node, clipped to the domain
        cell_lo = [max(i - 1, 0) for i in cidx]
        cell_hi = [min(i, spec.coarse_cells[c] - 1) for c, i in enumerate(cidx)]
        node_lo = tuple(cell_lo[c] * m[c] for c in range(dim))
        node_hi = tuple((cell_hi[c] + 1) * m[c] for c in range(dim))

        nsel = tuple(slice(node_lo[c], node_hi[c] + 1) for c in range(dim))
        box_nodes = ids[nsel]
        nodes_flat = np.sort(box_nodes.reshape(-1))
        interior = box_nodes[tuple(slice(1, -1) for _ in range(dim))]
        bmask = np.ones(nodes_flat.shape[0], dtype=bool)
        bmask[np.searchsorted(nodes_flat, np.sort(interior.reshape(-1)))] = False
        boundary = nodes_flat[bmask]

        esel = tuple(slice(cell_lo[c] * m[c], (cell_hi[c] + 1) * m[c]) for c in range(dim))
        elems_flat = np.sort(eids[esel].reshape(-1))

        neighborhoods.append(
            Neighborhood(node_lo=node_lo, node_hi=node_hi, elems=elems_flat,
                         nodes=nodes_flat, boundary_nodes=boundary)
        )

    return CoarseMesh(spec=spec, nodes=cnodes, elems=celems, neighborhoods=neighborhoods)


@dataclass
class PartitionOfUnity:
    """Multilinear coarse hat functions sampled at fine nodes.

    ``chi`` is a (n_coarse_nodes, n_fine_nodes) CSR matrix; row i holds the
    hat function of coarse node i.  Rows sum to one at every fine node.
    """

    chi: object

    def row(self, i):
        return self.chi.getrow(i).toarray().ravel()

    def on_nodes(self, i, node_ids):
        """Hat values of coarse node i at the given fine node ids."""
        return np.asarray(self.chi[i, node_ids].todense()).ravel()


def partition_of_unity(coarse, fine):
    """Build the partition of unity for a coarse/fine mesh pair.

    Returns
    -------
    PartitionOfUnity
    """
    from scipy import sparse

    spec = coarse.spec
    H = tuple(e / n for e, n in zip(spec.extent, spec.coarse_cells))
    rows, cols, vals = [], [], []
    for i, nb in enumerate(coarse.neighborhoods):
        coords = fine.nodes[nb.nodes]
        center = coarse.nodes[i]
        w = np.ones(nb.nodes.shape[0])
        for c in range(spec.dim):
            t = np.abs(coords[:, c] - center[c]) / H[c]
            w = w * np.maximum(0.0, 1.0 - t)
        keep = w > 0.0
        rows.append(np.full(int(keep.sum()), i, dtype=np.int64))
        cols.append(nb.nodes[keep])
        vals.append(w[keep])
    chi = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(coarse.n_nodes, fine.n_nodes),
    )
    return PartitionOfUnity(chi=chi)


def surface_nodes(fine, tag=None):
    """Node ids of the observation surface, sorted ascending.

    The default surface is the top boundary: ``y1`` in 2D and ``z1`` in 3D.
    """
    if tag is None:
        tag = "y1" if fine.dim == 2 else "z1"
    _parse_side(tag, fine.dim)
    return fine.side_node_ids[tag]
