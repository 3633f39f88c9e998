"""Binary array container and artifact file sets.

Single-array files use a fixed little-endian layout:

    magic   5 bytes  b"PBMX1"
    dtype   1 byte   0 = float64, 1 = int64
    rank    u32
    dims    rank * u64
    payload product(dims) * 8 bytes, row major
    mlen    u64
    meta    mlen bytes of JSON (UTF-8)

Round trips are bit exact.  Composite artifacts (expansion models, multiscale
bases, datasets, trained networks) are saved as a set of these files sharing
a path stem; the sidecar metadata carries enough structure to rebuild the
object and a fine-grid hash so that mismatched artifacts are rejected at
load time.
"""

import json
import struct
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ConfigError
from .randfield import CovarianceSpec, KleModel
from .gmsfem import MsBasis
from .surrogate import Dataset, NnSpec, ScalingTransform, SurrogateModel, build_model

__all__ = [
    "write_array",
    "read_array",
    "save_kle",
    "load_kle",
    "save_basis",
    "load_basis",
    "save_datasets",
    "load_datasets",
    "save_surrogates",
    "load_surrogates",
]

_MAGIC = b"PBMX1"
_F64, _I64 = 0, 1


def write_array(path, array, metadata=None):
    """Write one array; float dtypes stored as f64, integer as i64."""
    arr = np.asarray(array, order="C")  # keeps rank-0 arrays rank 0
    if arr.dtype.kind == "f":
        code, arr = _F64, arr.astype("<f8", copy=False)
    elif arr.dtype.kind in "iu":
        code, arr = _I64, arr.astype("<i8")
    else:
        raise ConfigError(f"unsupported array dtype {arr.dtype}")
    meta = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BI", code, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)


def read_array(path):
    """Read one array; returns (array, metadata dict)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing artifact file {path}")
    raw = path.read_bytes()
    if raw[:5] != _MAGIC:
        raise ConfigError(f"{path}: bad magic {raw[:5]!r}, not a PBMX1 container")
    try:
        code, rank = struct.unpack_from("<BI", raw, 5)
        off = 10
        dims = struct.unpack_from(f"<{rank}Q", raw, off)
        off += 8 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        dtype = {_F64: "<f8", _I64: "<i8"}[code]
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(dims)
        off += 8 * count
        (mlen,) = struct.unpack_from("<Q", raw, off)
        off += 8
        meta = json.loads(raw[off:off + mlen].decode()) if mlen else {}
    except (struct.error, KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: truncated or corrupt container: {exc}") from exc
    return arr.copy(), meta


def _check_hash(meta, expect, path):
    if expect and meta.get("grid_hash") and meta["grid_hash"] != expect:
        raise ConfigError(
            f"{path}: artifact was built for a different grid "
            f"({meta['grid_hash']} != {expect})"
        )


# --- expansion model --------------------------------------------------------


def save_kle(stem, model, extra=None):
    stem = str(stem)
    meta = {
        "sigma2": model.spec.sigma2,
        "corr_len": list(model.spec.corr_len),
        "n_terms": model.spec.L,
        "total_mass": model.total_mass,
        "grid_hash": model.grid_hash,
        **(extra or {}),
    }
    write_array(stem + ".eigvals.pbm", model.eigenvalues, meta)
    write_array(stem + ".eigvecs.pbm", model.eigenfunctions)
    write_array(stem + ".weights.pbm", model.weights)


def load_kle(stem, grid_hash=""):
    stem = str(stem)
    vals, meta = read_array(stem + ".eigvals.pbm")
    _check_hash(meta, grid_hash, stem + ".eigvals.pbm")
    vecs, _ = read_array(stem + ".eigvecs.pbm")
    w, _ = read_array(stem + ".weights.pbm")
    spec = CovarianceSpec(sigma2=meta["sigma2"], corr_len=meta["corr_len"],
                          L=meta["n_terms"])
    return KleModel(eigenvalues=vals, eigenfunctions=vecs,
                    total_mass=meta["total_mass"], weights=w, spec=spec,
                    grid_hash=meta.get("grid_hash", ""))


# --- multiscale basis -------------------------------------------------------


def _save_csr(stem, tag, mat):
    mat = mat.tocsr()
    write_array(f"{stem}.{tag}_data.pbm", mat.data, {"shape": list(mat.shape)})
    write_array(f"{stem}.{tag}_indices.pbm", mat.indices)
    write_array(f"{stem}.{tag}_indptr.pbm", mat.indptr)


def _load_csr(stem, tag):
    data, meta = read_array(f"{stem}.{tag}_data.pbm")
    indices, _ = read_array(f"{stem}.{tag}_indices.pbm")
    indptr, _ = read_array(f"{stem}.{tag}_indptr.pbm")
    if "shape" not in meta:
        raise ConfigError(f"{stem}.{tag}_data.pbm: missing shape metadata")
    return sparse.csr_matrix((data, indices, indptr), shape=tuple(meta["shape"]))


def save_basis(stem, basis, extra=None):
    stem = str(stem)
    meta = {
        "m_plus": basis.m_plus,
        "n_coarse": basis.n_coarse,
        "dim": basis.dim,
        "snapshot_type": basis.snapshot_type,
        "grid_hash": basis.grid_hash,
        **(extra or {}),
    }
    write_array(stem + ".info.pbm", np.array([basis.m_plus]), meta)
    _save_csr(stem, "rp", basis.R_p)
    _save_csr(stem, "ru", basis.R_u)


def load_basis(stem, grid_hash=""):
    stem = str(stem)
    _, meta = read_array(stem + ".info.pbm")
    _check_hash(meta, grid_hash, stem + ".info.pbm")
    return MsBasis(R_p=_load_csr(stem, "rp"), R_u=_load_csr(stem, "ru"),
                   m_plus=int(meta["m_plus"]), n_coarse=int(meta["n_coarse"]),
                   dim=int(meta["dim"]), snapshot_type=meta["snapshot_type"],
                   grid_hash=meta.get("grid_hash", ""))


# --- datasets ---------------------------------------------------------------


def save_datasets(stem, datasets, extra=None):
    """Per-component training sets sharing one input block."""
    stem = str(stem)
    first = datasets[0]
    meta = {
        "n_components": len(datasets),
        "seed": first.seed,
        "provenance": first.provenance,
        **(extra or {}),
    }
    write_array(stem + ".x.pbm", first.x, meta)
    write_array(stem + ".x_lo.pbm", first.x_transform.lo)
    write_array(stem + ".x_hi.pbm", first.x_transform.hi)
    for d in datasets:
        c = d.component
        write_array(f"{stem}.q{c}.pbm", d.q)
        write_array(f"{stem}.q{c}_lo.pbm", d.q_transform.lo)
        write_array(f"{stem}.q{c}_hi.pbm", d.q_transform.hi)


def load_datasets(stem):
    stem = str(stem)
    x, meta = read_array(stem + ".x.pbm")
    x_lo, _ = read_array(stem + ".x_lo.pbm")
    x_hi, _ = read_array(stem + ".x_hi.pbm")
    x_tr = ScalingTransform(lo=x_lo, hi=x_hi)
    out = []
    for c in range(int(meta["n_components"])):
        q, _ = read_array(f"{stem}.q{c}.pbm")
        q_lo, _ = read_array(f"{stem}.q{c}_lo.pbm")
        q_hi, _ = read_array(f"{stem}.q{c}_hi.pbm")
        out.append(Dataset(x=x, q=q, x_transform=x_tr,
                           q_transform=ScalingTransform(lo=q_lo, hi=q_hi),
                           component=c, seed=int(meta["seed"]),
                           provenance=meta["provenance"]))
    return out


# --- trained networks -------------------------------------------------------


def save_surrogates(stem, surrogates, extra=None):
    stem = str(stem)
    for s in surrogates:
        c = s.component
        spec = s.model.spec
        params = s.model.parameters()
        meta = {
            "input_shape": list(spec.input_shape),
            "conv_channels": list(spec.conv_channels),
            "dense_widths": list(spec.dense_widths),
            "n_outputs": spec.n_outputs,
            "dropout": spec.dropout,
            "n_params": len(params),
            "n_components": len(surrogates),
            "history": [float(h) for h in s.model.history],
            **(extra or {}),
        }
        for k, p in enumerate(params):
            write_array(f"{stem}.c{c}_p{k}.pbm", p, meta if k == 0 else None)
        write_array(f"{stem}.c{c}_xlo.pbm", s.x_transform.lo)
        write_array(f"{stem}.c{c}_xhi.pbm", s.x_transform.hi)
        write_array(f"{stem}.c{c}_qlo.pbm", s.q_transform.lo)
        write_array(f"{stem}.c{c}_qhi.pbm", s.q_transform.hi)


def load_surrogates(stem):
    stem = str(stem)
    _, meta0 = read_array(stem + ".c0_p0.pbm")
    out = []
    for c in range(int(meta0["n_components"])):
        _, meta = read_array(f"{stem}.c{c}_p0.pbm")
        spec = NnSpec(input_shape=tuple(meta["input_shape"]),
                      conv_channels=tuple(meta["conv_channels"]),
                      dense_widths=tuple(meta["dense_widths"]),
                      n_outputs=int(meta["n_outputs"]),
                      dropout=float(meta["dropout"]))
        model = build_model(spec, seed=0)
        params = model.parameters()
        if len(params) != int(meta["n_params"]):
            raise ConfigError(f"{stem}: parameter count mismatch for component {c}")
        for k, p in enumerate(params):
            arr, _ = read_array(f"{stem}.c{c}_p{k}.pbm")
            if arr.shape != p.shape:
                raise ConfigError(
                    f"{stem}.c{c}_p{k}.pbm: shape {arr.shape} does not match spec {p.shape}"
                )
            p[...] = arr
        model.history = list(meta.get("history", []))
        x_lo, _ = read_array(f"{stem}.c{c}_xlo.pbm")
        x_hi, _ = read_array(f"{stem}.c{c}_xhi.pbm")
        q_lo, _ = read_array(f"{stem}.c{c}_qlo.pbm")
        q_hi, _ = read_array(f"{stem}.c{c}_qhi.pbm")
        out.append(SurrogateModel(model=model,
                                  x_transform=ScalingTransform(lo=x_lo, hi=x_hi),
                                  q_transform=ScalingTransform(lo=q_lo, hi=q_hi),
                                  component=c))
    return out
