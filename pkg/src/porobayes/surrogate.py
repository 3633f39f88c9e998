"""Convolutional surrogate for the surface displacement observable.

One small network per displacement component maps the elementwise porosity
array to that component's surface trace.  Layers (convolution with 3-wide
kernels and same padding, 2-wide max pooling, rectifier, dense, dropout) and
the Adam optimizer are implemented directly on numpy arrays so every gradient
can be validated against central finite differences.

Training labels come from the multiscale solver; a trained set of per
component networks acts as a drop-in first-stage evaluator for the two-stage
sampler at a per-proposal cost that is just a handful of array contractions.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .biot_fem import assemble_fine, element_average
from .errors import NumericalError
from .gmsfem import coarse_observable
from .mesh import surface_nodes
from .randfield import material_fields, porosity_from_field, realize_field

__all__ = [
    "NnSpec",
    "TrainConfig",
    "NnModel",
    "ScalingTransform",
    "Dataset",
    "SurrogateModel",
    "build_model",
    "forward",
    "loss_and_grads",
    "train",
    "metrics",
    "fit_transform",
    "porosity_input",
    "generate_dataset",
    "predict_observable",
    "ml_forward",
]

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1.0e-8


@dataclass
class NnSpec:
    """Architecture description.

    Convolution stages use 3-wide kernels per axis with same padding and are
    each followed by a rectifier and a 2-wide max pool; dense hidden layers
    use a rectifier followed by dropout; the output layer is linear.

    Attributes
    ----------
    input_shape : tuple of int
        Spatial shape of the porosity array (no channel axis).
    conv_channels : tuple of int
        Output channels of each convolution stage.
    dense_widths : tuple of int
        Hidden dense widths between flatten and output.
    n_outputs : int
        Surface component length.
    dropout : float
        Drop probability in [0, 1).
    """

    input_shape: tuple
    conv_channels: tuple = (8, 16)
    dense_widths: tuple = (128,)
    n_outputs: int = 1
    dropout: float = 0.10

    def __post_init__(self):
        self.input_shape = tuple(int(n) for n in self.input_shape)
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.dense_widths = tuple(int(w) for w in self.dense_widths)
        if len(self.input_shape) not in (2, 3):
            raise ValueError("input must be a 2D or 3D array")
        if any(n <= 0 for n in self.input_shape):
            raise ValueError("input shape entries must be positive")
        if any(c <= 0 for c in self.conv_channels) or any(w <= 0 for w in self.dense_widths):
            raise ValueError("channel counts and dense widths must be positive")
        if self.n_outputs <= 0:
            raise ValueError("n_outputs must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        div = 2 ** len(self.conv_channels)
        for n in self.input_shape:
            if n % div:
                raise ValueError(
                    f"spatial size {n} not divisible by {div} as the pooling stages require"
                )

    @property
    def dim(self):
        return len(self.input_shape)

    @property
    def flat_size(self):
        cells = 1
        for n in self.input_shape:
            cells *= n // 2 ** len(self.conv_channels)
        ch = self.conv_channels[-1] if self.conv_channels else 1
        return ch * cells


@dataclass
class TrainConfig:
    """Mini-batch Adam settings; first/second moment decay and the
    denominator offset are fixed at (0.9, 0.999, 1e-8)."""

    epochs: int = 500
    lr: float = 1.0e-3
    batch_size: int = 32
    seed: int = 0
    val_split: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.lr <= 0 or self.batch_size <= 0:
            raise ValueError("lr and batch_size must be positive")
        if not 0.0 <= self.val_split < 1.0:
            raise ValueError("val_split must lie in [0, 1)")


# --- layers -----------------------------------------------------------------
#
# Each layer implements forward(x, train, rng) and backward(grad) -> grad_in;
# backward also fills self.grads aligned with self.params.


class _Conv:
    """Same-padded convolution, 3-wide kernel per axis."""

    def __init__(self, dim, c_in, c_out, rng):
        scale = math.sqrt(2.0 / (c_in * 3**dim))
        self.dim = dim
        w = rng.standard_normal((c_out, c_in) + (3,) * dim) * scale
        self.params = [w, np.zeros(c_out)]
        self.grads = [None, None]

    def _windows(self, x):
        pad = [(0, 0), (0, 0)] + [(1, 1)] * self.dim
        xp = np.pad(x, pad)
        axes = tuple(range(2, 2 + self.dim))
        return np.lib.stride_tricks.sliding_window_view(xp, (3,) * self.dim, axis=axes)

    def forward(self, x, train, rng):
        self._x = x
        win = self._windows(x)
        if self.dim == 2:
            y = np.einsum("bchwij,fcij->bfhw", win, self.params[0], optimize=True)
            return y + self.params[1][None, :, None, None]
        y = np.einsum("bcdhwijk,fcijk->bfdhw", win, self.params[0], optimize=True)
        return y + self.params[1][None, :, None, None, None]

    def backward(self, grad):
        win = self._windows(self._x)
        w = self.params[0]
        flip = w[(slice(None), slice(None)) + (slice(None, None, -1),) * self.dim]
        pad = [(0, 0), (0, 0)] + [(1, 1)] * self.dim
        gp = np.pad(grad, pad)
        axes = tuple(range(2, 2 + self.dim))
        gwin = np.lib.stride_tricks.sliding_window_view(gp, (3,) * self.dim, axis=axes)
        if self.dim == 2:
            self.grads[0] = np.einsum("bchwij,bfhw->fcij", win, grad, optimize=True)
            self.grads[1] = grad.sum(axis=(0, 2, 3))
            return np.einsum("bfhwij,fcij->bchw", gwin, flip, optimize=True)
        self.grads[0] = np.einsum("bcdhwijk,bfdhw->fcijk", win, grad, optimize=True)
        self.grads[1] = grad.sum(axis=(0, 2, 3, 4))
        return np.einsum("bfdhwijk,fcijk->bcdhw", gwin, flip, optimize=True)


class _Relu:
    params = ()
    grads = ()

    def forward(self, x, train, rng):
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return grad * self._mask


class _MaxPool:
    """2-wide max pool per axis; gradient routes to the first maximum."""

    params = ()
    grads = ()

    def __init__(self, dim):
        self.dim = dim

    def forward(self, x, train, rng):
        b, c = x.shape[:2]
        sp = x.shape[2:]
        half = tuple(n // 2 for n in sp)
        if self.dim == 2:
            win = x.reshape(b, c, half[0], 2, half[1], 2).transpose(0, 1, 2, 4, 3, 5)
        else:
            win = x.reshape(b, c, half[0], 2, half[1], 2, half[2], 2)
            win = win.transpose(0, 1, 2, 4, 6, 3, 5, 7)
        win = win.reshape(win.shape[: 2 + self.dim] + (-1,))
        self._idx = np.argmax(win, axis=-1)
        self._shape = x.shape
        return np.take_along_axis(win, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        b, c = self._shape[:2]
        sp = self._shape[2:]
        half = tuple(n // 2 for n in sp)
        flat = np.zeros(grad.shape + (2**self.dim,))
        np.put_along_axis(flat, self._idx[..., None], grad[..., None], axis=-1)
        if self.dim == 2:
            out = flat.reshape(b, c, half[0], half[1], 2, 2).transpose(0, 1, 2, 4, 3, 5)
        else:
            out = flat.reshape(b, c, half[0], half[1], half[2], 2, 2, 2)
            out = out.transpose(0, 1, 2, 5, 3, 6, 4, 7)
        return out.reshape(self._shape)


class _Flatten:
    params = ()
    grads = ()

    def forward(self, x, train, rng):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class _Dense:
    def __init__(self, n_in, n_out, rng, he=True):
        scale = math.sqrt((2.0 if he else 1.0) / n_in)
        self.params = [rng.standard_normal((n_in, n_out)) * scale, np.zeros(n_out)]
        self.grads = [None, None]

    def forward(self, x, train, rng):
        self._x = x
        return x @ self.params[0] + self.params[1]

    def backward(self, grad):
        self.grads[0] = self._x.T @ grad
        self.grads[1] = grad.sum(axis=0)
        return grad @ self.params[0].T


class _Dropout:
    """Inverted dropout; identity at inference time."""

    params = ()
    grads = ()

    def __init__(self, rate):
        self.rate = rate

    def forward(self, x, train, rng):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = (rng.uniform(size=x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


@dataclass
class NnModel:
    """Layer stack with its architecture echo and training history."""

    spec: NnSpec
    layers: list = field(repr=False)
    history: list = field(default_factory=list)

    def parameters(self):
        """Flat list of parameter arrays in layer order (views, mutable)."""
        return [p for layer in self.layers for p in layer.params]


def build_model(spec, seed=0):
    """Initialize a network for ``spec`` with seeded He/Glorot weights."""
    rng = np.random.default_rng(seed)
    dim = spec.dim
    layers = []
    c_prev = 1
    for c in spec.conv_channels:
        layers += [_Conv(dim, c_prev, c, rng), _Relu(), _MaxPool(dim)]
        c_prev = c
    layers.append(_Flatten())
    n_prev = spec.flat_size
    for w in spec.dense_widths:
        layers += [_Dense(n_prev, w, rng), _Relu(), _Dropout(spec.dropout)]
        n_prev = w
    layers.append(_Dense(n_prev, spec.n_outputs, rng, he=False))
    return NnModel(spec=spec, layers=layers)


def forward(model, X, train=False, rng=None):
    """Run the network on a batch.

    Parameters
    ----------
    X : (batch, *input_shape) array (the channel axis is added here).
    train : bool
        Enables dropout; requires ``rng``.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[1:] != model.spec.input_shape:
        raise ValueError(f"input shape {X.shape[1:]} does not match {model.spec.input_shape}")
    if train and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout masks")
    y = X[:, None, ...]
    for layer in model.layers:
        y = layer.forward(y, train, rng)
    return y


def loss_and_grads(model, X, T, rng=None, train=True):
    """Mean squared error over the batch and its parameter gradients.

    Returns
    -------
    loss : float
    grads : list of arrays aligned with ``model.parameters()``.
    """
    T = np.asarray(T, dtype=float)
    Y = forward(model, X, train=train, rng=rng)
    if Y.shape != T.shape:
        raise ValueError(f"target shape {T.shape} does not match output {Y.shape}")
    diff = Y - T
    loss = float(np.mean(diff**2))
    grad = 2.0 * diff / diff.size
    for layer in reversed(model.layers):
        grad = layer.backward(grad)
    return loss, [g for layer in model.layers for g in layer.grads]


def train(model, X, T, config):
    """Mini-batch Adam on mean squared error; mutates ``model`` in place.

    Appends one entry per epoch (mean training-batch loss) to
    ``model.history`` and returns ``(history, val_history)``; the validation
    list is empty when ``val_split`` is zero.

    Raises
    ------
    NumericalError
        If a batch loss stops being finite; the message carries the epoch.
    """
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)

    n_val = int(round(config.val_split * n))
    if n_val:
        perm = rng.permutation(n)
        val_idx, tr_idx = perm[:n_val], perm[n_val:]
    else:
        val_idx, tr_idx = np.array([], dtype=int), np.arange(n)
    if tr_idx.size == 0:
        raise ValueError("validation split leaves no training samples")

    params = model.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    t = 0
    history, val_history = [], []
    for epoch in range(config.epochs):
        order = tr_idx[rng.permutation(tr_idx.size)]
        losses = []
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(model, X[batch], T[batch], rng=rng, train=True)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            losses.append(loss)
            t += 1
            c1 = 1.0 - _ADAM_BETA1**t
            c2 = 1.0 - _ADAM_BETA2**t
            for p, g, mi, vi in zip(params, grads, m, v):
                mi += (1.0 - _ADAM_BETA1) * (g - mi)
                vi += (1.0 - _ADAM_BETA2) * (g * g - vi)
                p -= config.lr * (mi / c1) / (np.sqrt(vi / c2) + _ADAM_EPS)
        history.append(float(np.mean(losses)))
        if n_val:
            Yv = forward(model, X[val_idx], train=False)
            val_history.append(float(np.mean((Yv - T[val_idx]) ** 2)))
    model.history.extend(history)
    return history, val_history


def metrics(predictions, references):
    """Summed error metrics over a prediction set.

    Returns
    -------
    (mse, rmse, mae) : floats
        mse = sum of squared entry errors; rmse = 100 sqrt(mse / sum Q^2);
        mae = 100 sum|error| / sum|Q|.
    """
    P = np.asarray(predictions, dtype=float).ravel()
    Q = np.asarray(references, dtype=float).ravel()
    if P.shape != Q.shape:
        raise ValueError("prediction and reference lengths differ")
    qq = float(Q @ Q)
    qa = float(np.abs(Q).sum())
    if qq <= 0.0 or qa <= 0.0:
        raise ValueError("reference norm is zero; relative metrics undefined")
    d = P - Q
    mse = float(d @ d)
    rmse = 100.0 * math.sqrt(mse / qq)
    mae = 100.0 * float(np.abs(d).sum()) / qa
    return mse, rmse, mae


# --- data pipeline ----------------------------------------------------------


@dataclass
class ScalingTransform:
    """Per-feature min-max map onto [0, 1]; constant features map to 0."""

    lo: np.ndarray = field(repr=False)
    hi: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape:
            raise ValueError("lo and hi shapes differ")
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ValueError("scaling bounds must be finite")
        if np.any(self.hi < self.lo):
            raise ValueError("hi must be >= lo")
        self._span = self.hi - self.lo

    def scale(self, A):
        A = np.asarray(A, dtype=float)
        out = np.zeros_like(A)
        np.divide(A - self.lo, self._span, out=out, where=self._span > 0)
        return out

    def unscale(self, A):
        return np.asarray(A, dtype=float) * self._span + self.lo


def fit_transform(samples):
    """Entrywise min/max over the leading sample axis."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim < 2 or samples.shape[0] == 0:
        raise ValueError("need a nonempty (n_samples, ...) array")
    return ScalingTransform(lo=samples.min(axis=0), hi=samples.max(axis=0))


@dataclass
class Dataset:
    """Scaled training pairs for one displacement component.

    ``x`` and ``q`` hold the rescaled arrays (all entries in [0, 1]); the two
    transforms recover physical values.
    """

    x: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    x_transform: ScalingTransform = field(repr=False)
    q_transform: ScalingTransform = field(repr=False)
    component: int = 0
    seed: int = 0
    provenance: str = "ms"

    def __post_init__(self):
        if self.x.shape[0] != self.q.shape[0]:
            raise ValueError("sample counts of x and q differ")

    @property
    def n_samples(self):
        return self.x.shape[0]


def porosity_input(mesh, phi):
    """Elementwise-mean porosity reshaped to the spatial element grid.

    Axis order is (z,) y, x so the fastest-varying fine-grid direction is the
    last array axis.
    """
    avg = element_average(mesh, phi)
    return avg.reshape(tuple(mesh.spec.fine_cells[::-1]))


def generate_dataset(mesh, kle, law, params, bc, ts, basis, n_samples, seed=0):
    """Sample coefficient vectors and label them with the multiscale solver.

    Returns one ``Dataset`` per displacement component; all share the input
    arrays and input transform, while output transforms are per component.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    surf = surface_nodes(mesh, bc.surface)
    dim = mesh.dim
    n_surf = surf.size
    Xs = np.empty((n_samples,) + tuple(mesh.spec.fine_cells[::-1]))
    Fs = np.empty((n_samples, dim * n_surf))
    for r in range(n_samples):
        theta = rng.standard_normal(kle.spec.L)
        Y = realize_field(kle, theta)
        phi = porosity_from_field(Y, law)
        fields = material_fields(phi, law)
        system = assemble_fine(mesh, fields, params, bc, keep_raw=False)
        Xs[r] = porosity_input(mesh, phi)
        Fs[r] = coarse_observable(system, basis, ts, surf)
    x_tr = fit_transform(Xs)
    xs = x_tr.scale(Xs)
    out = []
    for c in range(dim):
        Qc = Fs[:, c * n_surf:(c + 1) * n_surf]
        q_tr = fit_transform(Qc)
        out.append(Dataset(x=xs, q=q_tr.scale(Qc), x_transform=x_tr,
                           q_transform=q_tr, component=c, seed=seed))
    return out


@dataclass
class SurrogateModel:
    """Trained network plus the transforms that tie it to physical units."""

    model: NnModel
    x_transform: ScalingTransform = field(repr=False)
    q_transform: ScalingTransform = field(repr=False)
    component: int = 0


def predict_observable(surrogates, theta, mesh, kle, law):
    """Observable prediction without a PDE solve.

    ``surrogates`` must be ordered by component; the result uses the same
    layout as the solver surface traces (x block, then y, then z).
    """
    if len(surrogates) != mesh.dim:
        raise ValueError(f"need {mesh.dim} component models, got {len(surrogates)}")
    Y = realize_field(kle, theta)
    phi = porosity_from_field(Y, law)
    X = porosity_input(mesh, phi)
    parts = []
    for c, s in enumerate(surrogates):
        if s.component != c:
            raise ValueError("surrogates are not in component order")
        q = forward(s.model, s.x_transform.scale(X)[None, ...], train=False)[0]
        parts.append(s.q_transform.unscale(q))
    return np.concatenate(parts)


def ml_forward(surrogates, mesh, kle, law):
    """theta -> predicted surface trace; first-stage evaluator factory."""

    def fwd(theta):
        return predict_observable(surrogates, theta, mesh, kle, law)

    return fwd
