"""Dense tensor primitives with explicit forward and backward passes.

Every forward is pure. Every backward takes the upstream gradient (plus
whatever the forward cached) and returns gradients for each input, so a
scalar loss can be differentiated end to end without an autodiff graph.
Outputs are checked for NaN/Inf on every forward.

Compute dtype follows the inputs: float32 for training, float64 for
gradient-check mode.
"""

import numpy as np

from ..errors import ConfigError, DataError, NonFiniteError, ShapeError

LAYER_NORM_EPS = 1e-12
IGNORE_ID = -100

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def ensure_finite(op: str, arr) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: produced non-finite values")
    return arr


# --- matmul ---------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b; either b is a plain matrix or both carry identical batch dims."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands need >= 2 dims, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: mismatched batch dims {a.shape} and {b.shape}")
    return ensure_finite("matmul", a @ b)


def matmul_backward(dout: np.ndarray, a: np.ndarray, b: np.ndarray):
    if b.ndim == 2:
        da = dout @ b.T
        db = a.reshape(-1, a.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    else:
        da = dout @ b.swapaxes(-1, -2)
        db = a.swapaxes(-1, -2) @ dout
    return da, db


# --- bias -----------------------------------------------------------------

def add_bias(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    if b.shape != (x.shape[-1],):
        raise ShapeError(f"add_bias: bias {b.shape} does not fit input {x.shape}")
    return ensure_finite("add_bias", x + b)


def add_bias_backward(dout: np.ndarray):
    return dout, dout.reshape(-1, dout.shape[-1]).sum(axis=0)


# --- softmax ---------------------------------------------------------------

def softmax(x: np.ndarray) -> np.ndarray:
    """Row softmax over the last axis. -inf entries come out exactly 0."""
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=-1, keepdims=True)
    return ensure_finite("softmax", out)


def softmax_backward(dout: np.ndarray, probs: np.ndarray) -> np.ndarray:
    dot = np.sum(dout * probs, axis=-1, keepdims=True)
    return probs * (dout - dot)


# --- layer norm -------------------------------------------------------------

def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LAYER_NORM_EPS):
    """Normalize the last axis to zero mean / unit variance, then scale-shift.

    Returns (out, cache) where cache feeds layer_norm_backward.
    """
    if eps <= 0:
        raise ConfigError(f"layer_norm: eps must be > 0, got {eps}")
    mu = x.mean(axis=-1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = d * inv
    out = xhat * gain + bias
    return ensure_finite("layer_norm", out), (xhat, inv, gain)


def layer_norm_backward(dout: np.ndarray, cache):
    xhat, inv, gain = cache
    h = xhat.shape[-1]
    dxhat = dout * gain
    dgain = (dout * xhat).reshape(-1, h).sum(axis=0)
    dbias = dout.reshape(-1, h).sum(axis=0)
    s1 = dxhat.sum(axis=-1, keepdims=True)
    s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
    dx = inv * (dxhat - s1 / h - xhat * s2 / h)
    return dx, dgain, dbias


# --- activations ------------------------------------------------------------

def gelu(x: np.ndarray) -> np.ndarray:
    """Gaussian error linear unit, tanh form with the 0.044715 cubic term."""
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    return ensure_finite("gelu", 0.5 * x * (1.0 + np.tanh(inner)))


def gelu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(inner)
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dout * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def tanh(x: np.ndarray) -> np.ndarray:
    return ensure_finite("tanh", np.tanh(x))


def tanh_backward(dout: np.ndarray, out: np.ndarray) -> np.ndarray:
    return dout * (1.0 - out * out)


# --- embeddings -------------------------------------------------------------

def embedding_lookup(table: np.ndarray, ids) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_lookup: ids outside [0, {table.shape[0]}) for table {table.shape}"
        )
    return ensure_finite("embedding_lookup", table[ids])


def embedding_lookup_backward(dout: np.ndarray, ids, n_rows: int) -> np.ndarray:
    dtable = np.zeros((n_rows, dout.shape[-1]), dtype=dout.dtype)
    np.add.at(dtable, np.asarray(ids).reshape(-1), dout.reshape(-1, dout.shape[-1]))
    return dtable


# --- cross entropy ----------------------------------------------------------

def cross_entropy(logits: np.ndarray, targets, ignore_id: int = IGNORE_ID):
    """Mean negative log-likelihood over positions whose target != ignore_id.

    Ignored positions contribute zero loss and receive exactly zero gradient.
    Returns (loss, cache).
    """
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(
            f"cross_entropy: logits {logits.shape} do not match targets {targets.shape}"
        )
    n_class = logits.shape[-1]
    flat = logits.reshape(-1, n_class)
    tgt = targets.reshape(-1)
    rows = np.nonzero(tgt != ignore_id)[0]
    n_valid = rows.size
    if n_valid == 0:
        raise DataError("cross_entropy: every target is ignore_id")
    picked = tgt[rows]
    if picked.min() < 0 or picked.max() >= n_class:
        raise ShapeError(f"cross_entropy: target id outside [0, {n_class})")
    m = flat.max(axis=-1, keepdims=True)
    sh = flat - m
    lse = np.log(np.exp(sh).sum(axis=-1, keepdims=True))
    logp = sh - lse
    loss = -logp[rows, picked].sum() / n_valid
    ensure_finite("cross_entropy", loss)
    cache = (logp, picked, rows, n_valid, logits.shape)
    return float(loss), cache


def cross_entropy_backward(cache) -> np.ndarray:
    logp, picked, rows, n_valid, shape = cache
    d = np.zeros_like(logp)
    d[rows] = np.exp(logp[rows])
    d[rows, picked] -= 1.0
    d[rows] /= n_valid
    return d.reshape(shape)


# --- dropout (internal helper, inverted scaling) ----------------------------

def dropout(x: np.ndarray, p: float, rng: np.random.Generator):
    """Returns (out, keep) where keep already carries the 1/(1-p) scaling."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def dropout_backward(dout: np.ndarray, keep: np.ndarray) -> np.ndarray:
    return dout * keep
