"""Dense float64 kernel: matmul, activations, softmax, gradient checking, RNG.

Matrices throughout the package are plain 2-D C-contiguous numpy arrays of
64-bit floats (row-major).  numpy supplies the storage and the BLAS-backed
product; this module owns the contracts: shape validation, finiteness
guarantees, and the central-difference oracle used to audit every analytic
gradient in the model.

Randomness comes from :class:`RngStream`, a thin wrapper over numpy's PCG64
generator.  PCG64 is a fixed, platform-independent algorithm, so a given
seed yields the same draw sequence on every machine; that is what makes
experiment replays bit-identical.
"""

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

ACTIVATION_KINDS = ("relu", "tanh", "sigmoid")


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D C-contiguous float64 array, validating finiteness."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected 2 dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: contains non-finite entries")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape and finiteness checks."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError(f"matmul produced non-finite entries ({a.shape} x {b.shape})")
    return out


def activation(kind: str, x: np.ndarray):
    """Elementwise activation value and derivative evaluated at ``x``.

    The relu derivative at exactly 0 is defined as 0 (convention).
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        value = np.maximum(x, 0.0)
        deriv = (x > 0.0).astype(np.float64)
    elif kind == "tanh":
        value = np.tanh(x)
        deriv = 1.0 - value * value
    elif kind == "sigmoid":
        value = 1.0 / (1.0 + np.exp(-x))
        deriv = value * (1.0 - value)
    else:
        raise ConfigError(f"unknown activation kind {kind!r} (choose from {ACTIVATION_KINDS})")
    return value, deriv


def softmax_with_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-scaled softmax over the last axis, with max-subtraction.

    ``temperature == 1`` reduces to the standard softmax.
    """
    if temperature <= 0.0:
        raise ConfigError(f"softmax temperature must be positive, got {temperature}")
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def finite_difference_check(loss_and_grad, params, epsilon: float = 1e-5,
                            denom_floor: float = 1e-3) -> float:
    """Audit analytic gradients against central finite differences.

    ``loss_and_grad()`` evaluates the objective at the *current* parameter
    values and returns ``(loss, grads)`` with ``grads`` aligned to
    ``params``.  Each coordinate is perturbed in place by +/- ``epsilon``
    and the central difference is compared to the analytic entry.  Returns
    the worst relative error, with the denominator floored at
    ``denom_floor`` so coordinates whose true gradient is ~0 are measured
    on an absolute scale instead of blowing up.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ConfigError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    base_loss, grads = loss_and_grad()
    if not np.isfinite(base_loss):
        raise NumericError("loss is non-finite at the base point")
    worst = 0.0
    for pi, (theta, g) in enumerate(zip(params, grads)):
        flat_t = theta.reshape(-1)
        flat_g = np.asarray(g, dtype=np.float64).reshape(-1)
        for j in range(flat_t.size):
            orig = flat_t[j]
            flat_t[j] = orig + epsilon
            lp, _ = loss_and_grad()
            flat_t[j] = orig - epsilon
            lm, _ = loss_and_grad()
            flat_t[j] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError(f"non-finite loss while perturbing param {pi}, coordinate {j}")
            fd = (lp - lm) / (2.0 * epsilon)
            denom = max(abs(fd), abs(flat_g[j]), denom_floor)
            err = abs(fd - flat_g[j]) / denom
            if err > worst:
                worst = err
    return worst


class RngStream:
    """Seedable deterministic random stream.

    Backed by numpy's PCG64 bit generator seeded through a SeedSequence, so
    identical seeds produce identical sequences on every platform.
    ``child(key)`` derives an independent stream that depends only on the
    (seed, key-path) pair, never on how many draws the parent has made;
    experiment code uses fixed integer keys per purpose (data generation,
    noise injection, weight init, shuffling, ...).
    """

    algorithm = "pcg64"

    def __init__(self, seed: int, _spawn_key: tuple = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in _spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, key: int) -> "RngStream":
        return RngStream(self.seed, self.spawn_key + (int(key),))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self.generator.uniform(low, high, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self.generator.normal(loc, scale, size=size)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={self.spawn_key})"
