"""Dual-head MLP with hand-derived backprop, SGD+momentum, cosine schedule.

Architecture: a shared relu trunk feeding two heads.  The classification
head is a single linear layer read out through a temperature-scaled
softmax; raising the temperature slows that head's convergence relative to
the detection head.  The detection head is a three-layer tanh MLP whose
final output is remapped from (-1, 1) to (0, 1) via (t+1)/2, giving one
bit-probability per codeword bit; the remap mirrors the {-1,1} -> {0,1}
remap of the codebook targets so binary cross-entropy is well typed.

During inference only the classification head is consulted
(:meth:`DualHeadNet.classify`).

Checkpoint format (documented external interface): a flat binary file with
magic ``NLABCKP1``, a shape table (little-endian uint32: array count, then
ndim + dims per array), then each array's row-major float64 payload in
parameter order; a JSON sidecar ``<path>.json`` carries config, epoch, seed
and the layer layout needed to rebuild the network.
"""

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ConfigError, DataIOError, EncodingError, LabelError,
                     NumericError, ShapeError)
from .numeric import RngStream, activation, matmul, softmax_with_temperature

# Detection outputs are kept inside [Z_CLAMP, 1 - Z_CLAMP]; this doubles as
# the log clamp for the binary cross-entropy terms.
Z_CLAMP = 1e-12

CHECKPOINT_MAGIC = b"NLABCKP1"


@dataclass
class TrainConfig:
    """Optimization and architecture knobs for one training run.

    ``code_bits=None`` means "derive from the class count" (smallest power
    of two >= max(16, 2C)).  ``bce_weight`` scales the detection-head loss
    inside the combined objective (default 1: both heads weighted equally).
    """

    lr0: float = 0.1
    lr_min: float = 5e-4
    momentum: float = 0.9
    weight_decay: float = 3e-3
    batch_size: int = 128
    epochs: int = 60
    warmup_epochs: int = 9
    temperature: float = 2.0
    hidden_width: int = 64
    hidden_layers: int = 2
    code_bits: int | None = None
    bce_weight: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if not (0.0 < self.lr_min <= self.lr0):
            raise ConfigError(f"require 0 < lr_min <= lr0, got lr_min={self.lr_min}, lr0={self.lr0}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not (0 <= self.warmup_epochs < self.epochs):
            raise ConfigError(
                f"warmup_epochs must lie in [0, epochs), got {self.warmup_epochs} vs {self.epochs}")
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ConfigError("hidden_width and hidden_layers must be >= 1")
        if self.code_bits is not None and self.code_bits < 2:
            raise ConfigError(f"code_bits must be >= 2, got {self.code_bits}")
        if self.bce_weight < 0.0:
            raise ConfigError(f"bce_weight must be >= 0, got {self.bce_weight}")


@dataclass
class Layer:
    w: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)


@dataclass
class ForwardResult:
    """Everything forward() computed, cached for one backward pass."""

    probs: np.ndarray          # (n, C)
    preds: np.ndarray          # (n,) argmax class indices
    z: np.ndarray              # (n, K) detection outputs in (0, 1)
    logits: np.ndarray         # (n, C)
    trunk_out: np.ndarray      # (n, hidden)
    trunk_inputs: list = field(default_factory=list)
    trunk_derivs: list = field(default_factory=list)
    det_inputs: list = field(default_factory=list)
    det_derivs: list = field(default_factory=list)  # tanh derivs of layers 0, 1


class DualHeadNet:
    """Shared relu trunk + linear classifier head + 3-layer tanh detection head."""

    def __init__(self, trunk, classifier, detection, temperature):
        self.trunk = trunk
        self.classifier = classifier
        self.detection = detection
        self.temperature = float(temperature)

    @classmethod
    def create(cls, input_dim: int, num_classes: int, code_bits: int,
               hidden_width: int, hidden_layers: int, temperature: float,
               rng: RngStream) -> "DualHeadNet":
        """Seeded initialization: He-scaled normals for relu layers,
        Xavier-scaled for tanh/linear layers, zero biases."""
        def layer(fan_in, fan_out, gain):
            w = rng.normal(0.0, math.sqrt(gain / fan_in), size=(fan_in, fan_out))
            return Layer(np.ascontiguousarray(w), np.zeros(fan_out))

        trunk = []
        width_in = input_dim
        for _ in range(hidden_layers):
            trunk.append(layer(width_in, hidden_width, gain=2.0))
            width_in = hidden_width
        classifier = layer(hidden_width, num_classes, gain=1.0)
        detection = [
            layer(hidden_width, hidden_width, gain=1.0),
            layer(hidden_width, hidden_width, gain=1.0),
            layer(hidden_width, code_bits, gain=1.0),
        ]
        return cls(trunk, classifier, detection, temperature)

    @property
    def input_dim(self) -> int:
        return self.trunk[0].w.shape[0]

    @property
    def num_classes(self) -> int:
        return self.classifier.w.shape[1]

    @property
    def code_bits(self) -> int:
        return self.detection[-1].w.shape[1]

    def parameters(self) -> list:
        """All parameter arrays in a fixed order (trunk, classifier, detection)."""
        out = []
        for lay in self.trunk:
            out.extend((lay.w, lay.b))
        out.extend((self.classifier.w, self.classifier.b))
        for lay in self.detection:
            out.extend((lay.w, lay.b))
        return out

    def layout(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "code_bits": self.code_bits,
            "hidden_width": self.trunk[0].w.shape[1],
            "hidden_layers": len(self.trunk),
            "temperature": self.temperature,
        }

    def clone(self) -> "DualHeadNet":
        cp = lambda lay: Layer(lay.w.copy(), lay.b.copy())
        return DualHeadNet([cp(l) for l in self.trunk], cp(self.classifier),
                           [cp(l) for l in self.detection], self.temperature)

    def _trunk_forward(self, x, cache=None):
        a = np.asarray(x, dtype=np.float64)
        if a.ndim != 2:
            raise ShapeError(f"batch must be 2-D, got shape {a.shape}")
        if a.shape[1] != self.input_dim:
            raise ShapeError(f"batch width {a.shape[1]} != trunk input width {self.input_dim}")
        for lay in self.trunk:
            pre = matmul(a, lay.w) + lay.b
            val, deriv = activation("relu", pre)
            if cache is not None:
                cache.trunk_inputs.append(a)
                cache.trunk_derivs.append(deriv)
            a = val
        return a

    def forward(self, x) -> ForwardResult:
        """Full forward pass: class probabilities through the temperature
        softmax, argmax predictions (lowest-index tie-break), and detection
        embeddings z strictly inside (0, 1)."""
        res = ForwardResult(probs=None, preds=None, z=None, logits=None, trunk_out=None)
        a = self._trunk_forward(x, cache=res)
        res.trunk_out = a
        res.logits = matmul(a, self.classifier.w) + self.classifier.b
        res.probs = softmax_with_temperature(res.logits, self.temperature)
        res.preds = np.argmax(res.probs, axis=1)
        da = a
        for i, lay in enumerate(self.detection):
            pre = matmul(da, lay.w) + lay.b
            val, deriv = activation("tanh", pre)
            res.det_inputs.append(da)
            if i < len(self.detection) - 1:
                res.det_derivs.append(deriv)
            da = val
        res.z = np.clip((da + 1.0) / 2.0, Z_CLAMP, 1.0 - Z_CLAMP)
        return res

    def classify(self, x):
        """Inference path: classification head only, detection head skipped."""
        a = self._trunk_forward(x)
        logits = matmul(a, self.classifier.w) + self.classifier.b
        probs = softmax_with_temperature(logits, self.temperature)
        return probs, np.argmax(probs, axis=1)

    def backward(self, res: ForwardResult, dlogits: np.ndarray,
                 d_det_pre: np.ndarray) -> list:
        """Backpropagate upstream gradients onto every parameter.

        ``dlogits`` is the loss gradient w.r.t. the classifier logits;
        ``d_det_pre`` w.r.t. the pre-activation of the final detection
        layer.  Returns gradients aligned with :meth:`parameters`.
        """
        gw_c = matmul(res.trunk_out.T, dlogits)
        gb_c = dlogits.sum(axis=0)
        dtrunk = matmul(dlogits, self.classifier.w.T)

        det_grads = []
        d = d_det_pre
        for i in range(len(self.detection) - 1, -1, -1):
            lay = self.detection[i]
            det_grads.append((matmul(res.det_inputs[i].T, d), d.sum(axis=0)))
            back = matmul(d, lay.w.T)
            if i > 0:
                d = back * res.det_derivs[i - 1]
            else:
                dtrunk = dtrunk + back
        det_grads.reverse()

        trunk_grads = []
        d = dtrunk
        for i in range(len(self.trunk) - 1, -1, -1):
            dpre = d * res.trunk_derivs[i]
            trunk_grads.append((matmul(res.trunk_inputs[i].T, dpre), dpre.sum(axis=0)))
            d = matmul(dpre, self.trunk[i].w.T)
        trunk_grads.reverse()

        grads = []
        for gw, gb in trunk_grads:
            grads.extend((gw, gb))
        grads.extend((gw_c, gb_c))
        for gw, gb in det_grads:
            grads.extend((gw, gb))
        return grads


def per_sample_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """-log p[i, y_i] per sample (the small-loss ranking signal)."""
    n, c = probs.shape
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelError(f"label out of range [0, {c})")
    picked = probs[np.arange(n), labels]
    return -np.log(np.maximum(picked, 1e-300))


def classification_loss(probs: np.ndarray, labels: np.ndarray, temperature: float):
    """Mean cross-entropy and its gradient w.r.t. the logits.

    The gradient carries the 1/temperature factor of the scaled softmax.
    """
    n = probs.shape[0]
    if n == 0:
        raise ShapeError("classification_loss on an empty batch")
    ce = per_sample_cross_entropy(probs, labels)
    loss = float(ce.mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), np.asarray(labels)] -= 1.0
    dlogits /= n * temperature
    return loss, dlogits


def decompose_bce(z: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-bit binary cross-entropy terms -[t log z + (1-t) log(1-z)].

    Works on a single sample (1-D) or a batch (2-D, rows = samples).
    ``z`` must already live in [Z_CLAMP, 1 - Z_CLAMP] so the logs are safe.
    """
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if z.shape != t.shape:
        raise ShapeError(f"z shape {z.shape} != target shape {t.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise EncodingError("targets must be 0/1 bit vectors")
    zc = np.clip(z, Z_CLAMP, 1.0 - Z_CLAMP)
    # One fused log; identical to -(t*log(z) + (1-t)*log(1-z)) for 0/1 bits.
    return -np.log(np.where(t == 1.0, zc, 1.0 - zc))


def detection_loss(z: np.ndarray, targets: np.ndarray):
    """Mean binary cross-entropy over bits and samples, plus the gradient
    w.r.t. the final detection layer's pre-activation.

    The derivative accounts for the (tanh+1)/2 remap; entries pinned at the
    clamp boundary get zero gradient, matching the implemented loss exactly.
    """
    if z.ndim != 2:
        raise ShapeError(f"detection_loss expects a 2-D batch, got shape {z.shape}")
    n, k = z.shape
    if n == 0:
        raise ShapeError("detection_loss on an empty batch")
    d = decompose_bce(z, targets)
    loss = float(d.mean())
    interior = (z > Z_CLAMP) & (z < 1.0 - Z_CLAMP)
    d_pre = 2.0 * (z - np.asarray(targets, dtype=np.float64)) * interior / (n * k)
    return loss, d_pre


def losses_and_grads_from_forward(net: DualHeadNet, res: ForwardResult,
                                  labels, targets, bce_weight: float = 1.0,
                                  mask=None):
    """Combined objective (CE + bce_weight * BCE) restricted to the masked
    rows, with full parameter gradients.  ``mask=None`` means all rows."""
    n = res.probs.shape[0]
    if mask is None:
        idx = np.arange(n)
    else:
        idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        raise ShapeError("no samples selected for the update")
    labels = np.asarray(labels)
    targets = np.asarray(targets, dtype=np.float64)
    ce, dlog_sub = classification_loss(res.probs[idx], labels[idx], net.temperature)
    bce, dpre_sub = detection_loss(res.z[idx], targets[idx])
    dlogits = np.zeros_like(res.logits)
    dlogits[idx] = dlog_sub
    d_det = np.zeros_like(res.z)
    d_det[idx] = bce_weight * dpre_sub
    grads = net.backward(res, dlogits, d_det)
    return ce, bce, grads


def combined_loss_and_grads(net: DualHeadNet, x, labels, targets,
                            bce_weight: float = 1.0, mask=None):
    """Forward + combined loss + gradients; the entry point gradient checks use."""
    res = net.forward(x)
    ce, bce, grads = losses_and_grads_from_forward(net, res, labels, targets,
                                                   bce_weight, mask)
    return ce + bce_weight * bce, ce, bce, grads, res


class SgdState:
    """Per-parameter velocity buffers for SGD with momentum."""

    def __init__(self, params):
        self.velocities = [np.zeros_like(p) for p in params]


def sgd_step(params, grads, state: SgdState, lr: float, momentum: float,
             weight_decay: float) -> None:
    """v <- momentum*v + g + weight_decay*theta;  theta <- theta - lr*v.

    Refuses the step (raising, nothing mutated) if any gradient is
    non-finite; verifies parameters stay finite afterwards.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient {i} shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {i}; step refused")
    for p, g, v in zip(params, grads, state.velocities):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v
    for i, p in enumerate(params):
        if not np.all(np.isfinite(p)):
            raise NumericError(f"parameter {i} became non-finite after the step")


def cosine_lr(epoch: int, total_epochs: int, lr0: float, lr_min: float) -> float:
    """lr_min + (lr0 - lr_min) * (1 + cos(pi * epoch / total)) / 2."""
    if not 0 <= epoch <= total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


def save_checkpoint(net: DualHeadNet, path, epoch: int = 0, seed=None,
                    config: dict | None = None) -> None:
    """Write the binary checkpoint and its JSON metadata sidecar."""
    path = Path(path)
    arrays = net.parameters()
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(arrays)))
            for arr in arrays:
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            for arr in arrays:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        meta = {"format": 1, "epoch": int(epoch), "seed": seed,
                "config": config or {}, "layout": net.layout()}
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    """Rebuild a network (and its metadata) from :func:`save_checkpoint` output."""
    path = Path(path)
    try:
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        with open(path, "rb") as fh:
            blob = fh.read()
    except (OSError, json.JSONDecodeError) as exc:
        raise DataIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:8] != CHECKPOINT_MAGIC:
        raise DataIOError(f"{path}: bad checkpoint magic")
    off = 8
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    shapes = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        shapes.append(tuple(dims))
    arrays = []
    for shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape)
        arrays.append(arr.astype(np.float64))
        off += 8 * size
    lay = meta["layout"]
    net = DualHeadNet.create(lay["input_dim"], lay["num_classes"], lay["code_bits"],
                             lay["hidden_width"], lay["hidden_layers"],
                             lay["temperature"], RngStream(0))
    params = net.parameters()
    if len(params) != len(arrays):
        raise DataIOError(f"{path}: shape table has {len(arrays)} arrays, layout needs {len(params)}")
    for p, arr in zip(params, arrays):
        if p.shape != arr.shape:
            raise DataIOError(f"{path}: checkpoint array shape {arr.shape} != expected {p.shape}")
        p[...] = arr
    return net, meta
