"""Fully-connected residual network mapping (H, P, R, T) to a complex S11 spectrum.

Layout (defaults): a 4->64 stem, four residual blocks each holding a 64->256
and a 256->64 linear layer, and two parallel 64->64 linear heads for the real
and imaginary parts. That is 1 + 4*2 + 1 = 10 layers along any input-output
path. Weight matrices are stored ``(out, in)``.

Every block computes ``h <- mish(h + W2 @ mish(W1 @ h + b1) + b2)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .numcore import ContractError, Rng, mish_and_grad, smooth_l1, smooth_l1_grad

FORMAT_VERSION = 1
SMOOTH_L1_BETA = 1.0


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """The file is truncated, not valid JSON, or missing required fields."""


class CheckpointVersionError(CheckpointError):
    """The file declares a format version this code does not read."""


class CheckpointShapeError(CheckpointError):
    """Stored arrays disagree with the stored (or expected) configuration."""


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 4
    trunk_width: int = 64
    hidden_width: int = 256
    num_blocks: int = 4
    spectrum_points: int = 64

    def __post_init__(self):
        for name in ("input_dim", "trunk_width", "hidden_width", "spectrum_points"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.num_blocks < 0:
            raise ContractError("num_blocks must be >= 0")

    @property
    def layer_count(self) -> int:
        return 1 + 2 * self.num_blocks + 1

    def shapes(self) -> dict[str, tuple[int, ...]]:
        """Every parameter array name mapped to its shape, in draw order."""
        d, w, hid, s = self.input_dim, self.trunk_width, self.hidden_width, self.spectrum_points
        out: dict[str, tuple[int, ...]] = {"stem.w": (w, d), "stem.b": (w,)}
        for i in range(self.num_blocks):
            out[f"blocks.{i}.w1"] = (hid, w)
            out[f"blocks.{i}.b1"] = (hid,)
            out[f"blocks.{i}.w2"] = (w, hid)
            out[f"blocks.{i}.b2"] = (w,)
        out["head_re.w"] = (s, w)
        out["head_re.b"] = (s,)
        out["head_im.w"] = (s, w)
        out["head_im.b"] = (s,)
        return out

    def parameter_count(self) -> int:
        return sum(math.prod(shape) for shape in self.shapes().values())


@dataclass
class ModelParams:
    """Network weights plus the min-max statistics used to normalize inputs.

    ``version`` is bumped on every in-place update so a stale
    :class:`ForwardCache` can be detected.
    """

    config: ModelConfig
    arrays: dict[str, np.ndarray]
    norm_stats: np.ndarray  # (input_dim, 2): columns are min, max
    version: int = 0

    def __post_init__(self):
        expected = self.config.shapes()
        if list(self.arrays) != list(expected):
            raise ContractError(f"parameter names {list(self.arrays)} do not match config")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ContractError(f"{name} has shape {self.arrays[name].shape}, expected {shape}")
        self.norm_stats = np.asarray(self.norm_stats, dtype=np.float64)
        if self.norm_stats.shape != (self.config.input_dim, 2):
            raise ContractError("norm_stats must be (input_dim, 2)")
        if not np.all(self.norm_stats[:, 0] < self.norm_stats[:, 1]):
            raise ContractError("norm_stats need min < max in every dimension")

    def parameter_count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> ModelParams:
        return ModelParams(
            self.config,
            {k: v.copy() for k, v in self.arrays.items()},
            self.norm_stats.copy(),
        )

    def bit_equal(self, other: ModelParams) -> bool:
        if self.config != other.config or list(self.arrays) != list(other.arrays):
            return False
        same = all(
            self.arrays[k].tobytes() == other.arrays[k].tobytes() for k in self.arrays
        )
        return same and self.norm_stats.tobytes() == other.norm_stats.tobytes()

    def normalize(self, geoms: np.ndarray) -> np.ndarray:
        lo, hi = self.norm_stats[:, 0], self.norm_stats[:, 1]
        return (np.asarray(geoms, dtype=np.float64) - lo) / (hi - lo)


@dataclass
class ForwardCache:
    params_id: int
    params_version: int
    x: np.ndarray
    stem_dact: np.ndarray
    # per block: (block input, hidden mish', hidden post-activation, output mish')
    blocks: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    trunk: np.ndarray | None = None


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights drawn from one splitmix64 stream; zero biases."""
    rng = Rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in config.shapes().items():
        if name.endswith(".b") or name.endswith(".b1") or name.endswith(".b2"):
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[1])
            arrays[name] = rng.uniform_array(math.prod(shape), -bound, bound).reshape(shape)
    stats = np.tile([0.0, 1.0], (config.input_dim, 1))
    return ModelParams(config, arrays, stats)


def _linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w.T + b


def forward(params: ModelParams, x) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Forward pass on a batch of already-normalized inputs ``x`` (batch, input_dim)."""
    x = np.asarray(x, dtype=np.float64)
    cfg = params.config
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ContractError(f"expected inputs of shape (batch, {cfg.input_dim}), got {x.shape}")
    a = params.arrays
    h, dact = mish_and_grad(_linear(x, a["stem.w"], a["stem.b"]))
    cache = ForwardCache(id(params), params.version, x, dact)
    for i in range(cfg.num_blocks):
        p = f"blocks.{i}."
        u, du = mish_and_grad(_linear(h, a[p + "w1"], a[p + "b1"]))
        h_next, dh = mish_and_grad(h + _linear(u, a[p + "w2"], a[p + "b2"]))
        cache.blocks.append((h, du, u, dh))
        h = h_next
    cache.trunk = h
    re = _linear(h, a["head_re.w"], a["head_re.b"])
    im = _linear(h, a["head_im.w"], a["head_im.b"])
    return re, im, cache


def predict(params: ModelParams, geoms) -> tuple[np.ndarray, np.ndarray]:
    """Spectra for raw (un-normalized) geometries."""
    geoms = np.atleast_2d(np.asarray(geoms, dtype=np.float64))
    re, im, _ = forward(params, params.normalize(geoms))
    return re, im


def backward(params: ModelParams, cache: ForwardCache, grad_re, grad_im) -> dict[str, np.ndarray]:
    """Gradients of ``sum(grad_re * re + grad_im * im)`` w.r.t. every parameter."""
    if cache.params_id != id(params) or cache.params_version != params.version:
        raise ContractError("forward cache does not belong to these parameters (stale or foreign)")
    batch = cache.x.shape[0]
    s = params.config.spectrum_points
    grad_re = np.asarray(grad_re, dtype=np.float64)
    grad_im = np.asarray(grad_im, dtype=np.float64)
    if grad_re.shape != (batch, s) or grad_im.shape != (batch, s):
        raise ContractError(f"upstream gradients must be ({batch}, {s})")
    a = params.arrays
    g: dict[str, np.ndarray] = {}
    h = cache.trunk
    g["head_re.w"] = grad_re.T @ h
    g["head_re.b"] = grad_re.sum(axis=0)
    g["head_im.w"] = grad_im.T @ h
    g["head_im.b"] = grad_im.sum(axis=0)
    dh = grad_re @ a["head_re.w"] + grad_im @ a["head_im.w"]
    for i in reversed(range(params.config.num_blocks)):
        p = f"blocks.{i}."
        h_in, du, u, dout = cache.blocks[i]
        dz = dh * dout  # through the post-addition mish
        g[p + "w2"] = dz.T @ u
        g[p + "b2"] = dz.sum(axis=0)
        dv = (dz @ a[p + "w2"]) * du
        g[p + "w1"] = dv.T @ h_in
        g[p + "b1"] = dv.sum(axis=0)
        dh = dz + dv @ a[p + "w1"]  # skip path + residual branch
    dz = dh * cache.stem_dact
    g["stem.w"] = dz.T @ cache.x
    g["stem.b"] = dz.sum(axis=0)
    return {name: g[name] for name in params.arrays}


def loss_and_grad(params: ModelParams, x, re_target, im_target) -> tuple[float, dict[str, np.ndarray]]:
    """Combined SmoothL1 ``0.5 * (L(re) + L(im))`` and its parameter gradients.

    ``x`` must already be normalized.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("loss_and_grad needs a nonempty batch")
    re, im, cache = forward(params, x)
    loss = 0.5 * (smooth_l1(re, re_target, SMOOTH_L1_BETA) + smooth_l1(im, im_target, SMOOTH_L1_BETA))
    g_re = 0.5 * smooth_l1_grad(re, re_target, SMOOTH_L1_BETA)
    g_im = 0.5 * smooth_l1_grad(im, im_target, SMOOTH_L1_BETA)
    return loss, backward(params, cache, g_re, g_im)


def combined_loss(params: ModelParams, x, re_target, im_target) -> float:
    re, im, _ = forward(params, x)
    return 0.5 * (smooth_l1(re, re_target, SMOOTH_L1_BETA) + smooth_l1(im, im_target, SMOOTH_L1_BETA))


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def _encode_array(arr: np.ndarray) -> dict[str, Any]:
    # json writes floats with repr(), which round-trips float64 exactly
    return {"shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}


def _decode_array(obj: Any, name: str) -> np.ndarray:
    try:
        shape = tuple(int(n) for n in obj["shape"])
        values = np.asarray(obj["values"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"array {name!r} is malformed: {exc}") from None
    if values.size != math.prod(shape):
        raise CheckpointShapeError(f"array {name!r}: {values.size} values for shape {shape}")
    return values.reshape(shape)


def save_checkpoint(path, params: ModelParams, meta: dict[str, Any] | None = None, adam_state=None) -> None:
    """Write ``params`` (and optionally an optimizer state) as one JSON document."""
    meta = dict(meta or {})
    doc: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "config": asdict(params.config),
        "metal": meta.pop("metal", None),
        "seed": meta.pop("seed", None),
        "epochs_total": meta.pop("epochs_total", 0),
        "norm_stats": params.norm_stats.tolist(),
        "arrays": {name: _encode_array(arr) for name, arr in params.arrays.items()},
        "meta": meta,
    }
    if adam_state is not None:
        doc["adam"] = {
            "t": adam_state.t,
            "beta1": adam_state.beta1,
            "beta2": adam_state.beta2,
            "eps": adam_state.eps,
            "m": {k: _encode_array(v) for k, v in adam_state.m.items()},
            "v": {k: _encode_array(v) for k, v in adam_state.v.items()},
        }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, separators=(",", ":")), encoding="utf-8")
    os.replace(tmp, path)


def load_checkpoint(path, expected_config: ModelConfig | None = None):
    """Read a checkpoint; returns ``(params, meta, adam_state_or_None)``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: not a readable checkpoint ({exc})") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CheckpointFormatError(f"{path}: missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format_version {doc['format_version']!r}, expected {FORMAT_VERSION}")
    try:
        config = ModelConfig(**doc["config"])
        raw_arrays = doc["arrays"]
        norm_stats = np.asarray(doc["norm_stats"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: {exc}") from None
    if expected_config is not None and config != expected_config:
        raise CheckpointShapeError(f"{path}: checkpoint config {config} differs from expected {expected_config}")
    shapes = config.shapes()
    if not isinstance(raw_arrays, dict) or set(raw_arrays) != set(shapes):
        raise CheckpointShapeError(f"{path}: stored layers do not match the stored config")
    arrays = {}
    for name, shape in shapes.items():
        arr = _decode_array(raw_arrays[name], name)
        if arr.shape != shape:
            raise CheckpointShapeError(f"{path}: {name} has shape {arr.shape}, config implies {shape}")
        arrays[name] = arr
    try:
        params = ModelParams(config, arrays, norm_stats)
    except ContractError as exc:
        raise CheckpointShapeError(f"{path}: {exc}") from None
    meta = dict(doc.get("meta") or {})
    meta.update(metal=doc.get("metal"), seed=doc.get("seed"), epochs_total=doc.get("epochs_total"))
    adam_state = None
    if doc.get("adam") is not None:
        from .optim import AdamState

        ad = doc["adam"]
        adam_state = AdamState(
            m={k: _decode_array(ad["m"][k], k) for k in shapes},
            v={k: _decode_array(ad["v"][k], k) for k in shapes},
            t=int(ad["t"]),
            beta1=float(ad["beta1"]),
            beta2=float(ad["beta2"]),
            eps=float(ad["eps"]),
        )
    return params, meta, adam_state
