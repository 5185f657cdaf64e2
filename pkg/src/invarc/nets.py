"""Learnable function approximators: MLPs, lower-triangular factor nets, and
invertible coupling-block networks, all parameterized by named slices of one
flat vector (`ParamStore`).

Forward passes accept plain arrays or taped Tensors and either a single state
(shape (n,)) or a batch (shape (B, n)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError

ACTIVATIONS = {"silu": ad.silu, "softplus": ad.softplus}


@dataclass(frozen=True)
class MlpConfig:
    in_dim: int
    out_dim: int
    hidden_dim: int = 64
    n_layers: int = 3
    activation: str = "silu"
    out_scale: float = 1.0  # init scale of the final layer (0 -> exact zero init)
    init_sigma: float | None = None  # when set: all weights ~ N(0, sigma^2)

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0 or self.hidden_dim <= 0 or self.n_layers <= 0:
            raise ConfigError("MlpConfig dims must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.in_dim] + [self.hidden_dim] * (self.n_layers - 1) + [self.out_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class InnConfig:
    dim: int
    n_blocks: int = 8
    hidden_dim: int = 64
    n_layers: int = 3
    activation: str = "silu"
    clamp: float = 2.0
    mixing_seed: int = 0

    def __post_init__(self):
        if self.dim < 2 and self.n_blocks > 0:
            raise ConfigError("coupling blocks need dim >= 2")

    def split(self) -> tuple[int, int]:
        return self.dim // 2, self.dim - self.dim // 2

    def subnet_config(self) -> MlpConfig:
        n1, n2 = self.split()
        return MlpConfig(n1, 2 * n2, self.hidden_dim, self.n_layers, self.activation, out_scale=0.0)


# ---------------------------------------------------------------------------
# parameter storage


class ParamStore:
    """Flat float64 parameter vector with named, disjoint, covering slices."""

    def __init__(self, entries: list[tuple[str, tuple]]):
        self.slices: dict[str, tuple[int, int]] = {}
        self.shapes: dict[str, tuple] = {}
        offset = 0
        for name, shape in entries:
            if name in self.slices:
                raise ConfigError(f"duplicate parameter slice {name!r}")
            length = int(np.prod(shape)) if shape else 1
            self.slices[name] = (offset, length)
            self.shapes[name] = tuple(shape)
            offset += length
        self.values = np.zeros(offset)

    @property
    def size(self) -> int:
        return self.values.size

    def view(self, name: str) -> np.ndarray:
        off, length = self.slices[name]
        return self.values[off : off + length].reshape(self.shapes[name])

    def set_view(self, name: str, arr) -> None:
        off, length = self.slices[name]
        self.values[off : off + length] = np.asarray(arr, dtype=float).ravel()

    def manifest(self) -> list[dict]:
        return [
            {"name": name, "offset": off, "length": length}
            for name, (off, length) in self.slices.items()
        ]

    def copy(self) -> "ParamStore":
        dup = ParamStore.__new__(ParamStore)
        dup.slices = dict(self.slices)
        dup.shapes = dict(self.shapes)
        dup.values = self.values.copy()
        return dup

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "params.txt", "w") as fh:
            for v in self.values:
                fh.write(f"{v:.17g}\n")
        with open(directory / "manifest.json", "w") as fh:
            json.dump(self.manifest(), fh, indent=1)

    def load_values(self, directory) -> None:
        directory = Path(directory)
        with open(directory / "manifest.json") as fh:
            manifest = json.load(fh)
        ours = self.manifest()
        if manifest != ours:
            raise ConfigError("checkpoint manifest does not match this model")
        vals = np.loadtxt(directory / "params.txt", ndmin=1)
        if vals.size != self.values.size:
            raise ConfigError("checkpoint length mismatch")
        self.values = vals.astype(float)


class BoundParams:
    """Named reshaped views over a flat vector (array or taped Tensor)."""

    def __init__(self, store: ParamStore, flat=None):
        self.store = store
        self.flat = store.values if flat is None else flat
        self._cache: dict[str, object] = {}

    def view(self, name: str):
        hit = self._cache.get(name)
        if hit is None:
            off, length = self.store.slices[name]
            hit = ad.reshape(self.flat[off : off + length], self.store.shapes[name])
            self._cache[name] = hit
        return hit


def bind(store: ParamStore, flat=None) -> BoundParams:
    return BoundParams(store, flat)


# ---------------------------------------------------------------------------
# MLP


def mlp_param_entries(prefix: str, cfg: MlpConfig) -> list[tuple[str, tuple]]:
    entries = []
    for i, (fan_in, fan_out) in enumerate(cfg.layer_dims()):
        entries.append((f"{prefix}.w{i}", (fan_in, fan_out)))
        entries.append((f"{prefix}.b{i}", (fan_out,)))
    return entries


def init_mlp(store: ParamStore, prefix: str, cfg: MlpConfig, rng: np.random.Generator) -> None:
    """Uniform fan-in init for weights, zero biases; final layer scaled by out_scale.

    With init_sigma set (dissipation nets), all weights are N(0, sigma^2) instead.
    """
    last = cfg.n_layers - 1
    for i, (fan_in, _) in enumerate(cfg.layer_dims()):
        shape = store.shapes[f"{prefix}.w{i}"]
        if cfg.init_sigma is not None:
            w = rng.normal(0.0, cfg.init_sigma, shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            if i == last:
                bound *= cfg.out_scale
            w = rng.uniform(-bound, bound, shape)
        store.set_view(f"{prefix}.w{i}", w)
        store.set_view(f"{prefix}.b{i}", np.zeros(store.shapes[f"{prefix}.b{i}"]))


def _with_time(x, t):
    if t is None:
        return x
    xv = ad.value(x)
    tv = np.asarray(t, dtype=float)
    if xv.ndim == 1:
        col = tv.reshape(1)
    elif tv.ndim == 0:
        col = np.full((xv.shape[0], 1), float(tv))
    else:
        col = tv.reshape(-1, 1)
    return ad.concat([x, col], axis=-1)


def mlp_forward(cfg: MlpConfig, params: BoundParams, prefix: str, x, t=None):
    """Affine-activation stack; appends t as an extra input column when given."""
    x = _with_time(x, t)
    single = ad.value(x).ndim == 1
    h = ad.reshape(x, (1, -1)) if single else x
    if ad.value(h).shape[-1] != cfg.in_dim:
        raise DimensionError(
            f"mlp input dim {ad.value(h).shape[-1]} != cfg.in_dim {cfg.in_dim}"
        )
    act = ACTIVATIONS[cfg.activation]
    last = cfg.n_layers - 1
    for i in range(cfg.n_layers):
        h = ad.matmul(h, params.view(f"{prefix}.w{i}")) + params.view(f"{prefix}.b{i}")
        if i != last:
            h = act(h)
    return ad.reshape(h, (-1,)) if single else h


def _act_deriv(name: str, a):
    if name == "silu":
        s = ad.sigmoid(a)
        return s + a * (s * (1.0 - s))
    return ad.sigmoid(a)  # softplus' = sigmoid


def mlp_value_and_input_grad(cfg: MlpConfig, params: BoundParams, prefix: str, x):
    """Scalar MLP value and its gradient w.r.t. the input.

    The gradient is assembled from primitive ops (an explicit reverse sweep),
    so it stays differentiable w.r.t. the parameters.
    """
    if cfg.out_dim != 1:
        raise DimensionError("mlp_value_and_input_grad needs a scalar-output net")
    single = ad.value(x).ndim == 1
    h = ad.reshape(x, (1, -1)) if single else x
    batch = ad.value(h).shape[0]
    act = ACTIVATIONS[cfg.activation]
    last = cfg.n_layers - 1
    pre = []
    for i in range(cfg.n_layers):
        h = ad.matmul(h, params.view(f"{prefix}.w{i}")) + params.view(f"{prefix}.b{i}")
        if i != last:
            pre.append(h)
            h = act(h)
    y = h  # (batch, 1)
    ones = np.ones((batch, 1))
    g = ad.matmul(ones, ad.transpose_last2(params.view(f"{prefix}.w{last}")))
    for i in range(last - 1, -1, -1):
        g = g * _act_deriv(cfg.activation, pre[i])
        g = ad.matmul(g, ad.transpose_last2(params.view(f"{prefix}.w{i}")))
    if single:
        return ad.reshape(y, ()), ad.reshape(g, (-1,))
    return ad.reshape(y, (-1,)), g


# ---------------------------------------------------------------------------
# lower-triangular factor net


def tril_dim(n: int) -> int:
    return n * (n + 1) // 2


def tril_factor_forward(cfg: MlpConfig, params: BoundParams, prefix: str, x, n: int):
    """Net output packed into a lower-triangular (..., n, n) factor L."""
    if cfg.out_dim != tril_dim(n):
        raise DimensionError(f"tril net out_dim {cfg.out_dim} != n(n+1)/2 = {tril_dim(n)}")
    flat = mlp_forward(cfg, params, prefix, x)
    return ad.tril_from_flat(flat, n)


# ---------------------------------------------------------------------------
# invertible coupling-block network


@lru_cache(maxsize=None)
def _mixing_matrices(dim: int, n_blocks: int, seed: int) -> tuple:
    """Fixed orthogonal mixing matrices, one per block, seeded deterministically."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_blocks):
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        out.append(q * np.sign(np.diag(r)))
    return tuple(out)


def inn_param_entries(prefix: str, cfg: InnConfig) -> list[tuple[str, tuple]]:
    sub = cfg.subnet_config()
    entries = []
    for b in range(cfg.n_blocks):
        entries.extend(mlp_param_entries(f"{prefix}.block{b}", sub))
    return entries


def init_inn(store: ParamStore, prefix: str, cfg: InnConfig, rng: np.random.Generator) -> None:
    sub = cfg.subnet_config()
    for b in range(cfg.n_blocks):
        init_mlp(store, f"{prefix}.block{b}", sub, rng)


def _coupling_scale_shift(cfg: InnConfig, params: BoundParams, prefix: str, b: int, z1):
    n1, n2 = cfg.split()
    st = mlp_forward(cfg.subnet_config(), params, f"{prefix}.block{b}", z1)
    s_raw = st[..., :n2]
    shift = st[..., n2:]
    log_s = cfg.clamp * ad.tanh(s_raw * (1.0 / cfg.clamp))
    return log_s, shift


def inn_forward(cfg: InnConfig, params: BoundParams, prefix: str, u):
    """u -> z through n_blocks of (orthogonal mixing, affine coupling)."""
    n1, _ = cfg.split()
    z = u
    for b, q in enumerate(_mixing_matrices(cfg.dim, cfg.n_blocks, cfg.mixing_seed)):
        z = ad.matvec(q, z)
        z1 = z[..., :n1]
        z2 = z[..., n1:]
        log_s, shift = _coupling_scale_shift(cfg, params, prefix, b, z1)
        z = ad.concat([z1, z2 * ad.exp(log_s) + shift], axis=-1)
    return z


def inn_inverse(cfg: InnConfig, params: BoundParams, prefix: str, z):
    n1, _ = cfg.split()
    u = z
    mixes = _mixing_matrices(cfg.dim, cfg.n_blocks, cfg.mixing_seed)
    for b in range(cfg.n_blocks - 1, -1, -1):
        z1 = u[..., :n1]
        z2 = u[..., n1:]
        log_s, shift = _coupling_scale_shift(cfg, params, prefix, b, z1)
        u = ad.concat([z1, (z2 - shift) * ad.exp(-log_s)], axis=-1)
        u = ad.matvec(mixes[b].T, u)
    return u
