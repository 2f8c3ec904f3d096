"""Memory adapter: force native encoder output onto a fixed scalar budget.

Grid features are adaptively average-pooled to a profile-configured g x g,
then every token is compressed by PCA (native dim above target), zero-
padded (below), or passed through. The target dimension is d = floor(B /
N_v), the largest dim that keeps N_v * d within the budget B.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .feature_store import EncoderGeometry

MODE_COMPRESS = "compress"
MODE_PAD = "zero-pad"
MODE_IDENTITY = "identity"


@dataclass(frozen=True)
class MemoryRegime:
    budget: int
    k_max: int = 10

    def __post_init__(self):
        if self.budget < self.k_max:
            raise ConfigError(f"budget {self.budget} below the object capacity {self.k_max}")


@dataclass(frozen=True)
class EncoderProfile:
    """Per-encoder adaptation knobs: pooled grid side for grid geometries."""

    name: str
    pooled_grid: int | None = None  # None for object/text geometries
    positional: bool = False  # add grid positional embeddings downstream


# Defaults replicate the published adaptation table: grid backbones pool to
# 4x4, raw pixel patches to 3x3, object encoders keep their native slots.
DEFAULT_PROFILES = {
    "gt": EncoderProfile("gt"),
    "raw": EncoderProfile("raw", pooled_grid=3, positional=True),
    "resnet50": EncoderProfile("resnet50", pooled_grid=4, positional=True),
    "dino-resnet50": EncoderProfile("dino-resnet50", pooled_grid=4, positional=True),
    "vit-s": EncoderProfile("vit-s", pooled_grid=4, positional=True),
    "dino-vit-s": EncoderProfile("dino-vit-s", pooled_grid=4, positional=True),
    "slot-attention": EncoderProfile("slot-attention"),
    "dti-sprites": EncoderProfile("dti-sprites"),
}


@dataclass(frozen=True)
class AdapterPlan:
    n_tokens: int
    dim: int
    mode: str
    native_dim: int
    pooled_grid: tuple[int, int] | None = None

    @property
    def memory(self) -> int:
        return self.n_tokens * self.dim


@dataclass
class TokenSequence:
    """N x d feature tokens: the currency between encoders and the model."""

    values: np.ndarray
    kind: str  # grid | objects | text
    grid: tuple[int, int] | None = None
    valid: np.ndarray | None = None  # per-token mask, objects only

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise DataError(f"token matrix must be 2-d, got shape {self.values.shape}")


def plan_adaptation(
    geometry: EncoderGeometry,
    regime: MemoryRegime,
    profile: EncoderProfile,
) -> AdapterPlan:
    """Budget arithmetic: pooled token count and the maximal per-token dim."""
    if geometry.kind == "grid":
        if profile.pooled_grid is None:
            raise ConfigError(f"profile {profile.name!r} does not cover grid geometries")
        g = profile.pooled_grid
        h, w = geometry.grid
        if g > h or g > w:
            raise ConfigError(f"pooled grid {g} exceeds native grid {h}x{w}")
        n_tokens = g * g
        pooled = (g, g)
    else:
        n_tokens = geometry.n_tokens
        pooled = None
    dim = regime.budget // n_tokens
    if dim == 0:
        raise ConfigError(f"budget {regime.budget} too small for {n_tokens} tokens")
    if geometry.dim > dim:
        mode = MODE_COMPRESS
    elif geometry.dim < dim:
        mode = MODE_PAD
    else:
        mode = MODE_IDENTITY
    return AdapterPlan(n_tokens=n_tokens, dim=dim, mode=mode, native_dim=geometry.dim, pooled_grid=pooled)


def adaptive_avg_pool(tokens: np.ndarray, target: int) -> np.ndarray:
    """Pool an h x w x d grid to target x target by exact per-bin means.

    Bin (i, j) covers rows [floor(i*h/g), floor((i+1)*h/g)) and the
    analogous columns.
    """
    arr = np.asarray(tokens)
    if arr.ndim != 3:
        raise DataError(f"expected h x w x d grid, got shape {arr.shape}")
    h, w, d = arr.shape
    g = target
    if g > h or g > w:
        raise DataError(f"cannot pool {h}x{w} grid to {g}x{g}")
    out = np.empty((g, g, d), dtype=arr.dtype)
    for i in range(g):
        r0, r1 = i * h // g, (i + 1) * h // g
        for j in range(g):
            c0, c1 = j * w // g, (j + 1) * w // g
            out[i, j] = arr[r0:r1, c0:c1].mean(axis=(0, 1))
    return out


@dataclass
class PCAModel:
    mean: np.ndarray  # [d_v]
    components: np.ndarray  # [d_out, d_v], rows orthonormal, descending variance
    explained_variance: np.ndarray  # [d_out]
    rank_deficient: bool = False

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def reconstruct(self, y: np.ndarray) -> np.ndarray:
        return y @ self.components + self.mean


def _fix_signs(components: np.ndarray) -> np.ndarray:
    # Determinism: largest-magnitude entry of each row is made positive.
    out = components.copy()
    for row in out:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return out


def fit_pca(samples: np.ndarray, d_out: int) -> PCAModel:
    """Top d_out principal directions of the centered sample matrix (SVD).

    Rank deficiency below d_out pads with an orthonormal completion at zero
    explained variance and flags the model.
    """
    x = np.asarray(samples, dtype=np.float64)
    n, d_v = x.shape
    if not (n > d_out):
        raise DataError(f"need more samples ({n}) than components ({d_out})")
    if d_out > d_v:
        raise DataError(f"cannot extract {d_out} components from dimension {d_v}")
    if not np.isfinite(x).all():
        raise NumericError("PCA input contains non-finite values")
    mean = x.mean(axis=0)
    centered = x - mean
    _u, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = s[0] * max(n, d_v) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int((s > tol).sum())
    variance = s**2 / (n - 1)
    components = vt[:d_out]
    explained = variance[:d_out].copy()
    deficient = rank < d_out
    if deficient:
        explained[rank:] = 0.0
    return PCAModel(
        mean=mean,
        components=_fix_signs(components),
        explained_variance=explained,
        rank_deficient=deficient,
    )


def apply_adapter(plan: AdapterPlan, pca: PCAModel | None, tokens: TokenSequence) -> TokenSequence:
    """Pool (grids), then compress / pad / copy each token to the plan dim."""
    if (plan.mode == MODE_COMPRESS) != (pca is not None):
        raise ConfigError("PCA model must be present exactly when the plan compresses")
    values = tokens.values
    grid = None
    if tokens.kind == "grid":
        if plan.pooled_grid is None:
            raise ConfigError("plan was built for object tokens but grid tokens were given")
        if tokens.grid is None:
            raise DataError("grid token sequence is missing its grid shape")
        h, w = tokens.grid
        g = plan.pooled_grid[0]
        values = adaptive_avg_pool(values.reshape(h, w, -1), g).reshape(g * g, -1)
        grid = plan.pooled_grid
    elif plan.pooled_grid is not None:
        raise ConfigError("plan was built for grid tokens but object tokens were given")
    if values.shape[0] != plan.n_tokens or values.shape[1] != plan.native_dim:
        raise DataError(f"token shape {values.shape} does not match plan {plan.n_tokens}x{plan.native_dim}")
    if plan.mode == MODE_COMPRESS:
        out = pca.project(values)[:, : plan.dim].astype(np.float32)
    elif plan.mode == MODE_PAD:
        out = np.zeros((plan.n_tokens, plan.dim), dtype=np.float32)
        out[:, : values.shape[1]] = values
    else:
        out = np.asarray(values, dtype=np.float32).copy()
    return TokenSequence(values=out, kind=tokens.kind, grid=grid, valid=tokens.valid)


# --- PCA model serialization (little-endian, like the feature store) -------

_PCA_MAGIC = b"VQPC"
_PCA_VERSION = 1


def save_pca(model: PCAModel, path) -> None:
    d_out, d_v = model.components.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHBII", _PCA_MAGIC, _PCA_VERSION, int(model.rank_deficient), d_out, d_v))
        fh.write(np.ascontiguousarray(model.mean, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.components, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.explained_variance, dtype="<f8").tobytes())


def load_pca(path) -> PCAModel:
    with open(path, "rb") as fh:
        head = fh.read(15)
        if len(head) < 15:
            raise DataError(f"{path}: truncated PCA header")
        magic, version, deficient, d_out, d_v = struct.unpack("<4sHBII", head)
        if magic != _PCA_MAGIC:
            raise DataError(f"{path}: bad PCA magic {magic!r}")
        if version != _PCA_VERSION:
            raise DataError(f"{path}: unsupported PCA version {version}")
        mean = np.frombuffer(fh.read(8 * d_v), dtype="<f8").copy()
        components = np.frombuffer(fh.read(8 * d_out * d_v), dtype="<f8").reshape(d_out, d_v).copy()
        explained = np.frombuffer(fh.read(8 * d_out), dtype="<f8").copy()
    return PCAModel(mean=mean, components=components, explained_variance=explained, rank_deficient=bool(deficient))
