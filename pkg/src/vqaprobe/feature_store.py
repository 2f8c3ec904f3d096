"""VQFS: bit-exact binary container for token sequences keyed by sample id.

Layout (little-endian, 16-byte header):

    offset  size  field
    0       4     magic b"VQFS"
    4       2     version (currently 1), u16
    6       1     dtype code, u8 (1 = float32)
    7       1     geometry tag, u8 (1 = grid, 2 = objects, 3 = text)
    8       4     record count, u32
    12      2     tokens per record N_v, u16
    14      2     dimension d_v, u16
    16      ...   payload: count x N_v x d_v float32, row-major

A JSON sidecar at <path>.manifest.json maps sample id -> record index and
records the encoder name, the grid shape when geometry is grid, and free-
text extraction notes. The layout is normative: external extractors must
emit it byte-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StoreFormatError

MAGIC = b"VQFS"
VERSION = 1
HEADER = struct.Struct("<4sHBBIHH")
HEADER_SIZE = 16
DTYPE_FLOAT32 = 1
GEOMETRY_TAGS = {"grid": 1, "objects": 2, "text": 3}
GEOMETRY_NAMES = {v: k for k, v in GEOMETRY_TAGS.items()}


@dataclass(frozen=True)
class EncoderGeometry:
    kind: str  # grid | objects | text
    n_tokens: int
    dim: int
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in GEOMETRY_TAGS:
            raise StoreFormatError(f"unknown geometry kind {self.kind!r}")
        if self.kind == "grid":
            if self.grid is None:
                raise StoreFormatError("grid geometry needs a grid shape")
            h, w = self.grid
            if h * w != self.n_tokens:
                raise StoreFormatError(f"grid {h}x{w} inconsistent with {self.n_tokens} tokens")


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest.json")


def write_store(
    records: list[tuple[int | str, np.ndarray]],
    geometry: EncoderGeometry,
    path,
    encoder: str = "unknown",
    notes: str = "",
) -> None:
    """Write records and the manifest sidecar; round-trips bit-exactly."""
    expected = (geometry.n_tokens, geometry.dim)
    for sample_id, mat in records:
        arr = np.asarray(mat)
        if arr.shape != expected:
            raise StoreFormatError(f"record {sample_id}: shape {arr.shape} != {expected}")
        if not np.isfinite(arr).all():
            bad = np.argwhere(~np.isfinite(np.asarray(arr, dtype=np.float64)))[0]
            raise StoreFormatError(f"record {sample_id}: non-finite value at {tuple(int(b) for b in bad)}")
    header = HEADER.pack(
        MAGIC,
        VERSION,
        DTYPE_FLOAT32,
        GEOMETRY_TAGS[geometry.kind],
        len(records),
        geometry.n_tokens,
        geometry.dim,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for _sample_id, mat in records:
            fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())
    manifest = {
        "samples": {str(sid): i for i, (sid, _) in enumerate(records)},
        "encoder": encoder,
        "notes": notes,
    }
    if geometry.grid is not None:
        manifest["grid"] = list(geometry.grid)
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


class FeatureStore:
    """Validated, lazily-read VQFS store; one record is read per access."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            raise StoreFormatError(f"store {path} does not exist")
        with open(self.path, "rb") as fh:
            head = fh.read(HEADER_SIZE)
        if len(head) < HEADER_SIZE:
            raise StoreFormatError(f"{path}: truncated header ({len(head)} bytes)")
        magic, version, dtype, geom_tag, count, n_tokens, dim = HEADER.unpack(head)
        if magic != MAGIC:
            raise StoreFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise StoreFormatError(f"{path}: unsupported version {version}")
        if dtype != DTYPE_FLOAT32:
            raise StoreFormatError(f"{path}: unsupported dtype code {dtype}")
        if geom_tag not in GEOMETRY_NAMES:
            raise StoreFormatError(f"{path}: unknown geometry tag {geom_tag}")
        expected = HEADER_SIZE + count * n_tokens * dim * 4
        actual = self.path.stat().st_size
        if actual != expected:
            raise StoreFormatError(f"{path}: payload length {actual} bytes, expected {expected}")
        mpath = manifest_path(self.path)
        if not mpath.exists():
            raise StoreFormatError(f"{path}: missing manifest sidecar {mpath}")
        with open(mpath, "r", encoding="utf-8") as fh:
            self.manifest = json.load(fh)
        samples = self.manifest.get("samples", {})
        indices = sorted(samples.values())
        if indices != list(range(count)):
            raise StoreFormatError(f"{path}: manifest indices are not a bijection onto [0, {count})")
        grid = self.manifest.get("grid")
        kind = GEOMETRY_NAMES[geom_tag]
        if kind == "grid" and grid is None:
            raise StoreFormatError(f"{path}: grid geometry but manifest carries no grid shape")
        self.geometry = EncoderGeometry(
            kind=kind,
            n_tokens=n_tokens,
            dim=dim,
            grid=tuple(grid) if grid else None,
        )
        self.count = count
        self._index = {sid: int(i) for sid, i in samples.items()}
        self._record_bytes = n_tokens * dim * 4

    @property
    def encoder(self) -> str:
        return self.manifest.get("encoder", "unknown")

    def sample_ids(self) -> list[str]:
        return sorted(self._index, key=self._index.get)

    def __contains__(self, sample_id) -> bool:
        return str(sample_id) in self._index

    def get(self, sample_id) -> np.ndarray:
        key = str(sample_id)
        if key not in self._index:
            raise StoreFormatError(f"{self.path}: no record for sample {sample_id!r}")
        return self.get_index(self._index[key])

    def get_index(self, index: int) -> np.ndarray:
        if not (0 <= index < self.count):
            raise StoreFormatError(f"{self.path}: record index {index} out of range")
        with open(self.path, "rb") as fh:
            fh.seek(HEADER_SIZE + index * self._record_bytes)
            buf = fh.read(self._record_bytes)
        if len(buf) != self._record_bytes:
            raise StoreFormatError(f"{self.path}: short read at record {index}")
        mat = np.frombuffer(buf, dtype="<f4").reshape(self.geometry.n_tokens, self.geometry.dim)
        return mat.copy()


def read_store(path) -> tuple[EncoderGeometry, FeatureStore]:
    store = FeatureStore(path)
    return store.geometry, store
