"""Built-in frozen visual encoders and the feature-store ingestion path."""

from __future__ import annotations

import numpy as np

from .adapter import DEFAULT_PROFILES, EncoderProfile, TokenSequence
from .errors import ConfigError, DataError
from .feature_store import EncoderGeometry, FeatureStore
from .scenes import GT_DIM, K_MAX, Scene, encode_ground_truth, rasterize_scene


class GroundTruthEncoder:
    """Perfect scene description: one token per object slot."""

    name = "gt"

    def __init__(self, k_max: int = K_MAX):
        self.geometry = EncoderGeometry("objects", k_max, GT_DIM)

    def encode(self, scene: Scene) -> TokenSequence:
        tokens, valid = encode_ground_truth(scene)
        return TokenSequence(values=tokens, kind="objects", valid=valid)


class RawPixelEncoder:
    """Rasterized pixels split into a 3x3 patch grid, one token per patch."""

    name = "raw"

    def __init__(self, raster_size: int = 48):
        if raster_size % 3 != 0:
            raise ConfigError(f"raster size {raster_size} not divisible by 3")
        self.raster_size = raster_size
        patch = raster_size // 3
        self.geometry = EncoderGeometry("grid", 9, patch * patch * 3, grid=(3, 3))

    def encode(self, scene: Scene) -> TokenSequence:
        img = rasterize_scene(scene, self.raster_size, self.raster_size)
        p = self.raster_size // 3
        tokens = np.empty((9, p * p * 3), dtype=np.float32)
        for i in range(3):
            for j in range(3):
                tokens[i * 3 + j] = img[i * p : (i + 1) * p, j * p : (j + 1) * p].reshape(-1)
        return TokenSequence(values=tokens, kind="grid", grid=(3, 3))


class StoreEncoder:
    """Features precomputed by an external extractor, keyed by scene id."""

    def __init__(self, path):
        self.store = FeatureStore(path)
        self.geometry = self.store.geometry
        self.name = self.store.encoder

    def encode(self, scene: Scene) -> TokenSequence:
        if scene.id not in self.store:
            raise DataError(f"feature store has no record for scene {scene.id}")
        values = self.store.get(scene.id)
        return TokenSequence(values=values, kind=self.geometry.kind, grid=self.geometry.grid)


def make_encoder(profile: str, raster_size: int = 48):
    if profile == "gt":
        return GroundTruthEncoder()
    if profile == "raw":
        return RawPixelEncoder(raster_size)
    if profile.startswith("store:"):
        return StoreEncoder(profile[len("store:"):])
    raise ConfigError(f"unknown encoder profile {profile!r} (use gt, raw, or store:<path>)")


def profile_for(encoder) -> EncoderProfile:
    """Adaptation profile for an encoder: known names use the published
    defaults; unknown grid encoders pool to 4x4 (or the native side if
    smaller), object encoders keep their slots."""
    if encoder.name in DEFAULT_PROFILES:
        return DEFAULT_PROFILES[encoder.name]
    geometry = encoder.geometry
    if geometry.kind == "grid":
        side = min(4, geometry.grid[0], geometry.grid[1])
        return EncoderProfile(encoder.name, pooled_grid=side, positional=True)
    return EncoderProfile(encoder.name)
