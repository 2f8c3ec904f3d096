"""CLEVR-like world model: vocabulary, scene sampling, ground-truth tokens,
a top-down rasterizer for the raw-pixel baseline, and scenes-JSON ingestion.

Scenes JSON schema (one record per scene):
    {"scenes": [{"image_index": int,
                 "objects": [{"shape": str, "color": str, "size": str,
                              "material": str, "3d_coords": [x, y, z]}],
                 "directions": {...}  # optional unit vectors per direction
                }]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

K_MAX = 10
GT_DIM = 7  # 4 attribute ordinals + (x, y, z)

# Ordering is normative: it defines ordinal encodings and answer-head indices.
SHAPES = ("cube", "sphere", "cylinder")
COLORS = ("gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow")
SIZES = ("small", "large")
MATERIALS = ("rubber", "metal")

# Canonical frame for generated scenes; official files carry their own vectors.
CANONICAL_DIRECTIONS = {
    "right": (1.0, 0.0, 0.0),
    "left": (-1.0, 0.0, 0.0),
    "behind": (0.0, 1.0, 0.0),
    "front": (0.0, -1.0, 0.0),
}

SIZE_RADIUS = {"small": 0.35, "large": 0.7}


@dataclass(frozen=True)
class AttributeVocabulary:
    shapes: tuple[str, ...] = SHAPES
    colors: tuple[str, ...] = COLORS
    sizes: tuple[str, ...] = SIZES
    materials: tuple[str, ...] = MATERIALS

    def __post_init__(self):
        if (len(self.shapes), len(self.colors), len(self.sizes), len(self.materials)) != (3, 8, 2, 2):
            raise DataError("attribute cardinalities must be 3/8/2/2")

    @property
    def categories(self) -> dict[str, tuple[str, ...]]:
        return {
            "shape": self.shapes,
            "color": self.colors,
            "size": self.sizes,
            "material": self.materials,
        }

    @property
    def attribute_answers(self) -> tuple[str, ...]:
        """The 15-word attribute answer vocabulary, in head-index order."""
        return self.shapes + self.colors + self.sizes + self.materials

    def answer_index(self, name: str) -> int:
        try:
            return self.attribute_answers.index(name)
        except ValueError:
            raise DataError(f"unknown attribute value {name!r}") from None

    def index_of(self, category: str, name: str) -> int:
        values = self.categories[category]
        try:
            return values.index(name)
        except ValueError:
            raise DataError(f"unknown {category} {name!r}") from None


DEFAULT_VOCAB = AttributeVocabulary()


@dataclass(frozen=True)
class SceneBounds:
    x: tuple[float, float] = (-3.0, 3.0)
    y: tuple[float, float] = (-3.0, 3.0)
    z: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        for lo, hi in (self.x, self.y, self.z):
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise DataError("scene bounds must be finite, non-degenerate intervals")


DEFAULT_BOUNDS = SceneBounds()
MIN_SEPARATION = 0.75  # min horizontal center distance between objects


@dataclass(frozen=True)
class ObjectSpec:
    shape: int
    color: int
    size: int
    material: int
    position: tuple[float, float, float]

    def attribute(self, category: str, vocab: AttributeVocabulary = DEFAULT_VOCAB) -> str:
        idx = {"shape": self.shape, "color": self.color, "size": self.size, "material": self.material}[category]
        return vocab.categories[category][idx]


@dataclass
class Scene:
    id: int
    objects: list[ObjectSpec] = field(default_factory=list)
    k_max: int = K_MAX
    bounds: SceneBounds = DEFAULT_BOUNDS
    directions: dict[str, tuple[float, float, float]] = field(
        default_factory=lambda: dict(CANONICAL_DIRECTIONS)
    )

    def __post_init__(self):
        if len(self.objects) > self.k_max:
            raise DataError(f"scene {self.id}: {len(self.objects)} objects exceeds k_max={self.k_max}")

    def __len__(self) -> int:
        return len(self.objects)


def _too_close(pos, others, min_sep: float) -> bool:
    return any((pos[0] - o.position[0]) ** 2 + (pos[1] - o.position[1]) ** 2 < min_sep**2 for o in others)


def sample_scene(
    seed: int,
    n_objects: tuple[int, int],
    vocab: AttributeVocabulary = DEFAULT_VOCAB,
    bounds: SceneBounds = DEFAULT_BOUNDS,
    scene_id: int = 0,
    min_separation: float = MIN_SEPARATION,
    max_attempts: int = 200,
    variant: int = 0,
) -> Scene:
    """Rejection-sample a scene with a uniform object count in `n_objects`.

    Identical arguments always produce an identical scene; `variant` selects
    an alternative deterministic draw for the same scene id. Raises
    GenerationExhausted when the box cannot host the requested count at the
    configured separation.
    """
    from .errors import GenerationExhausted
    from .seeding import substream

    lo, hi = n_objects
    if not (0 <= lo <= hi <= K_MAX):
        raise DataError(f"object count range {n_objects} outside [0, {K_MAX}]")
    rng = substream(seed, "scene", scene_id, variant)
    count = int(rng.integers(lo, hi + 1))
    objects: list[ObjectSpec] = []
    for _ in range(count):
        placed = False
        for _attempt in range(max_attempts):
            shape = int(rng.integers(len(vocab.shapes)))
            color = int(rng.integers(len(vocab.colors)))
            size = int(rng.integers(len(vocab.sizes)))
            material = int(rng.integers(len(vocab.materials)))
            r = SIZE_RADIUS[vocab.sizes[size]]
            x = float(rng.uniform(bounds.x[0] + r, bounds.x[1] - r))
            y = float(rng.uniform(bounds.y[0] + r, bounds.y[1] - r))
            z = r
            if _too_close((x, y), objects, min_separation):
                continue
            objects.append(ObjectSpec(shape, color, size, material, (x, y, z)))
            placed = True
            break
        if not placed:
            raise GenerationExhausted(
                f"could not place object {len(objects) + 1}/{count} after {max_attempts} attempts"
            )
    return Scene(id=scene_id, objects=objects, bounds=bounds)


def _normalize_axis(v: float, lo: float, hi: float) -> float:
    return 2.0 * (v - lo) / (hi - lo) - 1.0


def _denormalize_axis(v: float, lo: float, hi: float) -> float:
    return (v + 1.0) / 2.0 * (hi - lo) + lo


def encode_ground_truth(scene: Scene, vocab: AttributeVocabulary = DEFAULT_VOCAB) -> tuple[np.ndarray, np.ndarray]:
    """Encode a scene as a K x 7 token matrix plus a validity mask.

    Row i for object i is [shape/(S-1), color/(C-1), size, material, x_n, y_n, z_n]
    with attribute ordinals in [0, 1] and positions in [-1, 1] per axis.
    Rows past the object count are zero and masked invalid.
    """
    k = scene.k_max
    tokens = np.zeros((k, GT_DIM), dtype=np.float32)
    valid = np.zeros(k, dtype=bool)
    b = scene.bounds
    for i, obj in enumerate(scene.objects):
        tokens[i, 0] = obj.shape / (len(vocab.shapes) - 1)
        tokens[i, 1] = obj.color / (len(vocab.colors) - 1)
        tokens[i, 2] = obj.size / (len(vocab.sizes) - 1)
        tokens[i, 3] = obj.material / (len(vocab.materials) - 1)
        tokens[i, 4] = _normalize_axis(obj.position[0], *b.x)
        tokens[i, 5] = _normalize_axis(obj.position[1], *b.y)
        tokens[i, 6] = _normalize_axis(obj.position[2], *b.z)
        valid[i] = True
    return tokens, valid


def decode_ground_truth(
    tokens: np.ndarray,
    valid: np.ndarray,
    bounds: SceneBounds = DEFAULT_BOUNDS,
    vocab: AttributeVocabulary = DEFAULT_VOCAB,
) -> list[ObjectSpec]:
    """Inverse of encode_ground_truth over the unmasked rows."""
    out = []
    for row, ok in zip(np.asarray(tokens, dtype=np.float64), valid):
        if not ok:
            continue
        out.append(
            ObjectSpec(
                shape=round(row[0] * (len(vocab.shapes) - 1)),
                color=round(row[1] * (len(vocab.colors) - 1)),
                size=round(row[2] * (len(vocab.sizes) - 1)),
                material=round(row[3] * (len(vocab.materials) - 1)),
                position=(
                    _denormalize_axis(row[4], *bounds.x),
                    _denormalize_axis(row[5], *bounds.y),
                    _denormalize_axis(row[6], *bounds.z),
                ),
            )
        )
    return out


# CLEVR palette, 8-bit RGB.
COLOR_RGB = {
    "gray": (87, 87, 87),
    "red": (173, 35, 35),
    "blue": (42, 75, 215),
    "green": (29, 105, 20),
    "brown": (129, 74, 25),
    "purple": (129, 38, 192),
    "cyan": (41, 208, 208),
    "yellow": (255, 238, 51),
}
MATERIAL_BRIGHTNESS = {"rubber": 0.8, "metal": 1.25}
BACKGROUND = 0.92


def rasterize_scene(
    scene: Scene,
    height: int = 48,
    width: int = 48,
    vocab: AttributeVocabulary = DEFAULT_VOCAB,
) -> np.ndarray:
    """Deterministic orthographic top-down drawing of a scene.

    Cubes draw as squares, spheres as circles, cylinders as triangles;
    fill color comes from the palette, radius from the size, brightness
    from the material. Objects are painted in increasing-y order, so later
    (more distant) objects overwrite earlier ones.
    """
    if height < 32 or width < 32:
        raise DataError("rasterization needs height and width >= 32")
    img = np.full((height, width, 3), BACKGROUND, dtype=np.float32)
    b = scene.bounds
    rows, cols = np.mgrid[0:height, 0:width]
    order = sorted(range(len(scene.objects)), key=lambda i: (scene.objects[i].position[1], i))
    for i in order:
        obj = scene.objects[i]
        cx = (obj.position[0] - b.x[0]) / (b.x[1] - b.x[0]) * (width - 1)
        cy = (obj.position[1] - b.y[0]) / (b.y[1] - b.y[0]) * (height - 1)
        r = SIZE_RADIUS[vocab.sizes[obj.size]] / (b.x[1] - b.x[0]) * (width - 1)
        dx = cols - cx
        dy = rows - cy
        shape = vocab.shapes[obj.shape]
        if shape == "cube":
            mask = (np.abs(dx) <= r) & (np.abs(dy) <= r)
        elif shape == "sphere":
            mask = dx**2 + dy**2 <= r**2
        else:  # cylinder -> upward triangle
            half_width = (r - dy) / 2.0
            mask = (dy >= -r) & (dy <= r) & (np.abs(dx) <= np.maximum(half_width, 0.0))
        rgb = np.array(COLOR_RGB[vocab.colors[obj.color]], dtype=np.float32) / 255.0
        rgb = np.clip(rgb * MATERIAL_BRIGHTNESS[vocab.materials[obj.material]], 0.0, 1.0)
        img[mask] = rgb
    return img


def image_to_png(img: np.ndarray, path) -> None:
    from PIL import Image

    arr = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def scene_to_record(scene: Scene, vocab: AttributeVocabulary = DEFAULT_VOCAB) -> dict:
    return {
        "image_index": scene.id,
        "objects": [
            {
                "shape": vocab.shapes[o.shape],
                "color": vocab.colors[o.color],
                "size": vocab.sizes[o.size],
                "material": vocab.materials[o.material],
                "3d_coords": list(o.position),
            }
            for o in scene.objects
        ],
        "directions": {k: list(v) for k, v in scene.directions.items()},
    }


def save_scenes(scenes: list[Scene], path, vocab: AttributeVocabulary = DEFAULT_VOCAB) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"scenes": [scene_to_record(s, vocab) for s in scenes]}, fh)


def load_scenes(
    path,
    vocab: AttributeVocabulary = DEFAULT_VOCAB,
    k_max: int = K_MAX,
    bounds: SceneBounds = DEFAULT_BOUNDS,
) -> list[Scene]:
    """Parse a scenes JSON file into Scene values, validating the schema."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "scenes" not in payload:
        raise DataError(f"{path}: missing top-level 'scenes' list")
    scenes = []
    for rec_no, rec in enumerate(payload["scenes"]):
        for key in ("image_index", "objects"):
            if key not in rec:
                raise DataError(f"{path}: scene record {rec_no} missing field '{key}'")
        objects = []
        for obj_no, obj in enumerate(rec["objects"]):
            for key in ("shape", "color", "size", "material", "3d_coords"):
                if key not in obj:
                    raise DataError(
                        f"{path}: scene {rec['image_index']} object {obj_no} missing field '{key}'"
                    )
            coords = obj["3d_coords"]
            if len(coords) != 3 or not all(np.isfinite(c) for c in coords):
                raise DataError(
                    f"{path}: scene {rec['image_index']} object {obj_no} has bad 3d_coords {coords!r}"
                )
            objects.append(
                ObjectSpec(
                    shape=vocab.index_of("shape", obj["shape"]),
                    color=vocab.index_of("color", obj["color"]),
                    size=vocab.index_of("size", obj["size"]),
                    material=vocab.index_of("material", obj["material"]),
                    position=tuple(float(c) for c in coords),
                )
            )
        directions = dict(CANONICAL_DIRECTIONS)
        for name, vec in rec.get("directions", {}).items():
            if name in directions:
                directions[name] = tuple(float(v) for v in vec)
        scenes.append(
            Scene(id=int(rec["image_index"]), objects=objects, k_max=k_max, bounds=bounds, directions=directions)
        )
    return scenes
