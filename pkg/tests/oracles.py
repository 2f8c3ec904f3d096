"""Independent oracles used by the test suite.

Each oracle recomputes a result by a different route than the code under
test: finite differences instead of the tape, a covariance eigensolver
instead of SVD, explicit loops instead of vectorized pooling, and direct
set semantics instead of program execution.
"""

from __future__ import annotations

import itertools

import numpy as np

from vqaprobe.scenes import AttributeVocabulary, ObjectSpec, Scene

# --- finite differences -------------------------------------------------------

FD_STEP = 1e-3


def finite_difference(forward_fn, arrays: list[np.ndarray], h: float = FD_STEP) -> list[np.ndarray]:
    """Central differences of a scalar function, accumulated in float64.

    forward_fn receives float64 copies of the arrays and must return a
    python float.
    """
    grads = []
    for which in range(len(arrays)):
        base = [np.array(a, dtype=np.float64) for a in arrays]
        g = np.zeros_like(base[which])
        flat = base[which].reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(forward_fn(*base))
            flat[i] = orig - h
            f_minus = float(forward_fn(*base))
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def assert_close_fd(ad_grad: np.ndarray, fd_grad: np.ndarray, rel: float = 1e-3, floor: float = 1e-5):
    diff = np.abs(np.asarray(ad_grad, dtype=np.float64) - fd_grad)
    tol = np.maximum(rel * np.abs(fd_grad), floor)
    worst = (diff - tol).max()
    assert (diff <= tol).all(), f"gradient mismatch: worst excess {worst:.3e}"


# --- pooling -------------------------------------------------------------------

def pool_by_loops(grid: np.ndarray, g: int) -> np.ndarray:
    h, w, d = grid.shape
    out = np.zeros((g, g, d), dtype=np.float64)
    for i in range(g):
        for j in range(g):
            acc = np.zeros(d, dtype=np.float64)
            n = 0
            for r in range(i * h // g, (i + 1) * h // g):
                for c in range(j * w // g, (j + 1) * w // g):
                    acc += grid[r, c]
                    n += 1
            out[i, j] = acc / n
    return out


# --- PCA -----------------------------------------------------------------------

def pca_by_covariance(samples: np.ndarray, d_out: int):
    """Principal directions from the dense symmetric eigensolver on the
    covariance matrix; returns (mean, components, variances)."""
    x = np.asarray(samples, dtype=np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (len(x) - 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    comps = v[:, order[:d_out]].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return mean, comps, w[order[:d_out]]


def reconstruction_error(samples: np.ndarray, mean: np.ndarray, components: np.ndarray) -> float:
    x = np.asarray(samples, dtype=np.float64) - mean
    proj = x @ components.T
    back = proj @ components
    return float(((x - back) ** 2).mean())


# --- brute-force question semantics ---------------------------------------------

def _matches(obj: ObjectSpec, desc: dict, vocab: AttributeVocabulary) -> bool:
    return all(obj.attribute(cat, vocab) == val for cat, val in desc.items())


def _select(scene: Scene, desc: dict, vocab: AttributeVocabulary) -> list[int]:
    return [i for i, o in enumerate(scene.objects) if _matches(o, desc, vocab)]


def _in_direction(scene: Scene, anchor: int, other: int, relation: str) -> bool:
    d = scene.directions[relation]
    pa = scene.objects[anchor].position
    po = scene.objects[other].position
    return (po[0] - pa[0]) * d[0] + (po[1] - pa[1]) * d[1] > 1e-9


INVALID = object()  # brute-force marker for "no unique referent"


def brute_force_answer(template: str, params: dict, scene: Scene, vocab: AttributeVocabulary):
    """Direct semantics for each template, bypassing programs entirely.

    Returns INVALID where execution would reject (unique on a non-singleton
    set)."""
    if template == "count_filtered":
        return len(_select(scene, params["filters"], vocab))
    if template == "exist_filtered":
        return len(_select(scene, params["filters"], vocab)) > 0
    if template == "compare_counts":
        a = len(_select(scene, params["left"], vocab))
        b = len(_select(scene, params["right"], vocab))
        return {"more": a > b, "fewer": a < b, "equal": a == b}[params["op"]]
    if template == "count_relate":
        anchors = _select(scene, params["anchor"], vocab)
        if len(anchors) != 1:
            return INVALID
        related = [
            i for i in range(len(scene.objects))
            if i != anchors[0] and _in_direction(scene, anchors[0], i, params["relation"])
        ]
        return len([i for i in related if _matches(scene.objects[i], params["filters"], vocab)])
    if template == "exist_same":
        anchors = _select(scene, params["anchor"], vocab)
        if len(anchors) != 1:
            return INVALID
        a = anchors[0]
        want = scene.objects[a].attribute(params["category"], vocab)
        return any(
            i != a and scene.objects[i].attribute(params["category"], vocab) == want
            for i in range(len(scene.objects))
        )
    if template == "query_direct":
        anchors = _select(scene, params["anchor"], vocab)
        if len(anchors) != 1:
            return INVALID
        return scene.objects[anchors[0]].attribute(params["category"], vocab)
    if template == "query_relate":
        anchors = _select(scene, params["anchor"], vocab)
        if len(anchors) != 1:
            return INVALID
        related = [
            i for i in range(len(scene.objects))
            if i != anchors[0] and _in_direction(scene, anchors[0], i, params["relation"])
        ]
        hits = [i for i in related if _matches(scene.objects[i], params["target"], vocab)]
        if len(hits) != 1:
            return INVALID
        return scene.objects[hits[0]].attribute(params["category"], vocab)
    if template == "compare_attr":
        left = _select(scene, params["left"], vocab)
        right = _select(scene, params["right"], vocab)
        if len(left) != 1 or len(right) != 1:
            return INVALID
        cat = params["category"]
        return scene.objects[left[0]].attribute(cat, vocab) == scene.objects[right[0]].attribute(cat, vocab)
    raise AssertionError(f"unknown template {template}")


# --- reduced-vocabulary exhaustive enumeration ----------------------------------

REDUCED_VOCAB = AttributeVocabulary()  # full vocab object; reduction is in the value sets below
REDUCED_SHAPES = ("cube", "sphere")
REDUCED_COLORS = ("gray", "red")
REDUCED_SIZE = "small"
REDUCED_MATERIAL = "rubber"
GRID_POSITIONS = tuple((float(x), float(y)) for x in (-2.0, 0.0, 2.0) for y in (-2.0, 0.0, 2.0))


def enumerate_reduced_scenes(max_objects: int = 3):
    """Every scene of 0..max_objects objects over 2 shapes x 2 colors on a
    3x3 position grid (size/material fixed). Object lists are ordered by
    position slot, which is answer-irrelevant."""
    vocab = REDUCED_VOCAB
    types = [
        (vocab.index_of("shape", s), vocab.index_of("color", c))
        for s in REDUCED_SHAPES
        for c in REDUCED_COLORS
    ]
    size_i = vocab.index_of("size", REDUCED_SIZE)
    mat_i = vocab.index_of("material", REDUCED_MATERIAL)
    scene_id = 0
    for n in range(max_objects + 1):
        for spots in itertools.combinations(range(len(GRID_POSITIONS)), n):
            for assignment in itertools.product(types, repeat=n):
                objects = [
                    ObjectSpec(shape=t[0], color=t[1], size=size_i, material=mat_i,
                               position=(GRID_POSITIONS[s][0], GRID_POSITIONS[s][1], 0.35))
                    for s, t in zip(spots, assignment)
                ]
                yield Scene(id=scene_id, objects=objects)
                scene_id += 1


def enumerate_reduced_instantiations():
    """All template parameterizations over the reduced vocabulary."""
    descs = [{}]
    for s in REDUCED_SHAPES:
        descs.append({"shape": s})
    for c in REDUCED_COLORS:
        descs.append({"color": c})
    for s in REDUCED_SHAPES:
        for c in REDUCED_COLORS:
            descs.append({"color": c, "shape": s})
    categories = ("size", "color", "material", "shape")
    relations = ("left", "right", "front", "behind")
    for d in descs:
        yield "count_filtered", {"filters": d}
        yield "exist_filtered", {"filters": d}
    for anchor in descs:
        for rel in relations:
            for filt in ({}, {"shape": "cube"}, {"color": "red"}):
                yield "count_relate", {"anchor": anchor, "relation": rel, "filters": filt}
            for cat in categories:
                for target in ({}, {"shape": "cube"}):
                    yield "query_relate", {"anchor": anchor, "relation": rel, "target": target, "category": cat}
        for cat in categories:
            yield "exist_same", {"anchor": anchor, "category": cat}
            yield "query_direct", {"anchor": anchor, "category": cat}
    for left in descs:
        for right in descs:
            for op in ("more", "fewer", "equal"):
                yield "compare_counts", {"op": op, "left": left, "right": right}
            for cat in categories:
                yield "compare_attr", {"left": left, "right": right, "category": cat}
