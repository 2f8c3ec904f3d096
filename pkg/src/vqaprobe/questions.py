"""Question templates, generation with rejection sampling, and ingestion.

Questions JSON schema (official-style):
    {"questions": [{"image_index": int, "question": str,
                    "program": [{"function": str, "value_inputs": [...],
                                 "inputs": [...]}],
                    "answer": str}]}

A generated question is kept only if its program executes successfully and
a degeneracy filter passes: at least one edit in a scene-edit neighborhood
(object removals, single-attribute changes, one insertion) must change the
answer, so questions answerable from priors alone are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AnswerMismatch, DataError, GenerationExhausted, InvalidProgram
from .programs import Program, ProgramNode, execute, program_from_records, program_to_records
from .scenes import AttributeVocabulary, DEFAULT_VOCAB, ObjectSpec, Scene, SIZE_RADIUS
from .seeding import substream

FAMILIES = ("count", "exist", "compare_number", "query_attribute", "compare_attribute")
ANSWER_TYPES = ("binary", "count", "attribute")
RELATIONS = ("left", "right", "front", "behind")
RELATION_PHRASE = {"left": "left of", "right": "right of", "front": "in front of", "behind": "behind"}
CATEGORIES = ("size", "color", "material", "shape")


def answer_type_of(family: str) -> str:
    if family == "count":
        return "count"
    if family == "query_attribute":
        return "attribute"
    return "binary"


def answer_to_text(answer) -> str:
    if isinstance(answer, bool):
        return "yes" if answer else "no"
    if isinstance(answer, (int, np.integer)):
        return str(int(answer))
    return str(answer)


def text_to_answer(family: str, text: str):
    kind = answer_type_of(family)
    if kind == "binary":
        if text not in ("yes", "no"):
            raise DataError(f"binary answer must be yes/no, got {text!r}")
        return text == "yes"
    if kind == "count":
        return int(text)
    return text


@dataclass
class Question:
    id: str
    scene_id: int
    family: str
    program: Program
    text: str
    answer: bool | int | str
    template: str = ""
    params: dict = field(default_factory=dict)

    @property
    def answer_type(self) -> str:
        return answer_type_of(self.family)


# ---------------------------------------------------------------------------
# Descriptors: partial attribute constraints that name one or more objects.

def _descriptor_words(desc: dict, plural: bool = False) -> str:
    words = [desc[c] for c in ("size", "color", "material") if c in desc]
    noun = desc.get("shape", "object")
    words.append(noun + "s" if plural else noun)
    return " ".join(words)


def _filter_nodes(desc: dict, src: int, start: int) -> list[ProgramNode]:
    nodes = []
    prev = src
    for cat in CATEGORIES:
        if cat in desc:
            nodes.append(ProgramNode(f"filter_{cat}", desc[cat], (prev,)))
            prev = start + len(nodes) - 1
    return nodes


def _chain(*segments) -> Program:
    """Assemble a program from descriptor dicts and (kind, value) steps.

    Each dict appends its filter chain to the current head; each tuple
    appends one node consuming the current head. A segment of the form
    ("scene",) resets the head to a fresh scene node.
    """
    nodes: list[ProgramNode] = []
    head = -1
    heads: list[int] = []
    for seg in segments:
        if isinstance(seg, dict):
            for cat in CATEGORIES:
                if cat in seg:
                    nodes.append(ProgramNode(f"filter_{cat}", seg[cat], (head,)))
                    head = len(nodes) - 1
        elif seg[0] == "scene":
            nodes.append(ProgramNode("scene"))
            head = len(nodes) - 1
        elif seg[0] == "mark":
            heads.append(head)
        elif seg[0] == "join":
            kind = seg[1]
            value = seg[2] if len(seg) > 2 else None
            nodes.append(ProgramNode(kind, value, (heads.pop(), head)))
            head = len(nodes) - 1
        else:
            kind = seg[0]
            value = seg[1] if len(seg) > 1 else None
            nodes.append(ProgramNode(kind, value, (head,)))
            head = len(nodes) - 1
    return Program(nodes=nodes, output=len(nodes) - 1)


def build_program(template: str, params: dict) -> Program:
    if template == "count_filtered":
        return _chain(("scene",), params["filters"], ("count",))
    if template == "count_relate":
        return _chain(
            ("scene",), params["anchor"], ("unique",), ("relate", params["relation"]),
            params["filters"], ("count",),
        )
    if template == "exist_filtered":
        return _chain(("scene",), params["filters"], ("exist",))
    if template == "exist_same":
        return _chain(("scene",), params["anchor"], ("unique",), (f"same_{params['category']}",), ("exist",))
    if template == "compare_counts":
        op = {"more": "greater_than", "fewer": "less_than", "equal": "equal_integer"}[params["op"]]
        return _chain(
            ("scene",), params["left"], ("count",), ("mark",),
            ("scene",), params["right"], ("count",), ("join", op),
        )
    if template == "query_direct":
        return _chain(("scene",), params["anchor"], ("unique",), (f"query_{params['category']}",))
    if template == "query_relate":
        return _chain(
            ("scene",), params["anchor"], ("unique",), ("relate", params["relation"]),
            params["target"], ("unique",), (f"query_{params['category']}",),
        )
    if template == "compare_attr":
        cat = params["category"]
        return _chain(
            ("scene",), params["left"], ("unique",), (f"query_{cat}",), ("mark",),
            ("scene",), params["right"], ("unique",), (f"query_{cat}",), ("join", f"equal_{cat}"),
        )
    raise DataError(f"unknown template {template!r}")


def render_text(template: str, params: dict) -> str:
    if template == "count_filtered":
        return f"how many {_descriptor_words(params['filters'], plural=True)} are there?"
    if template == "count_relate":
        return (
            f"how many {_descriptor_words(params['filters'], plural=True)} are "
            f"{RELATION_PHRASE[params['relation']]} the {_descriptor_words(params['anchor'])}?"
        )
    if template == "exist_filtered":
        return f"is there a {_descriptor_words(params['filters'])}?"
    if template == "exist_same":
        return (
            f"is there another object with the same {params['category']} as the "
            f"{_descriptor_words(params['anchor'])}?"
        )
    if template == "compare_counts":
        left = _descriptor_words(params["left"], plural=True)
        right = _descriptor_words(params["right"], plural=True)
        if params["op"] == "more":
            return f"are there more {left} than {right}?"
        if params["op"] == "fewer":
            return f"are there fewer {left} than {right}?"
        return f"are there the same number of {left} and {right}?"
    if template == "query_direct":
        return f"what {params['category']} is the {_descriptor_words(params['anchor'])}?"
    if template == "query_relate":
        return (
            f"what {params['category']} is the {_descriptor_words(params['target'])} "
            f"{RELATION_PHRASE[params['relation']]} the {_descriptor_words(params['anchor'])}?"
        )
    if template == "compare_attr":
        return (
            f"does the {_descriptor_words(params['left'])} have the same {params['category']} "
            f"as the {_descriptor_words(params['right'])}?"
        )
    raise DataError(f"unknown template {template!r}")


TEMPLATES: dict[str, tuple[str, ...]] = {
    "count": ("count_filtered", "count_relate"),
    "exist": ("exist_filtered", "exist_same"),
    "compare_number": ("compare_counts",),
    "query_attribute": ("query_direct", "query_relate"),
    "compare_attribute": ("compare_attr",),
}


def terminal_family(program: Program) -> str:
    kind = program.nodes[program.output].kind
    if kind == "count":
        return "count"
    if kind == "exist":
        return "exist"
    if kind in ("equal_integer", "less_than", "greater_than"):
        return "compare_number"
    if kind.startswith("query_"):
        return "query_attribute"
    if kind.startswith("equal_"):
        return "compare_attribute"
    raise DataError(f"terminal primitive {kind!r} does not map to a question family")


# ---------------------------------------------------------------------------
# Sampling

def _sample_descriptor(rng, scene: Scene, vocab: AttributeVocabulary, exclude: tuple[str, ...] = ()) -> dict:
    cats = [c for c in CATEGORIES if c not in exclude]
    if len(scene.objects) > 0 and rng.random() < 0.5:
        obj = scene.objects[int(rng.integers(len(scene.objects)))]
        n = int(rng.integers(1, min(3, len(cats)) + 1))
        chosen = list(rng.choice(len(cats), size=n, replace=False))
        return {cats[i]: obj.attribute(cats[i], vocab) for i in sorted(chosen)}
    n = int(rng.integers(1, 3))
    chosen = list(rng.choice(len(cats), size=min(n, len(cats)), replace=False))
    return {cats[i]: vocab.categories[cats[i]][int(rng.integers(len(vocab.categories[cats[i]])))] for i in sorted(chosen)}


def _sample_unique_descriptor(
    rng, scene: Scene, vocab: AttributeVocabulary,
    exclude: tuple[str, ...] = (), skip: int | None = None,
) -> dict | None:
    """Descriptor matching exactly one object of the scene, or None.

    Scans objects in a random order so a uniquely describable object is
    found whenever one exists; `skip` rules one object index out."""
    if not scene.objects:
        return None
    cats = [c for c in CATEGORIES if c not in exclude]
    for obj_i in rng.permutation(len(scene.objects)):
        if skip is not None and obj_i == skip:
            continue
        obj = scene.objects[obj_i]
        order = list(rng.permutation(len(cats)))
        desc: dict = {}
        matches = []
        for k in order:
            cat = cats[k]
            desc[cat] = obj.attribute(cat, vocab)
            matches = _matching(scene, desc, vocab)
            if len(matches) == 1:
                return desc
    return None


def _matching(scene: Scene, desc: dict, vocab: AttributeVocabulary) -> list[int]:
    return [
        i
        for i, o in enumerate(scene.objects)
        if all(o.attribute(c, vocab) == v for c, v in desc.items())
    ]


def _sample_params(rng, template: str, scene: Scene, vocab: AttributeVocabulary) -> dict | None:
    if template == "count_filtered":
        return {"filters": _sample_descriptor(rng, scene, vocab)}
    if template == "count_relate":
        anchor = _sample_unique_descriptor(rng, scene, vocab)
        if anchor is None:
            return None
        filters = _sample_descriptor(rng, scene, vocab) if rng.random() < 0.5 else {}
        return {"anchor": anchor, "relation": RELATIONS[int(rng.integers(4))], "filters": filters}
    if template == "exist_filtered":
        return {"filters": _sample_descriptor(rng, scene, vocab)}
    if template == "exist_same":
        cat = CATEGORIES[int(rng.integers(4))]
        anchor = _sample_unique_descriptor(rng, scene, vocab)
        if anchor is None:
            return None
        return {"anchor": anchor, "category": cat}
    if template == "compare_counts":
        left = _sample_descriptor(rng, scene, vocab)
        right = _sample_descriptor(rng, scene, vocab)
        if left == right:
            return None
        op = ("more", "fewer", "equal")[int(rng.integers(3))]
        return {"op": op, "left": left, "right": right}
    if template == "query_direct":
        cat = CATEGORIES[int(rng.integers(4))]
        anchor = _sample_unique_descriptor(rng, scene, vocab, exclude=(cat,))
        if anchor is None:
            return None
        return {"anchor": anchor, "category": cat}
    if template == "query_relate":
        cat = CATEGORIES[int(rng.integers(4))]
        anchor = _sample_unique_descriptor(rng, scene, vocab)
        if anchor is None:
            return None
        relation = RELATIONS[int(rng.integers(4))]
        target = _sample_descriptor(rng, scene, vocab, exclude=(cat,))
        return {"anchor": anchor, "relation": relation, "target": target, "category": cat}
    if template == "compare_attr":
        cat = CATEGORIES[int(rng.integers(4))]
        left = _sample_unique_descriptor(rng, scene, vocab, exclude=(cat,))
        if left is None:
            return None
        left_obj = _matching(scene, left, vocab)[0]
        right = _sample_unique_descriptor(rng, scene, vocab, exclude=(cat,), skip=left_obj)
        if right is None or right == left:
            return None
        return {"left": left, "right": right, "category": cat}
    raise DataError(f"unknown template {template!r}")


# ---------------------------------------------------------------------------
# Degeneracy filter

_ADD_SPOTS = ((0.0, 0.0), (1.6, 1.6), (-1.6, 1.6), (1.6, -1.6), (-1.6, -1.6), (0.0, 2.2), (2.2, 0.0))


def _edited_scenes(scene: Scene, vocab: AttributeVocabulary, hint: dict):
    """Single-edit neighborhood: removals, attribute bumps, one insertion."""
    for i in range(len(scene.objects)):
        yield Scene(
            id=scene.id,
            objects=scene.objects[:i] + scene.objects[i + 1 :],
            k_max=scene.k_max,
            bounds=scene.bounds,
            directions=scene.directions,
        )
    for i, obj in enumerate(scene.objects):
        for cat in CATEGORIES:
            values = vocab.categories[cat]
            current = {"shape": obj.shape, "color": obj.color, "size": obj.size, "material": obj.material}[cat]
            bumped = (current + 1) % len(values)
            changed = ObjectSpec(
                shape=bumped if cat == "shape" else obj.shape,
                color=bumped if cat == "color" else obj.color,
                size=bumped if cat == "size" else obj.size,
                material=bumped if cat == "material" else obj.material,
                position=obj.position,
            )
            yield Scene(
                id=scene.id,
                objects=scene.objects[:i] + [changed] + scene.objects[i + 1 :],
                k_max=scene.k_max,
                bounds=scene.bounds,
                directions=scene.directions,
            )
    if len(scene.objects) < scene.k_max:
        size_name = hint.get("size", vocab.sizes[0])
        for sx, sy in _ADD_SPOTS:
            if all((sx - o.position[0]) ** 2 + (sy - o.position[1]) ** 2 >= 0.75**2 for o in scene.objects):
                extra = ObjectSpec(
                    shape=vocab.index_of("shape", hint.get("shape", vocab.shapes[0])),
                    color=vocab.index_of("color", hint.get("color", vocab.colors[0])),
                    size=vocab.index_of("size", size_name),
                    material=vocab.index_of("material", hint.get("material", vocab.materials[0])),
                    position=(sx, sy, SIZE_RADIUS[size_name]),
                )
                yield Scene(
                    id=scene.id,
                    objects=scene.objects + [extra],
                    k_max=scene.k_max,
                    bounds=scene.bounds,
                    directions=scene.directions,
                )
                break


def _is_degenerate(program: Program, scene: Scene, answer, params: dict, vocab: AttributeVocabulary) -> bool:
    hint = params.get("filters") or params.get("left") or params.get("anchor") or {}
    for edited in _edited_scenes(scene, vocab, hint):
        try:
            other = execute(program, edited, vocab)
        except InvalidProgram:
            continue
        if other != answer:
            return False
    return True


def generate_questions(
    scene: Scene,
    seed: int,
    per_family: dict[str, int] | None = None,
    vocab: AttributeVocabulary = DEFAULT_VOCAB,
    max_attempts: int = 300,
) -> list[Question]:
    """Instantiate questions for one scene, deterministically in (seed, scene.id).

    Binary families alternate a target answer drawn per slot so that neither
    answer dominates the corpus.
    """
    per_family = per_family or {f: 2 for f in FAMILIES}
    rng = substream(seed, "questions", scene.id)
    out: list[Question] = []
    for family in FAMILIES:
        want_n = per_family.get(family, 0)
        if want_n < 0:
            raise DataError(f"negative question count for family {family}")
        for slot in range(want_n):
            binary = answer_type_of(family) == "binary"
            target = bool(rng.integers(2)) if binary else None
            fallback: Question | None = None
            accepted: Question | None = None
            for _attempt in range(max_attempts):
                template = TEMPLATES[family][int(rng.integers(len(TEMPLATES[family])))]
                params = _sample_params(rng, template, scene, vocab)
                if params is None:
                    continue
                program = build_program(template, params)
                try:
                    answer = execute(program, scene, vocab)
                except InvalidProgram:
                    continue
                if _is_degenerate(program, scene, answer, params, vocab):
                    continue
                q = Question(
                    id=f"q{scene.id}_{len(out)}",
                    scene_id=scene.id,
                    family=family,
                    program=program,
                    text=render_text(template, params),
                    answer=answer,
                    template=template,
                    params=params,
                )
                if not binary or answer == target:
                    accepted = q
                    break
                if fallback is None:
                    fallback = q
            chosen = accepted or fallback
            if chosen is None:
                raise GenerationExhausted(
                    f"scene {scene.id}: no viable {family} question after {max_attempts} attempts"
                )
            out.append(chosen)
    return out


def questions_to_json(questions: list[Question]) -> dict:
    return {
        "questions": [
            {
                "image_index": q.scene_id,
                "question": q.text,
                "program": program_to_records(q.program),
                "answer": answer_to_text(q.answer),
            }
            for q in questions
        ]
    }


def load_questions(path, scenes: dict[int, Scene], vocab: AttributeVocabulary = DEFAULT_VOCAB) -> list[Question]:
    """Read a questions JSON file, re-executing every program as a check."""
    import json

    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "questions" not in payload:
        raise DataError(f"{path}: missing top-level 'questions' list")
    out = []
    for i, rec in enumerate(payload["questions"]):
        for key in ("image_index", "question", "program", "answer"):
            if key not in rec:
                raise DataError(f"{path}: question record {i} missing field '{key}'")
        scene_id = int(rec["image_index"])
        if scene_id not in scenes:
            raise DataError(f"{path}: question record {i} references unknown scene {scene_id}")
        program = program_from_records(rec["program"])
        family = terminal_family(program)
        answer = execute(program, scenes[scene_id], vocab)
        stored = text_to_answer(family, rec["answer"])
        if stored != answer:
            raise AnswerMismatch(
                f"question {i} (scene {scene_id}): stored answer "
                f"{rec['answer']!r} but execution gives {answer_to_text(answer)!r}"
            )
        out.append(
            Question(
                id=f"loaded_{i}",
                scene_id=scene_id,
                family=family,
                program=program,
                text=rec["question"],
                answer=answer,
            )
        )
    return out
