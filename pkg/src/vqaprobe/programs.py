"""Functional programs over scenes and their executor (the answer oracle).

A program is a DAG of typed primitives. Types are checked statically once
per program; the only runtime failure is `unique` applied to a set that is
not a singleton, which question generation uses as a rejection signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidProgram
from .scenes import AttributeVocabulary, DEFAULT_VOCAB, Scene

T_SET = "object_set"
T_OBJ = "object"
T_INT = "integer"
T_BOOL = "boolean"
T_ATTR = "attribute"

CATEGORIES = ("shape", "color", "size", "material")

# kind -> (input types, output type, takes value argument)
SIGNATURES: dict[str, tuple[tuple[str, ...], str, bool]] = {
    "scene": ((), T_SET, False),
    "unique": ((T_SET,), T_OBJ, False),
    "relate": ((T_OBJ,), T_SET, True),
    "count": ((T_SET,), T_INT, False),
    "exist": ((T_SET,), T_BOOL, False),
    "equal_integer": ((T_INT, T_INT), T_BOOL, False),
    "less_than": ((T_INT, T_INT), T_BOOL, False),
    "greater_than": ((T_INT, T_INT), T_BOOL, False),
}
for _cat in CATEGORIES:
    SIGNATURES[f"filter_{_cat}"] = ((T_SET,), T_SET, True)
    SIGNATURES[f"query_{_cat}"] = ((T_OBJ,), T_ATTR, False)
    SIGNATURES[f"same_{_cat}"] = ((T_OBJ,), T_SET, False)
    SIGNATURES[f"equal_{_cat}"] = ((T_ATTR, T_ATTR), T_BOOL, False)

RELATION_EPS = 1e-9


@dataclass(frozen=True)
class ProgramNode:
    kind: str
    value: str | None = None
    inputs: tuple[int, ...] = ()


@dataclass
class Program:
    nodes: list[ProgramNode]
    output: int = -1
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        if self.output < 0:
            self.output = len(self.nodes) - 1

    @property
    def result_type(self) -> str:
        return SIGNATURES[self.nodes[self.output].kind][1]


def validate_program(program: Program, vocab: AttributeVocabulary = DEFAULT_VOCAB) -> None:
    """Static check: known primitives, DAG order, arity, and input types."""
    if not program.nodes:
        raise InvalidProgram("empty program")
    if not (0 <= program.output < len(program.nodes)):
        raise InvalidProgram(f"output index {program.output} out of range")
    out_types = []
    for idx, node in enumerate(program.nodes):
        sig = SIGNATURES.get(node.kind)
        if sig is None:
            raise InvalidProgram(f"unknown primitive {node.kind!r}")
        in_types, _out, takes_value = sig
        if len(node.inputs) != len(in_types):
            raise InvalidProgram(f"node {idx} ({node.kind}): expected {len(in_types)} inputs, got {len(node.inputs)}")
        for j, want in zip(node.inputs, in_types):
            if not (0 <= j < idx):
                raise InvalidProgram(f"node {idx} ({node.kind}): input {j} does not precede it")
            if out_types[j] != want:
                raise InvalidProgram(
                    f"node {idx} ({node.kind}): input {j} has type {out_types[j]}, expected {want}"
                )
        if takes_value:
            if node.value is None:
                raise InvalidProgram(f"node {idx} ({node.kind}): missing value argument")
            if node.kind == "relate":
                if node.value not in ("left", "right", "front", "behind"):
                    raise InvalidProgram(f"node {idx}: unknown relation {node.value!r}")
            else:
                cat = node.kind.split("_", 1)[1]
                if node.value not in vocab.categories[cat]:
                    raise InvalidProgram(f"node {idx}: unknown {cat} {node.value!r}")
        elif node.value is not None:
            raise InvalidProgram(f"node {idx} ({node.kind}): unexpected value argument")
        out_types.append(sig[1])
    program._checked = True


def execute(program: Program, scene: Scene, vocab: AttributeVocabulary = DEFAULT_VOCAB):
    """Run a program against a scene; returns bool, int, or an attribute name.

    Raises InvalidProgram for ill-typed programs and for `unique` on a set
    of size != 1.
    """
    if not program._checked:
        validate_program(program, vocab)
    objs = scene.objects
    attrs = {cat: tuple(o.attribute(cat, vocab) for o in objs) for cat in CATEGORIES}
    dirs = scene.directions
    all_idx = tuple(range(len(objs)))
    results: list = []
    for node in program.nodes:
        kind = node.kind
        if kind == "scene":
            value = all_idx
        elif kind.startswith("filter_"):
            cat, want, src = kind[7:], node.value, results[node.inputs[0]]
            table = attrs[cat]
            value = tuple(i for i in src if table[i] == want)
        elif kind == "unique":
            src = results[node.inputs[0]]
            if len(src) != 1:
                raise InvalidProgram(f"unique applied to a set of size {len(src)}")
            value = src[0]
        elif kind == "relate":
            anchor = results[node.inputs[0]]
            d = dirs[node.value]
            px, py, _ = objs[anchor].position
            value = tuple(
                i
                for i in all_idx
                if i != anchor
                and (objs[i].position[0] - px) * d[0] + (objs[i].position[1] - py) * d[1] > RELATION_EPS
            )
        elif kind == "count":
            value = len(results[node.inputs[0]])
        elif kind == "exist":
            value = len(results[node.inputs[0]]) > 0
        elif kind.startswith("query_"):
            value = attrs[kind[6:]][results[node.inputs[0]]]
        elif kind.startswith("same_"):
            cat = kind[5:]
            anchor = results[node.inputs[0]]
            table = attrs[cat]
            want = table[anchor]
            value = tuple(i for i in all_idx if i != anchor and table[i] == want)
        elif kind == "equal_integer":
            value = results[node.inputs[0]] == results[node.inputs[1]]
        elif kind == "less_than":
            value = results[node.inputs[0]] < results[node.inputs[1]]
        elif kind == "greater_than":
            value = results[node.inputs[0]] > results[node.inputs[1]]
        else:  # equal_<category>
            value = results[node.inputs[0]] == results[node.inputs[1]]
        results.append(value)
    return results[program.output]


def program_to_records(program: Program) -> list[dict]:
    """Official-style JSON encoding of a program."""
    return [
        {
            "function": n.kind,
            "value_inputs": [] if n.value is None else [n.value],
            "inputs": list(n.inputs),
        }
        for n in program.nodes
    ]


def program_from_records(records: list[dict]) -> Program:
    nodes = []
    for rec in records:
        if "function" not in rec:
            raise InvalidProgram("program record missing 'function'")
        values = rec.get("value_inputs", [])
        if len(values) > 1:
            raise InvalidProgram(f"{rec['function']}: more than one value input")
        nodes.append(
            ProgramNode(
                kind=rec["function"],
                value=values[0] if values else None,
                inputs=tuple(rec.get("inputs", [])),
            )
        )
    return Program(nodes=nodes)
