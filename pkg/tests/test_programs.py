import itertools

import pytest

from oracles import (
    INVALID,
    brute_force_answer,
    enumerate_reduced_instantiations,
    enumerate_reduced_scenes,
)
from vqaprobe.errors import InvalidProgram
from vqaprobe.programs import (
    Program,
    ProgramNode,
    execute,
    program_from_records,
    program_to_records,
    validate_program,
)
from vqaprobe.questions import build_program
from vqaprobe.scenes import DEFAULT_VOCAB, ObjectSpec, Scene, sample_scene


def _scene(*objs):
    return Scene(id=0, objects=list(objs))


RED_CUBE = ObjectSpec(shape=0, color=1, size=0, material=0, position=(0.0, 0.0, 0.35))
BLUE_SPHERE = ObjectSpec(shape=1, color=2, size=1, material=1, position=(2.0, 1.0, 0.7))
GRAY_CUBE = ObjectSpec(shape=0, color=0, size=0, material=0, position=(-2.0, -1.0, 0.35))


def test_count_empty_scene():
    program = Program([ProgramNode("scene"), ProgramNode("count", inputs=(0,))])
    assert execute(program, _scene()) == 0


def test_exist_red_cube():
    program = Program([
        ProgramNode("scene"),
        ProgramNode("filter_shape", "cube", (0,)),
        ProgramNode("filter_color", "red", (1,)),
        ProgramNode("exist", inputs=(2,)),
    ])
    assert execute(program, _scene(RED_CUBE, BLUE_SPHERE)) is True
    assert execute(program, _scene(BLUE_SPHERE)) is False


def test_unique_failure_modes():
    program = Program([
        ProgramNode("scene"),
        ProgramNode("filter_shape", "cube", (0,)),
        ProgramNode("unique", inputs=(1,)),
        ProgramNode("query_color", inputs=(2,)),
    ])
    assert execute(program, _scene(RED_CUBE, BLUE_SPHERE)) == "red"
    with pytest.raises(InvalidProgram):
        execute(program, _scene(RED_CUBE, GRAY_CUBE))
    with pytest.raises(InvalidProgram):
        execute(program, _scene(BLUE_SPHERE))


def test_relate_uses_scene_frame():
    # BLUE_SPHERE sits at x=+2 relative to RED_CUBE at x=0: it is right of it.
    program = Program([
        ProgramNode("scene"),
        ProgramNode("filter_color", "red", (0,)),
        ProgramNode("unique", inputs=(1,)),
        ProgramNode("relate", "right", (2,)),
        ProgramNode("count", inputs=(3,)),
    ])
    assert execute(program, _scene(RED_CUBE, BLUE_SPHERE)) == 1
    assert execute(program, _scene(RED_CUBE, GRAY_CUBE)) == 0


def test_same_excludes_anchor():
    program = Program([
        ProgramNode("scene"),
        ProgramNode("filter_color", "red", (0,)),
        ProgramNode("unique", inputs=(1,)),
        ProgramNode("same_shape", inputs=(2,)),
        ProgramNode("count", inputs=(3,)),
    ])
    assert execute(program, _scene(RED_CUBE, GRAY_CUBE, BLUE_SPHERE)) == 1


def test_static_type_checks():
    bad = Program([ProgramNode("scene"), ProgramNode("query_color", inputs=(0,))])
    with pytest.raises(InvalidProgram, match="type"):
        validate_program(bad)
    forward_ref = Program([ProgramNode("count", inputs=(1,)), ProgramNode("scene")], output=0)
    with pytest.raises(InvalidProgram):
        validate_program(forward_ref)
    unknown = Program([ProgramNode("scene"), ProgramNode("frobnicate", inputs=(0,))])
    with pytest.raises(InvalidProgram, match="frobnicate"):
        validate_program(unknown)
    bad_value = Program([ProgramNode("scene"), ProgramNode("filter_color", "mauve", (0,))])
    with pytest.raises(InvalidProgram, match="mauve"):
        validate_program(bad_value)


def test_compare_number_against_brute_force():
    # Independent enumeration over object subsets (the filter chains are
    # conjunctions, so matching = attribute equality on every constraint).
    scene = sample_scene(seed=77, n_objects=(3, 3))
    params = {"op": "more", "left": {"shape": "cube"}, "right": {"color": "red"}}
    program = build_program("compare_counts", params)
    got = execute(program, scene)
    cubes = sum(1 for o in scene.objects if o.attribute("shape") == "cube")
    reds = sum(1 for o in scene.objects if o.attribute("color") == "red")
    assert got == (cubes > reds)
    assert got == brute_force_answer("compare_counts", params, scene, DEFAULT_VOCAB)


def test_program_json_roundtrip():
    program = build_program("query_relate", {
        "anchor": {"color": "red"}, "relation": "behind",
        "target": {"shape": "sphere"}, "category": "material"})
    records = program_to_records(program)
    back = program_from_records(records)
    assert program_to_records(back) == records
    scene = _scene(RED_CUBE, BLUE_SPHERE)
    assert execute(back, scene) == execute(program, scene)


def test_executor_agrees_with_oracle_on_sample():
    # Smoke-sized slice of the exhaustive acceptance check: 2-object scenes.
    scenes = [s for s in enumerate_reduced_scenes(max_objects=2) if len(s) == 2]
    instantiations = list(enumerate_reduced_instantiations())
    programs = {}
    checked = 0
    for template, params in instantiations[::7]:
        key = (template, str(params))
        if key not in programs:
            programs[key] = build_program(template, params)
        program = programs[key]
        for scene in itertools.islice(scenes, 0, len(scenes), 13):
            expected = brute_force_answer(template, params, scene, DEFAULT_VOCAB)
            try:
                got = execute(program, scene)
            except InvalidProgram:
                got = INVALID
            assert got == expected or (got is INVALID and expected is INVALID)
            checked += 1
    assert checked > 2000
