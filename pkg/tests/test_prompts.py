import json

import pytest

from stagelora.categories import CHALLENGE_LABELS, RAFDB_COMPOUND_LABELS, normalize
from stagelora.errors import ContractError, SpecError
from stagelora.parsing import Category, NoPerson, parse
from stagelora.prompts import (
    CURATED_DESCRIPTIONS,
    SECTION_TITLES,
    CategoryDefinition,
    PromptSpec,
    attach,
    build_prompt,
    default_prompt_spec,
    describe,
)


def _definitions_section(prompt):
    start = prompt.index("Category Definitions:")
    end = prompt.index("Analysis Guidelines:")
    return prompt[start:end]


def test_seven_category_objective():
    prompt = build_prompt(default_prompt_spec(CHALLENGE_LABELS))
    assert "Your task is to analyze the facial expression" in prompt
    assert "classify it into one of the seven predefined categories" in prompt


def test_eleven_category_objective():
    prompt = build_prompt(default_prompt_spec(RAFDB_COMPOUND_LABELS))
    assert "one of the eleven predefined categories" in prompt


def test_sections_in_order():
    prompt = build_prompt(default_prompt_spec(["Sadly Angry", "Happily Surprised"]))
    positions = [prompt.index(f"{title}:") for title in SECTION_TITLES]
    assert positions == sorted(positions)
    assert "Sadly Angry" in prompt and "Happily Surprised" in prompt


@pytest.mark.parametrize("labels", [CHALLENGE_LABELS, RAFDB_COMPOUND_LABELS])
def test_each_name_once_in_definitions(labels):
    section = _definitions_section(build_prompt(default_prompt_spec(labels)))
    for name in labels:
        assert section.count(f"- {name}:") == 1


def test_output_templates_present():
    prompt = build_prompt(default_prompt_spec(CHALLENGE_LABELS))
    assert "The facial expression of the person in the image is '[Selected Category]'" in prompt
    assert "There is no one in the image" in prompt


def test_build_prompt_is_deterministic():
    spec = default_prompt_spec(CHALLENGE_LABELS)
    assert build_prompt(spec) == build_prompt(default_prompt_spec(CHALLENGE_LABELS))


def test_curated_descriptions_ship_verbatim():
    assert "widened eyes, raised eyebrows, and a slightly open mouth" in describe("Fearfully Surprised")
    for name, text in CURATED_DESCRIPTIONS.items():
        assert describe(name) == text


def test_composed_descriptions_mention_both_parents():
    text = describe("Sadly Angry")
    assert "sadness" in text and "anger" in text


def test_duplicate_categories_rejected():
    spec = PromptSpec("t", (CategoryDefinition("Sadly Angry", "x"), CategoryDefinition("sadly  angry", "y")))
    with pytest.raises(SpecError):
        build_prompt(spec)


def test_single_category_rejected():
    with pytest.raises(SpecError):
        build_prompt(PromptSpec("t", (CategoryDefinition("Sadly Angry", "x"),)))


def test_empty_description_rejected():
    spec = PromptSpec("t", (CategoryDefinition("A", "x"), CategoryDefinition("B", " ")))
    with pytest.raises(SpecError):
        spec.validate()


def test_spec_json_round_trip():
    spec = default_prompt_spec(CHALLENGE_LABELS)
    again = PromptSpec.from_json(spec.to_json())
    assert again == spec
    assert build_prompt(again) == build_prompt(spec)


def test_malformed_spec_json():
    with pytest.raises(SpecError):
        PromptSpec.from_json("{}")
    with pytest.raises(SpecError):
        PromptSpec.from_json(json.dumps({"task_objective": "t", "categories": [{"name": "A"}]}))


def test_prompt_names_recoverable_by_parser():
    labels = RAFDB_COMPOUND_LABELS
    section = _definitions_section(build_prompt(default_prompt_spec(labels)))
    emitted = [line[2:].split(":")[0] for line in section.splitlines() if line.startswith("- ")]
    assert [normalize(n) for n in emitted] == [normalize(n) for n in labels]


def test_filled_templates_parse():
    spec = default_prompt_spec(CHALLENGE_LABELS)
    for c in CHALLENGE_LABELS:
        filled = spec.person_template.replace("[Selected Category]", c)
        assert parse(filled, CHALLENGE_LABELS).verdict == Category(c)
    assert parse(spec.no_person_template, CHALLENGE_LABELS).verdict == NoPerson()


def test_attach_examples():
    req = attach("P", "frame_0001")
    assert (req.image_ref, req.prompt) == ("frame_0001", "P")
    assert attach("P", "frame_0001").to_record() == req.to_record()
    assert json.loads(req.to_record()) == {"image": "frame_0001", "prompt": "P"}
    with pytest.raises(ContractError):
        attach("", "frame_0001")
    with pytest.raises(ContractError):
        attach("  \n", "frame_0001")
