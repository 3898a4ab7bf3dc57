"""Rule-based context prompts for compound expression recognition.

A prompt has four sections in fixed order: task objective, category
definitions, analysis guidelines and the output format the model must
follow. Category descriptions not written out by hand are composed from
the facial cues of the two parent emotions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .categories import COMPOUND_PARENTS, normalize
from .errors import ContractError, SpecError

SELECTED_PLACEHOLDER = "[Selected Category]"
PERSON_CONCLUSION = "The facial expression of the person in the image is '{category}'."
NO_PERSON_CONCLUSION = "There is no one in the image."

SECTION_TITLES = ("Task Objective", "Category Definitions", "Analysis Guidelines", "Output Format")

# Hand-written definitions; everything else is composed by compose_description.
CURATED_DESCRIPTIONS: dict[str, str] = {
    "Fearfully Surprised": (
        "A mix of fear and surprise, characterized by widened eyes, raised eyebrows, "
        "and a slightly open mouth."
    ),
    "Happily Surprised": (
        "A blend of happiness and surprise, featuring a bright smile, raised eyebrows, "
        "and wide-open eyes."
    ),
    "Sadly Surprised": (
        "A combination of sadness and surprise, with downturned lips, raised eyebrows, "
        "and a look of shock."
    ),
}

# basic emotion -> (noun, facial cues)
BASIC_CUES: dict[str, tuple[str, str]] = {
    "Happiness": ("happiness", "a bright smile with raised cheeks"),
    "Sadness": ("sadness", "downturned lips and drooping upper eyelids"),
    "Surprise": ("surprise", "raised eyebrows and wide-open eyes"),
    "Fear": ("fear", "widened eyes and lips stretched back in tension"),
    "Anger": ("anger", "lowered, drawn-together brows and tightly pressed lips"),
    "Disgust": ("disgust", "a wrinkled nose and a raised upper lip"),
    "Neutral": ("calm", "relaxed facial muscles and a closed mouth"),
}

DEFAULT_GUIDELINES = (
    "Carefully examine the image to identify visible facial features like the eyes, "
    "eyebrows, mouth, and overall facial tension. Decide which basic emotions these "
    "cues point to and how they combine, then choose the single category whose "
    "definition fits best. Use only the category names listed above."
)

DEFAULT_NO_PERSON_TEMPLATE = (
    "Analysis: [Provide a detailed analysis of the image, noting the absence of any person.]\n"
    f"Conclusion: {NO_PERSON_CONCLUSION}"
)
DEFAULT_PERSON_TEMPLATE = (
    "Analysis: [Provide a detailed analysis of the facial expression, describing the "
    "features that led to your conclusion.]\n"
    f"Conclusion: {PERSON_CONCLUSION.format(category=SELECTED_PLACEHOLDER)}"
)

_NUMBER_WORDS = (
    "zero one two three four five six seven eight nine ten eleven twelve thirteen "
    "fourteen fifteen sixteen seventeen eighteen nineteen twenty"
).split()


def number_word(n: int) -> str:
    return _NUMBER_WORDS[n] if 0 <= n < len(_NUMBER_WORDS) else str(n)


def task_objective(n_categories: int) -> str:
    return (
        "Your task is to analyze the facial expression of the person(s) in the provided "
        f"image and classify it into one of the {number_word(n_categories)} predefined categories."
    )


def compose_description(name: str, parents: tuple[str, str]) -> str:
    (noun_a, cue_a), (noun_b, cue_b) = BASIC_CUES[parents[0]], BASIC_CUES[parents[1]]
    return f"A combination of {noun_a} and {noun_b}, showing {cue_a} together with {cue_b}."


def describe(name: str) -> str:
    if name in CURATED_DESCRIPTIONS:
        return CURATED_DESCRIPTIONS[name]
    if name in COMPOUND_PARENTS:
        return compose_description(name, COMPOUND_PARENTS[name])
    if name in BASIC_CUES:
        noun, cue = BASIC_CUES[name]
        return f"A face expressing {noun}, with {cue}."
    raise SpecError(f"no description rule for category {name!r}")


@dataclass(frozen=True)
class CategoryDefinition:
    name: str
    description: str


@dataclass(frozen=True)
class PromptSpec:
    task_objective: str
    categories: tuple[CategoryDefinition, ...]
    guidelines: str = DEFAULT_GUIDELINES
    no_person_template: str = DEFAULT_NO_PERSON_TEMPLATE
    person_template: str = DEFAULT_PERSON_TEMPLATE

    @property
    def category_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)

    def validate(self) -> None:
        if len(self.categories) < 2:
            raise SpecError("a prompt needs at least two categories")
        seen: set[str] = set()
        for c in self.categories:
            key = normalize(c.name)
            if not key:
                raise SpecError("category name is empty")
            if key in seen:
                raise SpecError(f"duplicate category {c.name!r}")
            seen.add(key)
            if not c.description.strip():
                raise SpecError(f"category {c.name!r} has an empty description")
        if not self.task_objective.strip() or not self.guidelines.strip():
            raise SpecError("task objective and guidelines must be non-empty")
        if SELECTED_PLACEHOLDER not in self.person_template:
            raise SpecError(f"person template must contain {SELECTED_PLACEHOLDER}")
        if NO_PERSON_CONCLUSION.rstrip(".") not in self.no_person_template:
            raise SpecError("no-person template must contain the no-person sentence")

    def to_json(self) -> str:
        obj = {
            "task_objective": self.task_objective,
            "categories": [{"name": c.name, "description": c.description} for c in self.categories],
            "guidelines": self.guidelines,
            "output_templates": {"no_person": self.no_person_template, "person": self.person_template},
        }
        return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PromptSpec":
        try:
            obj = json.loads(text)
            templates = obj.get("output_templates", {})
            spec = cls(
                task_objective=obj["task_objective"],
                categories=tuple(CategoryDefinition(c["name"], c["description"]) for c in obj["categories"]),
                guidelines=obj.get("guidelines", DEFAULT_GUIDELINES),
                no_person_template=templates.get("no_person", DEFAULT_NO_PERSON_TEMPLATE),
                person_template=templates.get("person", DEFAULT_PERSON_TEMPLATE),
            )
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            raise SpecError(f"malformed prompt spec: {exc}") from None
        spec.validate()
        return spec


def default_prompt_spec(categories: Sequence[str]) -> PromptSpec:
    defs = tuple(CategoryDefinition(name, describe(name)) for name in categories)
    return PromptSpec(task_objective(len(defs)), defs)


def build_prompt(spec: PromptSpec) -> str:
    spec.validate()
    definitions = "\n".join(f"- {c.name}: {c.description}" for c in spec.categories)
    output = (
        "Respond in exactly one of the following two forms.\n"
        f"If no person is present:\n{spec.no_person_template}\n"
        f"If a person is present:\n{spec.person_template}\n"
        f"Replace {SELECTED_PLACEHOLDER} with one category name from the list above."
    )
    bodies = (spec.task_objective, definitions, spec.guidelines, output)
    return "\n\n".join(f"{title}:\n{body}" for title, body in zip(SECTION_TITLES, bodies)) + "\n"


def render_response(category: str | None, analysis: str = "See facial features.") -> str:
    """A model transcript in the requested format; ``None`` means no person."""
    conclusion = NO_PERSON_CONCLUSION if category is None else PERSON_CONCLUSION.format(category=category)
    return f"Analysis: {analysis}\nConclusion: {conclusion}"


@dataclass(frozen=True)
class InferenceRequest:
    image_ref: str
    prompt: str

    def to_record(self) -> str:
        return json.dumps(
            {"image": self.image_ref, "prompt": self.prompt},
            sort_keys=True,
            ensure_ascii=False,
            separators=(",", ":"),
        )


def attach(prompt: str, image_ref: str) -> InferenceRequest:
    """Pair an image reference with the context prompt for one inference call."""
    if not prompt or not prompt.strip():
        raise ContractError("cannot attach an empty prompt")
    return InferenceRequest(str(image_ref), prompt)
