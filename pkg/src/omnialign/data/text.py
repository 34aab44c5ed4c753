"""Caption and question grammars for synthetic scenes, and the instruction prompt templates."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass

import numpy as np

from ..modality import DISPLAY_NAMES, Modality
from .scenes import COLORS, COUNTS, SHAPES, SIZES, SceneSpec

_COUNT_WORDS = {1: "a", 2: "two", 3: "three"}
_COUNT_ANSWERS = {1: "one", 2: "two", 3: "three"}


def caption_for_scene(spec: SceneSpec) -> str:
    noun = spec.shape if spec.count == 1 else spec.shape + "s"
    return f"{_COUNT_WORDS[spec.count]} {spec.size} {spec.color} {noun}"


_CAPTION_RE = re.compile(r"^(a|two|three) (small|large) (red|green|blue) (square|circle|triangle)(s?)$")


def parse_caption(caption: str, seed: int = 0) -> SceneSpec:
    """Inverse of :func:`caption_for_scene` (the layout seed is not recoverable)."""
    m = _CAPTION_RE.match(caption.strip())
    if m is None:
        raise ValueError(f"not a scene caption: {caption!r}")
    count_word, size, color, shape, plural = m.groups()
    count = {"a": 1, "two": 2, "three": 3}[count_word]
    if (count > 1) != bool(plural):
        raise ValueError(f"number agreement broken in {caption!r}")
    return SceneSpec(shape, color, size, count, seed)


# -- question answering -----------------------------------------------------------

QUESTIONS = {
    "color": "What color is the shape?",
    "shape": "What shape is it?",
    "size": "What size is the shape?",
    "count": "How many shapes are there?",
}

ANSWER_CHOICES = {
    "color": list(COLORS),
    "shape": list(SHAPES),
    "size": list(SIZES),
    "count": [_COUNT_ANSWERS[c] for c in COUNTS],
}

# Never-correct options that pad every multiple-choice question to four letters.
_DISTRACTORS = {"color": ["yellow"], "shape": ["star"], "size": ["medium", "tiny"], "count": ["four"]}
OPTION_LETTERS = ("A", "B", "C", "D")


def answer_vocabulary() -> list[str]:
    return sorted({a for answers in ANSWER_CHOICES.values() for a in answers})


def _answer(spec: SceneSpec, attr: str) -> str:
    if attr == "count":
        return _COUNT_ANSWERS[spec.count]
    return getattr(spec, attr)


def qa_for_scene(spec: SceneSpec) -> list[tuple[str, str]]:
    return [(QUESTIONS[a], _answer(spec, a)) for a in QUESTIONS]


@dataclass(frozen=True)
class OptionQuestion:
    question: str
    options: tuple[str, ...]
    answer_letter: str

    @property
    def answer(self) -> str:
        return self.options[OPTION_LETTERS.index(self.answer_letter)]

    def options_text(self) -> str:
        return "\n".join(f"{letter}. {opt}" for letter, opt in zip(OPTION_LETTERS, self.options))


def option_questions(spec: SceneSpec) -> list[OptionQuestion]:
    """Four-way multiple-choice versions of every question; option order depends on the scene seed."""
    rng = np.random.default_rng([spec.seed, 0x0B7])
    out = []
    for attr, question in QUESTIONS.items():
        pool = ANSWER_CHOICES[attr] + _DISTRACTORS[attr]
        gold = _answer(spec, attr)
        others = [o for o in pool if o != gold][: len(OPTION_LETTERS) - 1]
        options = [gold] + others
        order = rng.permutation(len(options))
        shuffled = tuple(options[i] for i in order)
        out.append(OptionQuestion(question, shuffled, OPTION_LETTERS[shuffled.index(gold)]))
    return out


# -- prompt templates ----------------------------------------------------------------

PROMPT_TEMPLATES = {
    "caption": "Provide a one-sentence caption for the provided {modal}.",
    "open_qa": "{Question} Answer the question using a single word or phrase.",
    "option_qa": "{Question} {Options} Answer with the option's letter from the given choices directly",
    "region": "Provide a short description for this region.",
    "imu": "Describe the motion.",
    "fmri": "Describe this scene based on fMRI data.",
}


class TemplateError(KeyError):
    """A prompt template was rendered with missing fields."""


def render_prompt(task: str, fields: dict[str, str] | None = None) -> str:
    if task not in PROMPT_TEMPLATES:
        raise ValueError(f"unknown prompt task {task!r}; expected one of {sorted(PROMPT_TEMPLATES)}")
    template = PROMPT_TEMPLATES[task]
    fields = dict(fields or {})
    needed = [name for _, name, _, _ in string.Formatter().parse(template) if name]
    missing = [n for n in needed if n not in fields]
    if missing:
        raise TemplateError(f"prompt {task!r} needs fields {missing}")
    return template.format(**{n: fields[n] for n in needed})


def caption_prompt(modality: Modality | str) -> str:
    """Captioning instruction for a modality (IMU and fMRI have dedicated wording)."""
    modality = Modality.parse(modality)
    if modality is Modality.IMU:
        return render_prompt("imu")
    if modality is Modality.FMRI:
        return render_prompt("fmri")
    return render_prompt("caption", {"modal": DISPLAY_NAMES[modality]})


def open_qa_prompt(question: str) -> str:
    return render_prompt("open_qa", {"Question": question})


def option_qa_prompt(q: OptionQuestion) -> str:
    return render_prompt("option_qa", {"Question": q.question, "Options": q.options_text()})
