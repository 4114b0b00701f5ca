"""Template instructions built from object and room labels."""
from __future__ import annotations

import numpy as np

from ..scene.vocab import CLASSES, VocabularyError, stuff_indices

MODES = ("template-obj", "template-sent")

# Verbs per class; the first entry is the most natural action.
VERBS: dict[str, tuple[str, ...]] = {
    "bed": ("make", "sit on"),
    "chair": ("sit on", "move"),
    "sofa": ("sit on", "clean"),
    "table": ("clean", "wipe"),
    "desk": ("clean", "tidy"),
    "cabinet": ("open", "check"),
    "wardrobe": ("open",),
    "shelf": ("check", "dust"),
    "dresser": ("open", "check"),
    "nightstand": ("check", "wipe"),
    "toilet": ("clean", "flush"),
    "sink": ("clean", "use"),
    "bathtub": ("clean", "fill"),
    "shower": ("turn on", "clean"),
    "mirror": ("clean", "look at"),
    "window": ("open",),
    "picture": ("look at", "straighten"),
    "television": ("turn on", "turn off"),
    "lamp": ("turn on", "turn off"),
    "plant": ("water",),
    "refrigerator": ("open",),
    "stove": ("turn off", "clean"),
    "microwave": ("open", "turn on"),
    "dishwasher": ("open", "empty"),
    "washing machine": ("open", "empty"),
    "counter": ("wipe", "clean"),
    "stool": ("sit on", "move"),
    "bench": ("sit on",),
    "armchair": ("sit on",),
    "swivel chair": ("sit on", "move"),
    "ottoman": ("move", "sit on"),
    "fireplace": ("check", "clean"),
    "piano": ("play", "close"),
    "chandelier": ("clean",),
    "curtain": ("open", "close"),
    "clock": ("check", "look at"),
    "box": ("pick up", "open"),
}

# Sentence skeletons for template-sent; {room}, {verb} and {object} are filled in.
SKELETONS: tuple[str, ...] = (
    "go to {room} and {verb} the {object}",
    "walk into the {room} and {verb} the {object}",
    "find the {object} in the {room} and {verb} it",
    "head to the {room} , then {verb} the {object}",
    "enter the {room} and go to the {object}",
    "in the {room} , {verb} the {object}",
)


def _object_name(class_index: int, vocabulary) -> str:
    if not 0 <= class_index < len(vocabulary) or class_index in stuff_indices(vocabulary) or class_index == 0:
        raise VocabularyError(f"class index {class_index} is not an object class")
    return vocabulary[class_index]


def make_instruction(mode: str, class_index: int, room: str | None, rng: np.random.Generator,
                     vocabulary=CLASSES, template: int | None = None) -> str:
    """Instruction text for an object; ``template`` pins the template-sent skeleton.

    Verb and skeleton are drawn from ``rng`` (in that order) when not pinned.
    """
    name = _object_name(int(class_index), vocabulary)
    verbs = VERBS.get(name, ("find",))
    verb = verbs[int(rng.integers(len(verbs)))] if len(verbs) > 1 else verbs[0]
    if mode == "template-obj":
        return f"{verb} the {name}"
    if mode != "template-sent":
        raise ValueError(f"unknown instruction mode {mode!r}")
    if template is None:
        template = int(rng.integers(len(SKELETONS)))
    room = room or "room"
    return SKELETONS[template].format(room=room, verb=verb, object=name)
