"""Fixed indoor class vocabulary shared by the synthetic generator and fusion.

Index 0 is ``void`` (no surface hit / residual probability mass). The next
three entries are stuff classes that never form object instances.
"""
from __future__ import annotations

VOID = 0

CLASSES: tuple[str, ...] = (
    "void",
    # stuff
    "wall",
    "floor",
    "ceiling",
    # things
    "bed",
    "chair",
    "sofa",
    "table",
    "desk",
    "cabinet",
    "wardrobe",
    "shelf",
    "dresser",
    "nightstand",
    "toilet",
    "sink",
    "bathtub",
    "shower",
    "mirror",
    "window",
    "picture",
    "television",
    "lamp",
    "plant",
    "refrigerator",
    "stove",
    "microwave",
    "dishwasher",
    "washing machine",
    "counter",
    "stool",
    "bench",
    "armchair",
    "swivel chair",
    "ottoman",
    "fireplace",
    "piano",
    "chandelier",
    "curtain",
    "clock",
    "box",
)

STUFF_CLASSES: tuple[str, ...] = ("wall", "floor", "ceiling")

# Groups of visually similar classes; the shipped confusion profiles move
# probability mass only inside a group.
CONFUSABLE_GROUPS: tuple[tuple[str, ...], ...] = (
    ("mirror", "window", "picture", "television", "clock"),
    ("table", "desk", "counter", "dresser"),
    ("chair", "swivel chair", "stool", "armchair", "ottoman"),
    ("cabinet", "wardrobe", "shelf", "nightstand", "box"),
    ("sofa", "bench", "bed", "piano"),
    ("toilet", "sink", "bathtub", "shower"),
    ("refrigerator", "stove", "microwave", "dishwasher", "washing machine"),
    ("lamp", "plant", "chandelier", "curtain", "fireplace"),
)


class VocabularyError(KeyError):
    """Raised for class names or indices outside the vocabulary."""


def class_index(name: str, vocabulary: tuple[str, ...] | list[str] = CLASSES) -> int:
    try:
        return list(vocabulary).index(name)
    except ValueError:
        raise VocabularyError(f"unknown class name {name!r}") from None


def class_name(index: int, vocabulary: tuple[str, ...] | list[str] = CLASSES) -> str:
    if not 0 <= int(index) < len(vocabulary):
        raise VocabularyError(f"class index {index} outside vocabulary of size {len(vocabulary)}")
    return vocabulary[int(index)]


def stuff_indices(vocabulary: tuple[str, ...] | list[str] = CLASSES) -> tuple[int, ...]:
    vocabulary = list(vocabulary)
    return tuple(vocabulary.index(n) for n in STUFF_CLASSES if n in vocabulary)


def thing_indices(vocabulary: tuple[str, ...] | list[str] = CLASSES) -> tuple[int, ...]:
    skip = set(stuff_indices(vocabulary)) | {VOID}
    return tuple(i for i in range(len(vocabulary)) if i not in skip)
