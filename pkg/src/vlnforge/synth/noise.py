"""Per-view corruption of rendered semantic labels (stand-in for 2D model errors)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene.vocab import CLASSES, CONFUSABLE_GROUPS, VOID


@dataclass(frozen=True)
class NoiseSpec:
    """Label corruption applied to one rendered view.

    ``granularity="instance"`` draws one corrupted label per (view, object
    instance) and per (view, stuff class), so a whole 2D mask is mislabeled
    at once, as a segmentation network would. ``"pixel"`` draws per pixel.

    Predictions are soft: the drawn label gets probability ``q``, uniform in
    ``confidence`` when it is right and in ``error_confidence`` when it is
    wrong. The remaining ``1 - q`` goes to the true class for a wrong label,
    and to an off-diagonal class of the true class's confusion row for a
    right one (nowhere, i.e. one-hot, if the row has no off-diagonal mass).
    Both ranges lie in (0.5, 1], so the argmax is always the drawn label.
    """

    confusion: np.ndarray
    boundary_jitter: int = 0
    dropout: float = 0.0
    granularity: str = "instance"
    confidence: tuple[float, float] = (1.0, 1.0)
    error_confidence: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        m = np.asarray(self.confusion, np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("confusion must be square")
        if np.any(m < 0) or np.any(m > 1) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("confusion rows must be probability vectors")
        if not 0 <= self.dropout <= 1:
            raise ValueError("dropout must be a probability")
        if self.boundary_jitter < 0:
            raise ValueError("boundary jitter must be >= 0")
        if self.granularity not in ("instance", "pixel"):
            raise ValueError(f"unknown granularity {self.granularity!r}")
        for name in ("confidence", "error_confidence"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not 0.5 < lo <= hi <= 1.0:
                raise ValueError(f"{name} must satisfy 0.5 < lo <= hi <= 1")
            object.__setattr__(self, name, (lo, hi))
        m.setflags(write=False)
        object.__setattr__(self, "confusion", m)

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    @property
    def is_identity(self) -> bool:
        return (self.boundary_jitter == 0 and self.dropout == 0
                and np.array_equal(self.confusion, np.eye(self.n_classes)))

    @classmethod
    def identity(cls, n_classes: int = len(CLASSES)) -> "NoiseSpec":
        return cls(np.eye(n_classes))


def group_confusion(rate: float, vocabulary=CLASSES, groups=CONFUSABLE_GROUPS) -> np.ndarray:
    """Confusion matrix keeping ``1 - rate`` on the diagonal for thing classes.

    The ``rate`` mass is split evenly over the other members of the class's
    confusable group. Void and stuff rows stay identity.
    """
    vocab = list(vocabulary)
    n = len(vocab)
    m = np.eye(n)
    if rate == 0:
        return m
    for group in groups:
        members = [vocab.index(c) for c in group if c in vocab]
        for c in members:
            others = [o for o in members if o != c]
            if not others:
                continue
            m[c, c] = 1.0 - rate
            for o in others:
                m[c, o] = rate / len(others)
    return m


# Built-in profiles; a config file may add more with the same keys.
NOISE_PROFILES: dict[str, dict] = {
    "clean": {"confusion_rate": 0.0, "boundary_jitter": 0, "dropout": 0.0, "granularity": "instance"},
    "confusion30": {"confusion_rate": 0.3, "boundary_jitter": 1, "dropout": 0.02, "granularity": "instance",
                    "confidence": [0.7, 1.0], "error_confidence": [0.51, 0.7]},
}

PROFILE_KEYS = {"confusion_rate", "boundary_jitter", "dropout", "granularity", "confidence", "error_confidence"}


def noise_from_profile(profile: str | dict, vocabulary=CLASSES, profiles: dict | None = None) -> NoiseSpec:
    if isinstance(profile, str):
        table = dict(NOISE_PROFILES)
        table.update(profiles or {})
        if profile not in table:
            raise KeyError(f"unknown noise profile {profile!r}; known: {sorted(table)}")
        profile = table[profile]
    unknown = set(profile) - PROFILE_KEYS
    if unknown:
        raise KeyError(f"unknown noise profile keys: {sorted(unknown)}")
    return NoiseSpec(group_confusion(float(profile.get("confusion_rate", 0.0)), vocabulary),
                     int(profile.get("boundary_jitter", 0)), float(profile.get("dropout", 0.0)),
                     profile.get("granularity", "instance"),
                     tuple(profile.get("confidence", (1.0, 1.0))),
                     tuple(profile.get("error_confidence", (1.0, 1.0))))


def _draw(noise: NoiseSpec, true: np.ndarray, rng: np.random.Generator):
    """Noisy label, runner-up class and top-1 probability for each true label."""
    true = np.asarray(true, np.int64)
    m = noise.confusion
    cdf = np.cumsum(m, axis=1)
    cdf[:, -1] = 1.0
    label = (rng.random(true.shape)[..., None] < cdf[true]).argmax(axis=-1)
    # runner-up for right labels: off-diagonal mass of the true row
    off = m.copy()
    np.fill_diagonal(off, 0.0)
    tot = off.sum(axis=1, keepdims=True)
    off_cdf = np.cumsum(np.divide(off, tot, out=np.zeros_like(off), where=tot > 0), axis=1)
    off_cdf[:, -1] = 1.0
    partner = (rng.random(true.shape)[..., None] < off_cdf[true]).argmax(axis=-1)
    partner = np.where(tot[true, 0] > 0, partner, true)
    right = label == true
    lo_r, hi_r = noise.confidence
    lo_w, hi_w = noise.error_confidence
    u = rng.random(true.shape)
    q = np.where(right, lo_r + (hi_r - lo_r) * u, lo_w + (hi_w - lo_w) * u)
    second = np.where(right, partner, true)
    q = np.where(second == label, 1.0, q)
    return label, second, q


def _shift(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    if dy == 0 and dx == 0:
        return a
    h, w = a.shape
    p = max(abs(dy), abs(dx))
    padded = np.pad(a, p, mode="edge")
    return padded[p - dy:p - dy + h, p - dx:p - dx + w]


def apply_noise(labels: np.ndarray, instances: np.ndarray, noise: NoiseSpec, rng: np.random.Generator):
    """Corrupt one view; returns (prob_index HxWx2, prob_value HxWx2, instances).

    Void pixels (no surface in range) stay void with probability 1.
    """
    void = labels == VOID
    if noise.boundary_jitter:
        j = noise.boundary_jitter
        dy, dx = (int(v) for v in rng.integers(-j, j + 1, size=2))
        labels, instances = _shift(labels, dy, dx), _shift(instances, dy, dx)
    if noise.granularity == "pixel":
        top, second, q = _draw(noise, labels, rng)
    else:
        # one unit per instance id, and per stuff class among pixels without one
        key = np.where(instances > 0, instances.astype(np.int64) + noise.n_classes, labels)
        units, inv = np.unique(key, return_inverse=True)
        inv = inv.reshape(labels.shape)
        votes = np.bincount(inv.ravel() * noise.n_classes + labels.ravel(),
                            minlength=len(units) * noise.n_classes).reshape(len(units), noise.n_classes)
        lab, sec, qq = _draw(noise, votes.argmax(axis=1), rng)
        top, second, q = lab[inv], sec[inv], qq[inv]
    if noise.dropout > 0:
        drop = rng.random(top.shape) < noise.dropout
        top[drop] = rng.integers(1, noise.n_classes, size=int(drop.sum()))
        second[drop] = top[drop]
        q[drop] = 1.0
    top[void] = VOID
    second[void] = VOID
    q[void] = 1.0
    index = np.stack([top, second], axis=-1).astype(np.uint16)
    value = np.stack([q, 1.0 - q], axis=-1).astype(np.float32)
    return index, value, instances
