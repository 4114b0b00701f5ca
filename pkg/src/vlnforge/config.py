"""Pipeline configuration: YAML (or JSON) file <-> nested parameter blocks."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .fusion import FusionParams
from .navgraph.graph import GraphParams
from .scene.types import DEFAULT_INTRINSICS, CameraIntrinsics
from .synth.layout import SceneParams
from .synth.noise import NOISE_PROFILES, PROFILE_KEYS
from .triplets.forge import TripletParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalParams:
    success_radius: float = 3.0
    strict_goal: bool = False

    def __post_init__(self):
        if not self.success_radius > 0:
            raise ValueError("success_radius must be positive")


@dataclass(frozen=True)
class OutputParams:
    save_bundles: bool = False
    bundle_topk: int = 2
    prompts: bool = True
    max_other_tokens: int = 20

    def __post_init__(self):
        if self.bundle_topk < 1 or self.max_other_tokens < 0:
            raise ValueError("bundle_topk must be >= 1 and max_other_tokens >= 0")


_BLOCKS = {
    "synth": SceneParams,
    "graph": GraphParams,
    "fusion": FusionParams,
    "triplets": TripletParams,
    "evaluation": EvalParams,
    "output": OutputParams,
}


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    return v


def _block_to_dict(obj) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def _block_from_dict(cls, d, name: str):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"{name}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        default = getattr(cls(), k)
        if isinstance(default, tuple) and isinstance(v, list):
            v = tuple(v)
        if isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        kwargs[k] = v
    try:
        obj = cls(**kwargs)
        if hasattr(obj, "validate"):
            obj.validate()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}") from None
    return obj


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 1
    scenes: int = 5
    bundles: tuple[str, ...] = ()
    noise: str = "confusion30"
    noise_profiles: dict = field(default_factory=dict)
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    synth: SceneParams = field(default_factory=SceneParams)
    graph: GraphParams = field(default_factory=GraphParams)
    fusion: FusionParams = field(default_factory=FusionParams)
    triplets: TripletParams = field(default_factory=TripletParams)
    evaluation: EvalParams = field(default_factory=EvalParams)
    output: OutputParams = field(default_factory=OutputParams)

    def __post_init__(self):
        if self.scenes < 0:
            raise ConfigError("scenes must be >= 0")
        known = set(NOISE_PROFILES) | set(self.noise_profiles)
        if self.noise not in known:
            raise ConfigError(f"unknown noise profile {self.noise!r}; known: {sorted(known)}")
        for name, prof in self.noise_profiles.items():
            if not isinstance(prof, dict) or set(prof) - PROFILE_KEYS:
                raise ConfigError(f"noise profile {name!r}: keys must be among {sorted(PROFILE_KEYS)}")

    @property
    def scene_count(self) -> int:
        return len(self.bundles) if self.bundles else self.scenes

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "scenes": self.scenes,
            "bundles": list(self.bundles),
            "noise": self.noise,
            "noise_profiles": _plain(self.noise_profiles),
            "intrinsics": self.intrinsics.to_dict(),
        }
        for name in _BLOCKS:
            d[name] = _block_to_dict(getattr(self, name))
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "PipelineConfig":
        d = dict(d or {})
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kw = {}
        for k in ("seed", "scenes"):
            if k in d:
                if not isinstance(d[k], int) or isinstance(d[k], bool):
                    raise ConfigError(f"{k} must be an integer")
                kw[k] = d[k]
        if "bundles" in d:
            kw["bundles"] = tuple(str(b) for b in (d["bundles"] or []))
        if "noise" in d:
            kw["noise"] = str(d["noise"])
        if "noise_profiles" in d:
            kw["noise_profiles"] = dict(d["noise_profiles"] or {})
        if "intrinsics" in d:
            intr = d["intrinsics"] or {}
            bad = set(intr) - {"width", "height", "hfov", "max_depth"}
            if bad:
                raise ConfigError(f"intrinsics: unknown keys {sorted(bad)}")
            try:
                kw["intrinsics"] = CameraIntrinsics.from_dict({**DEFAULT_INTRINSICS.to_dict(), **intr})
            except (TypeError, ValueError) as e:
                raise ConfigError(f"intrinsics: {e}") from None
        for name, bcls in _BLOCKS.items():
            if name in d:
                kw[name] = _block_from_dict(bcls, d[name], name)
        return cls(**kw)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    @classmethod
    def from_yaml(cls, text: str) -> "PipelineConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"unparseable config: {e}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)

    def digest(self) -> str:
        """sha256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return PipelineConfig.from_yaml(path.read_text(encoding="utf-8"))


def derive_seed(seed: int, scene_index: int, stage: str) -> int:
    """Per-scene, per-stage seed: first 8 bytes (little endian) of sha256("seed/index/stage")."""
    h = hashlib.sha256(f"{seed}/{scene_index}/{stage}".encode()).digest()
    return int.from_bytes(h[:8], "little")
