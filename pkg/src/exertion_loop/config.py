"""Run configuration as flat ``section.key = value`` text, plus the run manifest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import __version__
from .dqn_agent import AgentConfig
from .ecg_encoder import EncoderTrainConfig
from .physio_sim import HumanParams
from .reward import ProfileConfig
from .session import MODES, ProtocolConfig
from .wheelchair_sim import CARPET, SLATE, ChairParams, Surface, make_surface

SURFACES = ("slate", "carpet")


class ConfigError(ValueError):
    """Invalid configuration key or value."""


@dataclass(frozen=True)
class FrictionConfig:
    slate: float = SLATE.rolling_resistance_coeff
    carpet: float = CARPET.rolling_resistance_coeff


_SECTIONS = {
    "chair": ChairParams,
    "friction": FrictionConfig,
    "human": HumanParams,
    "agent": AgentConfig,
    "encoder": EncoderTrainConfig,
    "protocol": ProtocolConfig,
    "profile": ProfileConfig,
}
_TOP = ("seed", "surface", "mode", "out")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    surface: str = "slate"
    mode: str = "assisted"
    out: str = "runs"
    chair: ChairParams = field(default_factory=ChairParams)
    friction: FrictionConfig = field(default_factory=FrictionConfig)
    human: HumanParams = field(default_factory=HumanParams)
    agent: AgentConfig = field(default_factory=AgentConfig)
    encoder: EncoderTrainConfig = field(default_factory=EncoderTrainConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    profile: ProfileConfig = field(default_factory=ProfileConfig)

    def __post_init__(self):
        if self.surface not in SURFACES:
            raise ConfigError(f"surface must be one of {SURFACES}, got {self.surface!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    def make_surface(self, name: str | None = None) -> Surface:
        return make_surface(name or self.surface, self.friction.slate, self.friction.carpet)

    def agent_config(self) -> AgentConfig:
        """Agent hyper-parameters with the network/replay seed tied to the run seed."""
        return replace(self.agent, seed=self.seed)

    def to_flat(self) -> dict[str, object]:
        flat: dict[str, object] = {k: getattr(self, k) for k in _TOP}
        for section in _SECTIONS:
            for k, v in asdict(getattr(self, section)).items():
                flat[f"{section}.{k}"] = list(v) if isinstance(v, tuple) else v
        return flat

    def fingerprint(self, *sections: str) -> str:
        flat = self.to_flat()
        keys = [k for k in sorted(flat) if not sections or k.split(".")[0] in sections]
        blob = json.dumps({k: flat[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def encoder_fingerprint(self) -> str:
        # the training windows come from the human model, so both sections matter
        return self.fingerprint("encoder", "human")

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_flat().items():
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(key: str, raw, default):
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return s in ("true", "1", "yes")
        if isinstance(default, int):
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = raw if isinstance(raw, (list, tuple)) else [x.strip() for x in str(raw).split(",") if x.strip()]
            proto = default[0] if default else ""
            return tuple(_coerce(key, x, proto) for x in items)
        return str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def from_flat(values: dict, base: RunConfig | None = None) -> RunConfig:
    """Apply dotted overrides; unknown keys raise :class:`ConfigError`."""
    base = base or RunConfig()
    top: dict = {}
    sections: dict[str, dict] = {}
    for key, raw in values.items():
        if key in _TOP:
            top[key] = _coerce(key, raw, getattr(base, key))
            continue
        section, _, name = key.partition(".")
        cls = _SECTIONS.get(section)
        if cls is None or name not in {f.name for f in fields(cls)}:
            raise ConfigError(f"unknown config key {key!r}")
        sections.setdefault(section, {})[name] = _coerce(key, raw, getattr(getattr(base, section), name))
    try:
        parts = {s: replace(getattr(base, s), **kw) for s, kw in sections.items()}
        return replace(base, **top, **parts)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a flat config file (or a manifest's config snapshot) and apply overrides."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".json":
            data = json.loads(text)
            values = dict(data.get("config", data))
        else:
            values = parse_text(text, str(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_flat(values)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    code_version: str = __version__
    phases: dict[str, str] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        return cls(config=data["config"], code_version=data.get("code_version", ""),
                   phases=data.get("phases", {}), files=data.get("files", {}), extra=data.get("extra", {}))

    def record(self, out_dir, paths, phase: str | None = None) -> None:
        out_dir = Path(out_dir)
        for p in paths:
            p = Path(p)
            digest = sha256_file(p)
            self.files[str(p.relative_to(out_dir))] = digest
            if phase and p.suffix == ".jsonl":
                self.phases[phase] = digest

    def write(self, path) -> None:
        body = {"config": self.config, "code_version": self.code_version,
                "phases": dict(sorted(self.phases.items())), "files": dict(sorted(self.files.items())),
                "extra": self.extra}
        Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
