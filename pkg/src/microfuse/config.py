"""Flat ``key = value`` configuration files.

One setting per line; ``#`` starts a comment.  Keys are either top-level
:class:`ExperimentConfig` fields or dotted into a section::

    model = microfuse
    seeds = 0,1,2
    batch_size = 512
    fusion.latent_dim = 64
    loss.lambda_xmod = 0.02
    world.conflict_rate = 0.3
    data.n_train = 20000
    variants = microfuse,concat-mlp

``world.*`` and ``data.n_*`` describe a synthetic source; ``data.embeddings``
and ``data.pairs`` point at files written by ``synth`` or ``build-data``
instead.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import EmbeddingStore, read_pairs
from .experiment import ExperimentConfig, PairDataset
from .losses import LossConfig
from .model import FusionConfig
from .nn import ConfigError
from .synthetic import SyntheticWorld, desk_world


@dataclass(frozen=True)
class DataSource:
    world: SyntheticWorld | None = None
    n_train: int = 20000
    n_val: int = 4000
    n_test: int = 5000
    split_seed: int = 0
    embeddings: str | None = None
    pairs: str | None = None

    def load(self) -> PairDataset:
        if self.embeddings or self.pairs:
            if not (self.embeddings and self.pairs):
                raise ConfigError("data.embeddings and data.pairs must be given together")
            return PairDataset.from_files(EmbeddingStore.load(self.embeddings), read_pairs(self.pairs))
        world = self.world if self.world is not None else desk_world()
        return PairDataset.from_synthetic(world, self.n_train, self.n_val, self.n_test, self.split_seed)


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    data: DataSource
    variants: tuple[str, ...] = ()
    raw: dict = field(default_factory=dict, compare=False)


def parse_lines(text: str) -> dict[str, str]:
    """Split ``key = value`` lines into a dict; later keys override earlier ones."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def _coerce(raw: str, annotation, key: str):
    hint = annotation
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if type(None) in args:
            if raw.lower() in ("", "none"):
                return None
            inner = [a for a in args if a is not type(None)][0]
            return _coerce(raw, inner, key)
        if origin is tuple:
            inner = args[0]
            return tuple(_coerce(p.strip(), inner, key) for p in raw.split(",") if p.strip())
        if hint is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if hint in (int, float, str):
            return hint(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {hint}") from None
    raise ConfigError(f"{key}: unsupported setting type {hint}")


def _build(cls, values: dict[str, str], prefix: str, base=None):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown setting {prefix}{key}; known: {sorted(known)}")
        kwargs[key] = _coerce(raw, hints[key], prefix + key)
    if base is not None:
        return replace(base, **kwargs)
    return cls(**kwargs)


def run_config(values: dict[str, str]) -> RunConfig:
    sections: dict[str, dict[str, str]] = {"": {}, "fusion": {}, "loss": {}, "world": {}, "data": {}}
    variants: tuple[str, ...] = ()
    for key, raw in values.items():
        if key == "variants":
            variants = tuple(v.strip() for v in raw.split(",") if v.strip())
            continue
        section, _, name = key.rpartition(".")
        if section not in sections:
            raise ConfigError(f"unknown section {section!r} in key {key!r}")
        sections[section][name] = raw
    try:
        world = _build(SyntheticWorld, sections["world"], "world.", desk_world()) \
            if sections["world"] else None
        data = _build(DataSource, sections["data"], "data.")
        data = replace(data, world=world)
        fusion = _build(FusionConfig, sections["fusion"], "fusion.")
        if world is not None and not {"protein_dim", "genome_dim"} & sections["fusion"].keys():
            fusion = replace(fusion, protein_dim=world.protein_dim, genome_dim=world.genome_dim)
        loss = _build(LossConfig, sections["loss"], "loss.")
        top = dict(sections[""])
        experiment = _build(ExperimentConfig, top, "", ExperimentConfig(fusion=fusion, loss=loss))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return RunConfig(experiment, data, variants, dict(values))


def load_config(path: str | Path) -> RunConfig:
    return run_config(parse_lines(Path(path).read_text()))


def dump_config(cfg: RunConfig) -> str:
    """Render a config back to flat text (round-trips through :func:`load_config`)."""
    lines = []
    exp = cfg.experiment

    def emit(prefix, obj, skip=()):
        for f in fields(obj):
            if f.name in skip:
                continue
            value = getattr(obj, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{prefix}{f.name} = {value}")

    emit("", exp, skip=("fusion", "loss"))
    emit("fusion.", exp.fusion)
    emit("loss.", exp.loss)
    if cfg.data.world is not None:
        emit("world.", cfg.data.world)
    emit("data.", cfg.data, skip=("world",))
    if cfg.variants:
        lines.append("variants = " + ",".join(cfg.variants))
    return "\n".join(lines) + "\n"


__all__ = ["DataSource", "RunConfig", "dump_config", "load_config", "parse_lines", "run_config"]
