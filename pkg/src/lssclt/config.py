"""INI-style run configuration: parsing, validation, serialization, hashing.

Layout::

    [model]
    p = 128
    n = 256
    spectrum = identity
    law = real_gaussian
    truncate = true

    [function]
    f = square

    [run]
    R = 100
    seed = 7
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import bernstein
from .clt_params import CLTConfig
from .errors import InvalidArgument, ParseError, ValidationError
from .simulator import EntryLaw, ExperimentConfig, LawKind

SECTIONS: dict[str, tuple[str, ...]] = {
    "model": ("p", "n", "spectrum", "law", "nu", "truncate"),
    "function": ("f", "bernstein_m", "upsilon"),
    "contour": ("eps", "v0", "nodes"),
    "run": ("R", "seed", "rate_n", "batches"),
}
REQUIRED = {("model", "p"), ("model", "n")}


@dataclass(frozen=True)
class RunConfig:
    """An experiment plus the settings that only the rate sweep uses."""

    experiment: ExperimentConfig
    rate_n: tuple[int, ...] = ()
    batches: int = 1

    def __post_init__(self) -> None:
        if self.batches < 1:
            raise ValidationError("batches must be a positive integer")
        if any(n <= 0 for n in self.rate_n):
            raise ValidationError("rate_n entries must be positive")
        if self.rate_n and len(set(self.rate_n)) != len(self.rate_n):
            raise ValidationError("rate_n entries must be distinct")

    @property
    def y(self) -> float:
        return self.experiment.p / self.experiment.n

    def sweep(self) -> list[ExperimentConfig]:
        """One config per ``rate_n`` entry at the base aspect ratio ``p/n``."""
        out = []
        for n in self.rate_n:
            p = max(1, round(self.y * n))
            out.append(self.experiment.with_size(p, n))
        return out


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in {"1", "true", "yes", "on"}:
        return True
    if low in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _locate(text: str, section: str, key: str) -> tuple[int | None, int | None]:
    """1-based line and column of ``key`` inside ``[section]``."""
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        header = re.fullmatch(r"\[([^\]]+)\]", stripped)
        if header:
            current = header.group(1).strip()
            continue
        if current == section:
            m = re.match(r"\s*([^=:\s]+)\s*[=:]", line)
            if m and m.group(1) == key:
                return lineno, m.start(1) + 1
    return None, None


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (R)
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ParseError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, 1) from None
    except configparser.DuplicateSectionError as exc:
        raise ParseError(f"duplicate section [{exc.section}]", exc.lineno, 1) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("content before the first [section] header", exc.lineno, 1) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ParseError(f"malformed line in {source}", lineno, 1) from None

    values: dict[tuple[str, str], str] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            line, _ = _locate(text, section, "")
            raise ParseError(f"unknown section [{section}]; expected one of {sorted(SECTIONS)}", line, 1)
        for key, value in parser.items(section):
            if key not in SECTIONS[section]:
                line, col = _locate(text, section, key)
                raise ParseError(f"unknown key {key!r} in [{section}]", line, col)
            values[(section, key)] = value.strip()
    missing = sorted(f"{s}.{k}" for s, k in REQUIRED if (s, k) not in values)
    if missing:
        raise ValidationError(f"missing required keys: {', '.join(missing)}")

    def get(section: str, key: str, conv, default):
        if (section, key) not in values:
            return default
        raw = values[(section, key)]
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            line, col = _locate(text, section, key)
            raise ParseError(f"bad value for {section}.{key}: {exc}", line, col) from None

    def to_int(s: str) -> int:
        return int(s, 10)

    def int_list(s: str) -> tuple[int, ...]:
        return tuple(int(tok) for tok in re.split(r"[,\s]+", s.strip()) if tok)

    defaults = CLTConfig()
    nu = get("model", "nu", float, None)
    try:
        law = EntryLaw.parse(get("model", "law", str, LawKind.REAL_GAUSSIAN.value), nu)
    except InvalidArgument as exc:
        raise ValidationError(str(exc)) from None
    rate_n = get("run", "rate_n", int_list, ())
    try:
        clt = CLTConfig(
            eps=get("contour", "eps", float, defaults.eps),
            v0=get("contour", "v0", float, defaults.v0),
            nodes_per_side=get("contour", "nodes", to_int, defaults.nodes_per_side),
        )
        experiment = ExperimentConfig(
            p=get("model", "p", to_int, None),
            n=get("model", "n", to_int, None),
            spectrum_spec=get("model", "spectrum", str, "identity"),
            entry_law=law,
            truncate=get("model", "truncate", _parse_bool, True),
            f_name=get("function", "f", str, "square"),
            bernstein_m=get("function", "bernstein_m", to_int, None),
            replicates=get("run", "R", to_int, 100),
            base_seed=get("run", "seed", to_int, 0),
            upsilon=get("function", "upsilon", float, bernstein.DEFAULT_UPSILON),
            clt=clt,
            rate_experiment=bool(rate_n),
        )
        return RunConfig(experiment, rate_n, get("run", "batches", to_int, 1))
    except ValidationError:
        raise
    except InvalidArgument as exc:
        raise ValidationError(str(exc)) from None


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_config_text(text, str(path))


def to_canonical(cfg: RunConfig) -> dict:
    """Plain nested dict of every setting, defaults included."""
    e = cfg.experiment
    return {
        "model": {
            "p": e.p,
            "n": e.n,
            "spectrum": e.spectrum_spec,
            "law": e.entry_law.kind.value,
            "nu": e.entry_law.nu,
            "truncate": e.truncate,
        },
        "function": {"f": e.f_name, "bernstein_m": e.bernstein_m, "upsilon": e.upsilon},
        "contour": {"eps": e.clt.eps, "v0": e.clt.v0, "nodes": e.clt.nodes_per_side},
        "run": {"R": e.replicates, "seed": e.base_seed, "rate_n": list(cfg.rate_n), "batches": cfg.batches},
    }


def serialize(cfg: RunConfig) -> str:
    """INI text that parses back to ``cfg``; unset optional keys are omitted."""
    lines = []
    for section, entries in to_canonical(cfg).items():
        lines.append(f"[{section}]")
        for key, value in entries.items():
            if value is None or value == []:
                continue
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, list):
                text = ", ".join(str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON form; independent of key order in the file."""
    blob = json.dumps(to_canonical(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def with_overrides(cfg: RunConfig, *, nodes_per_side: int | None = None, no_truncate: bool = False) -> RunConfig:
    e = cfg.experiment
    if nodes_per_side is not None:
        e = replace(e, clt=replace(e.clt, nodes_per_side=nodes_per_side))
    if no_truncate:
        e = replace(e, truncate=False)
    return replace(cfg, experiment=e)


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    command: str
    started: str
    finished: str | None = None
    outputs: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "command": self.command,
            "started": self.started,
            "finished": self.finished,
            "outputs": list(self.outputs),
        }
