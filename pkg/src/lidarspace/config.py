"""Pipeline configuration read from ``key = value`` files.

Numeric values may be arithmetic over numbers and ``pi``, with ``^`` for
powers (``gamma = 10^3.7``, ``sector_angle = pi/6``). ``#`` starts a
comment. Unknown keys are rejected so typos surface immediately.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .eval import DEFAULT_TAU_M
from .frame_mesh import GhprParams
from .los_field import FUSION_MODES, FieldParams


class ConfigError(ValueError):
    def __init__(self, source, message, line=None):
        where = f"{source}:{line}" if line is not None else str(source)
        super().__init__(f"{where}: {message}")


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"pi": math.pi, "e": math.e, "inf": math.inf}


def eval_number(text: str) -> float:
    """Evaluate a small arithmetic expression without ``eval``."""

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](walk(node.operand))
        raise ValueError(f"unsupported expression {text!r}")

    try:
        tree = ast.parse(text.strip().replace("^", "**"), mode="eval")
        v = walk(tree)
    except (SyntaxError, ZeroDivisionError, OverflowError) as exc:
        raise ValueError(f"bad number {text!r}: {exc}") from None
    if math.isnan(v):
        raise ValueError(f"{text!r} is not a number")
    return v


@dataclass(frozen=True)
class PipelineConfig:
    ghpr: GhprParams = field(default_factory=GhprParams)
    los: FieldParams = field(default_factory=FieldParams)
    tau: float | None = None  # TSDF truncation; None means 1.5 * l_vox
    tau_m: float = DEFAULT_TAU_M

    def __post_init__(self):
        if self.tau is None:
            object.__setattr__(self, "tau", 1.5 * self.los.l_vox)

    @property
    def trunc(self) -> float:
        return self.tau

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self.ghpr, f.name)!r}" for f in fields(self.ghpr)]
        lines += [f"{f.name} = {getattr(self.los, f.name)!r}" if f.name != "fusion"
                  else f"fusion = {self.los.fusion}" for f in fields(self.los)]
        lines.append(f"tau = {self.trunc!r}")
        lines.append(f"tau_m = {self.tau_m!r}")
        return "\n".join(lines) + "\n"


_GHPR_KEYS = {f.name for f in fields(GhprParams)}
_FIELD_KEYS = {f.name for f in fields(FieldParams)}
KEYS = sorted(_GHPR_KEYS | _FIELD_KEYS | {"tau", "tau_m"})


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    ghpr, fieldp, extra = {}, {}, {}
    seen = set()
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(source, f"expected 'key = value', got {raw.strip()!r}", no)
        if key not in KEYS:
            raise ConfigError(source, f"unknown key {key!r} (known: {', '.join(KEYS)})", no)
        if key in seen:
            raise ConfigError(source, f"duplicate key {key!r}", no)
        seen.add(key)
        if key == "fusion":
            if value not in FUSION_MODES:
                raise ConfigError(source, f"fusion must be one of {FUSION_MODES}", no)
            fieldp[key] = value
            continue
        try:
            v = eval_number(value)
        except ValueError as exc:
            raise ConfigError(source, str(exc), no) from None
        (ghpr if key in _GHPR_KEYS else fieldp if key in _FIELD_KEYS else extra)[key] = v
    try:
        cfg = PipelineConfig(GhprParams(**ghpr), FieldParams(**fieldp), extra.get("tau"),
                             extra.get("tau_m", DEFAULT_TAU_M))
    except ValueError as exc:
        raise ConfigError(source, str(exc)) from None
    if not cfg.tau > 0:
        raise ConfigError(source, "tau must be positive")
    if not cfg.tau_m > 0:
        raise ConfigError(source, "tau_m must be positive")
    return cfg


def read_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(path, f"cannot read: {exc.strerror}") from None
    return parse_config(text, str(path))


def with_overrides(cfg: PipelineConfig, **kw) -> PipelineConfig:
    """Copy of ``cfg`` with individual keys replaced."""
    g = {k: v for k, v in kw.items() if k in _GHPR_KEYS}
    f = {k: v for k, v in kw.items() if k in _FIELD_KEYS}
    rest = {k: v for k, v in kw.items() if k in ("tau", "tau_m")}
    bad = set(kw) - set(g) - set(f) - set(rest)
    if bad:
        raise KeyError(f"unknown keys {sorted(bad)}")
    if "l_vox" in f and "tau" not in rest:
        rest["tau"] = None  # truncation follows the new voxel size
    return replace(cfg, ghpr=replace(cfg.ghpr, **g), los=replace(cfg.los, **f), **rest)
