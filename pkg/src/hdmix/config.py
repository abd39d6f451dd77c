"""Flat sectioned ``key = value`` run configuration.

Example::

    command = demo-contact

    [mesh]
    nx = 8
    ny = 8

    [material]
    beta = 1
    eta = 0.5
    omega = 1

Keys before the first section header belong to ``[run]``. Lists are
comma-separated. Time modulations are arithmetic expressions in ``t``.
Every problem found is reported with its line number; parsing never stops at
the first error.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

COMMANDS = ("solve", "study-convergence", "optimize", "verify", "demo-contact")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


# ----------------------------------------------------------------- expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCS = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "sqrt": math.sqrt,
          "min": min, "max": max, "abs": abs}
_CONSTS = {"pi": math.pi}


@dataclass(frozen=True)
class Modulation:
    """Scalar function of time given as an arithmetic expression in ``t``."""

    source: str
    _tree: ast.Expression = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        try:
            tree = ast.parse(self.source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ValueError(f"invalid expression {self.source!r}: {exc.msg}") from None
        for node in ast.walk(tree):
            ok = isinstance(node, (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Load,
                                   ast.operator, ast.unaryop))
            ok |= isinstance(node, ast.Constant) and isinstance(node.value, (int, float))
            ok |= isinstance(node, ast.Name) and (node.id == "t" or node.id in _FUNCS or node.id in _CONSTS)
            if isinstance(node, ast.Call):
                ok &= isinstance(node.func, ast.Name) and node.func.id in _FUNCS and not node.keywords
            if isinstance(node, ast.BinOp):
                ok &= type(node.op) in _BINOPS
            if isinstance(node, ast.UnaryOp):
                ok &= type(node.op) in _UNARY
            if not ok:
                raise ValueError(f"unsupported construct in expression {self.source!r}")
        object.__setattr__(self, "_tree", tree)
        self(0.0)

    def _eval(self, node, t):
        if isinstance(node, ast.Expression):
            return self._eval(node.body, t)
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return t if node.id == "t" else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, t), self._eval(node.right, t))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, t))
        return _FUNCS[node.func.id](*(self._eval(a, t) for a in node.args))

    def __call__(self, t: float) -> float:
        try:
            v = float(self._eval(self._tree, float(t)))
        except (ArithmeticError, ValueError) as exc:
            raise ValueError(f"expression {self.source!r} fails at t={t}: {exc}") from None
        if not math.isfinite(v):
            raise ValueError(f"expression {self.source!r} is not finite at t={t}")
        return v


# ---------------------------------------------------------------------- schema

def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(s: str) -> int:
    return int(s)


def _str(s: str) -> str:
    return s


def _floats(s: str) -> tuple[float, ...]:
    return tuple(_float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _names(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _choice(*options):
    def conv(s):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    conv.__name__ = "choice"
    return conv


def _ge(x):
    return lambda v: v >= x


def _gt(x):
    return lambda v: v > x


def _nonneg_all(v):
    return all(x >= 0 for x in v)


_TYPE_NAMES = {_float: "number", _int: "integer", _str: "string", _floats: "list of numbers",
               _ints: "list of integers", _names: "list of names", Modulation: "expression in t"}


@dataclass(frozen=True)
class Key:
    conv: Callable[[str], Any]
    default: Any = None
    check: Callable[[Any], bool] | None = None
    requirement: str = ""


SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "command": Key(_choice(*COMMANDS)),
        "out": Key(_str, "out"),
        "seed": Key(_int, 0, _ge(0), "seed ≥ 0"),
    },
    "mesh": {
        "file": Key(_str),
        "nx": Key(_int, 8, _ge(1), "nx ≥ 1"),
        "ny": Key(_int, 8, _ge(1), "ny ≥ 1"),
        "width": Key(_float, 1.0, _gt(0), "width > 0"),
        "height": Key(_float, 1.0, _gt(0), "height > 0"),
        "left": Key(_int, 1, lambda v: v in (1, 2, 3), "tag ∈ {1, 2, 3}"),
        "right": Key(_int, 2, lambda v: v in (1, 2, 3), "tag ∈ {1, 2, 3}"),
        "top": Key(_int, 2, lambda v: v in (1, 2, 3), "tag ∈ {1, 2, 3}"),
        "bottom": Key(_int, 3, lambda v: v in (1, 2, 3), "tag ∈ {1, 2, 3}"),
    },
    "material": {
        "beta": Key(_float, 1.0, _ge(0), "β ≥ 0"),
        "eta": Key(_float, 0.5, _ge(0), "η ≥ 0"),
        "omega": Key(_float, 1.0, _ge(0), "ω ≥ 0"),
    },
    "loads": {
        "body": Key(_floats, (0.0, -1.0), lambda v: len(v) == 2, "two components"),
        "traction": Key(_floats, (0.5, 0.0), lambda v: len(v) == 2, "two components"),
        "theta": Key(Modulation, Modulation("1")),
        "zeta": Key(Modulation, Modulation("t")),
    },
    "friction": {
        "g": Key(_float, 0.1, _ge(0), "g ≥ 0"),
    },
    "time": {
        "T": Key(_float, 1.0, _gt(0), "T > 0"),
        "N": Key(_int, 20, _ge(1), "N ≥ 1"),
        "scheme": Key(_choice("implicit", "explicit"), "implicit"),
    },
    "solver": {
        "tol": Key(_float, 1e-10, _gt(0), "tol > 0"),
        "inner_tol": Key(_float, 1e-12, _gt(0), "inner_tol > 0"),
        "max_iter": Key(_int, 10_000, _ge(1), "max_iter ≥ 1"),
    },
    "family": {
        "schedule": Key(_ints, (1, 2, 4, 8, 16, 32),
                        lambda v: len(v) > 0 and v[0] >= 1 and all(b > a for a, b in zip(v, v[1:])),
                        "strictly increasing indices ≥ 1"),
        "probe_times": Key(_floats, None, lambda v: len(v) > 0 and all(x >= 0 for x in v),
                           "nonempty times ≥ 0"),
        "fixed": Key(_names, (), lambda v: set(v) <= {"beta", "eta", "omega", "g", "body", "traction"},
                     "names among beta, eta, omega, g, body, traction"),
        "reference_tol": Key(_float, 1e-12, _gt(0), "reference_tol > 0"),
    },
    "cost": {
        "kind": Key(_choice("tracking", "misfit"), "tracking"),
        "t": Key(_float, None, _ge(0), "t ≥ 0"),
        "c1": Key(_float, 1.0, _ge(0), "c1 ≥ 0"),
        "c2": Key(_float, 1.0, _ge(0), "c2 ≥ 0"),
        "c3": Key(_float, 0.0, _ge(0), "c3 ≥ 0"),
        "target": Key(_floats, (1.0, 0.5, 1.0, 1.0, 1.0, 0.1), lambda v: len(v) == 6,
                      "six values beta, eta, omega, a0, a2, g"),
        "p_weights": Key(_floats, (1.0,) * 6, lambda v: len(v) == 6 and _nonneg_all(v),
                         "six weights ≥ 0"),
    },
    "box": {
        "lo": Key(_floats, (0.5, 0.25, 0.5, 0.5, 0.5, 0.05), lambda v: len(v) == 6, "six values"),
        "hi": Key(_floats, (2.0, 1.0, 2.0, 2.0, 2.0, 0.2), lambda v: len(v) == 6, "six values"),
        "floor": Key(_float, 1e-3, _gt(0), "floor δ₀ > 0"),
    },
    "optimize": {
        "budget": Key(_int, 300, _ge(1), "budget ≥ 1"),
        "resolution": Key(_int, 4, _ge(2), "resolution ≥ 2"),
    },
    "verify": {
        "samples": Key(_int, 100, _ge(1), "samples ≥ 1"),
        "instances": Key(_int, 50, _ge(1), "instances ≥ 1"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration: ``sections[name][key]`` holds converted values.

    ``explicit`` records which keys were set in the file (the rest are
    defaults); ``base_dir`` resolves relative paths.
    """

    sections: dict
    explicit: frozenset
    base_dir: Path = Path(".")

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    @property
    def command(self) -> str:
        return self.sections["run"]["command"]

    @property
    def mesh_file(self) -> Path | None:
        f = self.sections["mesh"]["file"]
        if f is None:
            return None
        p = Path(f)
        return p if p.is_absolute() else self.base_dir / p

    def probe_times(self) -> tuple[float, ...]:
        pt = self.sections["family"]["probe_times"]
        T = self.sections["time"]["T"]
        return pt if pt is not None else (T / 2, T)

    def cost_time(self) -> float:
        t = self.sections["cost"]["t"]
        return self.sections["time"]["T"] if t is None else t

    def echo(self) -> str:
        """Normalized text form of every value (defaults included)."""
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                v = self.sections[section][key]
                # unset optional keys stay commented so the echo parses back
                lines.append(f"# {key} =" if v is None else f"{key} = {format_value(v)}")
            lines.append("")
        return "\n".join(lines)


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, Modulation):
        return v.source
    if isinstance(v, tuple):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str, base_dir: str | Path | None = None,
                 command: str | None = None) -> RunConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem.

    ``command`` (from the command line) fills in a missing ``command`` key and
    must agree with it when both are given.
    """
    errors: list[str] = []
    values = {s: {} for s in SCHEMA}
    seen: dict[tuple[str, str], int] = {}
    section = "run"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            name = line[1:-1].strip() if line.endswith("]") else None
            if name is None:
                errors.append(f"line {lineno}: malformed section header {line!r}")
            elif name not in SCHEMA:
                errors.append(f"line {lineno}: unknown section [{name}]")
                section = None
            else:
                section = name
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, _, raw_value = (part.strip() for part in line.partition("="))
        if section is None:
            errors.append(f"line {lineno}: key {key!r} belongs to an unknown section")
            continue
        spec = SCHEMA[section].get(key)
        if spec is None:
            errors.append(f"line {lineno}: unknown key {key!r} in [{section}]")
            continue
        if (section, key) in seen:
            errors.append(f"line {lineno}: duplicate key {key!r} in [{section}] "
                          f"(first set on line {seen[section, key]})")
            continue
        seen[section, key] = lineno
        try:
            value = spec.conv(raw_value)
        except (ValueError, TypeError) as exc:
            kind = _TYPE_NAMES.get(spec.conv, "value")
            errors.append(f"line {lineno}: [{section}] {key} = {raw_value!r}: expected {kind} ({exc})")
            continue
        if spec.check is not None and not spec.check(value):
            errors.append(f"line {lineno}: [{section}] {key} = {raw_value}: out of range, "
                          f"requires {spec.requirement}")
            continue
        values[section][key] = value

    if command is not None:
        given = values["run"].get("command")
        if given is None:
            values["run"]["command"] = command
        elif given != command:
            errors.append(f"line {seen['run', 'command']}: config command {given!r} "
                          f"conflicts with command line {command!r}")
    if "command" not in values["run"] and ("run", "command") not in seen:
        errors.append("missing required key 'command'")

    sections = {s: {k: values[s].get(k, spec.default) for k, spec in keys.items()}
                for s, keys in SCHEMA.items()}
    base = Path(base_dir) if base_dir is not None else Path(".")
    errors += _cross_checks(sections, seen, base)
    if errors:
        raise ConfigError(errors)
    return RunConfig(sections, frozenset(seen), base)


def _cross_checks(sec: dict, seen: dict, base: Path) -> list[str]:
    errors = []

    def where(section, key):
        return f"line {seen[section, key]}: " if (section, key) in seen else ""

    f = sec["mesh"]["file"]
    if f is not None:
        p = Path(f) if Path(f).is_absolute() else base / f
        if not p.is_file():
            errors.append(f"{where('mesh', 'file')}mesh file {str(p)!r} does not exist")
    T, N = sec["time"]["T"], sec["time"]["N"]
    dt = T / N

    def on_grid(t):
        k = round(t / dt)
        return 0 <= k <= N and abs(k * dt - t) <= 1e-9 * max(1.0, t)

    for t in sec["family"]["probe_times"] or ():
        if not on_grid(t):
            errors.append(f"{where('family', 'probe_times')}probe time {t} is not a node of the "
                          f"time grid (T={T}, N={N})")
    t = sec["cost"]["t"]
    if t is not None and not on_grid(t):
        errors.append(f"{where('cost', 't')}cost time {t} is not a node of the time grid")
    lo, hi = sec["box"]["lo"], sec["box"]["hi"]
    if len(lo) == len(hi) == 6:
        for i, name in enumerate(("beta", "eta", "omega", "a0", "a2", "g")):
            if lo[i] > hi[i]:
                errors.append(f"{where('box', 'lo')}box is empty along {name} ({lo[i]} > {hi[i]})")
            if name in ("beta", "eta", "omega", "g") and lo[i] < sec["box"]["floor"]:
                errors.append(f"{where('box', 'lo')}lower bound of {name} is below the floor "
                              f"δ₀ = {sec['box']['floor']}")
    return errors


def read_config(path: str | Path, command: str | None = None) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent, command=command)
