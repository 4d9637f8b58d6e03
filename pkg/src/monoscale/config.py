"""JSON experiment configuration: parsing, validation and defaults."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .loads import Load
from .mesh import Box
from .operators import (
    CellProfile,
    ModulusSpec,
    MonotoneMapSpec,
    XModulation,
    make_spec,
    piecewise_spec,
)
from .solver import SolveOptions

KINDS = ("audit", "effective", "convergence", "corrector")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


def _profile(d, name: str) -> CellProfile:
    if d is None:
        return CellProfile()
    if isinstance(d, (int, float)):
        return CellProfile("constant", (float(d),))
    try:
        return CellProfile(d.get("kind", "constant"), tuple(d.get("values", (1.0,))), int(d.get("axis", 0)))
    except (ValueError, TypeError, AttributeError) as exc:
        raise ConfigError(name, str(exc)) from None


def parse_operator(d: dict, dim: int, domain: Box, name: str = "operator") -> MonotoneMapSpec:
    if not isinstance(d, dict):
        raise ConfigError(name, "expected an object")
    try:
        if "parts" in d:
            parts = []
            for i, p in enumerate(d["parts"]):
                box = Box(tuple(p["box"]["lower"]), tuple(p["box"]["upper"]))
                parts.append((box, parse_operator(p["operator"], dim, box, f"{name}.parts[{i}]")))
            return piecewise_spec(parts)
        family = d.get("family")
        if family is None:
            raise ConfigError(f"{name}.family", "missing")
        modulation = None
        if d.get("modulation") is not None:
            m = d["modulation"]
            modulation = XModulation(
                m.get("target", "c"), float(m.get("mean", 1.0)), float(m.get("amplitude", 0.0)), int(m.get("axis", 0))
            )
        modulus = None
        if d.get("modulus") is not None:
            m = d["modulus"]
            modulus = ModulusSpec(m.get("form", "linear"), float(m.get("L", 1.0)), float(m.get("p", 1.0)))
        return make_spec(
            family,
            dim,
            coefficient=_profile(d.get("coefficient"), f"{name}.coefficient"),
            theta=_profile(d.get("theta"), f"{name}.theta"),
            matrix=d.get("matrix"),
            modulation=modulation,
            modulus=modulus,
            domain=domain,
            alpha=d.get("alpha"),
            beta=d.get("beta"),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(name, str(exc)) from None


def parse_epsilon(v) -> float:
    if isinstance(v, str):
        return float(Fraction(v.strip()))
    return float(v)


@dataclass
class ExperimentConfig:
    kind: str
    operator: dict
    dim: int = 1
    domain: dict | None = None
    cell_n: int = 64
    macro_n: int = 256
    epsilons: list = field(default_factory=list)
    load: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    solver: dict = field(default_factory=dict)
    seed: int = 0
    n_samples: int = 200
    n_x_pairs: int = 20
    xi_grid: list = field(default_factory=list)
    x: list | None = None
    anchor_rule: str = "center"
    anchor_mode: str = "gamma"
    table: dict = field(default_factory=lambda: {"lo": -10.0, "hi": 10.0, "step": 0.25})
    oracle_tol: float = 1e-4
    min_cells_per_period: int = 8
    output_dir: str = "out"
    threads: int = 1

    # resolved objects
    spec: MonotoneMapSpec = field(init=False, repr=False)
    box: Box = field(init=False, repr=False)
    eps_values: list[float] = field(init=False, repr=False)
    load_obj: Load = field(init=False, repr=False)
    solve_options: SolveOptions = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("kind", f"must be one of {KINDS}, got {self.kind!r}")
        if self.dim not in (1, 2):
            raise ConfigError("dim", f"must be 1 or 2, got {self.dim}")
        if self.domain is None:
            self.domain = Box.unit(self.dim).to_dict()
        try:
            self.box = Box(tuple(self.domain["lower"]), tuple(self.domain["upper"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("domain", str(exc)) from None
        if self.box.dim != self.dim:
            raise ConfigError("domain", f"is {self.box.dim}D but dim={self.dim}")
        self.spec = parse_operator(self.operator, self.dim, self.box)
        for name in ("cell_n", "macro_n", "n_samples", "min_cells_per_period"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if self.cell_n < 2:
            raise ConfigError("cell_n", "must be at least 2")
        try:
            self.eps_values = [parse_epsilon(e) for e in self.epsilons]
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError("epsilons", str(exc)) from None
        for e in self.eps_values:
            if not e > 0:
                raise ConfigError("epsilons", f"must be positive, got {e}")
            if abs(1 / e - round(1 / e)) > 1e-9 * (1 / e):
                raise ConfigError("epsilons", f"{e} is not the reciprocal of an integer")
        if any(b >= a for a, b in zip(self.eps_values, self.eps_values[1:])):
            raise ConfigError("epsilons", "must be strictly decreasing")
        if self.kind in ("convergence", "corrector"):
            if not self.eps_values:
                raise ConfigError("epsilons", f"required for kind={self.kind}")
            h = float(max(self.box.sides)) / self.macro_n
            for e in self.eps_values:
                if e / h < self.min_cells_per_period * (1 - 1e-12):
                    raise ConfigError(
                        "macro_n",
                        f"epsilon={e} has {e / h:.3g} elements per period, need {self.min_cells_per_period}",
                    )
        if self.kind == "effective" and not self.xi_grid:
            raise ConfigError("xi_grid", "required for kind=effective")
        if self.anchor_rule not in ("center", "corner"):
            raise ConfigError("anchor_rule", f"unknown rule {self.anchor_rule!r}")
        if self.anchor_mode not in ("gamma", "part_anchor"):
            raise ConfigError("anchor_mode", f"unknown mode {self.anchor_mode!r}")
        try:
            self.load_obj = Load.from_dict(self.load)
        except (ValueError, TypeError, AttributeError) as exc:
            raise ConfigError("load", str(exc)) from None
        try:
            self.solve_options = SolveOptions(**self.solver)
            self.solve_options.resolved_tau(self.spec.alpha, self.spec.beta)
        except (ValueError, TypeError) as exc:
            raise ConfigError("solver", str(exc)) from None
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigError("threads", f"must be a positive integer, got {self.threads!r}")
        if not (isinstance(self.table, dict) and self.table.get("hi", 0) > self.table.get("lo", 0) and self.table.get("step", 0) > 0):
            raise ConfigError("table", "needs lo < hi and step > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "expected a JSON object")
        known = {f for f in cls.__dataclass_fields__ if cls.__dataclass_fields__[f].init}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        for req in ("kind", "operator"):
            if req not in d:
                raise ConfigError(req, "missing")
        return cls(**d)

    @classmethod
    def load_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<root>", f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def echo(self) -> dict:
        """Every input field with defaults resolved, plus the resolved operator constants."""
        out = {f: getattr(self, f) for f in self.__dataclass_fields__ if self.__dataclass_fields__[f].init}
        out["resolved"] = {
            "operator": self.spec.to_dict(),
            "epsilons": self.eps_values,
            "solver": self.solve_options.to_dict(),
            "load": self.load_obj.to_dict(),
        }
        return out

    def table_knots(self) -> list:
        lo, hi, step = float(self.table["lo"]), float(self.table["hi"]), float(self.table["step"])
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [lo + i * step for i in range(n)]
