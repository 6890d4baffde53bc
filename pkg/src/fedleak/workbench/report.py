"""Machine-readable attack reports with a fixed field order."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

PASS, FAIL, ERROR = "pass", "fail", "error"
VOLATILE = ("timing",)


@dataclass
class AttackReport:
    kind: str
    seed: int
    status: str = ERROR
    kdr: Optional[float] = None
    rel_error: Optional[float] = None
    estimate_rel_error: Optional[float] = None
    solution_count: Optional[int] = None
    tolerance: Optional[float] = None
    constraints: dict = field(default_factory=dict)
    known_entries: list = field(default_factory=list)
    tree: Optional[dict] = None
    sweeps: dict = field(default_factory=dict)
    assumptions: list = field(default_factory=list)
    error: Optional[dict] = None
    scenario: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self, volatile: bool = True) -> dict:
        d = asdict(self)
        if not volatile:
            for k in VOLATILE:
                d.pop(k)
        return d

    def to_json(self, volatile: bool = True) -> str:
        return json.dumps(self.to_dict(volatile), indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "AttackReport":
        names = [f.name for f in fields(cls)]
        unknown = set(d) - set(names)
        if unknown:
            raise ValueError(f"unknown report fields {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "AttackReport":
        return cls.from_dict(json.loads(text))

    def summary(self) -> str:
        lines = [f"{self.kind} seed={self.seed}: {self.status.upper()}"]
        if self.kdr is not None:
            lines.append(f"  KDR            {100 * self.kdr:.1f}%")
        if self.rel_error is not None:
            lines.append(f"  relative error {self.rel_error:.3e} (tolerance {self.tolerance:g})")
        if self.solution_count is not None:
            lines.append(f"  candidates     {self.solution_count}")
        if self.tree:
            t = self.tree
            lines.append(f"  victim nodes   {t['victim_nodes']}")
            lines.append(f"  n_q            {t['n_q']}")
            lines.append(f"  queries N_Q    {t['queries']} (+{t['discovery_queries']} discovery)")
            lines.append(f"  max |error|    {t['max_abs_error']:.3e} (epsilon {t['epsilon']:g})")
        if self.error:
            lines.append(f"  error in {self.error['stage']}: {self.error['message']}")
        return "\n".join(lines)


def diff_reports(a: AttackReport, b: AttackReport, rtol: float = 0.0) -> list[str]:
    """Field-level differences, ignoring timing and where the outputs were written."""
    x, y = a.to_dict(False), b.to_dict(False)
    for d in (x, y):
        d.get("scenario", {}).pop("output", None)
    return _diff(x, y, "", rtol)


def _diff(x: Any, y: Any, path: str, rtol: float) -> list[str]:
    if isinstance(x, dict) and isinstance(y, dict):
        out = []
        for k in list(x) + [k for k in y if k not in x]:
            sub = f"{path}.{k}" if path else str(k)
            if k not in x or k not in y:
                out.append(f"{sub}: present in only one report")
            else:
                out += _diff(x[k], y[k], sub, rtol)
        return out
    if isinstance(x, list) and isinstance(y, list):
        if len(x) != len(y):
            return [f"{path}: length {len(x)} != {len(y)}"]
        out = []
        for i, (u, v) in enumerate(zip(x, y)):
            out += _diff(u, v, f"{path}[{i}]", rtol)
        return out
    if (isinstance(x, float) and isinstance(y, (int, float)) and not isinstance(y, bool)
            and rtol > 0):
        if abs(x - y) <= rtol * max(abs(x), abs(y)):
            return []
    return [] if x == y else [f"{path}: {x!r} != {y!r}"]
