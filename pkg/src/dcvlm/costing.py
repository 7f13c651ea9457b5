"""Exact multiply-add and parameter accounting.

Counts are exact integers derived from layer configuration, never timing
estimates. One multiply-add (MAC) is one multiply plus one accumulate;
reports that compare against published FLOP figures state the MACs-per-
FLOP convention they use explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class CostRecord:
    name: str
    multiply_adds: int
    parameters: int


@dataclass
class CostReport:
    records: list[CostRecord] = field(default_factory=list)

    def add(self, name: str, multiply_adds: int, parameters: int) -> None:
        self.records.append(CostRecord(name, int(multiply_adds), int(parameters)))

    def extend(self, other: "CostReport", prefix: str = "") -> None:
        for rec in other.records:
            self.records.append(
                CostRecord(prefix + rec.name, rec.multiply_adds, rec.parameters)
            )

    @property
    def total_multiply_adds(self) -> int:
        return sum(r.multiply_adds for r in self.records)

    @property
    def total_parameters(self) -> int:
        return sum(r.parameters for r in self.records)

    def to_csv(self) -> str:
        lines = ["name,multiply_adds,parameters"]
        for r in self.records:
            lines.append(f"{r.name},{r.multiply_adds},{r.parameters}")
        lines.append(f"TOTAL,{self.total_multiply_adds},{self.total_parameters}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max([len(r.name) for r in self.records] + [5])
        lines = [f"{'layer':<{width}}  {'mult-adds':>14}  {'params':>12}"]
        for r in self.records:
            lines.append(f"{r.name:<{width}}  {r.multiply_adds:>14}  {r.parameters:>12}")
        lines.append(
            f"{'TOTAL':<{width}}  {self.total_multiply_adds:>14}  {self.total_parameters:>12}"
        )
        return "\n".join(lines) + "\n"


def human(n: float) -> str:
    """1234567 -> '1.23M'; used only for display, never for assertions."""
    for unit, scale in (("G", 1e9), ("M", 1e6), ("K", 1e3)):
        if abs(n) >= scale:
            return f"{n / scale:.2f}{unit}"
    return f"{n:.0f}"
