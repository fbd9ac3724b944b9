"""Character error rate: Levenshtein alignment counts, pooling and comparison tables."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from rasr.errors import EmptyInputError, EmptyReferenceError

SCHEMA = "rasr-eval/1"

Normalizer = Callable[[str], str]


_VECTORIZE_CELLS = 2500  # DP cells above which rows are computed with numpy


def _matrix_py(reference: str, hypothesis: str) -> list[list[int]]:
    m = len(hypothesis)
    prev = list(range(m + 1))
    rows = [prev]
    for i, r in enumerate(reference, start=1):
        cur = [i]
        left = i
        for j in range(1, m + 1):
            d = prev[j - 1] + (r != hypothesis[j - 1])
            x = prev[j] + 1
            if x < d:
                d = x
            x = left + 1
            if x < d:
                d = x
            cur.append(d)
            left = d
        rows.append(cur)
        prev = cur
    return rows


def _matrix_np(reference: str, hypothesis: str) -> list[list[int]]:
    # cur[j] = min_{l<=j} (t[l] + j - l): the insertion chain is a running minimum
    hyp = np.array([ord(c) for c in hypothesis], dtype=np.int64)
    m = len(hyp)
    ramp = np.arange(m + 1, dtype=np.int64)
    mat = np.empty((len(reference) + 1, m + 1), dtype=np.int64)
    mat[0] = ramp
    t = np.empty(m + 1, dtype=np.int64)
    for i, r in enumerate(reference, start=1):
        prev = mat[i - 1]
        t[0] = i
        np.minimum(prev[:-1] + (hyp != ord(r)), prev[1:] + 1, out=t[1:])
        mat[i] = np.minimum.accumulate(t - ramp) + ramp
    return mat.tolist()


def char_edit_distance(reference: str, hypothesis: str) -> tuple[int, int, int]:
    """Return ``(substitutions, deletions, insertions)`` of a minimal unit-cost alignment.

    The backtrace prefers the diagonal (match/substitution), then deletion,
    then insertion, so the decomposition is deterministic. Common prefixes and
    suffixes are stripped first; with this preference order that leaves the
    counts unchanged.
    """
    n, m = len(reference), len(hypothesis)
    lo = 0
    while lo < n and lo < m and reference[lo] == hypothesis[lo]:
        lo += 1
    hi = 0
    while hi < n - lo and hi < m - lo and reference[n - 1 - hi] == hypothesis[m - 1 - hi]:
        hi += 1
    reference = reference[lo:n - hi]
    hypothesis = hypothesis[lo:m - hi]
    n, m = len(reference), len(hypothesis)
    if n == 0 or m == 0:
        return 0, n, m
    rows = _matrix_np(reference, hypothesis) if n * m > _VECTORIZE_CELLS else _matrix_py(reference, hypothesis)

    i, j = n, m
    subs = dels = ins = 0
    while i and j:
        here = rows[i][j]
        diff = reference[i - 1] != hypothesis[j - 1]
        if here == rows[i - 1][j - 1] + diff:
            subs += diff
            i -= 1
            j -= 1
        elif here == rows[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, dels + i, ins + j


@dataclass(frozen=True)
class CerReport:
    substitutions: int
    deletions: int
    insertions: int
    reference_chars: int

    def __post_init__(self):
        if min(self.substitutions, self.deletions, self.insertions, self.reference_chars) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def cer(self) -> float:
        return self.errors / self.reference_chars if self.reference_chars else 0.0

    def to_dict(self) -> dict:
        return {"substitutions": self.substitutions, "deletions": self.deletions,
                "insertions": self.insertions, "reference_chars": self.reference_chars, "cer": self.cer}

    @classmethod
    def from_dict(cls, d: dict) -> "CerReport":
        return cls(d["substitutions"], d["deletions"], d["insertions"], d["reference_chars"])


def cer_report(reference: str, hypothesis: str, normalizer: Normalizer | None = None) -> CerReport:
    if normalizer is not None:
        reference, hypothesis = normalizer(reference), normalizer(hypothesis)
    if not reference:
        raise EmptyReferenceError("CER is undefined for an empty reference")
    s, d, i = char_edit_distance(reference, hypothesis)
    return CerReport(s, d, i, len(reference))


def cer(reference: str, hypothesis: str, normalizer: Normalizer | None = None) -> float:
    return cer_report(reference, hypothesis, normalizer).cer


def pool_cer(reports: Sequence[CerReport]) -> CerReport:
    """Micro-average: total errors over total reference characters."""
    if not reports:
        raise EmptyInputError("nothing to pool")
    return CerReport(sum(r.substitutions for r in reports), sum(r.deletions for r in reports),
                     sum(r.insertions for r in reports), sum(r.reference_chars for r in reports))


def relative_improvement(base: float, x: float) -> float:
    return (base - x) / base


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    instruction: bool
    report: CerReport
    failed: int = 0


@dataclass(frozen=True)
class StrategyComparison:
    """Table of pooled CERs, one row per (strategy, instruction) cell.

    ``baseline`` defaults to the row whose label is ``baseline_label``.
    """

    rows: tuple[ComparisonRow, ...]
    baseline_label: str
    baseline: CerReport | None = field(default=None)

    def baseline_report(self) -> CerReport:
        if self.baseline is not None:
            return self.baseline
        for row in self.rows:
            if row.label == self.baseline_label:
                return row.report
        raise KeyError(f"no row labelled {self.baseline_label!r}")

    def improvements(self) -> list[float]:
        base = self.baseline_report().cer
        return [relative_improvement(base, r.report.cer) if base else 0.0 for r in self.rows]

    def to_dict(self) -> dict:
        base = self.baseline_report()
        return {
            "schema": SCHEMA,
            "baseline_label": self.baseline_label,
            "baseline": base.to_dict() if self.baseline is not None else None,
            "rows": [{"label": r.label, "instruction": r.instruction, "failed": r.failed,
                      **r.report.to_dict(), "relative_improvement": imp}
                     for r, imp in zip(self.rows, self.improvements())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyComparison":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        rows = tuple(ComparisonRow(r["label"], r["instruction"], CerReport.from_dict(r), r.get("failed", 0))
                     for r in d["rows"])
        base = CerReport.from_dict(d["baseline"]) if d.get("baseline") else None
        return cls(rows, d["baseline_label"], base)


def render_table(cmp: StrategyComparison) -> tuple[str, str]:
    """Aligned text table plus a full-precision JSON sidecar."""
    header = ("strategy", "I", "S", "D", "Ins", "ref chars", "CER %", "rel. impr. %")
    body = []
    for row, imp in zip(cmp.rows, cmp.improvements()):
        r = row.report
        body.append((row.label, "yes" if row.instruction else "no", str(r.substitutions), str(r.deletions),
                     str(r.insertions), str(r.reference_chars), f"{100 * r.cer:.2f}", f"{100 * imp:+.1f}"))
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]

    def line(cells):
        first = cells[0].ljust(widths[0])
        rest = (c.rjust(w) for c, w in zip(cells[1:], widths[1:]))
        return "  ".join([first, *rest]).rstrip()

    lines = [line(header), line(["-" * w for w in widths]), *(line(b) for b in body),
             f"baseline: {cmp.baseline_label} (CER {100 * cmp.baseline_report().cer:.2f} %)"]
    return "\n".join(lines) + "\n", json.dumps(cmp.to_dict(), indent=2, ensure_ascii=False)
