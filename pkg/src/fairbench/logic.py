"""Logical processors: collapse several binary sensitive attributes into one."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Dataset, DatasetError

BUILTIN_KINDS = ("or", "and", "xor")
KINDS = BUILTIN_KINDS + ("identity", "custom")


@dataclass(frozen=True)
class LogicalProcessor:
    """A boolean map from k binary sensitive columns to one binary column.

    ``table`` is only used by ``kind="custom"``: entry ``i`` is the output for
    the input bits whose big-endian binary encoding is ``i`` (first column is
    the most significant bit).
    """

    kind: str
    table: tuple[int, ...] | None = None

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in KINDS:
            raise ValueError(f"unknown logical processor {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "custom":
            if self.table is None:
                raise ValueError("custom logical processor needs a truth table")
            table = tuple(int(v) for v in self.table)
            if any(v not in (0, 1) for v in table):
                raise ValueError("truth table outputs must be 0 or 1")
            k = len(table).bit_length() - 1
            if len(table) < 2 or 2**k != len(table):
                raise ValueError(f"truth table length {len(table)} is not a power of two")
            object.__setattr__(self, "table", table)

    @property
    def arity(self) -> int | None:
        if self.kind in BUILTIN_KINDS:
            return 2
        if self.kind == "identity":
            return 1
        return len(self.table).bit_length() - 1

    @property
    def name(self) -> str:
        return self.kind

    def evaluate(self, columns: Sequence[np.ndarray]) -> np.ndarray:
        cols = [np.asarray(c) for c in columns]
        for c in cols:
            if not np.all((c == 0) | (c == 1)):
                raise DatasetError("logical processor inputs must be binary")
        if len(cols) != self.arity:
            raise ValueError(f"{self.kind} takes {self.arity} columns, got {len(cols)}")
        cols = [c.astype(np.int8) for c in cols]
        if self.kind == "or":
            return cols[0] | cols[1]
        if self.kind == "and":
            return cols[0] & cols[1]
        if self.kind == "xor":
            return cols[0] ^ cols[1]
        if self.kind == "identity":
            return cols[0].copy()
        index = np.zeros(cols[0].shape, dtype=np.int64)
        for c in cols:
            index = index * 2 + c
        return np.asarray(self.table, dtype=np.int8)[index]


def parse_lp(value) -> LogicalProcessor | None:
    """Accept ``or|and|xor|none`` (case-insensitive) or an existing processor."""
    if value is None or isinstance(value, LogicalProcessor):
        return value
    value = str(value).lower()
    if value in ("none", "single", ""):
        return None
    return LogicalProcessor(value)


def apply_lp(lp: LogicalProcessor, data: Dataset, columns: Sequence[str]) -> Dataset:
    """Append the combined attribute as a new sensitive column named after the LP kind."""
    inputs = [data.column(c) for c in columns]
    return data.with_sensitive(lp.name, lp.evaluate(inputs))


def lp_counts(data: Dataset, columns: Sequence[str]) -> tuple[float, float, float]:
    """Weighted counts of rows where OR, AND and XOR equal one.

    With unit weights these are exact integers, so identities such as
    ``OR = AND + XOR`` can be checked without rounding.
    """
    a1, a2 = (data.column(c) for c in columns)
    return tuple(float(data.weights[LogicalProcessor(k).evaluate([a1, a2]) == 1].sum()) for k in BUILTIN_KINDS)


def lp_rates(data: Dataset, columns: Sequence[str]) -> tuple[float, float, float]:
    """Weighted proportions of OR, AND and XOR equal to one."""
    total = data.weights.sum()
    return tuple(float(c / total) for c in lp_counts(data, columns))
