"""Reader for the sectioned, line-oriented text files used by chains and scenarios.

A file is a sequence of ``[name attr ...]`` headers, each followed by rows of
whitespace-separated tokens.  ``key = v1 v2`` and ``key v1 v2`` are equivalent.
``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


class FormatError(ValueError):
    pass


@dataclass
class Section:
    name: str
    attrs: dict[str, str] = field(default_factory=dict)
    rows: list[list[str]] = field(default_factory=list)
    lineno: int = 0

    def get(self, key: str, default: list[str] | None = None) -> list[str] | None:
        for row in self.rows:
            if row and row[0] == key:
                return row[1:]
        return default

    def has(self, key: str) -> bool:
        return self.get(key) is not None

    def floats(self, key: str, n: int | None = None, default=None) -> list[float]:
        vals = self.get(key)
        if vals is None:
            if default is None:
                raise FormatError(f"[{self.name}] (line {self.lineno}): missing key {key!r}")
            return default
        try:
            out = [float(v) for v in vals]
        except ValueError as exc:
            raise FormatError(f"[{self.name}] key {key!r}: {exc}") from None
        if n is not None and len(out) != n:
            raise FormatError(f"[{self.name}] key {key!r}: expected {n} numbers, got {len(out)}")
        return out

    def float(self, key: str, default: float | None = None) -> float:
        vals = self.floats(key, default=None if default is None else [default])
        if len(vals) != 1:
            raise FormatError(f"[{self.name}] key {key!r}: expected one number")
        return vals[0]

    def int(self, key: str, default: int | None = None) -> int:
        return int(round(self.float(key, None if default is None else float(default))))

    def str(self, key: str, default: str | None = None) -> str:
        vals = self.get(key)
        if not vals:
            if default is None:
                raise FormatError(f"[{self.name}] (line {self.lineno}): missing key {key!r}")
            return default
        return " ".join(vals)


def parse_text(text: str) -> list[Section]:
    sections: list[Section] = []
    current: Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise FormatError(f"line {lineno}: unterminated section header")
            tokens = line[1:-1].split()
            if not tokens:
                raise FormatError(f"line {lineno}: empty section header")
            attrs = {}
            for i, tok in enumerate(tokens[1:]):
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    attrs[k] = v
                else:
                    attrs["id" if i == 0 else f"arg{i}"] = tok
            current = Section(tokens[0], attrs, lineno=lineno)
            sections.append(current)
            continue
        if current is None:
            raise FormatError(f"line {lineno}: content before first section")
        if "=" in line:
            key, value = line.split("=", 1)
            row = [key.strip(), *value.split()]
        else:
            row = line.split()
        current.rows.append(row)
    return sections


def parse_file(path: str | Path) -> list[Section]:
    return parse_text(Path(path).read_text())


def fmt(x: float) -> str:
    """Shortest round-trip float formatting, stable across runs."""
    return repr(float(x))
