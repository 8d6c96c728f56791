"""Catalog of poem forms: SHI forms, CI tune patterns (Cipai), and the
body-token skeleton each form prescribes.

A form fixes the number of lines, the character count of every line, and
(for two-stanza CI) where the stanza break falls. Everything downstream
(serialization, evaluation) keys on these specs by name.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

# Structural separator characters of the serialized sample format. They may
# not occur inside form names, titles, or body lines.
RESERVED_CHARS = frozenset(",#*&")


class FormError(ValueError):
    """Invalid form definition or registry file."""


class Category(enum.Enum):
    SHI = "SHI"
    CI = "CI"


class SlotKind(enum.Enum):
    """What a single body-token position must hold."""

    CHARACTER = "char"
    LINE_SEP = "line_sep"
    STANZA_SEP = "stanza_sep"


@dataclass(frozen=True)
class FormSpec:
    """One poem form: per-line character counts plus an optional stanza break.

    ``stanza_break`` is the number of lines in the first stanza; lines
    ``1..stanza_break`` form stanza one. SHI forms never carry a break and
    must have uniform line lengths.
    """

    name: str
    category: Category
    line_lengths: tuple[int, ...]
    stanza_break: int | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise FormError("form name must be non-empty")
        bad = RESERVED_CHARS.intersection(self.name)
        if bad:
            raise FormError(
                f"form name {self.name!r} contains reserved separator "
                f"character(s) {''.join(sorted(bad))!r}"
            )
        if not isinstance(self.line_lengths, tuple):
            object.__setattr__(self, "line_lengths", tuple(self.line_lengths))
        if len(self.line_lengths) == 0:
            raise FormError(f"form {self.name!r}: line_lengths must be non-empty")
        if any(not isinstance(n, int) or n < 1 for n in self.line_lengths):
            raise FormError(f"form {self.name!r}: every line length must be >= 1")
        if self.category is Category.SHI:
            if self.stanza_break is not None:
                raise FormError(f"form {self.name!r}: SHI forms cannot have a stanza break")
            if len(set(self.line_lengths)) != 1:
                raise FormError(f"form {self.name!r}: SHI forms need equal line lengths")
        if self.stanza_break is not None:
            if not isinstance(self.stanza_break, int):
                raise FormError(f"form {self.name!r}: stanza_break must be an integer")
            if not 1 <= self.stanza_break < len(self.line_lengths):
                raise FormError(
                    f"form {self.name!r}: stanza_break {self.stanza_break} out of "
                    f"range for {len(self.line_lengths)} lines"
                )

    @property
    def line_count(self) -> int:
        return len(self.line_lengths)

    @property
    def body_length(self) -> int:
        """Total characters in the body, punctuation and separators excluded."""
        return sum(self.line_lengths)


def builtin_shi_forms() -> list[FormSpec]:
    """The four standard SHI forms, always present in every registry."""
    return [
        FormSpec("Wuyan Jueju", Category.SHI, (5,) * 4),
        FormSpec("Qiyan Jueju", Category.SHI, (7,) * 4),
        FormSpec("Wuyan Lvshi", Category.SHI, (5,) * 8),
        FormSpec("Qiyan Lvshi", Category.SHI, (7,) * 8),
    ]


BUILTIN_FORM_NAMES = frozenset(spec.name for spec in builtin_shi_forms())


class FormRegistry:
    """Immutable-after-construction name -> FormSpec map.

    Always contains the built-in SHI forms. Safe for concurrent reads.
    """

    def __init__(self, forms: Iterable[FormSpec] = ()) -> None:
        self._forms: dict[str, FormSpec] = {s.name: s for s in builtin_shi_forms()}
        for spec in forms:
            self.add(spec)

    def add(self, spec: FormSpec) -> None:
        if spec.name in self._forms:
            raise FormError(f"duplicate form name {spec.name!r}")
        self._forms[spec.name] = spec

    def lookup(self, name: str) -> FormSpec:
        try:
            return self._forms[name]
        except KeyError:
            raise FormError(f"unknown form {name!r}") from None

    def get(self, name: str) -> FormSpec | None:
        return self._forms.get(name)

    def names(self) -> list[str]:
        return list(self._forms)

    def user_forms(self) -> list[FormSpec]:
        """All registered forms except the built-ins."""
        return [s for n, s in self._forms.items() if n not in BUILTIN_FORM_NAMES]

    def __contains__(self, name: str) -> bool:
        return name in self._forms

    def __iter__(self) -> Iterator[FormSpec]:
        return iter(self._forms.values())

    def __len__(self) -> int:
        return len(self._forms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FormRegistry):
            return NotImplemented
        return self._forms == other._forms


_REGISTRY_FIELDS = {"name", "category", "line_lengths", "stanza_break"}


def _spec_from_record(record: dict, where: str) -> FormSpec:
    unknown = set(record) - _REGISTRY_FIELDS
    if unknown:
        raise FormError(f"{where}: unknown field(s) {sorted(unknown)}")
    for field in ("name", "category", "line_lengths"):
        if field not in record:
            raise FormError(f"{where}: missing field {field!r}")
    name = record["name"]
    if not isinstance(name, str):
        raise FormError(f"{where}: field 'name' must be a string")
    raw_category = record["category"]
    try:
        category = Category(raw_category)
    except ValueError:
        raise FormError(
            f"{where}: field 'category' must be 'SHI' or 'CI', got {raw_category!r}"
        ) from None
    lengths = record["line_lengths"]
    if not isinstance(lengths, list) or not all(
        isinstance(n, int) and not isinstance(n, bool) for n in lengths
    ):
        raise FormError(f"{where}: field 'line_lengths' must be a list of integers")
    stanza_break = record.get("stanza_break")
    if stanza_break is not None and (
        not isinstance(stanza_break, int) or isinstance(stanza_break, bool)
    ):
        raise FormError(f"{where}: field 'stanza_break' must be an integer or null")
    try:
        return FormSpec(name, category, tuple(lengths), stanza_break)
    except FormError as exc:
        raise FormError(f"{where}: {exc}") from None


def load_registry(path: str | Path) -> FormRegistry:
    """Load a JSON Lines registry file.

    The built-in SHI forms are always present; file records add to them.
    Malformed records report the offending line and field.
    """
    registry = FormRegistry()
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path.name}, line {lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormError(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise FormError(f"{where}: record must be a JSON object")
            spec = _spec_from_record(record, where)
            try:
                registry.add(spec)
            except FormError as exc:
                raise FormError(f"{where}: {exc}") from None
    return registry


def save_registry(registry: FormRegistry, path: str | Path) -> None:
    """Write the non-builtin forms as JSON Lines. Inverse of load_registry."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for spec in registry.user_forms():
            record = {
                "name": spec.name,
                "category": spec.category.value,
                "line_lengths": list(spec.line_lengths),
                "stanza_break": spec.stanza_break,
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def expected_token_skeleton(spec: FormSpec) -> list[SlotKind]:
    """Exact body-token pattern the form demands.

    Character slots per line, a line separator after each line except the
    last, and the stanza separator replacing the line separator at the
    stanza boundary. The end-of-sample marker is not part of the skeleton.
    """
    skeleton: list[SlotKind] = []
    for index, length in enumerate(spec.line_lengths, start=1):
        skeleton.extend([SlotKind.CHARACTER] * length)
        if index == spec.line_count:
            break
        if spec.stanza_break is not None and index == spec.stanza_break:
            skeleton.append(SlotKind.STANZA_SEP)
        else:
            skeleton.append(SlotKind.LINE_SEP)
    return skeleton
