"""Corpus pipeline: punctuation normalization, the unified sample
serialization format, character vocabulary, token encoding, the binary
token-stream container, and form-frequency coverage statistics.

Serialized sample layout (one string, markers count as single tokens)::

    [CLS]form#title*line1,line2&line3,line4[EOS]

'#' separates form from title, '*' separates title from body, ',' separates
lines, and '&' (at most one) separates the two stanzas of a CI.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .forms import RESERVED_CHARS, FormRegistry


class CorpusError(ValueError):
    """Malformed sample, serialized text, vocabulary, or corpus file."""


# Fixed special-token ids. Characters are assigned ids from NUM_SPECIALS up,
# by descending corpus frequency with code-point tie-breaks, which makes
# vocabularies reproducible across runs.
PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
EOS_ID = 3
LINE_SEP_ID = 4
LABEL1_ID = 5
LABEL2_ID = 6
STANZA_SEP_ID = 7
NUM_SPECIALS = 8

CLS_MARK = "[CLS]"
EOS_MARK = "[EOS]"
PAD_MARK = "[PAD]"
UNK_GLYPH = "□"  # white square shown where an unknown character was

LINE_SEP_CHAR = ","
LABEL1_CHAR = "#"
LABEL2_CHAR = "*"
STANZA_SEP_CHAR = "&"

SPECIAL_SYMBOLS: dict[int, str] = {
    PAD_ID: PAD_MARK,
    UNK_ID: UNK_GLYPH,
    CLS_ID: CLS_MARK,
    EOS_ID: EOS_MARK,
    LINE_SEP_ID: LINE_SEP_CHAR,
    LABEL1_ID: LABEL1_CHAR,
    LABEL2_ID: LABEL2_CHAR,
    STANZA_SEP_ID: STANZA_SEP_CHAR,
}

_SEPARATOR_IDS = {
    LINE_SEP_CHAR: LINE_SEP_ID,
    LABEL1_CHAR: LABEL1_ID,
    LABEL2_CHAR: LABEL2_ID,
    STANZA_SEP_CHAR: STANZA_SEP_ID,
}

# Punctuation treated as a line terminator during normalization. ASCII '.'
# is deliberately absent; extend via the extra_punctuation argument.
DEFAULT_LINE_PUNCTUATION = "。，、；？！．,;?!"


def _check_text_field(text: str, what: str) -> None:
    bad = RESERVED_CHARS.intersection(text)
    if bad:
        raise CorpusError(
            f"{what} contains reserved separator character(s) "
            f"{''.join(sorted(bad))!r}: {text!r}"
        )


@dataclass(frozen=True)
class Sample:
    """One poem record: form name, title, body lines, stanza structure."""

    form_name: str
    title: str
    body_lines: tuple[str, ...]
    stanza_break: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.body_lines, tuple):
            object.__setattr__(self, "body_lines", tuple(self.body_lines))
        if len(self.body_lines) == 0:
            raise CorpusError("sample body must have at least one line")
        if any(line == "" for line in self.body_lines):
            raise CorpusError("sample body lines must be non-empty")
        _check_text_field(self.form_name, "form name")
        _check_text_field(self.title, "title")
        for line in self.body_lines:
            _check_text_field(line, "body line")
        if self.stanza_break is not None:
            if not isinstance(self.stanza_break, int) or isinstance(
                self.stanza_break, bool
            ):
                raise CorpusError("stanza_break must be an integer or None")
            if not 1 <= self.stanza_break < len(self.body_lines):
                raise CorpusError(
                    f"stanza_break {self.stanza_break} out of range for "
                    f"{len(self.body_lines)} lines"
                )


def normalize_punctuation(
    raw_body: str, extra_punctuation: Iterable[str] = ()
) -> list[str]:
    """Split a raw body into lines at punctuation, dropping the punctuation.

    Any character from the configured terminator set ends a line; empty
    segments (consecutive punctuation, trailing marks) are discarded.
    """
    terminators = set(DEFAULT_LINE_PUNCTUATION) | set(extra_punctuation)
    lines: list[str] = []
    current: list[str] = []
    for ch in raw_body:
        if ch in terminators:
            if current:
                lines.append("".join(current))
                current = []
        else:
            current.append(ch)
    if current:
        lines.append("".join(current))
    if not lines:
        raise CorpusError("body is empty after punctuation normalization")
    for line in lines:
        _check_text_field(line, "body line")
    return lines


def serialize_symbols(sample: Sample, include_stanza_label: bool = True) -> list[str]:
    """Per-token symbol list of the serialized sample.

    Each element encodes to exactly one token: the CLS/EOS markers, single
    characters, and the four separator characters.
    """
    symbols: list[str] = [CLS_MARK]
    symbols.extend(sample.form_name)
    symbols.append(LABEL1_CHAR)
    symbols.extend(sample.title)
    symbols.append(LABEL2_CHAR)
    for index, line in enumerate(sample.body_lines, start=1):
        symbols.extend(line)
        if index == len(sample.body_lines):
            break
        if sample.stanza_break is not None and index == sample.stanza_break:
            symbols.append(STANZA_SEP_CHAR if include_stanza_label else LINE_SEP_CHAR)
        else:
            symbols.append(LINE_SEP_CHAR)
    symbols.append(EOS_MARK)
    return symbols


def serialize(
    sample: Sample,
    registry: FormRegistry | None = None,
    include_stanza_label: bool = True,
) -> str:
    """Serialize a sample to the unified text format.

    Passing a registry enables form-name validation; without one any
    (reserved-character-free) form name is accepted.
    """
    if registry is not None:
        registry.lookup(sample.form_name)
    return "".join(serialize_symbols(sample, include_stanza_label))


def parse(serialized: str) -> Sample:
    """Inverse of serialize: recover the Sample from its text form."""
    if not serialized.startswith(CLS_MARK):
        raise CorpusError(f"serialized sample must start with {CLS_MARK}")
    if not serialized.endswith(EOS_MARK):
        raise CorpusError(f"serialized sample must end with {EOS_MARK}")
    inner = serialized[len(CLS_MARK) : len(serialized) - len(EOS_MARK)]
    form_name, sep, rest = inner.partition(LABEL1_CHAR)
    if not sep:
        raise CorpusError(f"missing {LABEL1_CHAR!r} between form and title")
    title, sep, body = rest.partition(LABEL2_CHAR)
    if not sep:
        raise CorpusError(f"missing {LABEL2_CHAR!r} between title and body")
    if body.count(STANZA_SEP_CHAR) > 1:
        raise CorpusError(f"multiple {STANZA_SEP_CHAR!r} stanza labels")
    stanza_break: int | None = None
    stanzas = body.split(STANZA_SEP_CHAR)
    lines: list[str] = []
    for stanza_index, stanza in enumerate(stanzas):
        stanza_lines = stanza.split(LINE_SEP_CHAR)
        if any(line == "" for line in stanza_lines):
            raise CorpusError("empty line between separators")
        if stanza_index == 1:
            stanza_break = len(lines)
        lines.extend(stanza_lines)
    try:
        return Sample(form_name, title, tuple(lines), stanza_break)
    except CorpusError as exc:
        raise CorpusError(f"invalid sample content: {exc}") from None


@dataclass
class Vocabulary:
    """Character <-> token id bijection with the 8 fixed special tokens.

    Characters below ``min_frequency`` in the source corpus are absent and
    encode to UNK.
    """

    char_to_id: dict[str, int]
    min_frequency: int
    id_to_char: dict[int, str] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.id_to_char = {}
        for ch, idx in self.char_to_id.items():
            if len(ch) != 1:
                raise CorpusError(f"vocabulary entry {ch!r} is not a single character")
            if idx < NUM_SPECIALS:
                raise CorpusError(
                    f"character id {idx} for {ch!r} collides with special tokens"
                )
            if idx in self.id_to_char:
                raise CorpusError(f"duplicate token id {idx}")
            self.id_to_char[idx] = ch
        expected = set(range(NUM_SPECIALS, NUM_SPECIALS + len(self.char_to_id)))
        if set(self.id_to_char) != expected:
            raise CorpusError("character ids must be contiguous from 8")
        if self.min_frequency < 1:
            raise CorpusError("min_frequency must be >= 1")

    @property
    def size(self) -> int:
        return NUM_SPECIALS + len(self.char_to_id)

    def encode_symbol(self, symbol: str) -> int:
        if symbol == CLS_MARK:
            return CLS_ID
        if symbol == EOS_MARK:
            return EOS_ID
        if symbol == PAD_MARK:
            return PAD_ID
        sep = _SEPARATOR_IDS.get(symbol)
        if sep is not None:
            return sep
        return self.char_to_id.get(symbol, UNK_ID)

    def decode_id(self, token_id: int) -> str:
        if token_id in SPECIAL_SYMBOLS:
            return SPECIAL_SYMBOLS[token_id]
        try:
            return self.id_to_char[token_id]
        except KeyError:
            raise CorpusError(f"token id {token_id} not in vocabulary") from None

    def content_hash(self) -> str:
        """Stable hash of the id table; guards stream/checkpoint compatibility."""
        payload = json.dumps(
            {"chars": self.char_to_id, "min_frequency": self.min_frequency},
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        data = {
            "min_frequency": self.min_frequency,
            "special_tokens": {SPECIAL_SYMBOLS[i]: i for i in range(NUM_SPECIALS)},
            "characters": self.char_to_id,
        }
        with Path(path).open("w", encoding="utf-8") as handle:
            json.dump(data, handle, ensure_ascii=False, indent=0, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with Path(path).open("r", encoding="utf-8") as handle:
            data = json.load(handle)
        for key in ("min_frequency", "special_tokens", "characters"):
            if key not in data:
                raise CorpusError(f"vocabulary file missing {key!r}")
        expected_specials = {SPECIAL_SYMBOLS[i]: i for i in range(NUM_SPECIALS)}
        if data["special_tokens"] != expected_specials:
            raise CorpusError("vocabulary file has unexpected special-token table")
        return cls(dict(data["characters"]), int(data["min_frequency"]))


def build_vocabulary(samples: Sequence[Sample], min_frequency: int = 3) -> Vocabulary:
    """Character vocabulary over form names, titles, and body lines.

    Admits characters with total frequency >= min_frequency; ids are assigned
    by descending frequency, ties broken by code point.
    """
    if min_frequency < 1:
        raise CorpusError("min_frequency must be >= 1")
    if not samples:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for sample in samples:
        for text in (sample.form_name, sample.title, *sample.body_lines):
            for ch in text:
                counts[ch] = counts.get(ch, 0) + 1
    admitted = sorted(
        (ch for ch, n in counts.items() if n >= min_frequency),
        key=lambda ch: (-counts[ch], ch),
    )
    char_to_id = {ch: NUM_SPECIALS + i for i, ch in enumerate(admitted)}
    return Vocabulary(char_to_id, min_frequency)


def encode(
    sample: Sample, vocab: Vocabulary, include_stanza_label: bool = True
) -> np.ndarray:
    """Token ids of the serialized sample, one id per character/marker."""
    symbols = serialize_symbols(sample, include_stanza_label)
    return np.array([vocab.encode_symbol(s) for s in symbols], dtype=np.int64)


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Text of a token-id sequence; UNK renders as the replacement glyph."""
    return "".join(vocab.decode_id(int(i)) for i in ids)


_PMF_MAGIC = b"PMF1"


@dataclass
class TokenStream:
    """Concatenated encoded samples plus the offset of each sample's CLS."""

    ids: np.ndarray
    boundaries: np.ndarray
    vocab_hash: str

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.uint32)
        self.boundaries = np.asarray(self.boundaries, dtype=np.int64)
        if len(self.boundaries) == 0:
            raise CorpusError("token stream must contain at least one sample")
        if np.any(np.diff(self.boundaries) <= 0) or self.boundaries[0] != 0:
            raise CorpusError("sample boundaries must start at 0 and strictly increase")
        ends = np.append(self.boundaries[1:], len(self.ids))
        if np.any(ends <= self.boundaries):
            raise CorpusError("empty sample slice in token stream")
        if np.any(self.ids[self.boundaries] != CLS_ID):
            raise CorpusError("every sample slice must begin with CLS")
        if np.any(self.ids[ends - 1] != EOS_ID):
            raise CorpusError("every sample slice must end with EOS")

    def __len__(self) -> int:
        return len(self.boundaries)

    def sample_ids(self, index: int) -> np.ndarray:
        start = self.boundaries[index]
        end = (
            self.boundaries[index + 1]
            if index + 1 < len(self.boundaries)
            else len(self.ids)
        )
        return self.ids[start:end]

    def sample_lengths(self) -> np.ndarray:
        ends = np.append(self.boundaries[1:], len(self.ids))
        return ends - self.boundaries

    def save(self, path: str | Path) -> None:
        hash_bytes = self.vocab_hash.encode("ascii")
        offsets = np.append(self.boundaries, len(self.ids)).astype("<u8")
        with Path(path).open("wb") as handle:
            handle.write(_PMF_MAGIC)
            handle.write(struct.pack("<I", len(hash_bytes)))
            handle.write(hash_bytes)
            handle.write(struct.pack("<Q", len(self.boundaries)))
            handle.write(offsets.tobytes())
            handle.write(self.ids.astype("<u4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "TokenStream":
        with Path(path).open("rb") as handle:
            magic = handle.read(4)
            if magic != _PMF_MAGIC:
                raise CorpusError(f"not a token-stream file (bad magic {magic!r})")
            (hash_len,) = struct.unpack("<I", handle.read(4))
            vocab_hash = handle.read(hash_len).decode("ascii")
            (count,) = struct.unpack("<Q", handle.read(8))
            offsets = np.frombuffer(handle.read(8 * (count + 1)), dtype="<u8")
            total = int(offsets[-1])
            ids = np.frombuffer(handle.read(4 * total), dtype="<u4")
            if len(ids) != total:
                raise CorpusError("token-stream file truncated")
        return cls(
            ids.astype(np.uint32),
            offsets[:-1].astype(np.int64),
            vocab_hash,
        )


def build_token_stream(
    samples: Sequence[Sample],
    vocab: Vocabulary,
    include_stanza_label: bool = True,
) -> TokenStream:
    if not samples:
        raise CorpusError("cannot build a token stream from an empty corpus")
    chunks = [encode(s, vocab, include_stanza_label) for s in samples]
    boundaries = np.zeros(len(chunks), dtype=np.int64)
    np.cumsum([len(c) for c in chunks[:-1]], out=boundaries[1:])
    return TokenStream(np.concatenate(chunks), boundaries, vocab.content_hash())


def load_raw_samples(
    path: str | Path, extra_punctuation: Iterable[str] = ()
) -> list[Sample]:
    """Read a raw-corpus JSON Lines file into normalized Samples.

    Records: {"form": str, "title": str, "body": str | [str, ...],
    "stanza_break": int | null}. A string body is split at punctuation;
    a list body is taken as lines (still punctuation-normalized per line).
    """
    samples: list[Sample] = []
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
                raise CorpusError(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise CorpusError(f"{where}: record must be a JSON object")
            for key in ("form", "body"):
                if key not in record:
                    raise CorpusError(f"{where}: missing field {key!r}")
            body = record["body"]
            try:
                if isinstance(body, str):
                    lines = normalize_punctuation(body, extra_punctuation)
                elif isinstance(body, list):
                    lines = []
                    for part in body:
                        lines.extend(normalize_punctuation(part, extra_punctuation))
                else:
                    raise CorpusError("field 'body' must be a string or list of strings")
                samples.append(
                    Sample(
                        form_name=str(record["form"]),
                        title=str(record.get("title", "")),
                        body_lines=tuple(lines),
                        stanza_break=record.get("stanza_break"),
                    )
                )
            except CorpusError as exc:
                raise CorpusError(f"{where}: {exc}") from None
    return samples


@dataclass
class CoverageReport:
    """Per-form frequency table with descending-rank cumulative coverage."""

    counts: dict[str, int]
    ranked: list[tuple[str, int]]
    cumulative: np.ndarray

    def k_for(self, target: float) -> int:
        """Minimal rank K whose cumulative fraction reaches the target."""
        if not 0 < target <= 1:
            raise CorpusError(f"coverage target must be in (0, 1], got {target}")
        return int(np.searchsorted(self.cumulative, target)) + 1


def coverage_report(samples: Sequence[Sample]) -> CoverageReport:
    if not samples:
        raise CorpusError("cannot compute coverage of an empty corpus")
    counts: dict[str, int] = {}
    for sample in samples:
        counts[sample.form_name] = counts.get(sample.form_name, 0) + 1
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    totals = np.cumsum([n for _, n in ranked], dtype=np.float64)
    return CoverageReport(counts, ranked, totals / totals[-1])
