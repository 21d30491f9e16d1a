"""Per-script character sets, word encoding and recognition-head parameter arithmetic."""

from __future__ import annotations

import enum
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

T_MAX = 32
DIGITS = "0123456789"
PUNCTUATION = string.punctuation + " "


class ScriptId(enum.IntEnum):
    Arabic = 0
    Bengali = 1
    Chinese = 2
    Hindi = 3
    Japanese = 4
    Korean = 5
    Latin = 6
    Symbol = 7

    @classmethod
    def parse(cls, value) -> "ScriptId":
        if isinstance(value, ScriptId):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        try:
            return cls[str(value)]
        except KeyError:
            raise ValueError(f"unknown script {value!r}") from None


N_LANG = len(ScriptId)


def shared_block(punctuation: str = PUNCTUATION) -> str:
    seen = dict.fromkeys(DIGITS + punctuation)
    return "".join(seen)


@dataclass(frozen=True)
class CharsetTable:
    """Ordered characters of one head: frequency-ordered script characters, then
    the shared digit/punctuation block, then the EOS and PAD sentinels."""

    script: ScriptId | None
    characters: tuple[str, ...]
    n_shared: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.characters)) != len(self.characters):
            raise ValueError("duplicate characters in charset")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.characters)})

    @property
    def size(self) -> int:
        return len(self.characters)

    @property
    def eos(self) -> int:
        return len(self.characters)

    @property
    def pad(self) -> int:
        return len(self.characters) + 1

    @property
    def name(self) -> str:
        return "All" if self.script is None else self.script.name

    def __contains__(self, ch) -> bool:
        return ch in self._index

    def index_of(self, ch: str) -> int:
        return self._index[ch]

    def decode(self, i: int) -> str:
        return self.characters[i]

    def decode_indices(self, indices: Iterable[int]) -> str:
        """Map indices to text, stopping at EOS; sentinels and out-of-range ids are skipped."""
        out = []
        for i in indices:
            i = int(i)
            if i == self.eos:
                break
            if 0 <= i < len(self.characters):
                out.append(self.characters[i])
        return "".join(out)

    # file format -----------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"script={self.name} size={self.size} shared={self.n_shared}"]
        lines += [f"U+{ord(c):04X} {c}" for c in self.characters]
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_bytes(self.dumps().encode("utf-8"))

    @classmethod
    def loads(cls, text: str) -> "CharsetTable":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise ValueError("empty charset file")
        header = dict(kv.split("=", 1) for kv in lines[0].split())
        size, n_shared = int(header["size"]), int(header.get("shared", 0))
        chars = []
        for lineno, line in enumerate(lines[1:], start=2):
            code, _, literal = line.partition(" ")
            if not code.startswith("U+"):
                raise ValueError(f"line {lineno}: expected U+XXXX, got {line!r}")
            ch = chr(int(code[2:], 16))
            if literal != ch:
                raise ValueError(f"line {lineno}: literal {literal!r} does not match {code}")
            chars.append(ch)
        if len(chars) != size:
            raise ValueError(f"header size={size} but {len(chars)} characters listed")
        script = None if header["script"] == "All" else ScriptId.parse(header["script"])
        return cls(script, tuple(chars), n_shared)

    @classmethod
    def load(cls, path) -> "CharsetTable":
        return cls.loads(Path(path).read_bytes().decode("utf-8"))


def _frequency_order(counts: Counter) -> list[str]:
    return sorted(counts, key=lambda c: (-counts[c], ord(c)))


def build_charsets(corpus, punctuation: str = PUNCTUATION,
                   scripts: Iterable[ScriptId] = tuple(ScriptId)) -> dict[ScriptId, CharsetTable]:
    """One table per script from (transcription, script) pairs."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    shared = shared_block(punctuation)
    counts = {ScriptId.parse(s): Counter() for s in scripts}
    for text, tag in corpus:
        sid = ScriptId.parse(tag)
        if sid not in counts:
            raise ValueError(f"script {sid.name} not among the configured scripts")
        counts[sid].update(c for c in text if c not in shared)
    return {sid: CharsetTable(sid, tuple(_frequency_order(cnt)) + tuple(shared), len(shared))
            for sid, cnt in counts.items()}


def build_union_charset(corpus, punctuation: str = PUNCTUATION) -> CharsetTable:
    """The single-head table: every script's characters ranked by global frequency."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    shared = shared_block(punctuation)
    cnt = Counter()
    for text, tag in corpus:
        ScriptId.parse(tag)
        cnt.update(c for c in text if c not in shared)
    return CharsetTable(None, tuple(_frequency_order(cnt)) + tuple(shared), len(shared))


@dataclass(frozen=True)
class TokenSequence:
    """Target indices per step; ``supported[t]`` is False where the character is
    outside the head's charset (its index is then PAD)."""

    indices: np.ndarray
    supported: np.ndarray

    def __len__(self):
        return len(self.indices)

    @property
    def n_unsupported(self) -> int:
        return int((~self.supported).sum())


def encode_word(word: str, table: CharsetTable, t_max: int = T_MAX) -> TokenSequence:
    if not word:
        raise ValueError("cannot encode an empty word")
    chars = word[: t_max - 1]
    idx = [table.index_of(c) if c in table else table.pad for c in chars] + [table.eos]
    sup = [c in table for c in chars] + [True]
    return TokenSequence(np.array(idx, dtype=np.int64), np.array(sup, dtype=bool))


# ---------------------------------------------------------------------------
# parameter accounting


@dataclass(frozen=True)
class HeadConfig:
    script: ScriptId | None
    charset_size: int
    embed_size: int
    hidden_size: int
    t_max: int = T_MAX

    def __post_init__(self):
        if min(self.charset_size, self.embed_size, self.hidden_size, self.t_max) <= 0:
            raise ValueError(f"non-positive size in {self}")


def head_parameter_count(charset_size, embed_size, hidden_size, channels=256, pooled=32):
    """Exact parameter count of one recognition head (see ``recheads.RecognitionHead``).

    feature projection 3x3 conv C->H, row+column position tables,
    additive attention of width H, embedding over charset+EOS+PAD,
    GRU on [embedding, context], output affine H -> charset+EOS.
    Works elementwise on numpy arrays.
    """
    k, e, h = charset_size, embed_size, hidden_size
    proj = 9 * channels * h + h
    pos = 2 * pooled * h
    attn = h * h + h + h * h + h
    emb = (k + 2) * e
    gru = 3 * h * (e + h + h) + 6 * h
    out = (h + 1) * (k + 1)
    return proj + pos + attn + emb + gru + out


def count_parameters(config, channels: int = 256, pooled: int = 32) -> int:
    from .lpn import LpnConfig, lpn_parameter_count

    if isinstance(config, LpnConfig):
        return lpn_parameter_count(config)
    if isinstance(config, HeadConfig):
        return int(head_parameter_count(config.charset_size, config.embed_size, config.hidden_size,
                                        channels, pooled))
    raise TypeError(f"cannot count parameters of {type(config).__name__}")


PAPER_TABLE1 = {
    ScriptId.Arabic: HeadConfig(ScriptId.Arabic, 80, 100, 224),
    ScriptId.Bengali: HeadConfig(ScriptId.Bengali, 110, 100, 224),
    ScriptId.Chinese: HeadConfig(ScriptId.Chinese, 5200, 200, 224),
    ScriptId.Hindi: HeadConfig(ScriptId.Hindi, 110, 100, 224),
    ScriptId.Japanese: HeadConfig(ScriptId.Japanese, 2300, 200, 224),
    ScriptId.Korean: HeadConfig(ScriptId.Korean, 1500, 200, 224),
    ScriptId.Latin: HeadConfig(ScriptId.Latin, 250, 150, 256),
    ScriptId.Symbol: HeadConfig(ScriptId.Symbol, 60, 30, 64),
}
PAPER_SINGLE_HEAD = HeadConfig(None, 9000, 400, 512)
PAPER_TABLE1_MILLIONS = {
    "Arabic": 1.15, "Bengali": 1.16, "Chinese": 3.36, "Hindi": 1.16, "Japanese": 2.13,
    "Korean": 1.79, "Latin": 1.49, "Symbol": 0.21, "LPN": 0.11, "Multiplexed": 12.5, "Single-Head": 12.6,
}


@dataclass(frozen=True)
class BudgetQuery:
    target: int
    charset_size: int
    embed_range: tuple[int, int] = (1, 1024)
    hidden_range: tuple[int, int] = (1, 1024)
    channels: int = 256
    pooled: int = 32
    tolerance: float = 0.02

    def __post_init__(self):
        if self.embed_range[0] > self.embed_range[1] or self.hidden_range[0] > self.hidden_range[1]:
            raise ValueError("empty search bounds")


class BudgetInfeasible(ValueError):
    pass


def match_budget(query: BudgetQuery) -> tuple[int, int]:
    """(embed, hidden) whose head count is closest to the target, by exhaustive grid search."""
    e = np.arange(query.embed_range[0], query.embed_range[1] + 1, dtype=np.int64)[:, None]
    h = np.arange(query.hidden_range[0], query.hidden_range[1] + 1, dtype=np.int64)[None, :]
    counts = head_parameter_count(query.charset_size, e, h, query.channels, query.pooled)
    err = np.abs(counts - query.target) / query.target
    i, j = np.unravel_index(np.argmin(err), err.shape)
    if err[i, j] > query.tolerance:
        raise BudgetInfeasible(
            f"closest count {int(counts[i, j])} misses target {query.target} by {err[i, j]:.1%}")
    return int(e[i, 0]), int(h[0, j])
