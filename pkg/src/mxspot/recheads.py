"""Script-specific spatial-attention recognition heads and the three sequence losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .charset import CharsetTable, HeadConfig, TokenSequence, encode_word, head_parameter_count


@dataclass
class TargetBatch:
    """Padded batch of TokenSequences against one charset.

    ``valid`` marks the real steps of each word (through EOS); ``supported``
    is False on unsupported characters and on padding.
    """

    indices: np.ndarray  # (N, T) int
    supported: np.ndarray  # (N, T) bool
    valid: np.ndarray  # (N, T) bool
    lengths: np.ndarray  # (N,) int, T_w

    @classmethod
    def from_sequences(cls, seqs: list[TokenSequence], pad: int) -> "TargetBatch":
        n = len(seqs)
        t = max((len(s) for s in seqs), default=1)
        idx = np.full((n, t), pad, dtype=np.int64)
        sup = np.zeros((n, t), dtype=bool)
        valid = np.zeros((n, t), dtype=bool)
        for i, s in enumerate(seqs):
            idx[i, :len(s)] = s.indices
            sup[i, :len(s)] = s.supported
            valid[i, :len(s)] = True
        return cls(idx, sup, valid, valid.sum(axis=1))

    @classmethod
    def from_words(cls, words: list[str], table: CharsetTable, t_max: int) -> "TargetBatch":
        return cls.from_sequences([encode_word(w, table, t_max) for w in words], table.pad)

    def subset(self, rows) -> "TargetBatch":
        rows = np.asarray(rows, dtype=np.int64)
        return TargetBatch(self.indices[rows], self.supported[rows], self.valid[rows], self.lengths[rows])

    def __len__(self):
        return len(self.indices)

    def n_unsupported(self) -> np.ndarray:
        return (self.valid & ~self.supported).sum(axis=1)

    def decoder_inputs(self, go: int) -> np.ndarray:
        """Previous-character ids for teacher forcing: GO, then the target shifted right."""
        prev = np.empty_like(self.indices)
        prev[:, 0] = go
        prev[:, 1:] = self.indices[:, :-1]
        return prev


@dataclass
class CharProbSequence:
    """Per-step log-probabilities over charset+EOS, shape (N, T, K+1)."""

    log_probs: ad.Tensor

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)

    @classmethod
    def from_probs(cls, probs) -> "CharProbSequence":
        p = np.asarray(probs, dtype=ad.default_dtype())
        if p.ndim == 2:
            p = p[None]
        return cls(ad.as_tensor(np.log(p)))


@dataclass
class DecodeResult:
    transcription: str
    confidences: list[float]
    score: float
    indices: list[int]


class RecognitionHead(ad.Module):
    """Spatial-attention decoder over an S x S masked feature grid.

    The pooled feature is projected C -> H by a 3x3 conv, row and column
    position tables are added, and at every step an additive attention
    (width H) conditioned on the previous hidden state produces a context
    vector; a GRU consumes [embedding(previous char), context] and an affine
    layer maps the new state to charset+EOS logits. The embedding table has
    two extra rows: EOS (doubling as the GO token) and PAD.
    """

    def __init__(self, rng: np.random.Generator, config: HeadConfig, table: CharsetTable,
                 channels: int, pooled: int):
        if table.size != config.charset_size:
            raise ValueError(f"charset has {table.size} characters, config says {config.charset_size}")
        self.config, self.table = config, table
        self.channels, self.pooled = channels, pooled
        h, e, k = config.hidden_size, config.embed_size, config.charset_size
        self.proj = ad.Conv2d(rng, channels, h, 3, padding=1)
        self.pos_row = ad.Parameter(rng.normal(0, 0.1, (h, pooled, 1)).astype(ad.default_dtype()))
        self.pos_col = ad.Parameter(rng.normal(0, 0.1, (h, 1, pooled)).astype(ad.default_dtype()))
        self.attention = ad.AdditiveAttention(rng, h, h, h)
        self.embed = ad.Embedding(rng, k + 2, e)
        self.gru = ad.GRUCell(rng, e + h, h)
        self.out = ad.Linear(rng, h, k + 1)

    def expected_parameters(self) -> int:
        c = self.config
        return int(head_parameter_count(c.charset_size, c.embed_size, c.hidden_size, self.channels, self.pooled))

    @property
    def eos(self) -> int:
        return self.table.eos

    def _encode(self, features, mask):
        n = features.shape[0]
        h = self.config.hidden_size
        x = ad.relu(self.proj(features))
        x = x + self.pos_row + self.pos_col
        keys = ad.transpose(ad.reshape(x, (n, h, -1)), (0, 2, 1))
        attn_mask = None if mask is None else np.asarray(mask, dtype=bool).reshape(n, -1)
        return keys, self.attention.project_keys(keys), attn_mask

    def _check(self, features):
        c, s = self.channels, self.pooled
        if tuple(features.shape[1:]) != (c, s, s):
            raise ValueError(f"head expects (N, {c}, {s}, {s}) features, got {features.shape}")

    def __call__(self, features, teacher: TargetBatch, mask=None) -> CharProbSequence:
        """Teacher-forced log-probabilities for every target step."""
        features = ad.as_tensor(features)
        self._check(features)
        n = features.shape[0]
        keys, pkeys, amask = self._encode(features, mask)
        prev = teacher.decoder_inputs(self.eos)
        hstate = ad.as_tensor(np.zeros((n, self.config.hidden_size), dtype=features.dtype))
        steps = []
        for t in range(prev.shape[1]):
            ctx, _ = self.attention(keys, pkeys, hstate, amask)
            x = ad.concat([self.embed(prev[:, t]), ctx], axis=1)
            hstate = self.gru(x, hstate)
            steps.append(ad.log_softmax(self.out(hstate), axis=-1))
        return CharProbSequence(ad.stack(steps, axis=1))

    def decode_greedy(self, features, mask=None) -> list[DecodeResult]:
        features = ad.as_tensor(features)
        self._check(features)
        n = features.shape[0]
        keys, pkeys, amask = self._encode(features, mask)
        hstate = ad.as_tensor(np.zeros((n, self.config.hidden_size), dtype=features.dtype))
        prev = np.full(n, self.eos, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        ids = [[] for _ in range(n)]
        conf = [[] for _ in range(n)]
        logp = np.zeros(n)
        for _ in range(self.config.t_max):
            ctx, _ = self.attention(keys, pkeys, hstate, amask)
            hstate = self.gru(ad.concat([self.embed(prev), ctx], axis=1), hstate)
            lp = ad.log_softmax(self.out(hstate), axis=-1).data
            best = lp.argmax(axis=1)
            for i in np.flatnonzero(~done):
                logp[i] += lp[i, best[i]]
                if best[i] == self.eos:
                    done[i] = True
                else:
                    ids[i].append(int(best[i]))
                    conf[i].append(float(np.exp(lp[i, best[i]])))
            prev = best
            if done.all():
                break
        results = []
        for i in range(n):
            steps = len(ids[i]) + (1 if done[i] else 0)
            results.append(DecodeResult(self.table.decode_indices(ids[i]), conf[i],
                                        float(logp[i] / max(steps, 1)), ids[i]))
        return results


# ---------------------------------------------------------------------------
# sequence losses; each returns per-word values of shape (N,)


def _picked(probs: CharProbSequence, target: TargetBatch):
    lp = probs.log_probs
    n, t = target.indices.shape
    if lp.shape[:2] != (n, t):
        raise ValueError(f"probability steps {lp.shape[:2]} do not match target {(n, t)}")
    idx = np.where(target.indices < lp.shape[2], target.indices, 0)
    return ad.getitem(lp, (np.arange(n)[:, None], np.arange(t)[None, :], idx))


def _masked_mean(picked, weights, lengths):
    w = weights.astype(picked.dtype) / lengths[:, None].astype(picked.dtype)
    return ad.mul(ad.tsum(ad.mul(picked, w), axis=1), -1.0)


def sequence_loss(probs: CharProbSequence, target: TargetBatch) -> ad.Tensor:
    """-(1/T_w) sum_t log p(y_t = c_t) over every real step, EOS included."""
    return _masked_mean(_picked(probs, target), target.valid, target.lengths)


def masked_sequence_loss(probs: CharProbSequence, target: TargetBatch) -> ad.Tensor:
    """Sequence NLL with unsupported characters removed from the sum (not from T_w)."""
    return _masked_mean(_picked(probs, target), target.valid & target.supported, target.lengths)


def penalized_sequence_loss(probs: CharProbSequence, target: TargetBatch, beta: float = -12.0) -> ad.Tensor:
    """Masked NLL plus -beta/T_w for each unsupported character."""
    if beta >= 0:
        raise ValueError(f"penalty beta must be negative, got {beta}")
    base = masked_sequence_loss(probs, target)
    penalty = (-beta) * target.n_unsupported() / target.lengths
    return ad.add(base, penalty.astype(base.dtype))


def majority_script(text: str, tables: dict) -> int | None:
    """Script whose charset owns the most characters of ``text`` (shared block ignored).

    Used to assign a script to single-head outputs; ties go to the lowest
    script ordinal, and text with no script-specific character yields None.
    """
    votes = {}
    for ch in text:
        for sid, table in tables.items():
            if ch in table and table.index_of(ch) < table.size - table.n_shared:
                votes[sid] = votes.get(sid, 0) + 1
    if not votes:
        return None
    best = max(votes.values())
    return min(int(s) for s, v in votes.items() if v == best)
