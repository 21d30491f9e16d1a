"""Routing words to recognition heads and the disentangled / integrated training losses."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .charset import N_LANG
from .lpn import LanguagePosterior, language_loss
from .recheads import CharProbSequence, TargetBatch, masked_sequence_loss, penalized_sequence_loss

MODES = ("disentangled", "hard", "soft")


@dataclass(frozen=True)
class MultiplexConfig:
    """``script_to_head[l]`` is the head serving script ordinal l."""

    script_to_head: tuple = tuple(range(N_LANG))

    def __post_init__(self):
        if not self.script_to_head:
            raise ValueError("empty script-to-head map")
        heads = sorted(set(self.script_to_head))
        if heads != list(range(len(heads))):
            raise ValueError(f"head ids must be 0..N_rec-1, got {heads}")

    @property
    def n_lang(self) -> int:
        return len(self.script_to_head)

    @property
    def n_rec(self) -> int:
        return max(self.script_to_head) + 1

    def scripts_of(self, head: int) -> list[int]:
        return [s for s, h in enumerate(self.script_to_head) if h == head]

    def head_matrix(self) -> np.ndarray:
        """(N_lang, N_rec) 0/1 matrix summing script probabilities into head probabilities."""
        m = np.zeros((self.n_lang, self.n_rec))
        m[np.arange(self.n_lang), self.script_to_head] = 1
        return m


@dataclass
class LossConfig:
    mode: str = "disentangled"
    alpha_lang: float = 1.0
    alpha_seq: tuple = (0.5,) * N_LANG  # per head
    beta: float = -12.0
    hard_with_lang: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.alpha_lang < 0 or any(a < 0 for a in self.alpha_seq):
            raise ValueError("loss weights must be non-negative")
        if self.beta >= 0:
            raise ValueError("beta must be negative")


@dataclass
class LossBreakdown:
    total: ad.Tensor
    lang: float | None
    seq: dict = field(default_factory=dict)  # head -> mean L_seq over the words it was charged for
    selected: np.ndarray | None = None

    @property
    def value(self) -> float:
        return float(self.total.data)


def route(posterior, config: MultiplexConfig = MultiplexConfig()) -> np.ndarray:
    """Head per word: script_to_head[argmax_l p(l)], ties to the lowest script ordinal."""
    lp = posterior.log_probs.data if isinstance(posterior, LanguagePosterior) else np.asarray(posterior)
    lp = np.atleast_2d(lp)
    return np.asarray(config.script_to_head)[lp.argmax(axis=1)]


def head_probabilities(posterior: LanguagePosterior, config: MultiplexConfig) -> ad.Tensor:
    """(N, N_rec) p(head) = sum of p(l) over the scripts routed to that head."""
    return ad.matmul(posterior.prob_tensor(), config.head_matrix().astype(posterior.log_probs.dtype))


# A head evaluator returns the CharProbSequence of head r for the given word rows.
HeadFn = Callable[[int, np.ndarray], CharProbSequence]


def disentangled_loss(posterior: LanguagePosterior, labels, head_fn: HeadFn,
                      targets: dict[int, TargetBatch], loss_cfg: LossConfig,
                      mux: MultiplexConfig = MultiplexConfig()) -> LossBreakdown:
    """alpha_lang * L_lang + sum_r alpha_seq(r) * L_seq(r), masked L_seq, averaged over words."""
    n = posterior.log_probs.shape[0]
    rows = np.arange(n)
    missing = [r for r in range(mux.n_rec) if r not in targets]
    if missing:
        raise KeyError(f"no targets for heads {missing}")
    l_lang = ad.mean(language_loss(posterior, labels))
    total = ad.mul(l_lang, loss_cfg.alpha_lang)
    seq = {}
    for r in range(mux.n_rec):
        lr = ad.mean(masked_sequence_loss(head_fn(r, rows), targets[r]))
        seq[r] = float(lr.data)
        total = ad.add(total, ad.mul(lr, loss_cfg.alpha_seq[r]))
    return LossBreakdown(total, float(l_lang.data), seq)


def hard_integrated_loss(posterior: LanguagePosterior, head_fn: HeadFn, targets: dict[int, TargetBatch],
                         loss_cfg: LossConfig, mux: MultiplexConfig = MultiplexConfig(),
                         labels=None) -> LossBreakdown:
    """alpha_seq(r*) * L_seq(r*) with r* the routed head and L_seq penalized.

    Only the selected head is evaluated per word, so the other heads and the
    LPN receive no gradient from this term. With ``loss_cfg.hard_with_lang``
    and labels given, alpha_lang * L_lang is added back.
    """
    n = posterior.log_probs.shape[0]
    selected = route(posterior, mux)
    per_word = []
    order = []
    seq = {}
    for r in range(mux.n_rec):
        rows = np.flatnonzero(selected == r)
        if len(rows) == 0:
            continue
        lr = penalized_sequence_loss(head_fn(r, rows), targets[r].subset(rows), loss_cfg.beta)
        seq[r] = float(lr.data.mean())
        per_word.append(ad.mul(lr, loss_cfg.alpha_seq[r]))
        order.append(rows)
    # restore word order so the reduction matches the soft loss term by term
    inverse = np.argsort(np.concatenate(order), kind="stable")
    per_word = ad.getitem(ad.concat(per_word, axis=0), inverse)
    total = ad.mul(ad.tsum(per_word), 1.0 / n)
    lang = None
    if loss_cfg.hard_with_lang and labels is not None:
        l_lang = ad.mean(language_loss(posterior, labels))
        lang = float(l_lang.data)
        total = ad.add(total, ad.mul(l_lang, loss_cfg.alpha_lang))
    return LossBreakdown(total, lang, seq, selected)


def soft_integrated_loss(posterior: LanguagePosterior, head_fn: HeadFn, targets: dict[int, TargetBatch],
                         loss_cfg: LossConfig, mux: MultiplexConfig = MultiplexConfig()) -> LossBreakdown:
    """sum_r p(r) * alpha_seq(r) * L_seq(r), penalized L_seq, averaged over words."""
    n = posterior.log_probs.shape[0]
    rows = np.arange(n)
    p_head = head_probabilities(posterior, mux)
    total = None
    seq = {}
    for r in range(mux.n_rec):
        lr = penalized_sequence_loss(head_fn(r, rows), targets[r], loss_cfg.beta)
        seq[r] = float(lr.data.mean())
        term = ad.mul(ad.mul(ad.getitem(p_head, (slice(None), r)), lr), loss_cfg.alpha_seq[r])
        total = term if total is None else ad.add(total, term)
    return LossBreakdown(ad.mean(total), None, seq, route(posterior, mux))


def combined_loss(mode: str, posterior, head_fn, targets, loss_cfg, mux, labels=None) -> LossBreakdown:
    if mode == "disentangled":
        return disentangled_loss(posterior, labels, head_fn, targets, loss_cfg, mux)
    if mode == "hard":
        return hard_integrated_loss(posterior, head_fn, targets, loss_cfg, mux, labels)
    if mode == "soft":
        return soft_integrated_loss(posterior, head_fn, targets, loss_cfg, mux)
    raise ValueError(f"unknown loss mode {mode!r}")
