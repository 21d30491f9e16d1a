"""Language Prediction Network: script posterior from a masked pooled feature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LOG_CLAMP = float(np.log(1e-12))


@dataclass(frozen=True)
class LpnConfig:
    channels: int = 256
    pooled: int = 32
    conv1: int = 32
    conv2: int = 16
    fc_hidden: int = 32
    n_lang: int = 8

    def __post_init__(self):
        if self.n_lang < 2:
            raise ValueError("need at least two language classes")
        if min(self.channels, self.conv1, self.conv2, self.fc_hidden) <= 0:
            raise ValueError("widths must be positive")
        if self.pooled < 4:
            raise ValueError("pooled size must be at least 4")

    @property
    def flat_size(self) -> int:
        side = (self.pooled - 1) // 2 - 1
        return side * side * self.conv2


def lpn_parameter_count(cfg: LpnConfig) -> int:
    return (4 * cfg.channels * cfg.conv1 + cfg.conv1
            + 4 * cfg.conv1 * cfg.conv2 + cfg.conv2
            + cfg.flat_size * cfg.fc_hidden + cfg.fc_hidden
            + cfg.fc_hidden * cfg.n_lang + cfg.n_lang)


@dataclass
class LanguagePosterior:
    logits: ad.Tensor  # (N, L)
    log_probs: ad.Tensor
    fixed_probs: ad.Tensor | None = None

    @property
    def probs(self) -> np.ndarray:
        return self.prob_tensor().data

    def prob_tensor(self) -> ad.Tensor:
        if self.fixed_probs is not None:
            return self.fixed_probs
        return ad.exp(self.log_probs)

    @classmethod
    def from_logits(cls, logits) -> "LanguagePosterior":
        logits = ad.as_tensor(logits)
        return cls(logits, ad.log_softmax(logits, axis=-1))

    @classmethod
    def from_probs(cls, probs) -> "LanguagePosterior":
        """Posterior with fixed probabilities (log taken directly; used in tests)."""
        p = np.atleast_2d(np.asarray(probs, dtype=ad.default_dtype()))
        with np.errstate(divide="ignore"):
            lp = ad.as_tensor(np.maximum(np.log(p), LOG_CLAMP))
        return cls(lp, lp, ad.as_tensor(p))


class LanguagePredictionNetwork(ad.Module):
    """2x2 conv, ReLU, 2x2 max pool, 2x2 conv, ReLU, FC, ReLU, FC."""

    def __init__(self, rng: np.random.Generator, cfg: LpnConfig = LpnConfig()):
        self.cfg = cfg
        self.conv1 = ad.Conv2d(rng, cfg.channels, cfg.conv1, 2)
        self.conv2 = ad.Conv2d(rng, cfg.conv1, cfg.conv2, 2)
        self.fc1 = ad.Linear(rng, cfg.flat_size, cfg.fc_hidden)
        self.fc2 = ad.Linear(rng, cfg.fc_hidden, cfg.n_lang)

    def __call__(self, features) -> LanguagePosterior:
        features = ad.as_tensor(features)
        c, s = self.cfg.channels, self.cfg.pooled
        if features.shape[1:] != (c, s, s):
            raise ValueError(f"LPN expects (N, {c}, {s}, {s}) features, got {features.shape}")
        x = ad.relu(self.conv1(features))
        x = ad.maxpool2d(x, 2)
        x = ad.relu(self.conv2(x))
        x = ad.reshape(x, (x.shape[0], -1))
        x = ad.relu(self.fc1(x))
        return LanguagePosterior.from_logits(self.fc2(x))


def language_loss(posterior: LanguagePosterior, labels) -> ad.Tensor:
    """Per-word -log p(l_gt), with p clamped below at 1e-12. Shape (N,)."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    lp = posterior.log_probs
    picked = ad.getitem(lp, (np.arange(lp.shape[0]), labels))
    return ad.mul(ad.maximum_const(picked, LOG_CLAMP), -1.0)
