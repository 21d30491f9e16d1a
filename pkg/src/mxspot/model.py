"""Full spotters: shared trunk + LPN + multiplexed heads, and the single-head baseline."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .charset import (N_LANG, BudgetQuery, CharsetTable, HeadConfig, ScriptId, T_MAX,
                      head_parameter_count, match_budget)
from .lpn import LanguagePredictionNetwork, LpnConfig, lpn_parameter_count
from .multiplexer import MultiplexConfig, route
from .recheads import RecognitionHead, TargetBatch, majority_script
from .trunk import Trunk, TrunkConfig, polygon_mask, propose_regions, roi_mask_pool

DEFAULT_HEAD_SIZES = {
    "Arabic": (24, 56), "Bengali": (24, 56), "Chinese": (48, 56), "Hindi": (24, 56),
    "Japanese": (48, 56), "Korean": (48, 56), "Latin": (36, 64), "Symbol": (8, 16),
}


def _fmt_sizes(sizes: dict) -> str:
    return ",".join(f"{k}:{e}/{h}" for k, (e, h) in sizes.items())


def _parse_sizes(text: str) -> dict:
    out = {}
    for part in filter(None, text.split(",")):
        k, v = part.split(":")
        e, h = v.split("/")
        out[k] = (int(e), int(h))
    return out


@dataclass
class ModelConfig:
    kind: str = "multiplexed"  # or "single"
    image_size: int = 256
    channels: int = 64
    pooled: int = 16
    widths: tuple = (16, 32, 64)
    shrink_ratio: float = 0.5
    threshold: float = 0.5
    min_component: int = 10
    lpn_conv1: int = 32
    lpn_conv2: int = 16
    lpn_fc: int = 32
    head_sizes: dict = field(default_factory=lambda: dict(DEFAULT_HEAD_SIZES))
    single_size: tuple = (0, 0)  # (0, 0): budget-matched to the multiplexed model at build time
    script_to_head: tuple = tuple(range(N_LANG))
    t_max: int = T_MAX
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("multiplexed", "single"):
            raise ValueError(f"unknown model kind {self.kind!r}")

    def trunk_config(self) -> TrunkConfig:
        return TrunkConfig(self.image_size, self.shrink_ratio, self.threshold, self.channels,
                           self.pooled, tuple(self.widths), self.min_component)

    def lpn_config(self) -> LpnConfig:
        return LpnConfig(self.channels, self.pooled, self.lpn_conv1, self.lpn_conv2, self.lpn_fc, N_LANG)

    def mux_config(self) -> MultiplexConfig:
        return MultiplexConfig(tuple(self.script_to_head))

    def to_kv(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "head_sizes":
                v = _fmt_sizes(v)
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out[f.name] = str(v)
        return out

    @classmethod
    def from_kv(cls, kv: dict) -> "ModelConfig":
        base = cls()
        args = {}
        for key, raw in kv.items():
            if not hasattr(base, key):
                raise ValueError(f"unknown model key {key!r}")
            cur = getattr(base, key)
            if key == "head_sizes":
                args[key] = _parse_sizes(raw)
            elif isinstance(cur, tuple):
                args[key] = tuple(int(x) for x in raw.split(","))
            else:
                args[key] = type(cur)(raw)
        return replace(base, **args)


def merge_tables(tables: list[CharsetTable]) -> CharsetTable:
    """Charset for a head serving several scripts: their script characters in order, one shared block."""
    if len(tables) == 1:
        return tables[0]
    n_shared = tables[0].n_shared
    chars = []
    for t in tables:
        chars += [c for c in t.characters[: t.size - t.n_shared] if c not in chars]
    shared = tables[0].characters[tables[0].size - n_shared:]
    return CharsetTable(tables[0].script, tuple(chars) + tuple(shared), n_shared)


@dataclass
class DetectionRecord:
    polygon: np.ndarray
    confidence: float
    script: ScriptId | None
    transcription: str


@dataclass
class WordBatch:
    """Ground-truth words of a batch of scenes, ready for RoI pooling."""

    image_index: np.ndarray
    masks: np.ndarray  # (N, H', W')
    labels: np.ndarray  # (N,) script ordinals
    texts: list[str]

    def __len__(self):
        return len(self.texts)

    def subset(self, rows) -> "WordBatch":
        rows = np.asarray(rows, dtype=np.int64)
        return WordBatch(self.image_index[rows], self.masks[rows], self.labels[rows],
                         [self.texts[i] for i in rows])


class _Spotter(ad.Module):
    cfg: ModelConfig

    def config_digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.cfg.to_kv().items():
            h.update(f"{k}={v}\n".encode())
        for t in self.tables():
            h.update(t.dumps().encode("utf-8"))
        return h.hexdigest()

    def tables(self) -> list[CharsetTable]:
        raise NotImplementedError

    def word_masks(self, words, feature_size: int, stride: int) -> np.ndarray:
        return np.stack([polygon_mask(w.polygon, (feature_size, feature_size), 1.0 / stride) for w in words])

    def pool(self, features, batch: WordBatch):
        return roi_mask_pool(features, batch.image_index, batch.masks, self.cfg.pooled)


class MultiplexedSpotter(_Spotter):
    def __init__(self, cfg: ModelConfig, charsets: dict):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.charsets = {ScriptId.parse(k): v for k, v in charsets.items()}
        self.trunk = Trunk(rng, cfg.trunk_config())
        self.lpn = LanguagePredictionNetwork(rng, cfg.lpn_config())
        self.mux = cfg.mux_config()
        self.heads = []
        for r in range(self.mux.n_rec):
            scripts = [ScriptId(s) for s in self.mux.scripts_of(r)]
            table = merge_tables([self.charsets[s] for s in scripts])
            e, h = cfg.head_sizes[scripts[0].name]
            hc = HeadConfig(scripts[0], table.size, e, h, cfg.t_max)
            self.heads.append(RecognitionHead(rng, hc, table, cfg.channels, cfg.pooled))

    def tables(self):
        return [h.table for h in self.heads]

    def head_name(self, r: int) -> str:
        return "+".join(ScriptId(s).name for s in self.mux.scripts_of(r))

    def targets(self, texts: list[str]) -> dict[int, TargetBatch]:
        return {r: TargetBatch.from_words(texts, h.table, self.cfg.t_max) for r, h in enumerate(self.heads)}

    def recognition_parameters(self) -> int:
        return self.lpn.num_parameters() + sum(h.num_parameters() for h in self.heads)

    def infer(self, image: np.ndarray) -> list[DetectionRecord]:
        with ad.no_grad():
            logits, feats = self.trunk(image[None].astype(np.float32))
            seg = ad.sigmoid(logits).data[0]
            props = propose_regions(seg, self.trunk.cfg)
            if not props:
                return []
            mf = roi_mask_pool(feats, np.zeros(len(props), int), np.stack([p.mask for p in props]),
                               self.cfg.pooled)
            post = self.lpn(mf.features)
            scripts = post.log_probs.data.argmax(axis=1)
            heads = route(post, self.mux)
            texts = [""] * len(props)
            for r in np.unique(heads):
                rows = np.flatnonzero(heads == r)
                res = self.heads[r].decode_greedy(ad.take_rows(mf.features, rows), mf.mask[rows])
                for i, d in zip(rows, res):
                    texts[i] = d.transcription
        return [DetectionRecord(p.polygon, p.confidence, ScriptId(int(s)), t)
                for p, s, t in zip(props, scripts, texts)]

    def classify_words(self, image: np.ndarray, words) -> np.ndarray:
        """LPN script prediction for ground-truth word polygons of one image."""
        with ad.no_grad():
            _, feats = self.trunk(image[None].astype(np.float32))
            f = self.cfg.image_size // self.trunk.cfg.stride
            masks = self.word_masks(words, f, self.trunk.cfg.stride)
            mf = roi_mask_pool(feats, np.zeros(len(words), int), masks, self.cfg.pooled)
            return self.lpn(mf.features).log_probs.data.argmax(axis=1)

    def read_words(self, image: np.ndarray, words) -> list[str]:
        """Routed transcriptions of ground-truth word polygons of one image."""
        with ad.no_grad():
            _, feats = self.trunk(image[None].astype(np.float32))
            f = self.cfg.image_size // self.trunk.cfg.stride
            masks = self.word_masks(words, f, self.trunk.cfg.stride)
            mf = roi_mask_pool(feats, np.zeros(len(words), int), masks, self.cfg.pooled)
            heads = route(self.lpn(mf.features), self.mux)
            out = [""] * len(words)
            for r in np.unique(heads):
                rows = np.flatnonzero(heads == r)
                for i, d in zip(rows, self.heads[r].decode_greedy(ad.take_rows(mf.features, rows), mf.mask[rows])):
                    out[i] = d.transcription
        return out


class SingleHeadSpotter(_Spotter):
    """Baseline: the same trunk and one head over the union charset; script inferred by majority vote."""

    def __init__(self, cfg: ModelConfig, union: CharsetTable, charsets: dict):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.charsets = {ScriptId.parse(k): v for k, v in charsets.items()}
        self.trunk = Trunk(rng, cfg.trunk_config())
        e, h = cfg.single_size
        hc = HeadConfig(None, union.size, e, h, cfg.t_max)
        self.head = RecognitionHead(rng, hc, union, cfg.channels, cfg.pooled)

    def tables(self):
        return [self.head.table]

    def targets(self, texts):
        return TargetBatch.from_words(texts, self.head.table, self.cfg.t_max)

    def recognition_parameters(self) -> int:
        return self.head.num_parameters()

    def _script(self, text):
        s = majority_script(text, self.charsets)
        return None if s is None else ScriptId(s)

    def infer(self, image: np.ndarray) -> list[DetectionRecord]:
        with ad.no_grad():
            logits, feats = self.trunk(image[None].astype(np.float32))
            seg = ad.sigmoid(logits).data[0]
            props = propose_regions(seg, self.trunk.cfg)
            if not props:
                return []
            mf = roi_mask_pool(feats, np.zeros(len(props), int), np.stack([p.mask for p in props]),
                               self.cfg.pooled)
            res = self.head.decode_greedy(mf.features, mf.mask)
        return [DetectionRecord(p.polygon, p.confidence, self._script(d.transcription), d.transcription)
                for p, d in zip(props, res)]

    def read_words(self, image, words) -> list[str]:
        with ad.no_grad():
            _, feats = self.trunk(image[None].astype(np.float32))
            f = self.cfg.image_size // self.trunk.cfg.stride
            masks = self.word_masks(words, f, self.trunk.cfg.stride)
            mf = roi_mask_pool(feats, np.zeros(len(words), int), masks, self.cfg.pooled)
            return [d.transcription for d in self.head.decode_greedy(mf.features, mf.mask)]

    def classify_words(self, image, words) -> np.ndarray:
        return np.array([-1 if s is None else int(s)
                         for s in (self._script(t) for t in self.read_words(image, words))])


def multiplexed_budget(cfg: ModelConfig, charsets: dict) -> int:
    """Recognition-side parameter count (heads + LPN) of the multiplexed model for ``cfg``."""
    mux = cfg.mux_config()
    charsets = {ScriptId.parse(k): v for k, v in charsets.items()}
    total = lpn_parameter_count(cfg.lpn_config())
    for r in range(mux.n_rec):
        scripts = [ScriptId(s) for s in mux.scripts_of(r)]
        table = merge_tables([charsets[s] for s in scripts])
        e, h = cfg.head_sizes[scripts[0].name]
        total += int(head_parameter_count(table.size, e, h, cfg.channels, cfg.pooled))
    return total


def build_model(cfg: ModelConfig, charsets: dict, union: CharsetTable | None = None):
    if cfg.kind == "multiplexed":
        return MultiplexedSpotter(cfg, charsets)
    if union is None:
        raise ValueError("single-head model needs the union charset")
    if tuple(cfg.single_size) == (0, 0):
        target = multiplexed_budget(cfg, charsets)
        e, h = match_budget(BudgetQuery(target, union.size, (1, 512), (1, 512), cfg.channels, cfg.pooled))
        cfg = replace(cfg, single_size=(e, h))
    return SingleHeadSpotter(cfg, union, charsets)
