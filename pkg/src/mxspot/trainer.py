"""Three-stage training, SGD with momentum, deterministic batching and checkpoints."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .charset import CharsetTable, ScriptId
from .config import dump_kv, parse_kv
from .model import (ModelConfig, MultiplexedSpotter, SingleHeadSpotter, WordBatch, build_model)
from .multiplexer import LossBreakdown, LossConfig, combined_loss
from .recheads import penalized_sequence_loss
from .trunk import polygon_mask, segmentation_loss, shrunk_target

CKPT_FORMAT = "mxspot-checkpoint-1"


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    stage: int = 1
    iterations: int = 3000
    batch_size: int = 8
    lr: float = 0.01
    momentum: float = 0.9
    decay_at: tuple = (0.6, 0.8)
    decay_factor: float = 0.1
    alpha_switch: int = 1000
    target_head: str = ""  # stage 3 only: script name served by the head
    seed: int = 0
    loss_mode: str = ""  # stage 2 override, "soft" for the ablation
    alpha_seq: float = 0.5
    beta: float = -12.0
    clip_norm: float = 10.0  # global gradient-norm clip; 0 disables
    optimizer: str = "sgd"  # or "adam" (betas 0.9/0.999, momentum unused)

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.iterations < 0 or self.batch_size <= 0:
            raise ValueError("iterations must be >= 0 and batch size positive")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("bad learning rate or momentum")
        if self.stage == 3 and not self.target_head:
            raise ValueError("stage 3 needs a target head")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss_mode not in ("", "hard", "soft"):
            raise ValueError(f"unknown stage-2 loss mode {self.loss_mode!r}")

    @property
    def mode(self) -> str:
        if self.stage == 1:
            return "disentangled"
        if self.stage == 2:
            return self.loss_mode or "hard"
        return "stage3"


def alpha_schedule(iteration: int, switch: int) -> float:
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return 0.02 if iteration < switch else 1.0


def learning_rate(iteration: int, cfg: TrainConfig) -> float:
    frac = iteration / max(cfg.iterations, 1)
    return cfg.lr * cfg.decay_factor ** sum(frac >= d for d in cfg.decay_at)


# ---------------------------------------------------------------------------
# data


@dataclass
class PreparedScene:
    image: np.ndarray
    seg_target: np.ndarray
    seg_weight: np.ndarray
    masks: np.ndarray  # (n, f, f) legible words at feature resolution
    labels: np.ndarray
    texts: list


def prepare_scene(sample, model_cfg: ModelConfig) -> PreparedScene:
    tc = model_cfg.trunk_config()
    shape = sample.image.shape
    target, weight = shrunk_target(sample.words, shape, tc.shrink_ratio)
    legible = [w for w in sample.words if w.legible]
    f = tc.feature_size
    masks = (np.stack([polygon_mask(w.polygon, (f, f), 1.0 / tc.stride) for w in legible])
             if legible else np.zeros((0, f, f), dtype=bool))
    return PreparedScene(sample.image.astype(np.float32), target, weight, masks,
                         np.array([int(w.script) for w in legible], dtype=np.int64),
                         [w.transcription for w in legible])


class SceneCache:
    def __init__(self, samples, model_cfg: ModelConfig):
        self.samples = samples
        self.model_cfg = model_cfg
        self._cache = {}

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i) -> PreparedScene:
        if i not in self._cache:
            self._cache[i] = prepare_scene(self.samples[i], self.model_cfg)
        return self._cache[i]


def batch_indices(pool: np.ndarray, batch_size: int, iteration: int, seed: int, stage: int) -> np.ndarray:
    """Scenes of one iteration: consecutive slices of per-epoch permutations of ``pool``."""
    n = len(pool)
    if n == 0:
        raise ValueError("no training scenes")
    out = []
    start = iteration * batch_size
    for k in range(start, start + batch_size):
        epoch, pos = divmod(k, n)
        perm = np.random.default_rng([seed, stage, epoch]).permutation(n)
        out.append(pool[perm[pos]])
    return np.array(out, dtype=np.int64)


def head_index(model: MultiplexedSpotter, name: str) -> int:
    try:
        sid = ScriptId.parse(name)
    except ValueError:
        raise KeyError(f"unknown head {name!r}") from None
    return model.mux.script_to_head[int(sid)]


def _words(scenes: list[PreparedScene], keep=None) -> WordBatch:
    idx, masks, labels, texts = [], [], [], []
    for b, sc in enumerate(scenes):
        for k in range(len(sc.texts)):
            if keep is not None and sc.labels[k] not in keep:
                continue
            idx.append(b)
            masks.append(sc.masks[k])
            labels.append(sc.labels[k])
            texts.append(sc.texts[k])
    f = scenes[0].masks.shape[1:]
    return WordBatch(np.array(idx, dtype=np.int64), np.stack(masks) if masks else np.zeros((0,) + f, bool),
                     np.array(labels, dtype=np.int64), texts)


# ---------------------------------------------------------------------------
# loss on one batch


@dataclass
class StepLoss:
    total: ad.Tensor
    seg: float | None
    lang: float | None
    seq: dict = field(default_factory=dict)  # head -> mean L_seq


def batch_loss(model, scenes: list[PreparedScene], cfg: TrainConfig, iteration: int) -> StepLoss:
    """The training objective of ``cfg.stage`` on a batch; also the offline recomputation oracle."""
    if cfg.stage == 3:
        return _stage3_loss(model, scenes, cfg)
    images = np.stack([s.image for s in scenes])
    logits, feats = model.trunk(images)
    seg = segmentation_loss(ad.sigmoid(logits), np.stack([s.seg_target for s in scenes]),
                            np.stack([s.seg_weight for s in scenes]))
    words = _words(scenes)
    if len(words) == 0:
        return StepLoss(seg, float(seg.data), None, {})
    mf = model.pool(feats, words)
    if isinstance(model, SingleHeadSpotter):
        tb = model.targets(words.texts)
        l_seq = ad.mean(penalized_sequence_loss(model.head(mf.features, tb, mf.mask), tb, cfg.beta))
        total = ad.add(seg, ad.mul(l_seq, cfg.alpha_seq))
        return StepLoss(total, float(seg.data), None, {0: float(l_seq.data)})
    targets = model.targets(words.texts)
    n = len(words)

    def head_fn(r, rows):
        if len(rows) == n:
            return model.heads[r](mf.features, targets[r], mf.mask)
        return model.heads[r](ad.take_rows(mf.features, rows), targets[r].subset(rows), mf.mask[rows])

    posterior = model.lpn(mf.features)
    alpha_lang = alpha_schedule(iteration, cfg.alpha_switch) if cfg.stage == 1 else 1.0
    lc = LossConfig(cfg.mode, alpha_lang, (cfg.alpha_seq,) * model.mux.n_rec, cfg.beta)
    br: LossBreakdown = combined_loss(cfg.mode, posterior, head_fn, targets, lc, model.mux, words.labels)
    return StepLoss(ad.add(br.total, seg), float(seg.data), br.lang, br.seq)


def _stage3_loss(model, scenes, cfg: TrainConfig) -> StepLoss:
    if not isinstance(model, MultiplexedSpotter):
        raise ValueError("stage 3 applies to the multiplexed model only")
    r = head_index(model, cfg.target_head)
    keep = set(model.mux.scripts_of(r))
    words = _words(scenes, keep)
    with ad.no_grad():
        _, feats = model.trunk(np.stack([s.image for s in scenes]))
        mf = model.pool(feats, words)
    tb = model.targets(words.texts)[r]
    l_seq = ad.mean(penalized_sequence_loss(model.heads[r](mf.features, tb, mf.mask), tb, cfg.beta))
    return StepLoss(ad.mul(l_seq, cfg.alpha_seq), None, None, {r: float(l_seq.data)})


# ---------------------------------------------------------------------------
# optimizer


def _clip_scale(live, clip_norm: float) -> float:
    if clip_norm <= 0:
        return 1.0
    norm = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in live))
    if not math.isfinite(norm):
        raise ad.NumericError("non-finite gradient norm")
    return clip_norm / norm if norm > clip_norm else 1.0


class SGD:
    def __init__(self, params: list[ad.Parameter], momentum: float = 0.9, clip_norm: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {id(p): np.zeros_like(p.data) for p in params}

    def step(self, lr: float):
        live = [p for p in self.params if p.trainable and p.grad is not None]
        scale = _clip_scale(live, self.clip_norm)
        for p in live:
            v = self.velocity[id(p)]
            v *= self.momentum
            v += (p.grad * scale).astype(v.dtype)
            if lr != 0:
                p.data -= (lr * v).astype(p.data.dtype)


class Adam:
    """Adam with bias correction; moments kept in float64."""

    def __init__(self, params: list[ad.Parameter], betas=(0.9, 0.999), eps: float = 1e-8, clip_norm: float = 0.0):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.m = {id(p): np.zeros(p.data.shape) for p in params}
        self.v = {id(p): np.zeros(p.data.shape) for p in params}
        self.t = 0

    def step(self, lr: float):
        live = [p for p in self.params if p.trainable and p.grad is not None]
        scale = _clip_scale(live, self.clip_norm)
        self.t += 1
        c1, c2 = 1 - self.b1 ** self.t, 1 - self.b2 ** self.t
        for p in live:
            g = p.grad.astype(np.float64) * scale
            m, v = self.m[id(p)], self.v[id(p)]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            if lr != 0:
                p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(params, clip_norm=cfg.clip_norm)
    return SGD(params, cfg.momentum, cfg.clip_norm)


# ---------------------------------------------------------------------------
# stages


@dataclass
class LogRow:
    iteration: int
    total: float
    seg: float | None
    lang: float | None
    seq: dict
    batch: np.ndarray


def log_header(model) -> list[str]:
    heads = ([model.head_name(r) for r in range(model.mux.n_rec)]
             if isinstance(model, MultiplexedSpotter) else ["All"])
    return ["iteration", "total", "L_lang"] + [f"L_seq_{h}" for h in heads] + ["L_seg", "batch"]


def format_log(model, rows: list[LogRow]) -> str:
    n_heads = len(log_header(model)) - 5

    def num(v):
        return "" if v is None else f"{v:.8g}"

    lines = [",".join(log_header(model))]
    for row in rows:
        cells = [str(row.iteration), num(row.total), num(row.lang)]
        cells += [num(row.seq.get(r)) for r in range(n_heads)]
        cells += [num(row.seg), ";".join(str(int(i)) for i in row.batch)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def stage_pool(model, cache: SceneCache, cfg: TrainConfig) -> np.ndarray:
    """Scene ids eligible for the stage; stage 3 keeps scenes holding the target head's scripts."""
    if cfg.stage != 3:
        return np.arange(len(cache))
    if not isinstance(model, MultiplexedSpotter):
        raise ValueError("stage 3 applies to the multiplexed model only")
    keep = set(model.mux.scripts_of(head_index(model, cfg.target_head)))
    return np.array([i for i in range(len(cache))
                     if any(w.legible and int(w.script) in keep for w in cache.samples[i].words)], dtype=np.int64)


def run_stage(model, samples, cfg: TrainConfig, cache: SceneCache | None = None, callback=None) -> list[LogRow]:
    if cfg.stage == 1 and any(w.legible and w.script is None for s in samples for w in s.words):
        raise ValueError("stage-1 data needs script labels")
    cache = cache or SceneCache(samples, model.cfg)
    pool = stage_pool(model, cache, cfg)
    if len(pool) == 0:
        raise ValueError(f"no training scenes for head {cfg.target_head!r}")
    model.unfreeze()
    if cfg.stage == 3:
        model.freeze()
        model.heads[head_index(model, cfg.target_head)].unfreeze()
    params = [p for p in model.parameters() if p.trainable]
    opt = make_optimizer(params, cfg)
    log = []
    with ad.finite_checks(True):
        for it in range(cfg.iterations):
            ids = batch_indices(pool, cfg.batch_size, it, cfg.seed, cfg.stage)
            model.zero_grad()
            step = batch_loss(model, [cache[i] for i in ids], cfg, it)
            if not math.isfinite(float(step.total.data)):
                raise ad.NumericError(f"non-finite loss at iteration {it}")
            if step.total.requires_grad:
                ad.backward(step.total)
                opt.step(learning_rate(it, cfg))
            row = LogRow(it, float(step.total.data), step.seg, step.lang, step.seq, ids)
            log.append(row)
            if callback is not None:
                callback(row)
    model.zero_grad()
    model.unfreeze()
    return log


# ---------------------------------------------------------------------------
# checkpoints


def _blob_name(name: str) -> str:
    return name + ".f32"


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_checkpoint(model, path, iteration: int = 0, stage: int = 0):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "model.txt").write_bytes(dump_kv(model.cfg.to_kv()).encode("utf-8"))
    cdir = path / "charsets"
    cdir.mkdir(exist_ok=True)
    for sid, table in sorted(model.charsets.items()):
        (cdir / f"{sid.name}.txt").write_bytes(table.dumps().encode("utf-8"))
    if isinstance(model, SingleHeadSpotter):
        (cdir / "union.txt").write_bytes(model.head.table.dumps().encode("utf-8"))
    lines = {"format": CKPT_FORMAT, "kind": model.cfg.kind, "config_digest": model.config_digest(),
             "iteration": str(iteration), "stage": str(stage)}
    content = hashlib.sha256()
    names = []
    for name, p in model.named_parameters():
        data = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        (path / _blob_name(name)).write_bytes(data)
        digest = _sha(data)
        content.update(f"{name}:{digest}\n".encode())
        lines[f"param.{name}"] = f"{'x'.join(map(str, p.data.shape)) or 'scalar'} {digest}"
        names.append(name)
    lines["content_digest"] = content.hexdigest()
    (path / "manifest.txt").write_bytes(dump_kv(lines).encode("utf-8"))


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        return parse_kv((path / "manifest.txt").read_bytes().decode("utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint manifest under {path}") from None


def _shape(text: str) -> tuple:
    return () if text == "scalar" else tuple(int(v) for v in text.split("x"))


def model_from_checkpoint_config(path):
    path = Path(path)
    cfg = ModelConfig.from_kv(parse_kv((path / "model.txt").read_bytes().decode("utf-8")))
    charsets = {}
    for sid in ScriptId:
        f = path / "charsets" / f"{sid.name}.txt"
        if f.exists():
            charsets[sid] = CharsetTable.load(f)
    union = None
    if cfg.kind == "single":
        union = CharsetTable.load(path / "charsets" / "union.txt")
    return build_model(cfg, charsets, union)


def load_checkpoint(path, model=None):
    """Load parameters into ``model`` (rebuilt from the stored config when None); returns the model."""
    path = Path(path)
    man = read_manifest(path)
    if man.get("format") != CKPT_FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format {man.get('format')!r}")
    if model is None:
        model = model_from_checkpoint_config(path)
    stored = {k[6:]: v.split() for k, v in man.items() if k.startswith("param.")}
    current = dict(model.named_parameters())
    if model.config_digest() != man.get("config_digest"):
        problems = []
        for name in sorted(set(stored) | set(current)):
            if name not in current:
                problems.append(f"{name} missing from model")
            elif name not in stored:
                problems.append(f"{name} missing from checkpoint")
            elif _shape(stored[name][0]) != current[name].data.shape:
                problems.append(f"{name} has shape {_shape(stored[name][0])} in checkpoint, "
                                f"{current[name].data.shape} in model")
        detail = "; ".join(problems) if problems else "charset or configuration changed"
        raise CheckpointError(f"config digest mismatch: {detail}")
    content = hashlib.sha256()
    values = {}
    for name, p in current.items():
        if name not in stored:
            raise CheckpointError(f"parameter {name} missing from checkpoint")
        shape_txt, digest = stored[name]
        blob = path / _blob_name(name)
        try:
            data = blob.read_bytes()
        except FileNotFoundError:
            raise CheckpointError(f"blob for {name} missing") from None
        expected = int(np.prod(_shape(shape_txt), dtype=np.int64)) * 4
        if len(data) != expected:
            raise CheckpointError(f"blob for {name} is truncated or oversized ({len(data)} of {expected} bytes)")
        if _sha(data) != digest:
            raise CheckpointError(f"blob for {name} fails its digest check")
        content.update(f"{name}:{digest}\n".encode())
        values[name] = np.frombuffer(data, dtype="<f4").reshape(_shape(shape_txt))
    if content.hexdigest() != man.get("content_digest"):
        raise CheckpointError("content digest mismatch")
    for name, p in current.items():
        p.data = values[name].astype(p.data.dtype)
        p.grad = None
    return model
