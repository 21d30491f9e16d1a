"""Procedural multilingual scenes: eight pseudo-scripts rendered from 5x7 stroke grids.

Each script owns a block of real Unicode codepoints and a stroke "family"
(a fixed base pattern plus family-specific random fill) so scripts are
visually separable while glyphs within a script differ. Ground truth is
written in an MLT-like text format, images as binary PGM.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from shapely.geometry import Polygon

from .charset import DIGITS, ScriptId

GLYPH_W, GLYPH_H = 5, 7

ALPHABET_SIZES = {
    ScriptId.Arabic: 40, ScriptId.Bengali: 50, ScriptId.Chinese: 200, ScriptId.Hindi: 50,
    ScriptId.Japanese: 120, ScriptId.Korean: 80, ScriptId.Latin: 52, ScriptId.Symbol: 20,
}


def _block(lo, hi, cats=("L",)):
    return [chr(c) for c in range(lo, hi) if unicodedata.category(chr(c))[0] in cats]


def _alphabet(script: ScriptId) -> list[str]:
    n = ALPHABET_SIZES[script]
    pools = {
        ScriptId.Arabic: lambda: _block(0x0621, 0x0650),
        ScriptId.Bengali: lambda: _block(0x0985, 0x09E2, ("L", "M")),
        ScriptId.Chinese: lambda: [chr(0x4E00 + i) for i in range(n)],
        ScriptId.Hindi: lambda: _block(0x0904, 0x093A),
        ScriptId.Japanese: lambda: _block(0x3041, 0x3097) + _block(0x30A1, 0x30FB),
        ScriptId.Korean: lambda: [chr(0xAC00 + i) for i in range(n)],
        ScriptId.Latin: lambda: [chr(c) for c in range(ord("a"), ord("z") + 1)]
                                + [chr(c) for c in range(ord("A"), ord("Z") + 1)],
        ScriptId.Symbol: lambda: _block(0x2190, 0x2200, ("S",)),
    }
    chars = pools[script]()
    if len(chars) < n:
        raise RuntimeError(f"codepoint pool for {script.name} too small")
    return chars[:n]


ALPHABETS = {s: _alphabet(s) for s in ScriptId}


# ---------------------------------------------------------------------------
# glyphs


def _family_glyph(family: str, rng: np.random.Generator) -> np.ndarray:
    g = np.zeros((GLYPH_H, GLYPH_W), dtype=bool)
    if family == "Arabic":
        g[5, :] = True
        g[1:5] = rng.random((4, GLYPH_W)) < 0.3
        g[6, rng.integers(GLYPH_W)] = True
    elif family == "Bengali":
        g[0, :] = True
        g[1:] = rng.random((6, GLYPH_W)) < 0.3
        g[4:6, 0:2] = True
    elif family == "Hindi":
        g[0, :] = True
        g[:, 4] = True
        g[1:, :4] = rng.random((6, 4)) < 0.3
    elif family == "Chinese":  # closed frame around a dense interior
        g[[0, -1], :] = True
        g[:, [0, -1]] = True
        g[1:-1, 1:-1] = rng.random((GLYPH_H - 2, GLYPH_W - 2)) < 0.4
    elif family == "Japanese":  # one sweeping diagonal, sparse dots, no bars
        start = rng.integers(GLYPH_W)
        step = rng.choice([-1, 1])
        for r in range(GLYPH_H):
            g[r, (start + step * (r // 2)) % GLYPH_W] = True
        g |= rng.random(g.shape) < 0.12
    elif family == "Korean":
        g[:4] = rng.random((4, GLYPH_W)) < 0.35
        g[4, 1:4] = g[6, 1:4] = True
        g[5, 1] = g[5, 3] = True
    elif family == "Latin":  # ink below an x-height line, one ascending stem
        g[2:] = rng.random((GLYPH_H - 2, GLYPH_W)) < 0.35
        g[:, 0 if rng.random() < 0.5 else GLYPH_W - 1] = True
    elif family == "Symbol":  # mirror-symmetric with a full middle bar
        half = rng.random((GLYPH_H, 3)) < 0.45
        g[:, :3] = half
        g[:, 3:] = half[:, 1::-1]
        g[GLYPH_H // 2, :] = True
    else:  # shared digits and punctuation: narrow, centred
        g[1:6, 1:4] = rng.random((5, 3)) < 0.5
    return g


class GlyphBank:
    """Deterministic raster per (script family, character); distinct within a family."""

    def __init__(self, seed: int = 1234):
        self.seed = seed
        self._cache: dict[tuple[str, str], np.ndarray] = {}
        self._families: dict[str, list[str]] = {s.name: ALPHABETS[s] for s in ScriptId}
        self._families["Shared"] = sorted(set(DIGITS) | set("-.:/#&"))
        for fam in self._families:
            self._fill(fam)

    def _fill(self, family: str):
        taken = set()
        fam_id = list(self._families).index(family)
        for ch in self._families[family]:
            rng = np.random.default_rng([self.seed, fam_id, ord(ch)])
            for _ in range(1000):
                g = _family_glyph(family, rng)
                key = g.tobytes()
                if g.any() and key not in taken:
                    break
            taken.add(key)
            self._cache[(family, ch)] = g

    def family_of(self, ch: str) -> str:
        for fam, chars in self._families.items():
            if (fam, ch) in self._cache:
                return fam
        raise KeyError(f"no glyph for {ch!r}")

    def glyph(self, ch: str, family: str | None = None) -> np.ndarray:
        if family is not None and (family, ch) in self._cache:
            return self._cache[(family, ch)]
        if ("Shared", ch) in self._cache:
            return self._cache[("Shared", ch)]
        return self._cache[(self.family_of(ch), ch)]

    def render_word(self, word: str, family: str, scale: int) -> np.ndarray:
        """Boolean ink raster for a word; characters separated by one empty column
        (Arabic-like keeps its baseline connected across the gap)."""
        cols = []
        for i, ch in enumerate(word):
            g = self.glyph(ch, family)
            if i:
                gap = np.zeros((GLYPH_H, 1), dtype=bool)
                if family == "Arabic":
                    gap[5, 0] = True
                cols.append(gap)
            cols.append(g)
        raster = np.concatenate(cols, axis=1)
        return np.kron(raster, np.ones((scale, scale), dtype=bool))


_BANKS: dict[int, GlyphBank] = {}


def glyph_bank(seed: int = 1234) -> GlyphBank:
    if seed not in _BANKS:
        _BANKS[seed] = GlyphBank(seed)
    return _BANKS[seed]


# ---------------------------------------------------------------------------
# data types


@dataclass
class WordAnnotation:
    polygon: np.ndarray  # (4, 2) int, clockwise from top-left
    script: ScriptId
    transcription: str
    legible: bool = True

    def __eq__(self, other):
        return (isinstance(other, WordAnnotation) and np.array_equal(self.polygon, other.polygon)
                and self.script == other.script and self.transcription == other.transcription
                and self.legible == other.legible)


@dataclass
class SceneSample:
    image: np.ndarray  # (H, W) float in [0, 1]
    words: list[WordAnnotation]
    seed: int = 0


@dataclass
class DatasetManifest:
    root: str = "data"
    seed: int = 7
    train: int = 500
    test: int = 100
    image_size: int = 256
    rotation: float = 15.0
    weights: dict = field(default_factory=lambda: {s.name: 1.0 for s in ScriptId})
    min_words: int = 1
    max_words: int = 8
    min_len: int = 2
    max_len: int = 5
    scales: tuple = (2, 3)
    illegible: float = 0.05
    digit_rate: float = 0.1
    zipf: float = 1.0
    noise: float = 0.03
    glyph_seed: int = 1234

    def __post_init__(self):
        w = {ScriptId.parse(k).name: float(v) for k, v in self.weights.items()}
        if any(v < 0 for v in w.values()):
            raise ValueError("script weights must be non-negative")
        if sum(w.values()) <= 0:
            raise ValueError("script weights sum to zero")
        self.weights = w

    def probabilities(self) -> np.ndarray:
        w = np.array([self.weights.get(s.name, 0.0) for s in ScriptId])
        return w / w.sum()

    def dumps(self) -> str:
        """key=value text; the root is where the file lives, so it is not stored."""
        lines = []
        for key, val in vars(self).items():
            if key == "root":
                continue
            if key == "weights":
                val = ",".join(f"{k}:{v:g}" for k, v in self.weights.items())
            elif isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            lines.append(f"{key}={val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, **overrides) -> "DatasetManifest":
        from .config import parse_kv

        kv = parse_kv(text)
        kv.update({k: str(v) for k, v in overrides.items()})
        return cls.from_strings(kv)

    @classmethod
    def from_strings(cls, kv: dict) -> "DatasetManifest":
        base = cls()
        args = {}
        for key, raw in kv.items():
            if not hasattr(base, key):
                raise ValueError(f"unknown manifest key {key!r}")
            cur = getattr(base, key)
            if key == "weights":
                args[key] = {k: float(v) for k, v in (p.split(":") for p in raw.split(",") if p)}
            elif isinstance(cur, tuple):
                args[key] = tuple(int(v) for v in raw.split(","))
            elif isinstance(cur, bool):
                args[key] = raw.lower() in ("1", "true", "yes")
            else:
                args[key] = type(cur)(raw)
        return replace(base, **args) if args else base


# ---------------------------------------------------------------------------
# sampling and rendering


def _zipf_probs(n, s, rng_perm):
    p = 1.0 / np.arange(1, n + 1) ** s
    p = p / p.sum()
    return p[rng_perm]


class WordSampler:
    """Draws words with Zipf-distributed character frequencies per script.

    The frequency rank of each character is a fixed permutation of the
    alphabet, so frequency order differs from codepoint order.
    """

    def __init__(self, manifest: DatasetManifest):
        self.m = manifest
        self.char_probs = {}
        for s in ScriptId:
            n = len(ALPHABETS[s])
            perm = np.random.default_rng([manifest.glyph_seed, 99, int(s)]).permutation(n)
            self.char_probs[s] = _zipf_probs(n, manifest.zipf, perm)

    def sample(self, rng: np.random.Generator, script: ScriptId) -> str:
        n = int(rng.integers(self.m.min_len, self.m.max_len + 1))
        alpha = ALPHABETS[script]
        idx = rng.choice(len(alpha), size=n, p=self.char_probs[script])
        chars = [alpha[i] for i in idx]
        if n > 1 and rng.random() < self.m.digit_rate:
            chars[int(rng.integers(n))] = DIGITS[int(rng.integers(10))]
        return "".join(chars)


def _rotated_box(cx, cy, w, h, angle_deg):
    a = np.deg2rad(angle_deg)
    ux, uy = np.cos(a), np.sin(a)
    vx, vy = -np.sin(a), np.cos(a)
    corners = []
    for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
        corners.append((cx + sx * w / 2 * ux + sy * h / 2 * vx, cy + sx * w / 2 * uy + sy * h / 2 * vy))
    return np.array(corners)


def _paint(canvas, raster, cx, cy, angle_deg, value):
    """Inverse-map every canvas pixel centre near the word into the raster (nearest)."""
    h, w = raster.shape
    a = np.deg2rad(angle_deg)
    r = int(np.ceil(np.hypot(w, h) / 2)) + 1
    y0, y1 = max(int(cy) - r, 0), min(int(cy) + r + 1, canvas.shape[0])
    x0, x1 = max(int(cx) - r, 0), min(int(cx) + r + 1, canvas.shape[1])
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx, dy = xs + 0.5 - cx, ys + 0.5 - cy
    u = np.cos(a) * dx + np.sin(a) * dy + w / 2
    v = -np.sin(a) * dx + np.cos(a) * dy + h / 2
    ui, vi = np.floor(u).astype(int), np.floor(v).astype(int)
    inside = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    ink = np.zeros_like(inside)
    ink[inside] = raster[vi[inside], ui[inside]]
    region = canvas[y0:y1, x0:x1]
    region[ink] = value
    return ink.sum()


def generate_scene(manifest: DatasetManifest, seed_key, sampler: WordSampler | None = None) -> SceneSample:
    """One scene; ``seed_key`` is any SeedSequence entropy (e.g. [seed, split, index])."""
    m = manifest
    sampler = sampler or WordSampler(m)
    bank = glyph_bank(m.glyph_seed)
    ss = np.random.SeedSequence(seed_key)
    rng = np.random.default_rng(ss)
    size = m.image_size
    bg = rng.uniform(0.05, 0.3)
    canvas = np.full((size, size), bg)
    probs = m.probabilities()
    n_words = int(rng.integers(m.min_words, m.max_words + 1))
    placed: list[Polygon] = []
    words = []
    for wi in range(n_words):
        wrng = np.random.default_rng([*np.atleast_1d(seed_key), 1000 + wi])
        script = ScriptId(int(wrng.choice(len(probs), p=probs)))
        text = sampler.sample(wrng, script)
        scale = int(wrng.choice(m.scales))
        raster = bank.render_word(text, script.name, scale)
        rh, rw = raster.shape
        bw, bh = rw + 2 * scale, rh + 2 * scale  # one glyph-cell margin on every side
        legible = wrng.random() >= m.illegible
        for _ in range(30):
            angle = float(wrng.uniform(-m.rotation, m.rotation)) if m.rotation > 0 else 0.0
            cx = float(wrng.uniform(0, size))
            cy = float(wrng.uniform(0, size))
            quad = np.rint(_rotated_box(cx, cy, bw, bh, angle)).astype(int)
            if quad.min() < 1 or quad.max() > size - 1:
                continue
            poly = Polygon(quad)
            if poly.area <= 0 or any(poly.buffer(3).intersects(p) for p in placed):
                continue
            ink = bg + rng.uniform(0.5, 0.7) if legible else bg + rng.uniform(0.06, 0.12)
            _paint(canvas, raster, cx, cy, angle, ink)
            placed.append(poly)
            words.append(WordAnnotation(quad, script, text if legible else "###", legible))
            break
    canvas = canvas + rng.normal(0, m.noise, canvas.shape)
    canvas = np.rint(np.clip(canvas, 0, 1) * 255) / 255.0
    return SceneSample(canvas, words, int(np.atleast_1d(seed_key)[-1]))


# ---------------------------------------------------------------------------
# ground-truth files


class GroundTruthError(ValueError):
    pass


def format_gt_line(w: WordAnnotation) -> str:
    coords = ",".join(str(int(v)) for v in np.asarray(w.polygon).reshape(-1))
    return f"{coords},{w.script.name},{w.transcription if w.legible else '###'}"


def write_gt(sample_or_words, path):
    words = sample_or_words.words if isinstance(sample_or_words, SceneSample) else sample_or_words
    text = "".join(format_gt_line(w) + "\n" for w in words)
    Path(path).write_bytes(text.encode("utf-8"))


def parse_gt_line(line: str, lineno: int = 1) -> WordAnnotation:
    parts = line.split(",", 9)
    if len(parts) != 10:
        raise GroundTruthError(f"line {lineno}: expected 10 fields, got {len(parts)}")
    try:
        coords = np.array([int(v) for v in parts[:8]], dtype=int).reshape(4, 2)
    except ValueError:
        raise GroundTruthError(f"line {lineno}: non-integer coordinate") from None
    try:
        script = ScriptId.parse(parts[8])
    except ValueError as e:
        raise GroundTruthError(f"line {lineno}: {e}") from None
    text = parts[9]
    return WordAnnotation(coords, script, text, text != "###")


def read_gt(path) -> list[WordAnnotation]:
    text = Path(path).read_bytes().decode("utf-8")
    return [parse_gt_line(line, i) for i, line in enumerate(text.split("\n"), start=1) if line]


def write_pgm(image: np.ndarray, path):
    Image.fromarray(np.rint(np.clip(image, 0, 1) * 255).astype(np.uint8), "L").save(path, format="PPM")


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float32) / 255.0


# ---------------------------------------------------------------------------
# datasets

SPLITS = ("train", "test")


def generate_dataset(manifest: DatasetManifest, root=None) -> Path:
    root = Path(root or manifest.root)
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / "manifest.txt").write_bytes(manifest.dumps().encode("utf-8"))
    except OSError as e:
        raise OSError(f"cannot write dataset under {root}: {e}") from e
    sampler = WordSampler(manifest)
    for code, split in enumerate(SPLITS):
        n = getattr(manifest, split)
        (root / split / "images").mkdir(parents=True, exist_ok=True)
        (root / split / "gt").mkdir(parents=True, exist_ok=True)
        for i in range(n):
            sample = generate_scene(manifest, [manifest.seed, code, i], sampler)
            name = f"{i:05d}"
            write_pgm(sample.image, root / split / "images" / f"{name}.pgm")
            write_gt(sample, root / split / "gt" / f"{name}.txt")
    return root


def load_split(root, split: str) -> list[SceneSample]:
    root = Path(root)
    gt_dir = root / split / "gt"
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"no {split} split under {root}")
    out = []
    for gt in sorted(gt_dir.glob("*.txt")):
        img = read_pgm(root / split / "images" / (gt.stem + ".pgm"))
        out.append(SceneSample(img, read_gt(gt), int(gt.stem)))
    return out


def load_manifest(root) -> DatasetManifest:
    return DatasetManifest.loads(Path(root, "manifest.txt").read_text(encoding="utf-8"), root=str(root))


def corpus(samples: list[SceneSample]) -> list[tuple[str, ScriptId]]:
    """Legible (transcription, script) pairs, for charset construction."""
    return [(w.transcription, w.script) for s in samples for w in s.words if w.legible]
