"""Shared detection/segmentation trunk: shrunk-text maps, proposals and hard RoI masking."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage
from shapely.geometry import Polygon
from skimage import draw

from . import autodiff as ad

# paper scale: ResNet-50 + U-Net, C=256, S=32
@dataclass(frozen=True)
class TrunkConfig:
    image_size: int = 256
    shrink_ratio: float = 0.5
    threshold: float = 0.5
    channels: int = 64
    pooled: int = 16
    widths: tuple = (16, 32, 64)
    min_component: int = 10
    stride: int = 4

    def __post_init__(self):
        if not 0 < self.shrink_ratio < 1:
            raise ValueError("shrink ratio must lie in (0, 1)")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.pooled < 4:
            raise ValueError("pooled size must be at least 4")
        if self.image_size % 8:
            raise ValueError("image size must be a multiple of 8")

    @property
    def feature_size(self) -> int:
        return self.image_size // self.stride


# ---------------------------------------------------------------------------
# polygon geometry


def shrink_distance(polygon, r: float) -> float:
    poly = Polygon(np.asarray(polygon, dtype=float))
    return poly.area * (1 - r * r) / poly.length


def shrink_polygon(polygon, r: float):
    """Inward offset by d = A(1 - r^2)/L. Returns (vertices, degenerate)."""
    pts = np.asarray(polygon, dtype=float)
    poly = Polygon(pts)
    if not poly.is_valid or poly.area <= 0:
        return pts, True
    d = poly.area * (1 - r * r) / poly.length
    if d <= 0:
        return pts, False
    shrunk = poly.buffer(-d, join_style="mitre", mitre_limit=10.0)
    if shrunk.is_empty or shrunk.geom_type != "Polygon" or shrunk.area <= 0:
        return pts, True
    return np.asarray(shrunk.exterior.coords)[:-1], False


def order_quad(pts) -> np.ndarray:
    """Clockwise (image coordinates, y down) starting from the top-left-most vertex."""
    pts = np.asarray(pts, dtype=float)
    c = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    pts = pts[np.argsort(ang, kind="stable")]
    start = int(np.argmin(pts[:, 0] + pts[:, 1]))
    return np.roll(pts, -start, axis=0)


def unclip_distance(w: float, h: float, r: float) -> float:
    """Offset d that grows a w x h rectangle back to the one whose shrink gave it.

    Solves (8 - 4k) d^2 + 2(1 - k)(w + h) d - k w h = 0 with k = 1 - r^2,
    the exact inverse of the shrink rule on rectangles.
    """
    k = 1 - r * r
    a, b, c = 8 - 4 * k, 2 * (1 - k) * (w + h), -k * w * h
    return float((-b + np.sqrt(b * b - 4 * a * c)) / (2 * a))


def unclip_rectangle(rect, r: float) -> np.ndarray:
    """Grow a rectangle (4 vertices) outward along its own axes."""
    pts = order_quad(rect)
    e1, e2 = pts[1] - pts[0], pts[3] - pts[0]
    w, h = np.linalg.norm(e1), np.linalg.norm(e2)
    if w == 0 or h == 0:
        return pts
    d = unclip_distance(w, h, r)
    u, v = e1 / w, e2 / h
    c = pts.mean(axis=0)
    hw, hh = w / 2 + d, h / 2 + d
    return order_quad([c - hw * u - hh * v, c + hw * u - hh * v, c + hw * u + hh * v, c - hw * u + hh * v])


def rasterize(polygon, shape, scale: float = 1.0) -> np.ndarray:
    """Boolean mask of cells whose centre lies inside ``polygon * scale``."""
    pts = np.asarray(polygon, dtype=float) * scale - 0.5
    mask = np.zeros(shape, dtype=bool)
    rr, cc = draw.polygon(pts[:, 1], pts[:, 0], shape)
    mask[rr, cc] = True
    return mask


def polygon_mask(polygon, shape, scale: float = 1.0) -> np.ndarray:
    """Like :func:`rasterize` but never empty: falls back to the centroid cell."""
    m = rasterize(polygon, shape, scale)
    if not m.any():
        c = np.asarray(polygon, dtype=float).mean(axis=0) * scale
        y = int(np.clip(np.floor(c[1]), 0, shape[0] - 1))
        x = int(np.clip(np.floor(c[0]), 0, shape[1] - 1))
        m[y, x] = True
    return m


def shrunk_target(words, shape, r: float):
    """Training target: union of shrunk legible polygons; weight 0 over illegible ones."""
    target = np.zeros(shape, dtype=np.float32)
    weight = np.ones(shape, dtype=np.float32)
    for w in words:
        if not w.legible:
            weight[rasterize(w.polygon, shape)] = 0
            continue
        shrunk, degenerate = shrink_polygon(w.polygon, r)
        if not degenerate:
            target[rasterize(shrunk, shape)] = 1
    return target, weight


# ---------------------------------------------------------------------------
# network


class Trunk(ad.Module):
    """Six-conv encoder (stride 8) and a two-layer decoder with one skip connection.

    Returns the segmentation logits upsampled to image size and a C-channel
    feature map at stride 4.
    """

    def __init__(self, rng: np.random.Generator, cfg: TrunkConfig = TrunkConfig()):
        self.cfg = cfg
        w0, w1, w2 = cfg.widths
        self.enc1 = ad.Conv2d(rng, 1, w0, 3, 2, 1)
        self.enc2 = ad.Conv2d(rng, w0, w0, 3, 1, 1)
        self.enc3 = ad.Conv2d(rng, w0, w1, 3, 2, 1)
        self.enc4 = ad.Conv2d(rng, w1, w1, 3, 1, 1)
        self.enc5 = ad.Conv2d(rng, w1, w2, 3, 2, 1)
        self.enc6 = ad.Conv2d(rng, w2, w2, 3, 1, 1)
        self.dec1 = ad.Conv2d(rng, w2 + w1, cfg.channels, 3, 1, 1)
        self.dec2 = ad.Conv2d(rng, cfg.channels, 1, 1)
        n, f = cfg.image_size, cfg.feature_size
        self._up = ad.interp_matrix(f, n)

    def __call__(self, images):
        images = ad.as_tensor(images)
        if images.ndim == 3:
            images = ad.reshape(images, (images.shape[0], 1) + images.shape[1:])
        size = self.cfg.image_size
        if images.shape[1:] != (1, size, size):
            raise ValueError(f"trunk expects {size}x{size} images, got {images.shape[2:]}")
        x = ad.relu(self.enc1(images))
        x = ad.relu(self.enc2(x))
        x = ad.relu(self.enc3(x))
        skip = ad.relu(self.enc4(x))
        x = ad.relu(self.enc5(skip))
        x = ad.relu(self.enc6(x))
        x = ad.concat([ad.upsample_nearest(x, 2), skip], axis=1)
        features = ad.relu(self.dec1(x))
        low = self.dec2(features)  # (B, 1, f, f)
        up = self._up.astype(low.dtype)
        logits = ad.matmul(ad.matmul(up, low), up.T)
        return ad.reshape(logits, (logits.shape[0], size, size)), features


def segmentation_loss(probs, target, weight=None, eps: float = 1e-7):
    """Pixelwise binary cross-entropy plus soft dice, equally weighted, averaged over images.

    ``probs``/``target``/``weight`` are (B, H, W); weight 0 removes pixels from both terms.
    """
    probs = ad.as_tensor(probs)
    target = np.asarray(target, dtype=probs.dtype)
    if probs.shape != target.shape:
        raise ValueError(f"prediction {probs.shape} and target {target.shape} differ in shape")
    w = np.ones_like(target) if weight is None else np.asarray(weight, dtype=probs.dtype)
    axes = tuple(range(1, probs.ndim))
    p = ad.clip(probs, eps, 1 - eps)
    ll = ad.add(ad.mul(ad.log(p), target * w), ad.mul(ad.log(ad.sub(1.0, p)), (1 - target) * w))
    denom = np.maximum(w.sum(axis=axes), 1.0)
    bce = ad.div(ad.mul(ad.tsum(ll, axis=axes), -1.0), denom)
    pw = ad.mul(probs, w)
    inter = ad.tsum(ad.mul(pw, target), axis=axes)
    total = ad.add(ad.tsum(pw, axis=axes), (target * w).sum(axis=axes) + 1.0)
    dice = ad.sub(1.0, ad.div(ad.add(ad.mul(inter, 2.0), 1.0), total))
    return ad.mean(ad.add(bce, dice))


# ---------------------------------------------------------------------------
# proposals


@dataclass
class Proposal:
    polygon: np.ndarray  # (4, 2) float, image pixels
    confidence: float
    mask: np.ndarray  # bool, feature resolution


def propose_regions(seg: np.ndarray, cfg: TrunkConfig) -> list[Proposal]:
    """4-connected components of the thresholded map, each unclipped to a quadrilateral."""
    seg = np.asarray(seg)
    binary = seg > cfg.threshold
    labels, n = ndimage.label(binary, structure=[[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    if n == 0:
        return []
    f = seg.shape[0] // cfg.stride, seg.shape[1] // cfg.stride
    sizes = ndimage.sum_labels(np.ones_like(seg), labels, index=np.arange(1, n + 1))
    means = ndimage.mean(seg, labels, index=np.arange(1, n + 1))
    slices = ndimage.find_objects(labels)
    out = []
    for k in range(n):
        if sizes[k] < cfg.min_component:
            continue
        sl = slices[k]
        ys, xs = np.nonzero(labels[sl] == k + 1)
        ys, xs = ys + sl[0].start, xs + sl[1].start
        corners = np.concatenate([np.stack([xs + dx, ys + dy], axis=1) for dx in (0, 1) for dy in (0, 1)])
        rect = cv2.boxPoints(cv2.minAreaRect(corners.astype(np.float32)))
        quad = unclip_rectangle(rect, cfg.shrink_ratio)
        quad[:, 0] = np.clip(quad[:, 0], 0, seg.shape[1])
        quad[:, 1] = np.clip(quad[:, 1], 0, seg.shape[0])
        mask = polygon_mask(quad, f, 1.0 / cfg.stride)
        out.append(Proposal(quad, float(means[k]), mask))
    return out


# ---------------------------------------------------------------------------
# hard RoI masking


@dataclass
class MaskedFeature:
    features: ad.Tensor  # (N, C, S, S)
    mask: np.ndarray  # (N, S, S) bool; features are exactly zero where False
    source: np.ndarray  # (N,) index of the proposal/word each row came from


def _pool_geometry(mask: np.ndarray, s: int):
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise ValueError("empty proposal mask")
    y0, y1, x0, x1 = ys.min(), ys.max(), xs.min(), xs.max()
    ry = ad.interp_matrix(mask.shape[0], s, y0, y1)
    rx = ad.interp_matrix(mask.shape[1], s, x0, x1)
    near_y = np.rint(np.linspace(y0, y1, s)).astype(int)
    near_x = np.rint(np.linspace(x0, x1, s)).astype(int)
    return ry, rx, mask[np.ix_(near_y, near_x)]


def roi_mask_pool(features, image_index, masks, pooled: int) -> MaskedFeature:
    """Zero features outside each mask, crop to the mask's box, resample bilinearly to S x S.

    ``features`` is (B, C, H', W'); row i of the result comes from image
    ``image_index[i]`` under ``masks[i]`` (H' x W' bool). Pooled cells whose
    nearest source cell lies outside the mask are set to exactly zero.
    """
    features = ad.as_tensor(features)
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim == 2:
        masks = masks[None]
    image_index = np.asarray(image_index, dtype=np.int64).reshape(-1)
    if masks.shape[1:] != features.shape[2:]:
        raise ValueError(f"mask {masks.shape[1:]} does not match feature extent {features.shape[2:]}")
    geo = [_pool_geometry(m, pooled) for m in masks]
    dt = features.dtype
    ry = np.stack([g[0] for g in geo]).astype(dt)[:, None]
    rxt = np.stack([g[1].T for g in geo]).astype(dt)[:, None]
    pmask = np.stack([g[2] for g in geo])
    x = ad.take_rows(features, image_index)
    x = ad.mul(x, masks[:, None].astype(dt))
    x = ad.matmul(ad.matmul(ry, x), rxt)
    x = ad.mul(x, pmask[:, None].astype(dt))
    return MaskedFeature(x, pmask, np.arange(len(masks)))
