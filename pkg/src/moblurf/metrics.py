"""Image-quality metrics: PSNR, SSIM, mask IoU, and report containers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class MetricError(ValueError):
    pass


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """10 log10(1 / MSE) for [0,1] images; identical inputs give +inf.

    ``mask`` (True = include) restricts the error to a pixel region.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    err = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise MetricError("psnr: mask excludes every pixel")
        err = err[mask]
    mse = float(err.mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def ssim(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Gaussian-windowed SSIM over valid window centers (no padding).

    Color images are converted to grayscale by channel mean. ``mask``
    selects window centers (True = include); centers whose window leaves
    the frame are always excluded.
    """
    x = _to_gray(a)
    y = _to_gray(b)
    if x.shape != y.shape:
        raise MetricError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    win = SSIM_WINDOW
    if x.shape[0] < win or x.shape[1] < win:
        raise MetricError(f"ssim: image {x.shape} smaller than {win}x{win} window")
    kernel = _gaussian_kernel(win, SSIM_SIGMA)
    from numpy.lib.stride_tricks import sliding_window_view
    wx = sliding_window_view(x, (win, win))
    wy = sliding_window_view(y, (win, win))
    mu_x = np.einsum("ijkl,kl->ij", wx, kernel)
    mu_y = np.einsum("ijkl,kl->ij", wy, kernel)
    xx = np.einsum("ijkl,kl->ij", wx * wx, kernel) - mu_x ** 2
    yy = np.einsum("ijkl,kl->ij", wy * wy, kernel) - mu_y ** 2
    xy = np.einsum("ijkl,kl->ij", wx * wy, kernel) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + SSIM_C1) * (2 * xy + SSIM_C2)) / \
               ((mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (xx + yy + SSIM_C2))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        half = win // 2
        centers = mask[half:mask.shape[0] - half, half:mask.shape[1] - half]
        if not centers.any():
            raise MetricError("ssim: mask excludes every window center")
        return float(ssim_map[centers].mean())
    return float(ssim_map.mean())


def mask_iou(pred: np.ndarray, true: np.ndarray) -> float:
    """Intersection over union of two binary masks; empty union counts 1."""
    p = np.asarray(pred).astype(bool)
    t = np.asarray(true).astype(bool)
    if p.shape != t.shape:
        raise MetricError(f"mask_iou: shape mismatch {p.shape} vs {t.shape}")
    union = (p | t).sum()
    if union == 0:
        return 1.0
    return float((p & t).sum() / union)


@dataclass
class MetricReport:
    """Per-frame metric rows plus their means, serializable both ways."""

    rows: list = field(default_factory=list)  # dicts with frame id + metrics

    def add(self, frame: int, **metrics):
        self.rows.append({"frame": int(frame), **metrics})

    def means(self) -> dict:
        if not self.rows:
            return {}
        keys = [k for k in self.rows[0] if k != "frame"]
        out = {}
        for k in keys:
            vals = [r[k] for r in self.rows if r.get(k) is not None]
            finite = [v for v in vals if np.isfinite(v)]
            out[k] = float(np.mean(finite)) if finite else math.inf
        return out

    def to_json_dict(self) -> dict:
        return {"frames": self.rows, "means": self.means(),
                "frame_count": len(self.rows)}

    def to_json(self) -> str:
        def sanitize(v):
            # strict JSON has no Infinity literal
            if isinstance(v, float) and not math.isfinite(v):
                return "inf" if v > 0 else "-inf"
            if isinstance(v, dict):
                return {k: sanitize(x) for k, x in v.items()}
            if isinstance(v, list):
                return [sanitize(x) for x in v]
            return v
        return json.dumps(sanitize(self.to_json_dict()), indent=2)

    def to_text(self) -> str:
        if not self.rows:
            return "(no frames)\n"
        keys = [k for k in self.rows[0] if k != "frame"]
        header = "frame " + " ".join(f"{k:>14}" for k in keys)
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(f"{r['frame']:5d} " + " ".join(
                f"{r[k]:14.4f}" if np.isfinite(r[k]) else f"{'inf':>14}" for k in keys))
        means = self.means()
        lines.append("-" * len(header))
        lines.append(" mean " + " ".join(
            f"{means[k]:14.4f}" if np.isfinite(means[k]) else f"{'inf':>14}" for k in keys))
        return "\n".join(lines) + "\n"
