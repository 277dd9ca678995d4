"""Background-quality and change-detection metrics.

Conventions: luma is BT.601 (0.299 R + 0.587 G + 0.114 B) on the 0..255
scale; ROI masks are boolean with True = evaluated; PSNR-type scores are
capped at 100 dB when the error is zero.
"""
from collections import OrderedDict
from dataclasses import asdict, dataclass
import logging
import warnings

import numpy as np
from scipy.ndimage import correlate1d

from .errors import UsageError

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
CQM_WEIGHTS = (0.9449, 0.0551)

# ground-truth label codes after mapping
BG, FG, IGNORE = 0, 1, 2


def luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[-1] == 1:
        return img[..., 0]
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def _roi(shape, roi):
    if roi is None:
        return np.ones(shape, dtype=bool)
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != shape:
        raise UsageError(f"ROI shape {roi.shape} != image shape {shape}")
    return roi


def _pair(gt, est):
    g, e = luma(gt), luma(est)
    if g.shape != e.shape:
        raise UsageError(f"extent mismatch: {g.shape} vs {e.shape}")
    return g, e


def age(gt, est, roi=None):
    """Average absolute luma error over the ROI."""
    g, e = _pair(gt, est)
    m = _roi(g.shape, roi)
    if not m.any():
        raise UsageError("empty ROI")
    return float(np.abs(g - e)[m].mean())


def peps_pceps(gt, est, tau=20.0, roi=None):
    """Fraction of ROI pixels with luma error above ``tau``, and the fraction of
    those whose in-ROI 4-neighbours are all errors as well."""
    g, e = _pair(gt, est)
    m = _roi(g.shape, roi)
    n = m.sum()
    if n == 0:
        raise UsageError("empty ROI")
    err = (np.abs(g - e) > tau) & m
    # a neighbour outside the image or outside the ROI does not break the cluster
    pad = np.pad(err | ~m, 1, constant_values=True)
    nb = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    clustered = err & nb
    return float(err.sum() / n), float(clustered.sum() / n)


def _psnr_from_mse(mse):
    if mse <= 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(255.0 ** 2 / mse), PSNR_CAP))


def psnr(gt, est, roi=None):
    g, e = _pair(gt, est)
    m = _roi(g.shape, roi)
    if not m.any():
        raise UsageError("empty ROI")
    return _psnr_from_mse(((g - e) ** 2)[m].mean())


def _gauss_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-x ** 2 / (2 * sigma ** 2))
    return w / w.sum()


def _filter_valid(img, win):
    out = correlate1d(img, win, axis=0, mode="constant")
    out = correlate1d(out, win, axis=1, mode="constant")
    r = len(win) // 2
    return out[r:-r, r:-r]


def _ssim_parts(x, y, win, c1, c2):
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return float((lum * cs).mean()), float(cs.mean())


def ms_ssim(gt, est, scales=5):
    """Multi-scale SSIM on luma with the standard five-scale weights.

    Images whose shorter side cannot hold ``scales`` levels of an 11-pixel
    window are scored on fewer scales (leading weights, renormalized) with a
    warning. Negative per-scale terms are clipped to 0 so the result stays in
    [0, 1].
    """
    g, e = _pair(gt, est)
    short = min(g.shape)
    fit = 0
    while fit < scales and short // (2 ** fit) >= 11:
        fit += 1
    if fit == 0:
        raise UsageError(f"image {g.shape} is smaller than one 11x11 window")
    if fit < scales:
        warnings.warn(f"ms_ssim: image {g.shape} supports only {fit} scale(s)", stacklevel=2)
    weights = np.array(MS_SSIM_WEIGHTS[:fit])
    if fit < scales:
        weights /= weights.sum()
    win = _gauss_window()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    vals = []
    x, y = g, e
    for s in range(fit):
        ssim_val, cs = _ssim_parts(x, y, win, c1, c2)
        vals.append(ssim_val if s == fit - 1 else cs)
        if s < fit - 1:
            h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
            x = x[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
            y = y[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    vals = np.clip(np.array(vals), 0.0, 1.0)
    return float(np.prod(vals ** weights))


def rgb_to_yuv(img):
    img = np.asarray(img, dtype=np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = -0.14713 * r - 0.28886 * g + 0.436 * b
    v = 0.615 * r - 0.51499 * g - 0.10001 * b
    return y, u, v


def cqm(gt, est, roi=None):
    """Colour quality measure: ``0.9449 * PSNR_Y + 0.0551 * (PSNR_U + PSNR_V) / 2``."""
    gt = np.asarray(gt)
    est = np.asarray(est)
    if gt.ndim != 3 or gt.shape[-1] != 3 or est.shape != gt.shape:
        raise UsageError("cqm needs two H x W x 3 images of equal extent")
    m = _roi(gt.shape[:2], roi)
    if not m.any():
        raise UsageError("empty ROI")
    scores = [_psnr_from_mse(((a - b) ** 2)[m].mean()) for a, b in zip(rgb_to_yuv(gt), rgb_to_yuv(est))]
    wy, wc = CQM_WEIGHTS
    return wy * scores[0] + wc * (scores[1] + scores[2]) / 2.0


@dataclass
class BgQualityReport:
    age: float
    peps: float
    pceps: float
    psnr: float
    ms_ssim: float
    cqm: float


def background_report(gt, est, roi=None, tau=20.0):
    peps, pceps = peps_pceps(gt, est, tau, roi)
    colour = np.asarray(gt).ndim == 3 and np.asarray(gt).shape[-1] == 3
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ms = ms_ssim(gt, est)
    return BgQualityReport(age(gt, est, roi), peps, pceps, psnr(gt, est, roi), ms,
                           cqm(gt, est, roi) if colour else float("nan"))


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, gt, roi=None):
    """Counts over pixels that are inside the ROI and not labelled IGNORE.

    ``gt`` uses the label codes BG=0, FG=1, IGNORE=2; ``pred`` is binary.
    """
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise UsageError(f"extent mismatch: {pred.shape} vs {gt.shape}")
    valid = (gt != IGNORE) & _roi(gt.shape, roi)
    pos = (gt == FG) & valid
    neg = (gt == BG) & valid
    return ConfusionCounts(
        tp=int((pred & pos).sum()),
        fp=int((pred & neg).sum()),
        fn=int((~pred & pos).sum()),
        tn=int((~pred & neg).sum()),
    )


@dataclass
class FgQualityReport:
    precision: float
    recall: float
    fmeasure: float
    fpr: float
    fnr: float
    pwc: float


def _ratio(a, b):
    return a / b if b else 0.0


def fmeasure(precision, recall):
    return _ratio(2 * precision * recall, precision + recall)


def classification_metrics(cc):
    if cc.total == 0:
        raise UsageError("confusion counts are all zero")
    p = _ratio(cc.tp, cc.tp + cc.fp)
    r = _ratio(cc.tp, cc.tp + cc.fn)
    return FgQualityReport(
        precision=p,
        recall=r,
        fmeasure=fmeasure(p, r),
        fpr=_ratio(cc.fp, cc.fp + cc.tn),
        fnr=_ratio(cc.fn, cc.tp + cc.fn),
        pwc=100.0 * (cc.fn + cc.fp) / cc.total,
    )


def aggregate(reports, groups=None):
    """Unweighted mean per group, then the unweighted mean of group means.

    ``reports`` are dataclass reports or plain dicts; ``groups`` gives one
    group label per report (default: one group). Returns an ordered dict with
    one entry per non-empty group plus ``"overall"``.
    """
    rows = [asdict(r) if not isinstance(r, dict) else dict(r) for r in reports]
    if not rows:
        raise UsageError("nothing to aggregate")
    if groups is None:
        groups = ["all"] * len(rows)
    if isinstance(groups, dict):
        labels = list(groups)
        members = {g: list(idx) for g, idx in groups.items()}
    else:
        if len(groups) != len(rows):
            raise UsageError("one group label per report is required")
        labels = list(OrderedDict.fromkeys(groups))
        members = {g: [i for i, x in enumerate(groups) if x == g] for g in labels}
    keys = list(rows[0])
    out = OrderedDict()
    for g in labels:
        if not members[g]:
            log.warning("group %r is empty and is left out of the summary", g)
            continue
        out[g] = {k: float(np.mean([rows[i][k] for i in members[g]])) for k in keys}
    out["overall"] = {k: float(np.mean([out[g][k] for g in out])) for k in keys}
    return out
