"""Line-delimited JSON records with a fixed field order per record type."""
import json
import math

FIELDS = {
    "frame": ("type", "sequence", "index", "refreshed", "fg_pixels", "precision", "recall",
              "fmeasure", "fpr", "fnr", "pwc"),
    "bg_eval": ("type", "sequence", "group", "age", "peps", "pceps", "psnr", "ms_ssim", "cqm"),
    "fg_eval": ("type", "sequence", "group", "precision", "recall", "fmeasure", "fpr", "fnr", "pwc"),
    "bench": ("type", "H", "W", "frames", "pixels", "threads", "backend", "background_fps",
              "segmentation_fps", "end_to_end_fps"),
    "train": ("type", "network", "epochs", "final_loss", "params", "weights"),
    "gradcheck": ("type", "network", "max_rel_error", "checked", "skipped", "ok"),
}


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if hasattr(v, "item"):
        return _clean(v.item())
    return v


def record(kind, **values):
    """One JSON line; keys follow ``FIELDS[kind]``, missing keys become null."""
    fields = FIELDS[kind]
    extra = set(values) - set(fields)
    if extra:
        raise KeyError(f"{kind} record has no fields {sorted(extra)}")
    values["type"] = kind
    return json.dumps({k: _clean(values.get(k)) for k in fields}, separators=(", ", ": "))
