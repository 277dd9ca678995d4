"""Command-line entry point: ``cdnmedal <subcommand> [flags]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
import argparse
import logging
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__, _accel
from .cdn_gm import build_cdn_gm, train_cdn_gm
from .errors import ConfigError, DataError, FormatError, TrainingError, UsageError
from .io import codecs, layouts
from .io.config import RunConfig
from .io.report import record
from .io.synth import SynthSpec, synth_generate
from .medal_net import build_medal_net, sample_training_pairs, segment, train_medal
from .metrics import aggregate, background_report, classification_metrics, confusion
from .nn import gradcheck, param_count
from .nn.serialize import load_weights, save_weights
from .pipeline import (background_stream, compute_background, process_sequence, reform_pixel_histories,
                       refresh_frames)
from .rng import SplitMix64

log = logging.getLogger("cdnmedal")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# flag name -> config key(s) it overrides
FLAG_KEYS = {
    "seed": ("seed", "cdn.seed", "medal.seed"),
    "T": ("cdn.T",),
    "hop": ("hop",),
    "epsilon": ("medal.epsilon",),
    "tau": ("tau",),
    "epochs": ("cdn.epochs", "medal.epochs"),
    "lr": ("cdn.lr", "medal.lr"),
    "threads": ("threads",),
    "out": ("out",),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="flat key = value run configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--hop", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")


def make_parser():
    parser = _Parser(prog="cdnmedal", description="Background reconstruction and foreground segmentation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic CDnet-style sequence")
    _common(p)
    p.add_argument("--H", type=int, default=128)
    p.add_argument("--W", type=int, default=128)
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--occupancy", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=4.0)
    p.add_argument("--objects", type=int, default=2)
    p.add_argument("--object-height", type=int, help="default: min(24, H / (2 * objects))")

    for name, hlp in (("train-bg", "train the background network on pixel histories of a sequence"),
                      ("extract-bg", "write background images on the refresh schedule"),
                      ("train-fg", "train the segmentation network on labelled frames"),
                      ("infer", "write masks, backgrounds and a per-frame report")):
        p = sub.add_parser(name, help=hlp)
        _common(p)
        p.add_argument("--data", help="sequence directory (overrides config 'data')")
        p.add_argument("--layout", choices=layouts.KINDS)

    p = sub.add_parser("eval-bg", help="score background images against ground truth")
    _common(p)
    p.add_argument("manifest", help="lines of: group sequence predicted.png groundtruth.png")

    p = sub.add_parser("eval-fg", help="score mask directories against CDnet ground truth")
    _common(p)
    p.add_argument("manifest", help="lines of: group sequence mask_dir cdnet_sequence_dir")

    p = sub.add_parser("gradcheck", help="finite-difference check of both networks")
    _common(p)

    p = sub.add_parser("bench", help="throughput of background refresh and segmentation")
    _common(p)
    p.add_argument("--H", type=int, default=240)
    p.add_argument("--W", type=int, default=320)
    p.add_argument("--frames", type=int, default=96)
    return parser


def resolve_config(args):
    cfg = RunConfig.load(args.config)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v.strip(), where="--set")
    for flag, keys in FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            for k in keys:
                cfg.set(k, val, where=f"--{flag}")
    for flag in ("data", "layout"):
        val = getattr(args, flag, None)
        if val is not None:
            cfg.set(flag, val, where=f"--{flag}")
    if cfg["threads"] < 1:
        raise UsageError("threads must be >= 1")
    return cfg


def _outdir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _layout(cfg):
    if not cfg["data"]:
        raise UsageError("no sequence given (--data or config key 'data')")
    return layouts.DatasetLayout(cfg["layout"], cfg["data"])


def _frames(cfg):
    frames, idx = layouts.load_frames(_layout(cfg))
    arr = np.stack(frames)
    if arr.ndim == 3:
        arr = arr[..., None]
    return arr, idx


def _load_nets(cfg, H, W, c):
    cdn_cfg = cfg.cdn_config(c=c)
    cdn = build_cdn_gm(cdn_cfg)
    if cfg["cdn_weights"]:
        cdn = load_weights(cfg["cdn_weights"], cdn)
    med_cfg = cfg.medal_config(H, W, c)
    medal = build_medal_net(med_cfg)
    if cfg["medal_weights"]:
        medal = load_weights(cfg["medal_weights"], medal)
    return cdn, cdn_cfg, medal, med_cfg


def sample_histories(frames, T, n, seed):
    """``n`` random pixel histories drawn from random ``T``-frame windows."""
    F = len(frames)
    if F < T:
        raise UsageError(f"sequence has {F} frames, fewer than T={T}")
    rng = SplitMix64(seed).spawn(0x415)
    starts = rng.integers(n, F - T + 1)
    H, W = frames.shape[1:3]
    pix = rng.integers(n, H * W)
    out = np.empty((n, T, frames.shape[3]), np.float32)
    for s in np.unique(starts):
        sel = np.flatnonzero(starts == s)
        out[sel] = reform_pixel_histories(frames[s:s + T])[pix[sel]]
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg):
    oh = args.object_height or min(24, max(1, args.H // (2 * max(args.objects, 1))))
    try:
        spec = SynthSpec(H=args.H, W=args.W, frames=args.frames, occupancy=args.occupancy, noise_sd=args.noise,
                         objects=args.objects, object_height=oh, seed=cfg["seed"])
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    scene = synth_generate(spec)
    out = _outdir(cfg)
    for i, (f, m) in enumerate(zip(scene.frames, scene.masks), 1):
        codecs.write_image(out / "input" / f"in{i:06d}.png", f)
        codecs.write_image(out / "groundtruth" / f"gt{i:06d}.png", (m * 255).astype(np.uint8))
    codecs.write_image(out / "GT" / "background.png", scene.background)
    codecs.write_text(out / "temporalROI.txt", f"1 {spec.frames}\n")
    print(f"wrote {spec.frames} frames to {out}")
    return EXIT_OK


def cmd_train_bg(args, cfg):
    frames, _ = _frames(cfg)
    cdn_cfg = cfg.cdn_config(c=frames.shape[3])
    hist = sample_histories(frames, cdn_cfg.T, cfg["train_histories"], cfg["seed"])
    net = build_cdn_gm(cdn_cfg)
    net, tlog = train_cdn_gm(net, hist, cdn_cfg)
    path = _outdir(cfg) / "cdn_gm.cdnm"
    save_weights(net, path)
    print(record("train", network="cdn_gm", epochs=cdn_cfg.epochs, final_loss=tlog.final_loss,
                 params=param_count(net), weights=str(path)))
    return EXIT_OK


def cmd_extract_bg(args, cfg):
    frames, idx = _frames(cfg)
    H, W, c = frames.shape[1:]
    cdn, cdn_cfg, _, _ = _load_nets(cfg, H, W, c)
    out = _outdir(cfg)
    last = None
    for i, bg, refreshed in background_stream(frames, cdn, cdn_cfg, cfg.hop_or_T):
        if refreshed:
            codecs.write_image(out / "backgrounds" / f"bg{idx[i]:06d}.png", bg)
            last = bg
    codecs.write_image(out / "background.png", last)
    print(f"{len(refresh_frames(len(frames), cdn_cfg.T, cfg.hop_or_T))} background(s) written to {out}")
    return EXIT_OK


def cmd_train_fg(args, cfg):
    layout = _layout(cfg)
    frames, idx = _frames(cfg)
    H, W, c = frames.shape[1:]
    cdn, cdn_cfg, medal, med_cfg = _load_nets(cfg, H, W, c)
    gts = {}
    for pos, i in enumerate(idx):
        try:
            gts[pos] = layouts.load_cdnet_groundtruth(layout, i)
        except DataError:
            continue
    if not gts:
        raise DataError(f"{layout.root}: no ground-truth frames found")
    backgrounds = np.empty_like(frames)
    for i, bg, _ in background_stream(frames, cdn, cdn_cfg, cfg.hop_or_T):
        backgrounds[i] = bg
    pairs = sample_training_pairs(frames, gts, min(cfg["train_pairs"], len(gts)), backgrounds)
    medal, tlog = train_medal(medal, pairs, med_cfg)
    path = _outdir(cfg) / "medal_net.cdnm"
    save_weights(medal, path)
    print(record("train", network="medal_net", epochs=med_cfg.epochs,
                 final_loss=tlog.epoch_losses[-1] if tlog.epoch_losses else None,
                 params=param_count(medal), weights=str(path)))
    return EXIT_OK


def _fg_fields(cc):
    if cc.tp + cc.fp + cc.fn + cc.tn == 0:
        return {}
    r = classification_metrics(cc)
    return dict(precision=r.precision, recall=r.recall, fmeasure=r.fmeasure, fpr=r.fpr, fnr=r.fnr, pwc=r.pwc)


def cmd_infer(args, cfg):
    layout = _layout(cfg)
    frames, idx = _frames(cfg)
    H, W, c = frames.shape[1:]
    cdn, cdn_cfg, medal, med_cfg = _load_nets(cfg, H, W, c)
    masks, backgrounds = process_sequence(frames, cdn, medal, cdn_cfg, med_cfg.epsilon, cfg.hop_or_T)
    refreshed = set(refresh_frames(len(frames), cdn_cfg.T, cfg.hop_or_T))
    out = _outdir(cfg)
    lines = []
    seq = cfg["sequence"] or layout.root.name
    for pos, i in enumerate(idx):
        codecs.write_image(out / "masks" / f"bin{i:06d}.png", (masks[pos] * 255).astype(np.uint8))
        codecs.write_image(out / "backgrounds" / f"bg{i:06d}.png", backgrounds[pos])
        extra = {}
        if layout.kind == "cdnet":
            try:
                gt = layouts.load_cdnet_groundtruth(layout, i)
                extra = _fg_fields(confusion(masks[pos], gt))
            except DataError:
                pass
        lines.append(record("frame", sequence=seq, index=i, refreshed=pos in refreshed,
                            fg_pixels=int(masks[pos].sum()), **extra))
    codecs.write_text(out / "report.jsonl", "\n".join(lines) + "\n")
    print(f"{len(masks)} masks written to {out}")
    return EXIT_OK


def _manifest(path):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{p}: manifest not found")
    rows = []
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise UsageError(f"{p}:{n}: expected 4 fields, got {len(parts)}")
        rows.append(parts)
    if not rows:
        raise UsageError(f"{p}: empty manifest")
    return rows


def _emit_summary(kind, reports, groups, names, out):
    lines = [record(kind, sequence=s, group=g, **r) for s, g, r in zip(names, groups, reports)]
    for g, vals in aggregate(reports, groups).items():
        lines.append(record(kind, sequence=None, group=g, **vals))
    text = "\n".join(lines) + "\n"
    codecs.write_text(out / f"{kind}.jsonl", text)
    sys.stdout.write(text)


def cmd_eval_bg(args, cfg):
    reports, groups, names = [], [], []
    for group, seq, pred, gt in _manifest(args.manifest):
        pimg, gimg = codecs.read_image(pred), codecs.read_image(gt)
        if pimg.shape != gimg.shape:
            raise DataError(f"{seq}: predicted {pimg.shape} and ground truth {gimg.shape} differ")
        r = background_report(gimg, pimg, tau=cfg["tau"])
        reports.append({k: v for k, v in vars(r).items()})
        groups.append(group)
        names.append(seq)
    _emit_summary("bg_eval", reports, groups, names, _outdir(cfg))
    return EXIT_OK


def cmd_eval_fg(args, cfg):
    reports, groups, names = [], [], []
    for group, seq, mask_dir, root in _manifest(args.manifest):
        layout = layouts.DatasetLayout("cdnet", root)
        masks = layouts.indexed_files(mask_dir)
        total = None
        for i, path in masks.items():
            try:
                gt = layouts.load_cdnet_groundtruth(layout, i)
            except DataError:
                continue
            m = codecs.read_image(path)
            cc = confusion((m if m.ndim == 2 else m[..., 0]) > 127, gt)
            total = cc if total is None else total + cc
        if total is None or total.total == 0:
            raise DataError(f"{seq}: no evaluable ground-truth pixels")
        reports.append(_fg_fields(total))
        groups.append(group)
        names.append(seq)
    _emit_summary("fg_eval", reports, groups, names, _outdir(cfg))
    return EXIT_OK


def run_gradcheck(seed=0, n_coords=100):
    """Finite-difference check of both networks at small input sizes; returns ``{name: GradCheckResult}``."""
    from .cdn_gm import CdnGmConfig, head_gradients
    from .medal_net import MedalConfig, bce_grad, bce_loss

    results = {}
    ccfg = CdnGmConfig(T=16, seed=seed)
    cdn = build_cdn_gm(ccfg).astype(np.float64)
    x = SplitMix64(seed).uniform(4 * 16 * 3).reshape(4, 16, 3)

    def cdn_loss(out):
        loss, g = head_gradients(out, x, ccfg)
        return float(loss.sum()), g

    results["cdn_gm"] = gradcheck.check_network(cdn, x, cdn_loss, n_coords=n_coords, seed=seed)

    mcfg = MedalConfig(H=8, W=8, seed=seed)
    med = build_medal_net(mcfg).astype(np.float64)
    r = SplitMix64(seed + 1)
    xm = r.uniform(2 * 8 * 8 * 6).reshape(2, 8, 8, 6)
    target = (r.uniform(2 * 8 * 8) < 0.5).reshape(2, 8, 8)

    def med_loss(out):
        return bce_loss(out, target, mcfg.clamp_delta), bce_grad(out, target, mcfg.clamp_delta)

    results["medal_net"] = gradcheck.check_network(med, xm, med_loss, n_coords=n_coords, seed=seed)
    return results


def cmd_gradcheck(args, cfg):
    ok = True
    for name, res in run_gradcheck(cfg["seed"]).items():
        print(record("gradcheck", network=name, max_rel_error=res.max_rel_error, checked=res.checked,
                     skipped=res.skipped, ok=res.ok))
        ok &= res.ok
    return EXIT_OK if ok else EXIT_NUMERIC


def run_bench(H=240, W=320, frames=96, cfg=None, seed=0):
    """Wall-clock throughput on a synthetic sequence with freshly initialised networks."""
    cfg = cfg or RunConfig.load()
    spec = SynthSpec(H=H, W=W, frames=frames, object_height=min(24, H // 4), seed=seed)
    scene = synth_generate(spec)
    cdn, cdn_cfg, medal, med_cfg = _load_nets(cfg, H, W, 3)
    T = cdn_cfg.T
    if frames < T:
        raise UsageError(f"bench needs at least T={T} frames")
    compute_background(cdn, cdn_cfg, scene.frames[:T])       # warm-up (JIT compile)
    segment(medal, scene.frames[:1], scene.frames[:1])
    t0 = time.perf_counter()
    bg = compute_background(cdn, cdn_cfg, scene.frames[:T])
    t_bg = time.perf_counter() - t0
    bgs = np.broadcast_to(bg, scene.frames.shape)
    t0 = time.perf_counter()
    segment(medal, scene.frames, bgs, med_cfg.epsilon)
    t_seg = time.perf_counter() - t0
    t0 = time.perf_counter()
    process_sequence(scene.frames, cdn, medal, cdn_cfg, med_cfg.epsilon, cfg.hop_or_T)
    t_all = time.perf_counter() - t0
    return dict(H=H, W=W, frames=frames, pixels=H * W, threads=cfg["threads"], backend=_accel.backend_name(),
                # one refresh serves T frames at the default hop
                background_fps=T / t_bg, segmentation_fps=frames / t_seg, end_to_end_fps=frames / t_all)


def cmd_bench(args, cfg):
    rep = run_bench(args.H, args.W, args.frames, cfg, cfg["seed"])
    line = record("bench", **rep)
    codecs.write_text(_outdir(cfg) / "bench.jsonl", line + "\n")
    print(line)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "train-bg": cmd_train_bg, "extract-bg": cmd_extract_bg, "train-fg": cmd_train_fg,
    "infer": cmd_infer, "eval-bg": cmd_eval_bg, "eval-fg": cmd_eval_fg, "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def cli_main(argv=None):
    try:
        args = make_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        log.info("run config:\n%s", cfg.dumps())
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
