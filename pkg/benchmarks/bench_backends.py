"""Compare the numba and pure-numpy backends.

Each backend runs in its own interpreter because the choice is made at import
time from CDNMEDAL_PURE_NUMPY. Prints one row per workload with the median
wall time of each backend and the speed-up.

    python benchmarks/bench_backends.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from cdnmedal import _accel
from cdnmedal.cdn_gm import CdnGmConfig, build_cdn_gm, head_gradients, loss_and_grad as cdn_step
from cdnmedal.cli import run_bench
from cdnmedal.medal_net import MedalConfig, build_medal_net, loss_and_grad as medal_step
from cdnmedal.nn import forward, kernels
from cdnmedal.rng import SplitMix64

repeat = int(sys.argv[1])
r = SplitMix64(0)
x = r.uniform(8 * 64 * 64 * 16).reshape(8, 64, 64, 16).astype(np.float32)
w = r.uniform(3 * 3 * 16 * 16, -.1, .1).reshape(3, 3, 16, 16).astype(np.float32)
dw = r.uniform(3 * 3 * 16, -.1, .1).reshape(3, 3, 16).astype(np.float32)
b = np.zeros(16, np.float32)
dy = kernels.conv2d_forward(x, w, b, (1, 1))
ccfg = CdnGmConfig()
cdn = build_cdn_gm(ccfg)
hist = r.uniform(4096 * 96 * 3).reshape(4096, 96, 3).astype(np.float32)
raw = forward(cdn, hist)[0]
mcfg = MedalConfig()
med = build_medal_net(mcfg)
mx = r.uniform(8 * 64 * 64 * 6).reshape(8, 64, 64, 6).astype(np.float32)
mt = (r.uniform(8 * 64 * 64) < .5).reshape(8, 64, 64).astype(np.float32)
mv = np.ones_like(mt, dtype=bool)

jobs = {
    # dense conv runs through BLAS in both backends
    "conv2d fwd 8x64x64x16": lambda: kernels.conv2d_forward(x, w, b, (1, 1)),
    "conv2d bwd 8x64x64x16": lambda: kernels.conv2d_backward(x, w, dy, (1, 1)),
    "dwconv2d fwd 8x64x64x16": lambda: kernels.dwconv2d_forward(x, dw, b, (1, 1)),
    "dwconv2d bwd 8x64x64x16": lambda: kernels.dwconv2d_backward(x, dw, dy, (1, 1)),
    "maxpool fwd 8x64x64x16": lambda: kernels.maxpool2_forward(x),
    "cdn head grads 4096": lambda: head_gradients(raw, hist, ccfg),
    "cdn forward 4096": lambda: forward(cdn, hist),
    "cdn train step 256": lambda: cdn_step(cdn, hist[:256], ccfg),
    "medal train step 8x64x64": lambda: medal_step(med, mx, mt, mv, mcfg),
}
out = {"backend": _accel.backend_name(), "times": {}}
for name, fn in jobs.items():
    fn()  # warm-up / JIT compile
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    out["times"][name] = float(np.median(ts))
rep = run_bench(H=240, W=320, frames=96)
out["times"]["end-to-end 96 frames 320x240"] = rep["frames"] / rep["end_to_end_fps"]
out["fps"] = rep["end_to_end_fps"]
print(json.dumps(out))
"""


def run(pure, repeat):
    env = dict(os.environ)
    env.pop("CDNMEDAL_PURE_NUMPY", None)
    if pure:
        env["CDNMEDAL_PURE_NUMPY"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True)
    if res.returncode:
        sys.exit(res.stderr)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the raw timings here")
    args = ap.parse_args()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    print(f"{'workload':34s} {fast['backend']:>10s} {slow['backend']:>10s} {'speed-up':>9s}")
    for name, t_fast in fast["times"].items():
        t_slow = slow["times"][name]
        print(f"{name:34s} {t_fast * 1e3:8.1f}ms {t_slow * 1e3:8.1f}ms {t_slow / t_fast:8.2f}x")
    print(f"end-to-end fps: {fast['backend']} {fast['fps']:.1f}, {slow['backend']} {slow['fps']:.1f}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"numba": fast, "numpy": slow}, f, indent=1)


if __name__ == "__main__":
    main()
