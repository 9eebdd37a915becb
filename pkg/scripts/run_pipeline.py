"""synth -> oracle -> train -> eval through the command line, for one mode.

    python3 scripts/run_pipeline.py --work runs/demo --mode visual
"""

import argparse
import sys
import time
from pathlib import Path

from vsezsl.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "synthetic_default.json"


def run(work, mode, config, seed, threads, setting):
    work = Path(work)
    cfg = ["--config", str(config), "--threads", str(threads)]
    data, oracle, model = work / "data", work / "oracle.vseck", work / f"{mode}.vseck"
    steps = [
        ["synth", "--config", str(config), "--out", str(data), "--seed", str(seed)],
        ["oracle", *cfg, "--data", str(data), "--out", str(oracle), "--seed", str(seed + 1),
         "--emit-codebook", str(work / "codebook_oracle.vsef")],
        ["train", *cfg, "--data", str(data), "--mode", mode, "--out", str(model), "--seed", str(seed + 2)]
        + ([] if mode == "semantic" else ["--oracle", str(oracle)]),
        ["eval", *cfg, "--data", str(data), "--model", str(model), "--setting", setting,
         "--report", str(work / f"report_{mode}_{setting}.csv")]
        + ([] if mode == "semantic" else ["--oracle", str(oracle)]),
    ]
    for argv in steps:
        t0 = time.perf_counter()
        code = main(argv)
        print(f"[{argv[0]}] exit {code} in {time.perf_counter() - t0:.1f} s")
        if code:
            return code
    return 0


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--work", default="runs/pipeline", help="output directory")
    p.add_argument("--mode", default="visual", choices=["semantic", "visual", "visual-flat", "baseline"])
    p.add_argument("--config", default=str(CONFIG), help="JSON run configuration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--setting", default="gzsl", choices=["zsl", "gzsl"])
    return p.parse_args(argv)


if __name__ == "__main__":
    a = parse_args()
    sys.exit(run(a.work, a.mode, a.config, a.seed, a.threads, a.setting))
