"""Shared argument handling for the experiment runners."""

import argparse
import os
import sys
import time

from qrhmm.cli import run


def parser(description: str, default_out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out", default=default_out, help="output directory")
    p.add_argument("--paths", type=int, default=None, help="backtest paths (default: the config value)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--quick", action="store_true", help="reduced sizes for a smoke run")
    return p


def step(label: str, argv) -> None:
    t0 = time.perf_counter()
    print(f"== {label}", flush=True)
    code = run([str(a) for a in argv])
    if code != 0:
        sys.exit(code)
    print(f"   done in {time.perf_counter() - t0:.1f}s", flush=True)


def common(args, config: str, sub: str):
    return ["--config", config, "--seed", args.seed, "--workers", args.workers, "--out", os.path.join(args.out, sub)]
