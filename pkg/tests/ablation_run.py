"""Desk-scale ablation shared by the acceptance suite and manual runs.

Checkpoints are cached under $SDWARP_ABLATION_DIR (default artifacts/ablation)
and reused when their stored config matches, so a finished ablation costs
only evaluation time on later runs.
"""

import logging
import os
import sys
from pathlib import Path

from sdwarp.config import RunConfig
from sdwarp.data import Dataset, mixed_dataset
from sdwarp.pipeline import run_ablation

ROOT = Path(__file__).resolve().parent.parent
COUNTS = {"long_sleeve": 64, "tucked_in": 64}
RESOLUTION = (96, 64)
ITERATIONS = 2000
SEEDS = (0, 1, 2)


def ablation_dir() -> Path:
    return Path(os.environ.get("SDWARP_ABLATION_DIR", ROOT / "artifacts" / "ablation"))


def ablation_rows() -> list[dict]:
    ds = Dataset(mixed_dataset(COUNTS, 0, RESOLUTION))
    base = RunConfig(height=RESOLUTION[0], width=RESOLUTION[1], iterations=ITERATIONS, log_every=50)
    return run_ablation(ds, ablation_dir(), seeds=SEEDS, base=base)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, stream=sys.stdout)
    for row in ablation_rows():
        print(row, flush=True)
