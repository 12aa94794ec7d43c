"""The whole experiment through the command-line driver, at a reduced size.

Run: python3 demos/06_pipeline.py  (under a minute)
The full desk-scale run is ``robust-surrogate all --seed 2024 --out run``.
"""

import json
import tempfile
from pathlib import Path

from robust_surrogate.cli import main

small = {
    "seed": 1,
    "data": {"n_train": 128, "n_test": 64},
    "train": {"epochs": 20},
    "uq": {"n_points": 20, "n_dirs": 20},
}

with tempfile.TemporaryDirectory() as tmp:
    cfg = Path(tmp) / "config.json"
    cfg.write_text(json.dumps(small))
    out = str(Path(tmp) / "run")
    for args in (["gen"], ["train", "--mode", "ori"], ["train", "--mode", "adv"], ["eval"], ["uq"]):
        code = main(args + ["--config", str(cfg), "--out", out])
        print(" ".join(args), "-> exit", code)
    print((Path(out) / "reports" / "table1_mse.csv").read_text())
    print((Path(out) / "reports" / "table2_pvalues.csv").read_text())
