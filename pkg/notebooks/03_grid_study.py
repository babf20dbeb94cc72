"""
Error across the workspace
==========================

The full command-line workflow: calibrate once at the centre, then record
the 20 cm pattern at seven offsets and compare mean errors. The simulated
tracker has a radial error that grows away from the calibration centre.
"""

import json
import tempfile
from pathlib import Path

from trackbench.cli import main
from trackbench.patterns import DISPLACEMENT_GRID

root = Path(tempfile.mkdtemp(prefix="trackbench-grid-"))
distortion = ["--noise-sigma", "0.0022", "--radial-gain", "1322", "--radial-deadband", "0.18",
              "--latency", "0.01", "--frame-rotvec", "0.05", "-0.1", "0.2"]

#%%
# Calibration on the 5 cm cube.
main(["generate", "--pattern", "A", "--kinds", "cube", "--repetitions", "2", "--seed", "7",
      *distortion, "--out", str(root / "cal")])
main(["calibrate", "--ref", str(root / "cal/cube_clean.csv"), "--test", str(root / "cal/cube_distorted.csv"),
      "--out", str(root / "cal")])
print(json.loads((root / "cal/calibration.json").read_text())["residual_row"])

#%%
# One session per robot placement.
ref, test, labels = [], [], []
for i, (label, offset) in enumerate(DISPLACEMENT_GRID):
    out = root / f"s{i}"
    main(["generate", "--pattern", "C", "--origin", *map(str, offset), "--seed", str(100 + i),
          *distortion, "--out", str(out)])
    for kind in ("cube", "circle"):
        ref.append(str(out / f"{kind}_clean.csv"))
        test.append(str(out / f"{kind}_distorted.csv"))
        labels.append(f"offset={label}")

#%%
# Analyse all sessions together and render the table.
main(["analyze", "--transform", str(root / "cal/transform.json"), "--ref", *ref, "--test", *test,
      "--labels", *labels, "--out", str(root / "analysis")])
main(["report", "--input", str(root / "analysis")])
