"""A miniature ablation sweep: every variant, two seeds, printed as mean±std per metric.

Run: python demos/04_ablation.py
Takes under a minute; the acceptance test runs the real BM-encoder comparison.
"""

import tempfile
from pathlib import Path

from mebm.cli import RunConfig, ablation_table, main, run_ablation

work = Path(tempfile.mkdtemp(prefix="mebm-ablate-"))
main(["synth", "--sessions", "2", "--events-per-class", "8", "--snr", "1", "--out", str(work)])
cfg = RunConfig.from_dict({
    "manifest": str(work / "manifest.json"),
    "model": {"d": 16, "n_multiscale_blocks": 2, "n_bm_blocks": 1},
    "train": {"epochs": 3, "batch_size": 64, "samples_per_epoch": 512},
    "seeds": [0, 1],
})
print(ablation_table(run_ablation(cfg)))
