"""Synthesize a small dataset, train a reduced model, reload the best checkpoint.

Run: python demos/03_quickstart.py [workdir]
Takes under a minute on one core.
"""

import sys
import tempfile
from pathlib import Path

from mebm.cli import main
from mebm.config import ModelConfig
from mebm.data import PHONEMES
from mebm.model import load_model
from mebm.training import TrainConfig, evaluate, fit

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="mebm-"))
main(["synth", "--sessions", "3", "--events-per-class", "10", "--snr", "4", "--out", str(work / "data")])

cfg = ModelConfig(d=32, n_multiscale_blocks=2, n_bm_blocks=1)
train = TrainConfig(epochs=6, batch_size=64, samples_per_epoch=1024, seed=0)
res = fit(work / "data" / "manifest.json", cfg, train, out_dir=work / "run",
          on_epoch=lambda r: print(f"epoch {r.epoch}: loss {r.train_loss:.3f}, f1 {r.val_f1_macro:.3f}"))
print(res.report.table(PHONEMES))

model = load_model(work / "run" / "checkpoint.mebm", cfg)
print(f"reloaded best epoch {res.best_epoch}: f1 {evaluate(model, res.validation).f1_macro:.4f}")
print(f"outputs in {work / 'run'}")
