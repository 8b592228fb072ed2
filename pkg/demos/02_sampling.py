"""How many windows get averaged per sample, and what averaging buys.

Run: python demos/02_sampling.py
"""

import numpy as np

from mebm.data import WINDOW, SynthSpec, session_normalize, synth_session
from mebm.rng import RngStream
from mebm.sampling import WindowPool, build_validation_set, make_training_sample, n_prime_train, n_prime_val, sample_stream

rng = RngStream(0)
print(f"{'n':>6}{'val k':>8}{'train k (5 draws)':>26}")
for n in (3, 10, 30, 49.5, 50, 60, 98, 100, 250):
    draws = [n_prime_train(n, rng) for _ in range(5)]
    print(f"{n:>6}{n_prime_val(n):>8}{str(draws):>26}")

# Averaging k noisy copies of the same evoked response.
spec = SynthSpec(n_sessions=1, events_per_class_per_session=64, snr=0.5, seed=1)
noisy = synth_session(spec, 0)
clean = synth_session(SynthSpec(n_sessions=1, events_per_class_per_session=64, snr=float("inf"), seed=1), 0)
onsets = noisy.class_onsets(0)
template = clean.signal[:, onsets[0]:onsets[0] + WINDOW].astype(np.float64)
print()
for k in (1, 4, 16, 64):
    avg = np.mean([noisy.signal[:, t:t + WINDOW] for t in onsets[:k]], axis=0)
    snr = np.sqrt(np.mean(template**2) / np.mean((avg - template) ** 2))
    print(f"average of {k:>2} windows: snr {snr:.2f}")

# Validation: 8 jitter-free samples per class; training: one class per stream, jittered windows.
pool = WindowPool([session_normalize(synth_session(SynthSpec(2, 12, 2.0, seed=2), s)) for s in range(2)])
val = build_validation_set(pool, seed=0)
print(f"\nvalidation samples: {len(val.samples)}, k = {val.samples[0].n_averaged}")
s = make_training_sample(pool, sample_stream(seed=0, epoch=0, index=0))
print(f"training sample: class {s.phoneme_id}, k = {s.n_averaged}, offsets {s.offsets[:8].tolist()} ...")
