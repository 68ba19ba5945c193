"""Train a small model on the synthetic corpus with the pair objective.

Generates a few hundred images with two generative factors (anomaly blob,
slice parameter), samples factor-sharing pairs, and runs a short training
loop.  Prints the loss breakdown as it goes and the held-out bits/dim at
epoch ends.  A full desk run uses more images and steps; see README.

Run:  python3 demos/02_pair_training.py
"""

import tempfile

import numpy as np

from factorflow import data as dat
from factorflow import training as tr
from factorflow.rng import Rng

corpus = dat.generate_corpus(Rng(0), count=600, size=16)
healthy = int((corpus.anomaly == 0).sum())
print(f"corpus: {len(corpus)} images, {healthy} healthy / {len(corpus) - healthy} anomalous")

# the pairing rule in action: both sides of a pair agree on the shared factor
batch = dat.sample_pairs(Rng(1), corpus, batch_size=6, factor_index=0)
print("anomaly bits, side a:", corpus.anomaly[batch.index_a])
print("anomaly bits, side b:", corpus.anomaly[batch.index_b])

config = tr.TrainConfig(
    n_scales=2, n_steps=4, hidden_width=32, batch_size=16,
    factor_widths=(3, 4, 1), learning_rate=1e-3, seed=0,
    epochs=100, max_steps=400, checkpoint_every=0, holdout_frac=0.1,
)

with tempfile.TemporaryDirectory() as out_dir:
    result = tr.train(config, corpus, out_dir, log_every=100)
    totals = [float(row.split(",")[2]) for row in result.metrics]
    print(f"loss: first 20 steps {np.mean(totals[:20]):.1f} -> "
          f"last 20 steps {np.mean(totals[-20:]):.1f}")
    bpd = [row.split(",")[6] for row in result.metrics if row.split(",")[6]]
    print("held-out bits/dim by epoch:", ", ".join(f"{float(b):.3f}" for b in bpd))
    print("checkpoint written to", result.checkpoint_path)
