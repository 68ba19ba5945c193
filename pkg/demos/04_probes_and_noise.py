"""Evaluate what the latent factors encode, and how noise degrades them.

Trains a short desk model, exports per-factor latents, fits a logistic
probe (anomaly classification) and the small MLP (slice regression) on
each factor, and runs the input-noise AUC sweep.  The interesting signal:
the anomaly factor should beat the residual on classification, and the
slice factor should beat the anomaly factor on regression.

Run:  python3 demos/04_probes_and_noise.py
"""

import tempfile

from factorflow import data as dat
from factorflow import probes
from factorflow import training as tr
from factorflow.rng import Rng

corpus = dat.generate_corpus(Rng(0), count=1200, size=16)
config = tr.TrainConfig(
    n_scales=2, n_steps=4, hidden_width=32, batch_size=16,
    factor_widths=(3, 4, 1), learning_rate=1e-3, seed=0,
    epochs=100, max_steps=800, checkpoint_every=0, holdout_frac=0.05,
)
with tempfile.TemporaryDirectory() as run_dir:
    result = tr.train(config, corpus, run_dir, log_every=400)
model, spec = result.model, result.spec

eval_corpus = dat.generate_corpus(Rng(42), count=600, size=16)
reports = probes.factor_vs_residual_report(model, spec, eval_corpus, seed=0)
print(f"{'task':14s} {'features':12s} {'dim':>4s}  metrics")
for r in reports:
    metrics = ", ".join(f"{k}={v:.3f}" for k, v in sorted(r.metrics.items()))
    print(f"{r.task:14s} {r.feature_set:12s} {r.dim:4d}  {metrics}")

with tempfile.TemporaryDirectory() as d:
    probes.write_probe_report(f"{d}/probe_report.csv", reports)
    print("\nreport file head:")
    with open(f"{d}/probe_report.csv") as fh:
        for line in list(fh)[:4]:
            print(" ", line.rstrip())

print("\nnoise sweep (anomaly AUC vs input noise weight):")
table = probes.noise_auc_table(model, spec, eval_corpus,
                               weights=(0.0, 0.05, 0.1, 0.2, 0.3), seed=0)
for w, auc in table:
    print(f"  weight {w:4.2f}: AUC {auc:.3f}")
