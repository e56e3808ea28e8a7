"""Train a small model on synthetic motion and compare it with zero velocity.

Run with ``python demos/train_and_evaluate.py [outdir]``. Takes under a minute
on a laptop CPU and writes ``table.md``, ``prediction.svg`` and a checkpoint.
"""

import sys
from pathlib import Path

import numpy as np

from reschunk import (HorizonSpec, ModelConfig, OptimizerConfig, ResultsTable, WindowDataset,
                      WindowingConfig, emit_table, load_checkpoint, mpjpe_curve, plot_prediction,
                      save_checkpoint, synth_dataset, train, zero_velocity_baseline)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)
fps = 25.0

# Twelve 6-second sequences of an 8-joint chain whose joints move in 2 groups.
seqs = synth_dataset(12, 8, fps, 6.0, np.random.default_rng(0))
# 48-frame crops: 24 input frames, 24 frames to predict
windowing = WindowingConfig(window_seconds=3.0, stride_frames=10, crop_seconds=48 / fps)
train_set = WindowDataset(seqs[:8], windowing)
val_set = WindowDataset(seqs[8:10], windowing)
test_set = WindowDataset(seqs[10:], windowing)

cfg = ModelConfig(J=8, D=3, T=24, p=24, n_chunks=6, F=32, encoder_hidden=64)
result = train(train_set, val_set, cfg, OptimizerConfig(batch_size=16, max_steps=300), seed=0)
print(f"{result.steps} steps, best validation epoch {result.best_epoch}")
print("last step:", result.log_lines[-2])

# MPJPE at the standard horizons; 1000 ms clamps to the last predicted frame.
horizons = HorizonSpec(fps)
frames = horizons.frame_indices(cfg.p)
samples = test_set.eval_samples()
x0 = np.stack([s.x0 for s in samples])
y0 = np.stack([s.y0 for s in samples])
pred, partitions = result.model.predict(x0)
table = ResultsTable(horizons.horizons_ms)
table.add("ReSChunk", "synthetic", mpjpe_curve(pred, y0, test_set.skeleton, frames).mean(0))
table.add("zero-velocity", "synthetic",
          mpjpe_curve(zero_velocity_baseline(x0, cfg.p), y0, test_set.skeleton, frames).mean(0))
text = emit_table(table, "markdown")
print(text)
(out / "table.md").write_text(text)

# Checkpoints reload bit-exactly.
save_checkpoint(result.model, out / "model.ckpt")
loaded, header = load_checkpoint(out / "model.ckpt")
assert loaded.predict(x0)[0].tobytes() == pred.tobytes()
print(f"checkpoint: {header['parameter_count']} parameters")

# Ground truth in green, prediction in red, at 3 future frames.
svg = plot_prediction(y0[0], pred[0], test_set.skeleton, [1, 11, 23])
(out / "prediction.svg").write_text(svg)
print(f"wrote {out / 'table.md'}, {out / 'prediction.svg'}")
