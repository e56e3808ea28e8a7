"""Check autograd gradients of the full loss against finite differences.

Run with ``python demos/gradient_check.py``. The numeric side is an
independent numpy evaluation of the loss; Gumbel noise and the resulting
joint partition are frozen so the loss is a smooth function of the weights.
"""

from reschunk import ModelConfig, grad_check

cfg = ModelConfig(J=4, D=3, T=12, p=12, F=8, n_chunks=3, encoder_hidden=8)
report = grad_check(cfg, tolerance=1e-4, eps=1e-5, max_entries=None)
print(report.summary())

# The harness catches a wrong gradient: scale one tensor's analytic gradient.
broken = grad_check(cfg, max_entries=8, corrupt={"fine.blocks.1.layers.2.W": 1.01})
print("corrupted tensors flagged:", broken.failed)
