"""Joint grouping: from edge probabilities to a coarse skeleton.

Run with ``python demos/grouping.py``. Builds a correlation matrix by hand,
clusters it, and shows what the coarse branch sees for a synthetic sequence
whose joints move in two planted groups.
"""

import numpy as np

from reschunk import (EdgeEncoder, JointPartition, coarsen, correlation_matrix, encode_edges,
                      group_joints, synth_dataset)
from reschunk.edge_inference import agglomerate

# Edge probabilities z[i, j, 0] ("connected") for four joints: {0, 1} and {2, 3}
# are strongly linked, the cross pairs are not.
z = np.zeros((4, 4, 2))
z[..., 0] = [[1.0, 0.9, 0.1, 0.2],
             [0.8, 1.0, 0.0, 0.1],
             [0.2, 0.1, 1.0, 0.7],
             [0.1, 0.3, 0.9, 1.0]]
z[..., 1] = 1 - z[..., 0]
C = correlation_matrix(z)
print("symmetrized correlation matrix\n", C)

partition, merges = agglomerate(C, threshold=0.5)
print("merges (lowest member a, lowest member b, average distance):",
      [(a, b, round(float(d), 4)) for a, b, d in merges])
print("groups:", partition.groups)

# On motion data the grouping comes from the edge encoder. An untrained encoder
# knows nothing about the planted structure.
seq = synth_dataset(1, 8, 25.0, 2.0, np.random.default_rng(0))[0]
x0 = seq.frames[:24]
encoder = EdgeEncoder(8, 3, 24, hidden=32, rng=np.random.default_rng(1))
q = encode_edges(x0, encoder).probabilities.detach().numpy()
print("planted groups:", seq.metadata["planted_groups"])
print("untrained encoder grouping:", group_joints(correlation_matrix(q)).group_id)

# The coarse sequence replaces each joint by its group mean.
planted = JointPartition(seq.metadata["planted_groups"])
x1 = coarsen(x0, planted, 3)
print("joints per group:", [len(g) for g in planted.groups],
      "| distinct coarse trajectories:", len({x1[:, 3 * j:3 * j + 3].tobytes() for j in range(8)}))
