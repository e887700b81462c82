"""The loss family and its degeneracies, on a toy label map.

Run: python demos/02_loss_family.py
"""

import numpy as np

from edgekit.losses import dynamic_focal, dynamic_weight, focal, threshold_gt, wce
from edgekit.tensor import Tensor

rng = np.random.default_rng(0)

# Fractional ground truth: the consensus of several annotators. Pixels
# above the threshold are edges, exact zeros are non-edges, and the
# disputed band in between is ignored by every loss.
gt = np.zeros((12, 12), dtype=np.float32)
gt[5, :] = 1.0          # everyone marks this line
gt[6, 3:9] = 0.2        # marked by a lone annotator: disputed, ignored
labels = threshold_gt(gt, gamma_gt=0.3)
print(f"edges={labels.n_edge} non-edges={labels.n_nonedge} ignored={labels.n_ignore}")

pred = Tensor(rng.uniform(0.05, 0.95, size=(12, 12)))

print(f"weighted CE:      {float(wce(pred, labels)):.4f}")
print(f"focal (gamma=1):  {float(focal(pred, labels, gamma=1.0)):.4f}")

# The dynamic variant trusts the network more as training progresses:
# at epoch 0 it IS weighted CE, and for large epochs it approaches focal.
for epoch in (0, 1, 3, 10, 100):
    value = float(dynamic_focal(pred, labels, gamma=1.0, mu=0.5, epoch=epoch))
    print(f"dynamic focal, epoch {epoch:>3}: {value:.4f}")

assert float(dynamic_focal(pred, labels, gamma=1.0, mu=0.5, epoch=0)) == float(wce(pred, labels))

# Per-pixel view of the schedule on one edge pixel.
p = np.array([[0.8]])
one_edge = threshold_gt(np.array([[1.0]], dtype=np.float32), 0.3)
for epoch in (0, 1, 2, 5):
    w = dynamic_weight(p, one_edge, gamma=1.0, mu=0.5, epoch=epoch)[0, 0]
    print(f"epoch {epoch}: weight on an edge pixel at p=0.8 -> {w:.4f}")
