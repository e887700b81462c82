"""End to end: synthesize data, train the tiny network, run the benchmark.

A scaled-down version of the acceptance run (16 train images, 8 epochs,
about 20 seconds). Run: python demos/03_train_and_benchmark.py
"""

import numpy as np

from edgekit.bench import evaluate_dataset, nms_thin
from edgekit.data import synth_dataset
from edgekit.losses import LossConfig
from edgekit.model import EdgeNet, ModelConfig
from edgekit.tensor import Tensor
from edgekit.train import TrainConfig, train

train_set = synth_dataset(seed=10, count=16, size=64)
test_set = synth_dataset(seed=11, count=8, size=64)
print(f"{len(train_set)} train / {len(test_set)} test images, "
      f"{train_set[0].gt_maps[0].sum():.0f} boundary px in the first image")

model = EdgeNet(ModelConfig.from_preset("tiny"), seed=1)
counts = model.count_params()
print(f"tiny model: {counts['total']} parameters ({counts['non_backbone']} outside the backbone)")

cfg = TrainConfig(lr=1e-3, epochs=8, loss=LossConfig(kind="dfl", gamma_focal=1.0, mu=0.5), seed=1)
result = train(model, train_set, cfg, "runs/demo")
print("mean loss per epoch:", " ".join(f"{v:.0f}" for v in result.mean_losses))

# Predict, thin, and score. The fused map is the model's output; the five
# side maps are also available per stage.
preds = []
for sample in test_set:
    out = model.forward(Tensor(sample.image[None]))
    preds.append(out.fused_prob.data[0, 0])

thinned = nms_thin(preds[0])
print(f"first map: {np.count_nonzero(preds[0] > 0.5)} px over 0.5 raw, "
      f"{np.count_nonzero(thinned > 0.5)} after thinning, "
      f"{test_set[0].gt_maps[0].sum():.0f} in GT")

scores, _ = evaluate_dataset(preds, [s.gt_maps for s in test_set])
print(f"strict tolerance:  ODS={scores.ods_f:.4f}@{scores.ods_threshold:.2f} OIS={scores.ois_f:.4f}")
one_px, _ = evaluate_dataset(preds, [s.gt_maps for s in test_set], tol_frac=1.5 / np.hypot(64, 64))
print(f"1-px tolerance:    ODS={one_px.ods_f:.4f}@{one_px.ods_threshold:.2f} OIS={one_px.ois_f:.4f}")
