"""Remove an explanation, retrain, and see what happens to the test loss.

We take the 20 test points closest to the decision boundary, plant an exact
copy of each in the training set, and explain every test point with its k
nearest training neighbours (the copy comes first). Deleting those neighbours
and retraining with the same seed should usually raise the test loss. Influence
explanations go through the same protocol for comparison.

    python demos/counterfactual_protocol.py
"""

import numpy as np

from knnexplain import nn
from knnexplain.counterfactual import CounterfactualExperiment, aggregate_all
from knnexplain.data import BlobSpec, LabeledDataset, make_blobs_split
from knnexplain.nn import freeze_all_but_last
from knnexplain.report import aggregate_markdown, flips_markdown

train, test = make_blobs_split(BlobSpec(num_classes=2, dim=10, per_class=150, spread=0.5, seed=0),
                               test_per_class=100)
arch = nn.ArchSpec((10,), (nn.dense(32, "fc1"), nn.relu("relu1"), nn.dense(2, "logits")))
cfg = nn.TrainConfig(epochs=30, batch_size=32, learning_rate=0.05, seed=0)

probe = nn.train(nn.build_model(arch, cfg.seed), train, cfg)
z = np.sort(nn.logits(probe, test.X), axis=1)
boundary = test.take(np.argsort(z[:, -1] - z[:, -2], kind="stable")[:20])
copies = LabeledDataset("copies", 10_000 + boundary.ids, boundary.X, boundary.y, 2)

exp = CounterfactualExperiment(train.concat(copies), arch, cfg, pool_size=300,
                               influence_cfg=nn.TrainConfig(**{**cfg.__dict__,
                                                               "frozen_layers": freeze_all_but_last(arch)}))
records = exp.run(boundary, ["knn", "influence"], [1, 5], workers=4)
rows = aggregate_all(records, "blobs")
for method in ("knn", "influence"):
    print(f"\nloss change, {method}:")
    print(aggregate_markdown([r for r in rows if r.method == method]))
print("label flips (%):")
print(flips_markdown(rows, "blobs"))
