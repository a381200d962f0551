"""Influence functions against honest leave-one-out retraining.

For a convex model (logistic regression, written as a LayeredModel with no
hidden layer) the influence estimate should track the loss change you get by
actually deleting each training point and retraining to convergence.

    python demos/influence_vs_loo.py
"""

import numpy as np

from knnexplain import nn
from knnexplain.counterfactual import remove_and_retrain
from knnexplain.data import BlobSpec, make_blobs_split
from knnexplain.influence import influence_scores, top_k_influential

train, test = make_blobs_split(BlobSpec(num_classes=2, dim=2, per_class=30, spread=1.0, seed=1),
                               test_per_class=5)
arch = nn.ArchSpec((2,), (nn.dense(2, "logits"),))
# full-batch gradient descent until the gradient is essentially zero
cfg = nn.TrainConfig(epochs=20_000, batch_size=len(train), learning_rate=0.5, seed=0, grad_tol=1e-10)
model = nn.train(nn.build_model(arch, 0), train, cfg)

x, y = test.sample(int(test.ids[0]))
scores = influence_scores(model, train, (x, y), damping=1e-3)
before = nn.ce_loss(model, x, y)
actual = np.array([nn.ce_loss(remove_and_retrain(train, [i], arch, cfg), x, y) - before
                   for i in train.ids])

print(f"{len(train)} leave-one-out retrainings")
print(f"Pearson r       {np.corrcoef(scores.scores, actual)[0, 1]:.4f}")
print(f"sign agreement  {np.mean(np.sign(scores.scores) == np.sign(actual)):.0%}")
print("\nmost helpful training points (removing them hurts the most):")
for i in top_k_influential(scores, 5):
    j = int(np.flatnonzero(train.ids == i)[0])
    print(f"  id {i:3d}  predicted {scores.scores[j]:+.5f}  actual {actual[j]:+.5f}")
