"""Which layer's nearest neighbour agrees with the network?

Train a small MLP on four Gaussian blobs, then for every tap point ask: does
the training point closest to a test point (cosine distance, in that layer's
activations) carry the label the network predicts? Deeper layers should agree
more often, because they have been shaped by the same objective that produced
the prediction.

    python demos/layer_agreement.py
"""

from knnexplain import nn
from knnexplain.data import BlobSpec, make_blobs_split
from knnexplain.report import agreement_markdown
from knnexplain.representation import agreement_sweep, extract_representations, knn_query

train, test = make_blobs_split(BlobSpec(num_classes=4, dim=20, per_class=100, spread=0.5, seed=0),
                               test_per_class=50)
arch = nn.ArchSpec((20,), (
    nn.dense(64, "fc1"), nn.relu("relu1"),
    nn.dense(64, "fc2"), nn.relu("relu2"),
    nn.dense(4, "logits"),
))
cfg = nn.TrainConfig(epochs=40, batch_size=32, learning_rate=0.05, seed=0)
model = nn.train(nn.build_model(arch, cfg.seed), train, cfg)
print(f"train accuracy {nn.accuracy(model, train):.3f}, test accuracy {nn.accuracy(model, test):.3f}\n")

print(agreement_markdown(agreement_sweep(model, train, test)))

# A single explanation: the five training points nearest to one test point.
reps = extract_representations(model, train, "relu2")
x, y = test.sample(int(test.ids[0]))
_, taps = nn.forward_with_taps(model, x)
query = taps["relu2"]
hood = knn_query(reps, query, k=5)
print(f"test point {test.ids[0]} (label {y}, predicted {nn.predict(model, x)}):")
for i, d in zip(hood.ids, hood.distances):
    print(f"  train id {i:4d}  label {train.sample(i)[1]}  cosine distance {d:.4f}")
