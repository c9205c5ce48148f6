"""The evaluation metrics on inputs whose answers are known in advance.

Run: python3 demos/03_metrics.py
"""

import numpy as np

from seqdisent.evaluation import inception_metrics, latent_classification_from_features, metric_eer

# a confident, balanced judge over 9 classes reaches the ceiling: IS = 9, H(y) = log 9
scores = inception_metrics(np.eye(9))
print(f"one-hot: IS {scores.inception_score:.3f}  H(y|x) {scores.intra_entropy:.3f}  H(y) {scores.inter_entropy:.3f}")

# an undecided judge has IS = 1
scores = inception_metrics(np.full((9, 9), 1 / 9))
print(f"uniform: IS {scores.inception_score:.3f}  H(y|x) {scores.intra_entropy:.3f}  H(y) {scores.inter_entropy:.3f}")

# identities on orthogonal directions are perfectly verifiable; noise pushes EER towards 0.5
rng = np.random.default_rng(0)
ids = np.repeat(np.arange(4), 10)
centers = np.eye(4) * 5
for noise in (0.1, 2.0, 50.0):
    emb = centers[ids] + rng.normal(0, noise, size=(40, 4))
    print(f"EER with noise {noise:>4}: {metric_eer(emb, ids):.3f}")

# latent accuracy: static code = one-hot content, dynamic code = one-hot motion, so both gaps are large
static_y, dynamic_y = np.repeat(np.arange(6), 40), np.tile(np.arange(4), 60)
table = latent_classification_from_features(np.eye(6)[static_y], np.eye(4)[dynamic_y], static_y, dynamic_y)
print(f"static gap {table.static_gap:.2f}, dynamic gap {table.dynamic_gap:.2f}")
