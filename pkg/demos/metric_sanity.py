"""Metrics on Gaussians where the answer is known in closed form."""
import numpy as np

from sgxl.metrics import FeatureStatistics, frechet_distance, inception_score, precision_recall

rng = np.random.default_rng(0)

# two 1-D Gaussians: distance is (m1-m2)^2 + (s1-s2)^2
a = FeatureStatistics(np.array([0.0]), np.array([[1.0]]), 1000)
b = FeatureStatistics(np.array([2.0]), np.array([[4.0]]), 1000)
print("FID 1-D:", frechet_distance(a, b), "expected", 2.0 ** 2 + (1 - 2) ** 2)

# one confident prediction per class gives IS = number of classes
print("IS one-hot(10):", inception_score(np.eye(10)))

# shrinking the fake cloud trades recall for precision
real = rng.normal(size=(1000, 8))
for scale in (1.0, 0.7, 0.4):
    fake = rng.normal(size=(1000, 8)) * scale
    p, r = precision_recall(real, fake, k=3)
    print(f"scale {scale}: precision {p:.3f} recall {r:.3f}")
