"""ROC points, AUC as a ranking probability, and five-fold summaries.

Run: python3 demos/roc_and_folds.py
"""
import numpy as np

from temrnn import MetricsReport, aggregate_folds, auc, kfold, roc_points

scores = np.array([0.1, 0.4, 0.35, 0.8])
labels = np.array([0, 0, 1, 1])
for thr, fpr, tpr in roc_points(scores, labels):
    print(f"score >= {thr:<5}  fpr {fpr:.2f}  tpr {tpr:.2f}")

# the trapezoid area equals the chance a random positive outranks a random negative
pos, neg = scores[labels == 1], scores[labels == 0]
pairs = np.mean([(p > n) + 0.5 * (p == n) for p in pos for n in neg])
print("trapezoid", auc(scores, labels), "pairwise", pairs)

# stratified folds over a noisy scorer, reported as mean(std)
rng = np.random.default_rng(1)
y = rng.integers(0, 2, 200)
s = 1 / (1 + np.exp(-(2 * y - 1 + rng.normal(scale=1.5, size=200))))
reports = [MetricsReport.from_scores(s[f], y[f]) for f in kfold(y, k=5, seed=0)]
for name, (mean, std) in aggregate_folds(reports).items():
    print(f"{name:9s} {100 * mean:.2f}({100 * std:.2f})")
