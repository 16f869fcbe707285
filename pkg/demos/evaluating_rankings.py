"""
Scoring multi-label rankings
============================

mAP asks, per class, how early the true images appear in that class's
ranking; top-K precision/recall/F1 ask, per image, how much of the true
label set lands in the K highest-scored classes.
"""

import numpy as np

from mlzgen import metrics

# four images, three classes; each truth tuple lists the positive columns
scores = np.array([
    [0.9, 0.3, 0.1],
    [0.7, 0.8, 0.2],
    [0.2, 0.6, 0.4],
    [0.1, 0.2, 0.9],
])
truths = [(0,), (0, 1), (1,), (2,)]
table = metrics.EvalTable(scores, truths)

print("mean average precision:", round(metrics.mean_ap(table), 4))
for k in (1, 2):
    p, r, f1 = metrics.topk_prf(table, k)
    print(f"top-{k}: precision {p:.3f}, recall {r:.3f}, F1 {f1:.3f}")

# classes nobody exhibits are skipped, not counted as zero
sparse = metrics.EvalTable(scores, [(0,), (0,), (), (0,)])
print("single-class table mAP:", round(metrics.mean_ap(sparse), 4))

# a shuffled-score baseline calibrates how much of the mAP is real signal:
# the scores are permuted across images so ranking skill is destroyed but
# the score and label marginals survive
baseline = metrics.random_score_baseline(table, seed=0)
print(f"table mAP {metrics.mean_ap(table):.3f} vs shuffled baseline {baseline:.3f} "
      f"({metrics.mean_ap(table) / baseline:.2f}x)")

# ties are broken toward the lower image index, so evaluation is stable
tied = metrics.EvalTable(np.array([[0.5], [0.5]]), [(), (0,)])
print("tied scores rank image 0 first -> AP", metrics.mean_ap(tied))
