# # Training on a two-view toy problem
#
# Each view alone confuses pairs of classes; together they separate all 8.

import time

import numpy as np

from fusionfer.fusion import STRATEGIES, FusionConfig, TrainConfig, train_fusion
from fusionfer.metrics import format_report, score
from fusionfer.synthetic import bayes_predict, fit_linear_baseline, linear_predict, make_two_view_dataset

train = make_two_view_dataset(1000, seed=1)
test = make_two_view_dataset(1000, seed=2)
y = test.labels
print("train pairs:", len(train.labels), " test pairs:", len(y))

print("best possible accuracy")
print("  main only:", np.mean(bayes_predict(test.main.vectors) == y))
print("  aux only :", np.mean(bayes_predict(None, test.aux.vectors) == y))
print("  both     :", np.mean(bayes_predict(test.main.vectors, test.aux.vectors) == y))

for view in ("main", "aux"):
    W, b = fit_linear_baseline(getattr(train, view).vectors, train.labels)
    f1 = score(linear_predict(W, b, getattr(test, view).vectors), y).macro_f1
    print(f"linear on {view}: macro-F1 {f1:.3f}")

hyper = TrainConfig(iters=100, batch=512, lr=1e-2, seed=0)
for strategy in STRATEGIES:
    t0 = time.perf_counter()
    model, history = train_fusion(train, hyper, FusionConfig(8, 2, strategy))
    s = score(model.predict(test.main.vectors, test.aux.vectors), y)
    print(f"{strategy:13s} loss {history[0]:8.1f} -> {history[-1]:7.1f}  macro-F1 {s.macro_f1:.3f}  ({time.perf_counter() - t0:.2f}s)")

print()
print(format_report(s))
