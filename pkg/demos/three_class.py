"""Three-class temperature classifier: ZENN against a plain network.

Labels are drawn from three Gaussian-mixture class weights on T in [1, 8].
Both models see T < 6 only; the interesting part is how each extrapolates
to T in [6, 8].
"""

import numpy as np

from zenn import benchdata as bd
from zenn import experiments as ex

cfg = ex.validate_config({"task": "classify", "train": {"epochs": 20000}})
data = ex.load_task_data(cfg)

zenn = ex.run_training(cfg, data)
dnn = ex.run_training(cfg, data, baseline=True)

T = np.array([2.0, 3.0, 4.0, 7.0])
print("T     exact                  zenn                   dnn")
for t, e, z, d in zip(T, bd.three_class_probs(T), ex.class_probabilities(zenn.model, T), ex.class_probabilities(dnn.model, T)):
    print(f"{t:<4}  {np.round(e, 3)!s:<21}  {np.round(z, 3)!s:<21}  {np.round(d, 3)!s}")

print(f"max |p error| on T in [6, 8]: zenn {ex.generalization_error(zenn.model):.3f}, dnn {ex.generalization_error(dnn.model):.3f}")
