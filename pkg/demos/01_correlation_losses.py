"""Why train on CCC instead of MSE: a tour of the three losses on toy traces."""

# %%
import numpy as np

from cer_mtl.losses import ccc, ccc_loss, mse_loss, pcc, pcc_loss
from cer_mtl.tensor import Tensor, backward

rng = np.random.default_rng(0)
t = np.linspace(0, 6 * np.pi, 600)
reference = 0.4 * np.sin(t) + 0.1 * np.sin(3.1 * t)

# %% [markdown]
# Three candidate predictions: a shrunken copy (what MSE training drifts towards
# on noisy inputs), a shifted copy and a noisy copy.

# %%
candidates = {
    "shrunk x0.3": 0.3 * reference,
    "shifted +0.2": reference + 0.2,
    "noisy": reference + 0.15 * rng.standard_normal(t.size),
}
print(f"{'prediction':<14}{'mse':>8}{'pcc':>8}{'ccc':>8}")
for name, pred in candidates.items():
    print(f"{name:<14}{np.mean((pred - reference) ** 2):8.3f}{pcc(pred, reference):8.3f}{ccc(pred, reference):8.3f}")

# %% [markdown]
# PCC ignores scale and offset entirely, so the shrunk and shifted traces score
# a perfect 1.0. CCC penalises both. MSE rates the shrunk trace, which lost most
# of its swing, about the same as the shifted one, which kept all of it.

# %%
pred = Tensor(0.3 * reference, requires_grad=True)
for loss in (mse_loss, pcc_loss, ccc_loss):
    pred.zero_grad()
    value = loss(pred, reference)
    backward(value)
    stretch = float(np.dot(pred.grad, -reference))  # > 0 means the step would widen the trace
    print(f"{loss.__name__:<9} value={value.item():.3f}  push towards full amplitude={stretch:+.4f}")
