"""FGSM and FGNM perturbations and adversarial training.

Run: python3 demos/04_attacks.py  (about a minute)
"""

import numpy as np

from robust_surrogate.adversarial import AttackConfig, attack_direction, fgnm_from_grad, fgsm_from_grad
from robust_surrogate.simulator import generate_dataset, simulate_batch
from robust_surrogate.tensor_net import TrainConfig, default_layers, init_network, mse_loss, predict, train

# %% Both attacks have the same L2 norm; FGNM keeps the exact gradient direction
g = np.random.default_rng(0).normal(size=256)
s = fgsm_from_grad(g, 0.1)
n, _ = fgnm_from_grad(g, 0.1)
print("norms", np.linalg.norm(s), np.linalg.norm(n), "cos(fgnm, g)", n @ g / np.linalg.norm(n) / np.linalg.norm(g))

# %% Train a plain and an adversarial surrogate from the same initialisation
data = generate_dataset(384, seed=11)
tr, te = data.subset(np.arange(256)), data.subset(np.arange(256, 384))
layers, shape = default_layers(16)
X = te.inputs.reshape(len(te), -1)
Y = te.outputs.reshape(len(te), -1)
for method in ("none", "fgnm"):
    cfg = TrainConfig(epochs=60, seed=2, l2_lambda=0.0, attack_method=method)
    net, _ = train(init_network(layers, shape, seed=0), tr, cfg)
    clean = mse_loss(predict(net, X), Y)
    # perturb along the model's own gradient, relabel with the simulator
    for attack in ("fgnm", "fgsm"):
        p = attack_direction(net, X, Y, AttackConfig(attack, 0.1))
        Xp = X + p.delta
        Yp = simulate_batch(Xp.reshape(-1, 16, 16)).reshape(Y.shape)
        print(f"trained with {method:4s}: {attack} MSE / clean MSE = {mse_loss(predict(net, Xp), Yp) / clean:.2f}")
