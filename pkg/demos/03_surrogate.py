"""Training a dense surrogate with Adam and an L2 penalty.

Run: python3 demos/03_surrogate.py  (about 20 s)
"""

import numpy as np

from robust_surrogate.simulator import generate_dataset
from robust_surrogate.tensor_net import TrainConfig, default_layers, init_network, mse_loss, predict, train

data = generate_dataset(384, seed=7)
train_set, test_set = data.subset(np.arange(256)), data.subset(np.arange(256, 384))

# %% Default desk-scale network: 256 -> 512 -> 512 -> 256 with relu
layers, shape = default_layers(16)
net = init_network(layers, shape, seed=0)
print("parameters:", net.n_params)

# %% Mini-batch Adam; the trace holds the loss before training, then one entry per epoch
net, trace = train(net, train_set, TrainConfig(epochs=40, seed=1))
print("loss trace:", trace[0].round(6), "->", trace[-1].round(6))

pred = predict(net, test_set.inputs.reshape(len(test_set), -1))
print("held-out MSE:", f"{mse_loss(pred, test_set.outputs.reshape(pred.shape)):.3e}")
print("output variance:", f"{test_set.outputs.var():.3e}")
