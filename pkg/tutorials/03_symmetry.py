"""The PM-order symmetry and how the two networks treat it.

Reordering PMs should not change the value of a state and should reorder the
advantages the same way. The shared-encoder network gets this by
construction; the flat MLP does not.
"""
import numpy as np

from dvamp.env import ObservableState
from dvamp.qnet import MlpNet, SpaneNet, permute_action_vector, permute_obs, stack_obs

rng = np.random.default_rng(0)
m = 4
obs = ObservableState(numa_util=rng.uniform(0, 1, (m, 2, 2)), vm_resources=np.array([0.1, 0.05]),
                      div=0, wait_so_far=0)
sigma = np.array([2, 0, 3, 1])        # position k shows PM sigma[k]

spane = SpaneNet(2, seed=1)
a = spane.forward(stack_obs([obs]))
b = spane.forward(stack_obs([permute_obs(obs, sigma)]))
print("value      ", a.v[0], b.v[0])
print("adv moved  ", np.abs(permute_action_vector(a.adv[0], sigma) - b.adv[0]).max())

mlp = MlpNet(m, 2, seed=1)
qa, qb = mlp.q_values(obs), mlp.q_values(permute_obs(obs, sigma))
print("mlp q moved", np.abs(permute_action_vector(qa, sigma) - qb).max())

# %% the same parameters work for any number of PMs
for k in (2, 5, 8):
    o = ObservableState(rng.uniform(0, 1, (k, 2, 2)), np.array([0.1, 0.05]), 0, 0)
    print(k, "PMs ->", spane.q_values(o).shape)
