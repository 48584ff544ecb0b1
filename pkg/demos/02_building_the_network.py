"""
Building the network and following its channels
================================================

Each feature group doubles the channel count: its weighted dense block grows
the features, the attention module compresses them back to the group's input
width, and the group output concatenates input and enhanced features.
"""
import numpy as np

from adrd import ADRD, NetworkConfig, export_weight_matrices, format_weight_matrices, no_grad

cfg = NetworkConfig.full()
print(cfg.to_kv())

net = ADRD(cfg)
print("parameters:", net.num_parameters())

# the trace records the shape after every stage
trace = []
with no_grad():
    out = net(np.zeros((1, 3, 50, 50), np.float32), trace=trace)
for name, shape in trace:
    print(f"{name:20s} {shape}")
print("output", out.shape)

# the dense-connection weights start at 1: a plain dense block
tiny = ADRD(NetworkConfig.tiny())
print(format_weight_matrices(export_weight_matrices(tiny)))

# the three modules can be switched off for ablations
for variant in (dict(weighted_dense=False), dict(attention=False), dict(residual_deconv=False)):
    print(variant, ADRD(NetworkConfig.tiny(**variant)).num_parameters(), "parameters")
