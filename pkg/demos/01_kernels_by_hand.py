"""Subpath kernels on tiny inputs whose values can be counted by hand.

Two feature vectors far apart behave like distinct symbols under a sharp
Gaussian (gamma=10), so each kernel value is just a count of matching subpaths.
"""
import math

import numpy as np

from hierfuse.hierarchy import SequenceInstance, TreeInstance
from hierfuse.kernels import brute_force_kernel, normalize, sequence_kernel, subpaths, tree_kernel

a = np.zeros(8)
b = np.full(8, 10 / math.sqrt(8))

# The sequence (a, b) matched with itself: subpaths a, b and a-b each match once.
s = SequenceInstance(np.stack([a, b]))
print("subpaths of (a, b):", subpaths(s))
print("K(s, s) =", sequence_kernel(s, s, 10.0))

# A root a with two b children. Subpaths are a, b, b, a-b, a-b.
# Matches: a once, b four ways, a-b four ways, 9 in total.
t = TreeInstance(np.stack([a, b, b]), np.array([0, 1, 1]))
print("K(t, t) =", tree_kernel(t, t, 10.0))

# A sequence is a path-shaped tree, and the two kernels agree on it.
path = TreeInstance(s.features, np.array([0, 1]))
print("path tree:", tree_kernel(path, path, 10.0))

# On random data the dynamic program matches explicit enumeration.
rng = np.random.default_rng(0)
u, v = SequenceInstance(rng.normal(size=(6, 8))), SequenceInstance(rng.normal(size=(4, 8)))
dp, brute = sequence_kernel(u, v, 0.1), brute_force_kernel(u, v, 0.1)
print(f"DP {dp:.12f}  enumeration {brute:.12f}")
print("normalized:", normalize(dp, sequence_kernel(u, u, 0.1), sequence_kernel(v, v, 0.1)))
