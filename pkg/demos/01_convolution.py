"""Lowering a same-padded convolution to one matrix product.

im2col turns every 3x3 receptive field into a column, so the whole layer
becomes weights @ columns. The nested-loop version below is the reference.
"""
import numpy as np

from radnet.layers import Conv2D
from radnet.tensor import im2col, pad_same

rng = np.random.default_rng(0)
x = rng.standard_normal((2, 5, 5))

cols = im2col(pad_same(x, 3), 3)
print("input", x.shape, "-> columns", cols.shape)  # (2*3*3, 5*5)

conv = Conv2D(2, 4, dtype=np.float64)
conv.params["W"][...] = rng.standard_normal((4, 2, 3, 3))
fast = conv.forward(x[None])[0]

# straightforward loops over output pixels
xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
slow = np.zeros((4, 5, 5))
for f in range(4):
    for i in range(5):
        for j in range(5):
            slow[f, i, j] = np.sum(conv.params["W"][f] * xp[:, i:i + 3, j:j + 3])

print("max |im2col - loops| =", np.abs(fast - slow).max())
