"""Checking hand-written backward passes with central differences.

Each layer's analytic gradient is compared with (f(x+h) - f(x-h)) / 2h of a
random projection of its output. Relative errors near 1e-8 or below mean the
backward pass is right; a broken one shows up at order 1.
"""
import numpy as np

from radnet.layers import BatchNorm2D, Conv2D, Dense, GradBundle, MaxPool2x2, Softmax, gradient_check
from radnet.model import ModelSpec, build

rng = np.random.default_rng(1)

layers = {
    "conv": (Conv2D(2, 3, dtype=np.float64), rng.standard_normal((1, 2, 4, 4))),
    "batchnorm": (BatchNorm2D(2, dtype=np.float64), rng.standard_normal((3, 2, 2, 2))),
    "maxpool": (MaxPool2x2(), rng.permutation(32).reshape(2, 1, 4, 4) / 3.0),
    "dense": (Dense(6, 3, dtype=np.float64), rng.standard_normal((2, 6))),
    "softmax": (Softmax(), rng.standard_normal((2, 4))),
}
for name, (layer, x) in layers.items():
    print(f"{name:10s} {gradient_check(layer, x):.2e}")

spec = ModelSpec(task="three_class", input_size=(8, 8), block_filters=[2, 4], dense_sizes=[8],
                 dropout_dense=0.25, precision="f64")
print(f"{'model':10s} {gradient_check(build(spec), rng.random((2, 3, 8, 8))):.2e}")


class Broken(Dense):
    """Returns twice the true gradient."""

    def backward(self, upstream):
        b = super().backward(upstream)
        return GradBundle({k: 2 * v for k, v in b.grads.items()}, 2 * b.input_grad)


print(f"{'broken':10s} {gradient_check(Broken(6, 3, dtype=np.float64), rng.standard_normal((2, 6))):.2e}")
