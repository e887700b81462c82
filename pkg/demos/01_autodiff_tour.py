"""Tour of the autodiff core: build ops, backprop, check gradients.

Run: python demos/01_autodiff_tour.py
"""

import numpy as np

from edgekit.tensor import (
    Tensor,
    backward,
    bilinear_resize,
    conv2d,
    grad_check,
    group_norm,
    max_pool2,
    sigmoid,
    tensor_sum,
)

rng = np.random.default_rng(0)

# A small convolution stack, end to end. Tensors are float32 by default;
# pass float64 arrays when you want double precision.
image = Tensor(rng.random((1, 3, 16, 16)).astype(np.float32))
weight = Tensor((rng.standard_normal((8, 3, 3, 3)) * 0.3).astype(np.float32), requires_grad=True)
bias = Tensor(np.zeros(8, dtype=np.float32), requires_grad=True)

features = conv2d(image, weight, bias, padding=1)
print("conv output:", features.shape)

gamma = Tensor(np.ones(8, dtype=np.float32), requires_grad=True)
beta = Tensor(np.zeros(8, dtype=np.float32), requires_grad=True)
normed = group_norm(features, 2, gamma, beta)
pooled = max_pool2(normed)
upsampled = bilinear_resize(pooled, 16, 16)
prob = sigmoid(upsampled)
print("after norm/pool/resize/sigmoid:", prob.shape)

# Reverse-mode backprop from a scalar.
loss = tensor_sum(prob)
backward(loss)
print("weight grad norm:", float(np.linalg.norm(weight.grad)))
print("gamma grad norm:", float(np.linalg.norm(gamma.grad)))

# Gradient checking runs the same graph in float64 and compares against
# central finite differences.
x64 = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
w64 = Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
err = grad_check(lambda x, w: tensor_sum(sigmoid(conv2d(x, w, padding=1))), [x64, w64])
print(f"conv2d gradient max relative error: {err:.2e}")
