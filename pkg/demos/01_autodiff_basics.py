"""Tour of the tensor engine: ops, gradients, and a hand-checked conv.

The engine is a dense reverse-mode autodiff core: float32 tensors, a
closure per op, and an iterative topological backward pass.
"""

import numpy as np

from shapesem import tensor as T
from shapesem.tensor import Tensor

# -- forward ops --------------------------------------------------------
x = Tensor(np.linspace(-2, 2, 5).astype(np.float32))
print("x          ", x.data)
print("relu       ", T.relu(x).data)
print("leaky(0.2) ", T.leaky_relu(x, 0.2).data)
print("tanh       ", T.tanh(x).data)
print("sigmoid    ", T.sigmoid(x).data)

# -- a 3x3 convolution you can verify by hand ---------------------------
img = Tensor(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4))
kernel = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
out = T.conv2d(img, kernel, stride=1, pad=0)
print("\n3x3 box filter over a 4x4 ramp (each output = sum of a 3x3 block):")
print(out.data[0, 0])

# conv2d_transpose is the exact adjoint of conv2d: <conv(x), y> == <x, convT(y)>
rng = np.random.default_rng(0)
a = Tensor(rng.standard_normal((1, 2, 8, 8)).astype(np.float32))
k = Tensor(rng.standard_normal((3, 2, 4, 4)).astype(np.float32))
y = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
lhs = float((T.conv2d(a, k, 2, 1).data * y).sum())
rhs = float((a.data * T.conv2d_transpose(Tensor(y), k, 2, 1).data).sum())
print("\nadjoint identity: %.6f == %.6f" % (lhs, rhs))

# -- gradients ----------------------------------------------------------
w = Tensor(np.array([1.0, -2.0, 0.5], dtype=np.float32), requires_grad=True)
data = Tensor(np.array([3.0, 1.0, 4.0], dtype=np.float32))
loss = T.tsum(T.mul(w, data))
loss.backward()
print("\nloss = sum(w * x)  =>  dloss/dw = x =", w.grad)

# a reused tensor accumulates gradient over both paths
w2 = Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
loss = T.tsum(T.mul(w2, 3.0) + T.mul(w2, 5.0))
loss.backward()
print("3w + 5w        =>  grad =", w2.grad, "(3 + 5)")

# -- one Adam step ------------------------------------------------------
from shapesem.optim import Adam

p = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
opt = Adam([p], lr=0.1)
p.grad = np.array([1.0, -1.0, 4.0], dtype=np.float32)
opt.step()
print("\nfirst Adam step moves each weight by -lr * sign(grad):", p.data)
