"""
The autodiff core in five minutes
=================================

Tensors record the ops that produced them; ``backward`` walks that record in
reverse. Every op is checked against central finite differences.
"""
import numpy as np

from adrd import tensor as T
from adrd.gradcheck import gradcheck
from adrd.tensor import Tensor

rng = np.random.default_rng(0)

# a convolution followed by a squared-error loss
x = Tensor(rng.standard_normal((1, 2, 6, 6)))
k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
target = Tensor(rng.standard_normal((1, 3, 6, 6)))
loss = T.mse_loss(T.conv2d(x, k, padding=1), target)
loss.backward()
print("loss", loss.item(), "kernel grad shape", k.grad.shape)

# the same gradient by finite differences
report = gradcheck(lambda kk: T.mse_loss(T.conv2d(x, kk, padding=1), target), [k.data])
print("conv2d gradcheck: max rel error %.2e, passed %s" % (report.max_rel_error, report.passed))

# conv_transpose2d is the adjoint of conv2d: <conv(a), b> == <a, conv_t(b)>
a = rng.standard_normal((1, 2, 8, 8))
w = rng.standard_normal((3, 2, 4, 4))
b = rng.standard_normal((1, 3, 4, 4))
lhs = np.vdot(T.conv2d(Tensor(a), Tensor(w), padding=1, stride=2).data, b)
rhs = np.vdot(a, T.conv_transpose2d(Tensor(b), Tensor(w), stride=2, padding=1).data)
print("adjoint gap", abs(lhs - rhs))

# x2 deconvolution geometry: 4x4 kernel, stride 2, padding 1 doubles the extent
up = T.conv_transpose2d(Tensor(rng.standard_normal((1, 3, 13, 17))), Tensor(rng.standard_normal((3, 3, 4, 4))),
                        stride=2, padding=1)
print("13x17 ->", up.shape[2:])
