"""
Reverse-mode gradients on a tape
================================

The model is written against a small numpy autodiff engine. Operations
record themselves on the active ``Tape``; ``backward`` replays them in
reverse and accumulates ``.grad`` on every leaf.
"""

import numpy as np

from idcausal import tensor as T

rng = np.random.default_rng(0)
a = T.Tensor(np.eye(3) + np.tril(rng.normal(size=(3, 3)), -1), requires_grad=True)
x = T.Tensor(rng.normal(size=(3, 2)), requires_grad=True)

with T.Tape() as tape:
    w = T.unit_lower_tri_inverse(a)      # (I - A)^-1 style mixing
    y = T.elu(T.matmul(w, x))
    loss = T.mean(y * y)
tape.backward(loss)
print("loss:", float(loss.data))
print("dL/dx:\n", x.grad)
print("dL/da (strict lower part only):\n", a.grad)

# Central differences agree with the tape.
def objective(a, x):
    y = T.elu(T.matmul(T.unit_lower_tri_inverse(a), x))
    return T.mean(y * y)


mask = [np.tril(np.ones((3, 3), bool), -1), None]
print("gradcheck max relative error:", T.gradcheck(objective, [a, x], mask=mask))

# Tensors persist in a small self-describing binary format.
T.save_tensor("/tmp/demo_x.idt", x)
print("round trip exact:", np.array_equal(T.load_tensor("/tmp/demo_x.idt"), x.data))
