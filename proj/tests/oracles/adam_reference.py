"""Adam on f(x) = x^2 from x0 = 1 with lr 0.1; writes one x per step."""
import math
import sys

lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
x, m, v = 1.0, 0.0, 0.0
rows = []
for t in range(1, 501):
    g = 2.0 * x
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    x = x - lr * mhat / (math.sqrt(vhat) + eps)
    rows.append(x)

out = sys.argv[1] if len(sys.argv) > 1 else "adam_reference.csv"
with open(out, "w") as f:
    f.write("step,x\n")
    for t, value in enumerate(rows, 1):
        f.write(f"{t},{value!r}\n")
