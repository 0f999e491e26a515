"""Compare reverse-mode gradients with central differences on a small MLP loss."""
import argparse

import numpy as np

from scdem import numerics as nx
from scdem.numerics import Tensor


def loss_fn(x, W, b, labels):
    h = nx.activation(nx.affine(x, W, b), "gelu")
    return nx.cross_entropy(nx.softmax(h), labels)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--h", type=float, default=1e-6)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    x = Tensor(rng.normal(size=(8, 5)))
    W = Tensor(rng.normal(size=(5, 3)) * 0.5, requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    labels = rng.integers(0, 3, size=8)

    loss = loss_fn(x, W, b, labels)
    nx.backward(loss)
    print(f"loss {float(loss.data):.6f}")

    for name, p in (("W", W), ("b", b)):
        num = np.zeros_like(p.data)
        for i in np.ndindex(p.data.shape):
            old = p.data[i]
            p.data[i] = old + args.h
            up = float(loss_fn(x, W, b, labels).data)
            p.data[i] = old - args.h
            down = float(loss_fn(x, W, b, labels).data)
            p.data[i] = old
            num[i] = (up - down) / (2 * args.h)
        rel = np.abs(p.grad - num).max() / max(np.abs(num).max(), 1e-12)
        print(f"{name}: max relative difference {rel:.2e}")


if __name__ == "__main__":
    main()
