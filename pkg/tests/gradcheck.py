"""Central finite-difference check of the four objectives through a toy network."""

import torch
import torch.nn as nn

from firegan import losses as L


class Toy(nn.Module):
    """Two 1x1 conv layers: an image head and a patch score head."""

    def __init__(self, seed: int):
        super().__init__()
        torch.manual_seed(seed)
        self.a = nn.Conv2d(3, 4, 1).double()
        self.b = nn.Conv2d(4, 4, 3, padding=1).double()

    def forward(self, x):
        h = self.b(torch.tanh(self.a(x)))
        return torch.tanh(h[:, :3]), h[:, 3:]


def objectives(w: L.LossWeights):
    def g2(net, x, ir):
        img, s = net(x)
        return L.g2_loss(s, s * 0.5, img, ir, x, w).total

    def g1(net, x, ir):
        img, s = net(x)
        return L.g1_loss(s, img, ir, w)

    def d1(net, x, ir):
        _, s_real = net(x)
        _, s_fake = net(ir)
        return L.d1_loss(s_real, s_fake, w)

    def d2(net, x, ir):
        _, s_real = net(ir)
        _, s_gen = net(x)
        _, s_fused = net(0.5 * (x + ir))
        return L.d2_loss(s_real, s_gen, s_fused, w)

    return {"g1": g1, "g2": g2, "d1": d1, "d2": d2}


def max_relative_error(name: str, probes: int = 10, eps: float = 1e-6, seed: int = 0) -> float:
    """Worst relative error between autograd and central differences over ``probes`` coordinates."""
    w = L.LossWeights(gamma=4.5, lambda_=10.0, xi=0.5, a_label=0.0)
    fn = objectives(w)[name]
    net = Toy(seed)
    g = torch.Generator().manual_seed(seed + 1)
    x = torch.rand(2, 3, 6, 6, generator=g, dtype=torch.float64) * 2 - 1
    ir = torch.rand(2, 3, 6, 6, generator=g, dtype=torch.float64) * 2 - 1
    net.zero_grad()
    fn(net, x, ir).backward()
    params = list(net.parameters())
    worst = 0.0
    for _ in range(probes):
        p = params[int(torch.randint(len(params), (1,), generator=g))]
        idx = int(torch.randint(p.numel(), (1,), generator=g))
        flat = p.data.view(-1)
        orig = flat[idx].item()
        with torch.no_grad():
            flat[idx] = orig + eps
            up = fn(net, x, ir).item()
            flat[idx] = orig - eps
            down = fn(net, x, ir).item()
            flat[idx] = orig
        numeric = (up - down) / (2 * eps)
        analytic = p.grad.view(-1)[idx].item()
        err = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, err)
    return worst
