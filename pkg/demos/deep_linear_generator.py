"""
What a deep linear generator computes
=====================================

Stacked bias-free convolutions collapse to a single kernel.  Here we
compare the network output with one convolution by that kernel.
"""

import torch

from dualcycle.network import DeepLinearGenerator

g = torch.Generator().manual_seed(3)
dlg = DeepLinearGenerator(layers=3, kernel_size=3, init_noise=0.05, generator=g).double()

x = torch.rand(1, 1, 20, 20, 20, dtype=torch.float64)
with torch.no_grad():
    k = dlg.effective_kernel()
    y = dlg(x)
print("effective kernel shape", k.shape)  # three 3-wide layers span 7
print("kernel sum", float(k.sum()))

y2 = torch.nn.functional.conv3d(x, k[None, None], padding=dlg.reach)

# zero padding between layers only matters near the border
r = dlg.reach
inner = (..., slice(r, -r), slice(r, -r), slice(r, -r))
print("max interior difference vs single convolution", float((y - y2)[inner].abs().max()))
