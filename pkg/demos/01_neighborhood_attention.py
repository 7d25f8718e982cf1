"""
Local attention over pixel neighborhoods
========================================

A pixel attends over its k x k neighborhood: the query comes from the pixel,
keys and values come from the window, and a masked softmax turns similarities
into mixing weights. Off-image window slots get weight exactly zero, so
border pixels mix only what actually exists.
"""

import numpy as np

from localattn import LocalAttention, extract_neighborhood, softmax_axis

rng = np.random.default_rng(0)

# A tiny 6x6 feature map with 4 channels.
x = rng.standard_normal((1, 4, 6, 6))

# Pull the 3x3 window around the top-left corner pixel. Five of the nine
# slots hang off the image; the validity mask marks them.
window, idx = extract_neighborhood(x, 0, 0, 3)
print("window shape:", window.shape)
print("valid slots :", idx.valid_mask.astype(int).reshape(3, 3))

# Masked softmax: the invalid slots are excluded, the rest sum to one.
logits = rng.standard_normal(9)
weights = softmax_axis(logits, -1, idx.valid_mask)
print("weights     :", np.round(weights.reshape(3, 3), 3))
print("weight sum  :", weights.sum())

# The layer does this at every pixel, per head, in one pass.
layer = LocalAttention(4, 4, k=3, heads=2, encoding_mode="none",
                       rng=rng, dtype=np.float64)
y, ctx = layer.forward(x)
print("\noutput shape:", y.shape)

# ctx[4] holds the attention weights as (batch, heads, H, W, k*k).
attn = ctx[4]
print("every pixel's weights sum to one:",
      bool(np.allclose(attn.sum(-1), 1.0)))
corner = attn[0, 0, 0, 0].reshape(3, 3)
print("corner pixel weights (off-image slots are zero):")
print(np.round(corner, 3))
