"""
Relative position embeddings and translation equivariance
=========================================================

Without positional information, attention is a bag-of-pixels operation.
Relative encoding adds a learned term per spatial offset: the logit for a
neighbor at offset (a, b) gains q . r_(a,b), where r concatenates a row
embedding indexed by a and a column embedding indexed by b. Because the
index depends only on the offset, shifting the image shifts the output:
the layer stays translation equivariant away from the borders.
"""

import numpy as np

from localattn import LocalAttention

rng = np.random.default_rng(7)
k, half = 5, 2

layer = LocalAttention(4, 4, k=k, heads=2, encoding_mode="relative",
                       rng=rng, dtype=np.float64)

# Two tables, each (2k-1) rows: offsets -(k-1)..(k-1) hit rows 0..2k-2.
print("row embedding table:", layer.row_emb.shape)
print("col embedding table:", layer.col_emb.shape)

# Shift the input one pixel down and right; interior outputs shift with it.
x = rng.standard_normal((1, 4, 10, 10))
y_full, _ = layer.forward(x)
y_crop, _ = layer.forward(x[:, :, 1:, 1:])

# Compare a window whose receptive fields lie inside both crops.
a = y_full[:, :, 1 + half:-half, 1 + half:-half]
b = y_crop[:, :, half:-half, half:-half]
print("interior shift error:", float(np.max(np.abs(a - b))))

# Zeroing the tables removes the positional term entirely: the layer then
# matches a twin built without any encoding, weight for weight.
plain = LocalAttention(4, 4, k=k, heads=2, encoding_mode="none",
                       rng=rng, dtype=np.float64)
plain.W_Q[...] = layer.W_Q
plain.W_K[...] = layer.W_K
plain.W_V[...] = layer.W_V
layer.row_emb[...] = 0.0
layer.col_emb[...] = 0.0
y_zeroed, _ = layer.forward(x)
y_plain, _ = plain.forward(x)
print("zeroed-table reduction error:", float(np.max(np.abs(y_zeroed - y_plain))))

# A content-free variant drops W_K and scores neighbors by position alone;
# its parameter list is one transform shorter.
content_free = LocalAttention(4, 4, k=k, heads=2, encoding_mode="relative_only",
                              rng=rng, dtype=np.float64)
print("relative_only parameters:", sorted(content_free.params))
