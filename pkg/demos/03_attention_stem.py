"""
A spatially aware attention stem
================================

Plain attention on raw RGB pixels underperforms a convolutional stem because
individual pixels carry almost no content to match on. The stem used here
keeps attention but makes the values position dependent: each pixel's value
is a softmax-weighted mixture of several W_V transforms, with weights decided
by where the pixel sits inside its 4x4 block. Batch norm and 4x4 max pooling
follow, so the stem downsamples by four like its convolutional counterpart.
"""

import numpy as np

from localattn import AttentionStem
from localattn.reference import stem_mixture_weights_reference

rng = np.random.default_rng(3)
stem = AttentionStem(3, 16, rng=rng, dtype=np.float64)

print("value transforms :", stem.W_V.shape, "(mixtures, in, out)")
print("block embeddings :", stem.emb_row.shape, stem.emb_col.shape)
print("mixture scores nu:", stem.nu.shape)

# The mixture weight p(a, b, m) depends only on the position inside the
# block. Print the first mixture's weight at every block position: rows
# and columns shape it smoothly, and each position's weights sum to one.
table = np.zeros((4, 4))
for a in range(4):
    for b in range(4):
        weights = stem_mixture_weights_reference(stem.emb_row, stem.emb_col,
                                                 stem.nu, a, b)
        table[a, b] = weights[0]
        assert abs(weights.sum() - 1.0) < 1e-12
print("\np(a, b, m=0) over the block:")
print(np.round(table, 3))

# One forward pass: 32x32 RGB in, quarter resolution out.
x = rng.standard_normal((2, 3, 32, 32))
y, _ = stem.forward(x, training=True)
print("\ninput ", x.shape)
print("output", y.shape)

# Block alignment is a hard requirement, not a silent crop.
try:
    stem.forward(rng.standard_normal((1, 3, 30, 30)))
except Exception as err:
    print("30x30 input:", type(err).__name__, "-", err)
