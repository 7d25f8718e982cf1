"""
Turning a ResNet into an attention network
==========================================

The transformation is deliberately mechanical: every 3x3 convolution inside
a bottleneck becomes a local attention layer (downsampling becomes a 2x2
average pool after it), the 7x7 convolutional stem becomes the value-mixing
attention stem, and everything else (1x1 convolutions, batch norm, residual
wiring, the classifier) stays put. A census of spatial operators shows the
swap touched exactly what it should.
"""

import numpy as np

from localattn import ModelSpec, build_model

conv_spec = ModelSpec(block_counts=(1, 1, 1), groups=("conv",) * 3,
                      stem="conv_stem", width_multiplier=0.25, num_classes=10,
                      input_resolution=32, small_input=True)
attn_spec = ModelSpec(block_counts=(1, 1, 1), groups=("attention",) * 3,
                      stem="attention_stem", width_multiplier=0.25, k=5,
                      heads=4, encoding_mode="relative", num_classes=10,
                      input_resolution=32)

conv_model = build_model(conv_spec, seed=0)
attn_model = build_model(attn_spec, seed=0)

print("spatial operator census")
print(f"{'':<16s} {'conv net':>9s} {'attention net':>14s}")
conv_census, attn_census = conv_model.census(), attn_model.census()
for key in sorted(set(conv_census) | set(attn_census)):
    print(f"{key:<16s} {conv_census.get(key, 0):>9d} {attn_census.get(key, 0):>14d}")

# Both nets take the same input and emit the same logits shape.
x = np.random.default_rng(1).standard_normal((2, 3, 32, 32)).astype(np.float32)
for name, model in (("conv", conv_model), ("attention", attn_model)):
    logits, _ = model.forward(x, training=False)
    total = sum(p.size for p in model.params.values())
    print(f"\n{name}: logits {logits.shape}, {total:,} parameters")

# Mixed networks are one spec away: convolve early, attend late.
hybrid = ModelSpec(block_counts=(1, 1, 1), groups=("conv", "attention", "attention"),
                   stem="conv_stem", width_multiplier=0.25, k=5, heads=4,
                   encoding_mode="relative", num_classes=10, input_resolution=32,
                   small_input=True)
print("\nhybrid census:", build_model(hybrid, seed=0).census())
