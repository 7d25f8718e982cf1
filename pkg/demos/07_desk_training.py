"""
A complete training run at desk scale
=====================================

Everything end to end on a problem small enough to watch: a fully
attentional network, Nesterov momentum under a warmup-into-cosine schedule,
label smoothing, parameter EMA shadows, and per-epoch metric rows. The
synthetic task here is linearly separable (class = brightness shift), so a
healthy pipeline drives validation accuracy to 1.0 in under a minute.
"""

from localattn import DatasetSource, ModelSpec, TrainConfig, train_loop

spec = ModelSpec(block_counts=(1,), groups=("attention",),
                 stem="attention_stem", width_multiplier=0.125, k=3, heads=2,
                 encoding_mode="relative", num_classes=2, input_resolution=32)
source = DatasetSource(kind="synthetic", task="separable", size=240, seed=0)
config = TrainConfig(epochs=6, batch_size=64, peak_lr=0.05, warmup_epochs=1.0,
                     label_smoothing=0.1, augment=False, seed=0)

history = train_loop(spec, source, config, log=lambda msg: print("  " + msg))

print("\nmetric rows (epoch,step,lr,loss,val_acc):")
for line in history.csv_lines():
    print("  " + line)
print(f"\nfinal weights:  val_acc {history.final_val_acc:.3f}")
print(f"EMA shadow:     val_acc {history.ema_val_acc:.3f}")

# The interesting experiment is the ordering task, where ten classes pair up
# into rotations and a model without positional encoding is provably capped
# near 50% while relative encoding learns the ordering bit. It needs about
# a hundred optimizer steps to separate, so it ships as a config instead:
#
#   python3 -m localattn.cli train --config configs/desk_blocks.cfg --seed 0
#
# and the acceptance suite runs the three-seed relative-vs-none comparison.
