"""Symbolic FLOP and parameter ledger for any ModelSpec.

Nothing here runs a network: the ledger walks the same structure build_model
would create and prices each layer with closed-form counts, so reports are
instantaneous at any resolution.

Accounting convention "macx2-v1" (stamped on every report):
  - one multiply-accumulate = 2 FLOPs,
  - softmax, pooling, and batch norm = 5 FLOPs per element (logits for
    softmax, outputs for pooling, inputs for norm),
  - ReLU and residual additions uncounted,
  - batch size 1.
Relative-position and stem-embedding tables are priced under `positional`
parameters, separate from the transform parameters whose count is independent
of the spatial extent.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import EXPANSION, ModelSpec

CONVENTION = "macx2-v1"


@dataclass
class CostEntry:
    name: str
    params: int
    positional_params: int
    flops: int
    output_shape: tuple


@dataclass
class CostReport:
    convention: str
    entries: list[CostEntry]

    @property
    def total_params(self) -> int:
        return sum(e.params + e.positional_params for e in self.entries)

    @property
    def total_transform_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_positional_params(self) -> int:
        return sum(e.positional_params for e in self.entries)

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.entries)

    def table(self) -> str:
        lines = [
            f"convention: {self.convention}",
            f"{'layer':<36s} {'params':>12s} {'positional':>11s} {'flops':>16s}  output",
            "-" * 96,
        ]
        for e in self.entries:
            shape = "x".join(str(v) for v in e.output_shape)
            lines.append(f"{e.name:<36s} {e.params:>12d} {e.positional_params:>11d} "
                         f"{e.flops:>16d}  {shape}")
        lines.append("-" * 96)
        lines.append(f"{'total':<36s} {self.total_transform_params:>12d} "
                     f"{self.total_positional_params:>11d} {self.total_flops:>16d}")
        lines.append(f"params (M): {self.total_params / 1e6:.2f}   "
                     f"flops (G): {self.total_flops / 1e9:.2f}")
        return "\n".join(lines)

    def records(self) -> list[dict]:
        return [
            {"name": e.name, "params": e.params, "positional_params": e.positional_params,
             "flops": e.flops, "output_shape": list(e.output_shape)}
            for e in self.entries
        ]


def _conv_entry(name, d_in, d_out, k, stride, h, w):
    h_out, w_out = -(-h // stride), -(-w // stride)
    params = k * k * d_in * d_out
    flops = 2 * k * k * d_in * d_out * h_out * w_out
    return CostEntry(name, params, 0, flops, (d_out, h_out, w_out)), h_out, w_out


def _bn_entry(name, channels, h, w):
    return CostEntry(name, 2 * channels, 0, 5 * channels * h * w, (channels, h, w))


def attention_unit_costs(d_in: int, d_out: int, k: int, heads: int, mode: str):
    """(params, positional params, flops per pixel) for one attention layer."""
    transforms = 2 if mode == "relative_only" else 3
    params = transforms * d_in * d_out
    positional = 2 * (2 * k - 1) * (d_out // heads) // 2 if mode in (
        "relative", "relative_only") else 0
    per_pixel = 2 * transforms * d_in * d_out
    logit_terms = 0
    if mode != "relative_only":
        logit_terms += 1                        # content q.k
    if mode in ("relative", "relative_only"):
        logit_terms += 1                        # positional q.r
    per_pixel += 2 * k * k * d_out * logit_terms
    per_pixel += 2 * k * k * d_out              # value aggregation
    per_pixel += 5 * heads * k * k              # softmax over the window
    if mode == "absolute":
        per_pixel += d_in                       # position signal addition
    return params, positional, per_pixel


def _attention_entry(name, d_in, d_out, k, heads, mode, h, w):
    params, positional, per_pixel = attention_unit_costs(d_in, d_out, k, heads, mode)
    return CostEntry(name, params, positional, per_pixel * h * w, (d_out, h, w))


def _stem_attention_entries(name, d_in, d_out, mixtures, d_emb, heads, h, w):
    window = 4
    params = (2 + mixtures) * d_in * d_out
    positional = 2 * window * d_emb + mixtures * d_emb
    per_pixel = 2 * (2 + 1) * d_in * d_out          # Q, K, mixed value transform
    per_pixel += 2 * window * window * d_out        # block logits
    per_pixel += 2 * window * window * d_out        # aggregation
    per_pixel += 5 * heads * window * window        # softmax
    flops = per_pixel * h * w
    # forming the 16 mixed value matrices and their mixture weights, per image
    flops += 2 * window * window * mixtures * d_out * d_in
    flops += 2 * window * window * mixtures * d_emb + 5 * window * window * mixtures
    entries = [CostEntry(name, params, positional, flops, (d_out, h, w)),
               _bn_entry(name + ".norm", d_out, h, w)]
    h, w = h // window, w // window
    entries.append(CostEntry(name + ".pool", 0, 0, 5 * d_out * h * w, (d_out, h, w)))
    return entries, h, w


def ledger(spec: ModelSpec, resolution: int | None = None) -> CostReport:
    """Per-layer cost entries for the network the spec describes."""
    res = resolution or spec.input_resolution
    h = w = res
    widths = spec.widths
    entries: list[CostEntry] = []

    if spec.stem == "conv_stem":
        e, h, w = _conv_entry("stem.conv", 3, widths[0], 7, 2, h, w)
        entries.append(e)
        entries.append(_bn_entry("stem.norm", widths[0], h, w))
        if not spec.small_input:
            h, w = -(-h // 2), -(-w // 2)
            entries.append(CostEntry("stem.pool", 0, 0, 5 * widths[0] * h * w,
                                     (widths[0], h, w)))
    else:
        stem_entries, h, w = _stem_attention_entries(
            "stem.attn", 3, widths[0], spec.stem_mixtures, spec.stem_d_emb, 4, h, w)
        entries.extend(stem_entries)

    d_in = widths[0]
    for g, (count, mid, tag) in enumerate(zip(spec.block_counts, widths, spec.groups)):
        d_out = EXPANSION * mid
        for b in range(count):
            downsample = g > 0 and b == 0
            prefix = f"group{g + 1}.block{b}"
            e, h, w = _conv_entry(f"{prefix}.main.reduce", d_in, mid, 1, 1, h, w)
            entries.append(e)
            entries.append(_bn_entry(f"{prefix}.main.norm1", mid, h, w))
            if tag == "conv":
                stride = 2 if downsample else 1
                e, h2, w2 = _conv_entry(f"{prefix}.main.spatial", mid, mid, 3, stride, h, w)
                entries.append(e)
            else:
                entries.append(_attention_entry(
                    f"{prefix}.main.spatial", mid, mid, spec.k, spec.heads,
                    spec.encoding_mode, h, w))
                h2, w2 = h, w
                if downsample:
                    h2, w2 = -(-h // 2), -(-w // 2)
                    entries.append(CostEntry(f"{prefix}.main.downsample", 0, 0,
                                             5 * mid * h2 * w2, (mid, h2, w2)))
            entries.append(_bn_entry(f"{prefix}.main.norm2", mid, h2, w2))
            e, _, _ = _conv_entry(f"{prefix}.main.expand", mid, d_out, 1, 1, h2, w2)
            entries.append(e)
            entries.append(_bn_entry(f"{prefix}.main.norm3", d_out, h2, w2))
            if d_in != d_out or downsample:
                if downsample and tag == "attention":
                    entries.append(CostEntry(f"{prefix}.shortcut.pool", 0, 0,
                                             5 * d_in * h2 * w2, (d_in, h2, w2)))
                    e, _, _ = _conv_entry(f"{prefix}.shortcut.proj", d_in, d_out, 1, 1, h2, w2)
                else:
                    stride = 2 if downsample else 1
                    e, _, _ = _conv_entry(f"{prefix}.shortcut.proj", d_in, d_out, 1,
                                          stride, h, w)
                entries.append(e)
                entries.append(_bn_entry(f"{prefix}.shortcut.norm", d_out, h2, w2))
            h, w = h2, w2
            d_in = d_out

    entries.append(CostEntry("head.pool", 0, 0, 5 * d_in * h * w, (d_in, 1, 1)))
    entries.append(CostEntry("head.fc", d_in * spec.num_classes + spec.num_classes, 0,
                             2 * d_in * spec.num_classes + spec.num_classes,
                             (spec.num_classes,)))
    return CostReport(CONVENTION, entries)


def _as_spec(model_or_spec) -> ModelSpec:
    return model_or_spec if isinstance(model_or_spec, ModelSpec) else model_or_spec.spec


def count_params(model_or_spec) -> CostReport:
    """Parameter ledger; FLOPs are included at the spec's input resolution."""
    return ledger(_as_spec(model_or_spec))


def count_flops(model_or_spec, input_resolution: int | None = None) -> CostReport:
    """FLOP ledger at the given resolution (defaults to the spec's)."""
    return ledger(_as_spec(model_or_spec), input_resolution)


@dataclass
class ParityReport:
    """Per-pixel cost comparison between one conv layer and an attention
    extent sweep at equal channel count."""

    d: int
    conv_k: int
    conv_flops_per_pixel: int
    attention_flops_per_pixel: dict[int, int]
    best_k: int

    def ratio(self, k: int) -> float:
        return self.conv_flops_per_pixel / self.attention_flops_per_pixel[k]


def conv_flops_per_pixel(d_in: int, d_out: int, k: int) -> int:
    return 2 * k * k * d_in * d_out


def cost_parity(d: int, conv_k: int, heads: int = 8, mode: str = "relative",
                sweep=range(3, 27, 2)) -> ParityReport:
    """Find the attention extent whose per-pixel cost best matches a conv."""
    conv = conv_flops_per_pixel(d, d, conv_k)
    attn = {k: attention_unit_costs(d, d, k, heads, mode)[2] for k in sweep}
    best = min(attn, key=lambda k: abs(attn[k] - conv))
    return ParityReport(d, conv_k, conv, attn, best)
