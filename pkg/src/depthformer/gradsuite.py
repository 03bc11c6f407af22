"""Finite-difference verification of every parameterised operation.

Each case builds a small random instance and reduces the op output to a
scalar through a fixed random probe, so gradients are generic.  Deformable
attention heads get random (non-zero) offset and weight heads so sample
points sit off the integer lattice where bilinear reads are smooth.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .conv_branch import ConvBranch, ConvStemConfig, encode_conv
from .decoder import Decoder, DecoderConfig, LossConfig, decode, silog_loss
from .deform_attn import DeformAttention, LevelIndexMap, deform_cross_attention, deform_self_attention
from .depthmap import DepthMap
from .gradcheck import GradCheckReport, check_gradients
from .hahi import Hahi, HahiConfig, hahi_forward
from .model import DepthFormer, ModelConfig
from .swin import BranchConfig, PatchMerge, TransformerLayer, WindowAttention, patch_merge, transformer_layer, window_msa
from .tensor import Parameter, Tensor

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict[str, Tensor]]]


def _leaf(rng, *shape, scale=1.0) -> Parameter:
    return Parameter(rng.normal(0.0, scale, shape))


def _probe(out: Tensor, r: np.ndarray) -> Tensor:
    return (out * r).sum()


def _params(module, **inputs) -> dict[str, Tensor]:
    out = dict(inputs)
    out.update(module.named_parameters())
    return out


def _jitter(module, rng, scale=0.1) -> None:
    """Perturb every parameter so no gradient is structurally zero (e.g. LayerNorm gain/shift at init)."""
    for _, p in module.named_parameters():
        p.data += rng.normal(0.0, scale, p.shape)


def _randomise_heads(attn: DeformAttention, rng) -> None:
    attn.offset_head.weight.data[...] = rng.normal(0.0, 0.3, attn.offset_head.weight.shape)
    attn.offset_head.bias.data[...] = rng.uniform(-1.5, 1.5, attn.offset_head.bias.shape)
    attn.weight_head.weight.data[...] = rng.normal(0.0, 0.5, attn.weight_head.weight.shape)
    attn.weight_head.bias.data[...] = rng.normal(0.0, 0.5, attn.weight_head.bias.shape)


def case_window_msa(rng):
    c, heads = 8, 2
    h, w = rng.choice([4, 8], size=2)
    window, shift = 4, bool(rng.integers(2))
    attn = WindowAttention(c, heads, rng)
    x = _leaf(rng, c, h, w)
    r = rng.normal(size=(c, h, w))
    return (lambda: _probe(window_msa(x, attn, window, shift), r)), _params(attn, x=x)


def case_transformer_layer(rng):
    c = 8
    h, w = rng.choice([4, 8], size=2)
    layer = TransformerLayer(c, 2, 2, shift=bool(rng.integers(2)), rng=rng)
    _jitter(layer, rng)
    x = _leaf(rng, c, h, w)
    r = rng.normal(size=(c, h, w))
    return (lambda: _probe(transformer_layer(x, layer, 4), r)), _params(layer, x=x)


def case_patch_merge(rng):
    c = int(rng.choice([4, 8]))
    merge = PatchMerge(c, rng)
    _jitter(merge, rng)
    x = _leaf(rng, c, 4, 6)
    r = rng.normal(size=(2 * c, 2, 3))
    return (lambda: _probe(patch_merge(x, merge), r)), _params(merge, x=x)


def case_encode_conv(rng):
    branch = ConvBranch(ConvStemConfig(channels=4), rng)
    _jitter(branch, rng)
    x = _leaf(rng, 3, 8, 8)
    r = rng.normal(size=(4, 2, 2))
    return (lambda: _probe(encode_conv(x, branch), r)), _params(branch, x=x)


def _pyramid_shapes(rng):
    return [(4, 4), (2, 2)] if rng.integers(2) else [(4, 6), (2, 3), (1, 2)]


def case_deform_self_attention(rng):
    shapes = _pyramid_shapes(rng)
    c, heads, points = 8, int(rng.choice([1, 2])), int(rng.choice([1, 3]))
    attn = DeformAttention(c, heads, len(shapes), points, rng)
    _randomise_heads(attn, rng)
    lvmap = LevelIndexMap.from_shapes(shapes)
    x = _leaf(rng, lvmap.n_rows, c)
    emb = _leaf(rng, len(shapes), c, scale=0.5)
    r = rng.normal(size=(lvmap.n_rows, c))
    f = lambda: _probe(deform_self_attention(x, lvmap, emb, attn), r)  # noqa: E731
    return f, _params(attn, x=x, level_embed=emb)


def case_deform_cross_attention(rng):
    shapes = _pyramid_shapes(rng)
    c, heads, points, q = 8, int(rng.choice([1, 2])), int(rng.choice([1, 3])), 5
    attn = DeformAttention(c, heads, len(shapes), points, rng, predict_reference=True)
    _randomise_heads(attn, rng)
    lvmap = LevelIndexMap.from_shapes(shapes)
    queries = _leaf(rng, q, c)
    x_hat = _leaf(rng, lvmap.n_rows, c)
    r = rng.normal(size=(q, c))
    f = lambda: _probe(deform_cross_attention(queries, x_hat, lvmap, attn), r)  # noqa: E731
    return f, _params(attn, queries=queries, x_hat=x_hat)


def case_hahi_forward(rng):
    chans = (4, 8)
    p = Hahi(HahiConfig(chans, conv_channels=4, heads=2, points=2), rng)
    _randomise_heads(p.dsa, rng)
    _randomise_heads(p.dca, rng)
    feats = [_leaf(rng, 4, 4, 4), _leaf(rng, 8, 2, 2)]
    g = _leaf(rng, 4, 4, 4)
    rf = [rng.normal(size=f.shape) for f in feats]
    rg = rng.normal(size=g.shape)

    def f():
        fo, go = hahi_forward(feats, g, p)
        total = _probe(go, rg)
        for t, r in zip(fo, rf):
            total = total + _probe(t, r)
        return total

    return f, _params(p, f0=feats[0], f1=feats[1], g=g)


def case_decode(rng):
    chans = (4, 8)
    dec = Decoder(chans, 3, DecoderConfig(channels=(4, 4)), rng)
    _jitter(dec, rng)
    feats = [_leaf(rng, 4, 4, 4), _leaf(rng, 8, 2, 2)]
    g = _leaf(rng, 3, 4, 4)
    r = rng.normal(size=(1, 8, 8))
    return (lambda: _probe(decode(feats, g, dec), r)), _params(dec, f0=feats[0], f1=feats[1], g=g)


def case_silog_loss(rng):
    h, w = 4, 5
    gt_vals = rng.uniform(1.0, 10.0, (h, w))
    valid = rng.random((h, w)) < 0.7
    valid[0, 0] = True
    gt = DepthMap(gt_vals, valid)
    pred = Parameter(gt_vals * np.exp(rng.normal(0.0, 0.3, (h, w))))
    cfg = LossConfig(lam=float(rng.choice([0.0, 0.5, 0.85])), alpha=10.0)
    return (lambda: silog_loss(pred, gt, cfg)), {"pred": pred}


def tiny_model_config() -> ModelConfig:
    return ModelConfig.variant(
        "+CB+HAHI",
        branch=BranchConfig(patch_size=4, embed_dim=8, depths=(2, 2), window_size=4, num_heads=(2, 2), out_levels=2),
        conv=ConvStemConfig(channels=4),
        decoder=DecoderConfig(channels=(4, 4)),
        heads=2,
        points=2,
    )


def case_end_to_end(rng):
    """Whole network, image to depth, on a 3×32×32 input."""
    model = DepthFormer(tiny_model_config(), seed=int(rng.integers(1 << 30)))
    _jitter(model, rng, scale=0.05)
    _randomise_heads(model.hahi.dsa, rng)
    _randomise_heads(model.hahi.dca, rng)
    img = _leaf(rng, 3, 32, 32, scale=0.5)
    gt = DepthMap.dense(rng.uniform(1.0, 10.0, (32, 32)))
    f = lambda: silog_loss(model.predict(img), gt)  # noqa: E731
    return f, _params(model, image=img)


CASES: dict[str, Case] = {
    "transformer_layer": case_transformer_layer,
    "window_msa": case_window_msa,
    "patch_merge": case_patch_merge,
    "encode_conv": case_encode_conv,
    "deform_self_attention": case_deform_self_attention,
    "deform_cross_attention": case_deform_cross_attention,
    "hahi_forward": case_hahi_forward,
    "decode": case_decode,
    "silog_loss": case_silog_loss,
    "end_to_end": case_end_to_end,
}


@dataclass
class SuiteResult:
    name: str
    instance: int
    report: GradCheckReport
    seconds: float


def run_suite(
    instances: int = 3,
    seed: int = 0,
    max_entries: int | None = 24,
    h: float = 1e-6,
    tol: float = 1e-5,
    only=None,
) -> list[SuiteResult]:
    results = []
    for name, case in CASES.items():
        if only and name not in only:
            continue
        for i in range(instances):
            rng = np.random.default_rng([seed, i, sum(map(ord, name))])
            t0 = time.perf_counter()
            f, params = case(rng)
            rep = check_gradients(f, params, h=h, tol=tol, max_entries=max_entries, rng=rng)
            results.append(SuiteResult(name, i, rep, time.perf_counter() - t0))
    return results


def summarize(results: list[SuiteResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.report.passed else "FAIL"
        lines.append(f"{status} {r.name}[{r.instance}] max_rel_err={r.report.max_error:.3e} ({r.seconds:.1f}s)")
        if not r.report.passed:
            bad = {k: v for k, v in r.report.errors.items() if v > r.report.tol}
            lines += [f"    {k}: {v:.3e}" for k, v in bad.items()]
            lines += [f"    {msg}" for msg in r.report.failures]
    return "\n".join(lines)
