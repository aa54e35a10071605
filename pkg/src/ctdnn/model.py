"""Architecture description language, network assembly, whole-model passes.

Grammar (layers separated by "|"):

    layer ::= "td(L:R)xH" | "ctd(L:R[,L:R]*)xH" | "ctd(L:R)*NxH"
            | "sp" | "sc" | "fc(N)" | "fc(@classes)" | "softmax"

Presets "tdnn-paper" and "ctdnn-paper" expand to the two reference stacks with
a configurable hidden width.  Every time-delay layer batch-normalizes its
input, applies the affine scan, then ReLU; hidden FC layers apply ReLU, the
final (classifier) FC does not.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArchSemanticError,
    ArchSyntaxError,
    CacheError,
    FormatError,
    SequenceTooShortError,
    ShapeError,
    ValidationError,
)
from .layers import (
    BatchNormState,
    ContextWindow,
    TimeDelayUnit,
    bn_backward,
    bn_forward,
    fc_backward,
    fc_forward,
    init_batchnorm,
    relu,
    relu_backward,
    sc_backward,
    sc_forward,
    softmax_ce,
    sp_backward,
    sp_forward,
    td_backward_multi,
    td_forward_multi,
)
from .numcore import make_rng

MODEL_MAGIC = b"CTDM"
MODEL_VERSION = 1

_DELAY_KINDS = ("td", "ctd")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    contexts: tuple[ContextWindow, ...] = ()
    width: int | None = None
    from_classes: bool = False


@dataclass(frozen=True)
class ModelConfig:
    layers: tuple[LayerSpec, ...]
    input_dim: int
    num_classes: int
    embed_tap: int  # index of the sp/sc layer


@dataclass
class DelayLayerParams:
    """One td/ctd layer: batch norm per incoming branch, then the units."""

    bns: list[BatchNormState]
    units: list[TimeDelayUnit]


@dataclass
class FcLayerParams:
    weights: np.ndarray
    bias: np.ndarray
    activation: bool  # ReLU after the affine map


@dataclass
class Model:
    config: ModelConfig
    layers: list  # DelayLayerParams | FcLayerParams | None, one per LayerSpec
    seed: int

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Trainable arrays (weights, biases, BN gamma/beta) in topology order."""
        out = []
        for li, params in enumerate(self.layers):
            if isinstance(params, DelayLayerParams):
                for bi, bn in enumerate(params.bns):
                    out.append((f"L{li}.bn{bi}.gamma", bn.gamma))
                    out.append((f"L{li}.bn{bi}.beta", bn.beta))
                for ui, unit in enumerate(params.units):
                    out.append((f"L{li}.unit{ui}.weights", unit.weights))
                    out.append((f"L{li}.unit{ui}.bias", unit.bias))
            elif isinstance(params, FcLayerParams):
                out.append((f"L{li}.fc.weights", params.weights))
                out.append((f"L{li}.fc.bias", params.bias))
        return out

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        """Non-trainable running statistics, in topology order."""
        out = []
        for li, params in enumerate(self.layers):
            if isinstance(params, DelayLayerParams):
                for bi, bn in enumerate(params.bns):
                    out.append((f"L{li}.bn{bi}.running_mean", bn.running_mean))
                    out.append((f"L{li}.bn{bi}.running_var", bn.running_var))
        return out


# ---------------------------------------------------------------------------
# parsing

_TD_RE = re.compile(r"td\((-?\d+):(-?\d+)\)x(\d+)\Z")
_CTD_LIST_RE = re.compile(r"ctd\((-?\d+:-?\d+(?:,-?\d+:-?\d+)*)\)x(\d+)\Z")
_CTD_REPL_RE = re.compile(r"ctd\((-?\d+):(-?\d+)\)\*(\d+)x(\d+)\Z")
_FC_RE = re.compile(r"fc\((\d+|@classes)\)\Z")
_CTX_RE = re.compile(r"(-?\d+):(-?\d+)\Z")


def expand_preset(name: str, width: int) -> str:
    """Expand a named preset into its DSL text at hidden width `width`."""
    if width < 1:
        raise ValidationError(f"preset width must be >= 1, got {width}")
    if name == "tdnn-paper":
        tds = " | ".join(f"td({c})x{width}" for c in ("-2:2", "-1:2", "-3:3", "-7:2"))
        return f"{tds} | sp | fc({2 * width}) | fc(@classes) | softmax"
    if name == "ctdnn-paper":
        return (
            f"ctd(-4:4,-2:2,-1:1)x{width} | ctd(-1:1)*3x{width} | sc"
            f" | fc({2 * width}) | fc(@classes) | softmax"
        )
    raise ValidationError(f"unknown preset '{name}'")


PRESET_NAMES = ("tdnn-paper", "ctdnn-paper")


def parse_arch(text: str, input_dim: int, num_classes: int, width: int = 512) -> ModelConfig:
    """Parse a DSL string (or preset name) into a validated ModelConfig.

    `width` only matters when `text` is a preset name.  Raises ArchSyntaxError
    with the failing position, or ArchSemanticError naming the violated rule.
    """
    if input_dim < 1 or num_classes < 2:
        raise ValidationError(
            f"need input_dim >= 1 and num_classes >= 2, got {input_dim}/{num_classes}"
        )
    if text.strip() in PRESET_NAMES:
        text = expand_preset(text.strip(), width)

    specs: list[LayerSpec] = []
    offset = 0
    for raw in text.split("|"):
        start = offset + (len(raw) - len(raw.lstrip()))
        specs.append(_parse_layer(raw.strip(), start, num_classes))
        offset += len(raw) + 1
    _validate(specs, num_classes)
    tap = next(i for i, s in enumerate(specs) if s.kind in ("sp", "sc"))
    return ModelConfig(tuple(specs), input_dim, num_classes, tap)


def _parse_layer(seg: str, pos: int, num_classes: int) -> LayerSpec:
    if seg in ("sp", "sc", "softmax"):
        return LayerSpec(kind=seg)
    if seg.startswith("td"):
        m = _TD_RE.match(seg)
        if not m:
            raise ArchSyntaxError(pos, "td(L:R)xH")
        return LayerSpec("td", (_ctx(m.group(1), m.group(2), pos),), int(m.group(3)))
    if seg.startswith("ctd"):
        m = _CTD_REPL_RE.match(seg)
        if m:
            ctx = _ctx(m.group(1), m.group(2), pos)
            return LayerSpec("ctd", (ctx,) * int(m.group(3)), int(m.group(4)))
        m = _CTD_LIST_RE.match(seg)
        if not m:
            raise ArchSyntaxError(pos, "ctd(L:R[,L:R]*)xH or ctd(L:R)*NxH")
        contexts = []
        for part in m.group(1).split(","):
            cm = _CTX_RE.match(part)
            contexts.append(_ctx(cm.group(1), cm.group(2), pos))
        return LayerSpec("ctd", tuple(contexts), int(m.group(2)))
    if seg.startswith("fc"):
        m = _FC_RE.match(seg)
        if not m:
            raise ArchSyntaxError(pos, "fc(N) or fc(@classes)")
        if m.group(1) == "@classes":
            return LayerSpec("fc", width=num_classes, from_classes=True)
        return LayerSpec("fc", width=int(m.group(1)))
    raise ArchSyntaxError(pos, "one of td/ctd/sp/sc/fc/softmax")


def _ctx(left: str, right: str, pos: int) -> ContextWindow:
    l, r = int(left), int(right)
    if l > r:
        raise ArchSemanticError("context-order", f"context [{l},{r}] has left > right")
    return ContextWindow(l, r)


def _validate(specs: list[LayerSpec], num_classes: int) -> None:
    if not specs:
        raise ArchSemanticError("empty-arch", "architecture has no layers")
    for s in specs:
        if s.kind in _DELAY_KINDS + ("fc",) and (s.width is None or s.width < 1):
            raise ArchSemanticError("positive-width", f"{s.kind} width must be >= 1")
    pooling = [i for i, s in enumerate(specs) if s.kind in ("sp", "sc")]
    if len(pooling) != 1:
        raise ArchSemanticError("one-pooling-layer", f"found {len(pooling)} sp/sc layers")
    tap = pooling[0]
    if not any(s.kind in _DELAY_KINDS for s in specs[:tap]):
        raise ArchSemanticError(
            "pooling-requires-delay-layer", "pooling precedes any td/ctd layer"
        )
    prev = specs[tap - 1].kind
    if specs[tap].kind == "sp" and prev != "td":
        raise ArchSemanticError("sp-follows-td", f"sp preceded by {prev}")
    if specs[tap].kind == "sc" and prev != "ctd":
        raise ArchSemanticError("sc-follows-ctd", f"sc preceded by {prev}")
    for i, s in enumerate(specs):
        if s.kind in _DELAY_KINDS and i > tap:
            raise ArchSemanticError("delay-before-pooling", f"layer {i} comes after pooling")
        if s.kind == "fc" and i < tap:
            raise ArchSemanticError("fc-after-pooling", f"fc at layer {i} precedes pooling")
        if s.kind == "softmax" and i != len(specs) - 1:
            raise ArchSemanticError("softmax-last", f"softmax at layer {i} is not final")
    if len(specs) < 2 or specs[-1].kind != "softmax" or specs[-2].kind != "fc":
        raise ArchSemanticError("tail-fc-softmax", "architecture must end with fc | softmax")
    fcs = [i for i, s in enumerate(specs) if s.kind == "fc"]
    for i in fcs[:-1]:
        if specs[i].from_classes:
            raise ArchSemanticError("classifier-last", f"fc(@classes) at layer {i} is not final")
    if specs[fcs[-1]].width != num_classes:
        raise ArchSemanticError(
            "classifier-width",
            f"final fc width {specs[fcs[-1]].width} must equal num_classes {num_classes}",
        )
    # branch bookkeeping: td keeps a single branch, ctd may fan out or map 1:1
    branches = 1
    for i, s in enumerate(specs[:tap]):
        if s.kind == "td":
            if branches != 1:
                raise ArchSemanticError("td-single-branch", f"td at layer {i} gets {branches} branches")
        elif s.kind == "ctd":
            n = len(s.contexts)
            if branches not in (1, n):
                raise ArchSemanticError(
                    "ctd-branch-mismatch", f"ctd at layer {i} has {n} units for {branches} branches"
                )
            branches = n
    if specs[tap].kind == "sp" and branches != 1:
        raise ArchSemanticError("sp-single-branch", f"sp gets {branches} branches")


def render_arch(config: ModelConfig) -> str:
    """Canonical DSL text for a config; parse(render(c)) == c."""
    parts = []
    for s in config.layers:
        if s.kind == "td":
            parts.append(f"td({s.contexts[0]})x{s.width}")
        elif s.kind == "ctd":
            if len(s.contexts) > 1 and len(set(s.contexts)) == 1:
                parts.append(f"ctd({s.contexts[0]})*{len(s.contexts)}x{s.width}")
            else:
                parts.append(f"ctd({','.join(map(str, s.contexts))})x{s.width}")
        elif s.kind == "fc":
            parts.append("fc(@classes)" if s.from_classes else f"fc({s.width})")
        else:
            parts.append(s.kind)
    return " | ".join(parts)


# ---------------------------------------------------------------------------
# assembly

def _branch_dims(config: ModelConfig) -> list[list[int]]:
    """Feature dims of each branch entering every layer (index i = input of layer i)."""
    dims = [config.input_dim]
    out = []
    for s in config.layers:
        out.append(list(dims))
        if s.kind == "td":
            dims = [s.width]
        elif s.kind == "ctd":
            dims = [s.width] * len(s.contexts)
        elif s.kind == "sp":
            dims = [2 * dims[0]]
        elif s.kind == "sc":
            dims = [sum(2 * d for d in dims)]
        elif s.kind == "fc":
            dims = [s.width]
    return out


def param_count(config: ModelConfig) -> int:
    """Exact count of trainable scalars (unit weights/biases, fc, BN gamma/beta)."""
    total = 0
    for s, in_dims in zip(config.layers, _branch_dims(config)):
        if s.kind in _DELAY_KINDS:
            bn_dims = in_dims if len(in_dims) > 1 else [in_dims[0]]
            total += sum(2 * d for d in bn_dims)
            for j, ctx in enumerate(s.contexts):
                d_in = in_dims[j] if len(in_dims) > 1 else in_dims[0]
                total += s.width * ctx.span * d_in + s.width
        elif s.kind == "fc":
            total += s.width * in_dims[0] + s.width
    return total


def build_model(config: ModelConfig, seed: int) -> Model:
    """Assemble a parameterized network; deterministic for a fixed seed.

    Weights are uniform in [-b, b] with b = sqrt(6 / (fan_in + fan_out)),
    biases zero, BN gamma 1 / beta 0.
    """
    if seed < 0:
        raise ValidationError(f"seed must be nonnegative, got {seed}")
    rng = make_rng(seed)
    layers: list = []
    for s, in_dims in zip(config.layers, _branch_dims(config)):
        if s.kind in _DELAY_KINDS:
            shared = len(in_dims) == 1
            bns = [init_batchnorm(d) for d in in_dims]
            units = []
            for j, ctx in enumerate(s.contexts):
                d_in = in_dims[0] if shared else in_dims[j]
                fan_in = ctx.span * d_in
                bound = np.sqrt(6.0 / (fan_in + s.width))
                w = rng.uniform(-bound, bound, size=(s.width, fan_in))
                units.append(TimeDelayUnit(ctx, w, np.zeros(s.width)))
            layers.append(DelayLayerParams(bns, units))
        elif s.kind == "fc":
            bound = np.sqrt(6.0 / (in_dims[0] + s.width))
            w = rng.uniform(-bound, bound, size=(s.width, in_dims[0]))
            layers.append(FcLayerParams(w, np.zeros(s.width), activation=not s.from_classes))
        else:
            layers.append(None)
    model = Model(config, layers, seed)
    assert sum(a.size for _, a in model.parameters()) == param_count(config)
    return model


# ---------------------------------------------------------------------------
# forward / backward

def _frames_of(x) -> np.ndarray:
    return np.asarray(getattr(x, "frames", x), dtype=np.float64)


def _set_mode(model: Model, mode: str) -> None:
    for params in model.layers:
        if isinstance(params, DelayLayerParams):
            for bn in params.bns:
                bn.mode = mode


def forward_batch(
    model: Model,
    xs: list,
    mode: str = "train",
    update_running: bool = True,
    stop_at: int | None = None,
):
    """Propagate a batch of sequences; returns (per-sequence outputs, cache).

    Batch norm pools statistics over all frames of all sequences in train
    mode, which is why training consumes whole batches.  With `stop_at`, the
    pass ends after that layer index and returns its outputs.
    """
    if mode not in ("train", "infer"):
        raise ValidationError(f"mode must be 'train' or 'infer', got '{mode}'")
    xs = [_frames_of(x) for x in xs]
    for x in xs:
        if x.ndim != 2 or x.shape[1] != model.config.input_dim:
            raise ShapeError(
                f"input shape {x.shape} does not match model input dim {model.config.input_dim}"
            )
    _set_mode(model, mode)
    n = len(xs)
    branches: list[list[np.ndarray]] = [[x] for x in xs]
    vectors: list[np.ndarray] = [None] * n
    layer_caches = []
    for li, (spec, params) in enumerate(zip(model.config.layers, model.layers)):
        try:
            if spec.kind in _DELAY_KINDS:
                n_units = len(params.units)
                shared = len(params.bns) == 1  # single-branch input read by every unit
                if shared:
                    normed, bn_cache = bn_forward(
                        params.bns[0], [b[0] for b in branches], update_running
                    )
                    normed_by_branch = [normed]
                    bn_caches = [bn_cache]
                else:
                    normed_by_branch, bn_caches = [], []
                    for bi, bn in enumerate(params.bns):
                        nb, c = bn_forward(bn, [b[bi] for b in branches], update_running)
                        normed_by_branch.append(nb)
                        bn_caches.append(c)
                zs, td_caches = [], []  # per unit
                for ui, unit in enumerate(params.units):
                    inp = normed_by_branch[0] if shared else normed_by_branch[ui]
                    z, td_cache = td_forward_multi(unit, inp)
                    zs.append(z)
                    td_caches.append(td_cache)
                branches = [[relu(zs[ui][s]) for ui in range(n_units)] for s in range(n)]
                layer_caches.append((bn_caches, td_caches, zs, shared))
            elif spec.kind == "sp":
                inputs = [b[0] for b in branches]
                vectors = [sp_forward(x) for x in inputs]
                layer_caches.append(inputs)
            elif spec.kind == "sc":
                inputs = [list(b) for b in branches]
                vectors = [sc_forward(b) for b in inputs]
                layer_caches.append(inputs)
            elif spec.kind == "fc":
                inputs = list(vectors)
                zs = [fc_forward(params.weights, params.bias, v) for v in inputs]
                vectors = [relu(z) for z in zs] if params.activation else list(zs)
                layer_caches.append((inputs, zs))
            else:  # softmax marker: loss layer lives in softmax_ce
                layer_caches.append(None)
        except SequenceTooShortError as e:
            raise SequenceTooShortError(f"layer {li} ({spec.kind}): {e}") from None
        if stop_at is not None and li == stop_at:
            out = vectors if spec.kind not in _DELAY_KINDS else branches
            return out, _Cache(model, n, layer_caches, mode)
    return vectors, _Cache(model, n, layer_caches, mode)


@dataclass
class _Cache:
    model: Model
    batch_size: int
    layer_caches: list
    mode: str


def forward(model: Model, x, mode: str = "infer"):
    """Single-sequence forward; returns (logits, cache)."""
    outs, cache = forward_batch(model, [x], mode)
    return outs[0], cache


def backward_batch(model: Model, cache: _Cache, grad_logits: list[np.ndarray]):
    """Gradients for every trainable parameter, in model.parameters() order.

    `grad_logits` holds one gradient vector per sequence of the cached batch.
    """
    if not isinstance(cache, _Cache) or cache.model is not model:
        raise CacheError("cache does not belong to this model")
    if cache.mode != "train":
        raise CacheError("backward needs a train-mode cache")
    if len(cache.layer_caches) != len(model.config.layers):
        raise CacheError("cache is stale: layer count mismatch")
    n = cache.batch_size
    if len(grad_logits) != n:
        raise CacheError(f"{len(grad_logits)} gradients for a batch of {n}")
    grads: dict[str, np.ndarray] = {}
    vec_grads = [np.asarray(g, dtype=np.float64) for g in grad_logits]
    branch_grads: list[list[np.ndarray]] = [None] * n
    for li in range(len(model.config.layers) - 1, -1, -1):
        spec = model.config.layers[li]
        params = model.layers[li]
        lcache = cache.layer_caches[li]
        if spec.kind == "softmax":
            continue
        if spec.kind == "fc":
            inputs, zs = lcache
            gw = np.zeros_like(params.weights)
            gb = np.zeros_like(params.bias)
            new_vec = []
            for s in range(n):
                g = vec_grads[s]
                if params.activation:
                    g = relu_backward(zs[s], g)
                gws, gbs, gx = fc_backward(params.weights, params.bias, inputs[s], g)
                gw += gws
                gb += gbs
                new_vec.append(gx)
            grads[f"L{li}.fc.weights"] = gw
            grads[f"L{li}.fc.bias"] = gb
            vec_grads = new_vec
        elif spec.kind == "sp":
            branch_grads = [[sp_backward(lcache[s], vec_grads[s])] for s in range(n)]
        elif spec.kind == "sc":
            branch_grads = [sc_backward(lcache[s], vec_grads[s]) for s in range(n)]
        else:  # td / ctd
            bn_caches, td_caches, zs, shared = lcache
            n_units = len(params.units)
            unit_in_grads = []  # per unit, per sequence: grad wrt normalized input
            for ui, unit in enumerate(params.units):
                gz = [relu_backward(zs[ui][s], branch_grads[s][ui]) for s in range(n)]
                gw, gb, per_seq = td_backward_multi(unit, td_caches[ui], gz)
                grads[f"L{li}.unit{ui}.weights"] = gw
                grads[f"L{li}.unit{ui}.bias"] = gb
                unit_in_grads.append(per_seq)
            if shared:
                total = [sum(unit_in_grads[ui][s] for ui in range(n_units)) for s in range(n)]
                g_gamma, g_beta, g_in = bn_backward(params.bns[0], bn_caches[0], total)
                grads[f"L{li}.bn0.gamma"] = g_gamma
                grads[f"L{li}.bn0.beta"] = g_beta
                branch_grads = [[g_in[s]] for s in range(n)]
            else:
                new_branch = [[None] * n_units for _ in range(n)]
                for bi, bn in enumerate(params.bns):
                    g_gamma, g_beta, g_in = bn_backward(bn, bn_caches[bi], unit_in_grads[bi])
                    grads[f"L{li}.bn{bi}.gamma"] = g_gamma
                    grads[f"L{li}.bn{bi}.beta"] = g_beta
                    for s in range(n):
                        new_branch[s][bi] = g_in[s]
                branch_grads = new_branch
    return [(name, grads[name]) for name, _ in model.parameters()]


def backward(model: Model, cache: _Cache, grad_logits: np.ndarray):
    """Single-sequence variant of backward_batch."""
    return backward_batch(model, cache, [grad_logits])


def loss_and_grads(model: Model, batch: list, labels: list[int]):
    """Mean per-sequence cross entropy over a batch, plus parameter gradients."""
    logits, cache = forward_batch(model, batch, mode="train")
    n = len(batch)
    losses, grad_logits, hits = [], [], 0
    for z, y in zip(logits, labels):
        loss, g = softmax_ce(z, y)
        losses.append(loss)
        grad_logits.append(g / n)
        hits += int(int(np.argmax(z)) == y)
    mean_loss = float(np.mean(losses))
    if not np.isfinite(mean_loss):
        return mean_loss, None, hits, logits
    return mean_loss, backward_batch(model, cache, grad_logits), hits, logits


def embed(model: Model, x):
    """Fixed-length speaker vector: the sp/sc output in infer mode, before any FC."""
    from .evaluation import Embedding

    outs, _ = forward_batch(model, [x], mode="infer", stop_at=model.config.embed_tap)
    return Embedding(
        utt_id=getattr(x, "utt_id", ""),
        speaker_id=getattr(x, "speaker_id", ""),
        vector=outs[0],
    )


# ---------------------------------------------------------------------------
# serialization: magic, version, seed, dims, DSL text, float64 payload

def _payload_arrays(model: Model) -> list[np.ndarray]:
    arrays = []
    for params in model.layers:
        if isinstance(params, DelayLayerParams):
            for bn in params.bns:
                arrays.extend([bn.gamma, bn.beta, bn.running_mean, bn.running_var])
            for unit in params.units:
                arrays.extend([unit.weights, unit.bias])
        elif isinstance(params, FcLayerParams):
            arrays.extend([params.weights, params.bias])
    return arrays


def save_model(path, model: Model) -> None:
    arch = render_arch(model.config).encode("utf-8")
    values = np.concatenate([a.ravel() for a in _payload_arrays(model)])
    header = MODEL_MAGIC + struct.pack(
        "<HQIII",
        MODEL_VERSION,
        model.seed,
        model.config.input_dim,
        model.config.num_classes,
        len(arch),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arch)
        fh.write(struct.pack("<Q", values.size))
        fh.write(values.astype("<f8").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MODEL_MAGIC:
        raise FormatError("bad model magic", 0)
    if len(blob) < 26:
        raise FormatError("truncated model header", len(blob))
    version, seed, input_dim, num_classes, arch_len = struct.unpack_from("<HQIII", blob, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}", 4)
    pos = 26
    if len(blob) < pos + arch_len + 8:
        raise FormatError("truncated architecture text", len(blob))
    arch = blob[pos : pos + arch_len].decode("utf-8")
    pos += arch_len
    (n_values,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    expected = pos + 8 * n_values
    if len(blob) != expected:
        raise FormatError(f"payload size mismatch: expected {expected} bytes", len(blob))
    config = parse_arch(arch, input_dim, num_classes)
    model = build_model(config, seed)
    values = np.frombuffer(blob, dtype="<f8", count=n_values, offset=pos)
    offset = 0
    for arr in _payload_arrays(model):
        arr[...] = values[offset : offset + arr.size].reshape(arr.shape)
        offset += arr.size
    if offset != n_values:
        raise FormatError(f"payload holds {n_values} values, model needs {offset}", pos)
    return model
