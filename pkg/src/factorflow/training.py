"""Training loop, Adam optimizer, and checkpoint persistence.

The loop follows the pair-based recipe: sample a batch of image pairs with
a shared factor, dequantize both sides with fresh uniform noise, take one
Adam step on scale_loss(a) + scale_loss(b) + factor_loss(a, b; F), and log
the loss breakdown per step plus held-out bits/dim per epoch.

Checkpoint layout (binary, little-endian):

    magic b"GLWN" | version u8 | header_len u32 | header JSON (utf-8) |
    one raw blob per parameter (canonical order) |
    one raw blob per frozen buffer (permutations/signs of the 1x1 convs) |
    Adam first-moment blobs | Adam second-moment blobs | crc32 u32

The JSON header carries the flow/factor/train configs, the step and epoch
counters, the rng state, the actnorm-initialized flag, the Adam step count,
and the parameter/buffer manifests (names and shapes).  Floats are stored at the
precision named in the header (float32 by default).  save -> load -> save is
byte-identical; loading verifies magic, version, length, and checksum, and
rebuilding from a mismatched config fails loudly.

Metrics file: ``metrics.csv`` with header
``step,epoch,loss_total,loss_s_a,loss_s_b,loss_F,bpd_holdout`` (the bpd cell
is filled on epoch-final steps, blank otherwise).

RNG streams are derived from the config seed: 101 parameter init, 102
train/holdout split, 103 the training loop (pair sampling + dequantization
noise), 10000+epoch the held-out bpd noise.  A single noise draw is used
for held-out bpd (no resampling variance reduction).
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import precision
from .data import Corpus, dequantize, sample_pairs, subset
from .errors import ConfigError, DataError, NumericsError
from .model import FlowConfig, GlowModel
from .objective import FactorSpec, PairLossBreakdown, pair_loss
from .rng import Rng

MAGIC = b"GLWN"
CHECKPOINT_VERSION = 1
METRICS_HEADER = "step,epoch,loss_total,loss_s_a,loss_s_b,loss_F,bpd_holdout"

_STREAM_INIT = 101
_STREAM_SPLIT = 102
_STREAM_LOOP = 103
_STREAM_HOLDOUT = 10_000


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults follow the reference recipe
    (L=3, K=16, n_bits=6, batch 80, lr 1e-4, sigma 0.85, Adam, 100 epochs,
    sampling temperature 0.7)."""

    learning_rate: float = 1e-4
    batch_size: int = 80
    epochs: int = 100
    n_bits: int = 6
    sigma_ab: float = 0.85
    seed: int = 0
    grad_clip_norm: float = 50.0  # 0 disables clipping
    checkpoint_every: int = 500
    n_scales: int = 3
    n_steps: int = 16
    hidden_width: int = 32
    factor_widths: tuple = (6, 8, 2)
    factor_names: tuple = ("anomaly", "slice_index", "residual")
    factor_mix: tuple = (0.5, 0.5)
    slice_bins: int = 10
    holdout_frac: float = 0.1
    max_steps: int = 0  # 0 = no cap
    precision: str = "float32"
    temperature: float = 0.7
    per_pair_factor: bool = False
    actnorm: bool = True

    def __post_init__(self):
        for name in ("factor_widths", "factor_names", "factor_mix"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1 and self.max_steps < 1:
            raise ConfigError("need epochs >= 1 or a positive max_steps")
        if not 0.0 <= self.holdout_frac < 1.0:
            raise ConfigError(f"holdout_frac must be in [0, 1), got {self.holdout_frac}")

    def flow_config(self, input_shape) -> FlowConfig:
        return FlowConfig(n_scales=self.n_scales, n_steps=self.n_steps,
                          input_shape=tuple(input_shape),
                          hidden_width=self.hidden_width, n_bits=self.n_bits,
                          actnorm=self.actnorm)

    def factor_spec(self) -> FactorSpec:
        return FactorSpec(widths=self.factor_widths, sigma_ab=self.sigma_ab,
                          names=self.factor_names)


_CONFIG_ALIASES = {"L": "n_scales", "K": "n_steps"}
_TUPLE_FIELDS = {"factor_widths": int, "factor_names": str, "factor_mix": float}


def parse_config_text(text: str) -> TrainConfig:
    """Flat ``key = value`` lines; '#' starts a comment; lists are comma-separated."""
    values = {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = _CONFIG_ALIASES.get(key, key)
        if key not in types:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in _TUPLE_FIELDS:
            cast = _TUPLE_FIELDS[key]
            values[key] = tuple(cast(s.strip()) for s in val.split(",") if s.strip())
        elif types[key] == "bool" or key in ("per_pair_factor", "actnorm"):
            values[key] = val.lower() in ("1", "true", "yes", "on")
        elif types[key] == "int" or key in ("batch_size", "epochs", "n_bits", "seed",
                                            "checkpoint_every", "n_scales", "n_steps",
                                            "hidden_width", "slice_bins", "max_steps"):
            values[key] = int(val)
        elif types[key] == "str" or key == "precision":
            values[key] = val
        else:
            values[key] = float(val)
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    try:
        with open(path) as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc


def write_config(path, config: TrainConfig) -> None:
    with open(path, "w") as fh:
        for f in fields(TrainConfig):
            val = getattr(config, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            fh.write(f"{f.name} = {val}\n")


class Adam:
    """Standard Adam with bias correction (betas (0.9, 0.999), eps 1e-8)."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients so the global norm is at most max_norm; returns the
    pre-clip norm. max_norm <= 0 disables clipping (norm still returned)."""
    norm = global_grad_norm(params)
    if not np.isfinite(norm):
        raise NumericsError(f"non-finite gradient norm {norm}")
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- checkpoints -------------------------------------------------------------------

def _config_headers(model: GlowModel, spec: FactorSpec, config: TrainConfig) -> dict:
    return {
        "flow": asdict(model.config),
        "factors": {"widths": list(spec.widths), "sigma_ab": spec.sigma_ab,
                    "names": list(spec.names), "sigmas": list(spec.sigmas)},
        "train": asdict(config),
    }


def save_checkpoint(path, model: GlowModel, spec: FactorSpec, config: TrainConfig,
                    optimizer: Adam, step: int, epoch: int, rng_state) -> None:
    params = model.parameters()
    for name, p in params:
        if not np.all(np.isfinite(p.data)):
            raise NumericsError(f"refusing to checkpoint non-finite parameter {name}")
    buffers = model.buffers()
    header = _config_headers(model, spec, config)
    header.update({
        "version": CHECKPOINT_VERSION,
        "dtype": precision.precision_name(),
        "step": int(step),
        "epoch": int(epoch),
        "rng": [int(rng_state[0]), int(rng_state[1])],
        "actnorm_initialized": bool(model.actnorm_initialized),
        "adam_t": int(optimizer.t),
        "params": [[name, list(p.shape)] for name, p in params],
        "buffers": [[name, list(p.shape)] for name, p in buffers],
    })
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = bytearray()
    body += MAGIC
    body += bytes([CHECKPOINT_VERSION])
    body += len(blob).to_bytes(4, "little")
    body += blob
    dt = np.dtype(precision.dtype()).newbyteorder("<")
    for _, p in params:
        body += p.data.astype(dt).tobytes()
    for _, p in buffers:
        body += p.data.astype(dt).tobytes()
    for m in optimizer.m:
        body += m.astype(dt).tobytes()
    for v in optimizer.v:
        body += v.astype(dt).tobytes()
    body += (zlib.crc32(bytes(body)) & 0xFFFFFFFF).to_bytes(4, "little")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(body))
    os.replace(tmp, path)


@dataclass
class CheckpointState:
    """Fully restored training state."""

    model: GlowModel
    spec: FactorSpec
    config: TrainConfig
    optimizer: Adam
    step: int
    epoch: int
    rng_state: tuple
    header: dict = field(repr=False, default_factory=dict)


def load_checkpoint(path) -> CheckpointState:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 13:
        raise DataError(f"{path}: truncated checkpoint")
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic {raw[:4]!r})")
    if raw[4] != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {raw[4]} "
                        f"(expected {CHECKPOINT_VERSION})")
    stored_crc = int.from_bytes(raw[-4:], "little")
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise DataError(f"{path}: checksum mismatch, file is corrupt")
    hlen = int.from_bytes(raw[5:9], "little")
    header_bytes = raw[9:9 + hlen]
    if len(header_bytes) != hlen:
        raise DataError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except ValueError as exc:
        raise DataError(f"{path}: malformed checkpoint header") from exc

    precision.set_precision(header["dtype"])
    dt = np.dtype(precision.dtype()).newbyteorder("<")
    train_cfg = TrainConfig(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in header["train"].items()})
    fl = dict(header["flow"])
    fl["input_shape"] = tuple(fl["input_shape"])
    flow_cfg = FlowConfig(**fl)
    fac = header["factors"]
    spec = FactorSpec(widths=tuple(fac["widths"]), sigma_ab=fac["sigma_ab"],
                      names=tuple(fac["names"]), sigmas=tuple(fac["sigmas"]))

    model = GlowModel(flow_cfg, Rng(0))  # weights overwritten below
    params = model.parameters()
    buffers = model.buffers()
    manifest = [(name, tuple(shape)) for name, shape in header["params"]]
    built = [(name, tuple(p.shape)) for name, p in params]
    buf_manifest = [(name, tuple(shape)) for name, shape in header["buffers"]]
    buf_built = [(name, tuple(p.shape)) for name, p in buffers]
    if manifest != built or buf_manifest != buf_built:
        raise DataError(f"{path}: parameter manifest does not match the configured "
                        "model (config mismatch)")

    offset = 9 + hlen
    itemsize = dt.itemsize

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * itemsize
        if offset + nbytes > len(raw) - 4:
            raise DataError(f"{path}: truncated checkpoint payload")
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype=dt).reshape(shape)
        offset += nbytes
        return arr.astype(precision.dtype())

    for _, p in params:
        p.data = take(p.shape)
    for _, p in buffers:
        p.data = take(p.shape)
    optimizer = Adam([p for _, p in params], lr=train_cfg.learning_rate)
    optimizer.t = int(header["adam_t"])
    optimizer.m = [take(p.shape) for _, p in params]
    optimizer.v = [take(p.shape) for _, p in params]
    if offset != len(raw) - 4:
        raise DataError(f"{path}: {len(raw) - 4 - offset} unexpected trailing bytes")
    if header["actnorm_initialized"]:
        model.mark_actnorm_initialized()
    return CheckpointState(model=model, spec=spec, config=train_cfg,
                           optimizer=optimizer, step=int(header["step"]),
                           epoch=int(header["epoch"]),
                           rng_state=(int(header["rng"][0]), int(header["rng"][1])),
                           header=header)


# -- the training loop -----------------------------------------------------------------

@dataclass
class TrainResult:
    model: GlowModel
    spec: FactorSpec
    config: TrainConfig
    checkpoint_path: str
    metrics_path: str
    steps: int
    metrics: list = field(default_factory=list)


def _split_corpus(corpus: Corpus, frac: float, rng: Rng):
    n = len(corpus)
    n_hold = int(round(frac * n))
    if frac > 0:
        n_hold = max(1, min(n - 1, n_hold))
    perm = rng.shuffle_index(n)
    hold = np.sort(perm[:n_hold])
    train = np.sort(perm[n_hold:])
    return subset(corpus, train), (subset(corpus, hold) if n_hold else None)


def _fmt(x: float) -> str:
    return repr(float(x))


def train(config: TrainConfig, corpus: Corpus, out_dir,
          resume_from=None, log_every: int = 0) -> TrainResult:
    """Run the pair-based training loop; deterministic for a fixed seed."""
    if len(corpus) < 2:
        raise DataError(f"corpus too small to train on ({len(corpus)} images)")
    precision.set_precision(config.precision)
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.glwn")
    metrics_path = os.path.join(out_dir, "metrics.csv")

    size = corpus.size
    input_shape = (1, size, size)

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        run_length_fields = {"epochs", "max_steps", "checkpoint_every"}
        diffs = [f.name for f in fields(TrainConfig)
                 if f.name not in run_length_fields
                 and getattr(state.config, f.name) != getattr(config, f.name)]
        if diffs:
            raise ConfigError(f"resume config mismatch on fields: {', '.join(diffs)}")
        if state.model.config.input_shape != input_shape:
            raise ConfigError(f"checkpoint was trained on {state.model.config.input_shape}, "
                              f"corpus is {input_shape}")
        model, spec, optimizer = state.model, state.spec, state.optimizer
        optimizer.lr = config.learning_rate
        loop_rng = Rng(state.rng_state[0])
        loop_rng.set_state(state.rng_state)
        start_step = state.step
        mode = "a" if os.path.exists(metrics_path) else "w"
    else:
        master = Rng(config.seed)
        model = GlowModel(config.flow_config(input_shape), master.spawn(_STREAM_INIT))
        spec = config.factor_spec()
        if spec.channels != model.config.final_latent_shape[0]:
            raise ConfigError(
                f"factor widths {config.factor_widths} sum to {spec.channels}, but the "
                f"final latent has {model.config.final_latent_shape[0]} channels")
        optimizer = Adam(model.parameter_tensors(), lr=config.learning_rate)
        loop_rng = master.spawn(_STREAM_LOOP)
        start_step = 0
        mode = "w"

    split_rng = Rng(config.seed).spawn(_STREAM_SPLIT)
    train_part, holdout = _split_corpus(corpus, config.holdout_frac, split_rng)

    steps_per_epoch = max(1, len(train_part) // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    if config.max_steps > 0:
        total_steps = min(total_steps, config.max_steps)

    if not model.actnorm_initialized:
        # dedicated batch for data-dependent init; not trained on
        init_batch = sample_pairs(loop_rng, train_part, config.batch_size,
                                  config.factor_mix, config.slice_bins,
                                  per_pair=config.per_pair_factor)
        init_images = np.concatenate([init_batch.images_a, init_batch.images_b])
        model.encode(dequantize(init_images, config.n_bits, loop_rng))

    metrics_rows = []
    with open(metrics_path, mode) as metrics_file:
        if mode == "w":
            metrics_file.write(METRICS_HEADER + "\n")
        for step in range(start_step + 1, total_steps + 1):
            epoch = (step - 1) // steps_per_epoch + 1
            batch = sample_pairs(loop_rng, train_part, config.batch_size,
                                 config.factor_mix, config.slice_bins,
                                 per_pair=config.per_pair_factor)
            x_a = dequantize(batch.images_a, config.n_bits, loop_rng)
            x_b = dequantize(batch.images_b, config.n_bits, loop_rng)
            try:
                breakdown = _batch_loss(x_a, x_b, batch.factor_index, model, spec)
                optimizer.zero_grad()
                breakdown.node.backward()
                clip_grad_norm(optimizer.params, config.grad_clip_norm)
                optimizer.step()
            except NumericsError as exc:
                last = ckpt_path if os.path.exists(ckpt_path) else "none"
                raise NumericsError(
                    f"aborting at step {step}: {exc} (last good checkpoint: {last})"
                ) from exc

            bpd_cell = ""
            if step % steps_per_epoch == 0 and holdout is not None:
                bpd_cell = _fmt(_holdout_bpd(model, holdout, config, epoch))
            row = (f"{step},{epoch},{_fmt(breakdown.total)},{_fmt(breakdown.l_s_a)},"
                   f"{_fmt(breakdown.l_s_b)},{_fmt(breakdown.l_F)},{bpd_cell}")
            metrics_file.write(row + "\n")
            metrics_rows.append(row)
            if log_every and step % log_every == 0:
                print(f"step {step}/{total_steps} loss {breakdown.total:.3f}")
            if config.checkpoint_every > 0 and step % config.checkpoint_every == 0:
                save_checkpoint(ckpt_path, model, spec, config, optimizer,
                                step, epoch, loop_rng.state())

    final_epoch = (total_steps - 1) // steps_per_epoch + 1 if total_steps else 0
    save_checkpoint(ckpt_path, model, spec, config, optimizer,
                    total_steps, final_epoch, loop_rng.state())
    return TrainResult(model=model, spec=spec, config=config,
                       checkpoint_path=ckpt_path, metrics_path=metrics_path,
                       steps=total_steps, metrics=metrics_rows)


def _batch_loss(x_a, x_b, factor_index: np.ndarray, model: GlowModel,
                spec: FactorSpec) -> PairLossBreakdown:
    """Pair loss for a batch; mixed factors are weighted by group size."""
    factors = np.unique(factor_index)
    if len(factors) == 1:
        return pair_loss(x_a, x_b, int(factors[0]), model, spec)
    total = len(factor_index)
    node = None
    lsa = lsb = lf = 0.0
    for f in factors:
        sel = np.flatnonzero(factor_index == f)
        part = pair_loss(x_a[sel], x_b[sel], int(f), model, spec)
        weight = len(sel) / total
        scaled = ad.mul(part.node, weight)
        node = scaled if node is None else ad.add(node, scaled)
        lsa += weight * part.l_s_a
        lsb += weight * part.l_s_b
        lf += weight * part.l_F
    out = PairLossBreakdown(l_s_a=lsa, l_s_b=lsb, l_F=lf, total=lsa + lsb + lf,
                            factor_index=-1, node=node)
    return out


def _holdout_bpd(model: GlowModel, holdout: Corpus, config: TrainConfig,
                 epoch: int) -> float:
    rng = Rng(config.seed).spawn(_STREAM_HOLDOUT + epoch)
    x = dequantize(holdout.images, config.n_bits, rng)
    return float(np.mean(model.bits_per_dim(x)))
