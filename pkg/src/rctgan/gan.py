"""Row-conditional tabular GAN for one table.

The generator maps (noise, ancestor-row condition, sampled-category
condition) to an encoded row; the critic scores pac-grouped
(row, condition) blocks with a WGAN objective plus a gradient penalty at
real/fake interpolates. Training-by-sampling picks one discrete column and
category per step, restricts the real batch to matching rows and adds a
cross-entropy term tying the generated span to the picked category.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import neural
from .neural import Adam, Affine, BatchNorm, Dropout, LeakyRelu, Mlp, Relu, SpanHead, Tensor
from .transform import ConditionLayout, RowLayout, decode_table


class EmptyTable(Exception):
    pass


class NonFiniteLoss(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 500
    z_dim: int = 128
    pac: int = 10
    gp_weight: float = 10.0
    use_gradient_penalty: bool = True
    weight_clip: float = 0.01
    critic_steps: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    gen_hidden: tuple[int, ...] = (256, 256)
    critic_hidden: tuple[int, ...] = (256, 256)
    critic_dropout: float = 0.0
    max_depth: int = 1
    max_modes: int = 10

    def __post_init__(self) -> None:
        if self.batch_size % self.pac != 0:
            raise ValueError("batch_size must be divisible by pac")
        if self.max_depth not in (1, 2):
            raise ValueError("max_depth must be 1 or 2")
        if self.critic_dropout > 0 and self.use_gradient_penalty:
            raise neural.UnsupportedLayer(
                "critic dropout requires the weight-clipping fallback (use_gradient_penalty=False)"
            )


@dataclass
class DiscreteCondition:
    """Per-discrete-column spans and sampling distributions for the v vector."""

    offsets: list[int]          # span offset within the encoded row, per column
    widths: list[int]
    v_offsets: list[int]        # span offset within the v vector, per column
    train_probs: list[np.ndarray]   # log-frequency smoothed, used during training
    sample_probs: list[np.ndarray]  # empirical frequency, used during sampling

    @property
    def v_width(self) -> int:
        return sum(self.widths)


def _discrete_condition(layout: RowLayout, encoded: np.ndarray) -> DiscreteCondition | None:
    spans = layout.discrete_spans()
    if not spans:
        return None
    offsets, widths, v_offsets, train_probs, sample_probs = [], [], [], [], []
    v_off = 0
    for span in spans:
        counts = encoded[:, span.offset:span.offset + span.width].sum(axis=0)
        log_counts = np.log(counts + 1.0)
        offsets.append(span.offset)
        widths.append(span.width)
        v_offsets.append(v_off)
        train_probs.append(log_counts / log_counts.sum())
        sample_probs.append(counts / counts.sum())
        v_off += span.width
    return DiscreteCondition(offsets, widths, v_offsets, train_probs, sample_probs)


@dataclass
class TableGanModel:
    table: str
    generator: Mlp
    critic: Mlp
    row_layout: RowLayout
    condition_layout: ConditionLayout
    condition_width: int
    config: TrainConfig
    seed: int
    discrete: DiscreteCondition | None
    loss_history: list[dict] = field(default_factory=list)

    @property
    def v_width(self) -> int:
        return self.discrete.v_width if self.discrete else 0


def build_generator(z_dim: int, cond_width: int, layout: RowLayout,
                    hidden: tuple[int, ...], rng: np.random.Generator) -> Mlp:
    layers = []
    dim = z_dim + cond_width
    for h in hidden:
        layers.append(Affine.build(dim, h, rng))
        layers.append(BatchNorm(h))
        layers.append(Relu())
        dim = h
    layers.append(Affine.build(dim, layout.width, rng))
    layers.append(SpanHead(layout.width, layout.tanh_positions(), layout.softmax_spans()))
    return Mlp(layers)


def build_critic(input_width: int, hidden: tuple[int, ...], dropout: float,
                 rng: np.random.Generator) -> Mlp:
    layers = []
    dim = input_width
    for h in hidden:
        layers.append(Affine.build(dim, h, rng))
        layers.append(LeakyRelu(0.2))
        if dropout > 0:
            layers.append(Dropout(dropout))
        dim = h
    layers.append(Affine.build(dim, 1, rng))
    return Mlp(layers)


def _group(rows: np.ndarray, pac: int) -> np.ndarray:
    n, width = rows.shape
    if n % pac != 0:
        raise neural.DimensionMismatch(f"batch of {n} rows is not divisible by pac={pac}")
    return rows.reshape(n // pac, pac * width)


def critic_loss(critic: Mlp, real: np.ndarray, fake: np.ndarray,
                conditions: np.ndarray, pac: int = 1, mode: str = "train",
                rng: np.random.Generator | None = None) -> Tensor:
    """E[C(fake)] - E[C(real)] with conditions concatenated to both sides."""
    if real.shape[0] != fake.shape[0]:
        raise neural.DimensionMismatch("real and fake batches must have equal size")
    if conditions.shape[1]:
        real = np.concatenate([real, conditions], axis=1)
        fake = np.concatenate([fake, conditions], axis=1)
    c_real = critic.forward(_group(real, pac), mode=mode, rng=rng)
    c_fake = critic.forward(_group(fake, pac), mode=mode, rng=rng)
    return neural.mean_all(c_fake) - neural.mean_all(c_real)


def gradient_penalty(critic: Mlp, real: np.ndarray, fake: np.ndarray,
                     conditions: np.ndarray, pac: int,
                     rng: np.random.Generator) -> Tensor:
    """Mean squared deviation of the critic's input-gradient norm from 1.

    Computed at interpolates eps*real + (1-eps)*fake with one eps per
    pac-group, over the full concatenated (row || condition) input.
    """
    if conditions.shape[1]:
        real = np.concatenate([real, conditions], axis=1)
        fake = np.concatenate([fake, conditions], axis=1)
    real_g = _group(real, pac)
    fake_g = _group(fake, pac)
    eps = rng.random((real_g.shape[0], 1))
    interp = eps * real_g + (1.0 - eps) * fake_g
    grad = neural.input_gradient(critic, interp)
    norms = neural.sqrt(neural.add_const(neural.sum_rows(neural.square(grad)), 1e-12))
    return neural.mean_all(neural.square(neural.add_const(norms, -1.0)))


def _clip_weights(critic: Mlp, clip: float) -> None:
    for tensor in critic.parameters().values():
        np.clip(tensor.data, -clip, clip, out=tensor.data)


def fit_table(encoded: np.ndarray, row_layout: RowLayout, conditions: np.ndarray,
              config: TrainConfig, seed: int, table: str = "",
              condition_layout: ConditionLayout | None = None,
              epoch_callback=None) -> TableGanModel:
    """Train the conditional GAN for one table on its encoded rows.

    conditions must be row-aligned with encoded (width 0 for root tables).
    """
    n, d = encoded.shape
    if n == 0:
        raise EmptyTable(f"table {table!r} has no rows to fit")
    if conditions.shape[0] != n:
        raise neural.DimensionMismatch("conditions are not row-aligned with the encoded table")
    c = conditions.shape[1]
    with threadpool_limits(limits=1):  # tiny matrices; BLAS threading only adds contention
        return _fit_table_inner(encoded, row_layout, conditions, config, seed, table,
                                condition_layout, epoch_callback, n, d, c)


def _fit_table_inner(encoded, row_layout, conditions, config, seed, table,
                     condition_layout, epoch_callback, n, d, c):

    if condition_layout is not None and condition_layout.width != c:
        raise neural.DimensionMismatch(
            f"condition layout width {condition_layout.width} != condition matrix width {c}"
        )
    discrete = _discrete_condition(row_layout, encoded)
    v_width = discrete.v_width if discrete else 0
    rng = np.random.default_rng(seed)

    generator = build_generator(config.z_dim, c + v_width, row_layout, config.gen_hidden, rng)
    critic = build_critic(config.pac * (d + c + v_width), config.critic_hidden,
                          config.critic_dropout, rng)
    g_opt = Adam(generator.parameters(), config.lr, config.beta1, config.beta2)
    c_opt = Adam(critic.parameters(), config.lr, config.beta1, config.beta2)

    model = TableGanModel(
        table=table, generator=generator, critic=critic, row_layout=row_layout,
        condition_layout=condition_layout or ConditionLayout(), condition_width=c,
        config=config, seed=seed, discrete=discrete,
    )

    def sample_batch():
        """Pick (indices, v matrix, (column, category)) per training-by-sampling."""
        if discrete is None:
            replace = n < config.batch_size
            idx = rng.choice(n, size=config.batch_size, replace=replace)
            return idx, np.zeros((config.batch_size, 0)), None
        col = rng.integers(len(discrete.offsets))
        cat = rng.choice(discrete.widths[col], p=discrete.train_probs[col])
        matching = np.flatnonzero(encoded[:, discrete.offsets[col] + cat] == 1.0)
        replace = len(matching) < config.batch_size
        idx = rng.choice(matching, size=config.batch_size, replace=replace)
        v = np.zeros((config.batch_size, v_width))
        v[:, discrete.v_offsets[col] + cat] = 1.0
        return idx, v, (col, cat)

    def generate(cond: np.ndarray, v: np.ndarray):
        z = rng.standard_normal((config.batch_size, config.z_dim))
        parts = [z]
        if c:
            parts.append(cond)
        if v_width:
            parts.append(v)
        gen_in = np.concatenate(parts, axis=1) if len(parts) > 1 else z
        raw = generator.forward_layers(gen_in, mode="train", rng=rng, stop=-1)
        return raw, generator.layers[-1].forward(raw, "train", rng)

    steps_per_epoch = max(1, n // config.batch_size)
    for epoch in range(config.epochs):
        c_losses, g_losses, penalties = [], [], []
        for _ in range(steps_per_epoch):
            for _ in range(config.critic_steps):
                idx, v, _ = sample_batch()
                cond = conditions[idx]
                with neural.no_grad():  # critic update treats fakes as constants
                    _, fake = generate(cond, v)
                cv = np.concatenate([cond, v], axis=1)
                w_loss = critic_loss(critic, encoded[idx], fake.data, cv,
                                     pac=config.pac, rng=rng)
                if config.use_gradient_penalty:
                    penalty = gradient_penalty(critic, encoded[idx], fake.data, cv,
                                               config.pac, rng)
                    loss = w_loss + config.gp_weight * penalty
                    penalties.append(penalty.item())
                else:
                    loss = w_loss
                    penalties.append(0.0)
                c_opt.zero_grad()
                neural.backward(loss)
                c_opt.step()
                if not config.use_gradient_penalty:
                    _clip_weights(critic, config.weight_clip)
                c_losses.append(w_loss.item())

            idx, v, picked = sample_batch()
            cond = conditions[idx]
            raw, fake = generate(cond, v)
            if c or v_width:
                tail = Tensor(np.concatenate([cond, v], axis=1))
                full = neural.concat_cols([fake, tail])
            else:
                full = fake
            grouped = neural.reshape(full, config.batch_size // config.pac,
                                     config.pac * (d + c + v_width))
            g_loss = -neural.mean_all(critic.forward(grouped, mode="train", rng=rng))
            if picked is not None:
                col, cat = picked
                off, w = discrete.offsets[col], discrete.widths[col]
                log_p = neural.log_softmax_rows(neural.slice_cols(raw, off, off + w))
                onehot = np.zeros((config.batch_size, w))
                onehot[:, cat] = 1.0
                ce = -neural.mean_all(neural.sum_rows(neural.mul_const(log_p, onehot)))
                g_loss = g_loss + ce
            g_opt.zero_grad()
            neural.backward(g_loss)
            g_opt.step()
            g_losses.append(g_loss.item())

        record = {
            "table": table,
            "epoch": epoch,
            "critic_loss": float(np.mean(c_losses)),
            "gen_loss": float(np.mean(g_losses)),
            "penalty": float(np.mean(penalties)),
        }
        if not all(np.isfinite(val) for key, val in record.items() if key not in ("table", "epoch")):
            raise NonFiniteLoss(f"non-finite loss while fitting {table!r}: {record}")
        model.loss_history.append(record)
        if epoch_callback is not None:
            epoch_callback(record)
    return model


def sample_encoded(model: TableGanModel, conditions: np.ndarray,
                   n_per_condition: int, seed: int) -> np.ndarray:
    """Generator output rows (encoded space), deterministic for a seed."""
    if conditions.ndim != 2 or conditions.shape[1] != model.condition_width:
        raise neural.DimensionMismatch(
            f"conditions must have width {model.condition_width}, got {conditions.shape}"
        )
    rng = np.random.default_rng(seed)
    total = conditions.shape[0] * n_per_condition
    if total == 0:
        return np.zeros((0, model.row_layout.width))
    cond = np.repeat(conditions, n_per_condition, axis=0)
    discrete = model.discrete
    parts = [rng.standard_normal((total, model.config.z_dim))]
    if model.condition_width:
        parts.append(cond)
    if model.v_width:
        v = np.zeros((total, model.v_width))
        cols = rng.integers(len(discrete.offsets), size=total)
        for col in range(len(discrete.offsets)):
            rows = np.flatnonzero(cols == col)
            if len(rows) == 0:
                continue
            cats = rng.choice(discrete.widths[col], size=len(rows), p=discrete.sample_probs[col])
            v[rows, discrete.v_offsets[col] + cats] = 1.0
        parts.append(v)
    gen_in = np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]
    with neural.no_grad(), threadpool_limits(limits=1):
        return model.generator.forward(gen_in, mode="eval").data


def sample_rows(model: TableGanModel, conditions: np.ndarray,
                n_per_condition: int, seed: int) -> dict[str, np.ndarray]:
    """Decoded feature columns for n rows per condition vector."""
    encoded = sample_encoded(model, conditions, n_per_condition, seed)
    return decode_table(model.row_layout, encoded)
