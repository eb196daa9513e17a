"""Binary LSTM sequence classifier with hand-written backpropagation through time.

A sequence of profiled-packet indices is embedded, run through a single LSTM
layer, and the final hidden state is read out into one logit; the sigmoid of
that logit is the probability that the sequence is a legal ordering for the
page.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

NET_HEADER = "ISCNET 1"
PARAM_NAMES = ("embed", "W", "b", "w_out", "b_out")


@dataclass(frozen=True)
class SequenceSample:
    tokens: tuple[int, ...]
    label: int  # 1 legal, 0 illegal

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValueError("empty sequence")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


@dataclass
class LSTMParams:
    """embed (T, d); W (4h, d+h) with gate blocks [input, forget, output, candidate]; b (4h,);
    w_out (h,); b_out (1,)."""

    embed: np.ndarray
    W: np.ndarray
    b: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    @property
    def T(self) -> int:
        return self.embed.shape[0]

    @property
    def d(self) -> int:
        return self.embed.shape[1]

    @property
    def h(self) -> int:
        return self.w_out.shape[0]

    def arrays(self) -> dict:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self) -> "LSTMParams":
        return LSTMParams(**{n: a.copy() for n, a in self.arrays().items()})

    def __eq__(self, other):
        return isinstance(other, LSTMParams) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values()))


def zero_params(T: int, d: int = 8, h: int = 16) -> LSTMParams:
    return LSTMParams(np.zeros((T, d)), np.zeros((4 * h, d + h)), np.zeros(4 * h), np.zeros(h),
                      np.zeros(1))


def init_params(T: int, d: int = 8, h: int = 16, seed: int = 0, scale: float = 0.3) -> LSTMParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x15]))
    b = np.zeros(4 * h)
    b[h:2 * h] = 1.0  # forget-gate bias
    return LSTMParams(
        embed=rng.normal(0.0, scale, (T, d)),
        W=rng.normal(0.0, scale / np.sqrt(d + h) * 2, (4 * h, d + h)),
        b=b,
        w_out=rng.normal(0.0, scale, h),
        b_out=np.zeros(1),
    )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_tokens(params: LSTMParams, tokens: np.ndarray) -> None:
    if tokens.size and (tokens.min() < 0 or tokens.max() >= params.T):
        raise ValueError(f"token out of range for T={params.T}")


def _forward(params: LSTMParams, tokens: np.ndarray):
    """Batched forward pass over equal-length sequences ``tokens`` (B, L)."""
    B, L = tokens.shape
    h_dim = params.h
    h = np.zeros((B, h_dim))
    c = np.zeros((B, h_dim))
    cache = []
    for t in range(L):
        x = params.embed[tokens[:, t]]
        z = np.concatenate([x, h], axis=1)
        a = z @ params.W.T + params.b
        i = _sigmoid(a[:, :h_dim])
        f = _sigmoid(a[:, h_dim:2 * h_dim])
        o = _sigmoid(a[:, 2 * h_dim:3 * h_dim])
        g = np.tanh(a[:, 3 * h_dim:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.append((z, i, f, o, g, c_prev, tc))
    logit = h @ params.w_out + params.b_out[0]
    return logit, h, cache


def logits(params: LSTMParams, sequences: Sequence[Sequence[int]]) -> np.ndarray:
    out = np.empty(len(sequences))
    for L, idx in _group_by_length(sequences).items():
        toks = np.array([sequences[i] for i in idx], dtype=np.intp).reshape(len(idx), L)
        _check_tokens(params, toks)
        out[idx] = _forward(params, toks)[0]
    return out


def forward(params: LSTMParams, sample) -> float:
    """Legality probability of one sequence (a token list or a :class:`SequenceSample`)."""
    tokens = sample.tokens if isinstance(sample, SequenceSample) else sample
    return float(_sigmoid(logits(params, [tuple(tokens)]))[0])


def predict_proba(params: LSTMParams, sequences: Sequence[Sequence[int]]) -> np.ndarray:
    if len(sequences) == 0:
        return np.zeros(0)
    return _sigmoid(logits(params, sequences))


def _group_by_length(sequences) -> dict:
    groups: dict = {}
    for i, s in enumerate(sequences):
        if len(s) == 0:
            raise ValueError("empty sequence")
        groups.setdefault(len(s), []).append(i)
    return {L: np.array(idx) for L, idx in groups.items()}


def _bce(logit, y):
    # log(1 + e^z) - y z, computed stably
    return np.logaddexp(0.0, logit) - y * logit


def loss_and_grad(params: LSTMParams, batch: Sequence[SequenceSample]) -> tuple[float, LSTMParams]:
    """Mean binary cross-entropy over ``batch`` and its exact gradient."""
    if not batch:
        raise ValueError("empty batch")
    N = len(batch)
    grads = LSTMParams(**{n: np.zeros_like(a) for n, a in params.arrays().items()})
    total = 0.0
    h_dim, d = params.h, params.d
    seqs = [s.tokens for s in batch]
    for L, idx in _group_by_length(seqs).items():
        toks = np.array([seqs[i] for i in idx], dtype=np.intp).reshape(len(idx), L)
        _check_tokens(params, toks)
        y = np.array([batch[i].label for i in idx], dtype=float)
        logit, h_last, cache = _forward(params, toks)
        total += float(_bce(logit, y).sum())

        dlogit = (_sigmoid(logit) - y) / N
        grads.w_out += h_last.T @ dlogit
        grads.b_out[0] += dlogit.sum()
        dh = np.outer(dlogit, params.w_out)
        dc = np.zeros_like(dh)
        for t in reversed(range(L)):
            z, i, f, o, g, c_prev, tc = cache[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            da = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o),
                                 dg * (1.0 - g * g)], axis=1)
            grads.W += da.T @ z
            grads.b += da.sum(axis=0)
            dz = da @ params.W
            np.add.at(grads.embed, toks[:, t], dz[:, :d])
            dh = dz[:, d:]
            dc = dc * f
    return total / N, grads


def numerical_grad(params: LSTMParams, batch: Sequence[SequenceSample], step: float = 1e-5
                   ) -> LSTMParams:
    """Central finite differences, one coordinate at a time."""
    grads = {}
    for name, arr in params.arrays().items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + step
            up = loss_and_grad(params, batch)[0]
            arr[ix] = orig - step
            down = loss_and_grad(params, batch)[0]
            arr[ix] = orig
            g[ix] = (up - down) / (2 * step)
        grads[name] = g
    return LSTMParams(**grads)


def max_relative_error(a: LSTMParams, b: LSTMParams, floor: float = 1e-6) -> float:
    """Largest elementwise |a - b| / max(|a|, |b|, floor) over all parameters."""
    worst = 0.0
    for x, y in zip(a.arrays().values(), b.arrays().values()):
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 500
    seed: int = 0
    shuffle_ratio: float = 1.0
    crosspage_ratio: float = 1.0
    embed_dim: int = 8
    hidden: int = 16
    target_loss: float = 0.02

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.shuffle_ratio < 0 or self.crosspage_ratio < 0:
            raise ValueError("negative sampling ratios must be >= 0")


@dataclass
class TrainResult:
    params: LSTMParams
    converged: bool
    train_accuracy: float
    epochs_run: int
    final_loss: float


def _project(seq: Sequence[int], T: int, rng) -> tuple[int, ...]:
    """Map a foreign page's ordering onto this page's index space."""
    out, seen = [], set()
    for tok in seq:
        t = tok % T
        if t not in seen:
            seen.add(t)
            out.append(t)
    rest = [t for t in range(T) if t not in seen]
    rng.shuffle(rest)
    return tuple(out + rest)


def training_set(exemplars: Sequence[Sequence[int]], T: int, config: TrainConfig,
                 other_exemplars: Sequence[Sequence[int]] = ()) -> list[SequenceSample]:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7E]))
    positives = [tuple(s) for s in exemplars]
    pos_set = set(positives)
    samples = [SequenceSample(s, 1) for s in positives]
    n_shuffle = int(round(config.shuffle_ratio * len(positives)))
    n_cross = int(round(config.crosspage_ratio * len(positives))) if other_exemplars else 0

    def add_negative(seq):
        if seq not in pos_set:
            samples.append(SequenceSample(seq, 0))

    attempts = 0
    made = 0
    while made < n_shuffle and attempts < 20 * max(n_shuffle, 1):
        attempts += 1
        base = positives[int(rng.integers(len(positives)))]
        seq = tuple(int(t) for t in rng.permutation(base))
        if seq not in pos_set:
            samples.append(SequenceSample(seq, 0))
            made += 1
    for j in range(n_cross):
        other = other_exemplars[int(rng.integers(len(other_exemplars)))]
        add_negative(_project(other, T, rng))
    return samples


def _accuracy(params: LSTMParams, samples: Sequence[SequenceSample]) -> float:
    p = predict_proba(params, [s.tokens for s in samples])
    y = np.array([s.label for s in samples])
    return float(np.mean((p >= 0.5) == (y == 1)))


def train(profile, config: Optional[TrainConfig] = None,
          other_exemplars: Sequence[Sequence[int]] = ()) -> TrainResult:
    """Fit a page's classifier on its exemplar orderings plus synthesized negatives.

    Full-batch Adam; stops early once the training loss falls below
    ``config.target_loss``. Deterministic for a given profile and config.
    """
    config = config or TrainConfig()
    T = profile.T if hasattr(profile, "T") else profile[0]
    exemplars = profile.exemplar_sequences if hasattr(profile, "exemplar_sequences") else profile[1]
    if not exemplars:
        raise ValueError("need at least one exemplar sequence")
    samples = training_set(exemplars, T, config, other_exemplars)
    params = init_params(T, config.embed_dim, config.hidden, seed=config.seed)

    m = {n: np.zeros_like(a) for n, a in params.arrays().items()}
    v = {n: np.zeros_like(a) for n, a in params.arrays().items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    loss = float("inf")
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        loss, grads = loss_and_grad(params, samples)
        if loss < config.target_loss:
            break
        for n, g in grads.arrays().items():
            m[n] = b1 * m[n] + (1 - b1) * g
            v[n] = b2 * v[n] + (1 - b2) * g * g
            mhat = m[n] / (1 - b1 ** epoch)
            vhat = v[n] / (1 - b2 ** epoch)
            getattr(params, n)[...] -= config.learning_rate * mhat / (np.sqrt(vhat) + eps)
    acc = _accuracy(params, samples)
    converged = acc >= 0.95
    if not converged:
        log.warning("classifier did not converge: training accuracy %.3f after %d epochs",
                    acc, epoch)
    return TrainResult(params, converged, acc, epoch, loss)


def dump_params(params: LSTMParams) -> str:
    lines = [NET_HEADER]
    for name in PARAM_NAMES:
        arr = np.atleast_2d(getattr(params, name))
        if getattr(params, name).ndim == 1:
            arr = arr.reshape(1, -1)
        lines.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
        for row in arr:
            lines.append(" ".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def load_params(text: str) -> LSTMParams:
    lines = text.splitlines()
    if not lines or lines[0].strip() != NET_HEADER:
        raise ValueError("not a classifier params file")
    pos = 1
    arrays = {}
    for name in PARAM_NAMES:
        label, rows, cols = lines[pos].split()
        if label != name:
            raise ValueError(f"expected {name}, found {label}")
        rows, cols = int(rows), int(cols)
        data = [[float(x) for x in lines[pos + 1 + r].split()] for r in range(rows)]
        arr = np.array(data, dtype=float).reshape(rows, cols)
        arrays[name] = arr if name in ("embed", "W") else arr.reshape(-1)
        pos += 1 + rows
    return LSTMParams(**arrays)
