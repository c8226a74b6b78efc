"""End-to-end speaker verification: binary same/different-speaker training,
PLDA scoring between enrollment and test encodings, EER evaluation.
"""

import logging

import numpy as np

from ..audio import mel_spectrogram, verification_frontend
from ..autodiff import (
    Adam,
    NumericsError,
    ShapeError,
    Tensor,
    clip_grad_norm,
    clip_grad_value,
    no_grad,
    ops,
)
from ..evaluation.eer import compute_eer
from ..evaluation.plda import PldaParams, plda_logits
from .common import ParamModel, load_entries, pad_batch, param, save_model

log = logging.getLogger(__name__)


class VerificationModel(ParamModel):
    """Strided 2-D conv over (time, band), GRU, masked time pooling, FC, PLDA."""

    def __init__(self, num_bands=80, conv_channels=64, conv_filter=(20, 5),
                 conv_stride=(8, 2), gru_width=128, fc_width=128,
                 dropout_keep=0.9, seed=0):
        super().__init__()
        self.num_bands = num_bands
        self.conv_channels = conv_channels
        self.conv_filter = tuple(conv_filter)
        self.conv_stride = tuple(conv_stride)
        self.gru_width = gru_width
        self.fc_width = fc_width
        self.dropout_keep = dropout_keep
        self.seed = seed
        self.freq_out = (num_bands - self.conv_filter[1]) // self.conv_stride[1] + 1
        self.gru_in = self.freq_out * conv_channels

        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EC2)))
        kh, kw = self.conv_filter
        self.add_param("conv_w", param(rng, (kh, kw, conv_channels), kh * kw))
        self.add_param("conv_b", param(rng, (conv_channels,), kh * kw))
        self.add_param("bn_gamma", Tensor(np.ones(conv_channels, dtype=np.float32)))
        self.add_param("bn_beta", Tensor(np.zeros(conv_channels, dtype=np.float32)))
        self.bn_running = {"mean": np.zeros(conv_channels), "var": np.ones(conv_channels)}
        for gate in ("r", "z", "n"):
            self.add_param(f"gru_wx{gate}", param(rng, (self.gru_in, gru_width), self.gru_in))
            self.add_param(f"gru_wh{gate}", param(rng, (gru_width, gru_width), gru_width))
            self.add_param(f"gru_b{gate}", param(rng, (gru_width,), gru_width))
        self.add_param("fc_w", param(rng, (gru_width, fc_width), gru_width))
        self.add_param("fc_b", param(rng, (fc_width,), gru_width))
        # zero head: an untrained model scores every pair identically (chance
        # EER); w and M pick up gradient from the first step onward
        self.add_param("plda_w", Tensor(np.zeros(1, dtype=np.float32)))
        self.add_param("plda_b", Tensor(np.zeros(1, dtype=np.float32)))
        self.add_param("plda_m", Tensor(np.zeros((fc_width, fc_width), dtype=np.float32)))
        self._train_rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EC3)))

    def encode(self, mels, training=False):
        """Mel clips -> (B, fc_width) speaker encodings."""
        for m in mels:
            if m.shape[1] != self.num_bands:
                raise ShapeError(f"clip has {m.shape[1]} bands, expected {self.num_bands}")
        feats, _, lengths = pad_batch(list(mels))
        b = feats.shape[0]
        sh = self.conv_stride[0]

        conv = ops.relu(self._batch_norm(
            ops.conv2d(Tensor(feats), self.params["conv_w"], self.params["conv_b"],
                       stride=self.conv_stride),
            training,
        ))  # (B, T', F', C)
        t_out = conv.data.shape[1]
        out_lengths = np.minimum((lengths + sh - 1) // sh, t_out)
        x = ops.reshape(conv, (b, t_out, self.gru_in))

        gru_p = {
            "wxr": self.params["gru_wxr"], "whr": self.params["gru_whr"], "br": self.params["gru_br"],
            "wxz": self.params["gru_wxz"], "whz": self.params["gru_whz"], "bz": self.params["gru_bz"],
            "wxn": self.params["gru_wxn"], "whn": self.params["gru_whn"], "bn": self.params["gru_bn"],
        }
        h = Tensor(np.zeros((b, self.gru_width), dtype=np.float32))
        states = []
        for step in range(t_out):
            h_new = ops.gru_step(_slice_time(x, step), h, gru_p)
            alive = Tensor((step < out_lengths).astype(np.float32)[:, None])
            h = ops.add(ops.mul(h_new, alive), ops.mul(h, ops.sub(1.0, alive)))
            states.append(h)
        # mean over the states of valid steps (frozen steps carry zero weight)
        stacked = _stack_rows(states)  # (T', B, W)
        step_mask = (np.arange(t_out)[:, None] < out_lengths[None, :]).astype(np.float32)
        pooled = ops.total(ops.mul(stacked, Tensor(step_mask[:, :, None])), axis=0)
        pooled = ops.mul(pooled, Tensor(1.0 / out_lengths.astype(np.float32)[:, None]))
        return self._head(pooled, training)

    def _head(self, pooled, training):
        fc_in = ops.dropout(pooled, self.dropout_keep, self._train_rng, training)
        return ops.add(ops.matmul(fc_in, self.params["fc_w"]), self.params["fc_b"])

    def _batch_norm(self, conv, training):
        b, t, f, c = conv.data.shape
        flat = ops.reshape(conv, (b * t * f, c))
        normed = ops.batch_norm(
            flat, self.params["bn_gamma"], self.params["bn_beta"],
            self.bn_running, training=training,
        )
        return ops.reshape(normed, (b, t, f, c))

    # -- scoring -------------------------------------------------------------

    def pair_logits(self, enroll_mel_groups, test_mels, training=False):
        """PLDA logits for (enrollment group, test clip) pairs.

        ``enroll_mel_groups`` is a list of clip lists; each group is encoded
        clip by clip and mean-pooled before the FC head sees it.
        """
        sizes = [len(g) for g in enroll_mel_groups]
        flat = [m for g in enroll_mel_groups for m in g]
        enc_flat = self.encode(flat, training=training)
        groups = []
        offset = 0
        for size in sizes:
            chunk = _slice_rows(enc_flat, offset, size)
            groups.append(ops.mean(chunk, axis=0) if size > 1 else ops.reshape(chunk, (self.fc_width,)))
            offset += size
        enroll = _stack_rows(groups)
        test = self.encode(test_mels, training=training)
        return plda_logits(enroll, test, self.params["plda_w"], self.params["plda_b"],
                           self.params["plda_m"])

    def plda(self) -> PldaParams:
        m = self.params["plda_m"].data.astype(np.float64)
        return PldaParams(
            w=float(self.params["plda_w"].data[0]),
            b=float(self.params["plda_b"].data[0]),
            S=m + m.T,
        )

    def config(self):
        return {
            "num_bands": self.num_bands,
            "conv_channels": self.conv_channels,
            "conv_filter_t": self.conv_filter[0],
            "conv_filter_f": self.conv_filter[1],
            "conv_stride_t": self.conv_stride[0],
            "conv_stride_f": self.conv_stride[1],
            "gru_width": self.gru_width,
            "fc_width": self.fc_width,
            "dropout_keep": self.dropout_keep,
            "seed": self.seed,
        }

    def save(self, path):
        save_model(path, self, self.config(), extra_entries={
            "bn_running_mean": self.bn_running["mean"].astype(np.float32),
            "bn_running_var": self.bn_running["var"].astype(np.float32),
        })

    @classmethod
    def load(cls, path):
        entries, cfg = load_entries(path)
        model = cls(
            num_bands=int(cfg["num_bands"]),
            conv_channels=int(cfg["conv_channels"]),
            conv_filter=(int(cfg["conv_filter_t"]), int(cfg["conv_filter_f"])),
            conv_stride=(int(cfg["conv_stride_t"]), int(cfg["conv_stride_f"])),
            gru_width=int(cfg["gru_width"]),
            fc_width=int(cfg["fc_width"]),
            dropout_keep=float(cfg["dropout_keep"]),
            seed=int(cfg.get("seed", 0)),
        )
        model.load_state_entries({k: v for k, v in entries.items() if k in model.params})
        model.bn_running["mean"] = entries["bn_running_mean"].astype(np.float64)
        model.bn_running["var"] = entries["bn_running_var"].astype(np.float64)
        return model


def _slice_time(x, step):
    """(B, T, C) -> (B, C) at one time step, differentiable."""
    t = x.data.shape[1]
    picked = x.data[:, step, :]

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, step, :] = g
        return [(x, dx)]

    from ..autodiff.tensor import make_op

    return make_op(picked.copy(), (x,), backward, "slice_time")


def _slice_rows(x, offset, count):
    picked = x.data[offset : offset + count]

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[offset : offset + count] = g
        return [(x, dx)]

    from ..autodiff.tensor import make_op

    return make_op(picked.copy(), (x,), backward, "slice_rows")


def _stack_rows(rows):
    data = np.stack([r.data for r in rows])

    def backward(g):
        return [(r, g[i]) for i, r in enumerate(rows)]

    from ..autodiff.tensor import make_op

    return make_op(data, tuple(rows), backward, "stack_rows")


# ---------------------------------------------------------------------------
# training

def sample_pairs(manifest, speaker_ids, rng, count, cache):
    """50/50 same/different-speaker clip pairs from the given speakers."""
    by_speaker = {sid: manifest.rows_for(sid) for sid in speaker_ids}
    usable = [sid for sid, rows in by_speaker.items() if len(rows) >= 2]
    pairs = []
    for i in range(count):
        same = i % 2 == 0
        if same:
            sid = usable[int(rng.integers(len(usable)))]
            a, b = rng.choice(len(by_speaker[sid]), size=2, replace=False)
            pairs.append((cache(by_speaker[sid][a]), cache(by_speaker[sid][b]), 1.0))
        else:
            sa, sb = rng.choice(len(speaker_ids), size=2, replace=False)
            ra = by_speaker[speaker_ids[sa]]
            rb = by_speaker[speaker_ids[sb]]
            pairs.append((
                cache(ra[int(rng.integers(len(ra)))]),
                cache(rb[int(rng.integers(len(rb)))]),
                0.0,
            ))
    return pairs


def train_verifier(
    model: VerificationModel,
    manifest,
    val_speakers,
    iterations=600,
    batch_size=64,
    lr=1e-3,
    max_grad_norm=100.0,
    max_grad_value=5.0,
    seed=0,
    eval_every=100,
    eval_trials=512,
    cache=None,
):
    """Binary cross-entropy on PLDA-scored pairs; val speakers are disjoint."""
    from .encoder import MelCache

    cache = cache or MelCache(manifest, verification_frontend())
    val_speakers = list(val_speakers)
    train_ids = [s for s in manifest.speakers() if s not in val_speakers]
    overlap = set(train_ids) & set(val_speakers)
    if overlap:
        raise ValueError(f"speakers in both train and validation: {sorted(overlap)}")
    if len(train_ids) < 2 or len(val_speakers) < 2:
        raise ValueError("need >= 2 speakers on each side of the split")

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EC4)))
    opt = Adam(model.params, lr=lr)
    history = {"iteration": [], "train_ce": [], "val_eer": []}
    for it in range(1, iterations + 1):
        pairs = sample_pairs(manifest, train_ids, rng, batch_size, cache)
        logits = model.pair_logits([[a] for a, _, _ in pairs], [b for _, b, _ in pairs],
                                   training=True)
        targets = np.array([t for _, _, t in pairs], dtype=np.float32)
        loss = ops.sigmoid_ce_logits(logits, targets)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericsError(f"non-finite verifier loss at iteration {it}")
        model.zero_grad()
        loss.backward()
        clip_grad_norm(model.params, max_grad_norm)
        clip_grad_value(model.params, max_grad_value)
        opt.step()
        if it % eval_every == 0 or it == iterations:
            report = evaluate_verifier(model, manifest, val_speakers,
                                       trials=eval_trials, seed=seed + it, cache=cache)
            history["iteration"].append(it)
            history["train_ce"].append(value)
            history["val_eer"].append(report.eer)
            log.info("verifier iter %d ce %.4f val EER %.3f", it, value, report.eer)
    return history


def evaluate_verifier(model, manifest, speaker_ids, trials=1024, seed=0, cache=None):
    """EER over random same/different pairs of held-out speakers."""
    from .encoder import MelCache

    cache = cache or MelCache(manifest, verification_frontend())
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EC5)))
    pairs = sample_pairs(manifest, list(speaker_ids), rng, trials, cache)
    scores = []
    with no_grad():
        for start in range(0, len(pairs), 256):
            chunk = pairs[start : start + 256]
            logits = model.pair_logits([[a] for a, _, _ in chunk],
                                       [b for _, b, _ in chunk], training=False)
            scores.append(logits.data.copy())
    scores = np.concatenate(scores)
    labels = np.array([t for _, _, t in pairs], dtype=bool)
    return compute_eer(scores, labels)
