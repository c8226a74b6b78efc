"""Embedding-space analytics: PCA projection, attribute means, voice morphing."""

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError


class EmbeddingSpaceError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    """speaker_id -> embedding plus the corpus ground-truth attribute labels."""

    embeddings: dict
    gender: dict
    accent: dict

    def __post_init__(self):
        dims = {v.shape for v in self.embeddings.values()}
        if len(dims) > 1:
            raise EmbeddingSpaceError(f"mixed embedding shapes: {dims}")

    @property
    def dim(self):
        return next(iter(self.embeddings.values())).shape[0]

    def matrix(self, ids=None):
        ids = list(ids) if ids is not None else sorted(self.embeddings)
        return ids, np.stack([self.embeddings[i] for i in ids])

    @classmethod
    def from_speakers(cls, embeddings, speakers):
        by_id = {sp.speaker_id: sp for sp in speakers}
        missing = set(embeddings) - set(by_id)
        if missing:
            raise EmbeddingSpaceError(f"no attribute labels for {sorted(missing)}")
        return cls(
            embeddings={k: np.asarray(v, dtype=np.float64) for k, v in embeddings.items()},
            gender={k: by_id[k].gender_label for k in embeddings},
            accent={k: by_id[k].accent_label for k in embeddings},
        )


def encoder_table(encoder, manifest, speakers, n_samples=5, seed=0, cache=None):
    """Default analysis pipeline: encoder embeddings from one n-sample set each."""
    from .models.encoder import MelCache

    cache = cache or MelCache(manifest)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7AB1E)))
    embeddings = {}
    for sid in manifest.speakers():
        rows = manifest.rows_for(sid)
        if len(rows) < n_samples:
            continue
        pick = rng.choice(len(rows), size=n_samples, replace=False)
        emb, _ = encoder.encode([cache(rows[i]) for i in pick])
        embeddings[sid] = emb.astype(np.float64)
    return EmbeddingTable.from_speakers(embeddings, speakers)


# ---------------------------------------------------------------------------
# PCA via orthogonal iteration

@dataclass
class PcaProjection:
    components: np.ndarray  # (k, dim), orthonormal rows
    explained: np.ndarray   # fractions of total variance, descending
    mean: np.ndarray

    def project(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def reconstruct(self, z):
        return np.asarray(z, dtype=np.float64) @ self.components + self.mean


def _orthonormalize(q):
    for j in range(q.shape[1]):
        for i in range(j):
            q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        norm = np.linalg.norm(q[:, j])
        if norm < 1e-14:
            q[:, j] = 0.0
            q[j % q.shape[0], j] = 1.0
            for i in range(j):
                q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
            norm = np.linalg.norm(q[:, j])
        q[:, j] /= norm
    return q


def pca_fit(table, k, tol=1e-8, max_sweeps=1000) -> PcaProjection:
    """Principal axes of the centered embeddings by orthogonal iteration."""
    if isinstance(table, EmbeddingTable):
        _, x = table.matrix()
    else:
        x = np.asarray(table, dtype=np.float64)
    n, d = x.shape
    if k > d:
        raise EmbeddingSpaceError(f"cannot extract {k} components from dimension {d}")
    if n < k + 1:
        raise EmbeddingSpaceError(f"need at least {k + 1} embeddings, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n

    q = np.zeros((d, k))
    for j in range(k):
        q[j, j] = 1.0
    for _ in range(max_sweeps):
        z = _orthonormalize(cov @ q)
        if np.max(np.abs(np.abs((z * q).sum(axis=0)) - 1.0)) < tol:
            q = z
            break
        q = z

    eig = np.einsum("dk,de,ek->k", q, cov, q)
    order = np.argsort(-eig)
    q = q[:, order]
    eig = np.maximum(eig[order], 0.0)
    for j in range(k):  # sign convention: largest-magnitude coordinate positive
        lead = np.argmax(np.abs(q[:, j]))
        if q[lead, j] < 0:
            q[:, j] = -q[:, j]
    total = np.trace(cov)
    explained = eig / total if total > 0 else np.zeros(k)
    return PcaProjection(components=q.T.copy(), explained=explained, mean=mean)


# ---------------------------------------------------------------------------
# attribute arithmetic

def attribute_mean(table: EmbeddingTable, predicate) -> np.ndarray:
    """Mean embedding over speakers matched by predicate(speaker_id, gender, accent)."""
    picked = [
        table.embeddings[sid]
        for sid in sorted(table.embeddings)
        if predicate(sid, table.gender[sid], table.accent[sid])
    ]
    if not picked:
        raise EmbeddingSpaceError("predicate matched no speakers")
    return np.mean(picked, axis=0)


def gender_mean(table, label):
    return attribute_mean(table, lambda sid, g, a: g == label)


def accent_mean(table, label):
    return attribute_mean(table, lambda sid, g, a: a == label)


def morph(e, add, subtract):
    """Embedding arithmetic: e + add - subtract.

    Grouped as e + (add - subtract) so a no-op transform (add == subtract)
    returns e bit-exactly.
    """
    e = np.asarray(e, dtype=np.float64)
    add = np.asarray(add, dtype=np.float64)
    subtract = np.asarray(subtract, dtype=np.float64)
    if not (e.shape == add.shape == subtract.shape):
        raise ShapeError(
            f"morph dimensions differ: {e.shape}, {add.shape}, {subtract.shape}"
        )
    return e + (add - subtract)


def export_scatter(table: EmbeddingTable, projection: PcaProjection, out_path):
    """speaker_id, pc1, pc2, gender, accent rows for any plotting tool."""
    if projection.components.shape[0] < 2:
        raise EmbeddingSpaceError("need a projection with at least 2 components")
    ids, x = table.matrix()
    z = projection.project(x)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["speaker_id", "pc1", "pc2", "gender", "accent"])
        for sid, row in zip(ids, z):
            writer.writerow(
                [sid, f"{row[0]:.6f}", f"{row[1]:.6f}", table.gender[sid], table.accent[sid]]
            )
