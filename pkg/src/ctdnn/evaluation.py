"""Embedding post-processing and the verification/identification metrics.

LDA keeps the top generalized eigenvectors of (S_w + shrinkage*I)^-1 S_b;
trials are scored with plain cosine similarity and summarized by the equal
error rate, interpolated between adjacent operating points.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    ConditioningError,
    EmptyInputError,
    FormatError,
    RankError,
    UndefinedScoreError,
    UnknownUtteranceError,
    ValidationError,
)

LDA_MAGIC = b"CTDL"
LDA_VERSION = 1


@dataclass
class Embedding:
    utt_id: str
    speaker_id: str  # "-" when unknown
    vector: np.ndarray


@dataclass(frozen=True)
class Trial:
    enroll_utt: str
    test_utt: str
    target: bool


@dataclass
class LdaModel:
    projection: np.ndarray  # (d, input_dim)
    class_count: int
    shrinkage: float


def lda_fit(embeddings: list[Embedding], d: int, shrinkage: float | None = None) -> LdaModel:
    """Fisher discriminant directions from labeled embeddings.

    Rows of the projection are the top-d eigenvectors of the shrunk
    generalized problem S_b v = w (S_w + shrinkage*I) v, eigenvalue-descending,
    sign-fixed so each row's first nonzero component is positive.  The default
    shrinkage is 1e-4 * trace(S_w) / dim.
    """
    by_class: dict[str, list[np.ndarray]] = {}
    for e in embeddings:
        by_class.setdefault(e.speaker_id, []).append(np.asarray(e.vector, dtype=np.float64))
    if len(by_class) < 2:
        raise ValidationError(f"LDA needs >= 2 classes, got {len(by_class)}")
    for spk, vecs in by_class.items():
        if len(vecs) < 2:
            raise ValidationError(f"class '{spk}' has {len(vecs)} samples, need >= 2")
    n_classes = len(by_class)
    if d > n_classes - 1:
        raise RankError(f"d={d} exceeds the class_count-1 bound ({n_classes - 1})")
    dim = next(iter(by_class.values()))[0].size
    if d > dim or d < 1:
        raise RankError(f"d={d} outside [1, {dim}]")

    overall = np.mean([v for vecs in by_class.values() for v in vecs], axis=0)
    s_w = np.zeros((dim, dim))
    s_b = np.zeros((dim, dim))
    for vecs in by_class.values():
        cls = np.stack(vecs)
        mu = cls.mean(axis=0)
        centered = cls - mu
        s_w += centered.T @ centered
        diff = (mu - overall)[:, None]
        s_b += len(vecs) * (diff @ diff.T)
    if shrinkage is None:
        shrinkage = 1e-4 * np.trace(s_w) / dim
    try:
        evals, evecs = scipy.linalg.eigh(s_b, s_w + shrinkage * np.eye(dim))
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise ConditioningError(
            f"within-class scatter not positive definite ({e}); increase shrinkage"
        ) from None
    order = np.argsort(evals)[::-1][:d]
    rows = evecs[:, order].T.copy()
    for row in rows:
        nz = np.nonzero(np.abs(row) > 1e-12)[0]
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return LdaModel(projection=rows, class_count=n_classes, shrinkage=float(shrinkage))


def lda_project(model: LdaModel, e: Embedding) -> Embedding:
    """Project one embedding into the discriminant subspace, keeping metadata."""
    return Embedding(e.utt_id, e.speaker_id, model.projection @ np.asarray(e.vector, float))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise UndefinedScoreError("cosine undefined for a zero vector")
    return float(a @ b / (na * nb))


def score_trials(
    trials: list[Trial], store: dict[str, Embedding]
) -> list[tuple[Trial, float]]:
    """One cosine score per trial, order preserved."""
    scored = []
    for tr in trials:
        for utt in (tr.enroll_utt, tr.test_utt):
            if utt not in store:
                raise UnknownUtteranceError(f"utterance '{utt}' not in embedding store")
        scored.append((tr, cosine(store[tr.enroll_utt].vector, store[tr.test_utt].vector)))
    return scored


def compute_eer(target_scores, nontarget_scores) -> float:
    """Equal error rate over pooled thresholds.

    FAR(t) = fraction of nontargets >= t, FRR(t) = fraction of targets < t;
    the crossing is linearly interpolated between the adjacent operating
    points where FAR - FRR changes sign.
    """
    t = np.sort(np.asarray(target_scores, dtype=np.float64))
    n = np.sort(np.asarray(nontarget_scores, dtype=np.float64))
    if t.size == 0 or n.size == 0:
        raise EmptyInputError("EER needs nonempty target and nontarget score sets")
    thr = np.unique(np.concatenate([t, n]))
    frr = np.searchsorted(t, thr, side="left") / t.size
    far = (n.size - np.searchsorted(n, thr, side="left")) / n.size
    # one operating point past the max threshold: reject everything
    far = np.append(far, 0.0)
    frr = np.append(frr, 1.0)
    diff = far - frr  # monotone nonincreasing, starts at 1
    idx = int(np.searchsorted(-diff, 0.0, side="left"))
    if diff[idx] == 0.0:
        return float(far[idx])
    alpha = diff[idx - 1] / (diff[idx - 1] - diff[idx])
    return float(far[idx - 1] + alpha * (far[idx] - far[idx - 1]))


def top1_accuracy(logits_list, labels) -> float:
    """Fraction of argmax hits; argmax ties break toward the lowest class index."""
    if len(logits_list) != len(labels):
        raise ValidationError(f"{len(logits_list)} logit rows for {len(labels)} labels")
    if not labels:
        raise EmptyInputError("accuracy over an empty set")
    hits = sum(int(int(np.argmax(z)) == y) for z, y in zip(logits_list, labels))
    return hits / len(labels)


# ---------------------------------------------------------------------------
# file formats

def write_embeddings(path, embeddings: list[Embedding]) -> None:
    """Text store: header "dim=<d>", then utt<TAB>speaker<TAB>comma-joined values."""
    if not embeddings:
        raise EmptyInputError("refusing to write an empty embedding store")
    dim = embeddings[0].vector.size
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={dim}\n")
        for e in embeddings:
            if e.vector.size != dim:
                raise ValidationError(f"embedding '{e.utt_id}' has dim {e.vector.size} != {dim}")
            values = ",".join(f"{v:.9g}" for v in e.vector)
            fh.write(f"{e.utt_id}\t{e.speaker_id}\t{values}\n")


def read_embeddings(path) -> list[Embedding]:
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise FormatError(f"bad embedding header '{header}'", 0)
        dim = int(header[4:])
        for ln, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise FormatError(f"line {ln}: expected 3 tab-separated fields", 0)
            vec = np.array([float(v) for v in parts[2].split(",")])
            if vec.size != dim:
                raise FormatError(f"line {ln}: {vec.size} values, header says {dim}", 0)
            out.append(Embedding(parts[0], parts[1], vec))
    return out


def write_trials(path, trials: list[Trial]) -> None:
    """Lines "enroll<TAB>test<TAB>{1|0}" (1 = target)."""
    with open(path, "w", encoding="utf-8") as fh:
        for tr in trials:
            fh.write(f"{tr.enroll_utt}\t{tr.test_utt}\t{1 if tr.target else 0}\n")


def read_trials(path) -> list[Trial]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise FormatError(f"trial line {ln} malformed", 0)
            out.append(Trial(parts[0], parts[1], parts[2] == "1"))
    return out


def write_scores(path, scored: list[tuple[Trial, float]]) -> None:
    """Lines "enroll<TAB>test<TAB>score" with 6 decimal places."""
    with open(path, "w", encoding="utf-8") as fh:
        for tr, score in scored:
            fh.write(f"{tr.enroll_utt}\t{tr.test_utt}\t{score:.6f}\n")


def read_scores(path) -> list[tuple[str, str, float]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"score line {ln} malformed", 0)
            out.append((parts[0], parts[1], float(parts[2])))
    return out


def save_lda(path, model: LdaModel) -> None:
    d, dim = model.projection.shape
    with open(path, "wb") as fh:
        fh.write(LDA_MAGIC)
        fh.write(struct.pack("<HIIId", LDA_VERSION, d, dim, model.class_count, model.shrinkage))
        fh.write(model.projection.astype("<f8").tobytes())


def load_lda(path) -> LdaModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != LDA_MAGIC:
        raise FormatError("bad LDA magic", 0)
    version, d, dim, class_count, shrinkage = struct.unpack_from("<HIIId", blob, 4)
    if version != LDA_VERSION:
        raise FormatError(f"unsupported LDA version {version}", 4)
    header = 4 + struct.calcsize("<HIIId")
    if len(blob) != header + 8 * d * dim:
        raise FormatError("LDA payload size mismatch", len(blob))
    projection = np.frombuffer(blob, dtype="<f8", offset=header).reshape(d, dim).copy()
    return LdaModel(projection, class_count, shrinkage)
