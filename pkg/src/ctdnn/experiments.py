"""Desk-scale experiment drivers comparing the crossed and plain delay stacks.

Three runnable studies on synthetic speaker corpora: few-shot identification
accuracy, convergence speed on the full split, and an open-set verification
pipeline (embed -> LDA -> cosine -> EER).  All runs are deterministic given
their seeds; scripts/ wraps each driver in a CLI.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import data, evaluation, model, train

FEWSHOT_WIDTH = 32
FEWSHOT_LR = 1e-4
FEWSHOT_BATCH = 16


def _corpus(out_dir, seed, n_speakers=10, utts_per_speaker=20, frames=300, dim=13):
    spec = data.SynthSpec(
        n_speakers=n_speakers,
        utts_per_speaker=utts_per_speaker,
        frames_per_utt=frames,
        dim=dim,
        seed=seed,
    )
    return data.synth_corpus(spec, out_dir)


def _train_model(arch, train_set, val_set, seed, width, cfg_kwargs):
    config = model.parse_arch(
        arch,
        input_dim=train_set[0].frames.shape[1],
        num_classes=len(train.class_map_for(train_set)),
        width=width,
    )
    net = model.build_model(config, seed=seed)
    cfg = train.TrainConfig(seed=seed, **cfg_kwargs)
    return train.fit(net, train_set, val_set, cfg)


@dataclass
class FewshotResult:
    per_seed: dict[int, dict[str, float]] = field(default_factory=dict)

    def mean(self, arch: str) -> float:
        return float(np.mean([r[arch] for r in self.per_seed.values()]))


def run_fewshot(
    workdir,
    seeds=(1, 2, 3, 4, 5),
    width=FEWSHOT_WIDTH,
    lr=FEWSHOT_LR,
    batch_size=FEWSHOT_BATCH,
    max_epochs=300,
    patience=40,
) -> FewshotResult:
    """Few-shot study: train on 2 utterances per speaker, report test top-1.

    Per seed, both architectures see the same corpus and the same training
    seed; accuracy is measured with the best-epoch weights in infer mode.
    """
    result = FewshotResult()
    for seed in seeds:
        paths = _corpus(os.path.join(workdir, f"seed{seed}"), seed)
        mini = data.load_corpus(paths["train_mini"])
        val = data.load_corpus(paths["val"])
        test = data.load_corpus(paths["test"])
        class_map = train.class_map_for(mini)
        accs = {}
        for arch in ("ctdnn-paper", "tdnn-paper"):
            net, _ = _train_model(
                arch, mini, val, seed, width,
                dict(batch_size=batch_size, lr=lr, max_epochs=max_epochs, patience=patience),
            )
            _, accs[arch] = train.evaluate(net, test, class_map)
        result.per_seed[seed] = accs
    return result


@dataclass
class ConvergenceResult:
    # per seed: epoch at which train accuracy first reached the threshold (None = never)
    per_seed: dict[int, dict[str, int | None]] = field(default_factory=dict)
    curve_files: list[str] = field(default_factory=list)

    def wins(self) -> int:
        """Seeds where the crossed stack converged no later than the plain one."""
        count = 0
        for r in self.per_seed.values():
            c, t = r["ctdnn-paper"], r["tdnn-paper"]
            if c is not None and (t is None or c <= t):
                count += 1
        return count


def run_convergence(
    workdir,
    seeds=(1, 2, 3, 4, 5),
    width=FEWSHOT_WIDTH,
    lr=FEWSHOT_LR,
    batch_size=FEWSHOT_BATCH,
    max_epochs=80,
    threshold=0.99,
) -> ConvergenceResult:
    """Convergence study on the full training split, paired seeds.

    Early stopping is disabled (patience = max_epochs) so both models log the
    same number of epochs; learning curves go to workdir as CSV files.
    """
    result = ConvergenceResult()
    for seed in seeds:
        paths = _corpus(os.path.join(workdir, f"seed{seed}"), seed)
        train_set = data.load_corpus(paths["train"])
        epochs = {}
        for arch in ("ctdnn-paper", "tdnn-paper"):
            net, curve = _train_model(
                arch, train_set, [], seed, width,
                dict(batch_size=batch_size, lr=lr, max_epochs=max_epochs, patience=max_epochs),
            )
            epochs[arch] = train.converged_epoch(curve, threshold)
            curve_path = os.path.join(workdir, f"curve_{arch.split('-')[0]}_seed{seed}.csv")
            train.write_curve(curve_path, curve)
            result.curve_files.append(curve_path)
        result.per_seed[seed] = epochs
    return result


@dataclass
class VerificationResult:
    eer: float
    n_trials: int
    model_file: str
    score_file: str
    score_bytes: bytes


def run_verification(
    workdir,
    seed=1,
    n_speakers=30,
    held_out=10,
    width=FEWSHOT_WIDTH,
    lr=FEWSHOT_LR,
    batch_size=FEWSHOT_BATCH,
    max_epochs=120,
    patience=15,
    pairs_per_utt=5,
) -> VerificationResult:
    """Open-set pipeline: train on the first speakers, verify on held-out ones.

    The crossed stack is trained as a closed-set classifier on the training
    speakers, embeddings are tapped at the pooling layer, an LDA projection
    (d = training classes - 1) is fitted on training-split embeddings, and
    held-out utterances are paired into trials and cosine-scored.
    """
    paths = _corpus(os.path.join(workdir, "corpus"), seed, n_speakers=n_speakers)
    all_entries = data.read_manifest(paths["all"])
    speakers = sorted({e.speaker_id for e in all_entries})
    train_speakers = set(speakers[: n_speakers - held_out])

    train_entries = [
        e for e in data.read_manifest(paths["train"]) if e.speaker_id in train_speakers
    ]
    val_entries = [e for e in data.read_manifest(paths["val"]) if e.speaker_id in train_speakers]
    eval_entries = [e for e in all_entries if e.speaker_id not in train_speakers]

    base = os.path.dirname(paths["all"])
    load = lambda entries: [
        data.read_features(os.path.join(base, e.path), e.utt_id, e.speaker_id) for e in entries
    ]
    train_set, val_set = load(train_entries), load(val_entries)
    net, _ = _train_model(
        "ctdnn-paper", train_set, val_set, seed, width,
        dict(batch_size=batch_size, lr=lr, max_epochs=max_epochs, patience=patience),
    )
    model_file = os.path.join(workdir, "ctdnn.model")
    model.save_model(model_file, net)

    lda = evaluation.lda_fit(
        [model.embed(net, seq) for seq in train_set], d=len(train_speakers) - 1
    )
    store = {
        seq.utt_id: evaluation.lda_project(lda, model.embed(net, seq))
        for seq in load(eval_entries)
    }
    trials = data.make_trials(eval_entries, pairs_per_utt=pairs_per_utt, seed=seed)
    scored = evaluation.score_trials(trials, store)
    score_file = os.path.join(workdir, "scores.tsv")
    evaluation.write_scores(score_file, scored)
    evaluation.write_trials(os.path.join(workdir, "trials.tsv"), trials)

    target = [s for tr, s in scored if tr.target]
    nontarget = [s for tr, s in scored if not tr.target]
    with open(score_file, "rb") as fh:
        score_bytes = fh.read()
    return VerificationResult(
        eer=evaluation.compute_eer(target, nontarget),
        n_trials=len(trials),
        model_file=model_file,
        score_file=score_file,
        score_bytes=score_bytes,
    )
