"""Experiment runner and command line interface.

One flat JSON config drives every stage; a master seed fans out into
independent per-stage streams (data, adversarial training, synthesis,
classifiers) so rerunning any stage in isolation reproduces its
randomness.  ``run_pipeline`` executes generate/load -> train ->
synthesize -> fit classifiers -> evaluate and returns a plain dict that
serializes byte-identically across replays (only ``runtime_seconds``
varies).

Subcommands: ``gen-data``, ``train``, ``synth``, ``eval``, ``ablate``,
``inspect-checkpoint``.  Checkpoints are a little-endian binary table of
named float64 tensors plus the config digest.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import struct
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import data, gan, metrics
from .classifiers import ClassifierConfig, predict_scores, train_gzsl, train_zsl
from .data import ClassSpace, DataFormatError, feature_matrix
from .fusion import MODES, assign_generator, init_generator
from .gan import OBJECTIVES, SeenClassifierParams, TrainConfig, ZslModels, init_critic, init_encoder
from .nn import assign_mlp, mlp_param_dict

MAGIC_CHECKPOINT = b"MLZC"
CHECKPOINT_VERSION = 1
DIGEST_KEY = "_config_digest"

STAGE_CODES = {"data": 0, "gan": 1, "synth": 2, "cls": 3}


class CheckpointError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, error: BaseException):
        super().__init__(f"{stage}: {error}")
        self.stage = stage
        self.error = error


@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as err:
        raise PipelineError(name, err) from err


@dataclass
class ExperimentConfig:
    """Flat, JSON-serializable description of one experiment."""

    # synthetic data (ignored for the generator when *_path entries are set)
    seen_count: int = 20
    unseen_count: int = 6
    embed_dim: int = 16
    feature_dim: int = 32
    train_count: int = 2000
    test_count: int = 500
    max_labels: int = 2
    noise_sigma: float = 0.05
    cluster_count: int = 4
    # optional on-disk corpus
    embeddings_path: str | None = None
    train_path: str | None = None
    test_seen_path: str | None = None
    test_unseen_path: str | None = None
    # adversarial training
    mode: str = "CLF"
    objective: str = "CLSWGAN"
    penalty_weight: float = 10.0
    classifier_weight: float = 0.1
    kl_weight: float = 1.0
    reconstruction_weight: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 40
    critic_steps: int = 5
    noise_dim: int | None = None
    heads: int = 8
    gen_hidden: int = 64
    critic_hidden: int = 64
    mix_hidden: int = 128
    encoder_hidden: int = 64
    pretrain_epochs: int = 30
    # synthesis for the downstream classifiers
    synth_per_class: int = 150
    synth_max_labels: int | None = None
    # classifier fitting
    cls_epochs: int = 50
    cls_learning_rate: float = 5e-2
    cls_batch_size: int | None = 64
    # evaluation
    top_k: tuple = (1, 3)
    # master seed
    seed: int = 0


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def config_from_dict(raw: dict) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    cfg = ExperimentConfig(**raw)
    if isinstance(cfg.top_k, (int, float)):
        cfg.top_k = (int(cfg.top_k),)
    cfg.top_k = tuple(int(k) for k in cfg.top_k)
    return cfg


def load_config(path: str | None, overrides=()) -> ExperimentConfig:
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a JSON object")
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"unknown config key {key!r}")
        try:
            raw[key] = json.loads(text)
        except json.JSONDecodeError:
            raw[key] = text
    return config_from_dict(raw)


def config_dict(config: ExperimentConfig) -> dict:
    out = dataclasses.asdict(config)
    out["top_k"] = list(config.top_k)
    return out


def config_digest(config: ExperimentConfig) -> bytes:
    canonical = json.dumps(config_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).digest()


def stage_seed(master: int, stage: str) -> int:
    """Independent integer seed for one named pipeline stage."""
    code = STAGE_CODES[stage]
    state = np.random.SeedSequence([int(master), code]).generate_state(1)[0]
    return int(state % (2**31 - 1))


# ----------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, tensors: dict, digest: bytes) -> None:
    items = {name: np.ascontiguousarray(np.asarray(v, dtype=np.float64)) for name, v in tensors.items()}
    if len(digest) != 32:
        raise ValueError("config digest must be 32 bytes")
    items[DIGEST_KEY] = np.frombuffer(digest, dtype=np.uint8).astype(np.float64).reshape(1, 32)
    with open(path, "wb") as fh:
        fh.write(MAGIC_CHECKPOINT)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(items)))
        for name in sorted(items):
            arr = items[name]
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[bytes, dict]:
    """Returns (config digest bytes, name -> float64 tensor)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC_CHECKPOINT:
        raise CheckpointError(path, "bad magic, not a checkpoint file")
    if len(blob) < 12:
        raise CheckpointError(path, "truncated header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(path, f"unsupported version {version}")
    offset = 12
    tensors = {}
    for i in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(dims)
            offset += 8 * size
        except (struct.error, ValueError) as err:
            raise CheckpointError(path, f"tensor {i}: {err}") from err
        tensors[name] = np.ascontiguousarray(arr)
    if offset != len(blob):
        raise CheckpointError(path, f"{len(blob) - offset} trailing bytes")
    if DIGEST_KEY not in tensors:
        raise CheckpointError(path, "missing config digest entry")
    digest_arr = tensors.pop(DIGEST_KEY)
    if digest_arr.size != 32:
        raise CheckpointError(path, "config digest entry must hold 32 bytes")
    digest = bytes(digest_arr.astype(np.uint8).ravel().tolist())
    return digest, tensors


def model_tensors(models: ZslModels) -> dict:
    from .fusion import generator_param_dict

    out = generator_param_dict("gen", models.generator)
    out.update(mlp_param_dict("critic", models.critic))
    if models.encoder is not None:
        out.update(mlp_param_dict("enc", models.encoder))
    out.update(models.seen_classifier.param_dict())
    return out


def models_from_tensors(config: ExperimentConfig, tensors: dict, path="checkpoint") -> ZslModels:
    """Rebuild the model stack a checkpoint was saved from; shapes must match."""
    d, d_e = config.feature_dim, config.embed_dim
    d_z = config.noise_dim or d_e
    generator = init_generator(config.mode, d, d_e, d_z, config.gen_hidden, config.heads, config.mix_hidden)
    critic = init_critic(d, d_e, config.critic_hidden)
    encoder = init_encoder(d, d_e, d_z, config.encoder_hidden) if config.objective == "VAEGAN" else None
    fcls = SeenClassifierParams(
        np.zeros((d, config.seen_count)), np.zeros((1, config.seen_count)), frozen=True
    )
    from .fusion import generator_param_dict

    expected = generator_param_dict("gen", generator)
    expected.update(mlp_param_dict("critic", critic))
    if encoder is not None:
        expected.update(mlp_param_dict("enc", encoder))
    expected.update(fcls.param_dict())
    for name, ref in sorted(expected.items()):
        if name not in tensors:
            raise CheckpointError(path, f"missing tensor {name!r}")
        if tensors[name].shape != ref.shape:
            raise CheckpointError(
                path,
                f"tensor {name!r} has shape {tensors[name].shape}, config expects {ref.shape}",
            )
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise CheckpointError(path, f"unexpected tensors: {', '.join(extra)}")
    assign_generator(generator, "gen", tensors)
    assign_mlp(critic, "critic", tensors)
    if encoder is not None:
        assign_mlp(encoder, "enc", tensors)
    fcls.weight = tensors["fcls.w"]
    fcls.bias = tensors["fcls.b"]
    return ZslModels(generator, critic, encoder, fcls)


# ----------------------------------------------------------------------
# pipeline


def class_space(config: ExperimentConfig) -> ClassSpace:
    return ClassSpace(config.seen_count, config.unseen_count)


def synthetic_data_config(config: ExperimentConfig) -> data.SyntheticConfig:
    return data.SyntheticConfig(
        seen_count=config.seen_count,
        unseen_count=config.unseen_count,
        embed_dim=config.embed_dim,
        feature_dim=config.feature_dim,
        train_count=config.train_count,
        test_count=config.test_count,
        max_labels=config.max_labels,
        noise_sigma=config.noise_sigma,
        cluster_count=config.cluster_count,
        seed=stage_seed(config.seed, "data"),
    )


def obtain_corpus(config: ExperimentConfig):
    if config.train_path is not None:
        if config.embeddings_path is None:
            raise ValueError("train_path requires embeddings_path")
        return data.load_dataset(
            class_space(config),
            config.embeddings_path,
            config.train_path,
            config.test_seen_path,
            config.test_unseen_path,
        )
    return data.generate_synthetic(synthetic_data_config(config))


def train_config(config: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        mode=config.mode,
        objective=config.objective,
        penalty_weight=config.penalty_weight,
        classifier_weight=config.classifier_weight,
        kl_weight=config.kl_weight,
        reconstruction_weight=config.reconstruction_weight,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        epochs=config.epochs,
        critic_steps=config.critic_steps,
        noise_dim=config.noise_dim,
        heads=config.heads,
        gen_hidden=config.gen_hidden,
        critic_hidden=config.critic_hidden,
        mix_hidden=config.mix_hidden,
        encoder_hidden=config.encoder_hidden,
        pretrain_epochs=config.pretrain_epochs,
        seed=stage_seed(config.seed, "gan"),
    )


def synthesize_for_classifiers(config: ExperimentConfig, models: ZslModels, space: ClassSpace, table):
    max_labels = config.synth_max_labels
    if max_labels is None:
        max_labels = max(1, min(config.max_labels, space.unseen_count))
    return gan.synthesize_unseen(
        models.generator,
        space,
        table,
        count_per_class=config.synth_per_class,
        max_labels=max_labels,
        seed=stage_seed(config.seed, "synth"),
    )


def _eval_block(clf, instances, top_k) -> dict:
    scores = predict_scores(clf, feature_matrix(instances))
    column = {label: i for i, label in enumerate(clf.class_indices)}
    truths = [tuple(column[l] for l in inst.labels) for inst in instances]
    table = metrics.EvalTable(scores, truths)
    block = {"mAP": float(metrics.mean_ap(table)), "per_k": {}}
    for k in top_k:
        p, r, f1 = metrics.topk_prf(table, k)
        block["per_k"][str(k)] = {"precision": float(p), "recall": float(r), "f1": float(f1)}
    return block


def run_pipeline(config: ExperimentConfig) -> tuple[dict, dict]:
    """Full experiment; returns (results dict, artifacts dict).

    Artifacts carry the corpus, models, trace, and synthesized instances
    for callers that save checkpoints or traces.
    """
    started = time.perf_counter()
    with _stage("data"):
        corpus = obtain_corpus(config)
        space = corpus.class_space
    with _stage("train"):
        result = gan.train(config.objective, corpus, train_config(config))
    with _stage("synth"):
        synth = synthesize_for_classifiers(config, result.models, space, corpus.embeddings)
    with _stage("classify"):
        cls_cfg = ClassifierConfig(
            epochs=config.cls_epochs,
            learning_rate=config.cls_learning_rate,
            batch_size=config.cls_batch_size,
            seed=stage_seed(config.seed, "cls"),
        )
        zsl_clf = train_zsl(synth, space, cls_cfg) if space.unseen_count else None
        gzsl_clf = train_gzsl(synth, corpus.train_seen, space, cls_cfg)
    with _stage("evaluate"):
        results = {
            "config_digest": config_digest(config).hex(),
            "mode": config.mode,
            "objective": config.objective,
        }
        if zsl_clf is not None and corpus.test_unseen:
            results["zsl"] = _eval_block(zsl_clf, corpus.test_unseen, config.top_k)
        gzsl_pool = list(corpus.test_seen) + list(corpus.test_unseen)
        if gzsl_pool:
            results["gzsl"] = _eval_block(gzsl_clf, gzsl_pool, config.top_k)
    results["runtime_seconds"] = time.perf_counter() - started
    artifacts = {
        "corpus": corpus,
        "models": result.models,
        "trace": result.trace,
        "synthesized": synth,
        "zsl_classifier": zsl_clf,
        "gzsl_classifier": gzsl_clf,
    }
    return results, artifacts


def _dump_json(obj, path=None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2)
    if path is None:
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


# ----------------------------------------------------------------------
# subcommands


def _cmd_gen_data(args) -> int:
    config = load_config(args.config, args.set or ())
    corpus = data.generate_synthetic(synthetic_data_config(config))
    out = args.out_dir.rstrip("/")
    os.makedirs(out, exist_ok=True)
    data.save_embeddings(f"{out}/embeddings.mlze", corpus.embeddings)
    data.save_features(f"{out}/train.mlzf", corpus.train_seen)
    data.save_features(f"{out}/test_seen.mlzf", corpus.test_seen)
    data.save_features(f"{out}/test_unseen.mlzf", corpus.test_unseen)
    print(
        f"wrote {len(corpus.train_seen)} train, {len(corpus.test_seen)} seen-test, "
        f"{len(corpus.test_unseen)} unseen-test instances to {out}/"
    )
    return 0


def _cmd_train(args) -> int:
    config = load_config(args.config, args.set or ())
    results, artifacts = run_pipeline(config)
    out = args.out_dir.rstrip("/")
    os.makedirs(out, exist_ok=True)
    save_checkpoint(f"{out}/checkpoint.mlzc", model_tensors(artifacts["models"]), config_digest(config))
    gan.write_trace_csv(f"{out}/trace.csv", artifacts["trace"])
    _dump_json(results, f"{out}/results.json")
    zsl = results.get("zsl", {}).get("mAP")
    gzsl = results.get("gzsl", {}).get("mAP")
    print(f"done: zsl mAP={zsl} gzsl mAP={gzsl} ({out}/results.json)")
    return 0


def _cmd_synth(args) -> int:
    config = load_config(args.config, args.set or ())
    digest, tensors = load_checkpoint(args.checkpoint)
    if digest != config_digest(config):
        print("note: checkpoint was trained under a different config", file=sys.stderr)
    models = models_from_tensors(config, tensors, path=args.checkpoint)
    with _stage("data"):
        corpus = obtain_corpus(config)
    synth = synthesize_for_classifiers(config, models, corpus.class_space, corpus.embeddings)
    data.save_features(args.out, synth)
    print(f"wrote {len(synth)} synthesized instances to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    rows = data.load_features(args.scores)
    if not rows:
        raise ValueError(f"{args.scores}: no scored rows with truth labels")
    scores = np.stack([f for f, _ in rows])
    truths = [labels for _, labels in rows]
    table = metrics.EvalTable(scores, truths)
    ks = [int(k) for k in str(args.top_k).split(",") if k]
    out = {"mAP": float(metrics.mean_ap(table)), "per_k": {}}
    for k in ks:
        p, r, f1 = metrics.topk_prf(table, k)
        out["per_k"][str(k)] = {"precision": float(p), "recall": float(r), "f1": float(f1)}
    _dump_json(out, args.out)
    return 0


def _cmd_ablate(args) -> int:
    config = load_config(args.config, args.set or ())
    cells = []
    for objective in OBJECTIVES:
        for mode in MODES:
            cell_cfg = dataclasses.replace(config, mode=mode, objective=objective)
            results, _ = run_pipeline(cell_cfg)
            cells.append(results)
            zsl = results.get("zsl", {}).get("mAP")
            print(f"{objective}/{mode}: zsl mAP={zsl}")
    _dump_json({"cells": cells}, args.out)
    return 0


def _cmd_inspect(args) -> int:
    digest, tensors = load_checkpoint(args.checkpoint)
    summary = {
        "version": CHECKPOINT_VERSION,
        "config_digest": digest.hex(),
        "tensors": [
            {"name": name, "shape": list(tensors[name].shape)} for name in sorted(tensors)
        ],
    }
    _dump_json(summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlzgen",
        description="Multi-label zero-shot feature synthesis experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="flat JSON experiment config")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override one config key (JSON-parsed value); repeatable",
        )

    p = sub.add_parser("gen-data", help="write a synthetic corpus to disk")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="run the full pipeline and save artifacts")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("synth", help="synthesize unseen-class features from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output feature file (.mlzf or .csv)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("eval", help="score a CSV of per-image label scores")
    p.add_argument("--scores", required=True, help="CSV rows: truth labels, then one score per class")
    p.add_argument("--top-k", default="1,3")
    p.add_argument("--out", default=None, help="metrics JSON path (stdout when omitted)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run all fusion modes under both objectives")
    common(p)
    p.add_argument("--out", required=True, help="combined results JSON path")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("inspect-checkpoint", help="summarize a checkpoint's tensors")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, DataFormatError, gan.TrainingDivergedError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
