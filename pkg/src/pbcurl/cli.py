"""Command line entry point.

Subcommands cover the full pipeline: gen-data builds dataset artifacts,
train runs the hyperparameter grid under the selection criteria, bound
certifies a checkpoint on a dataset, eval scores representations with mean
classifiers, select re-ranks recorded runs, and verify runs the oracle
suite. Exit codes: 0 success, 2 validation error, 3 numeric abort.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import data, evaluation, network, oracle, training

_SEED_ENV = "PBCURL_SEED"


class ConfigError(ValueError):
    """Bad configuration or arguments; maps to exit code 2."""


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, default=_json_default)
        fh.write("\n")


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _require(doc, key, where):
    if key not in doc:
        raise ConfigError(f"{where}.{key} is required")
    return doc[key]


def _resolve_seed(explicit, fallback):
    """Precedence: --seed flag, then PBCURL_SEED, then the fallback."""
    if explicit is not None:
        return int(explicit)
    env = os.environ.get(_SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{_SEED_ENV} must be an integer, got {env!r}") from None
    return int(fallback)


def _spawn_rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# dataset construction shared by gen-data and train


def _normalize_contrastive(ds, stats):
    ds.features = stats.apply(ds.features)
    return ds


def _build_synthetic_iid(spec, seed):
    n_classes = int(_require(spec, "n_classes", "dataset"))
    dim = int(_require(spec, "dim", "dataset"))
    m_train = int(_require(spec, "m_train", "dataset"))
    k = int(_require(spec, "k", "dataset"))
    block = int(spec.get("block_size", 1))
    m_valid = int(spec.get("m_valid", 0))
    m_test = int(spec.get("m_test", 0))
    n_lab_train = int(spec.get("n_labeled_train", 0))
    n_lab_test = int(spec.get("n_labeled_test", 0))
    sep = float(spec.get("separation", 1.0))
    std = float(spec.get("std", 1.0))

    r_model, r_train, r_valid, r_test, r_ltr, r_lte = _spawn_rngs(seed, 6)
    model = data.random_gaussian_model(n_classes, dim, sep, std, r_model)

    train = data.sample_contrastive_iid(model, m_train, k, block, r_train)
    stats = data.NormStats.from_data(train.features)
    _normalize_contrastive(train, stats)
    out = {"train": train, "stats": stats, "model": model}
    if m_valid:
        out["valid"] = _normalize_contrastive(
            data.sample_contrastive_iid(model, m_valid, k, block, r_valid), stats
        )
    if m_test:
        out["test"] = _normalize_contrastive(
            data.sample_contrastive_iid(model, m_test, k, block, r_test), stats
        )
    if n_lab_train:
        out["labeled_train"] = data.sample_labeled(model, n_lab_train, r_ltr)
    if n_lab_test:
        out["labeled_test"] = data.sample_labeled(model, n_lab_test, r_lte)
    return out


def _build_synthetic_sequences(spec, seed):
    n_classes = int(_require(spec, "n_classes", "dataset"))
    dim = int(_require(spec, "dim", "dataset"))
    length = int(_require(spec, "length", "dataset"))
    n_train = int(_require(spec, "n_train_seq_per_class", "dataset"))
    k = int(_require(spec, "k", "dataset"))
    block = int(spec.get("block_size", 1))
    n_valid = int(spec.get("n_valid_seq_per_class", 0))
    n_test = int(spec.get("n_test_seq_per_class", 0))
    sep = float(spec.get("separation", 1.0))
    std = float(spec.get("std", 1.0))
    phi = float(spec.get("ar_coeff", 0.7))
    allow_same = bool(spec.get("allow_same_class_negatives", True))

    r_model, r_tr, r_va, r_te, r_btr, r_bva, r_bte = _spawn_rngs(seed, 7)
    model = data.random_gaussian_model(n_classes, dim, sep, std, r_model)

    tr_seqs, tr_labels = data.gen_sequences(model, n_train, length, phi, r_tr)
    stats = data.NormStats.from_data(np.vstack(tr_seqs))
    out = {"stats": stats, "model": model}
    out["train"] = data.build_noniid_from_sequences(
        tr_seqs, tr_labels, k, block, r_btr,
        allow_same_class_negatives=allow_same, transform=stats.apply,
    )
    out["labeled_train"] = data.frames_as_labeled(tr_seqs, tr_labels)
    if n_valid:
        va_seqs, va_labels = data.gen_sequences(model, n_valid, length, phi, r_va)
        out["valid"] = data.build_noniid_from_sequences(
            va_seqs, va_labels, k, block, r_bva,
            allow_same_class_negatives=allow_same, transform=stats.apply,
        )
    if n_test:
        te_seqs, te_labels = data.gen_sequences(model, n_test, length, phi, r_te)
        out["test"] = data.build_noniid_from_sequences(
            te_seqs, te_labels, k, block, r_bte,
            allow_same_class_negatives=allow_same, transform=stats.apply,
        )
        out["labeled_test"] = data.frames_as_labeled(te_seqs, te_labels)
    return out


def _build_from_files(spec, seed):
    train_csv = _require(spec, "train_csv", "dataset")
    m_train = int(_require(spec, "m_train", "dataset"))
    k = int(_require(spec, "k", "dataset"))
    block = int(spec.get("block_size", 1))
    m_valid = int(spec.get("m_valid", 0))

    r_train, r_valid = _spawn_rngs(seed, 2)
    labeled, stats = data.load_feature_csv(train_csv)
    out = {"stats": stats, "labeled_train": labeled}
    out["train"] = data.build_iid_from_labeled(labeled, m_train, k, block, r_train)
    if m_valid:
        out["valid"] = data.build_iid_from_labeled(labeled, m_valid, k, block, r_valid)
    if "test_csv" in spec:
        out["labeled_test"], _ = data.load_feature_csv(spec["test_csv"], stats=stats)
    return out


def _build_from_sequence_manifest(spec, seed):
    manifest = _require(spec, "manifest", "dataset")
    first_steps = int(_require(spec, "first_steps", "dataset"))
    train_per_class = int(_require(spec, "train_per_class", "dataset"))
    k = int(_require(spec, "k", "dataset"))
    block = int(spec.get("block_size", 1))
    tuples = spec.get("tuples", "windowed")
    valid_per_class = int(spec.get("valid_per_class", 0))
    allow_same = bool(spec.get("allow_same_class_negatives", True))
    if tuples not in ("windowed", "iid"):
        raise ConfigError("dataset.tuples must be 'windowed' or 'iid'")
    if isinstance(manifest, str):
        manifest = _load_json(manifest, "sequence manifest")
    if valid_per_class >= train_per_class:
        raise ConfigError("dataset.valid_per_class must be smaller than train_per_class")

    tr_seqs, tr_labels, te_seqs, te_labels = data.prep_sequence_corpus(
        manifest, first_steps, train_per_class
    )
    # the last valid_per_class training sequences of each class become the
    # validation split
    va_seqs, va_labels = [], []
    if valid_per_class:
        keep_seqs, keep_labels = [], []
        seen = {}
        for seq, lab in zip(tr_seqs, tr_labels):
            seen[lab] = seen.get(lab, 0) + 1
            if seen[lab] > train_per_class - valid_per_class:
                va_seqs.append(seq)
                va_labels.append(lab)
            else:
                keep_seqs.append(seq)
                keep_labels.append(lab)
        tr_seqs, tr_labels = keep_seqs, keep_labels

    stats = data.NormStats.from_data(np.vstack(tr_seqs))
    out = {"stats": stats}
    out["labeled_train"] = data.frames_as_labeled(tr_seqs, tr_labels)
    if te_seqs:
        out["labeled_test"] = data.frames_as_labeled(te_seqs, te_labels)

    r_tr, r_va = _spawn_rngs(seed, 2)
    if tuples == "windowed":
        out["train"] = data.build_noniid_from_sequences(
            tr_seqs, tr_labels, k, block, r_tr,
            allow_same_class_negatives=allow_same, transform=stats.apply,
        )
        if va_seqs:
            out["valid"] = data.build_noniid_from_sequences(
                va_seqs, va_labels, k, block, r_va,
                allow_same_class_negatives=allow_same, transform=stats.apply,
            )
    else:
        m_train = int(_require(spec, "m_train", "dataset"))
        pool = data.LabeledDataset(
            x=stats.apply(out["labeled_train"].x), y=out["labeled_train"].y
        )
        out["train"] = data.build_iid_from_labeled(pool, m_train, k, block, r_tr)
        if va_seqs:
            m_valid = int(spec.get("m_valid", max(1, m_train // 10)))
            va_pool = data.frames_as_labeled(va_seqs, va_labels)
            va_pool = data.LabeledDataset(x=stats.apply(va_pool.x), y=va_pool.y)
            out["valid"] = data.build_iid_from_labeled(va_pool, m_valid, k, block, r_va)
    return out


_DATASET_BUILDERS = {
    "synthetic-iid": _build_synthetic_iid,
    "synthetic-sequences": _build_synthetic_sequences,
    "files": _build_from_files,
    "sequence-manifest": _build_from_sequence_manifest,
}


def _build_dataset(spec, seed):
    if not isinstance(spec, dict):
        raise ConfigError("dataset must be a JSON object")
    kind = _require(spec, "kind", "dataset")
    if kind == "manifests":
        out = {"train": data.load_contrastive(_require(spec, "train", "dataset"))}
        if "valid" in spec:
            out["valid"] = data.load_contrastive(spec["valid"])
        return out
    builder = _DATASET_BUILDERS.get(kind)
    if builder is None:
        known = sorted(_DATASET_BUILDERS) + ["manifests"]
        raise ConfigError(f"dataset.kind must be one of {known}, got {kind!r}")
    return builder(spec, seed)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_data(args):
    cfg = _load_json(args.config, "config")
    spec = _require(cfg, "dataset", "config")
    seed = _resolve_seed(args.seed, cfg.get("seed", 0))
    out_dir = args.out or cfg.get("out_dir")
    if not out_dir:
        raise ConfigError("--out (or config out_dir) is required")
    kind = _require(spec, "kind", "dataset")
    if kind == "manifests":
        raise ConfigError("gen-data needs a generative dataset.kind, not 'manifests'")

    built = _build_dataset(spec, seed)
    os.makedirs(out_dir, exist_ok=True)

    artifacts, hashes = {}, {}
    for name in ("train", "valid", "test"):
        if name in built:
            path = os.path.join(out_dir, f"{name}.json")
            data.save_contrastive(built[name], path)
            artifacts[name] = path
            hashes[name] = data.dataset_hash(built[name])
    for name in ("labeled_train", "labeled_test"):
        if name in built:
            path = os.path.join(out_dir, f"{name}.csv")
            data.save_labeled_csv(built[name], path)
            artifacts[name] = path
    if "stats" in built:
        path = os.path.join(out_dir, "norm_stats.json")
        _write_json(path, built["stats"].to_dict())
        artifacts["norm_stats"] = path

    summary = {
        "format": "pbcurl-dataset-v1",
        "kind": kind,
        "seed": seed,
        "artifacts": artifacts,
        "hashes": hashes,
        "spec": spec,
    }
    _write_json(os.path.join(out_dir, "dataset.json"), summary)
    print(json.dumps(summary, sort_keys=True, default=_json_default))
    return 0


def _check_grid_against_data(cfg, ds):
    if cfg.layer_sizes[0] != ds.dim:
        raise ConfigError(
            f"layer_sizes[0] = {cfg.layer_sizes[0]} does not match dataset dim {ds.dim}"
        )
    if cfg.objective in ("iid", "noniid", "erm"):
        if cfg.k != ds.k:
            raise ConfigError(f"config k = {cfg.k} does not match dataset k = {ds.k}")
        if cfg.block_size != ds.block_size:
            raise ConfigError(
                f"config block_size = {cfg.block_size} does not match "
                f"dataset block_size = {ds.block_size}"
            )


def _cmd_train(args):
    cfg = _load_json(args.config, "config")
    seed = _resolve_seed(args.seed, cfg.get("seed", 0))
    out_dir = args.out or cfg.get("out_dir")
    if not out_dir:
        raise ConfigError("--out (or config out_dir) is required")

    built = _build_dataset(_require(cfg, "dataset", "config"), seed)
    train_ds = built["train"]
    valid_ds = built.get("valid")

    grid_doc = _require(cfg, "grid", "config")
    if not isinstance(grid_doc, list) or not grid_doc:
        raise ConfigError("config.grid must be a non-empty list of training configs")
    configs = []
    for i, entry in enumerate(grid_doc):
        entry = dict(entry)
        entry.setdefault("seed", seed)
        try:
            tc = training.TrainConfig.from_dict(entry)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config.grid[{i}]: {exc}") from None
        _check_grid_against_data(tc, train_ds)
        configs.append(tc)

    criteria = cfg.get("criteria")
    if criteria is None:
        criteria = list(training.CRITERIA) if valid_ds is not None else ["pb"]
    for c in criteria:
        if c not in training.CRITERIA:
            raise ConfigError(
                f"config.criteria entry {c!r} must be one of {list(training.CRITERIA)}"
            )
        if c != "pb" and valid_ds is None:
            raise ConfigError(f"criterion {c!r} needs a validation split in the dataset")

    best = training.grid_search(
        configs, criteria, train_ds, valid_ds, out_dir,
        cert_samples=int(cfg.get("cert_samples", 10)),
    )
    if not best:
        raise training.NumericAbort("every grid run aborted")

    doc = {
        criterion: {
            "run_id": rec.run_id,
            "metric": rec.metric,
            "checkpoint": rec.checkpoint_path,
        }
        for criterion, rec in best.items()
    }
    _write_json(os.path.join(out_dir, "best.json"), doc)
    print(json.dumps(doc, sort_keys=True, default=_json_default))
    return 0


def _load_bound_inputs(args):
    ckpt = network.load_checkpoint(args.checkpoint)
    parts = [data.load_contrastive(p) for p in args.data]
    ds = parts[0]
    for part in parts[1:]:
        ds = data.concat_contrastive(ds, part)
    if args.T is not None:
        ds.dependency_t = int(args.T)
    return ckpt, ds


def _cmd_bound(args):
    ckpt, ds = _load_bound_inputs(args)
    objective = "noniid" if args.noniid else "iid"
    seed = _resolve_seed(args.seed, ckpt.seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0]).generate_state(1)[0])

    grid_b = float(args.grid_b if args.grid_b is not None else ckpt.config.get("grid_b", 100.0))
    grid_c = float(args.grid_c if args.grid_c is not None else ckpt.config.get("grid_c", 0.1))
    delta = float(args.delta if args.delta is not None else ckpt.config.get("delta", 0.05))
    loss_kind = ckpt.config.get("loss_kind", "logistic")
    layer_sizes = tuple(ckpt.layer_sizes)

    if args.risk == "zero-one":
        report = training.selection_certificate(
            layer_sizes, ckpt.posterior, ckpt.prior, ds,
            grid_b=grid_b, grid_c=grid_c, delta=delta, loss_kind=loss_kind,
            objective=objective, n_samples=args.samples, rng=rng,
        )
    else:
        if objective == "iid" and args.lam is None:
            raise ConfigError("--risk loss with --iid needs --lam")
        try:
            report = training.loss_certificate(
                layer_sizes, ckpt.posterior, ckpt.prior, ds,
                grid_b=grid_b, grid_c=grid_c, delta=delta, loss_kind=loss_kind,
                objective=objective, n_samples=args.samples, rng=rng,
                lam=args.lam, tau=args.tau,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    report.provenance = {
        "checkpoint": args.checkpoint,
        "dataset": list(args.data),
        "dataset_hash": data.dataset_hash(ds),
        "seed": seed,
    }
    if not args.deterministic:
        report.provenance["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")

    bound_id = args.id
    if bound_id is None:
        stem = os.path.basename(args.checkpoint)
        for suffix in (".ckpt.json", ".json"):
            if stem.endswith(suffix):
                stem = stem[: -len(suffix)]
                break
        bound_id = stem
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"bound_{bound_id}.json")
    _write_json(path, report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True, default=_json_default))
    return 0


def _cmd_eval(args):
    seed = _resolve_seed(args.seed, 0)
    stats = None
    if args.norm_stats:
        stats = data.NormStats.from_dict(_load_json(args.norm_stats, "norm stats"))
    labeled_train, stats = data.load_feature_csv(args.train_csv, stats=stats)
    labeled_test, _ = data.load_feature_csv(args.test_csv, stats=stats)

    results = {}
    for i, ckpt_path in enumerate(args.checkpoint):
        ckpt = network.load_checkpoint(ckpt_path)
        layer_sizes = tuple(ckpt.layer_sizes)
        if layer_sizes[0] != labeled_train.dim:
            raise ConfigError(
                f"{ckpt_path}: network input width {layer_sizes[0]} does not match "
                f"feature dim {labeled_train.dim}"
            )
        w = network.map_weights(ckpt.posterior)

        def feature_fn(x, w=w, ls=layer_sizes, nl=ckpt.feature_layers):
            return network.forward(ls, w, x, n_layers=nl)

        rng = np.random.default_rng(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        results[ckpt_path] = evaluation.evaluate_representation(
            feature_fn, labeled_train, labeled_test, rng,
            samples_per_class=args.samples_per_class, n_variants=args.variants,
        )

    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "metrics.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["checkpoint", "metric", "value"])
        for ckpt_path, metrics in results.items():
            for name in sorted(metrics):
                writer.writerow([ckpt_path, name, repr(float(metrics[name]))])
    _write_json(os.path.join(args.out, "metrics.json"), results)
    print(json.dumps(results, sort_keys=True, default=_json_default))
    return 0


_CRITERION_OF_MODE = {"valid-mc": "s-valid", "valid-map": "det-valid", "pb": "pb"}


def _cmd_select(args):
    criteria = [c.strip() for c in args.criteria.split(",") if c.strip()]
    for c in criteria:
        if c not in training.CRITERIA:
            raise ConfigError(f"--criteria entry {c!r} must be one of {list(training.CRITERIA)}")

    records = []
    try:
        with open(args.runs) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    raise ConfigError(f"{args.runs}:{lineno}: invalid JSON line") from None
    except FileNotFoundError:
        raise ConfigError(f"runs file not found: {args.runs}") from None

    ds = None
    if args.data:
        parts = [data.load_contrastive(p) for p in args.data]
        ds = parts[0]
        for part in parts[1:]:
            ds = data.concat_contrastive(ds, part)

    rows = []
    for pos, rec in enumerate(records):
        mode = rec.get("mode")
        criterion = _CRITERION_OF_MODE.get(mode)
        if criterion is None or criterion not in criteria:
            continue
        if rec.get("aborted"):
            continue
        metric = rec.get("metric")
        if criterion == "pb":
            selection = rec.get("selection")
            if selection is not None:
                metric = selection["bound_value"]
            else:
                # certificate missing from the record: recompute from the
                # checkpoint on the supplied dataset
                if ds is None:
                    raise ConfigError(
                        f"run {rec.get('run_id')!r} has no stored certificate; "
                        "pass --data to recompute"
                    )
                ckpt = network.load_checkpoint(rec["checkpoint_path"])
                cfg = rec["config"]
                seed = _resolve_seed(args.seed, cfg.get("seed", 0))
                rng = np.random.default_rng(
                    np.random.SeedSequence([seed, 0xCE27]).generate_state(1)[0]
                )
                report = training.selection_certificate(
                    tuple(ckpt.layer_sizes), ckpt.posterior, ckpt.prior, ds,
                    grid_b=cfg["grid_b"], grid_c=cfg["grid_c"], delta=cfg["delta"],
                    loss_kind=cfg["loss_kind"], objective=cfg["objective"],
                    n_samples=args.samples, rng=rng,
                )
                metric = report.bound_value
        if metric is None:
            continue
        rows.append((criterion, float(metric), pos, rec["run_id"], rec.get("checkpoint_path")))

    os.makedirs(args.out, exist_ok=True)
    best = {}
    lb_path = os.path.join(args.out, "leaderboard.csv")
    with open(lb_path, "w") as fh:
        fh.write("criterion,rank,run_id,metric,checkpoint\n")
        for criterion in criteria:
            ranked = sorted((r for r in rows if r[0] == criterion), key=lambda r: (r[1], r[2]))
            if ranked:
                best[criterion] = {
                    "run_id": ranked[0][3],
                    "metric": ranked[0][1],
                    "checkpoint": ranked[0][4],
                }
            for rank, (_, metric, _, run_id, ckpt) in enumerate(ranked, start=1):
                fh.write(f"{criterion},{rank},{run_id},{metric!r},{ckpt}\n")
    _write_json(os.path.join(args.out, "best.json"), best)
    print(json.dumps(best, sort_keys=True, default=_json_default))
    return 0


def _cmd_verify(args):
    kwargs = {}
    if args.seed is not None:
        kwargs["seed"] = int(args.seed)
    verdict = oracle.run_verify_suite(**kwargs)
    text = json.dumps(verdict, indent=2, sort_keys=True, default=_json_default)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "verify.json"), verdict)
    return 0 if verdict["all_passed"] else 1


# ---------------------------------------------------------------------------
# parser


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="pbcurl",
        description="PAC-Bayes bound training and certification for contrastive "
        "representation learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate dataset artifacts")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="run the config grid under selection criteria")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("bound", help="certify a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, nargs="+",
                   help="contrastive manifest(s); several are concatenated")
    p.add_argument("--out", required=True)
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--iid", action="store_true", help="KL-based certificates")
    kind.add_argument("--noniid", action="store_true", help="chi-square certificates")
    p.add_argument("--T", type=int, help="dependency range override (non-iid)")
    p.add_argument("--risk", choices=("zero-one", "loss"), default="zero-one")
    p.add_argument("--lam", type=float, help="lambda for the iid loss certificate")
    p.add_argument("--tau", type=float, help="class collision probability override")
    p.add_argument("--delta", type=float, help="confidence level override")
    p.add_argument("--grid-b", type=float, dest="grid_b")
    p.add_argument("--grid-c", type=float, dest="grid_c")
    p.add_argument("--samples", type=int, default=10, help="posterior draws for the risk")
    p.add_argument("--id", help="report id (bound_<id>.json); default: checkpoint stem")
    p.add_argument("--seed", type=int, help="override the risk-estimate seed")
    p.add_argument("--deterministic", action="store_true",
                   help="omit timestamps so identical runs are byte-identical")
    p.set_defaults(func=_cmd_bound)

    p = sub.add_parser("eval", help="mean-classifier metrics for checkpoints")
    p.add_argument("--checkpoint", required=True, nargs="+")
    p.add_argument("--train-csv", required=True, dest="train_csv")
    p.add_argument("--test-csv", required=True, dest="test_csv")
    p.add_argument("--norm-stats", dest="norm_stats",
                   help="stats JSON from gen-data; default: compute from train CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--samples-per-class", type=int, default=5, dest="samples_per_class")
    p.add_argument("--variants", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("select", help="re-rank recorded runs per criterion")
    p.add_argument("--runs", required=True, help="runs.jsonl from train")
    p.add_argument("--out", required=True)
    p.add_argument("--data", nargs="+",
                   help="contrastive manifest(s) for recomputing certificates")
    p.add_argument("--criteria", default="s-valid,det-valid,pb")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("verify", help="run the oracle check suite")
    p.add_argument("--out", help="directory for verify.json")
    p.add_argument("--seed", type=int, help="override the frozen suite seed")
    p.set_defaults(func=_cmd_verify)

    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (data.DataFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except training.NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
