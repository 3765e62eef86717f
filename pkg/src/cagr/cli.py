"""Command-line entry point tying the pipeline together.

Subcommands: gen-synth, centrality, train, evaluate, recommend,
grad-check. Every subcommand that produces files writes a manifest
(resolved configuration, seed, content hashes of its inputs) beside the
outputs so the run can be reproduced exactly.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure. The
environment variable CAGR_SEED overrides any configured seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import centrality as centrality_mod
from . import evaluation, gradcheck, params, synth, training
from .errors import DataError, NumericError
from .graphs import Dataset, load_dataset_dir

log = logging.getLogger("cagr")

CONFIG_ALIASES = {
    "m": "m_negatives",
    "n": "n_iterations",
    "lr": "lr0",
}
MODEL_FILE = "model.bin"
CONFIG_FILE = "config.resolved.cfg"
ID_MAP_FILE = "id_map.json"


def git_blob_sha1(path):
    with open(path, "rb") as fh:
        data = fh.read()
    header = f"blob {len(data)}\0".encode()
    return hashlib.sha1(header + data).hexdigest()


def write_manifest(out_dir, command, argv, config, seed, inputs, outputs):
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "inputs": {p: git_blob_sha1(p) for p in inputs if os.path.exists(p)},
        "outputs": sorted(outputs),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def parse_config_file(path):
    """Plain key = value lines; '#' starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _coerce(field_type, value):
    if field_type is bool:
        return value.lower() in ("1", "true", "yes", "on")
    if field_type is tuple:
        return tuple(v for v in (s.strip() for s in value.split(",")) if v)
    return field_type(value)


def resolve_training_config(file_values=None, overrides=None) -> training.TrainingConfig:
    """Defaults, then config-file values, then CLI flags; flags win."""
    fields = {f.name: f for f in dataclasses.fields(training.TrainingConfig)}
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            name = CONFIG_ALIASES.get(key, key)
            if name not in fields:
                raise DataError(f"unknown configuration key {key!r}")
            if value is None:
                continue
            if isinstance(value, str):
                ftype = fields[name].type
                base = {"int": int, "float": float, "str": str, "bool": bool,
                        "tuple": tuple, "int | None": int}.get(ftype, str)
                value = _coerce(base, value)
            merged[name] = value
    config = training.TrainingConfig(**merged)
    env_seed = os.environ.get("CAGR_SEED")
    if env_seed is not None:
        config.seed = int(env_seed)
    config.validate()
    return config


def config_to_dict(config: training.TrainingConfig):
    out = dataclasses.asdict(config)
    out["views"] = ",".join(config.views)
    return out


def write_resolved_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config_to_dict(config).items():
            if value is None:
                continue
            fh.write(f"{key} = {value}\n")


def _dataset_paths(data_dir):
    return [os.path.join(data_dir, name + ".tsv")
            for name in ("user_item", "group_item", "groups", "social")]


def _load_data(data_dir, id_map_path=None) -> Dataset:
    id_maps = Dataset.load_id_maps(id_map_path) if id_map_path else None
    return load_dataset_dir(data_dir, id_maps=id_maps)


def _env_seed(default):
    env = os.environ.get("CAGR_SEED")
    return int(env) if env is not None else default


def cmd_gen_synth(args, argv):
    spec_kwargs = {f.name: getattr(args, f.name) for f in dataclasses.fields(synth.SynthSpec)
                   if getattr(args, f.name, None) is not None}
    spec = synth.SynthSpec(**spec_kwargs)
    spec.seed = _env_seed(spec.seed)
    paths = synth.generate(spec, args.out)
    write_manifest(args.out, "gen-synth", argv, dataclasses.asdict(spec),
                   spec.seed, [], [os.path.basename(p) for p in paths.values()])
    print(f"wrote synthetic dataset to {args.out}")
    return 0


def cmd_centrality(args, argv):
    dataset = _load_data(args.data)
    measures = [m.strip() for m in args.measures.split(",") if m.strip()]
    scores = centrality_mod.compute_measures(dataset.uu, measures)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "centrality.tsv")
    originals = dataset.user_ids.originals()
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("# user\tmeasure\tscore\n")
        for cs in scores:
            for uid, score in enumerate(cs.scores):
                fh.write(f"{originals[uid]}\t{cs.measure}\t{score:.10g}\n")
    write_manifest(args.out, "centrality", argv, {"measures": measures},
                   None, _dataset_paths(args.data), ["centrality.tsv"])
    print(f"wrote {out_path}")
    return 0


def _training_overrides(args):
    names = [f.name for f in dataclasses.fields(training.TrainingConfig)]
    overrides = {}
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return overrides


def cmd_train(args, argv):
    file_values = parse_config_file(args.config) if args.config else {}
    config = resolve_training_config(file_values, _training_overrides(args))
    dataset = _load_data(args.data)
    split = evaluation.temporal_split(dataset.gv)
    gv_train = split.train_graph()
    result = training.train(dataset, config, gv=gv_train)

    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, MODEL_FILE)
    params.save(result.state, model_path)
    write_resolved_config(config, os.path.join(args.out, CONFIG_FILE))
    dataset.save_id_maps(os.path.join(args.out, ID_MAP_FILE))
    trace_path = os.path.join(args.out, "loss_trace.tsv")
    with open(trace_path, "w", encoding="utf-8") as fh:
        fh.write("# step\tgraph\tloss\n")
        names = ("gv", "uv")
        for step, graph, loss in zip(result.trace.steps, result.trace.graphs,
                                     result.trace.losses):
            fh.write(f"{step}\t{names[graph]}\t{loss:.6f}\n")
    write_manifest(args.out, "train", argv, config_to_dict(config), config.seed,
                   _dataset_paths(args.data) + ([args.config] if args.config else []),
                   [MODEL_FILE, CONFIG_FILE, ID_MAP_FILE, "loss_trace.tsv"])
    print(f"trained {config.mode} model: {result.gv_steps} group-item and "
          f"{result.uv_steps} user-item steps -> {model_path}")
    return 0


def _load_model_dir(model_arg):
    """Accept a model directory (with config and id map) or a bare file."""
    if os.path.isdir(model_arg):
        model_path = os.path.join(model_arg, MODEL_FILE)
        config_path = os.path.join(model_arg, CONFIG_FILE)
        id_map_path = os.path.join(model_arg, ID_MAP_FILE)
        config = resolve_training_config(parse_config_file(config_path), {}) \
            if os.path.exists(config_path) else training.TrainingConfig()
        if not os.path.exists(id_map_path):
            id_map_path = None
    else:
        model_path, config, id_map_path = model_arg, training.TrainingConfig(), None
    state = params.load(model_path)
    return state, config, id_map_path


def cmd_evaluate(args, argv):
    state, config, id_map_path = _load_model_dir(args.model)
    dataset = _load_data(args.data, id_map_path)
    if state.n_users != dataset.uv.left_count or state.n_items != dataset.uv.right_count:
        raise DataError(f"model was trained on {state.n_users} users / {state.n_items} "
                        f"items but the dataset has {dataset.uv.left_count} / "
                        f"{dataset.uv.right_count}")
    split = evaluation.temporal_split(dataset.gv)
    ctx = training.make_eval_context(dataset, config, state, gv=split.train_graph())
    cutoffs = tuple(int(c) for c in args.cutoffs.split(","))
    report = evaluation.evaluate(ctx, split, which=args.split, cutoffs=cutoffs,
                                 keep_ranks=args.ranks)
    os.makedirs(args.out, exist_ok=True)
    payload = {f"hits@{n}": report.hits[n] for n in sorted(report.hits)}
    payload["mrr"] = report.mrr
    payload["test_cases"] = report.test_case_count
    report_path = os.path.join(args.out, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    outputs = ["report.json"]
    if args.ranks:
        group_names = dataset.group_ids.originals()
        item_names = dataset.item_ids.originals()
        with open(os.path.join(args.out, "ranks.tsv"), "w", encoding="utf-8") as fh:
            fh.write("# group\titem\trank\n")
            for group, item, rank in report.ranks:
                fh.write(f"{group_names[group]}\t{item_names[item]}\t{rank}\n")
        outputs.append("ranks.tsv")
    write_manifest(args.out, "evaluate", argv,
                   {"split": args.split, "cutoffs": list(cutoffs)},
                   config.seed, _dataset_paths(args.data), outputs)
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_recommend(args, argv):
    state, config, id_map_path = _load_model_dir(args.model)
    dataset = _load_data(args.data, id_map_path)
    ctx = training.make_eval_context(dataset, config, state)
    members = [dataset.user_ids.lookup(tok.strip())
               for tok in args.members.split(",") if tok.strip()]
    if not members:
        raise DataError("no members given")
    exclusions = set()
    if args.exclude_seen:
        for uid in members:
            items, _ = dataset.uv.left_adjacency[uid]
            exclusions.update(int(i) for i in items)
    ranked = evaluation.rank_items(ctx, members, exclusions, topn=args.topn)
    item_names = dataset.item_ids.originals()
    for item, score in ranked:
        print(f"{item_names[item]}\t{score:.6f}")
    return 0


def cmd_grad_check(args, argv):
    seed = _env_seed(args.seed)
    overall, report = gradcheck.run_full_check(d=args.d, h=args.h,
                                               n_views=args.n_views,
                                               eps=args.eps, seed=seed)
    for kind in sorted(report):
        for name, err in sorted(report[kind].items()):
            print(f"{kind}\t{name}\t{err:.3e}")
    print(f"max relative error: {overall:.3e}")
    if overall >= args.threshold:
        raise NumericError(f"gradient check failed: {overall:.3e} >= {args.threshold}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cagr",
        description="Train and evaluate a group recommender over interaction graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic clustered dataset")
    p.add_argument("--out", required=True)
    for f in dataclasses.fields(synth.SynthSpec):
        flag = "--" + f.name.replace("_", "-")
        ftype = int if str(f.type).startswith("int") else float
        p.add_argument(flag, type=ftype, default=None)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("centrality", help="compute social-graph centrality scores")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--measures", default=",".join(centrality_mod.MEASURES))
    p.set_defaults(func=cmd_centrality)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="key = value configuration file")
    p.add_argument("--mode", choices=("st", "tst", "jt"), default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--h", type=int, default=None)
    p.add_argument("--m", dest="m_negatives", type=int, default=None)
    p.add_argument("--n", dest="n_iterations", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--lr0", type=float, default=None)
    p.add_argument("--n-neighbors", dest="n_neighbors", type=int, default=None)
    p.add_argument("--views", default=None,
                   help="comma-separated centrality views; empty string disables convolution")
    p.add_argument("--neg-sampler", dest="neg_sampler",
                   choices=("classic", "group_aware"), default=None)
    p.add_argument("--members", choices=("fused", "base"), default=None)
    p.add_argument("--pooling", choices=("mean", "sum"), default=None)
    p.add_argument("--scale", choices=("paper", "per_head"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--trace-every", dest="trace_every", type=int, default=None)
    p.add_argument("--debug", action="store_const", const=True, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained model on the temporal split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="model directory or model file")
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("test", "validation"), default="test")
    p.add_argument("--cutoffs", default="1,5,10,15,20")
    p.add_argument("--ranks", action="store_true", help="also write per-case ranks.tsv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-n items for an ad-hoc member list")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--members", required=True, help="comma-separated original user ids")
    p.add_argument("--topn", type=int, default=10)
    p.add_argument("--exclude-seen", action="store_true",
                   help="exclude items any member has interacted with")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--d", type=int, default=6)
    p.add_argument("--h", type=int, default=2)
    p.add_argument("--n-views", dest="n_views", type=int, default=1)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, argv)
    except DataError as exc:
        print(f"cagr: data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"cagr: numeric failure: {exc}", file=sys.stderr)
        return 4
    except (ValueError, OSError) as exc:
        print(f"cagr: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
