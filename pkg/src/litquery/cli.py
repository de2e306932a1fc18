"""Command line interface.

    litquery train     --data DIR --out RUN
    litquery generate  --data DIR --out RUN --type 2p ai-lt 1ap --count 100
    litquery answer    --checkpoint RUN/checkpoint.bin --queries RUN/queries/2p.jsonl --out RUN
    litquery explain   --checkpoint RUN/checkpoint.bin --queries RUN/queries/ai.jsonl --index 0
    litquery evaluate  --queries RUN/queries/2p.jsonl --rankings RUN/rankings/2p.jsonl --out RUN
    litquery model info --checkpoint RUN/checkpoint.bin

Every flag may also be given as a key in a TOML file passed with
``--config``; flags win over file keys.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .beam import AnswerOptions, rank_entities
from .benchmark import (
    GENERATABLE,
    BenchmarkQuery,
    MetricsReport,
    evaluate_entity,
    evaluate_literal,
    format_table,
    generate,
)
from .fuzzy import TNormKind
from .kg import denormalize_value
from .model import predict_attribute, read_header, save_checkpoint
from .query import AttrTargetAtom, FilterAtom, QueryError, RelAtom, read_queries, write_jsonl
from .runs import answer_record, load_model, prepare, train_model
from .trainer import TrainConfig, write_log

logger = logging.getLogger("litquery")

TRAIN_KEYS = {
    "rank": int, "epochs": int, "batch_size": int, "learning_rate": float, "n3_weight": float,
    "attr_weight": float, "patience": int, "eval_every": int, "init_std": float,
}


@dataclass
class RunConfig:
    command: str
    paths: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    beam_k: int = 64
    tnorm: str = "prod"
    aggregator: str | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "paths": self.paths, "train": self.train, "beam_k": self.beam_k, "tnorm": self.tnorm,
            "aggregator": self.aggregator, "seed": self.seed, **self.extra,
        }

    def save(self, out_dir: Path, key: str | None = None) -> None:
        """Merge this command's settings into ``out_dir/config.json``.

        Commands run once per input file (``answer``) are stored per ``key``.
        """
        path = out_dir / "config.json"
        data = json.loads(path.read_text()) if path.exists() else {}
        if key is None:
            data[self.command] = self.to_json()
        else:
            data.setdefault(self.command, {})[key] = self.to_json()
        path.write_text(json.dumps(data, indent=2, sort_keys=True))


def _resolve(args, name, default=None):
    value = getattr(args, name, None)
    if value is None:
        value = args.file_config.get(name, default)
    return value


def _path(args, name, required=True):
    value = _resolve(args, name)
    if value is None and required:
        raise SystemExit(f"error: --{name.replace('_', '-')} is required")
    return Path(value) if value is not None else None


def _answer_options(args) -> AnswerOptions:
    return AnswerOptions(
        beam_k=int(_resolve(args, "beam_k", 64)),
        tnorm=TNormKind(_resolve(args, "tnorm", "prod")),
        use_exists=not _resolve(args, "no_exists", False),
        use_filter=not _resolve(args, "no_filter", False),
        global_sigma=bool(_resolve(args, "global_sigma", False)),
    )


def cmd_train(args) -> int:
    data = _path(args, "data")
    out = _path(args, "out")
    train = {k: cast(_resolve(args, k)) for k, cast in TRAIN_KEYS.items() if _resolve(args, k) is not None}
    train["seed"] = int(_resolve(args, "seed", 0))
    config = TrainConfig.from_dict(train)
    prep = prepare(data)
    logger.info("graph: %s", prep.kg.counts())
    out.mkdir(parents=True, exist_ok=True)
    params, log = train_model(prep, config)
    save_checkpoint(params, out / "checkpoint.bin")
    write_log(log, out / "log.csv")
    prep.raw_stats.dump(out / "stats.json", prep.kg.attributes)
    RunConfig("train", {"data": str(data), "out": str(out)}, config.to_dict(), seed=config.seed).save(out)
    if log and not args.no_figures:
        from .plotting import plot_training

        (out / "figures").mkdir(exist_ok=True)
        plot_training(log, out / "figures" / "training.png")
    last = log[-1] if log else {}
    print(f"trained {len(log)} epochs; checkpoint {out / 'checkpoint.bin'}; last {last}")
    return 0


def cmd_generate(args) -> int:
    data = _path(args, "data")
    out = _path(args, "out")
    types = _resolve(args, "type") or []
    if isinstance(types, str):
        types = [types]
    if "all" in types:
        types = list(GENERATABLE)
    for t in types:
        if t not in GENERATABLE:
            print(f"error: unknown query type {t!r}", file=sys.stderr)
            return 2
    count = int(_resolve(args, "count", 10))
    seed = int(_resolve(args, "seed", 0))
    split = _resolve(args, "split", "test")
    prep = prepare(data)
    qdir = out / "queries"
    qdir.mkdir(parents=True, exist_ok=True)
    for i, t in enumerate(types):
        queries = generate(prep.kg, prep.stats, t, count, seed=seed + i, split=split)
        write_jsonl([q.to_json() for q in queries], qdir / f"{t}.jsonl")
        print(f"{t}: {len(queries)} queries -> {qdir / f'{t}.jsonl'}")
    RunConfig("generate", {"data": str(data), "out": str(out)}, seed=seed,
              extra={"types": types, "count": count, "split": split}).save(out)
    return 0


def cmd_answer(args) -> int:
    ckpt = _path(args, "checkpoint")
    qpath = _path(args, "queries")
    out = _path(args, "out")
    options = _answer_options(args)
    aggregator = _resolve(args, "aggregator")
    baseline = _resolve(args, "baseline")
    model = load_model(ckpt)
    records = []
    for query, _ in read_queries(qpath):
        records.append(answer_record(model, query, options, aggregator, baseline))
    target = out / "rankings" / qpath.name if out.suffix != ".jsonl" else out
    target.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(records, target)
    run_dir = out if out.suffix != ".jsonl" else out.parent
    RunConfig(
        "answer", {"checkpoint": str(ckpt), "queries": str(qpath), "out": str(target)},
        beam_k=options.beam_k, tnorm=options.tnorm.value, aggregator=aggregator,
        extra={"use_exists": options.use_exists, "use_filter": options.use_filter,
               "global_sigma": options.global_sigma, "baseline": baseline},
    ).save(run_dir, key=target.name)
    print(f"answered {len(records)} queries -> {target}")
    return 0


def _atom_text(model, query, atom) -> str:
    def node(n):
        return f"{n}={model.entity_name(query.anchors[n])}" if query.is_anchor(n) else n

    if isinstance(atom, RelAtom):
        return f"{model.relation_name(atom.relation)}({node(atom.src)}, {atom.dst})"
    if isinstance(atom, FilterAtom):
        lo, hi = model.value_ranges.get(atom.attribute, (0.0, 1.0))
        raw = float(denormalize_value(atom.constant, lo, hi))
        return f"{model.attribute_name(atom.attribute)}({atom.node}) {atom.kind.value} {raw:.4g}"
    return f"{model.attribute_name(atom.attribute)}({node(atom.node)}, {atom.value})"


def cmd_explain(args) -> int:
    ckpt = _path(args, "checkpoint")
    qpath = _path(args, "queries")
    options = _answer_options(args)
    top = int(_resolve(args, "top", 10))
    model = load_model(ckpt)
    items = read_queries(qpath)
    indices = args.index if args.index else range(min(len(items), 5))
    for idx in indices:
        query, record = items[idx]
        model.check(query)
        print(f"# query {idx} [{query.qtype}]")
        for i, atom in enumerate(query.atoms):
            branch = "" if atom.branch is None else f" (disjunct {atom.branch})"
            print(f"  atom {i}: {_atom_text(model, query, atom)}{branch}")
        ranking = rank_entities(model.params, model.aug, model.stats, query, options)
        hard, easy = set(record.get("hard", [])), set(record.get("easy", []))
        filters = [a for a in query.atoms if isinstance(a, FilterAtom)]
        for rank, (e, score) in enumerate(ranking.top(top), start=1):
            tag = " [hard]" if e in hard else " [easy]" if e in easy else ""
            print(f"  {rank:>3}. {model.entity_name(e)}  score={score:.4f}{tag}")
            trace = ranking.trace(e)
            for b, bt in enumerate(trace.branches):
                binds = ", ".join(f"{k}={model.entity_name(v)}" for k, v in sorted(bt.bindings.items()))
                prefix = f"       disjunct {b}: " if len(trace.branches) > 1 else "       "
                print(f"{prefix}{binds}  (score {bt.score:.4f})")
                for i, s in bt.atoms:
                    print(f"         {_atom_text(model, query, query.atoms[i])}: {s:.4f}")
            for atom in filters:
                ent = trace.branches[0].bindings.get(atom.node, e)
                pred = float(predict_attribute(model.params, ent, atom.attribute))
                lo, hi = model.value_ranges.get(atom.attribute, (0.0, 1.0))
                raw = float(denormalize_value(pred, lo, hi))
                print(f"         predicted {model.attribute_name(atom.attribute)}({model.entity_name(ent)}) = {raw:.6g}")
        if isinstance(query.value_atom, AttrTargetAtom):
            rec = answer_record(model, query, options, _resolve(args, "aggregator"))
            raw = "" if rec["value_raw"] is None else f", {rec['value_raw']:.6g} (raw)"
            print(f"  value = {rec['value']:.6g} (normalized){raw}")
    return 0


def cmd_evaluate(args) -> int:
    qpaths = [Path(p) for p in (_resolve(args, "queries") or [])]
    rpaths = [Path(p) for p in (_resolve(args, "rankings") or [])]
    if not qpaths or len(qpaths) != len(rpaths):
        print("error: give one --rankings file per --queries file", file=sys.stderr)
        return 2
    method = _resolve(args, "method", "model")
    report = MetricsReport()
    for qp, rp in zip(qpaths, rpaths):
        bqs = [BenchmarkQuery.from_json(rec) for _, rec in read_queries(qp)]
        outs = [json.loads(line) for line in rp.read_text().splitlines() if line.strip()]
        if len(outs) != len(bqs):
            raise ValueError(f"{rp}: {len(outs)} answers for {len(bqs)} queries")
        ent = [(o, q) for o, q in zip(outs, bqs) if not q.query.is_literal]
        lit = [(o, q) for o, q in zip(outs, bqs) if q.query.is_literal]
        if ent:
            n = max(len(o["ranking"]) for o, _ in ent)
            report = report.merge(evaluate_entity([o["ranking"] for o, _ in ent], [q for _, q in ent], n))
        if lit:
            report = report.merge(evaluate_literal([o["value"] for o, _ in lit], [q for _, q in lit]))
    table = format_table({method: report})
    print(table)
    out = _path(args, "out", required=False)
    if out is not None:
        target = out if out.suffix == ".json" else out / "metrics.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps({method: report.to_json()}, indent=2, sort_keys=True))
        target.with_suffix(".txt").write_text(table + "\n")
        if not args.no_figures:
            from .plotting import plot_metrics

            for fig in plot_metrics({method: report}, target.parent / "figures"):
                print(f"figure -> {fig}")
    return 0


def cmd_model_info(args) -> int:
    ckpt = _path(args, "checkpoint")
    header = read_header(ckpt)
    meta = header.get("meta", {})
    print(f"checkpoint: {ckpt}")
    print(f"rank: {header['rank']}")
    for t in header["tensors"]:
        print(f"  {t['name']:<8} {'x'.join(map(str, t['shape']))}")
    if meta:
        print(f"entities: {len(meta['entities'])}  relations: {meta['n_base_relations']}  "
              f"attributes: {len(meta['attributes'])}")
        print("train config: " + json.dumps(meta.get("train_config", {}), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="litquery", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML file with default values for any flag")
        p.add_argument("--seed", type=int)
        return p

    def answering(p):
        p.add_argument("--beam-k", dest="beam_k", type=int)
        p.add_argument("--tnorm", choices=[k.value for k in TNormKind])
        p.add_argument("--aggregator", choices=["mean", "min"])
        p.add_argument("--no-exists", dest="no_exists", action="store_true", default=None,
                       help="replace the existence score by 1")
        p.add_argument("--no-filter", dest="no_filter", action="store_true", default=None,
                       help="replace the filter score by 1")
        p.add_argument("--global-sigma", dest="global_sigma", action="store_true", default=None)

    p = common(sub.add_parser("train", help="train a model on a dataset directory"))
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    for key, cast in TRAIN_KEYS.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=cast)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("generate", help="generate benchmark queries"))
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--type", nargs="+", choices=list(GENERATABLE) + ["all"])
    p.add_argument("--count", type=int)
    p.add_argument("--split", choices=["valid", "test"])
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("answer", help="answer queries with a trained model"))
    p.add_argument("--checkpoint")
    p.add_argument("--queries")
    p.add_argument("--out")
    p.add_argument("--baseline", choices=["mean"], help="mean predictor for literal queries")
    answering(p)
    p.set_defaults(func=cmd_answer)

    p = common(sub.add_parser("explain", help="print answers with their variable assignments"))
    p.add_argument("--checkpoint")
    p.add_argument("--queries")
    p.add_argument("--index", type=int, nargs="*")
    p.add_argument("--top", type=int)
    answering(p)
    p.set_defaults(func=cmd_explain)

    p = common(sub.add_parser("evaluate", help="compute metrics for answered queries"))
    p.add_argument("--queries", nargs="+")
    p.add_argument("--rankings", nargs="+")
    p.add_argument("--out")
    p.add_argument("--method")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("model", help="inspect checkpoints")
    msub = p.add_subparsers(dest="model_command", required=True)
    p = common(msub.add_parser("info", help="print shapes and hyperparameters"))
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_model_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.file_config = {}
    if getattr(args, "config", None):
        with open(args.config, "rb") as fh:
            args.file_config = tomllib.load(fh)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
