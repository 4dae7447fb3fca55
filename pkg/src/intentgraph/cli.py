"""Command line interface.

Subcommands: generate, train, eval, cv, compare, analyze, gradcheck. Options
can come from a flat key=value config file (--config); explicit flags win.
Relative paths resolve under $INTENTGRAPH_DATA_DIR when it is set.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import corpus, graph as graphmod, harness, report
from .graph import graph_stats, parse_graph_file

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "INTENTGRAPH_DATA_DIR"


def _resolve(path: str | None) -> str | None:
    if path is None:
        return None
    base = os.environ.get(DATA_DIR_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _load_graph(path: str) -> graphmod.ConceptGraph:
    with open(_resolve(path), encoding="utf-8") as fh:
        return parse_graph_file(fh.read())


def _coerce(value: str):
    for phrase, result in (("true", True), ("false", False)):
        if value.lower() == phrase:
            return result
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            pass
    return value


def load_config_file(path: str) -> dict:
    """Flat key=value options; '#' comments and blank lines ignored."""
    options = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            options[key.strip().replace("-", "_")] = _coerce(value.strip())
    return options


def _add_train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", required=True, help="graph definition file")
    p.add_argument("--dataset", required=True, help="JSONL dataset")
    p.add_argument("--variant", default="coCTI_MTL",
                   choices=["CI", "CTI", "coCTI", "coCTI_MTL"])
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--energy-weight", type=float, default=1.0)
    p.add_argument("--no-concept-ce", action="store_true",
                   help="drop the concept cross-entropy term from coCTI_MTL")
    p.add_argument("--temperature", type=float, default=10.0)
    p.add_argument("--d-word", type=int, default=100)
    p.add_argument("--d-pos", type=int, default=20)
    p.add_argument("--d-hidden", type=int, default=100)
    p.add_argument("--output-activation", default="softmax", choices=["softmax", "identity"])
    p.add_argument("--deterministic", action="store_true", default=True,
                   help="single-worker execution for bit-reproducible runs (default)")
    p.add_argument("--report-dir", default="reports")


def _train_config(args) -> harness.TrainConfig:
    return harness.TrainConfig(
        variant=args.variant, epochs=args.epochs, batch_size=args.batch_size,
        lr=args.lr, seed=args.seed, patience=args.patience, clip_norm=args.clip_norm,
        min_count=args.min_count, energy_weight=args.energy_weight,
        include_concept_ce=not args.no_concept_ce, temperature=args.temperature,
        d_word=args.d_word, d_pos=args.d_pos, d_hidden=args.d_hidden,
        output_activation=args.output_activation, deterministic=args.deterministic,
        graph_path=_resolve(args.graph), dataset_path=_resolve(args.dataset),
        checkpoint_path=_resolve(getattr(args, "checkpoint_out", None)),
        report_dir=_resolve(args.report_dir),
    )


def cmd_generate(args) -> int:
    graph = _load_graph(args.graph)
    weights = tuple(float(w) for w in args.transition_weights.split(","))
    config = corpus.SyntheticConfig(
        n_queries=args.n_queries, vocab_size=args.vocab_size, seed=args.seed,
        templates_per_transition=args.templates_per_transition,
        noise_rate=args.noise_rate, transition_count_weights=weights,
        connected_sampling=not args.disconnected,
    )
    records, tallies = corpus.generate_synthetic(graph, config)
    out = _resolve(args.out)
    corpus.write_jsonl(out, records)
    tallies_out = _resolve(args.tallies_out) or out + ".tallies.csv"
    corpus.write_tallies_csv(tallies_out, tallies)
    print(f"wrote {len(records)} queries to {out}")
    print(f"wrote ground-truth tallies to {tallies_out}")
    return 0


def cmd_train(args) -> int:
    graph = _load_graph(args.graph)
    records = corpus.read_jsonl(_resolve(args.dataset))
    result = harness.train(records, graph, _train_config(args))
    checkpoint = _resolve(args.checkpoint_out)
    harness.save_train_result(checkpoint, result)
    report_dir = _resolve(args.report_dir)
    roc = {args.variant: result.report.transition_roc} if result.report.transition_roc else None
    report.render_run_report(report_dir, result.report, roc=roc)
    m = result.report.test_metrics
    print(f"checkpoint: {checkpoint}")
    print(f"reports:    {report_dir}")
    print(f"test transition micro-AUC {m['transition_micro_auc']:.4f}, "
          f"macro-AUC {m['transition_macro_auc']:.4f}, "
          f"coverage {m['transition_coverage_error']:.3f}, "
          f"LRAP {m['transition_lrap']:.4f}")
    return 0


def cmd_eval(args) -> int:
    graph = _load_graph(args.graph)
    records = corpus.read_jsonl(_resolve(args.dataset))
    run_report, predictions = harness.evaluate(
        _resolve(args.checkpoint), records, graph, split=args.split)
    report_dir = _resolve(args.report_dir)
    roc = {run_report.variant: run_report.transition_roc} if run_report.transition_roc else None
    report.render_run_report(report_dir, run_report, roc=roc)
    report.write_predictions_jsonl(os.path.join(report_dir, "predictions.jsonl"), predictions)
    m = run_report.test_metrics
    print(f"{args.split} split ({run_report.n_test} queries): "
          f"transition micro-AUC {m['transition_micro_auc']:.4f}, "
          f"coverage {m['transition_coverage_error']:.3f}, LRAP {m['transition_lrap']:.4f}")
    return 0


def cmd_cv(args) -> int:
    graph = _load_graph(args.graph)
    records = corpus.read_jsonl(_resolve(args.dataset))
    cv = harness.cross_validate(records, graph, _train_config(args), folds=args.folds)
    report_dir = _resolve(args.report_dir)
    os.makedirs(report_dir, exist_ok=True)
    report.write_cv_json(os.path.join(report_dir, "cv_report.json"), cv)
    pooled = harness.RunReport(
        variant=args.variant, seed=args.seed, epoch_stats=[],
        test_metrics=cv.pooled_metrics, per_label_auc=cv.per_label_auc,
        n_train=0, n_validation=0, n_test=len(records), split_sha="pooled",
        best_epoch=0)
    report.write_summary_csv(os.path.join(report_dir, "cv_pooled_summary.csv"), [pooled])
    report.write_per_label_auc_csv(os.path.join(report_dir, "cv_per_transition_auc.csv"), [pooled])
    print(f"pooled micro-AUC over {args.folds} folds: "
          f"{cv.pooled_metrics['transition_micro_auc']:.4f}")
    return 0


def cmd_compare(args) -> int:
    graph = _load_graph(args.graph)
    records = corpus.read_jsonl(_resolve(args.dataset))
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    reports = harness.compare_variants(records, graph, _train_config(args), variants)
    report_dir = _resolve(args.report_dir)
    os.makedirs(report_dir, exist_ok=True)
    report.write_summary_csv(os.path.join(report_dir, "comparison_summary.csv"), reports)
    report.write_per_label_auc_csv(os.path.join(report_dir, "comparison_per_transition_auc.csv"),
                                   reports)
    report.plot_variant_comparison(reports, os.path.join(report_dir, "variant_comparison.png"))
    curves = {r.variant: r.transition_roc for r in reports if r.transition_roc}
    if curves:
        for label, (curve, _) in curves.items():
            report.write_roc_points_csv(os.path.join(report_dir, f"roc_{label}.csv"), curve)
        report.plot_roc_curves(curves, os.path.join(report_dir, "roc_curves.png"))
    for r in reports:
        print(f"{r.variant}: transition micro-AUC "
              f"{r.test_metrics['transition_micro_auc']:.4f}")
    return 0


def cmd_analyze(args) -> int:
    graph = _load_graph(args.graph)
    records = corpus.read_jsonl(_resolve(args.dataset))
    vocab = corpus.build_vocabulary(records)
    encoded = [corpus.encode(r, vocab, graph) for r in records]
    stats = graph_stats(encoded, graph, top_k=args.top_k)
    report_dir = _resolve(args.report_dir)
    os.makedirs(report_dir, exist_ok=True)
    report.write_stats_csv(os.path.join(report_dir, "graph_stats.csv"), stats)
    report.plot_graph_stats(stats, os.path.join(report_dir, "graph_stats.png"))
    frac = stats.n_connected / stats.n_queries if stats.n_queries else 1.0
    print(f"{stats.n_queries} queries; active graphs connected: "
          f"{stats.n_connected} ({frac:.1%})")
    print(f"stats written to {report_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    errors = harness.gradcheck_tiny(seed=args.seed, h=args.h, include_batched=args.batched)
    worst = max(errors.values())
    for name in sorted(errors):
        status = "ok" if errors[name] < args.tolerance else "FAIL"
        print(f"{name:28s} max relative error {errors[name]:.3e}  {status}")
    print(f"worst: {worst:.3e} (tolerance {args.tolerance:.1e})")
    return 0 if worst < args.tolerance else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intentgraph",
        description="Joint concept and concept-transition inference on a domain graph.")
    parser.add_argument("--config", help="flat key=value option file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic labeled corpus")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-queries", type=int, default=2000)
    p.add_argument("--vocab-size", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-rate", type=float, default=0.3)
    p.add_argument("--templates-per-transition", type=int, default=2)
    p.add_argument("--transition-weights", default="0.25,0.5,0.25")
    p.add_argument("--disconnected", action="store_true",
                   help="sample edges independently instead of connected subgraphs")
    p.add_argument("--tallies-out", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one variant")
    _add_train_options(p)
    p.add_argument("--checkpoint-out", default="model.ckpt.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--split", default="test", choices=["train", "validation", "test", "all"])
    p.add_argument("--report-dir", default="reports")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="k-fold cross-validation with pooled test metrics")
    _add_train_options(p)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("compare", help="train several variants on identical splits")
    _add_train_options(p)
    p.add_argument("--variants", default="CTI,coCTI,coCTI_MTL,LR")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="dataset frequency and connectivity report")
    p.add_argument("--graph", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--report-dir", default="reports")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--batched", action="store_true",
                   help="also exercise the padded-batch forward path")
    p.set_defaults(func=cmd_gradcheck)

    parser.subcommand_parsers = dict(sub.choices)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        options = load_config_file(_resolve(args.config))
        # subcommands parse into a fresh namespace, so config-file defaults
        # must be installed on every subparser, not just the root
        parser.set_defaults(**options)
        for sub_parser in parser.subcommand_parsers.values():
            sub_parser.set_defaults(**options)
        args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
