"""Command line interface.

Every subcommand reads its inputs from files or generates them from a seed,
and writes CSV/JSON outputs.  ``experiment`` takes a JSON config whose
fields mirror :class:`nntopo.pipeline.ExperimentConfig`; any flag given on
the command line overrides the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .datagen import (
    FAMILIES,
    KNOWN_MANIFOLDS,
    DatasetSpec,
    LabeledPointCloud,
    default_spec,
    format_csv,
    generate,
    load_csv,
    sample_known_manifold,
    stratified_subsample,
)
from .nn import ACTIVATIONS, Mlp, TrainConfig, forward_trace, load_model, save_model, train
from .pipeline import (
    ExperimentConfig,
    ScaleSearchError,
    default_layers,
    pca_project,
    profiles_csv,
    projection_csv,
    run_experiment,
    select_scale,
    track_persistence,
    track_topology,
    write_report,
)
from .simplicial import BettiVector
from .vr import ScaleParams


def parse_widths(text: str) -> tuple[int, ...]:
    """'2-15x9-2' or '2,15,15,2' -> layer widths."""
    out: list[int] = []
    for part in text.replace(",", "-").split("-"):
        part = part.strip()
        if not part:
            continue
        if "x" in part:
            width, times = part.split("x")
            out.extend([int(width)] * int(times))
        else:
            out.append(int(part))
    if len(out) < 2:
        raise argparse.ArgumentTypeError(f"bad widths {text!r}")
    return tuple(out)


def parse_range(text: str, kind=float) -> tuple:
    """'5:50' (step 1), '0.5:8:0.5', or a comma list."""
    if ":" in text:
        parts = [kind(p) for p in text.split(":")]
        lo, hi = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else kind(1)
        count = int(round((hi - lo) / step)) + 1
        return tuple(kind(lo + i * step) for i in range(count))
    return tuple(kind(p) for p in text.split(",") if p.strip())


def parse_betti(text: str) -> BettiVector:
    return BettiVector(tuple(int(v) for v in text.split(",")))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _load_data(args) -> LabeledPointCloud:
    if getattr(args, "data", None):
        return load_csv(args.data)
    if getattr(args, "manifold", None):
        return sample_known_manifold(args.manifold, args.n, args.seed)
    return generate(replace(default_spec(args.family, args.size), seed=args.seed))


def _data_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="labeled point cloud CSV (coordinates..., label)")
    src.add_argument("--family", choices=sorted(FAMILIES), default="D-I", help="synthetic family")
    src.add_argument("--manifold", choices=sorted(KNOWN_MANIFOLDS), help="single known manifold")
    p.add_argument("--size", type=float, default=1.0, help="fraction of the original sample sizes")
    p.add_argument("--n", type=int, default=2000, help="points for --manifold")
    p.add_argument("--seed", type=int, default=0)


def _train_args(p: argparse.ArgumentParser, defaults: bool) -> None:
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, default=d.learning_rate if defaults else None)
    g.add_argument("--decay-rate", type=float, default=d.decay_rate if defaults else None)
    g.add_argument("--decay-steps", type=float, default=d.decay_steps if defaults else None)
    g.add_argument("--max-epochs", type=int, default=d.max_epochs if defaults else None)
    g.add_argument("--batch-size", type=int, default=None, help="mini-batch size (default full batch)")
    g.add_argument("--patience", type=int, default=d.patience if defaults else None)


def _train_overrides(args) -> dict:
    pairs = {"learning_rate": args.lr, "decay_rate": args.decay_rate, "decay_steps": args.decay_steps,
             "max_epochs": args.max_epochs, "batch_size": args.batch_size, "patience": args.patience}
    return {k: v for k, v in pairs.items() if v is not None}


# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    data = _load_data(args)
    _write(format_csv(data, header=args.header), args.out)
    if data.ground_truth:
        truth = {c: list(b) for c, b in data.ground_truth.items()}
        print(json.dumps({"points": data.n, "ground_truth": truth}), file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    data = _load_data(args)
    widths = args.widths if args.widths[0] == data.d else (data.d,) + args.widths[1:]
    cfg = TrainConfig(seed=args.seed, **_train_overrides(args))
    net = Mlp.init(widths, args.activation, args.seed)
    res = train(net, data.points, data.labels, cfg)
    save_model(res.net, args.model)
    if args.metrics:
        _write(res.metrics_csv(), args.metrics)
    print(json.dumps({"epochs": res.epochs, "train_accuracy": res.train_accuracy,
                      "test_accuracy": res.test_accuracy, "well_trained": res.well_trained}))
    return 0 if res.well_trained else 2


def _truths(args, data: LabeledPointCloud) -> dict[str, BettiVector]:
    given = {c: parse_betti(t) for c, t in (("a", args.truth_a), ("b", args.truth_b)) if t}
    if given:
        return given
    if not data.ground_truth:
        raise SystemExit("no ground truth: pass --truth-a/--truth-b")
    return {c: BettiVector(tuple(b)[:args.dmax + 1]) for c, b in data.ground_truth.items()}


def cmd_scale_search(args) -> int:
    data = _load_data(args)
    truth = _truths(args, data)
    if args.n_homology and args.n_homology < data.n:
        data = data.subset(stratified_subsample(data, args.n_homology, np.random.default_rng([args.seed, 11])))
    clouds = {c: data.of_class(c) for c in truth}
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    try:
        res = select_scale(clouds, truth, args.k_range, args.eps_range, budget=args.budget,
                           full_map=args.full_map, log=log)
    except ScaleSearchError as exc:
        _write(exc.result.to_csv(), args.out)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write(res.to_csv(), args.out)
    print(json.dumps({"k": res.chosen.k, "eps": res.chosen.eps}), file=sys.stderr)
    return 0


def cmd_track(args) -> int:
    data = _load_data(args)
    net = load_model(args.model)
    if args.n_homology and args.n_homology < data.n:
        data = data.subset(stratified_subsample(data, args.n_homology, np.random.default_rng([args.seed, 13])))
    scale = ScaleParams(args.k, args.eps)
    profiles = track_topology(net, data, scale, args.dmax, budget=args.budget,
                              meta={"seed": args.seed})
    _write(profiles_csv([(0, p) for p in profiles], args.dmax), args.out)
    return 0


def cmd_persist(args) -> int:
    data = _load_data(args)
    net = load_model(args.model)
    if args.n_homology and args.n_homology < data.n:
        data = data.subset(stratified_subsample(data, args.n_homology, np.random.default_rng([args.seed, 13])))
    bars = track_persistence(net, data, args.k, args.layers, args.dmax, args.eps_max)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for (j, c), bc in sorted(bars.items()):
        (out / f"layer{j}_{c}.csv").write_text(bc.to_csv(include_zero=args.include_zero))
    print(json.dumps({"written": len(bars), "dir": str(out)}), file=sys.stderr)
    return 0


def cmd_pca(args) -> int:
    data = _load_data(args)
    points = data.points
    if args.model:
        trace = forward_trace(load_model(args.model), points)
        layer = args.layer if args.layer is not None else default_layers(len(trace))[1]
        points = trace[layer]
    res = pca_project(points, args.components)
    _write(projection_csv(res.points, data.labels), args.out)
    info = {"explained_variance_ratio": [float(v) for v in res.explained_variance_ratio],
            "rank_deficient": res.rank_deficient}
    print(json.dumps(info), file=sys.stderr)
    return 0


def experiment_config(args) -> ExperimentConfig:
    base: dict = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
    cfg = ExperimentConfig.from_dict(base)
    ds = cfg.dataset
    if args.family or args.size is not None:
        family = args.family or ds.family
        scaled = default_spec(family, 1.0 if args.size is None else args.size)
        ds = replace(ds, family=family, n_train=scaled.n_train, n_homology=scaled.n_homology)
    if args.n_train is not None:
        ds = replace(ds, n_train=args.n_train)
    if args.n_homology is not None:
        ds = replace(ds, n_homology=args.n_homology)
    if args.data:
        ds = replace(ds, family="CSV", path=args.data)
    changes: dict = {"dataset": ds}
    train_cfg = replace(cfg.train, **_train_overrides(args))
    changes["train"] = train_cfg
    simple = {"widths": args.widths, "activation": args.activation, "repetitions": args.repetitions,
              "target_successes": args.target_successes, "max_attempts": args.max_attempts,
              "k_range": args.k_range, "eps_range": args.eps_range, "dmax": args.dmax,
              "workers": args.workers, "memory_mb": args.memory_mb, "budget": args.budget,
              "persist_layers": args.persist_layers, "pca_layers": args.pca_layers, "seed": args.seed}
    changes.update({k: v for k, v in simple.items() if v is not None})
    if args.k is not None or args.eps is not None:
        if args.k is None or args.eps is None:
            raise SystemExit("--k and --eps go together")
        changes["scale"] = ScaleParams(args.k, args.eps)
    return replace(cfg, **changes)


def cmd_experiment(args) -> int:
    cfg = experiment_config(args)
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    result = run_experiment(cfg, log=log)
    out = write_report(result, args.out)
    print(json.dumps({"report": str(out), "k": result.scale.k, "eps": result.scale.eps,
                      "success_rate": result.success_rate,
                      "well_trained": sum(r.well_trained for r in result.runs)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nntopo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a labeled data set as CSV")
    _data_args(g)
    g.add_argument("--header", action="store_true")
    g.add_argument("--out", "-o")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one network and save it")
    _data_args(t)
    t.add_argument("--widths", type=parse_widths, default=parse_widths("2-15x9-2"))
    t.add_argument("--activation", choices=ACTIVATIONS, default="relu")
    _train_args(t, defaults=False)
    t.add_argument("--model", required=True, help="output model file (JSON)")
    t.add_argument("--metrics", help="per-epoch metrics CSV")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("scale-search", help="two-stage (k, eps) search; writes the validity map")
    _data_args(s)
    s.add_argument("--truth-a")
    s.add_argument("--truth-b")
    s.add_argument("--dmax", type=int, default=2)
    s.add_argument("--n-homology", type=int)
    s.add_argument("--k-range", type=lambda v: parse_range(v, int), default=tuple(range(5, 51)))
    s.add_argument("--eps-range", type=parse_range, default=tuple(j / 2 for j in range(1, 17)))
    s.add_argument("--budget", type=int, default=3_000_000)
    s.add_argument("--full-map", action="store_true")
    s.add_argument("--verbose", "-v", action="store_true")
    s.add_argument("--out", "-o")
    s.set_defaults(func=cmd_scale_search)

    k = sub.add_parser("track", help="per-layer Betti numbers at a fixed scale")
    _data_args(k)
    k.add_argument("--model", required=True)
    k.add_argument("--k", type=int, required=True)
    k.add_argument("--eps", type=float, required=True)
    k.add_argument("--dmax", type=int, default=2)
    k.add_argument("--n-homology", type=int)
    k.add_argument("--budget", type=int)
    k.add_argument("--out", "-o")
    k.set_defaults(func=cmd_track)

    b = sub.add_parser("persist", help="per-layer persistence barcodes")
    _data_args(b)
    b.add_argument("--model", required=True)
    b.add_argument("--k", type=int, required=True)
    b.add_argument("--layers", type=_ints, help="comma list (default first, middle, last)")
    b.add_argument("--eps-max", type=float, default=2.0)
    b.add_argument("--dmax", type=int, default=2)
    b.add_argument("--n-homology", type=int)
    b.add_argument("--include-zero", action="store_true", help="keep zero-length bars")
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_persist)

    e = sub.add_parser("experiment", help="full run: data, scale, training, per-layer homology")
    e.add_argument("--config", help="JSON file with ExperimentConfig fields")
    e.add_argument("--data", help="CSV data set (needs --k and --eps)")
    e.add_argument("--family", choices=sorted(FAMILIES))
    e.add_argument("--size", type=float, help="fraction of the original sample sizes")
    e.add_argument("--n-train", type=int)
    e.add_argument("--n-homology", type=int)
    e.add_argument("--widths", type=parse_widths)
    e.add_argument("--activation", choices=ACTIVATIONS)
    _train_args(e, defaults=False)
    e.add_argument("--repetitions", type=int)
    e.add_argument("--target-successes", type=int)
    e.add_argument("--max-attempts", type=int)
    e.add_argument("--k", type=int)
    e.add_argument("--eps", type=float)
    e.add_argument("--k-range", type=lambda v: parse_range(v, int))
    e.add_argument("--eps-range", type=parse_range)
    e.add_argument("--dmax", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--memory-mb", type=int)
    e.add_argument("--budget", type=int)
    e.add_argument("--persist-layers", type=_ints)
    e.add_argument("--pca-layers", type=_ints)
    e.add_argument("--seed", type=int)
    e.add_argument("--verbose", "-v", action="store_true")
    e.add_argument("--out", "-o", default="report")
    e.set_defaults(func=cmd_experiment)

    c = sub.add_parser("pca", help="principal-component projection of a cloud or a layer")
    _data_args(c)
    c.add_argument("--model", help="project a layer of this network instead of the input")
    c.add_argument("--layer", type=int)
    c.add_argument("--components", type=int, choices=(2, 3), default=2)
    c.add_argument("--out", "-o")
    c.set_defaults(func=cmd_pca)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
