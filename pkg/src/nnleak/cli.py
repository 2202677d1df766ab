"""Command-line front end.

Subcommands:
    simulate    generate a synthetic trace set and write it to disk
    attack      recover parameters from a trace set
    reproduce   re-run a reference experiment at reduced scale and compare
    run         config-driven end-to-end experiment with artifacts
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import NnleakError
from .extraction import (
    ExtractionConfig,
    extract_bias_neuron,
    extract_layer,
    extract_model,
    extract_multiplication,
    extract_value,
)
from .harness import reproduce_table, run_experiment
from .mlp import load_model
from .simulate import (
    INPUT_MODES,
    simulate_layer_set,
    simulate_model_set,
    simulate_multiplication_set,
    simulate_neuron_set,
)
from .traceset import import_csv, read_traceset, write_traceset

PROTOCOLS = ("mult", "neuron", "bias-neuron", "layer", "model")


def _add_sim_args(p):
    p.add_argument("--protocol", choices=PROTOCOLS, required=True)
    p.add_argument("--traces", type=int, default=1000)
    p.add_argument("--sigma", type=float, default=0.0,
                   help="noise standard deviation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=INPUT_MODES, default="nonneg",
                   help="input distribution")
    p.add_argument("--trace-len", type=int, default=None)
    p.add_argument("--averaging", type=int, default=1)
    p.add_argument("--secret", type=float, help="mult protocol secret")
    p.add_argument("--weights", type=float, nargs="+",
                   help="neuron protocol weights")
    p.add_argument("--bias", type=float, help="bias-neuron protocol bias")
    p.add_argument("--model", help="model JSON file (layer/model protocols)")
    p.add_argument("--layer-index", type=int, default=0,
                   help="layer of --model to use for the layer protocol")


def _simulate_from_args(args):
    kw = dict(noise_sigma=args.sigma, seed=args.seed, input_mode=args.mode,
              averaging_factor=args.averaging)
    if args.protocol == "mult":
        if args.secret is None:
            raise SystemExit("mult protocol needs --secret")
        return simulate_multiplication_set(
            args.secret, args.traces, T=args.trace_len or 3, **kw)
    if args.protocol in ("neuron", "bias-neuron"):
        if not args.weights:
            raise SystemExit(f"{args.protocol} protocol needs --weights")
        bias = args.bias if args.protocol == "bias-neuron" else None
        if args.protocol == "bias-neuron" and bias is None:
            raise SystemExit("bias-neuron protocol needs --bias")
        return simulate_neuron_set(
            np.asarray(args.weights, dtype=np.float32), bias, args.traces,
            T=args.trace_len or 50, **kw)
    if args.model is None:
        raise SystemExit(f"{args.protocol} protocol needs --model")
    model = load_model(args.model)
    if args.protocol == "layer":
        W = model.layers[args.layer_index].weights
        return simulate_layer_set(W, args.traces, T=args.trace_len or 50, **kw)
    return simulate_model_set(
        model, args.traces,
        samples_per_value=args.trace_len or 3, **kw)


def cmd_simulate(args):
    ts = _simulate_from_args(args)
    write_traceset(ts, args.out)
    print(f"wrote {ts.n_traces} traces x {ts.n_samples} samples to {args.out}")
    return 0


def _report_lines(report):
    for r in report.records:
        bits = [f"{r.role} L{r.layer} n{r.neuron}"]
        if r.index is not None:
            bits.append(f"i{r.index}")
        bits.append("dead" if r.dead else f"value={r.recovered:.9g}")
        if r.leak_sample is not None:
            bits.append(f"sample={r.leak_sample}")
        if r.best_corr is not None:
            bits.append(f"|r|={r.best_corr:.4f}")
        if r.ambiguous_sign:
            bits.append("sign-ambiguous")
        yield "  ".join(bits)


def cmd_attack(args):
    ts = (import_csv(args.traces_file) if args.traces_file.endswith(".csv")
          else read_traceset(args.traces_file))
    cfg = ExtractionConfig()
    if args.config:
        with open(args.config) as fh:
            cfg = ExtractionConfig.from_json(json.load(fh))

    if args.protocol == "mult":
        if args.dump_correlations:
            ext = _mult_with_dump(ts, cfg, args.dump_correlations)
        else:
            ext = extract_multiplication(ts, cfg)
        print(f"recovered value {ext.value:.9g}  sample={ext.leak_sample}  "
              f"|r|={ext.best_abs_corr:.4f}")
        return 0
    if args.protocol == "neuron":
        from .extraction import extract_neuron

        report = extract_neuron(ts, cfg=cfg, signed=args.signed)
    elif args.protocol == "bias-neuron":
        report = extract_bias_neuron(ts, cfg=cfg)
    elif args.protocol == "layer":
        if args.neurons is None:
            raise SystemExit("layer protocol needs --neurons")
        report = extract_layer(ts, args.neurons, cfg=cfg, signed=args.signed)
    else:
        if not args.shape:
            raise SystemExit("model protocol needs --shape")
        report, _ = extract_model(ts, args.shape, cfg=cfg, signed=args.signed)
    for line in _report_lines(report):
        print(line)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report.to_json(), fh, indent=1)
        print(f"report written to {args.report}")
    return 0


def _mult_with_dump(ts, cfg, path):
    """Single-multiplication attack that also dumps the final ranking of
    every surviving hypothesis (value, best signed r, best sample)."""
    x = np.ascontiguousarray(ts.inputs[:, 0])

    def predict(h):
        return h[:, None] * x[None, :]

    window = np.arange(ts.n_samples, dtype=np.intp)
    ext = extract_value(ts.traces, predict, cfg, window)
    with open(path, "w") as fh:
        fh.write("hypothesis,best_r,best_sample\n")
        for it_index, it in enumerate(ext.iterations):
            for v, a, s in zip(it.kept_values, it.kept_abs_corr, it.kept_sample):
                fh.write(f"{float(v):.9g},{float(a):.6f},{int(s)}\n")
    return ext


def cmd_reproduce(args):
    rep = reproduce_table(
        args.table, scale=args.scale, seed=args.seed, sigma2=args.sigma2,
        n_traces=args.traces, jobs=args.jobs,
    )
    if rep.small_sample_warning:
        print(f"warning: scale {rep.scale} gives only {rep.n_trials} trials; "
              "expect noisy rates", file=sys.stderr)
    print(rep.sr_csv(), end="")
    print(f"# {rep.n_trials} trials, sigma^2={rep.sigma2}, "
          f"{rep.elapsed_seconds:.1f}s", file=sys.stderr)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rep.to_json(), fh, indent=1)
    if args.max_deviation is not None:
        worst = 0.0
        for dev in rep.deviation.values():
            vals = dev if isinstance(dev, tuple) else (dev,)
            worst = max(worst, max(abs(v) for v in vals))
        if worst > args.max_deviation:
            print(f"deviation {worst:.2f} exceeds bound {args.max_deviation}",
                  file=sys.stderr)
            return 1
    return 0


def cmd_run(args):
    result = run_experiment(args.config, out_dir=args.out_dir)
    report = result.report
    for line in _report_lines(report):
        print(line)
    if result.artifacts:
        print("artifacts: " + ", ".join(result.artifacts.values()))
    return 0 if result.tolerances_ok else 1


def build_parser():
    ap = argparse.ArgumentParser(
        prog="nnleak",
        description="simulated side-channel traces of MLP inference and "
                    "correlation-based parameter recovery",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic trace set")
    _add_sim_args(p)
    p.add_argument("--out", required=True, help="output trace file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", help="recover parameters from a trace set")
    p.add_argument("traces_file", help="trace file (.scnt or .csv)")
    p.add_argument("--protocol", choices=PROTOCOLS, required=True)
    p.add_argument("--config", help="extraction config JSON")
    p.add_argument("--signed", action="store_true",
                   help="carry +/- hypothesis pairs")
    p.add_argument("--neurons", type=int, help="neuron count (layer protocol)")
    p.add_argument("--shape", type=int, nargs="+",
                   help="neurons per layer (model protocol)")
    p.add_argument("--report", help="write the report JSON here")
    p.add_argument("--dump-correlations",
                   help="CSV of kept hypotheses per iteration (mult protocol)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("reproduce", help="re-run a reference experiment")
    p.add_argument("table", choices=("T2", "T5", "T7"))
    p.add_argument("--scale", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--traces", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="write the comparison JSON here")
    p.add_argument("--max-deviation", type=float, default=None,
                   help="exit nonzero when any rate deviates by more than this")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("run", help="config-driven end-to-end experiment")
    p.add_argument("config", help="experiment config JSON file")
    p.add_argument("--out-dir", help="artifact directory")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NnleakError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
