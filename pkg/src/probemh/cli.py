"""``probemh`` command line.

Subcommands: ``toy`` (exact three-state example), ``gbm`` (path sampling
for geometric Brownian motion, checked against closed forms), ``probe``
(uniform probing of a built-in or external model) and ``replay`` (re-run a
manifest). Exit codes: 0 success, 1 checks failed, 2 usage, 3 I/O.
"""

from __future__ import annotations

import argparse
import os
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import ChainConfig, ForwardModel
from .discrete import (
    build_modified_chain,
    build_naive_chain,
    detailed_balance_residual,
    exact_fraction_matrix,
    probe_distribution,
    pushforward,
    simulate,
    stationary_distribution,
    toy_spec,
)
from .errors import ConfigurationError, DomainError, ExternalModelError, ProbeMHError
from .experiments import FULL_GBM, check_gbm, gbm_report
from .io import fmt, now_iso, write_csv, write_manifest, write_matrix_csv, write_metrics, read_manifest
from .probing import InputBox, command_model, infer_output_dim, save_probes, uniform_probe
from .sde import gbm_model, sample_paths

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
FULL_SCALE_STEPS = FULL_GBM["total_steps"]


class UsageError(Exception):
    pass


def _count(text):
    """Positive integer; accepts ``1e6`` style input."""
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v.is_integer() or v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(v)


def _nonneg_count(text):
    if text.strip() in ("0", "0.0"):
        return 0
    return _count(text)


def _positive(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed(text):
    v = _nonneg_count(text)
    if v >= 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="probemh", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"probemh {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)

    t = sub.add_parser("toy", help="exact three-state example, naive vs corrected chain")
    t.add_argument("--simulate", type=_count, default=None, metavar="STEPS",
                   help="also run the corrected chain for STEPS steps")
    t.add_argument("--seed", type=_seed, default=0)
    t.add_argument("--tolerance", type=_positive, default=1e-12)
    t.add_argument("--out-dir", type=Path, default=None, help="write report and manifest here")

    g = sub.add_parser("gbm", help="sample geometric Brownian motion paths and compare with closed forms")
    g.add_argument("--mu", type=float, default=FULL_GBM["mu"])
    g.add_argument("--sigma", type=_positive, default=FULL_GBM["sigma"])
    g.add_argument("--x0", type=_positive, default=FULL_GBM["x0"])
    g.add_argument("--t-end", type=_positive, default=FULL_GBM["t_end"])
    g.add_argument("--n-steps", type=_count, default=FULL_GBM["n_steps"])
    g.add_argument("--rho", type=_positive, default=FULL_GBM["rho"])
    g.add_argument("--proposal-half-width", type=_positive, default=FULL_GBM["proposal_half_width"])
    g.add_argument("--total-steps", type=_count, default=FULL_GBM["total_steps"])
    g.add_argument("--burn-in", type=_nonneg_count, default=FULL_GBM["burn_in"])
    g.add_argument("--thinning", type=_count, default=FULL_GBM["thinning"])
    g.add_argument("--chains", type=_count, default=1)
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--out-dir", type=Path, required=True)
    g.add_argument("--update", choices=("sweep", "single", "all"), default="sweep",
                   help="sweep: every increment in turn; single: one random increment; all: whole vector")
    g.add_argument("--initial", choices=("alternating", "zero"), default="alternating")
    g.add_argument("--backend", choices=("numba", "numpy"), default=None)
    g.add_argument("--jobs", type=_count, default=os.cpu_count() or 1)
    g.add_argument("--times", type=_float_list, default=[0.1, 0.5, 1.0])
    g.add_argument("--fixed-s", type=_float_list, default=[0.1, 0.5, 1.0])
    g.add_argument("--n-bins", type=_count, default=60)
    g.add_argument("--pdf-range", type=_float_list, default=[0.0, 8.0])
    g.add_argument("--l1-threshold", type=_positive, default=None,
                   help="default 0.05 at 5.1e6 steps or more, else 0.10")
    g.add_argument("--autocorr-threshold", type=_positive, default=0.08)
    g.add_argument("--corr-threshold", type=_positive, default=0.03)
    g.add_argument("--ks-level", type=_positive, default=0.01)

    q = sub.add_parser("probe", help="push uniform draws from a box through a model")
    src = q.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", choices=("square", "identity"))
    src.add_argument("--command", help="external model; one input vector per stdin line, one output per stdout line")
    q.add_argument("--lower", type=_float_list, required=True)
    q.add_argument("--upper", type=_float_list, required=True)
    q.add_argument("--count", type=_count, required=True)
    q.add_argument("--seed", type=_seed, default=0)
    q.add_argument("--out", type=Path, required=True)
    q.add_argument("--output-dim", type=_count, default=None)
    q.add_argument("--jobs", type=_count, default=os.cpu_count() or 1)
    q.add_argument("--shard-size", type=_count, default=4096)

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest", type=Path)
    r.add_argument("--out-dir", type=Path, default=None,
                   help="write outputs here instead of the recorded location")
    return p


# ---------------------------------------------------------------------------


def _prepare_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")
    return path


def _manifest(path, command, args, argv, started, outputs):
    entries = {"command": command, "version": __version__, "seed": getattr(args, "seed", ""),
               "argv": shlex.join(argv), "started": started, "finished": now_iso()}
    for k, v in sorted(vars(args).items()):
        if k != "subcommand":
            entries[f"param.{k}"] = ",".join(map(str, v)) if isinstance(v, list) else v
    entries["outputs"] = ",".join(str(o) for o in outputs)
    write_manifest(path, entries)


def _print_matrix(name, exact):
    print(f"{name}:")
    for row in exact:
        print("  " + "  ".join(f"{str(v):>6}" for v in row))


def cmd_toy(args, argv) -> int:
    started = now_iso()
    spec = toy_spec()
    naive = build_naive_chain(spec)
    modified = build_modified_chain(spec)
    pi_n = stationary_distribution(naive)
    pi_m = stationary_distribution(modified)
    push_n = pushforward(pi_n, spec)
    push_m = pushforward(pi_m, spec)
    metrics = {
        "probe_density": " ".join(fmt(v) for v in probe_distribution(spec)),
        "naive_stationary": " ".join(fmt(v) for v in pi_n),
        "naive_pushforward": " ".join(fmt(v) for v in push_n),
        "naive_balance_residual": detailed_balance_residual(naive, pi_n),
        "modified_stationary": " ".join(fmt(v) for v in pi_m),
        "modified_pushforward": " ".join(fmt(v) for v in push_m),
        "modified_balance_residual": detailed_balance_residual(modified, pi_m),
        "target": " ".join(fmt(v) for v in spec.target),
    }
    error = float(np.max(np.abs(push_m - spec.target)))
    metrics["modified_pushforward_error"] = error
    _print_matrix("naive transition matrix", exact_fraction_matrix(spec, modified=False))
    _print_matrix("modified transition matrix", exact_fraction_matrix(spec, modified=True))
    if args.simulate:
        freq = simulate(spec, args.simulate, args.seed, modified=True)
        metrics["simulated_steps"] = args.simulate
        metrics["simulated_frequencies"] = " ".join(fmt(v) for v in freq)
        metrics["simulated_max_abs_error"] = float(np.max(np.abs(freq - pi_m)))
    ok = error <= args.tolerance
    metrics["pushforward_matches_target"] = int(ok)
    for k, v in metrics.items():
        print(f"{k},{fmt(v) if isinstance(v, (int, float)) else v}")
    if args.out_dir is not None:
        out = _prepare_dir(args.out_dir)
        report = write_metrics(out / "toy_report.csv", metrics)
        _manifest(out / "manifest.txt", "toy", args, argv, started, [report])
    return EXIT_OK if ok else EXIT_FAILED


def _write_paths(path, ens):
    n = ens.model.n_steps
    with open(path, "w") as fh:
        fh.write(",".join(["chain", "step"] + [f"x_{i}" for i in range(n + 1)]) + "\n")
        paths = ens.paths()
        for c in range(ens.n_chains):
            for step, row in zip(ens.steps[c].tolist(), paths[c].tolist()):
                fh.write(f"{c},{step}," + ",".join(map(repr, row)) + "\n")
    return path


def cmd_gbm(args, argv) -> int:
    started = now_iso()
    if len(args.pdf_range) != 2 or not args.pdf_range[0] < args.pdf_range[1]:
        raise UsageError("--pdf-range needs two increasing numbers")
    if args.burn_in >= args.total_steps:
        raise UsageError("--burn-in must be smaller than --total-steps")
    out = _prepare_dir(args.out_dir)
    model = gbm_model(args.mu, args.sigma, args.x0, args.t_end, args.n_steps, args.rho)
    cfg = ChainConfig(None, total_steps=args.total_steps, burn_in=args.burn_in,
                      thinning=args.thinning, seed=args.seed)
    ens = sample_paths(model, cfg, n_chains=args.chains, proposal_half_width=args.proposal_half_width,
                       update=args.update, jobs=args.jobs, backend=args.backend, initial=args.initial)
    rep = gbm_report(ens, args.mu, args.sigma, args.times, args.fixed_s, args.n_bins,
                     tuple(args.pdf_range), args.ks_level)
    l1_thr = args.l1_threshold
    if l1_thr is None:
        l1_thr = 0.05 if args.total_steps >= FULL_SCALE_STEPS else 0.10
    failed = check_gbm(rep, l1_thr, args.autocorr_threshold, args.corr_threshold)

    outputs = [_write_paths(out / "paths.csv", ens)]
    for t in args.times:
        outputs.append(write_matrix_csv(out / f"pdf_empirical_t{t:g}.csv",
                                        ["bin_lo", "bin_hi", "x", "density"], rep.pdf_tables[t]))
        outputs.append(write_matrix_csv(out / f"pdf_analytic_t{t:g}.csv", ["x", "pdf"], rep.analytic_pdf[t]))
    for s in args.fixed_s:
        tab = rep.autocorr_tables[s]
        outputs.append(write_matrix_csv(out / f"autocorr_empirical_s{s:g}.csv", ["t", "value"], tab[:, [0, 1]]))
        outputs.append(write_matrix_csv(out / f"autocorr_analytic_s{s:g}.csv", ["t", "value"], tab[:, [0, 2]]))
    outputs.append(write_csv(out / "innovation_ks.csv", ["coordinate", "ks", "ess", "critical_each",
                                                          "critical_family"],
                             zip(range(args.n_steps), rep.ks.statistic, rep.ks.ess,
                                 rep.ks.critical_each, rep.ks.critical_family)))
    metrics = dict(rep.metrics)
    metrics["backend"] = ens.backend
    metrics["update"] = ens.update
    metrics["l1_threshold"] = l1_thr
    metrics["failed_checks"] = " ".join(failed) if failed else "none"
    outputs.append(write_metrics(out / "metrics.csv", metrics))
    _manifest(out / "manifest.txt", "gbm", args, argv, started, outputs)
    for k, v in metrics.items():
        print(f"{k},{fmt(v) if isinstance(v, (int, float, np.number)) else v}")
    return EXIT_FAILED if failed else EXIT_OK


def _builtin_model(name, dim):
    fn = np.square if name == "square" else (lambda x: np.array(x, dtype=float))
    return ForwardModel(dim, dim, fn, fn, name=name)


def cmd_probe(args, argv) -> int:
    started = now_iso()
    if len(args.lower) != len(args.upper) or not args.lower:
        raise UsageError("--lower and --upper need the same number of values")
    box = InputBox(args.lower, args.upper)
    if args.model:
        model = _builtin_model(args.model, box.dim)
    else:
        cmd = shlex.split(args.command)
        if not cmd:
            raise UsageError("--command is empty")
        m = args.output_dim or infer_output_dim(cmd, 0.5 * (box.lower + box.upper))
        model = command_model(cmd, box.dim, m)
    parent = args.out.parent if str(args.out.parent) else Path(".")
    _prepare_dir(parent)
    res = uniform_probe(model, box, args.count, args.seed, jobs=args.jobs, shard_size=args.shard_size)
    summary = res.summary()
    outputs = [save_probes(args.out, res.outputs)]
    summary_path = args.out.with_name(args.out.stem + "_summary.csv")
    outputs.append(write_metrics(summary_path, summary))
    _manifest(args.out.with_name(args.out.stem + "_manifest.txt"), "probe", args, argv, started, outputs)
    for k, v in summary.items():
        print(f"{k},{fmt(v)}")
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    try:
        entries = read_manifest(args.manifest)
    except FileNotFoundError:
        raise OSError(f"no such manifest: {args.manifest}") from None
    if "argv" not in entries:
        raise UsageError(f"{args.manifest}: manifest has no argv entry")
    recorded = shlex.split(entries["argv"])
    if args.out_dir is not None:
        cmd = recorded[0] if recorded else ""
        if cmd == "probe":
            name = Path(entries.get("param.out", "probes.csv")).name
            recorded += ["--out", str(args.out_dir / name)]
        else:
            recorded += ["--out-dir", str(args.out_dir)]
    return main(recorded)


COMMANDS = {"toy": cmd_toy, "gbm": cmd_gbm, "probe": cmd_probe, "replay": cmd_replay}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.subcommand](args, argv)
    except UsageError as exc:
        print(f"probemh: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExternalModelError as exc:
        print(f"probemh: external model failed: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"probemh: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, DomainError) as exc:
        print(f"probemh: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProbeMHError as exc:
        print(f"probemh: run failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
