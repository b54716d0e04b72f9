"""Command-line front end: payload construction, end-to-end attacks,
separability verification, the oracle server, and the degradation sweeps.

Flags mirror a JSON config file (--config); explicit flags win.  Module
errors map to distinct exit codes so scripts can tell an infeasible
construction from a malformed invocation.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

from . import errors
from .attack import (
    ConstructedPayload,
    as_tau,
    construct,
    construct_binary_baseline,
    decode,
    decode_multiquery,
    payload_from_json,
    payload_to_json,
    plan_multiquery,
)
from .bignum import BigReal, FpaFormat, parse_rational
from .experiments import (
    FIG1_LOSSES,
    ExperimentConfig,
    run_fig1,
    run_fig2,
    write_csv,
    write_svg,
)
from .losses import LabelVector, LossSpec, ProbabilityVector, Pow3Matrix
from .oracle import (
    NoiseSpec,
    Oracle,
    OracleClient,
    OracleConfig,
    PrecisionSpec,
    dataset_labels,
    serve,
    synthetic_labels,
)
from .separability import lambda_bruteforce

EXIT_CODES = {
    errors.IrrationalTau: 3,
    errors.Infeasible: 4,
    errors.BudgetExceeded: 5,
    errors.DecodingFailed: 6,
    errors.TooLarge: 7,
    errors.UnsupportedLoss: 8,
    errors.ParseError: 9,
    errors.UnknownClass: 10,
    errors.DomainError: 11,
    errors.BudgetExhausted: 12,
    errors.MalformedPayload: 13,
}

CLI_LOSSES = ("binary-ce", "binary-baseline", "kary-ce", "softmax-ce", "sigmoid-ce",
              "kl", "itakura-saito", "squared-euclidean", "norm-like", "mahalanobis")


def _loss_spec(name: str, k: int, alpha: str | None, matrix: str | None) -> LossSpec:
    fam = "binary-ce" if name == "binary-baseline" else name
    kw = {}
    if fam == "norm-like":
        kw["alpha"] = parse_rational(alpha or "2")
    if fam == "mahalanobis":
        vals = [parse_rational(v) for v in (matrix or "2,0,0,2").split(",")]
        kw["matrix"] = tuple(vals)
    k_eff = k if fam in ("kary-ce", "softmax-ce") else 2
    return LossSpec(fam, k_classes=k_eff, **kw)


def _labels(args) -> LabelVector:
    if args.dataset == "synthetic":
        return synthetic_labels(args.seed, args.n, args.k)
    return dataset_labels(args.dataset)


def _taus(raw: str) -> tuple[Fraction, ...]:
    return tuple(as_tau(t) for t in raw.split(","))


def _build_payload(args) -> ConstructedPayload:
    spec = _loss_spec(args.loss, args.k, getattr(args, "alpha", None),
                      getattr(args, "matrix", None))
    tau = as_tau(args.tau) if args.tau is not None else None
    if args.loss == "binary-baseline":
        return construct_binary_baseline(args.n, tau, orientation=args.orientation)
    if spec.family in ("squared-euclidean", "norm-like"):
        return construct(spec, args.n)
    return construct(spec, args.n, tau)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_construct(args) -> int:
    cp = _build_payload(args)
    doc = payload_to_json(cp, args.encoding, digits=args.digits)
    out = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out + "\n")
    else:
        print(out)
    return 0


def cmd_attack(args) -> int:
    labels = _labels(args)
    n, k = labels.n, labels.k_classes
    args.n, args.k = n, k
    tau = as_tau(args.tau)
    noise = NoiseSpec(args.noise, seed=args.seed, margin=parse_rational(args.margin))
    if args.precision == "apa":
        precision = PrecisionSpec("apa", tau / 64)
    else:
        precision = PrecisionSpec("fpa", fmt=FpaFormat.ieee754_double())
    spec = _loss_spec(args.loss, k, args.alpha, args.matrix)
    cfg = OracleConfig(labels, spec, tau=tau, noise=noise, precision=precision)
    oracle = Oracle(cfg)
    block = args.block_size or n
    if block < n:
        plan = plan_multiquery(spec, n, tau, block)
        queries = plan.queries
    else:
        plan = None
        queries = (_build_payload(args),)

    def observe(cp: ConstructedPayload):
        if args.remote:
            host, port = args.remote.rsplit(":", 1)
            cli = OracleClient(host, int(port))
            try:
                resp = cli.evaluate(cp)
            finally:
                cli.close()
            if not resp.get("ok"):
                raise errors.DecodingFailed(f"oracle error {resp.get('code')}")
            err = Fraction(1, 10 ** resp["digits"])
            return BigReal(parse_rational(resp["loss_value"]), err)
        out = oracle.evaluate(cp)
        if isinstance(out, BigReal):
            return out
        if out.flagged:
            raise errors.DecodingFailed("oracle returned a flagged value")
        return BigReal.exact(out.to_fraction())

    values = [observe(cp) for cp in queries]
    got = (decode_multiquery(plan, values) if plan
           else decode(queries[0], values[0]))
    hits = sum(1 for a, b in zip(got.labels, labels.labels) if a == b)
    report = {
        "loss": args.loss, "dataset": args.dataset, "n": n, "k": k,
        "tau": str(tau), "queries": len(values),
        "accuracy": hits / n, "exact": hits == n,
    }
    print(json.dumps(report, indent=2))
    return 0 if hits == n else 1


def cmd_verify(args) -> int:
    if args.payload:
        with open(args.payload, encoding="utf-8") as fh:
            cp = payload_from_json(json.load(fh))
    elif args.uniform:
        spec = _loss_spec(args.loss, args.k, args.alpha, args.matrix)
        from .attack import AttackPlan

        tau = as_tau(args.tau) if args.tau is not None else None
        plan = AttackPlan(spec, args.n, spec.k_classes, tau, args.n,
                          Fraction(1, 1 << 40), Fraction(1, 1 << 40))
        if spec.family in ("kary-ce", "softmax-ce"):
            payload = Pow3Matrix(tuple(tuple(Fraction(0) for _ in range(spec.k_classes))
                                       for _ in range(args.n)))
        else:
            payload = ProbabilityVector(tuple(BigReal.exact(Fraction(1, 2))
                                              for _ in range(args.n)))
        cp = ConstructedPayload(plan, payload, BigReal.exact(0), Fraction(1),
                                "bruteforce")
    else:
        cp = _build_payload(args)
    report = lambda_bruteforce(cp)
    doc = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    print(json.dumps(doc, indent=2))
    return 0


def cmd_oracle(args) -> int:
    labels = _labels(args)
    spec = _loss_spec(args.loss, labels.k_classes, args.alpha, args.matrix)
    tau = as_tau(args.tau) if args.tau is not None else None
    noise = NoiseSpec(args.noise, seed=args.seed, margin=parse_rational(args.margin)) \
        if args.noise != "none" else NoiseSpec("none")
    if args.precision == "apa":
        budget = (tau / 64) if tau is not None else Fraction(1, 1 << 80)
        precision = PrecisionSpec("apa", budget)
    else:
        precision = PrecisionSpec("fpa", fmt=FpaFormat.ieee754_double())
    cfg = OracleConfig(labels, spec, tau=tau, noise=noise, precision=precision,
                       max_queries=args.max_queries)
    if args.transport == "tcp":
        serve(cfg, "tcp", host=args.host, port=args.port,
              ready=lambda a: print(f"listening on {a[0]}:{a[1]}", file=sys.stderr))
    else:
        serve(cfg, "stdio")
    return 0


def _experiment_config(args) -> ExperimentConfig:
    losses = tuple(args.loss.split(",")) if args.loss else FIG1_LOSSES
    return ExperimentConfig(
        dataset=args.dataset,
        synthetic=(args.n, args.k, args.seed) if args.dataset == "synthetic" else None,
        losses=losses,
        tau_grid=_taus(args.tau) if args.tau else ExperimentConfig.tau_grid,
        trials=args.trials,
        accuracy_target=parse_rational(args.accuracy_target),
        block_grid=tuple(int(b) for b in args.block_size.split(","))
        if getattr(args, "block_size", None) else None,
        seed=args.seed,
        max_n=args.max_n,
    )


def cmd_fig1(args) -> int:
    cfg = _experiment_config(args)
    datasets = args.datasets.split(",") if args.datasets else [cfg.dataset]
    rows = run_fig1(cfg, datasets=datasets)
    write_csv(rows, args.out)
    if args.svg:
        write_svg(rows, args.svg, x_key="tau", y_key="max_N")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_fig2(args) -> int:
    cfg = _experiment_config(args)
    rows = run_fig2(cfg)
    write_csv(rows, args.out)
    if args.svg:
        write_svg(rows, args.svg, x_key="block_size", y_key="accuracy")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, *, tau=True):
    p.add_argument("--loss", default="binary-baseline", choices=CLI_LOSSES)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--k", type=int, default=2)
    if tau:
        p.add_argument("--tau", default=None)
    p.add_argument("--alpha", default=None, help="norm-like exponent (rational)")
    p.add_argument("--matrix", default=None, help="mahalanobis a,b,c,d (rationals)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="lossleak", description=__doc__)
    top.add_argument("--config", default=None,
                     help="JSON file whose keys mirror the flags")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("construct", help="emit a payload file")
    _add_common(p)
    p.add_argument("--orientation", default="one", choices=("one", "zero"))
    p.add_argument("--encoding", default="pow3",
                   choices=("pow3", "rational", "decimal", "fpa"))
    p.add_argument("--digits", type=int, default=60)
    p.set_defaults(fn=cmd_construct)

    p = sub.add_parser("attack", help="run an end-to-end inference attack")
    _add_common(p)
    p.add_argument("--dataset", default="synthetic",
                   choices=("synthetic", "titanic", "iris", "satellite"))
    p.add_argument("--noise", default="worst-case",
                   choices=("none", "uniform", "worst-case", "adversarial"))
    p.add_argument("--margin", default="1/100")
    p.add_argument("--precision", default="apa", choices=("apa", "fpa"))
    p.add_argument("--block-size", type=int, default=None)
    p.add_argument("--orientation", default="one", choices=("one", "zero"))
    p.add_argument("--remote", default=None, help="host:port of a served oracle")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("verify", help="brute-force separability report")
    _add_common(p)
    p.add_argument("--orientation", default="one", choices=("one", "zero"))
    p.add_argument("--payload", default=None, help="payload JSON file to verify")
    p.add_argument("--uniform", action="store_true",
                   help="verify the neutral all-1/2 (or uniform-row) payload")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("oracle", help="serve the loss oracle")
    _add_common(p)
    p.add_argument("--dataset", default="synthetic",
                   choices=("synthetic", "titanic", "iris", "satellite"))
    p.add_argument("--noise", default="none",
                   choices=("none", "uniform", "worst-case", "adversarial"))
    p.add_argument("--margin", default="1/100")
    p.add_argument("--precision", default="apa", choices=("apa", "fpa"))
    p.add_argument("--max-queries", type=int, default=None)
    p.add_argument("--transport", default="stdio", choices=("stdio", "tcp"))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.set_defaults(fn=cmd_oracle)

    for name, fn in (("fig1", cmd_fig1), ("fig2", cmd_fig2)):
        p = sub.add_parser(name, help=f"run the {name} sweep, emit CSV")
        p.add_argument("--dataset", default="titanic",
                       choices=("synthetic", "titanic", "iris", "satellite"))
        p.add_argument("--datasets", default=None,
                       help="comma list for multi-dataset fig1 sweeps")
        p.add_argument("--loss", default=None, help="comma list of losses")
        p.add_argument("--tau", default=None, help="comma list of rationals")
        p.add_argument("--trials", type=int, default=100)
        p.add_argument("--accuracy-target", default="1")
        p.add_argument("--block-size", default=None,
                       help="comma list of block sizes (fig2)")
        p.add_argument("--n", type=int, default=256)
        p.add_argument("--k", type=int, default=2)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-n", type=int, default=48)
        p.add_argument("--out", default=f"{name}.csv")
        p.add_argument("--svg", default=None)
        p.set_defaults(fn=fn)
    return top


def _merge_config(argv: list[str], parser: argparse.ArgumentParser):
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            conf = json.load(fh)
        supplied = {a.split("=")[0].lstrip("-").replace("-", "_")
                    for a in argv if a.startswith("--")}
        for key, val in conf.items():
            attr = key.replace("-", "_")
            if hasattr(args, attr) and attr not in supplied and attr != "config":
                setattr(args, attr, val)
    return args


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = _merge_config(sys.argv[1:] if argv is None else list(argv), parser)
    try:
        return args.fn(args)
    except tuple(EXIT_CODES) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CODES[type(e)]


if __name__ == "__main__":
    sys.exit(main())
