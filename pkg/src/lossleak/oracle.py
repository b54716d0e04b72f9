"""The data curator: holds private labels, answers loss queries with bounded
noise under a chosen precision model, enforces a query budget, and speaks a
newline-delimited JSON protocol over stdio or TCP.

Noise contract: every returned value satisfies |ell - f(sigma*, theta)| <
tau + (oracle evaluation budget).  The transcript is fully determined by
(config, seed, payload sequence); nothing but evaluate()'s arithmetic ever
touches the labels, and serialized configs exclude them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
import socket
import socketserver
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .attack import ConstructedPayload, payload_from_json, payload_to_json
from .bignum import BigReal, FpaFormat, FpaValue, decimal_str, round_to_fpa
from .bignum.real import _as_fraction, _pow2
from .errors import (
    BudgetExhausted,
    MalformedPayload,
    ParseError,
    TooLarge,
    UnknownClass,
)
from .losses import (
    LabelVector,
    LossSpec,
    enumerate_labelings,
    eval_in_fpa,
    loss_value,
    payload_length,
)

__all__ = [
    "NoiseSpec",
    "PrecisionSpec",
    "OracleConfig",
    "QueryRecord",
    "Oracle",
    "load_labels",
    "synthetic_labels",
    "dataset_labels",
    "DATASETS",
    "serve",
    "handle_request",
    "OracleClient",
]

ADVERSARIAL_CAP = 3 ** 8


@dataclass(frozen=True)
class NoiseSpec:
    """none | uniform(seed) | worst-case(margin, sign seeded) |
    adversarial (sign pushed toward the nearest competing labeling)."""

    kind: str = "none"
    seed: int = 0
    margin: Fraction = Fraction(1, 100)

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "worst-case", "adversarial"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "margin", _as_fraction(self.margin))
        if not 0 < self.margin < 1:
            raise ValueError("margin must be in (0, 1)")


@dataclass(frozen=True)
class PrecisionSpec:
    """apa(err budget) or fpa(format)."""

    kind: str = "apa"
    err_budget: Fraction = Fraction(1, 1 << 64)
    fmt: FpaFormat | None = None

    def __post_init__(self):
        if self.kind not in ("apa", "fpa"):
            raise ValueError("precision kind must be 'apa' or 'fpa'")
        if self.kind == "fpa" and self.fmt is None:
            object.__setattr__(self, "fmt", FpaFormat.ieee754_double())
        object.__setattr__(self, "err_budget", _as_fraction(self.err_budget))


@dataclass(frozen=True)
class OracleConfig:
    labels: LabelVector
    loss: LossSpec
    tau: Fraction | None = None
    noise: NoiseSpec = NoiseSpec()
    precision: PrecisionSpec = PrecisionSpec()
    max_queries: int | None = None

    def __post_init__(self):
        if self.tau is not None:
            object.__setattr__(self, "tau", _as_fraction(self.tau))
        if self.noise.kind != "none" and self.tau is None:
            raise ValueError("a noise model needs a tau bound")

    def public_json(self) -> dict:
        """Config as exposed over the wire: everything but the labels."""
        d = {"loss": {"family": self.loss.family, "k_classes": self.loss.k_classes},
             "tau": str(self.tau) if self.tau is not None else None,
             "noise": self.noise.kind,
             "precision": self.precision.kind,
             "max_queries": self.max_queries,
             "n": self.labels.n}
        return d


@dataclass(frozen=True)
class QueryRecord:
    index: int
    payload_digest: str
    loss_value: str
    noise: str
    timestamp: float


def _digest(payload) -> str:
    if isinstance(payload, ConstructedPayload):
        try:
            blob = json.dumps(payload_to_json(payload, "pow3"), sort_keys=True)
        except ValueError:
            blob = repr(payload.payload)
    else:
        blob = repr(payload)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Oracle:
    """One curator instance; the query counter is the only mutable state."""

    def __init__(self, config: OracleConfig):
        self.config = config
        self.records: list[QueryRecord] = []
        self._rng = random.Random(config.noise.seed)

    @property
    def query_count(self) -> int:
        return len(self.records)

    # -- noise ---------------------------------------------------------------

    def _draw_noise(self, f_exact: BigReal, spec: LossSpec, sigma, payload) -> Fraction:
        cfg = self.config
        kind = cfg.noise.kind
        if kind == "none" or cfg.tau is None:
            return Fraction(0)
        tau = cfg.tau
        if kind == "uniform":
            u = Fraction(self._rng.getrandbits(64) + 1, (1 << 64) + 1)
            return tau * (2 * u - 1)
        mag = tau * (1 - cfg.noise.margin)
        if kind == "worst-case":
            return mag if self._rng.getrandbits(1) else -mag
        # adversarial: push toward the nearest other labeling's loss
        n, k = len(sigma), spec.k_classes
        if k ** n > ADVERSARIAL_CAP:
            raise TooLarge("adversarial noise brute-forces the competitor; K^N too big")
        eps = tau / 64
        best = None
        for other in enumerate_labelings(n, k):
            if other == tuple(sigma):
                continue
            v = loss_value(spec, other, payload, eps)
            d = abs(v.value - f_exact.value)
            if best is None or d < best[0]:
                best = (d, v.value)
        sign = 1 if best[1] >= f_exact.value else -1
        return sign * mag

    # -- evaluation ------------------------------------------------------------

    def _resolve(self, payload):
        """(spec, sigma, container) for a raw container or ConstructedPayload
        (whose live_block selects the slice of the hidden labels)."""
        cfg = self.config
        if isinstance(payload, ConstructedPayload):
            spec = payload.plan.loss
            if spec.family != cfg.loss.family or spec.k_classes != cfg.loss.k_classes:
                raise MalformedPayload(
                    f"payload loss {spec.family}/K={spec.k_classes} does not match "
                    f"the oracle's {cfg.loss.family}/K={cfg.loss.k_classes}")
            if payload.live_block is not None:
                lo, hi = payload.live_block
                if not (0 <= lo < hi <= cfg.labels.n):
                    raise MalformedPayload("live block outside the hidden vector")
                sigma = cfg.labels.labels[lo:hi]
            else:
                if payload.n != cfg.labels.n:
                    raise MalformedPayload(
                        f"payload length {payload.n} != dataset length {cfg.labels.n}")
                sigma = cfg.labels.labels
            return spec, sigma, payload.payload
        if payload_length(payload) != cfg.labels.n:
            raise MalformedPayload("payload length does not match the dataset")
        return cfg.loss, cfg.labels.labels, payload

    def evaluate(self, payload):
        """One noisy loss query; BigReal in apa mode, FpaValue in fpa mode."""
        cfg = self.config
        if cfg.max_queries is not None and self.query_count >= cfg.max_queries:
            raise BudgetExhausted(f"query budget {cfg.max_queries} is spent")
        spec, sigma, container = self._resolve(payload)
        if cfg.precision.kind == "apa":
            eps = cfg.precision.err_budget
            if cfg.tau is not None:
                eps = min(eps, cfg.tau / _pow2(40))
            f = loss_value(spec, sigma, container, eps)
            noise = self._draw_noise(f, spec, sigma, container)
            ell = BigReal(f.value + noise, f.err)
            self._record(payload, decimal_str(ell, 40), str(noise))
            return ell
        # fpa: evaluate in the format, then add noise and re-round
        fv = eval_in_fpa(spec, sigma, container, cfg.precision.fmt)
        if fv.overflow or (fv.underflow and fv.zero):
            self._record(payload, "<flagged>", "0")
            return fv
        f_frac = fv.to_fraction()
        noise = self._draw_noise(BigReal.exact(f_frac), spec, sigma, container)
        noise_r = round_to_fpa(noise, cfg.precision.fmt)
        total = f_frac + (Fraction(0) if noise_r.flagged and noise_r.zero
                          else noise_r.to_fraction())
        out = round_to_fpa(total, cfg.precision.fmt)
        self._record(payload, repr(out.to_float()), str(noise))
        return out

    def evaluate_full(self, cp: ConstructedPayload):
        """Evaluate a multi-query payload over the *full* hidden vector with
        its neutral entries in place (normalizer N), for composition tests."""
        cfg = self.config
        container = cp.full_payload()
        eps = cfg.precision.err_budget
        return loss_value(cp.plan.loss, cfg.labels.labels, container, eps)

    def _record(self, payload, value_str: str, noise_str: str):
        self.records.append(QueryRecord(
            index=len(self.records), payload_digest=_digest(payload),
            loss_value=value_str, noise=noise_str, timestamp=time.time()))


# ---------------------------------------------------------------------------
# labels: CSV ingestion, fixtures, synthetic
# ---------------------------------------------------------------------------

def load_labels(source, label_column: str, class_map: dict[str, int] | None = None,
                k_classes: int | None = None) -> LabelVector:
    """Read a label column from CSV (header required; RFC-4180 style).

    Classes map through class_map when given, else lexicographically.
    Raises ParseError for structural problems, UnknownClass when the values
    do not fit the declared class set.
    """
    try:
        if hasattr(source, "read"):
            rows = list(csv.DictReader(source))
        else:
            with open(source, newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
    except (OSError, csv.Error) as e:
        raise ParseError(str(e)) from e
    if not rows:
        raise ParseError("no data rows")
    if label_column not in rows[0] or label_column is None:
        raise ParseError(f"column {label_column!r} not found")
    raw = []
    for r in rows:
        v = r.get(label_column)
        if v is None:
            raise ParseError("ragged row: missing label value")
        raw.append(v)
    if class_map is None:
        classes = sorted(set(raw))
        if k_classes is not None and len(classes) > k_classes:
            raise UnknownClass(
                f"{len(classes)} distinct values exceed the declared K={k_classes}")
        class_map = {c: i for i, c in enumerate(classes)}
    labels = []
    for v in raw:
        if v not in class_map:
            raise UnknownClass(f"value {v!r} has no class mapping")
        labels.append(class_map[v])
    k = k_classes if k_classes is not None else max(class_map.values()) + 1
    return LabelVector(tuple(labels), k)


def synthetic_labels(seed: int, n: int, k: int) -> LabelVector:
    rng = random.Random(seed)
    return LabelVector(tuple(rng.randrange(k) for _ in range(n)), k)


#: name -> (filename, label column, K)
DATASETS = {
    "titanic": ("titanic.csv", "label", 2),
    "iris": ("iris.csv", "label", 3),
    "satellite": ("satellite.csv", "label", 6),
}


def dataset_labels(name: str) -> LabelVector:
    """Label-only fixtures with the real datasets' sizes and class counts."""
    if name not in DATASETS:
        raise ParseError(f"unknown dataset {name!r}; have {sorted(DATASETS)}")
    fname, col, k = DATASETS[name]
    from importlib.resources import files

    path = files("lossleak.data").joinpath(fname)
    with path.open("r", encoding="utf-8") as fh:
        return load_labels(fh, col, k_classes=k)


# ---------------------------------------------------------------------------
# wire protocol: newline-delimited JSON
# ---------------------------------------------------------------------------

def _digits_for(budget: Fraction) -> int:
    d = 1
    while Fraction(1, 10 ** d) > budget / 4 and d < 4000:
        d += 1
    return d


def _spec_matches(req_loss: dict, spec: LossSpec) -> bool:
    return (req_loss.get("family") == spec.family
            and req_loss.get("k_classes", 2) == spec.k_classes)


def handle_request(oracle: Oracle, line: str) -> dict:
    """One request line -> one response dict; every error stays in-band."""
    try:
        req = json.loads(line)
    except json.JSONDecodeError:
        return {"id": None, "ok": False, "code": "malformed"}
    rid = req.get("id")
    if req.get("op") != "evaluate":
        return {"id": rid, "ok": False, "code": "unsupported_op"}
    if not isinstance(req.get("loss"), dict) or not _spec_matches(
            req["loss"], oracle.config.loss):
        return {"id": rid, "ok": False, "code": "loss_mismatch"}
    try:
        payload = payload_from_json(req["payload"])
    except Exception:
        return {"id": rid, "ok": False, "code": "malformed_payload"}
    try:
        out = oracle.evaluate(payload)
    except BudgetExhausted:
        return {"id": rid, "ok": False, "code": "budget_exhausted"}
    except MalformedPayload:
        return {"id": rid, "ok": False, "code": "malformed_payload"}
    idx = oracle.query_count - 1
    if isinstance(out, FpaValue):
        if out.overflow:
            return {"id": rid, "ok": False, "code": "overflow"}
        if out.underflow and out.zero:
            return {"id": rid, "ok": False, "code": "underflow"}
        return {"id": rid, "ok": True, "loss_value": repr(out.to_float()),
                "digits": 17, "query_index": idx}
    digits = _digits_for(oracle.config.precision.err_budget)
    return {"id": rid, "ok": True, "loss_value": decimal_str(out, digits),
            "digits": digits, "query_index": idx}


def serve(config: OracleConfig, transport="stdio", host: str = "127.0.0.1",
          port: int = 0, ready=None):
    """Run the oracle until the transport closes.

    transport="stdio" reads requests from stdin; transport="tcp" accepts one
    connection at a time on (host, port).  ``ready`` (if given) is called
    with the bound (host, port) once listening -- handy for tests.
    """
    oracle = Oracle(config)
    if transport == "stdio":
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            sys.stdout.write(json.dumps(handle_request(oracle, line)) + "\n")
            sys.stdout.flush()
        return oracle

    if transport != "tcp":
        raise ValueError("transport must be 'stdio' or 'tcp'")

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode().strip()
                if not line:
                    continue
                resp = json.dumps(handle_request(oracle, line)) + "\n"
                self.wfile.write(resp.encode())
                self.wfile.flush()

    class Server(socketserver.TCPServer):
        allow_reuse_address = True

    with Server((host, port), Handler) as server:
        if ready is not None:
            ready(server.server_address)
        server.serve_forever()
    return oracle


class OracleClient:
    """Minimal line-protocol client used by the CLI and the tests."""

    def __init__(self, host: str, port: int):
        self._sock = socket.create_connection((host, port))
        self._file = self._sock.makefile("rwb")
        self._next_id = 0

    def evaluate(self, cp: ConstructedPayload, encoding: str = "pow3",
                 digits: int = 60) -> dict:
        self._next_id += 1
        req = {"id": self._next_id, "op": "evaluate",
               "loss": {"family": cp.plan.loss.family,
                        "k_classes": cp.plan.loss.k_classes},
               "payload": payload_to_json(cp, encoding, digits=digits),
               "encoding": encoding}
        self._file.write((json.dumps(req) + "\n").encode())
        self._file.flush()
        line = self._file.readline()
        if not line:
            raise ConnectionError("oracle closed the connection")
        return json.loads(line)

    def close(self):
        try:
            self._file.close()
        finally:
            self._sock.close()
