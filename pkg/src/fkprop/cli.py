"""Command-line front end.

Exit codes: 0 success, 1 a bound failed under satisfied hypotheses,
2 usage or configuration error, 3 infinite constants (reducible chain).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .auditor import (AUDITS, ConstantsCache, audit_cor_loc, audit_lsi, audit_prop41,
                      audit_prop_recurs, audit_rough_bounds, audit_thm_main2, audit_thm_mainp,
                      hypothesis_times, restrict_subset)
from .errors import FkpropError, InfiniteConstantError, NotPlannableError
from .inequalities import compute_constants
from .montecarlo import fk_estimate, markov_estimate
from .propagator import (markov_propagator, propagator_diagnostics, solve_backward,
                         stable_config)
from .scenarios import appendix_bounds_report, load_scenario

log = logging.getLogger("fkprop")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INFINITE = 0, 1, 2, 3


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# manifest and output
# --------------------------------------------------------------------------


@dataclass
class RunManifest:
    """What produced a set of output files.

    The hash covers command, scenario content, parameters, seed and tool
    version.  Output directory and wall-clock are recorded but not hashed,
    so reruns produce byte-identical reports.
    """

    command: str
    scenario: str | None
    scenario_sha256: str | None
    params: dict
    seed: int | None
    out_dir: str
    version: str = __version__
    wall_clock: float = field(default_factory=time.time)

    @property
    def digest(self) -> str:
        key = {"command": self.command, "scenario_sha256": self.scenario_sha256,
               "params": self.params, "seed": self.seed, "version": self.version}
        blob = json.dumps(key, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["hash"] = self.digest
        return d


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return _finite(obj)


class Outputs:
    def __init__(self, manifest: RunManifest):
        self.manifest = manifest
        self.dir = Path(manifest.out_dir)
        self.written: list[str] = []

    def json(self, name: str, doc: dict) -> None:
        doc = {"manifest": self.manifest.digest, **_clean(doc)}
        atomic_write(self.dir / name, _dump(doc))
        self.written.append(name)

    def text(self, name: str, body: str) -> None:
        atomic_write(self.dir / name, body)
        self.written.append(name)

    def close(self) -> None:
        doc = self.manifest.as_dict()
        doc["files"] = self.written
        atomic_write(self.dir / "manifest.json", _dump(_clean(doc)))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _load(args):
    if not args.scenario:
        raise UsageError("--scenario is required")
    path = Path(args.scenario)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read scenario {path}: {exc.strerror}") from None
    sc = load_scenario(text, {"lambda": getattr(args, "lam", None), "step": args.step})
    return sc, hashlib.sha256(text.encode()).hexdigest()


def _params(args, names):
    return {k: getattr(args, k) for k in names if getattr(args, k, None) is not None}


def _outputs(args, scenario_hash, params) -> Outputs:
    return Outputs(RunManifest(args.command, args.scenario, scenario_hash, params,
                               getattr(args, "seed", None), args.out))


def _time(args, name, default):
    v = getattr(args, name)
    return default if v is None else v


def cmd_propagate(args) -> int:
    sc, digest = _load(args)
    s = _time(args, "s", sc.grid.t_start)
    t = _time(args, "t", sc.grid.t_end)
    out = _outputs(args, digest, _params(args, ("s", "t", "step", "lam")))
    cfg = stable_config(sc, s, t)
    if cfg.step != sc.solver.step:
        log.warning("solver step reduced to %.3g by the stability guard", cfg.step)
    q = solve_backward(sc, s, t, cfg)
    p = markov_propagator(sc, s, t, cfg)
    out.text("q.csv", q.to_csv(out.manifest.digest))
    out.text("p.csv", p.to_csv(out.manifest.digest))
    diag = propagator_diagnostics(sc, s, t, cfg)
    out.json("diagnostics.json", {"s": s, "t": t, "step": cfg.step, **diag.as_dict(),
                                  "worst": diag.worst()})
    out.close()
    print(f"propagate s={s:g} t={t:g}: worst diagnostic {diag.worst():.3e}")
    return EXIT_OK


def cmd_constants(args) -> int:
    sc, digest = _load(args)
    out = _outputs(args, digest, _params(args, ("step", "lam", "lsi")))
    rep = compute_constants(sc, sc.grid.knots, lsi=args.lsi)
    out.text("constants.csv", rep.to_csv(out.manifest.digest))
    out.json("constants.json", rep.to_json())
    out.close()
    if rep.any_infinite and not args.allow_infinite:
        print("infinite constants (reducible chain); pass --allow-infinite to accept",
              file=sys.stderr)
        return EXIT_INFINITE
    print(f"constants: {len(rep.times)} times written")
    return EXIT_OK


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError("missing " + ", ".join("--" + n for n in missing))


def cmd_audit(args) -> int:
    sc, digest = _load(args)
    th = args.theorem
    t = _time(args, "t", sc.grid.t_end)
    params = _params(args, ("theorem", "s", "t", "p", "q", "alpha", "beta", "gamma", "kappa",
                            "step", "lam", "seed"))
    target = sc
    if th == "cor_loc":
        if sc.subset is None:
            raise UsageError("cor_loc needs a scenario with a 'subset'")
        target = restrict_subset(sc, sc.subset).scenario
    if th not in ("rough", "lsi"):
        cache = ConstantsCache(target)
        C = cache.get(hypothesis_times(target, t))["C"]
        if np.any(np.isinf(C)) and not args.allow_infinite:
            print("infinite constants on [0, t]; pass --allow-infinite to audit anyway",
                  file=sys.stderr)
            return EXIT_INFINITE
    seed = args.seed or 0
    if th == "mainp":
        _require(args, "p")
        rep = audit_thm_mainp(sc, args.p, t, seed=seed, cache=cache)
    elif th == "recurs":
        _require(args, "p")
        rep = audit_prop_recurs(sc, args.p, t, seed=seed, cache=cache)
    elif th == "main2":
        _require(args, "p", "alpha", "beta")
        rep = audit_thm_main2(sc, args.p, args.alpha, args.beta, t, seed=seed, cache=cache)
    elif th == "prop41":
        _require(args, "p", "gamma", "kappa")
        rep = audit_prop41(sc, args.p, args.gamma, args.kappa, t, seed=seed, cache=cache)
    elif th == "lsi":
        _require(args, "p", "q")
        rep = audit_lsi(sc, args.p, args.q, _time(args, "s", 0.0), t, seed=seed)
    elif th == "cor_loc":
        _require(args, "p", "alpha", "beta")
        rep = audit_cor_loc(sc, sc.subset, args.p, args.alpha, args.beta, t, seed=seed)
    else:
        rep = audit_rough_bounds(sc, _time(args, "s", 0.0), t, seed=seed)
    out = _outputs(args, digest, params)
    out.text(f"audit_{th}.csv", rep.to_csv(out.manifest.digest))
    atomic_write(out.dir / f"audit_{th}.json", rep.to_json(out.manifest.digest) + "\n")
    out.written.append(f"audit_{th}.json")
    out.close()
    summ = rep.summary()
    print(f"audit {th}: {summ['rows']} rows, {summ['failed']} failed, "
          f"{summ['vacuous']} vacuous")
    if summ["vacuous"]:
        print(f"warning: {summ['vacuous']} rows have unmet hypotheses (vacuously true)",
              file=sys.stderr)
    return EXIT_FAIL if rep.failures else EXIT_OK


def parse_function(spec: str, n: int) -> np.ndarray:
    """``ones``, ``indicator:k``, ``identity`` or comma-separated values."""
    spec = spec.strip()
    if spec == "ones":
        return np.ones(n)
    if spec == "identity":
        return np.arange(n, dtype=float)
    if spec.startswith("indicator:"):
        k = int(spec.split(":", 1)[1])
        if not 0 <= k < n:
            raise UsageError(f"indicator state {k} outside 0..{n - 1}")
        return np.eye(n)[k]
    try:
        vals = np.array([float(v) for v in spec.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse function {spec!r}") from None
    if vals.size != n:
        raise UsageError(f"function needs {n} values, got {vals.size}")
    return vals


def cmd_mc(args) -> int:
    sc, digest = _load(args)
    s = _time(args, "s", sc.grid.t_start)
    t = _time(args, "t", sc.grid.t_end)
    f = parse_function(args.f, sc.n_states)
    x = args.x
    if not 0 <= x < sc.n_states:
        raise UsageError(f"--x {x} outside 0..{sc.n_states - 1}")
    seed = args.seed or 0
    out = _outputs(args, digest, _params(args, ("s", "t", "x", "f", "n_paths", "markov",
                                                "step", "lam")))
    cfg = stable_config(sc, s, t)
    if args.markov:
        res = markov_estimate(sc, s, x, t, f, args.n_paths, seed)
        ref = float((markov_propagator(sc, s, t, cfg).entries @ f)[x])
    else:
        res = fk_estimate(sc, s, x, t, f, args.n_paths, seed)
        ref = float((solve_backward(sc, s, t, cfg).entries @ f)[x])
    diff = res.mean - ref
    if res.std_error > 0:
        z = diff / res.std_error
    else:
        z = 0.0 if abs(diff) <= 1e-12 * max(1.0, abs(ref)) else math.copysign(math.inf, diff)
    out.json("mc.json", {"estimator": "markov" if args.markov else "feynman_kac", "s": s,
                         "t": t, "x": x, "f": f.tolist(), **res.as_dict(), "ode_reference": ref,
                         "z_score": z})
    out.close()
    print(f"mc: mean {res.mean:.10g} +- {res.std_error:.3g}, ODE {ref:.10g}, z = {z:.3f}")
    return EXIT_OK


def cmd_appendix(args) -> int:
    n = args.n
    if n < 2:
        raise UsageError("appendix needs n >= 2")
    out = _outputs(args, None, _params(args, ("n", "eps", "omega")))
    times = np.linspace(0.0, 2 * math.pi / args.omega, 16)
    reports = [appendix_bounds_report(n, float(t), args.eps, args.omega) for t in times]
    lines = [f"# manifest={out.manifest.digest}", "t,check,measured,bound,passed,note"]
    for r in reports:
        for c in r.checks:
            lines.append(",".join([format(r.t, ".17g"), c.name, format(c.measured, ".17g"),
                                   format(c.bound, ".17g"), str(c.passed), c.note]))
    out.text("appendix.csv", "\n".join(lines) + "\n")
    out.json("appendix.json", {"n": n, "eps": args.eps, "omega": args.omega,
                               "reports": [r.as_dict() for r in reports]})
    out.close()
    if n < 4:
        print(f"notice: lower bound on C skipped for n={n} (requires n >= 4)")
    ok = all(r.ok for r in reports)
    print(f"appendix n={n}: {'pass' if ok else 'FAIL'} at {len(reports)} times")
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", metavar="PATH", help="scenario config (JSON)")
    common.add_argument("--out", default="fkprop_out", metavar="DIR", help="output directory")
    common.add_argument("--step", type=float, help="override the solver step")
    common.add_argument("--lambda", dest="lam", type=float, help="override with a constant speed")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--allow-infinite", action="store_true",
                        help="accept infinite constants instead of exiting with 3")
    common.add_argument("-v", "--verbose", action="store_true")

    times = argparse.ArgumentParser(add_help=False)
    times.add_argument("--s", type=float, help="start time")
    times.add_argument("--t", type=float, help="end time")

    ap = argparse.ArgumentParser(prog="fkprop", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"fkprop {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propagate", parents=[common, times],
                       help="solve for q_{s,t} and p_{s,t} with diagnostics")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("constants", parents=[common], help="C, A, B (and LSI) on the grid")
    p.add_argument("--lsi", action="store_true", help="also estimate the log-Sobolev constant")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("audit", parents=[common, times], help="audit one bound")
    p.add_argument("theorem", choices=sorted(AUDITS))
    for name in ("p", "q", "alpha", "beta", "gamma", "kappa"):
        p.add_argument(f"--{name}", type=float)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("mc", parents=[common, times], help="Monte Carlo estimate vs ODE")
    p.add_argument("--x", type=int, default=0, help="start state index")
    p.add_argument("--f", default="identity",
                   help="ones | identity | indicator:k | comma-separated values")
    p.add_argument("--n-paths", type=_positive_int, default=100_000)
    p.add_argument("--markov", action="store_true", help="estimate p_{s,t} f instead")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("appendix", parents=[common], help="endpoint-chain bound checks")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--omega", type=float, default=1.0)
    p.set_defaults(func=cmd_appendix)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfiniteConstantError, NotPlannableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFINITE
    except FkpropError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
