"""Resumable command-line pipeline.

Stages write into ``<cache>/N<level>/`` and each artifact has a sidecar
``.meta.json`` recording the config slice it depends on and the sha256 of
its upstream artifacts.  A stage refuses to run on stale or missing inputs
and names the stage to re-run.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from flint import arb, ctx

from . import stats
from .numtheory import ArithContext, ClassDataStore, class_table, is_squarefree
from .rigor import from_decimal, to_decimal

log = logging.getLogger("maassverify")

CACHE_ENV = "MAASSVERIFY_CACHE"
STAGES = ("classdata", "testfunc", "trace", "spectrum", "verify", "hecke", "signs", "stats", "export")
VARIANTS = ("1", "lam", "lam2")


class StageError(RuntimeError):
    pass


@dataclass
class RunConfig:
    level: int = 5
    M: int = 40  # index-set bound: m <= M coprime to the level
    n_max: int = 40  # Hecke range
    D_max: int = 1_600_000
    prec: int = 128
    cache: str = ""
    parity: str = "even"  # even, odd or both
    dim: int | None = None
    # table and quadrature errors must sit well below the smallest Cholesky
    # pivots of Q(H) or the leading certified dimension collapses
    table_eps: float = 2.0**-100
    tol: float = 2.0**-106
    eps_max: float = 1.0
    trunc: int = 40  # sign detection truncation
    bins: int = 40
    out: str | None = None

    def validate(self):
        if self.level < 2 or not is_squarefree(self.level):
            raise ValueError(f"level must be squarefree and >= 2, got {self.level}")
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.n_max < self.M:
            raise ValueError("n_max must be >= M")
        if self.parity not in ("even", "odd", "both"):
            raise ValueError(f"bad parity {self.parity!r}")
        return self

    @property
    def parities(self):
        return ("even", "odd") if self.parity == "both" else (self.parity,)

    @property
    def root(self) -> Path:
        base = self.cache or os.environ.get(CACHE_ENV) or "maass_cache"
        return Path(base)

    @property
    def level_dir(self) -> Path:
        return self.root / f"N{self.level}"


# -- artifact plumbing -------------------------------------------------------


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: Path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f"{path.name}.tmp{os.getpid()}")
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


def meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_meta(path: Path, stage: str, params: dict, upstream: dict[str, Path]):
    write_json(
        meta_path(path),
        {
            "stage": stage,
            "params": params,
            "upstream": {k: sha256(p) for k, p in upstream.items()},
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        },
    )


def require(path: Path, stage: str, params: dict | None = None) -> dict:
    """Check an upstream artifact exists, is intact and matches ``params``."""
    mp = meta_path(path)
    if not path.exists() or not mp.exists():
        raise StageError(f"missing {path.name}; run `{stage}` first")
    meta = read_json(mp)
    for k, v in (params or {}).items():
        if meta["params"].get(k) != v:
            raise StageError(f"{path.name} was built with {k}={meta['params'].get(k)!r}, need {v!r}; re-run `{stage}`")
    for name, digest in meta.get("upstream", {}).items():
        up = Path(path.parent, name) if not os.path.isabs(name) else Path(name)
        if up.exists() and sha256(up) != digest:
            raise StageError(f"{path.name} is stale relative to {up.name}; re-run `{stage}`")
    return meta


def _paths(cfg: RunConfig) -> dict[str, Path]:
    d = cfg.level_dir
    return {
        "classdata": cfg.root / f"classes_{cfg.D_max}.csv",
        "testfunc": d / f"testfunc_M{cfg.M}.json",
        "trace": d / f"traces_M{cfg.M}.json",
        "spectrum": {p: d / f"spectrum_{p}.json" for p in ("even", "odd")},
        "forms": {p: d / f"forms_{p}.json" for p in ("even", "odd")},
    }


def _ball(x: arb) -> dict:
    m, r = to_decimal(x)
    return {"mid": m, "rad": r}


def _unball(doc) -> arb:
    return from_decimal(doc["mid"], doc["rad"])


# -- stages ------------------------------------------------------------------


def _table_range(cfg: RunConfig) -> tuple[int, int]:
    """Discriminant range the traces need.  The optimizer sizes X so that
    n <= M^2 stays within D_max; Hecke traces reach n_max^2."""
    top = max(cfg.M, cfg.n_max) ** 2
    return -(4 * top + 100), math.ceil(cfg.D_max * top / cfg.M**2)


def stage_classdata(cfg: RunConfig, dmin: int | None = None) -> Path:
    path = _paths(cfg)["classdata"]
    lo, hi = _table_range(cfg)
    dmin = lo if dmin is None else dmin
    params = {"D_max": cfg.D_max, "D_min": dmin, "D_table": hi}
    if path.exists() and meta_path(path).exists() and read_json(meta_path(path))["params"] == params:
        log.info("class data cached at %s", path)
        return path
    t0 = time.time()
    store = class_table(hi, dmin=dmin)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    store.write_csv(tmp)
    os.replace(tmp, path)
    write_meta(path, "classdata", params, {})
    log.info("class data: %d discriminants in %.1fs", len(store), time.time() - t0)
    return path


def _testfunc_params(cfg: RunConfig) -> dict:
    return {"level": cfg.level, "M": cfg.M, "D_max": cfg.D_max}


def stage_testfunc(cfg: RunConfig) -> Path:
    from .testfunc import build_package, optimize_params, save_package

    ps = _paths(cfg)
    require(ps["classdata"], "classdata", {"D_max": cfg.D_max})
    # the lambda^2 variant needs d >= 5 for enough smoothness
    p = optimize_params(cfg.level, cfg.M, cfg.D_max, d_range=range(5, 101))
    if cfg.prec < p.two_B:
        raise ValueError(f"precision {cfg.prec} below 2B = {p.two_B:.1f}")
    X = f"{p.X:.6f}"
    pkg = build_package(X, p.d, p.B, VARIANTS)
    path = ps["testfunc"]
    path.parent.mkdir(parents=True, exist_ok=True)
    save_package(pkg, path)
    params = {**_testfunc_params(cfg), "X": X, "d": p.d, "R_max": repr(p.R_max), "two_B": repr(p.two_B)}
    write_meta(path, "testfunc", params, {"../" + ps["classdata"].name: ps["classdata"]})
    log.info("test function: X=%s d=%d R_max=%.5f 2B=%.2f", X, p.d, p.R_max, p.two_B)
    return path


def _hecke_ns(cfg: RunConfig) -> list[int]:
    return [n for n in range(1, cfg.n_max + 1) if math.gcd(n, cfg.level) == 1]


def stage_trace(cfg: RunConfig, save_every: int = 50) -> Path:
    from .spectral import index_set, needed_traces
    from .testfunc import load_package
    from .traceformula import TraceEngine, TraceTable

    ps = _paths(cfg)
    tmeta = require(ps["testfunc"], "testfunc", _testfunc_params(cfg))
    cmeta = require(ps["classdata"], "classdata", {"D_max": cfg.D_max})
    lo, hi = _table_range(cfg)
    if cmeta["params"]["D_table"] < hi or cmeta["params"]["D_min"] > lo:
        raise StageError(f"class data covers [{cmeta['params']['D_min']}, {cmeta['params']['D_table']}], "
                         f"need [{lo}, {hi}]; re-run `classdata` with the same --nmax")
    pkg = load_package(ps["testfunc"])
    ms = index_set(cfg.M, cfg.level)
    need = sorted(needed_traces(ms, _hecke_ns(cfg)))
    path = ps["trace"]
    X, d = tmeta["params"]["X"], tmeta["params"]["d"]
    pid = sha256(ps["testfunc"])[:16]
    table = None
    if path.exists():
        table = TraceTable.load(path)
        if (table.N, table.X, table.d, table.package_id) != (cfg.level, X, d, pid):
            log.warning("trace cache does not match the test function; starting over")
            table = None
    table = table or TraceTable(cfg.level, X, d, pid)
    todo = [s * n for n in need for s in (1, -1) if not table.has(s * n, VARIANTS)]
    log.info("traces: %d needed, %d missing", 2 * len(need), len(todo))
    if todo:
        store = ClassDataStore.read_csv(ps["classdata"])
        eng = TraceEngine(ArithContext(cfg.level), pkg, store, VARIANTS, n_max=max(need), tol=cfg.tol)
        eng.ensure_table(cfg.table_eps)
        for i, n in enumerate(todo, 1):
            table.get_or_compute(n, eng)
            if i % save_every == 0:
                table.save(path)
                log.info("  %d/%d", i, len(todo))
    table.save(path)
    write_meta(path, "trace", {**_testfunc_params(cfg), "n_max": cfg.n_max}, {ps["testfunc"].name: ps["testfunc"]})
    return path


def _load_Qs(cfg: RunConfig, parity: str):
    from .spectral import assemble_Q, index_set
    from .traceformula import TraceTable

    ps = _paths(cfg)
    require(ps["trace"], "trace", {**_testfunc_params(cfg)})
    table = TraceTable.load(ps["trace"])
    ms = index_set(cfg.M, cfg.level)
    Qs = [assemble_Q(ms, lambda n, v=v: table.parity(n, parity, v)) for v in VARIANTS]
    return table, ms, Qs


def stage_spectrum(cfg: RunConfig) -> list[Path]:
    from .spectral import (VerificationInconclusive, leading_pd_dim, rayleigh_epsilon, solve_pencil,
                           truncate)

    ps = _paths(cfg)
    tmeta = require(ps["testfunc"], "testfunc", _testfunc_params(cfg))
    lam_max = 0.25 + float(tmeta["params"]["R_max"]) ** 2
    out = []
    for parity in cfg.parities:
        _, ms, Qs = _load_Qs(cfg, parity)
        k = leading_pd_dim(Qs[0])
        if cfg.dim is not None:
            k = min(k, cfg.dim)
        if k < 1:
            raise StageError(f"Q(H) is not certified positive definite for {parity} parity; increase precision")
        Qk = [truncate(Q, k) for Q in Qs]
        cands = solve_pencil(Qk[0], Qk[1], parity, lam_max=lam_max)
        rows = []
        for f in cands:
            try:
                ce = rayleigh_epsilon(f.c, *Qk, parity)
            except VerificationInconclusive:
                continue
            if ce.eps.upper() <= cfg.eps_max and (ce.lam + ce.eps).upper() <= lam_max:
                rows.append({"lambda": _ball(ce.lam), "epsilon": _ball(ce.eps), "QH": _ball(ce.QH),
                             "c": [_ball(x) for x in ce.c]})
        rows.sort(key=lambda r: float(_unball(r["lambda"])))
        path = ps["spectrum"][parity]
        write_json(path, {"parity": parity, "dim": k, "ms": ms[:k], "intervals": rows})
        write_meta(path, "spectrum", {**_testfunc_params(cfg), "parity": parity, "dim": cfg.dim},
                   {ps["trace"].name: ps["trace"]})
        log.info("%s: dim %d, %d candidates, %d intervals", parity, k, len(cands), len(rows))
        out.append(path)
    return out


def _certs(doc, parity):
    from .spectral import Certified

    return [Certified(_unball(r["lambda"]), _unball(r["epsilon"]), [_unball(x) for x in r["c"]], _unball(r["QH"]), parity)
            for r in doc["intervals"]]


def stage_verify(cfg: RunConfig) -> list[Path]:
    from .spectral import VerifiedForm, completeness, save_forms
    from .testfunc import eval_h, load_package

    ps = _paths(cfg)
    require(ps["testfunc"], "testfunc", _testfunc_params(cfg))
    pkg = load_package(ps["testfunc"])
    out = []
    for parity in cfg.parities:
        sp = ps["spectrum"][parity]
        require(sp, "spectrum", {**_testfunc_params(cfg), "parity": parity})
        table, _, _ = _load_Qs(cfg, parity)
        certs = _certs(read_json(sp), parity)
        res = completeness([(c.lam, c.eps) for c in certs], table.parity(1, parity, "1"), lambda lam: eval_h(pkg, lam=lam))
        forms = [
            VerifiedForm(cfg.level, parity, arb(c.lam.mid(), c.eps.upper()), float(c.eps.upper()), res.deltas[i],
                         {1: arb(1)}, complete=i < res.complete_prefix)
            for i, c in enumerate(certs)
        ]
        path = ps["forms"][parity]
        save_forms(forms, path)
        write_meta(path, "verify", {**_testfunc_params(cfg), "parity": parity,
                                    "B_rem": _ball(res.B_rem), "lam_star": repr(res.lam_star)},
                   {sp.name: sp})
        log.info("%s: B_rem=%s lam*=%.4f complete prefix %d", parity, res.B_rem.str(5), res.lam_star, res.complete_prefix)
        out.append(path)
    return out


def stage_hecke(cfg: RunConfig) -> list[Path]:
    from .spectral import hecke_coeffs, load_forms, save_forms
    from .spectral import VerificationInconclusive

    ps = _paths(cfg)
    out = []
    for parity in cfg.parities:
        fp = ps["forms"][parity]
        meta = require(fp, "verify", {**_testfunc_params(cfg), "parity": parity})
        table, _, _ = _load_Qs(cfg, parity)
        sp = read_json(ps["spectrum"][parity])
        certs = _certs(sp, parity)
        forms = load_forms(fp)
        t = lambda n: table.parity(n, parity, "1")  # noqa: E731
        for f, ce in zip(forms, certs):
            if f.delta is None:
                continue
            try:
                f.coeffs = hecke_coeffs(ce, f.delta, sp["ms"], _hecke_ns(cfg), t)
            except VerificationInconclusive as e:
                log.warning("lambda=%s: %s", f.lam.str(8), e)
        save_forms(forms, fp)
        write_meta(fp, "hecke", {**meta["params"], "n_max": cfg.n_max}, {ps["spectrum"][parity].name: ps["spectrum"][parity]})
        out.append(fp)
    return out


def _coprime_primes(N: int, upto: int) -> list[int]:
    return [p for p in range(2, upto + 1) if N % p and all(p % q for q in range(2, math.isqrt(p) + 1))]


def stage_signs(cfg: RunConfig) -> list[Path]:
    from .fricke import detect_form_signs
    from .spectral import load_forms, save_forms

    ps = _paths(cfg)
    out = []
    for parity in cfg.parities:
        fp = ps["forms"][parity]
        meta = require(fp, "hecke", {**_testfunc_params(cfg), "parity": parity})
        if meta["stage"] != "hecke" and meta["stage"] != "signs":
            raise StageError(f"{fp.name} has no Hecke eigenvalues; run `hecke` first")
        forms = load_forms(fp)
        for f in forms:
            if len(f.coeffs) <= 1:
                continue
            if any(p not in f.coeffs for p in _coprime_primes(cfg.level, cfg.trunc)):
                raise StageError(f"need a(n) up to {cfg.trunc}; re-run `hecke` with --nmax >= {cfg.trunc}")
            res = detect_form_signs(f, cfg.trunc)
            log.info("lambda=%s signs=%s w=%s rigorous=%s margins=%s", f.lam.str(8), f.signs, f.fricke_w,
                     f.signs_rigorous, res.margins)
        save_forms(forms, fp)
        write_meta(fp, "signs", {**meta["params"], "trunc": cfg.trunc}, {})
        out.append(fp)
    return out


def _all_forms(cfg: RunConfig):
    from .spectral import load_forms

    forms = []
    for parity in cfg.parities:
        fp = _paths(cfg)["forms"][parity]
        if fp.exists():
            forms += load_forms(fp)
    return sorted(forms, key=lambda f: float(f.lam.mid()))


def stage_export(cfg: RunConfig) -> Path | None:
    docs = [f.to_json() for f in _all_forms(cfg)]
    if cfg.out:
        write_json(Path(cfg.out), docs)
        return Path(cfg.out)
    json.dump(docs, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")
    return None


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def write_stats(forms, outdir: Path, bins: int) -> list[Path]:
    outdir = Path(outdir)
    paths = []
    rows = []
    for f in forms:
        r = stats.ramanujan_row(f)
        rows.append([f.level, f.parity, to_decimal(f.lam)[0], r["p"], r["excess_mid"], r["excess_rad"], r["verdict"]])
    paths.append(outdir / "ramanujan.csv")
    _write_csv(paths[-1], ["level", "parity", "lambda", "p", "excess_mid", "excess_rad", "verdict"], rows)

    for tag, p in (("all", None), ("p2", 2)):
        edges, counts = stats.histogram(stats.ap_values(forms, p), bins)
        paths.append(outdir / f"hist_{tag}.csv")
        _write_csv(paths[-1], ["lo", "hi", "count"], [[edges[i], edges[i + 1], c] for i, c in enumerate(counts)])
    for p, tag in ((stats.INF, "inf"), (2, "2")):
        curve = stats.density_curve(p)
        paths.append(outdir / f"density_{tag}.csv")
        _write_csv(paths[-1], ["x", "density"], curve.samples)

    paths.append(outdir / "spacing.csv")
    _write_csv(paths[-1], ["lambda", "parity", "nearest_gap"],
               [[r["lambda"], r["parity"], r["nearest_gap"]] for r in stats.spacing_report(forms)])
    return paths


def stage_stats(cfg: RunConfig, forms_file: str | None = None) -> list[Path]:
    from .spectral import load_forms

    if forms_file:
        try:
            forms = load_forms(forms_file)
        except (KeyError, TypeError, ValueError) as e:
            raise StageError(f"malformed forms file {forms_file}: {e}") from e
    else:
        forms = _all_forms(cfg)
    return write_stats(forms, Path(cfg.out) if cfg.out else cfg.level_dir / "stats", cfg.bins)


# -- argument handling -----------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maassverify", description="Rigorous Maass form verification pipeline")
    ap.add_argument("--config", help="JSON file of RunConfig fields")
    ap.add_argument("--cache", help=f"cache root (default ${CACHE_ENV} or ./maass_cache)")
    ap.add_argument("--prec", type=int, help="working precision in bits")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="stage", required=True)

    def common(p):
        p.add_argument("--level", type=int)
        p.add_argument("--forms", "-M", dest="M", type=int, help="index-set bound M")
        p.add_argument("--dmax", dest="D_max", type=int)
        p.add_argument("--parity", choices=("even", "odd", "both"))
        p.add_argument("--nmax", dest="n_max", type=int, help="Hecke range")

    p = sub.add_parser("classdata", help="class numbers, regulators and L(1) values")
    common(p)
    p.add_argument("--dmin", type=int)
    p = sub.add_parser("testfunc", help="choose X, d and build the test function")
    common(p)
    p = sub.add_parser("trace", help="trace formula values t(n)")
    common(p)
    p.add_argument("--tol", type=float)
    p = sub.add_parser("spectrum", help="pencil eigenvalues and Rayleigh intervals")
    common(p)
    p.add_argument("--dim", type=int)
    p.add_argument("--eps-max", dest="eps_max", type=float)
    p = sub.add_parser("verify", help="completeness and isolation")
    common(p)
    p = sub.add_parser("hecke", help="Hecke eigenvalues with eta bounds")
    common(p)
    p = sub.add_parser("signs", help="Atkin-Lehner signs and Fricke eigenvalue")
    common(p)
    p.add_argument("--trunc", type=int)
    p = sub.add_parser("stats", help="Ramanujan, Sato-Tate and spacing reports")
    common(p)
    p.add_argument("--bins", type=int)
    p.add_argument("--file", help="forms JSON (default: cached forms)")
    p.add_argument("--out")
    p = sub.add_parser("export", help="all verified forms as one JSON array")
    common(p)
    p.add_argument("--out")
    return ap


def make_config(args) -> RunConfig:
    """flags > config file > defaults"""
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    vals = {}
    if args.config:
        vals.update({k: v for k, v in read_json(args.config).items() if k in fields})
    vals.update({k: v for k, v in vars(args).items() if k in fields and v is not None})
    cfg = RunConfig(**vals)
    if "n_max" not in vals:
        cfg.n_max = max(cfg.n_max, cfg.M)
    return cfg.validate()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = make_config(args)
    except (ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    ctx.prec = cfg.prec
    try:
        if args.stage == "classdata":
            stage_classdata(cfg, args.dmin)
        elif args.stage == "stats":
            for p in stage_stats(cfg, args.file):
                print(p)
        else:
            fn = {"testfunc": stage_testfunc, "trace": stage_trace, "spectrum": stage_spectrum, "verify": stage_verify,
                  "hecke": stage_hecke, "signs": stage_signs, "export": stage_export}[args.stage]
            fn(cfg)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
