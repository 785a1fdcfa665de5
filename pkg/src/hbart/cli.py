"""``hbart`` command line: simulate, fit, predict, diagnose, cv, replay.

Every run writes ``manifest.json`` next to its outputs.  The manifest holds
the exact argument vector, so ``hbart replay DIR/manifest.json`` recreates
the same files byte for byte.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric or invariant failure.
Errors go to stderr as one line ``hbart: error: code=<n> kind=<kind> msg=<json string>``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, VarMeta, load_csv, load_like, make_cutpoints
from .diagnostics import (
    cv_kappa,
    energy_statistic,
    h_evidence,
    predictive_percentiles,
    write_activity,
    write_cv,
    write_hevidence,
    write_percentiles,
    write_trace,
)
from .priors import default_config, load_config_file
from .sampler import (
    PosteriorDraws,
    SamplerSettings,
    draws_at,
    predict,
    read_draws_csv,
    read_snapshot,
    run_chain,
    run_chains,
    write_draws_csv,
    write_snapshot,
)
from .sim import simulate_frame

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
TRUTH_COLUMNS = "f_true,s_true"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _add_sampler_flags(p, snapshot=True):
    p.add_argument("--niter", type=int, default=3000, help="total sweeps incl. burn-in (3000)")
    p.add_argument("--burnin", type=int, default=1000, help="burn-in sweeps (1000)")
    p.add_argument("--thin", type=int, default=1, help="keep every k-th sweep after burn-in (1)")
    p.add_argument("--seed", type=int, default=0, help="master seed (0)")
    p.add_argument("--max-cuts", type=int, default=100, help="cutpoints per continuous predictor")
    p.add_argument("--min-node", type=int, default=5, help="minimum rows per leaf (5)")
    if snapshot:
        p.add_argument("--snapshot-every", type=int, default=10,
                       help="store forests every k-th kept draw (10; 0 = none)")


def _add_prior_flags(p):
    p.add_argument("--model", choices=("hbart", "bart"), default="hbart",
                   help="hbart (variance trees) or bart (constant variance)")
    p.add_argument("--m", type=int, help="number of mean trees (200)")
    p.add_argument("--mprime", type=int, help="number of variance trees (40)")
    p.add_argument("--kappa", type=float, help="mean prior tightness (5)")
    p.add_argument("--nu", type=float, help="variance prior degrees of freedom (10)")
    p.add_argument("--lam", type=float, help="variance prior scale (default: var(y))")
    p.add_argument("--config", help="file of key=value prior settings; flags take precedence")


def _add_data_flags(p):
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--response", default="y", help="response column (y)")
    p.add_argument("--exclude", type=_csv_list, default=_csv_list(TRUTH_COLUMNS),
                   help=f"columns to ignore if present ({TRUTH_COLUMNS})")
    p.add_argument("--categorical", type=_csv_list, default=[],
                   help="columns to dummy-encode even if numeric")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hbart", description="Heteroscedastic BART: fit and check sum/product-of-trees models.")
    p.add_argument("--version", action="version", version=f"hbart {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("simulate", help="draw the one-predictor benchmark (train + test CSV)")
    s.add_argument("--n", type=int, default=500, help="training rows (500)")
    s.add_argument("--n-test", type=int, help="test rows (default: --n)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")

    f = sub.add_parser("fit", help="run the sampler and store draws and forest snapshots")
    _add_data_flags(f)
    f.add_argument("--eval", help="CSV of points at which to record f and s (default: training x)")
    _add_prior_flags(f)
    _add_sampler_flags(f)
    f.add_argument("--chains", type=int, default=1, help="independent chains, pooled (1)")
    f.add_argument("--out", required=True, help="output directory")

    q = sub.add_parser("predict", help="posterior summaries or predictive draws at new x")
    q.add_argument("--fit", required=True, help="directory written by `fit`")
    q.add_argument("--x", required=True, help="CSV holding the predictor columns")
    q.add_argument("--mode", choices=("mean_sd", "predictive", "plugin"), default="mean_sd")
    q.add_argument("--level", type=float, default=0.95, help="interval level for mean_sd (0.95)")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True, help="output CSV")

    d = sub.add_parser("diagnose", help="H-evidence, predictive percentiles, e-statistic, traces")
    d.add_argument("--fit", required=True, help="directory written by `fit`")
    d.add_argument("--heldout", help="held-out CSV (default: the fit's --eval file, else training data)")
    d.add_argument("--in-sample", action="store_true", help="use the training data for percentiles")
    ref = d.add_mutually_exclusive_group()
    ref.add_argument("--reference", help="directory of a `fit --model bart` run giving sigma-hat")
    ref.add_argument("--sigma-ref", type=float, help="reference sigma for H-evidence")
    d.add_argument("--gamma", type=float, default=0.9, help="H-evidence interval level (0.9)")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", help="output directory (default: FIT/diagnose)")

    c = sub.add_parser("cv", help="k-fold cross-validation of the e-statistic over kappa")
    _add_data_flags(c)
    c.add_argument("--kappa-grid", type=_float_list, default=[2.0, 5.0, 10.0],
                   help="comma-separated kappa values (2,5,10)")
    c.add_argument("--folds", type=int, default=5)
    c.add_argument("--model", choices=("hbart", "bart"), default="hbart")
    c.add_argument("--m", type=int)
    c.add_argument("--mprime", type=int)
    _add_sampler_flags(c, snapshot=False)
    c.add_argument("--jobs", type=int, default=1, help="parallel (kappa, fold) cells")
    c.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest", help="path to manifest.json")
    return p


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, argv: list[str], name="manifest.json", **extra):
    man = {"tool": "hbart", "version": __version__, "subcommand": command, "argv": list(argv)}
    man.update(extra)
    (out / name).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def _settings(a, snapshot_every=0) -> SamplerSettings:
    try:
        return SamplerSettings(n_iter=a.niter, burn_in=a.burnin, thin=a.thin, seed=a.seed,
                               min_node_size=a.min_node, snapshot_every=snapshot_every)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _settings_dict(st: SamplerSettings) -> dict:
    return {"n_iter": st.n_iter, "burn_in": st.burn_in, "thin": st.thin, "seed": st.seed,
            "min_node_size": st.min_node_size, "max_depth": st.max_depth,
            "move_probs": list(st.move_probs), "snapshot_every": st.snapshot_every}


def _columns(ds) -> list[dict]:
    return [{"name": n, "kind": m.kind, "parent": m.parent, "level": m.level}
            for n, m in zip(ds.names, ds.var_meta)]


def _meta_from(columns):
    names = [c["name"] for c in columns]
    meta = [VarMeta(c["kind"], c["parent"], c["level"]) for c in columns]
    return names, meta


def _r(v) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(a, argv):
    if a.n < 1 or (a.n_test is not None and a.n_test < 1):
        raise UsageError("--n and --n-test must be >= 1")
    out = _outdir(a.out)
    rng = np.random.default_rng(a.seed)
    files = {}
    for name, n in (("train", a.n), ("test", a.n if a.n_test is None else a.n_test)):
        cols = simulate_frame(n, rng)
        path = out / f"{name}.csv"
        with path.open("w", encoding="utf-8") as fh:
            fh.write("x,y,f_true,s_true\n")
            for i in range(n):
                fh.write(",".join(_r(cols[k][i]) for k in ("x", "y", "f_true", "s_true")) + "\n")
        files[name] = str(path)
    _write_manifest(out, "simulate", argv, seed=a.seed, files=files)
    print(f"wrote {files['train']} {files['test']}")


def _prior_for(ds, a, cfg=None):
    pinned = dict(cfg or {})
    for flag, key in (("m", "m"), ("mprime", "m_prime"), ("kappa", "kappa"),
                      ("nu", "nu"), ("lam", "lam")):
        v = getattr(a, flag, None)
        if v is not None:
            pinned[key] = v
    if a.model == "bart":
        pinned["m_prime"] = 0
    try:
        return default_config(ds, pinned=pinned)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_fit(a, argv):
    if a.chains < 1:
        raise UsageError("--chains must be >= 1")
    if a.max_cuts < 1:
        raise UsageError("--max-cuts must be >= 1")
    ds = load_csv(a.data, a.response, categorical=a.categorical, exclude=a.exclude)
    cfg = load_config_file(a.config) if a.config else {}
    prior = _prior_for(ds, a, cfg)
    grid = make_cutpoints(ds, a.max_cuts)
    eval_x = ds.x
    if a.eval:
        eval_x, _ = load_like(a.eval, ds.names, ds.var_meta)
    st = _settings(a, a.snapshot_every)
    if a.chains == 1:
        draws = run_chain(ds, grid, prior, st, eval_points=eval_x)
    else:
        draws = PosteriorDraws.pool(run_chains(ds, grid, prior, st, a.chains, eval_x,
                                               n_jobs=a.chains))
    out = _outdir(a.out)
    write_draws_csv(draws, out / "draws.csv")
    write_snapshot(draws, out / "snapshot.txt")
    write_activity(draws, out / "activity.csv", list(ds.names))
    with (out / "acceptance.csv").open("w", encoding="utf-8") as fh:
        fh.write("move,proposed,accepted,unusable,rate\n")
        for key, v in draws.acceptance.items():
            fh.write(f"{key},{v['proposed']},{v['accepted']},{v['unusable']},{v['rate']!r}\n")
    _write_manifest(out, "fit", argv, model=a.model, prior=prior.to_dict(),
                    settings=_settings_dict(st), chains=a.chains, max_cuts=a.max_cuts,
                    data=a.data, eval=a.eval, response=a.response, exclude=a.exclude,
                    columns=_columns(ds))
    print(f"kept {draws.n_draws} draws; wrote {out}")


def _load_fit(fitdir):
    fitdir = Path(fitdir)
    man = _read_manifest(fitdir)
    if man.get("subcommand") != "fit":
        raise DataError(f"{fitdir} does not hold a fit")
    draws = read_snapshot(fitdir / "snapshot.txt")
    return man, draws


def cmd_predict(a, argv):
    man, draws = _load_fit(a.fit)
    names, meta = _meta_from(man["columns"])
    x, _ = load_like(a.x, names, meta)
    rng = np.random.default_rng(a.seed)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    res = predict(draws, x, rng, mode=a.mode, level=a.level)
    with out.open("w", encoding="utf-8") as fh:
        if a.mode == "mean_sd":
            keys = ("f_mean", "f_lo", "f_hi", "s_mean", "s_lo", "s_hi")
            fh.write("xid," + ",".join(keys) + "\n")
            for i in range(x.shape[0]):
                fh.write(f"{i}," + ",".join(_r(res[k][i]) for k in keys) + "\n")
        else:
            fh.write("draw," + ",".join(f"y@p{i + 1}" for i in range(x.shape[0])) + "\n")
            for r in range(res.shape[0]):
                fh.write(f"{r}," + ",".join(_r(v) for v in res[r]) + "\n")
    _write_manifest(out.parent, "predict", argv, name=out.name + ".manifest.json", seed=a.seed,
                    mode=a.mode, fit=a.fit, output=str(out))
    print(f"wrote {out}")


def _sigma_ref(a, man, s_pts, s_rec):
    if a.sigma_ref is not None:
        if not a.sigma_ref > 0:
            raise UsageError("--sigma-ref must be positive")
        return a.sigma_ref, "flag"
    if a.reference:
        rman = _read_manifest(a.reference)
        if rman.get("model") != "bart":
            raise UsageError(f"--reference {a.reference} is not a `fit --model bart` run")
        _, _, rs = read_draws_csv(Path(a.reference) / "draws.csv")
        return float(rs[:, 0].mean()), "reference"
    if man["model"] == "bart":
        return float(s_rec[:, 0].mean()), "self"
    # no constant-variance fit available: root mean of s^2 over the points
    return float(np.sqrt(np.mean(s_pts ** 2))), "rms"


def cmd_diagnose(a, argv):
    if not 0 < a.gamma < 1:
        raise UsageError("--gamma must lie in (0, 1)")
    man, snap = _load_fit(a.fit)
    fitdir = Path(a.fit)
    names, meta = _meta_from(man["columns"])
    iters, f_rec, s_rec = read_draws_csv(fitdir / "draws.csv")
    rng = np.random.default_rng(a.seed)

    recorded = False
    if a.heldout:
        source, path = "heldout", a.heldout
    elif man.get("eval") and not a.in_sample:
        source, path, recorded = "eval", man["eval"], True
    else:
        source, path, recorded = "training", man["data"], not man.get("eval")
    x, y = load_like(path, names, meta, man["response"])
    if y is None:
        raise DataError(f"{path}: response column {man['response']!r} not found")
    if recorded:
        f_pts, s_pts = f_rec, s_rec
    else:
        if not snap.snapshots:
            raise UsageError("fit stored no snapshots; refit with --snapshot-every > 0")
        f_pts, s_pts = draws_at(snap, x)

    sigma_ref, ref_source = _sigma_ref(a, man, s_pts, s_rec)
    out = _outdir(a.out or fitdir / "diagnose")
    hev = h_evidence(s_pts, a.gamma, sigma_ref)
    write_hevidence(hev, out / "hevidence.csv")
    samples = f_pts + s_pts * rng.standard_normal(f_pts.shape)
    pct = predictive_percentiles(samples, y)
    write_percentiles(pct, out / "percentiles.csv")
    e = energy_statistic(pct)
    (out / "estat.txt").write_text(f"{e!r}\n", encoding="utf-8")

    rec = replace(snap, f=f_rec, s=s_rec, iterations=iters,
                  sigma=s_rec[:, 0].copy() if man["model"] == "bart" else None)
    write_trace(rec, out / "trace.csv")
    _write_manifest(out, "diagnose", argv, fit=a.fit, source=source, points=path,
                    gamma=a.gamma, seed=a.seed, sigma_ref=sigma_ref,
                    sigma_ref_source=ref_source)
    print(f"estat={e!r} exclusion={hev.exclusion_fraction!r} source={source}")


def cmd_cv(a, argv):
    if not a.kappa_grid:
        raise UsageError("--kappa-grid is empty")
    ds = load_csv(a.data, a.response, categorical=a.categorical, exclude=a.exclude)
    st = _settings(a)
    prior_kw = {}
    if a.m is not None:
        prior_kw["m"] = a.m
    if a.mprime is not None and a.model == "hbart":
        prior_kw["m_prime"] = a.mprime
    try:
        res = cv_kappa(ds, a.kappa_grid, a.folds, st, a.seed, a.model, prior_kw,
                       a.max_cuts, n_jobs=a.jobs)
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise UsageError(str(exc)) from exc
    out = _outdir(a.out)
    write_cv(res, out / "cv.csv")
    (out / "selected.txt").write_text(f"{res.selected!r}\n", encoding="utf-8")
    _write_manifest(out, "cv", argv, data=a.data, model=a.model, folds=a.folds,
                    kappa_grid=list(a.kappa_grid), settings=_settings_dict(st))
    print(f"selected kappa={res.selected!r}")


def cmd_replay(a, argv):
    man = _read_manifest(a.manifest)
    if man.get("subcommand") == "replay" or "argv" not in man:
        raise UsageError("manifest does not record a replayable command")
    return _dispatch(man["argv"])


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "diagnose": cmd_diagnose, "cv": cmd_cv, "replay": cmd_replay}


def _dispatch(argv):
    args = build_parser().parse_args(argv)
    COMMANDS[args.command](args, argv)


def _fail(code: int, kind: str, msg: str) -> int:
    print(f"hbart: error: code={code} kind={kind} msg={json.dumps(msg)}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _dispatch(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except (FloatingPointError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except ValueError as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
