"""Command-line interface: simulate, fit, summarize, predict, diagnose, evaluate.

Every subcommand writes ``config.json`` (the resolved flags) into its output
location, prints a one-line JSON summary on success and, on failure, prints a
single ``error: <Type>: <message>`` line to stderr and exits with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats, inference, metrics, simulate
from .model import Hyperparams
from .sampler import VARIANTS, SamplerConfig, run_chain

log = logging.getLogger("bltqr")


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.replace("x", ",").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like 16x16 or 12,12,12, got {text!r}") from None
    if len(dims) not in (2, 3) or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"dims must be 2 or 3 positive integers, got {text!r}")
    return dims


def _echo(directory: Path, args, command: str):
    directory.mkdir(parents=True, exist_ok=True)
    # the output location is implied by where the file lives, so it is left out to keep directories comparable
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k not in ("func", "out")}
    cfg["command"] = command
    formats.write_json(directory / "config.json", cfg)


def _data_dir(path: Path, split: str) -> Path:
    """Accept a dataset directory or a ``simulate`` output holding ``train``/``test``."""
    if (path / "records.csv").exists():
        return path
    if (path / split / "records.csv").exists():
        return path / split
    raise formats.FormatError(f"{path}: neither a dataset directory nor a simulation output with {split}/")


def cmd_simulate(args) -> dict:
    spec = simulate.ScenarioSpec(scenario_id=args.scenario, dims=args.dims, n_train=args.n_train,
                                 n_test=args.n_test, n_visits=args.n_visits, q=args.q, sigma=args.sigma,
                                 seed=args.seed, misspecified=args.misspecified)
    train, test, truth = simulate.generate(spec)
    out = Path(args.out)
    formats.write_dataset(out / "train", train)
    formats.write_dataset(out / "test", test)
    formats.write_tensor(out / "truth.btq", np.stack(truth))
    formats.write_json(out / "scenario.json", spec.to_dict())
    _echo(out, args, "simulate")
    return {"out": str(out), "n_train_records": train.n_obs, "n_test_records": test.n_obs, "dims": list(spec.dims)}


def cmd_fit(args) -> dict:
    data = formats.read_dataset(_data_dir(Path(args.data), "train"))
    hyper = Hyperparams(q=args.q, rank=args.rank_b0, rank_t=args.rank_bt, order=len(data.dims))
    mask = None
    if args.mask:
        mask = formats.read_tensor(args.mask)
        if mask.shape != data.dims:
            raise ValueError(f"mask dims {mask.shape} differ from image dims {data.dims}")
        # cells outside the mask carry no signal, so their coefficients stay at the prior
        data.X = data.X * (mask != 0)
    config = SamplerConfig(iterations=args.iters, burn_in=args.burnin, thin=args.thin, seed=args.seed,
                           variant=args.variant)
    chain = run_chain(config, data, hyper, progress=args.verbose)
    log.info("sampling took %.1fs", chain.manifest.get("timing_seconds", float("nan")))
    chain.manifest["data"] = str(args.data)
    out = Path(args.out)
    formats.write_chain(out, chain)
    if mask is not None:
        formats.write_tensor(out / "mask.btq", mask)
    _echo(out, args, "fit")
    return {"out": str(out), "n_draws": chain.n_draws, "variant": config.variant}


def _load_mask(chain_dir: Path):
    path = chain_dir / "mask.btq"
    return formats.read_tensor(path) != 0 if path.exists() else None


def cmd_summarize(args) -> dict:
    chain_dir = Path(args.chain)
    chain = formats.read_chain(chain_dir)
    mask = _load_mask(chain_dir)
    band = inference.mdev_bands if args.method == "mdev" else inference.pointwise_bands
    maps = [band(chain, t, args.alpha, mask) for t in range(chain.n_visits)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_tensor(out / "estimate.btq", np.stack([m.estimate for m in maps]))
    formats.write_tensor(out / "lower.btq", np.stack([m.lower for m in maps]))
    formats.write_tensor(out / "upper.btq", np.stack([m.upper for m in maps]))
    formats.write_tensor(out / "selected.btq", np.stack([m.selected for m in maps]).astype(np.float64))
    formats.write_table(out / "selection_counts.csv", ["visit", "n_selected"],
                        [{"visit": t, "n_selected": m.n_selected} for t, m in enumerate(maps)])
    if args.labels:
        labels = formats.read_tensor(args.labels)
        if labels.shape != chain.dims:
            raise ValueError(f"label map dims {labels.shape} differ from image dims {chain.dims}")
        rows = []
        for t, m in enumerate(maps):
            for lab in np.unique(labels[labels != 0]):
                rows.append({"visit": t, "region": int(lab), "n_voxels": int(np.sum(labels == lab)),
                             "n_selected": int(np.sum(m.selected & (labels == lab)))})
        formats.write_table(out / "region_counts.csv", ["visit", "region", "n_voxels", "n_selected"], rows)
    _echo(out, args, "summarize")
    return {"out": str(out), "n_selected": [m.n_selected for m in maps]}


def cmd_predict(args) -> dict:
    chain = formats.read_chain(Path(args.chain))
    data_path = Path(args.data)
    data = formats.read_dataset(_data_dir(data_path, "test"))
    known = np.ones(data.n_obs, bool) if args.known_subjects else None
    pred = inference.predict_quantile(chain, data, known)
    loss = metrics.check_loss(data.y, pred, chain.q)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_table(out / "predictions.csv", ["subject", "visit", "y", "q_hat", "check_loss"],
                        [{"subject": int(s), "visit": int(v), "y": float(y), "q_hat": float(p), "check_loss": float(l)}
                         for s, v, y, p, l in zip(data.subject, data.visit, data.y, pred, loss)])
    per_visit = [{"scenario": args.scenario, "method": chain.manifest["config"]["variant"], "visit": t,
                  "check_loss": float(loss[data.visit == t].mean())}
                 for t in range(data.n_visits) if np.any(data.visit == t)]
    formats.write_table(out / "check_loss.csv", formats.PREDICTION_COLUMNS, per_visit)
    _echo(out, args, "predict")
    return {"out": str(out), "mean_check_loss": float(loss.mean()),
            "per_visit": [r["check_loss"] for r in per_visit]}


def cmd_diagnose(args) -> dict:
    chain_dir = Path(args.chain)
    chain = formats.read_chain(chain_dir)
    g = inference.geweke(chain)
    result = {"geweke_pass_fraction": g["pass_fraction"], "geweke_n_tested": g["n_tested"]}
    data_path = args.data or chain.manifest.get("data")
    if data_path:
        data = formats.read_dataset(_data_dir(Path(data_path), "train"))
        mask = _load_mask(chain_dir)
        if mask is not None:
            data.X = data.X * mask
        result.update({k: float(v) for k, v in inference.dic(chain, data).items()})
    out = Path(args.out) if args.out else chain_dir / "diagnostics"
    out.mkdir(parents=True, exist_ok=True)
    formats.write_json(out / "diagnostics.json", result)
    _echo(out, args, "diagnose")
    return result


def cmd_evaluate(args) -> dict:
    est_path = Path(args.est)
    est = formats.read_tensor(est_path / "estimate.btq" if est_path.is_dir() else est_path)
    truth = formats.read_tensor(args.truth)
    if est.shape != truth.shape:
        raise ValueError(f"estimate shape {est.shape} differs from truth shape {truth.shape}")
    selected = None
    if est_path.is_dir() and (est_path / "selected.btq").exists():
        selected = formats.read_tensor(est_path / "selected.btq") != 0
    est_rows, sel_rows = [], []
    for t in range(est.shape[0]):
        base = {"scenario": args.scenario, "method": args.method, "visit": t}
        nonzero = np.any(truth[t] != 0)
        est_rows.append({**base,
                         "relative_error": metrics.relative_error(est[t], truth[t]) if nonzero else float("nan"),
                         "rmse": metrics.rmse(est[t], truth[t]),
                         "correlation": metrics.correlation(est[t], truth[t])})
        if selected is not None:
            sm = metrics.selection_metrics(selected[t], truth[t] != 0)
            sel_rows.append({**base, **{k: sm[k] for k in ("sensitivity", "specificity", "f1", "mcc")}})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_table(out / "estimation.csv", formats.ESTIMATION_COLUMNS, est_rows)
    if sel_rows:
        formats.write_table(out / "selection.csv", formats.SELECTION_COLUMNS, sel_rows)
    _echo(out, args, "evaluate")
    return {"out": str(out), "estimation": est_rows, "selection": sel_rows}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bltqr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic scenario")
    s.add_argument("--scenario", type=int, choices=range(1, 6), default=1)
    s.add_argument("--dims", type=_dims, default=None, help="e.g. 16x16 or 12x12x12")
    s.add_argument("--n-train", type=int, default=250)
    s.add_argument("--n-test", type=int, default=50)
    s.add_argument("--n-visits", type=int, default=3)
    s.add_argument("--q", type=float, default=0.5)
    s.add_argument("--sigma", type=float, default=1.0, help="noise scale")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--misspecified", action="store_true", help="Gaussian instead of ALD noise")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the sampler and write a chain archive")
    f.add_argument("--data", required=True)
    f.add_argument("--q", type=float, default=0.5)
    f.add_argument("--rank-b0", type=int, default=3)
    f.add_argument("--rank-bt", type=int, default=3)
    f.add_argument("--iters", type=int, default=3000)
    f.add_argument("--burnin", type=int, default=1000)
    f.add_argument("--thin", type=int, default=1)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--variant", choices=VARIANTS, default="bltqr")
    f.add_argument("--mask", default=None, help="tensor file; nonzero cells are analysed")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("summarize", help="point estimates, credible bands and selections")
    m.add_argument("--chain", required=True)
    m.add_argument("--alpha", type=float, default=0.1)
    m.add_argument("--method", choices=("mdev", "pointwise"), default="mdev")
    m.add_argument("--labels", default=None, help="integer region map (tensor file)")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_summarize)

    r = sub.add_parser("predict", help="quantile predictions and check loss")
    r.add_argument("--chain", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--known-subjects", action="store_true",
                   help="subjects are the training subjects; use their sampled intercepts")
    r.add_argument("--scenario", default="")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    d = sub.add_parser("diagnose", help="Geweke pass fraction and DIC")
    d.add_argument("--chain", required=True)
    d.add_argument("--data", default=None, help="training data for DIC (defaults to the fit's --data)")
    d.add_argument("--out", default=None)
    d.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("evaluate", help="estimation and selection metrics against a truth")
    e.add_argument("--est", required=True, help="summarize output directory or estimate tensor file")
    e.add_argument("--truth", required=True)
    e.add_argument("--scenario", default="")
    e.add_argument("--method", default="bltqr")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        result = args.func(args)
    except Exception as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
