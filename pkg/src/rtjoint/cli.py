"""Command-line front end: CSV ingestion, estimation jobs and reports.

Usage::

    rtjoint --y Y.csv --rt RT.csv --xg 5000 --out results/
    rtjoint --from-manifest results/manifest.json --out rerun/
    rtjoint-simulate --n 500 --k 20 --seed 1 --out data/
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .chains import SummaryTable, chain_columns, summarize
from .fit import FitReport
from .gibbs import SamplerError, run_chain, run_chain_quadratic, time_scale
from .model import (
    ItemPrior,
    ObservedData,
    PopulationPrior,
    RunConfig,
    ValidationError,
    validate_inputs,
)

log = logging.getLogger(__name__)

MISSING_TOKENS = {"NA", "", "NaN", "nan"}


class InputError(ValueError):
    pass


def _parse_cell(token, path, row, col):
    token = token.strip()
    if token in MISSING_TOKENS:
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise InputError(f"{path}: non-numeric value {token!r} at row {row + 1}, "
                         f"column {col + 1}") from None


def load_matrix_csv(path, kind="real", log_transform=False) -> np.ndarray:
    """Read a rectangular numeric CSV; ``NA`` and empty cells become ``nan``.

    A first row containing non-numeric tokens (other than ``NA``) is taken as
    a header. ``kind`` is ``binary``, ``mask`` or ``real``. With
    ``log_transform`` raw-second response times are log-transformed; zero or
    negative times are rejected.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise InputError(f"{path}: empty file")

    def numeric(tok):
        tok = tok.strip()
        if tok in MISSING_TOKENS:
            return True
        try:
            float(tok)
            return True
        except ValueError:
            return False

    if not all(numeric(t) for t in rows[0]):
        rows = rows[1:]
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise InputError(f"{path}: ragged row {i + 1} ({len(r)} cells, expected {width})")
    mat = np.array([[_parse_cell(t, path, i, j) for j, t in enumerate(r)]
                    for i, r in enumerate(rows)], dtype=float)

    if kind in ("binary", "mask"):
        bad = ~np.isnan(mat) & (mat != 0) & (mat != 1)
        if kind == "mask":
            bad |= np.isnan(mat)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise InputError(f"{path}: {kind} value {mat[i, j]!r} at row {i + 1}, "
                             f"column {j + 1} is not 0/1")
    if log_transform:
        nonpos = ~np.isnan(mat) & (mat <= 0)
        if nonpos.any():
            i, j = np.argwhere(nonpos)[0]
            raise InputError(
                f"{path}: response time {mat[i, j]!r} at row {i + 1}, column {j + 1} "
                "cannot be log-transformed; recode zero or negative times as NA first")
        mat = np.log(mat)
    return mat


def write_matrix_csv(path, mat, header=None, fmt="{:.17g}"):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    for row in np.atleast_2d(mat):
        w.writerow(["NA" if np.isnan(v) else fmt.format(v) for v in row])
    _atomic_write(path, buf.getvalue())


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------- jobs


@dataclass
class JobSpec:
    y: str
    rt: str
    out: str
    xg: int = 1000
    burnin: float = 10.0
    ident: int = 2
    guess: bool = False
    par1: bool = False
    td: bool = True
    wl: bool = False
    residual: bool = False
    xgresid: int = 1000
    log_rt: bool = False
    mbdy: Optional[str] = None
    mbdt: Optional[str] = None
    xpa: Optional[str] = None
    xpt: Optional[str] = None
    xia: Optional[str] = None
    xit: Optional[str] = None
    fixed_a: Optional[str] = None
    fixed_b: Optional[str] = None
    fixed_phi: Optional[str] = None
    fixed_lambda: Optional[str] = None
    speed_model: str = "constant"
    item_order: Optional[str] = None
    seed: Optional[int] = None
    priors: Optional[str] = None
    report_format: str = "both"
    persons_file: bool = True

    input_fields = ("y", "rt", "mbdy", "mbdt", "xpa", "xpt", "xia", "xit",
                    "fixed_a", "fixed_b", "fixed_phi", "fixed_lambda", "item_order", "priors")

    def inputs(self):
        return {f: getattr(self, f) for f in self.input_fields if getattr(self, f)}


def _load_vector(path):
    return load_matrix_csv(path).ravel()


def load_priors(path):
    """Prior overrides from JSON ``{"item": {...}, "population": {...}}``;
    keys are :class:`ItemPrior` / :class:`PopulationPrior` field names."""
    if path is None:
        return None, None
    with open(path) as fh:
        raw = json.load(fh)
    unknown = set(raw) - {"item", "population"}
    if unknown:
        raise InputError(f"{path}: unknown prior sections {sorted(unknown)}")

    def build(cls, section):
        if section not in raw:
            return None
        names = set(cls.__dataclass_fields__)
        bad = set(raw[section]) - names
        if bad:
            raise InputError(f"{path}: unknown {section} prior fields {sorted(bad)}")
        kw = {k: (np.asarray(v, float) if isinstance(v, list) else v)
              for k, v in raw[section].items()}
        return cls(**kw)

    return build(ItemPrior, "item"), build(PopulationPrior, "population")


def build_inputs(spec: JobSpec):
    """Load all files named in ``spec``; returns ``(data, config, x)``."""
    for name, path in spec.inputs().items():
        if not Path(path).exists():
            raise InputError(f"--{name.replace('_', '-')}: file {path} does not exist")
    y = load_matrix_csv(spec.y, "binary")
    rt = load_matrix_csv(spec.rt, "real", log_transform=spec.log_rt)
    kw = {}
    if spec.mbdy:
        kw["mbd_y"] = load_matrix_csv(spec.mbdy, "mask")
    if spec.mbdt:
        kw["mbd_t"] = load_matrix_csv(spec.mbdt, "mask")
    for name in ("xpa", "xpt", "xia", "xit"):
        path = getattr(spec, name)
        if path:
            kw[name] = load_matrix_csv(path)
    data = ObservedData(y=y, rt=rt, **kw)
    seed = spec.seed
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2 ** 63))
        spec.seed = seed
    fixed = {f"fixed_{n}": _load_vector(getattr(spec, f"fixed_{n}"))
             for n in ("a", "b", "phi", "lambda") if getattr(spec, f"fixed_{n}")}
    config = RunConfig(xg=spec.xg, burnin=spec.burnin, ident=spec.ident, guess=spec.guess,
                       par1=spec.par1, td=spec.td, wl=spec.wl, residual=spec.residual,
                       xgresid=spec.xgresid, seed=seed, speed_model=spec.speed_model,
                       **fixed)
    x = None
    if spec.speed_model == "quadratic" and spec.item_order:
        order = load_matrix_csv(spec.item_order)
        if order.shape[0] == 1:
            order = order[0]
        x = time_scale(order.astype(int), data.n_items)
    validate_inputs(data, config)
    return data, config, x


def run_job(spec: JobSpec) -> int:
    """Run one estimation job and write all artifacts into ``spec.out``.

    Configuration problems are reported before any file is written.
    """
    data, config, x = build_inputs(spec)
    item_prior, pop_prior = load_priors(spec.priors)
    if config.speed_model == "quadratic":
        chain = run_chain_quadratic(data, config, item_prior, pop_prior, x=x)
    else:
        chain = run_chain(data, config, item_prior, pop_prior)
    out = Path(spec.out)
    cols = chain_columns(chain)
    names = list(cols)
    mat = np.column_stack([np.arange(1, chain.xg + 1)] + [cols[n] for n in names])
    write_matrix_csv(out / "chain_parameters.csv", mat, ["iteration"] + names)
    if spec.persons_file:
        pcols = {k: v for k, v in chain_columns(chain, persons=True).items() if k not in cols}
        pnames = list(pcols)
        pmat = np.column_stack([np.arange(1, chain.xg + 1)] + [pcols[n] for n in pnames])
        write_matrix_csv(out / "chain_persons.csv", pmat, ["iteration"] + pnames)
    summary = summarize(chain)
    text, structured = emit_report(summary, chain.fit, chain=chain)
    if spec.report_format in ("text", "both"):
        _atomic_write(out / "summary.txt", text)
    if spec.report_format in ("structured", "both"):
        _atomic_write(out / "summary.json", json.dumps(structured, indent=1))
    if chain.fit is not None:
        _atomic_write(out / "fit.json", json.dumps(_clean(chain.fit.as_dict())))
    manifest = {
        "job": {k: v for k, v in asdict(spec).items()},
        "config": _config_dict(config),
        "input_sha256": {k: _digest(v) for k, v in spec.inputs().items()},
    }
    manifest["job"]["out"] = None
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=1, default=_jsonable))
    return 0


def _config_dict(config):
    d = asdict(config)
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(type(value))


# ------------------------------------------------------------------ reports


def _clean(value):
    """JSON-safe numbers: nan/inf become None, arrays become lists."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_clean(v) for v in np.asarray(value, dtype=object).tolist()] \
            if not isinstance(value, np.ndarray) else _clean(value.tolist())
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def _fmt(v, digits=3):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "NA"
    return f"{v:.{digits}f}"


def _residual_section(fit: FitReport):
    """Headline percentages of the residual analysis (rounded to 2 decimals)."""
    pct = lambda m: float(np.round(100.0 * np.nanmean(m), 2))
    return {
        "EAPCP1": pct(fit.EAPCP1 >= 0.95),
        "EAPCP2": pct(fit.EAPCP2 >= 0.95),
        "EAPCP3": pct(fit.EAPCP3 >= 0.95),
        "significant_RT_patterns": pct(fit.lZP < 0.05),
        "significant_RA_patterns": pct(fit.PFlp < 0.05),
        "extreme_RT_residuals": pct(fit.EAPresid >= 0.95),
        "extreme_RA_residuals": pct(fit.EAPresidA >= 0.95),
        "KS_violations": pct(fit.EAPKS[~np.isnan(fit.EAPKS)] >= 0.95)
        if np.any(~np.isnan(fit.EAPKS)) else None,
        "misfitting_items_RA": pct(fit.IFlp < 0.05),
        "misfitting_items_RT": pct(fit.lZI < 0.05),
    }


def emit_report(summary: SummaryTable, fit: Optional[FitReport] = None, chain=None):
    """Render the summary as text and as a JSON-ready dict.

    Both documents are built from the same rounded numbers, so every value
    printed in the text appears identically in the structured output.
    """
    rnd = lambda v: None if not math.isfinite(v) else float(np.round(v, 3))
    items = []
    j = 1
    while f"a[{j}]" in summary.names():
        row = {"item": j}
        for label in ("a", "b", "phi", "lam", "sigma2", "c"):
            name = f"{label}[{j}]"
            if name in summary.names():
                r = summary[name]
                row[label] = {"EAP": rnd(r.eap), "SD": rnd(r.sd)}
        items.append(row)
        j += 1
    mu_i = {lab: {"EAP": rnd(summary[lab].eap), "SD": rnd(summary[lab].sd)}
            for lab in ("mu_a", "mu_b", "mu_phi", "mu_lam")}
    sigma_i = [[rnd(summary[f"Sigma_I[{min(i, k) + 1},{max(i, k) + 1}]"].eap)
                for k in range(4)] for i in range(4)]
    d = 4 if "Sigma_P[4,4]" in summary.names() else 2
    sigma_p = [[rnd(summary[f"Sigma_P[{min(i, k) + 1},{max(i, k) + 1}]"].eap)
                for k in range(d)] for i in range(d)]
    person_labels = ["Theta", "Speed"] if d == 2 else ["Theta", "Intercept", "Slope1", "Slope2"]
    structured = {
        "n_retained": summary.n_retained,
        "n_burnin": summary.n_burnin,
        "items": items,
        "mu_I": mu_i,
        "Sigma_I": sigma_i,
        "Sigma_P": sigma_p,
        "Sigma_P_labels": person_labels,
        "parameters": _clean(summary.as_dict()),
    }
    lines = [f"Posterior summary ({summary.n_retained} draws after a burn-in of "
             f"{summary.n_burnin})", "", "--- Item parameters ---"]
    present = [lab for lab in ("a", "b", "phi", "lam", "sigma2", "c") if items and lab in items[0]]
    lines.append("Item " + "".join(f"{lab + ' EAP':>12}{lab + ' SD':>10}" for lab in present))
    for row in items:
        lines.append(f"{row['item']:>4} " + "".join(
            f"{_fmt(row[lab]['EAP']):>12}{_fmt(row[lab]['SD']):>10}" for lab in present))
    lines += ["", "--- Item population mean mu_I ---",
              "".join(f"{lab:>10}" for lab in mu_i),
              "".join(f"{_fmt(v['EAP']):>10}" for v in mu_i.values()),
              "".join(f"{_fmt(v['SD']):>10}" for v in mu_i.values()),
              "", "--- Sigma_I (a, b, phi, lam) ---"]
    lines += ["".join(f"{_fmt(v):>10}" for v in r) for r in sigma_i]
    lines += ["", "--- Sigma_P ---", " " * 10 + "".join(f"{lab:>10}" for lab in person_labels)]
    lines += [f"{person_labels[i]:<10}" + "".join(f"{_fmt(v):>10}" for v in r)
              for i, r in enumerate(sigma_p)]
    if fit is not None:
        section = _residual_section(fit)
        structured["residual_analysis"] = section
        structured["fit"] = _clean(fit.as_dict())
        lines += ["", "--- Residual Analysis ---"]
        lines += [f"{k:<26}{_fmt(v, 2):>8} %" for k, v in section.items()]
    return "\n".join(lines) + "\n", structured


# ---------------------------------------------------------------------- CLI


def _parser():
    p = argparse.ArgumentParser(prog="rtjoint", description=__doc__.split("\n")[0])
    p.add_argument("--y", help="RA matrix CSV (persons x items, 0/1/NA)")
    p.add_argument("--rt", help="RT matrix CSV (log seconds unless --log-rt)")
    p.add_argument("--xg", type=int, default=1000)
    p.add_argument("--burnin", type=float, default=10.0, help="percent of --xg")
    p.add_argument("--ident", type=int, choices=(1, 2), default=2)
    p.add_argument("--guess", action="store_true")
    p.add_argument("--par1", action="store_true")
    p.add_argument("--td", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--wl", action="store_true")
    p.add_argument("--residual", action="store_true")
    p.add_argument("--xgresid", type=int, default=1000)
    p.add_argument("--log-rt", action="store_true", help="log-transform raw RTs")
    for name in ("mbdy", "mbdt", "xpa", "xpt", "xia", "xit"):
        p.add_argument(f"--{name}")
    for name in ("a", "b", "phi", "lambda"):
        p.add_argument(f"--fixed-{name}", dest=f"fixed_{name}")
    p.add_argument("--speed-model", choices=("constant", "quadratic"), default="constant")
    p.add_argument("--item-order")
    p.add_argument("--seed", type=int)
    p.add_argument("--priors", help="JSON file of prior overrides")
    p.add_argument("--out", required=True)
    p.add_argument("--report-format", choices=("text", "structured", "both"), default="both")
    p.add_argument("--from-manifest", help="rerun the job recorded in a manifest")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.from_manifest:
            with open(args.from_manifest) as fh:
                job = json.load(fh)["job"]
            job["out"] = args.out
            spec = JobSpec(**job)
        else:
            if not args.y or not args.rt:
                print("rtjoint: --y and --rt are required", file=sys.stderr)
                return 2
            fields_ = {f for f in JobSpec.__dataclass_fields__}
            spec = JobSpec(**{k: v for k, v in vars(args).items() if k in fields_})
        return run_job(spec)
    except (InputError, ValidationError) as exc:
        print(f"rtjoint: input error: {exc}", file=sys.stderr)
        return 2
    except SamplerError as exc:
        print(f"rtjoint: sampler aborted: {exc}", file=sys.stderr)
        return 3


def simulate_main(argv=None) -> int:
    """Write a simulated dataset (Y.csv, RT.csv and true parameters)."""
    from .simulate import person_covariance, simulate_dataset

    p = argparse.ArgumentParser(prog="rtjoint-simulate")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    args = p.parse_args(argv)
    data, truth = simulate_dataset(args.n, args.k, rng=args.seed,
                                   sigma_p=person_covariance(rho=args.rho))
    write_dataset(data, truth, args.out)
    return 0


def write_dataset(data: ObservedData, truth, directory):
    """Emit a dataset in the CSV layout read by :func:`load_matrix_csv`."""
    out = Path(directory)
    k = data.n_items
    header = [f"item{j + 1}" for j in range(k)]
    write_matrix_csv(out / "Y.csv", data.y, header, fmt="{:.0f}")
    write_matrix_csv(out / "RT.csv", data.rt, header)
    if np.any(data.mbd_y == 0):
        write_matrix_csv(out / "MBDY.csv", data.mbd_y, header, fmt="{:.0f}")
    if np.any(data.mbd_t == 0):
        write_matrix_csv(out / "MBDT.csv", data.mbd_t, header, fmt="{:.0f}")
    if truth is not None:
        it = truth.items
        cols = [it.a, it.b, it.phi, it.lam, it.sigma2]
        names = ["a", "b", "phi", "lam", "sigma2"]
        if it.c is not None:
            cols.append(it.c)
            names.append("c")
        write_matrix_csv(out / "true_items.csv", np.column_stack(cols), names)
        zeta = np.atleast_2d(truth.persons.zeta.T).T
        write_matrix_csv(out / "true_persons.csv",
                         np.column_stack([truth.persons.theta, zeta]),
                         ["theta"] + (["zeta"] if zeta.shape[1] == 1
                                      else ["zeta0", "zeta1", "zeta2"]))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
