"""Command-line entry points.

One JSON config file feeds every subcommand; any numeric default can be
overridden there, and ``--seed`` replaces the master seed from anywhere.
Every output embeds the config hash.  CSV layouts are documented in
csv_schema.json (shipped with the package and shown by ``--help``).
"""

from __future__ import annotations

import csv
import hashlib
import json
import shutil
import sys
from importlib import resources
from pathlib import Path

import click
import numpy as np

from . import bg as bg_mod
from . import chains, eoe
from .dynamics import NoiseStream, conservation_residual, exact_gaussian_evolve, simulate
from .generator import dynkin_residual, symmetry_residuals
from .measures import CanonicalSampler, sample_grand_canonical
from .model import Asymmetry, Potential, TorusField
from .observables import make_observable


def _schema_text() -> str:
    return resources.files("gllab").joinpath("csv_schema.json").read_text()


def _load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _potential(cfg: dict) -> Potential:
    name = cfg.get("potential", "quadratic")
    if name == "quadratic":
        return Potential.quadratic()
    if name.startswith("quadratic_cosine"):
        eps = float(name.split(":")[1]) if ":" in name else 0.1
        return Potential.quadratic_cosine(eps)
    raise click.BadParameter(f"unknown potential {name!r}")


@click.group(help=__doc__)
def main():
    pass


@main.command("simulate")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None, help="master seed override")
@click.option("--n", "n_sites", type=int, default=64)
@click.option("--gamma", type=float, default=0.0)
@click.option("--t", "t_diff", type=float, default=0.1, help="diffusive horizon")
@click.option("--dt", type=float, default=1e-3, help="microscopic step")
@click.option("--snapshots", type=int, default=11, help="snapshot count")
@click.option("--u0", type=float, default=0.0)
@click.option("--wide", is_flag=True, help="wide CSV layout (one row per snapshot)")
@click.option("--out", type=click.Path(), required=True)
def simulate_cmd(config, seed, n_sites, gamma, t_diff, dt, snapshots, u0, wide, out):
    """Integrate one trajectory and write its snapshots to CSV."""
    cfg = _load_config(config)
    seed = seed if seed is not None else cfg.get("seed", 12345)
    n_sites = cfg.get("N", n_sites)
    gamma = cfg.get("gamma", gamma)
    dt = cfg.get("dt", dt)
    pot = _potential(cfg)
    rng = np.random.default_rng([seed, 1])
    eta0 = TorusField(u0 + rng.standard_normal(n_sites))
    times = np.linspace(0.0, t_diff, snapshots)[1:]
    rec = simulate(eta0, pot, Asymmetry(gamma), t_diff, dt, times, NoiseStream(seed, 0))
    meta = {"config_hash": _config_hash(cfg), "seed": seed, **rec.meta}
    with open(out, "w", newline="") as fh:
        fh.write(f"# {json.dumps(meta, sort_keys=True)}\n")
        w = csv.writer(fh)
        if wide:
            w.writerow(["t"] + [f"site_{x+1}" for x in range(n_sites)] + ["residual"])
            for t, row, res in zip(rec.times, rec.fields, rec.residuals):
                w.writerow([t] + list(row) + [res])
        else:
            w.writerow(["t", "site", "value"])
            for row in rec.to_rows_long():
                w.writerow(row)
    click.echo(f"wrote {out}; conservation residual {conservation_residual(rec):.3e}")


@main.command("sample")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--kind", type=click.Choice(["grand", "canonical"]), default="grand")
@click.option("--u", type=float, default=0.0, help="target mean (grand canonical)")
@click.option("--m", type=float, default=0.0, help="conserved mean (canonical)")
@click.option("--n", "n_sites", type=int, default=16)
@click.option("--count", type=int, default=100)
@click.option("--out", type=click.Path(), required=True)
def sample_cmd(config, seed, kind, u, m, n_sites, count, out):
    """Draw fields from the product or mean-constrained ensembles."""
    cfg = _load_config(config)
    seed = seed if seed is not None else cfg.get("seed", 12345)
    pot = _potential(cfg)
    rng = np.random.default_rng([seed, 2])
    if kind == "grand":
        fields = sample_grand_canonical(pot, u, count * n_sites, rng).reshape(
            count, n_sites
        )
        labels = list(range(1, n_sites + 1))
        header = {"kind": kind, "u": u}
    else:
        sampler = CanonicalSampler(pot, n_sites, m, rng)
        fields = sampler.draw(count)
        ell = n_sites // 2
        labels = list(range(-ell, n_sites - ell))
        header = {"kind": kind, "m": m, "sampler": sampler.info.as_dict()}
    header["config_hash"] = _config_hash(cfg)
    header["seed"] = seed
    with open(out, "w", newline="") as fh:
        fh.write(f"# {json.dumps(header, sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(["draw", "site", "value"])
        for i, row in enumerate(fields):
            for lab, val in zip(labels, row):
                w.writerow([i, lab, val])
    click.echo(f"wrote {out}")


def _verify_conservation(seed) -> bool:
    pot = Potential.quadratic()
    ok = True
    for gamma in (0.0, 0.5):
        eta0 = TorusField(np.random.default_rng([seed, 3]).standard_normal(64))
        times = np.linspace(0.001, 0.01, 10)
        rec = simulate(eta0, pot, Asymmetry(gamma), 0.01, 1e-3, times, NoiseStream(seed, 1))
        ok = ok and conservation_residual(rec) < 1e-10
    return ok


def _verify_stationarity(seed) -> bool:
    rng = np.random.default_rng([seed, 4])
    ok = True
    for gamma in (0.0, 2.0):
        states = rng.standard_normal((4000, 32))
        out = exact_gaussian_evolve(states, Asymmetry(gamma), 1024.0, rng)
        x = out[:, 0]
        target = (0.0, 1.0, 0.0, 3.0)
        ses = (
            1 / np.sqrt(x.size),
            np.sqrt(2 / x.size),
            np.sqrt(15 / x.size),
            np.sqrt(96 / x.size),
        )
        moms = (x.mean(), x.var(), np.mean(x**3), np.mean(x**4))
        ok = ok and all(abs(m - t) < 4 * s for m, t, s in zip(moms, target, ses))
    return ok


def _verify_symmetry(seed) -> bool:
    pot = Potential.quadratic()
    F = make_observable("site", 0.0)
    G = make_observable("pair", 0.0)
    rng = np.random.default_rng([seed, 5])
    res = symmetry_residuals(F, G, pot, 0.0, 50_000, rng, asym=Asymmetry(1.0))
    return abs(res.s0) < 4 * res.s0_se + 1e-12 and abs(res.s1) < 4 * res.s1_se + 1e-12


def _verify_dynkin(seed) -> bool:
    pot = Potential.quadratic()
    asym = Asymmetry(0.0)
    f = make_observable("site", 0.0)
    records = []
    n = 16
    t_micro = 1.0
    dt = 1e-3
    times = np.arange(1, int(t_micro / dt) + 1) * dt / (n * n)
    for i in range(24):
        rng = np.random.default_rng([seed, 6, i])
        eta0 = TorusField(rng.standard_normal(n))
        records.append(
            simulate(eta0, pot, asym, times[-1], dt, times, NoiseStream(seed, 100 + i))
        )
    res = dynkin_residual(f, records, pot, asym)
    return abs(res.mean_residual) < 4 * res.se_residual + 1e-9 and 0.9 < res.qv_ratio < 1.1


def _verify_chains(seed) -> bool:
    rng = np.random.default_rng([seed, 7])
    ok = True
    for i in range(40):
        ch = chains.random_chain(rng)
        fvec = ch.project_mean_zero(rng.standard_normal(ch.n))
        if np.max(np.abs(fvec)) < 1e-9:
            continue
        for p in (4 / 3, 2.0, 4.0):
            lo, val, hi = chains.variational_bounds(ch, fvec, p, n_random=2000, rng=i)
            ok = ok and lo <= val + 1e-9 and val <= hi + 1e-9
        kq = chains.centering_constant(ch.pi, 4.0, n_random=64, rng=i)
        ok = ok and kq >= 0.5 - 1e-12
        c2, top2 = chains.lps_best_constants(ch, 2.0, probes=50, rng=i)
        ok = ok and abs(c2 - 1) < 1e-10 and abs(top2 - 1) < 1e-10
    return ok


VERIFY_SUITES = {
    "conservation": _verify_conservation,
    "stationarity": _verify_stationarity,
    "symmetry": _verify_symmetry,
    "dynkin": _verify_dynkin,
    "chains": _verify_chains,
}


@main.command("verify")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option(
    "--suite",
    type=click.Choice(["all"] + sorted(VERIFY_SUITES)),
    default="all",
)
def verify_cmd(config, seed, suite):
    """Run the property suites; exit code 0 iff everything passes."""
    cfg = _load_config(config)
    seed = seed if seed is not None else cfg.get("seed", 12345)
    names = sorted(VERIFY_SUITES) if suite == "all" else [suite]
    failed = False
    for name in names:
        ok = VERIFY_SUITES[name](seed)
        click.echo(f"{name}: {'PASS' if ok else 'FAIL'}")
        failed = failed or not ok
    sys.exit(1 if failed else 0)


@main.command("eoe")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--observable", default="square")
@click.option("--ells", default="4,8,16,32,64")
@click.option("--p", type=float, default=2.0)
@click.option("--order", type=int, default=2)
@click.option("--method", type=click.Choice(["analytic", "mc"]), default="analytic")
@click.option("--u0", type=float, default=0.0)
@click.option("--out", type=click.Path(), required=True)
def eoe_cmd(config, seed, observable, ells, p, order, method, u0, out):
    """Residual-norm curve across block sizes, CSV per the schema."""
    cfg = _load_config(config)
    seed = seed if seed is not None else cfg.get("seed", 12345)
    pot = _potential(cfg)
    f = make_observable(observable, u0)
    ell_list = [int(s) for s in ells.split(",")]
    curve = eoe.residual_curve(
        f, ell_list, u0, p, order=order, method=method,
        rng=np.random.default_rng([seed, 8]), pot=pot,
    )
    slope, slope_se = eoe.scaling_exponent(curve) if len(ell_list) >= 4 else (float("nan"),) * 2
    header = {
        "config_hash": _config_hash(cfg),
        "seed": seed,
        "p": p,
        "order": order,
        "observable": observable,
        "fitted_exponent": slope,
        "exponent_se": slope_se,
    }
    with open(out, "w", newline="") as fh:
        fh.write(f"# {json.dumps(header, sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(["ell", "norm", "stderr", "method"])
        for row in curve.rows():
            w.writerow(row)
    click.echo(f"wrote {out}; exponent {slope:.3f} +- {slope_se:.3f}")


@main.command("bg")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--order", type=int, default=2)
@click.option("--preset", type=click.Choice(["quick", "acceptance"]), default="quick")
@click.option("--outdir", type=click.Path(), required=True)
def bg_cmd(config, seed, order, preset, outdir):
    """Replacement-moment experiment; writes CSV + JSON into OUTDIR."""
    cfg = _load_config(config)
    bg_cfg_dict = cfg.get("bg", {})
    if preset == "quick" and not bg_cfg_dict:
        bg_cfg_dict = {"N": 64, "ells": [4, 8], "T": 0.1, "R": 64, "dt": 0.02}
    if "h" in bg_cfg_dict and isinstance(bg_cfg_dict["h"], dict):
        bg_cfg_dict["h"] = bg_mod.HSpec(**bg_cfg_dict["h"])
    if "ells" in bg_cfg_dict:
        bg_cfg_dict["ells"] = tuple(bg_cfg_dict["ells"])
    config_obj = bg_mod.BGConfig(**bg_cfg_dict)
    if seed is not None:
        config_obj.master_seed = seed
    res = bg_mod.bg_moment(config_obj, order=order)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"bg_order{order}.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# {json.dumps(res.meta, sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(["ell", "moment", "root", "root_se", "envelope_rise", "envelope_fall"])
        for row in res.rows():
            w.writerow(row)
    (outdir / f"bg_order{order}.json").write_text(res.to_json())
    click.echo(f"wrote {csv_path}")


@main.command("report")
@click.option("--inputs", multiple=True, type=click.Path(exists=True), required=True)
@click.option("--outdir", type=click.Path(), required=True)
def report_cmd(inputs, outdir):
    """Bundle experiment CSVs with an index and the column schema."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    index = {"inputs": [], "schema": json.loads(_schema_text())}
    for src in inputs:
        src = Path(src)
        dst = outdir / src.name
        shutil.copyfile(src, dst)
        head = src.read_text().splitlines()[0]
        meta = json.loads(head[2:]) if head.startswith("# ") else {}
        index["inputs"].append(
            {"file": src.name, "config_hash": meta.get("config_hash", "unknown")}
        )
    (outdir / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
    click.echo(f"wrote {outdir / 'index.json'}")


@main.command("schema")
def schema_cmd():
    """Print the CSV column schema."""
    click.echo(_schema_text())


if __name__ == "__main__":
    main()
