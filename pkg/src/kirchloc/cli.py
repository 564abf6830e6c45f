"""Batch command line front-end.

Each run reads one JSON config, executes a single command and writes CSV
tables plus ``manifest.json`` (config echo, seed, versions, wall time) into
the output directory.
"""

import argparse
import copy
import csv
import json
import platform
import sys
import time
import warnings
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import band_edge, lattice, localization, spectra
from .errors import ConfigError, InsufficientData, KirchlocError
from .parallel import default_threads

COMMANDS = ("bands", "eigs", "green", "fm", "criterion", "ids", "ct", "converge")

_num = {"type": "number"}
_int = {"type": "integer"}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_site = {"type": "array", "items": _int, "minItems": 1, "maxItems": 3}
_point = {"type": "array", "prefixItems": [_site, _int, _num], "minItems": 3, "maxItems": 3}

_region = {
    "radius": {"type": "integer", "minimum": 0},
    "sites": {"type": "array", "items": _site, "minItems": 1},
    "sample_index": {"type": "integer", "minimum": 0},
    "coupling": {"type": "number", "minimum": 0},
}

SCHEMA = {
    "type": "object",
    "required": ["lattice", "disorder"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "lattice": {
            "type": "object",
            "required": ["dimension", "edges"],
            "properties": {
                "dimension": {"type": "integer", "minimum": 1, "maximum": 3},
                "edges": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["length"],
                        "properties": {
                            "length": _num,
                            "kind": {"enum": ["zero", "constant", "piecewise", "sampled"]},
                            "values": {"type": "array", "items": _num},
                            "breakpoints": {"type": "array", "items": _num},
                            "integration_steps": {"type": "integer", "minimum": 1},
                        },
                        "additionalProperties": False,
                    },
                },
            },
            "additionalProperties": False,
        },
        "disorder": {
            "type": "object",
            "required": ["low", "high"],
            "properties": {
                "density": {"enum": ["uniform", "truncated_gaussian"]},
                "low": _num,
                "high": _num,
                "coupling": {"type": "number", "minimum": 0},
                "mean": _num,
                "std": {"type": "number", "exclusiveMinimum": 0},
                "master_seed": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "bands": {
            "type": "object",
            "required": ["window"],
            "properties": {"window": _pair, "resolution": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
        },
        "eigs": {
            "type": "object",
            "required": ["window"],
            "properties": dict(_region, window=_pair, grid_points={"type": "integer", "minimum": 2}),
            "additionalProperties": False,
        },
        "green": {
            "type": "object",
            "required": ["queries"],
            "properties": dict(_region, queries={
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["energy", "source", "target"],
                    "properties": {"energy": _num, "source": _point, "target": _point},
                    "additionalProperties": False,
                },
            }),
            "additionalProperties": False,
        },
        "fm": {
            "type": "object",
            "required": ["energy", "samples"],
            "properties": dict(
                _region,
                energy=_num,
                s={"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                samples={"type": "integer", "minimum": 1},
                pairs={"type": "array", "items": {"type": "array", "items": _site,
                                                  "minItems": 2, "maxItems": 2}},
                max_distance={"type": "integer", "minimum": 0},
            ),
            "additionalProperties": False,
        },
        "criterion": {
            "type": "object",
            "required": ["energies", "couplings"],
            "properties": {
                "energies": {"type": "array", "items": _num, "minItems": 1},
                "couplings": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                              "minItems": 1},
                "s": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "beta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "C_s": {"type": "number", "exclusiveMinimum": 0},
                "D_s": {"type": "number", "exclusiveMinimum": 0},
                "trials": {"type": "integer", "minimum": 1},
                "finite_volume_radius": {"type": "integer", "minimum": 0},
                "samples": {"type": "integer", "minimum": 2},
                "subsets": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "ids": {
            "type": "object",
            "required": ["E0", "radius", "samples"],
            "properties": {
                "E0": _num,
                "radius": {"type": "integer", "minimum": 0},
                "samples": {"type": "integer", "minimum": 1},
                "eps_min": {"type": "number", "exclusiveMinimum": 0},
                "eps_max": {"type": "number", "exclusiveMinimum": 0},
                "per_decade": {"type": "integer", "minimum": 1},
                "fit_range": _pair,
                "coupling": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "ct": {
            "type": "object",
            "required": ["energy", "radius", "samples", "epsilon"],
            "properties": {
                "energy": _num,
                "radius": {"type": "integer", "minimum": 0},
                "samples": {"type": "integer", "minimum": 1},
                "epsilon": {"type": "array", "items": _num, "minItems": 1},
                "coupling": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "converge": {
            "type": "object",
            "required": ["target_energy", "radii"],
            "properties": {
                "target_energy": _num,
                "radii": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "sample_index": {"type": "integer", "minimum": 0},
                "half_width": {"type": "number", "exclusiveMinimum": 0},
                "coupling": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def _path(parts):
    return ".".join(str(p) for p in parts) or "<root>"


def validate(config, command):
    """Structural validation; raises :class:`ConfigError` naming the field."""
    try:
        jsonschema.validate(config, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(_path(exc.absolute_path), exc.message) from None
    if command not in config:
        raise ConfigError(command, "section required by this command is missing")
    try:
        lat = lattice.LatticeSpec.from_dict(config["lattice"])
    except (ValueError, TypeError) as exc:
        raise ConfigError("lattice", str(exc)) from None
    try:
        model = lattice.DisorderModel.from_dict(config["disorder"])
    except ValueError as exc:
        raise ConfigError("disorder", str(exc)) from None
    return lat, model


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (tuple, list)):
        return " ".join(_fmt(v) for v in x)
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _region(lat, sec):
    if "sites" in sec:
        return lattice.as_sites(sec["sites"], lat.dimension)
    return lattice.Box(int(sec.get("radius", 0)), lat.dimension)


# ------------------------------------------------------------ commands


def cmd_bands(lat, model, cfg, out, threads):
    sec = cfg["bands"]
    scan = lattice.band_edges(lat, model, sec["window"], sec.get("resolution", 1e-3))
    write_csv(out / "bands.csv", ["E", "indicator", "lower_factor", "upper_factor",
                                  "in_dirichlet_window"], scan.rows())
    write_csv(out / "band_intervals.csv", ["start", "end"], scan.bands)
    write_csv(out / "dirichlet_windows.csv", ["start", "end"], scan.dirichlet_windows)
    return {"bands": [list(b) for b in scan.bands]}, "x=E, y=indicator (step plot); shade band_intervals"


def cmd_eigs(lat, model, cfg, out, threads):
    sec = cfg["eigs"]
    region = _region(lat, sec)
    alpha = lattice.sample_disorder(model, region, sec.get("sample_index", 0), lat.dimension)
    lam = sec.get("coupling", model.coupling)
    pairs = spectra.find_eigenvalues(lat, region, alpha, lam, sec["window"],
                                     sec.get("grid_points", 512))
    write_csv(out / "eigenvalues.csv",
              ["index", "energy", "residual", "multiplicity_flag", "continuity_defect",
               "coupling_defect"],
              [(k, p.energy, p.residual, p.multiplicity_flag, p.continuity_defect,
                p.coupling_defect) for k, p in enumerate(pairs)])
    rows = ((k, m, j, t, v) for k, p in enumerate(pairs) for m, j, t, v in p.profile_rows())
    write_csv(out / "eigenfunctions.csv", ["index", "m", "j", "t", "value"], rows)
    with open(out / "eigenpairs.json", "w") as fh:
        json.dump([p.to_record() for p in pairs], fh, indent=1)
    return {"count": len(pairs)}, "eigenfunctions.csv: x=m_j+t/l per index, y=value"


def cmd_green(lat, model, cfg, out, threads):
    sec = cfg["green"]
    region = _region(lat, sec)
    alpha = lattice.sample_disorder(model, region, sec.get("sample_index", 0), lat.dimension)
    lam = sec.get("coupling", model.coupling)
    rows = []
    for q in sec["queries"]:
        src, tgt = tuple(q["source"]), tuple(q["target"])
        query = spectra.GreenKernelQuery(q["energy"], src, tgt, region)
        g = spectra.green_kernel(query, lat, alpha, lam)
        rows.append((q["energy"], src[0], src[1], src[2], tgt[0], tgt[1], tgt[2], g))
    write_csv(out / "green.csv", ["E", "m", "j", "t", "m2", "j2", "t2", "G"], rows)
    return {"queries": len(rows)}, "green.csv: one row per query"


def cmd_fm(lat, model, cfg, out, threads):
    sec = cfg["fm"]
    region = _region(lat, sec)
    s = sec.get("s", 0.2)
    if "pairs" in sec:
        pairs = [tuple(p) for p in sec["pairs"]]
    else:
        kmax = sec.get("max_distance", 8)
        origin = [0] * lat.dimension
        pairs = [(origin, [k] + [0] * (lat.dimension - 1)) for k in range(kmax + 1)]
    est = localization.fractional_moments(lat, region, model, sec["energy"], s, pairs,
                                          sec["samples"], sec.get("coupling"), threads)
    write_csv(out / "moments.csv", ["E", "lambda", "s", "pair_distance", "moment_mean", "std_err"],
              est.rows())
    info = {"capped_count": est.capped_count, "heavy_tail": est.heavy_tail}
    try:
        fit = localization.fit_decay(est)
        info.update(A=fit.A, rate=fit.rate, r_squared=fit.r_squared)
    except InsufficientData as exc:
        info["fit"] = str(exc)
    return info, "moments.csv: x=pair_distance, y=log(moment_mean)"


def cmd_criterion(lat, model, cfg, out, threads):
    sec = cfg["criterion"]
    s = sec.get("s", 0.2)
    if not 0 < s < 0.25:
        warnings.warn(f"criterion.s = {s} lies outside (0, 1/4); proceeding", UserWarning)
    beta = sec.get("beta", 0.5)
    if "C_s" in sec and "D_s" in sec:
        const = localization.CriterionConstants.user_supplied(s, sec["C_s"], sec["D_s"])
    else:
        const = localization.estimate_constants(model, s, sec.get("trials", 10_000),
                                                seed=model.master_seed,
                                                C_s=sec.get("C_s"), D_s=sec.get("D_s"))
    rows, fv_rows = [], []
    for lam in sec["couplings"]:
        for E in sec["energies"]:
            rep = localization.single_point_criterion(lat, model, E, s, const, beta, coupling=lam)
            rows.append(rep.row())
            if "finite_volume_radius" in sec:
                ks = localization.finite_volume_criterion(
                    lat, model, lattice.Box(sec["finite_volume_radius"], lat.dimension), E, s,
                    const, sec.get("samples", 1000), sec.get("subsets", 1), beta, coupling=lam,
                    threads=threads)
                fv_rows.append((E, lam, ks.value, beta, int(ks.satisfied), ks.standard_error))
    write_csv(out / "criterion.csv", ["E", "lambda", "criterion_value", "beta", "satisfied"], rows)
    if fv_rows:
        write_csv(out / "finite_volume.csv",
                  ["E", "lambda", "criterion_value", "beta", "satisfied", "std_err"], fv_rows)
    with open(out / "constants.json", "w") as fh:
        json.dump(dict(const.to_dict(), trace=const.trace), fh, indent=1)
    return const.to_dict(), "criterion.csv: x=E, y=criterion_value per lambda; line at beta"


def cmd_ids(lat, model, cfg, out, threads):
    sec = cfg["ids"]
    eps = band_edge.log_grid(sec.get("eps_min", 0.01), sec.get("eps_max", 0.2),
                             sec.get("per_decade", 16))
    curve = band_edge.ids_curve(lat, model, sec["E0"], sec["radius"], sec["samples"], eps,
                                sec.get("coupling"), threads=threads)
    write_csv(out / "ids.csv", ["epsilon", "ids", "ci"], curve.rows())
    info = {"shift": curve.shift, "min_eigenvalue": curve.min_eigenvalue}
    try:
        fit = band_edge.lifshitz_fit(curve, sec.get("fit_range"))
        info.update(slope=fit.slope, stderr=fit.stderr, dropped=fit.dropped)
    except InsufficientData as exc:
        info["fit"] = str(exc)
    return info, "ids.csv: x=log(epsilon), y=log(-log(ids))"


def cmd_ct(lat, model, cfg, out, threads):
    sec = cfg["ct"]
    info, rows = {}, []
    for eps in sec["epsilon"]:
        rep = band_edge.combes_thomas_check(lat, model, sec["energy"], sec["radius"],
                                            sec["samples"], eps, sec.get("coupling"),
                                            threads=threads)
        rows += [(eps, k, v) for k, v in rep.rows()]
        info[_fmt(eps)] = {"rate": rep.rate, "kept": rep.kept, "discarded": rep.discarded}
    write_csv(out / "ct.csv", ["epsilon", "distance", "max_abs_entry"], rows)
    return info, "ct.csv: x=distance, y=log(max_abs_entry) per epsilon"


def cmd_converge(lat, model, cfg, out, threads):
    sec = cfg["converge"]
    table = spectra.convergence_test(lat, model, sec["target_energy"], sec["radii"],
                                     sec.get("coupling"), sec.get("sample_index", 0),
                                     sec.get("half_width", 0.25))
    write_csv(out / "converge.csv", ["N", "eigenvalue", "difference"], table.rows())
    return {"eigenvalues": table.eigenvalues}, "converge.csv: x=N, y=log(difference)"


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "artifact": own}


def run(command, config, out_dir, threads=None):
    """Execute ``command``; returns the manifest dict. Raises on errors."""
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}")
    config = copy.deepcopy(config)
    lat, model = validate(config, command)
    if "seed" in config:
        model = lattice.DisorderModel.from_dict(dict(model.to_dict(), master_seed=config["seed"]))
    threads = threads or config.get("threads") or default_threads()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        info, recipe = HANDLERS[command](lat, model, config, out, threads)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    with open(out / f"{command}.plot.txt", "w") as fh:
        fh.write(recipe + "\n")
    manifest = {
        "command": command,
        "config": config,
        "master_seed": int(model.master_seed),
        "threads": int(threads),
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "warnings": [str(w.message) for w in caught],
        "result": info,
        "outputs": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, default=_json_default)
    return manifest


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def build_parser():
    p = argparse.ArgumentParser(prog="kirchloc", description=__doc__.splitlines()[0])
    p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    p.add_argument("--command", choices=COMMANDS, help="command (default: config 'command')")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return 2
        config["seed"] = args.seed
    command = args.command or config.get("command")
    if command is None:
        print("error: no command given (--command or config 'command')", file=sys.stderr)
        return 2
    try:
        run(command, config, args.out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (KirchlocError, ValueError, ArithmeticError) as exc:
        print(f"error in '{command}': {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
