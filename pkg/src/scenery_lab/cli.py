"""Command line: ``scenery-lab <experiment> --config <path> [--seed N] [--out DIR] [--cap-override K=V]``.

Configs are JSON validated against ``config.schema.json``; every violation
is reported with its field path. Outputs are buffered and written once, so a
config and a seed determine every output byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from .exceptions import CapError, InputError, SceneryLabError
from .geometry import (
    PAIR_CAP,
    Arc,
    box_dimension,
    exact_measure_dimension,
    local_dimension,
    minimality_density,
    projection_sweep,
)
from .gibbs import (
    GibbsModel,
    Potential,
    bernoulli_potential,
    build_gibbs,
    gibbs_ratio_bounds,
    lemma_bracket,
    parry_measure,
    quasi_bernoulli_ratio,
    variation_sum,
)
from .ifs import (
    PRESETS,
    SAMPLE_CAP,
    Box,
    Disk,
    IfsSystem,
    MoebiusMap,
    SimilarityMap,
    check_strong_separation,
    natural_measure,
    preset,
    sample_measure,
    similarity_dimension,
)
from .scenery import scenery_walk
from .subsystem import WORD_CAP, extract
from .symbolic import SymbolicSystem, full_shift, is_mixing

log = logging.getLogger("scenery_lab")

EXPERIMENTS = ("check", "dim", "subsystem", "scenery", "distances", "project", "gibbs-verify")
EXIT_INPUT, EXIT_CAP, EXIT_INTERNAL = 1, 2, 3
CAP_KEYS = {"sample_cap": SAMPLE_CAP, "word_cap": WORD_CAP, "pair_cap": PAIR_CAP}

DEFAULT_PARAMS = {
    "check": {"depth": 4, "mode": "hull"},
    "dim": {"points": 100_000, "depth": None, "n_centers": 400},
    "subsystem": {"k": 6, "tau": None},
    "scenery": {"b": 2, "steps": 30, "points_per_frame": 200},
    "distances": {"points": 2000, "depth": 10, "arc_center": 0.7, "arc_width": 0.3},
    "project": {"angles": 36, "depth": 8, "points": 50_000, "minimality_depth": 12, "eps": 0.1},
    "gibbs-verify": {"depth": 8},
}


class ConfigError(InputError):
    def __init__(self, errors: list):
        self.errors = errors
        super().__init__("; ".join(f"{p or '<root>'}: {m}" for p, m in errors))


def _schema() -> dict:
    return json.loads(resources.files("scenery_lab").joinpath("config.schema.json").read_text("utf-8"))


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict = field(repr=False)
    system: IfsSystem = field(repr=False)
    gibbs: GibbsModel = field(repr=False)
    experiment: str = "dim"
    params: dict = field(default_factory=dict)
    seed: int = 0
    output: str = "out"
    caps: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON of every field except the output location."""
    raw = {k: v for k, v in raw.items() if k != "output"}
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path)


def parse_config(raw, experiment: Optional[str] = None, seed: Optional[int] = None,
                 output: Optional[str] = None, caps: Optional[dict] = None) -> ExperimentConfig:
    """Validate a decoded JSON document; raises ConfigError listing every problem."""
    if not isinstance(raw, dict):
        raise ConfigError([("", "config must be a JSON object")])
    raw = dict(raw)
    if experiment is not None:
        raw["experiment"] = experiment
    if seed is not None:
        raw["seed"] = seed
    if output is not None:
        raw["output"] = output
    validator = jsonschema.Draft202012Validator(_schema())
    errors = [(_path(e), e.message) for e in sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))]
    system = gibbs = None
    if not any(p == "system" or p.startswith("system/") for p, _ in errors) and "system" in raw:
        try:
            system = _build_system(raw["system"])
        except InputError as exc:
            errors.append(("system", str(exc)))
    exp = raw.get("experiment")
    params = {}
    if exp in DEFAULT_PARAMS:
        params = dict(DEFAULT_PARAMS[exp])
        for k, v in (raw.get("params") or {}).items():
            if k not in params:
                errors.append((f"params/{k}", f"unknown parameter for {exp}; known: {sorted(params)}"))
            else:
                params[k] = v
    if system is not None and not any(p.startswith("potential") for p, _ in errors):
        try:
            gibbs = _build_gibbs(system, raw.get("potential", "natural"))
        except InputError as exc:
            errors.append(("potential", str(exc)))
    cap_values = dict(CAP_KEYS)
    for k, v in (caps or {}).items():
        if k not in CAP_KEYS:
            errors.append((f"cap-override/{k}", f"unknown cap; known: {sorted(CAP_KEYS)}"))
        else:
            cap_values[k] = v
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(raw, system, gibbs, exp, params, int(raw["seed"]),
                            raw.get("output", "out"), cap_values)


def load_config(path, **overrides) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([("", f"cannot read {p}: {exc.strerror}")]) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}")]) from None
    return parse_config(raw, **overrides)


def _build_system(spec) -> IfsSystem:
    if isinstance(spec, str):
        return preset(spec)
    maps = spec["maps"]
    m = len(maps)
    trans = spec.get("transition")
    s = full_shift(m) if trans is None else SymbolicSystem(np.asarray(trans, dtype=np.int64))
    name = spec.get("name", "inline")
    if spec["kind"] == "similarity":
        dims = {len(mp["translation"]) for mp in maps}
        if len(dims) != 1:
            raise InputError("all maps need translations of the same dimension")
        d = dims.pop()
        built = []
        for mp in maps:
            if d == 1:
                built.append(SimilarityMap.line(mp["ratio"], mp["translation"][0], mp.get("reflect", False)))
            else:
                built.append(SimilarityMap.planar(mp["ratio"], mp.get("angle", 0.0), mp["translation"],
                                                  mp.get("reflect", False)))
        return IfsSystem(s, tuple(built), Box.unit(d), name=name)
    built = tuple(MoebiusMap(*(complex(*mp[k]) for k in "abcd")) for mp in maps)
    pieces = tuple(Disk(complex(*p["center"]), p["radius"]) for p in spec["pieces"])
    return IfsSystem(s, built, Box.unit(2), pieces=pieces, name=name)


def _build_gibbs(system: IfsSystem, spec) -> GibbsModel:
    if spec == "natural":
        return natural_measure(system)
    if spec == "parry":
        return parry_measure(system.symbolic)
    if "bernoulli" in spec:
        return build_gibbs(system.symbolic, bernoulli_potential(spec["bernoulli"]))
    table = {tuple(row["word"]): row["value"] for row in spec["table"]}
    return build_gibbs(system.symbolic, Potential(spec["depth"], table))


# ---------------------------------------------------------------------------
# output


def fmt(x) -> str:
    """Reals with 17 significant digits; everything else via str."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def csv_text(header: list, rows, chash: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    buf.write(f"# config_hash={chash}\n")
    return buf.getvalue()


def _word(w) -> str:
    return "".join(str(int(x)) if x < 10 else f"({int(x)})" for x in w)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


# ---------------------------------------------------------------------------
# experiments


def _default_depth(system: IfsSystem) -> int:
    """Word depth for clouds: planar similarity clouds stay coarse enough to avoid saturation."""
    if system.kind == "similarity":
        r = float(system.ratios.max())
        target = 1e-3 if system.dim == 2 else 1e-9
        return max(4, min(40, math.ceil(math.log(target) / math.log(r))))
    return 12


def run_check(cfg: ExperimentConfig) -> tuple:
    p = cfg.params
    rep = check_strong_separation(cfg.system, p["depth"], p["mode"])
    rows = [[cfg.system.name, rep.passed, rep.depth, rep.gap, rep.all_depths,
             "" if rep.pair is None else _word(rep.pair[0]), "" if rep.pair is None else _word(rep.pair[1]),
             rep.mode]]
    files = {"separation.csv": (["system", "passed", "depth", "gap", "all_depths", "pair_u", "pair_v", "mode"], rows)}
    return files, {"passed": rep.passed, "report": str(rep)}


def run_dim(cfg: ExperimentConfig) -> tuple:
    p, system, g = cfg.params, cfg.system, cfg.gibbs
    depth = p["depth"] or _default_depth(system)
    cloud = sample_measure(system, g, p["points"], depth, cfg.seed, cap=cfg.caps["sample_cap"])
    est = [box_dimension(cloud), local_dimension(cloud, n_centers=p["n_centers"], seed=cfg.seed)]
    exact = None
    if system.kind == "similarity" and check_strong_separation(system).passed:
        exact = exact_measure_dimension(system, g)
    rows = [[e.method, e.value, e.slope_stderr, len(e.scales)] for e in est]
    if exact is not None:
        rows.append(["exact_formula", exact, 0.0, 0])
    scales = [[e.method, a, b] for e in est for a, b in e.scales]
    files = {"estimates.csv": (["method", "value", "stderr", "n_scales"], rows),
             "scales.csv": (["method", "log_inv_r", "log_count"], scales)}
    return files, {"value": est[0].value, "local_dimension": est[1].value, "exact_dimension": exact,
                   "depth": depth, "points": cloud.n, "caveat": est[0].caveat}


def run_subsystem(cfg: ExperimentConfig) -> tuple:
    p = cfg.params
    res = extract(cfg.system, p["k"], p["tau"], cap=cfg.caps["word_cap"])
    d = res.centers.shape[1]
    header = ["word", "lip_minus", "lip_plus"] + ["x", "y", "z"][:d] + ["radius"]
    rows = [[_word(w), lo, hi, *c, r] for w, lo, hi, c, r in
            zip(res.words, res.lip_minus, res.lip_plus, res.centers, res.radii)]
    oracle = cfg.system.oracle_dimension
    summary = {"t_k": res.t_k, "k": res.k, "tau": res.tau, "n_words": res.n_words,
               "moran_sum": res.moran_sum(), "separation": res.separation.passed,
               "cover_constant": res.cover_constant, "oracle_dimension": oracle,
               "dropped_uncertified": res.dropped_uncertified}
    files = {"subsystem.csv": (header, rows),
             "subsystem_summary.csv": (["k", "tau", "t_k", "n_words", "C"],
                                       [[res.k, res.tau, res.t_k, res.n_words, res.cover_constant]])}
    return files, summary


def run_scenery(cfg: ExperimentConfig) -> tuple:
    p = cfg.params
    walk = scenery_walk(cfg.system, cfg.gibbs, cfg.seed, p["b"], p["steps"], p["points_per_frame"])
    d = cfg.system.dim
    header = ["level", "box_index", "parent_mass"] + ["x", "y", "z"][:d] + ["weight"]
    rows, ent = [], []
    for f in walk.frames:
        idx = " ".join(str(i) for i in f.box.index)
        for pt, w in zip(f.measure.points, f.measure.weights):
            rows.append([f.level, idx, f.parent_mass, *pt, w])
        ent.append([f.level, idx, f.log_parent_mass, f.entropy()])
    summary = {"stop_level": walk.stop_level, "truncated": walk.truncated, "exact": walk.exact,
               "entropy_dimension": walk.entropy_dimension() if walk.frames else None}
    files = {"frames.csv": (header, rows),
             "walk.csv": (["level", "box_index", "log_parent_mass", "entropy"], ent)}
    return files, summary


def run_distances(cfg: ExperimentConfig) -> tuple:
    from .geometry import distance_set, restricted_distance_set

    p = cfg.params
    if cfg.system.dim != 2:
        raise InputError("distance experiments need a planar system")
    cloud = sample_measure(cfg.system, cfg.gibbs, p["points"], p["depth"], cfg.seed, cap=cfg.caps["sample_cap"])
    dist = distance_set(cloud, cfg.caps["pair_cap"], cfg.seed)
    arc = Arc(p["arc_center"], p["arc_width"])
    rdist = restricted_distance_set(cloud, [arc], cfg.caps["pair_cap"], cfg.seed)
    rows = []
    out = {}
    for name, sample in (("distance_set", dist), ("restricted_distance_set", rdist)):
        if sample.size >= 1000:
            e = box_dimension(sample)
            rows.append([name, sample.size, e.value, e.slope_stderr])
            out[name] = e.value
        else:
            rows.append([name, sample.size, "nan", "nan"])
            out[name] = None
    return {"distances.csv": (["set", "n_pairs", "value", "stderr"], rows)}, out


def run_project(cfg: ExperimentConfig) -> tuple:
    p = cfg.params
    sweep = projection_sweep(cfg.system, cfg.gibbs, p["angles"], p["depth"], p["points"], cfg.seed)
    rows = [[t, e.value, e.slope_stderr] for t, e in zip(sweep.thetas, sweep.estimates)]
    summary = {"min_value": sweep.min_value, "reference": sweep.reference, "full_dimension": sweep.full.value}
    if cfg.system.kind == "similarity":
        mini = minimality_density(cfg.system, p["minimality_depth"], p["eps"])
        summary.update(minimality=mini.passed, minimality_gap=mini.gap)
    return {"sweep.csv": (["theta", "value", "stderr"], rows)}, summary


def run_gibbs_verify(cfg: ExperimentConfig) -> tuple:
    g, depth = cfg.gibbs, cfg.params["depth"]
    c1, c2 = gibbs_ratio_bounds(g, depth)
    qlo, qhi = quasi_bernoulli_ratio(g, min(depth, 6))
    blo, bhi = lemma_bracket(c1, c2, variation_sum(g.potential))
    ok = bool(0 < c1 <= c2 < math.inf and blo * (1 - 1e-9) <= qlo and qhi <= bhi * (1 + 1e-9))
    rows = [[depth, g.pressure, c1, c2, qlo, qhi, blo, bhi, ok]]
    header = ["depth", "pressure", "c1", "c2", "qb_lo", "qb_hi", "bracket_lo", "bracket_hi", "inside"]
    return {"gibbs.csv": (header, rows)}, {"c1": c1, "c2": c2, "inside": ok, "mixing": is_mixing(g.system)}


RUNNERS = {"check": run_check, "dim": run_dim, "subsystem": run_subsystem, "scenery": run_scenery,
           "distances": run_distances, "project": run_project, "gibbs-verify": run_gibbs_verify}


def run(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> Path:
    """Run the experiment and write CSVs plus summary.json; returns the output directory."""
    files, summary = RUNNERS[cfg.experiment](cfg)
    chash = cfg.hash
    out = Path(out_dir or cfg.output)
    texts = {name: csv_text(h, rows, chash) for name, (h, rows) in files.items()}
    meta = {"config_hash": chash, "experiment": cfg.experiment, "seed": cfg.seed,
            "system": cfg.system.name, "params": cfg.params, "caps": cfg.caps,
            "versions": {"scenery_lab": __version__, "numpy": np.__version__}, "result": summary}
    texts["summary.json"] = json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n"
    out.mkdir(parents=True, exist_ok=True)
    for name, text in texts.items():
        with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return out


# ---------------------------------------------------------------------------
# entry point


def _parse_cap(text: str) -> tuple:
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected K=V")
    k, v = text.split("=", 1)
    try:
        return k.strip(), int(float(v))
    except ValueError:
        raise argparse.ArgumentTypeError(f"cap value {v!r} is not a number") from None


def _presets_table() -> str:
    lines = ["name,kind,alphabet,oracle_dimension"]
    for name in sorted(PRESETS):
        s = preset(name)
        oracle = s.oracle_dimension
        if oracle is None and s.kind == "similarity":
            oracle = similarity_dimension(s)
        lines.append(f"{name},{s.kind},{s.alphabet_size},{'' if oracle is None else fmt(oracle)}")
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scenery-lab", description="IFS, Gibbs measure and scenery experiments")
    ap.add_argument("experiment", choices=EXPERIMENTS + ("presets",))
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--cap-override", action="append", default=[], type=_parse_cap, metavar="K=V",
                    help=f"raise or lower a cap; keys: {', '.join(sorted(CAP_KEYS))}")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.experiment == "presets":
            sys.stdout.write(_presets_table())
            return 0
        if not args.config:
            raise ConfigError([("", "--config is required")])
        cfg = load_config(args.config, experiment=args.experiment, seed=args.seed, output=args.out,
                          caps=dict(args.cap_override))
        out = run(cfg)
        log.info("wrote %s", out)
        return 0
    except ConfigError as exc:
        for path, msg in exc.errors:
            print(f"config error at {path or '<root>'}: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except CapError as exc:
        print(f"cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SceneryLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
