"""Command-line experiment runner.

Commands
--------
gen           write datasets (latent CSVs or text corpora) over a kappa/seed grid
inlp          iterative-projection removal traces per (kappa, seed)
adv           adversarial training traces at a fixed lambda per (kappa, seed)
sweep         lambda sweeps per (kappa, seed)
theory-check  margin-condition audit over seeded 1-D instances, one CSV
report        long-format figure CSV plus a plain-text acceptance table

Config files are ini-style: `[section]` headers, `key = value` lines, arrays
comma-separated. Every run writes a manifest.csv listing each artifact with
its sha256 and the realized label correlation of the cell that produced it;
cell failures are recorded there instead of aborting the rest of the grid.

Exit codes: 0 ok, 1 config error, 2 runtime failure (including partial cell
failures), 3 failed acceptance verdict under `report --check`.
"""

from __future__ import annotations

import argparse
import csv
import configparser
import hashlib
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adversarial as adv
from . import experiments as exp
from . import inlp as inlp_mod
from . import text as text_mod
from .latent import GenConfig, compute_kappa, gen_disentangled, save_dataset

RUN_COMMANDS = ("gen", "inlp", "adv", "sweep", "theory-check")
COMMANDS = RUN_COMMANDS + ("report",)

SUMMARY_FIELDS = ("kappa", "x", "field", "mean", "sd")
MANIFEST_FIELDS = ("path", "sha256", "kappa", "seed", "kappa_realized", "status", "detail")
REPORT_FIELDS = ("series", "x", "y", "y_sd")
THEORY_FIELDS = (
    "seed",
    "task",
    "a32",
    "a33",
    "spurious_using",
    "alpha_lb",
    "perturbed_margin",
    "base_margin",
    "iff_agree",
)

KNOWN_KEYS = {
    "experiment": {"command", "kappas", "seeds", "out"},
    "dataset": {
        "kind",
        "n_points",
        "d_main",
        "d_spurious",
        "class_separation",
        "feature_noise_sd",
        "label_noise",
    },
    "inlp": {"iters"},
    "adv": {"lambda", "lambdas", "epochs"},
    "theory": {"n_seeds"},
}


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    command: str
    out: str
    kappas: tuple = ()
    seeds: tuple = ()
    kind: str = "latent"
    n_points: int = 1000
    d_main: int = 50
    d_spurious: int = 50
    class_separation: float = 2.0
    feature_noise_sd: float = 1.0
    label_noise: float = 0.0
    inlp_iters: int = 20
    adv_lambda: float = 1.0
    adv_lambdas: tuple = field(default_factory=lambda: tuple(adv.LAMBDA_GRID))
    adv_epochs: int | None = None
    theory_seeds: tuple = ()


def _key_line(text, section, key):
    """1-based line number of `key` inside `[section]`, if findable."""
    current = None
    pat = re.compile(rf"^{re.escape(key)}\s*[=:]")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            continue
        if current == section and pat.match(stripped):
            return lineno
    return None


def _diag(text, section, key, message):
    where = f"[{section}] {key}"
    lineno = _key_line(text, section, key)
    if lineno is not None:
        where += f" (line {lineno})"
    return f"{where}: {message}"


def _parse_scalar(raw, kind):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "str":
        return raw
    raise AssertionError(kind)


def _get(cp, text, section, key, kind, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    try:
        if kind in ("floats", "ints"):
            items = [tok.strip() for tok in raw.split(",") if tok.strip()]
            return tuple(_parse_scalar(tok, kind[:-1]) for tok in items)
        return _parse_scalar(raw, kind)
    except ValueError:
        raise ConfigError(_diag(text, section, key, f"invalid {kind} value {raw!r}")) from None


def load_config(path, command, out_flag=None, seed_offset=0):
    """Parse and validate an experiment config for `command`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None

    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(str(e)) from None

    if cp.defaults():
        raise ConfigError("[DEFAULT] section is not supported; use explicit sections")
    for section in cp.sections():
        if section not in KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(cp.options(section)) - KNOWN_KEYS[section]
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(_diag(text, section, key, "unknown key"))

    cfg_command = _get(cp, text, "experiment", "command", "str")
    if command != "report" and cfg_command is not None and cfg_command != command:
        raise ConfigError(
            _diag(text, "experiment", "command",
                  f"config is for {cfg_command!r} but {command!r} was requested")
        )

    out = out_flag or _get(cp, text, "experiment", "out", "str")
    if not out:
        raise ConfigError("output directory not set; pass --out or set [experiment] out")

    cfg = RunConfig(command=command, out=out)
    if command == "report":
        return cfg

    cfg.kind = _get(cp, text, "dataset", "kind", "str", "latent")
    if cfg.kind not in ("latent", "text"):
        raise ConfigError(_diag(text, "dataset", "kind", f"must be latent or text, got {cfg.kind!r}"))
    cfg.n_points = _get(cp, text, "dataset", "n_points", "int", 1000)
    cfg.d_main = _get(cp, text, "dataset", "d_main", "int", 50)
    cfg.d_spurious = _get(cp, text, "dataset", "d_spurious", "int", 50)
    cfg.class_separation = _get(cp, text, "dataset", "class_separation", "float", 2.0)
    cfg.feature_noise_sd = _get(cp, text, "dataset", "feature_noise_sd", "float", 1.0)
    cfg.label_noise = _get(cp, text, "dataset", "label_noise", "float", 0.0)
    for key, value in (("n_points", cfg.n_points), ("d_main", cfg.d_main), ("d_spurious", cfg.d_spurious)):
        if value < 1:
            raise ConfigError(_diag(text, "dataset", key, f"must be positive, got {value}"))
    if not 0.0 <= cfg.label_noise < 0.5:
        raise ConfigError(_diag(text, "dataset", "label_noise", f"must lie in [0, 0.5), got {cfg.label_noise}"))

    cfg.inlp_iters = _get(cp, text, "inlp", "iters", "int", 20)
    if cfg.inlp_iters < 1:
        raise ConfigError(_diag(text, "inlp", "iters", f"must be positive, got {cfg.inlp_iters}"))
    cfg.adv_lambda = _get(cp, text, "adv", "lambda", "float", 1.0)
    cfg.adv_lambdas = _get(cp, text, "adv", "lambdas", "floats", tuple(adv.LAMBDA_GRID))
    cfg.adv_epochs = _get(cp, text, "adv", "epochs", "int", None)
    if cfg.adv_epochs is not None and cfg.adv_epochs < 1:
        raise ConfigError(_diag(text, "adv", "epochs", f"must be positive, got {cfg.adv_epochs}"))

    if command == "theory-check":
        n_seeds = _get(cp, text, "theory", "n_seeds", "int", 50)
        if n_seeds < 1:
            raise ConfigError(_diag(text, "theory", "n_seeds", f"must be positive, got {n_seeds}"))
        cfg.theory_seeds = tuple(range(seed_offset, seed_offset + n_seeds))
        return cfg

    kappas = _get(cp, text, "experiment", "kappas", "floats")
    if kappas is None:
        raise ConfigError(f"[experiment] kappas is required for the {command} command")
    if not kappas:
        raise ConfigError(_diag(text, "experiment", "kappas", "kappa list is empty"))
    for k in kappas:
        if not 0.5 <= k <= 1.0:
            raise ConfigError(_diag(text, "experiment", "kappas", f"kappa {k} outside [0.5, 1]"))
    seeds = _get(cp, text, "experiment", "seeds", "ints")
    if seeds is None:
        raise ConfigError(f"[experiment] seeds is required for the {command} command")
    if not seeds:
        raise ConfigError(_diag(text, "experiment", "seeds", "seed list is empty"))
    cfg.kappas = tuple(sorted(set(kappas)))
    cfg.seeds = tuple(sorted(s + seed_offset for s in set(seeds)))

    if command == "inlp" and cfg.kind == "latent" and cfg.label_noise != 0.0:
        raise ConfigError(
            _diag(text, "dataset", "label_noise",
                  "latent removal runs train a clean classifier; use kind = text for noisy labels")
        )
    if command in ("adv", "sweep") and cfg.kind != "text":
        raise ConfigError(
            _diag(text, "dataset", "kind", f"the {command} command supports kind = text only")
        )
    return cfg


# ---------------------------------------------------------------------------
# work cells
# ---------------------------------------------------------------------------


def _fmt(v):
    return "" if v is None else repr(float(v))


def _kfmt(kappa):
    return format(kappa, "g")


def _build_cells(cfg: RunConfig):
    if cfg.command == "theory-check":
        return [{"command": "theory-check", "out": cfg.out, "kappa": None, "seed": s} for s in cfg.theory_seeds]
    cells = []
    for kappa in cfg.kappas:
        for seed in cfg.seeds:
            cells.append(
                {
                    "command": cfg.command,
                    "out": cfg.out,
                    "kappa": kappa,
                    "seed": seed,
                    "kind": cfg.kind,
                    "n_points": cfg.n_points,
                    "d_main": cfg.d_main,
                    "d_spurious": cfg.d_spurious,
                    "class_separation": cfg.class_separation,
                    "feature_noise_sd": cfg.feature_noise_sd,
                    "label_noise": cfg.label_noise,
                    "iters": cfg.inlp_iters,
                    "lam": cfg.adv_lambda,
                    "lambdas": tuple(cfg.adv_lambdas),
                    "epochs": cfg.adv_epochs,
                }
            )
    return cells


def _latent_cfg(cell):
    return GenConfig(
        n_points=cell["n_points"],
        d_m=cell["d_main"],
        d_p=cell["d_spurious"],
        kappa_target=cell["kappa"],
        class_separation=cell["class_separation"],
        feature_noise_sd=cell["feature_noise_sd"],
        label_noise_rate=cell["label_noise"],
        seed=cell["seed"],
    )


def _cell_gen(cell, out):
    kappa, seed = cell["kappa"], cell["seed"]
    if cell["kind"] == "latent":
        ds = gen_disentangled(_latent_cfg(cell))
        name = f"dataset_k{_kfmt(kappa)}_s{seed}.csv"
        save_dataset(ds, out / name)
        realized = compute_kappa(ds.y_main, ds.y_concept)
        files = [name, name + ".meta"]
    else:
        corpus = text_mod.gen_corpus(cell["n_points"], kappa, seed)
        name = f"corpus_k{_kfmt(kappa)}_s{seed}.txt"
        text_mod.save_corpus(corpus, out / name)
        realized = compute_kappa(corpus.y_main, corpus.y_concept)
        files = [name, name + ".labels.csv"]
    rows = [(kappa, 0.0, "kappa_realized", realized)]
    return files, realized, rows


def _cell_inlp(cell, out):
    kappa, seed = cell["kappa"], cell["seed"]
    if cell["kind"] == "latent":
        trace = exp.latent_inlp_run(
            kappa,
            seed,
            n_iters=cell["iters"],
            n=cell["n_points"],
            d_m=cell["d_main"],
            d_p=cell["d_spurious"],
            sep=cell["class_separation"],
            sd=cell["feature_noise_sd"],
        )
        ds = gen_disentangled(_latent_cfg(cell))
        realized = compute_kappa(ds.y_main, ds.y_concept)
    else:
        result = exp.text_inlp_run(
            kappa, seed, n_iters=cell["iters"], noise=cell["label_noise"], n=cell["n_points"]
        )
        trace = result.trace
        enc = exp.encoded_text(kappa, seed, cell["n_points"])
        realized = compute_kappa(enc.y_main, enc.y_concept)
    name = f"inlp_trace_k{_kfmt(kappa)}_s{seed}.csv"
    inlp_mod.write_trace(trace, out / name)
    rows = []
    for s in trace.steps:
        for fname, value in (
            ("probe_acc_pre", s.probe_acc_pre),
            ("main_acc_all", s.main_acc_all),
            ("main_acc_min", s.main_acc_min),
            ("probe_spuriousness", s.probe_spuriousness),
            ("mean_norm", s.mean_norm),
            ("delta_prob", s.delta_prob),
        ):
            if value is not None:
                rows.append((kappa, float(s.iteration), fname, float(value)))
    return [name], realized, rows


def _cell_adv(cell, out):
    kappa, seed = cell["kappa"], cell["seed"]
    _, trace = exp.adv_run(
        kappa, seed, cell["lam"], noise=cell["label_noise"], epochs=cell["epochs"], n=cell["n_points"]
    )
    enc = exp.encoded_text(kappa, seed, cell["n_points"])
    realized = compute_kappa(enc.y_main, enc.y_concept)
    name = f"adv_trace_k{_kfmt(kappa)}_s{seed}.csv"
    adv.write_adv_trace(trace, out / name)
    rows = []
    for r in trace.rows:
        for fname, value in (
            ("main_loss", r.main_loss),
            ("probe_loss", r.probe_loss),
            ("main_acc", r.main_acc),
            ("probe_acc", r.probe_acc),
            ("main_spuriousness", r.main_spuriousness),
        ):
            if value is not None:
                rows.append((kappa, float(r.epoch), fname, float(value)))
    return [name], realized, rows


def _cell_sweep(cell, out):
    kappa, seed = cell["kappa"], cell["seed"]
    result = exp.adv_floor_run(
        kappa,
        seed,
        noise=cell["label_noise"],
        lambdas=tuple(cell["lambdas"]),
        n=cell["n_points"],
        epochs=cell["epochs"],
    )
    enc = exp.encoded_text(kappa, seed, cell["n_points"])
    realized = compute_kappa(enc.y_main, enc.y_concept)
    name = f"sweep_k{_kfmt(kappa)}_s{seed}.csv"
    adv.write_sweep(result.sweep, out / name)
    rows = []
    for r in result.sweep.rows:
        for fname, value in (
            ("final_main_acc", r.final_main_acc),
            ("final_probe_acc", r.final_probe_acc),
            ("final_spuriousness", r.final_spuriousness),
        ):
            if value is not None:
                rows.append((kappa, float(r.lam), fname, float(value)))
    return [name], realized, rows


def _cell_theory(cell):
    row = exp.theory_check_row(cell["seed"])
    return {
        "seed": row.seed,
        "task": row.task,
        "a32": int(row.a32),
        "a33": int(row.a33),
        "spurious_using": int(row.spurious_using),
        "alpha_lb": row.alpha_lb,
        "perturbed_margin": row.perturbed_margin,
        "base_margin": row.base_margin,
        "iff_agree": int(row.iff_agree),
    }


def _run_cell(cell):
    """Execute one work cell, trapping failures for the manifest."""
    out = Path(cell["out"])
    result = {
        "kappa": cell["kappa"],
        "seed": cell["seed"],
        "status": "ok",
        "detail": "",
        "files": [],
        "realized": None,
        "rows": [],
        "theory_row": None,
    }
    try:
        command = cell["command"]
        if command == "gen":
            result["files"], result["realized"], result["rows"] = _cell_gen(cell, out)
        elif command == "inlp":
            result["files"], result["realized"], result["rows"] = _cell_inlp(cell, out)
        elif command == "adv":
            result["files"], result["realized"], result["rows"] = _cell_adv(cell, out)
        elif command == "sweep":
            result["files"], result["realized"], result["rows"] = _cell_sweep(cell, out)
        elif command == "theory-check":
            result["theory_row"] = _cell_theory(cell)
        else:
            raise ValueError(f"unknown command {command!r}")
    except Exception as e:  # cell failures are data, not crashes
        result["status"] = "failed"
        result["detail"] = " ".join(f"{type(e).__name__}: {e}".split())
    return result


# ---------------------------------------------------------------------------
# aggregation and artifacts
# ---------------------------------------------------------------------------


def _write_csv(path, header, rows):
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _aggregate(rows):
    """(kappa, x, field, value) tuples -> summary rows with mean and sd."""
    groups = {}
    for kappa, x, fname, value in rows:
        groups.setdefault((kappa, x, fname), []).append(value)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2])):
        vals = groups[key]
        mean = float(np.mean(vals))
        sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        out.append((_fmt(key[0]), _fmt(key[1]), key[2], _fmt(mean), _fmt(sd)))
    return out


def _write_theory_csv(path, rows):
    body = []
    for r in sorted(rows, key=lambda r: r["seed"]):
        body.append(
            [
                r["seed"],
                r["task"],
                r["a32"],
                r["a33"],
                r["spurious_using"],
                _fmt(r["alpha_lb"]),
                _fmt(r["perturbed_margin"]),
                _fmt(r["base_margin"]),
                r["iff_agree"],
            ]
        )
    _write_csv(path, THEORY_FIELDS, body)


def _manifest_rows(out, results, extra_files):
    rows = []
    for res in results:
        kfield = "" if res["kappa"] is None else _kfmt(res["kappa"])
        if res["status"] == "failed":
            cell_id = f"cell_k{kfield}_s{res['seed']}" if kfield else f"cell_s{res['seed']}"
            rows.append([cell_id, "", kfield, res["seed"], "", "failed", res["detail"]])
            continue
        for name in res["files"]:
            rows.append(
                [name, _sha256(out / name), kfield, res["seed"], _fmt(res["realized"]), "ok", ""]
            )
    for name in extra_files:
        rows.append([name, _sha256(out / name), "", "", "", "ok", ""])
    rows.sort(key=lambda r: r[0])
    return rows


def run_command(cfg: RunConfig, workers=1):
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"output directory {out} is not writable: {e}") from None

    cells = _build_cells(cfg)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    results.sort(key=lambda r: (r["kappa"] if r["kappa"] is not None else -1.0, r["seed"]))

    extra_files = []
    if cfg.command == "theory-check":
        theory_rows = [r["theory_row"] for r in results if r["theory_row"] is not None]
        _write_theory_csv(out / "theory_check.csv", theory_rows)
        extra_files.append("theory_check.csv")
    else:
        summary_rows = [row for r in results for row in r["rows"]]
        summary_name = f"summary_{cfg.command}.csv"
        _write_csv(out / summary_name, SUMMARY_FIELDS, _aggregate(summary_rows))
        extra_files.append(summary_name)
        if cfg.command == "gen" and cfg.kind == "text":
            text_mod.save_table(exp.embedding_table(), out / "embedding_table.csv")
            extra_files.append("embedding_table.csv")

    _write_csv(out / "manifest.csv", MANIFEST_FIELDS, _manifest_rows(out, results, extra_files))

    failed = [r for r in results if r["status"] == "failed"]
    n_files = sum(len(r["files"]) for r in results) + len(extra_files)
    print(f"{cfg.command}: wrote {n_files} files to {out} ({len(failed)} of {len(results)} cells failed)")
    for r in failed:
        print(f"  failed cell kappa={r['kappa']} seed={r['seed']}: {r['detail']}", file=sys.stderr)
    return 2 if failed else 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _read_summary(path):
    with open(str(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != SUMMARY_FIELDS:
        raise ValueError(f"unrecognized summary header in {path}")
    return [
        {"kappa": float(r[0]), "x": float(r[1]), "field": r[2], "mean": float(r[3]), "sd": float(r[4])}
        for r in rows[1:]
    ]


def _parse_cell_name(stem):
    m = re.search(r"_k([0-9.]+)_s(\d+)$", stem)
    if m is None:
        raise ValueError(f"cannot parse kappa/seed from {stem!r}")
    return float(m.group(1)), int(m.group(2))


def _read_theory_csv(path):
    with open(str(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != THEORY_FIELDS:
        raise ValueError(f"unrecognized theory-check header in {path}")
    out = []
    for r in rows[1:]:
        out.append(
            {
                "seed": int(r[0]),
                "task": r[1],
                "a32": bool(int(r[2])),
                "a33": bool(int(r[3])),
                "spurious_using": bool(int(r[4])),
                "alpha_lb": None if r[5] == "" else float(r[5]),
                "perturbed_margin": None if r[6] == "" else float(r[6]),
                "base_margin": None if r[7] == "" else float(r[7]),
                "iff_agree": bool(int(r[8])),
            }
        )
    return out


def _first_below(rows, threshold):
    for rec in rows:
        if rec["iter"] >= 1 and rec["main_acc_all"] is not None and rec["main_acc_all"] < threshold:
            return rec["iter"]
    return None


def _check_final_band(traces):
    finals = {}
    for (kappa, seed), rows in traces.items():
        if kappa > 0.5:
            finals.setdefault(kappa, []).append(rows[-1]["main_acc_all"])
    if not finals:
        return ("SKIP", "no removal traces above kappa=0.5")
    worst_kappa, worst_dist, worst_val = None, -1.0, None
    for kappa, vals in sorted(finals.items()):
        val = float(np.mean(vals))
        dist = abs(val - 0.5)
        if dist > worst_dist:
            worst_kappa, worst_dist, worst_val = kappa, dist, val
    ok = worst_dist <= 0.05
    detail = f"extreme seed-mean final accuracy {worst_val:.4f} at kappa={_kfmt(worst_kappa)}"
    return ("PASS" if ok else "FAIL", detail)


def _check_drop_monotone(traces):
    by_seed = {}
    for (kappa, seed), rows in traces.items():
        if kappa > 0.5:
            by_seed.setdefault(seed, []).append((kappa, rows))
    checked = []
    for seed, items in sorted(by_seed.items()):
        if len(items) < 2:
            continue
        items.sort()
        drops = [_first_below(rows, 0.90) for _, rows in items]
        drops = [float("inf") if d is None else d for d in drops]
        if any(b > a for a, b in zip(drops, drops[1:])):
            return ("FAIL", f"seed {seed}: first-drop iterations {drops} not non-increasing in kappa")
        checked.append(seed)
    if not checked:
        return ("SKIP", "need at least two kappa levels above 0.5 for a seed")
    return ("PASS", f"seeds checked: {', '.join(str(s) for s in checked)}")


def _check_control_flat(traces):
    controls = {key: rows for key, rows in traces.items() if key[0] == 0.5}
    if not controls:
        return ("SKIP", "no kappa=0.5 traces")
    worst = 0.0
    for rows in controls.values():
        base = rows[0]["main_acc_all"]
        for rec in rows:
            worst = max(worst, abs(rec["main_acc_all"] - base))
    return ("PASS" if worst < 0.03 else "FAIL", f"max accuracy drift {worst:.4f}")


def _check_probe_blowup(traces):
    peaks = {}
    for (kappa, seed), rows in traces.items():
        if kappa < 0.8:
            continue
        vals = [
            rec["probe_spuriousness"]
            for rec in rows
            if 1 <= rec["iter"] <= 5 and rec["probe_spuriousness"] is not None
        ]
        peaks.setdefault(kappa, []).append(max(vals) if vals else 0.0)
    if not peaks:
        return ("SKIP", "no traces with kappa >= 0.8")
    worst_peak, worst_kappa = None, None
    for kappa, vals in sorted(peaks.items()):
        peak = float(np.mean(vals))
        if worst_peak is None or peak < worst_peak:
            worst_peak, worst_kappa = peak, kappa
    ok = worst_peak > 0.5
    detail = f"smallest seed-mean early peak {worst_peak:.4f} at kappa={_kfmt(worst_kappa)}"
    return ("PASS" if ok else "FAIL", detail)


def _check_sweep_floor(sweeps):
    if not sweeps:
        return ("SKIP", "no sweep files")
    for (kappa, seed), rows in sorted(sweeps.items()):
        best = [r for r in rows if r["is_best"]]
        if not best:
            return ("FAIL", f"kappa={_kfmt(kappa)} seed={seed}: no selected lambda")
        row = best[0]
        acc = row["final_probe_acc"]
        psi = row["final_spuriousness"]
        if acc is None or abs(acc - kappa) > 0.05:
            return ("FAIL", f"kappa={_kfmt(kappa)} seed={seed}: probe accuracy {acc} outside +/-0.05")
        if psi is None or psi <= 0.1:
            return ("FAIL", f"kappa={_kfmt(kappa)} seed={seed}: main spuriousness {psi} not above 0.1")
    return ("PASS", f"{len(sweeps)} sweeps within the probe-accuracy band with residual spuriousness")


def _check_theory_agreement(theory_rows):
    if theory_rows is None:
        return ("SKIP", "theory_check.csv not found")
    agree = sum(1 for r in theory_rows if r["iff_agree"])
    ok = agree == len(theory_rows)
    return ("PASS" if ok else "FAIL", f"{agree}/{len(theory_rows)} instances agree")


def _check_theory_margins(theory_rows):
    if theory_rows is None:
        return ("SKIP", "theory_check.csv not found")
    margins = [r["perturbed_margin"] for r in theory_rows if r["perturbed_margin"] is not None]
    if not margins:
        return ("SKIP", "no perturbed-margin rows")
    worst = min(margins)
    return ("PASS" if worst > 1.0 - 1e-6 else "FAIL", f"minimum perturbed margin {worst:.6f}")


def _acceptance_lines(out):
    traces = {}
    for path in sorted(out.glob("inlp_trace_k*_s*.csv")):
        traces[_parse_cell_name(path.stem)] = inlp_mod.read_trace(path)
    sweeps = {}
    for path in sorted(out.glob("sweep_k*_s*.csv")):
        sweeps[_parse_cell_name(path.stem)] = adv.read_sweep(path)
    theory_path = out / "theory_check.csv"
    theory_rows = _read_theory_csv(theory_path) if theory_path.exists() else None

    checks = [
        ("final main accuracy in [0.45, 0.55] for kappa > 0.5", _check_final_band(traces)),
        ("first iteration below 0.90 main accuracy non-increasing in kappa", _check_drop_monotone(traces)),
        ("kappa=0.5 control accuracy drift below 0.03", _check_control_flat(traces)),
        ("probe spuriousness above 0.5 within 5 iterations for kappa >= 0.8", _check_probe_blowup(traces)),
        ("swept-lambda probe accuracy within kappa +/- 0.05 and main spuriousness above 0.1", _check_sweep_floor(sweeps)),
        ("1-D spurious-use iff margin-separability agreement at 100%", _check_theory_agreement(theory_rows)),
        ("perturbed classifiers keep every functional margin above 1", _check_theory_margins(theory_rows)),
    ]
    lines = ["acceptance checks", "-----------------"]
    n_fail = 0
    for label, (status, detail) in checks:
        n_fail += status == "FAIL"
        lines.append(f"[{status}] {label}: {detail}")
    return lines, n_fail


def report_command(out_dir, check=False):
    out = Path(out_dir)
    candidates = [f"summary_{c}.csv" for c in ("gen", "inlp", "adv", "sweep")]
    present = [name for name in candidates if (out / name).exists()]
    if not present:
        missing = ", ".join(candidates)
        print(f"report: no summary inputs in {out}; looked for {missing}", file=sys.stderr)
        return 2

    rows = []
    inputs = list(present)
    for name in present:
        for rec in _read_summary(out / name):
            series = f"{rec['field']}|kappa={_kfmt(rec['kappa'])}"
            rows.append((series, rec["x"], rec["mean"], rec["sd"]))
    rows.sort(key=lambda r: (r[0], r[1]))
    _write_csv(
        out / "report.csv",
        REPORT_FIELDS,
        [(series, _fmt(x), _fmt(y), _fmt(sd)) for series, x, y, sd in rows],
    )

    lines, n_fail = _acceptance_lines(out)
    (out / "acceptance.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for pattern in ("inlp_trace_k*_s*.csv", "sweep_k*_s*.csv", "theory_check.csv"):
        inputs.extend(sorted(p.name for p in out.glob(pattern)))

    manifest = [[name, _sha256(out / name), "", "", "", "input", ""] for name in inputs]
    for name in ("report.csv", "acceptance.txt"):
        manifest.append([name, _sha256(out / name), "", "", "", "ok", ""])
    manifest.sort(key=lambda r: r[0])
    _write_csv(out / "manifest_report.csv", MANIFEST_FIELDS, manifest)

    print("\n".join(lines))
    print(f"report: wrote report.csv and acceptance.txt to {out}")
    if check and n_fail:
        print(f"report --check: {n_fail} acceptance check(s) failed", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser():
    parser = _Parser(prog="erasure-lab", description="concept-removal experiment runner")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="ini-style experiment config")
    parser.add_argument("--out", default=None, help="output directory (overrides [experiment] out)")
    parser.add_argument("--workers", type=int, default=1, help="parallel work cells")
    parser.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
    parser.add_argument(
        "--check", action="store_true", help="report: exit 3 when an acceptance verdict fails"
    )
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.workers < 1:
            raise ConfigError(f"--workers must be positive, got {args.workers}")
        if args.command == "report":
            out = args.out
            if out is None and args.config is not None:
                out = load_config(args.config, "report", None, 0).out
            if out is None:
                raise ConfigError("report needs an output directory; pass --out or a config with [experiment] out")
            return report_command(out, check=args.check)
        if args.config is None:
            raise ConfigError(f"--config is required for the {args.command} command")
        cfg = load_config(args.config, args.command, args.out, args.seed_offset)
        return run_command(cfg, workers=args.workers)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
