"""Command-line front end.

Exit codes: 0 success, 2 bad flags or configuration, 3 unreadable or corrupt
input, 4 rate inference did not converge. Every output ``X`` is accompanied
by ``X.manifest.json`` recording parameters and input/output digests.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import accidentals, coincidence, gaussian_oracle, pipeline, rates, simulator
from .tagstream import TagFileWriter, TagStreamError, iter_tag_file, read_header


class ConfigError(Exception):
    pass


EXIT_CONFIG, EXIT_IO, EXIT_NOCONV = 2, 3, 4


# --- helpers ---------------------------------------------------------------------------

def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _atomic_write(path: Path, write) -> None:
    """Write via a temporary file so a failure never leaves partial output."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w" if write[0] == "t" else "wb") as fh:
            write[1](fh)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _write_text(path: Path, text: str) -> None:
    _atomic_write(path, ("t", lambda fh: fh.write(text)))


def _write_manifest(out: Path, command: str, params: dict, inputs: list, outputs: list) -> None:
    ins = {str(p): _digest(p) for p in inputs}
    outs = {str(p): _digest(p) for p in outputs}
    core = {"subcommand": command, "version": __version__, "params": params, "inputs": ins}
    digest = hashlib.sha256(json.dumps(core, sort_keys=True, default=str).encode()).hexdigest()
    manifest = dict(core, outputs=outs, digest=digest)
    _write_text(Path(str(out) + ".manifest.json"),
                json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _ticks(ns: float, tick_ps: int, what: str, minimum: int = 0) -> int:
    ticks = ns * 1000.0 / tick_ps
    if abs(ticks - round(ticks)) > 1e-9 or round(ticks) < minimum:
        raise ConfigError(f"{what} = {ns} ns is not a whole number (>= {minimum}) of "
                          f"{tick_ps / 1000:g} ns ticks")
    return int(round(ticks))


def _channels(text: str | None, n: int, default: tuple) -> tuple:
    if text is None:
        return default
    try:
        chans = tuple(int(c) for c in text.split(","))
    except ValueError:
        raise ConfigError(f"--channels expects comma-separated ids, got {text!r}") from None
    if len(chans) != n or any(c not in (1, 2, 3, 4) for c in chans) or len(set(chans)) != n:
        raise ConfigError(f"--channels needs {n} distinct ids from 1-4")
    return chans


def _floats(text: str, n: int, what: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{what} expects comma-separated numbers") from None
    if len(vals) != n:
        raise ConfigError(f"{what} needs {n} values")
    return vals


def _settings(args, tick_ps: int, want) -> pipeline.AnalysisSettings:
    return pipeline.AnalysisSettings(
        t_c=_ticks(args.tc_ns, tick_ps, "--tc-ns", 1),
        max_delay=_ticks(args.range_ns, tick_ps, "--range-ns"),
        bin_width=_ticks(args.bin_ns, tick_ps, "--bin-ns", 1),
        want=frozenset(want))


def _analyze_file(path: Path, settings) -> pipeline.AnalysisResult:
    return pipeline.analyze(iter_tag_file(path), settings)


def _sim_config(args) -> simulator.SimConfig:
    if args.config:
        cfg = simulator.load_config(args.config)
    else:
        cfg = simulator.PRESETS[args.preset]()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        overrides["duration"] = args.duration
    return simulator.config_from_mapping({**_cfg_dict(cfg), **overrides}) if overrides else cfg


def _cfg_dict(cfg) -> dict:
    return asdict(cfg)


# --- subcommands -----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    out = Path(args.out)

    def write(fh):
        w = TagFileWriter(fh, cfg.tick_ps, cfg.duration_ticks)
        for chunk in simulator.iter_simulate(cfg):
            w.write(chunk)

    _atomic_write(out, ("b", write))
    _write_manifest(out, "simulate", _cfg_dict(cfg), [], [out])
    return 0


def _tagfile(args) -> tuple[Path, int]:
    path = Path(args.tagfile)
    tick_ps, _ = read_header(path)
    return path, tick_ps


def cmd_g2(args) -> int:
    path, tick_ps = _tagfile(args)
    i, j = _channels(args.channels, 2, (1, 3))
    s = _settings(args, tick_ps, ())
    res = pipeline.analyze(iter_tag_file(path), s)
    hist = _pair_histogram(path, s, i, j)
    hist = coincidence.normalized_g2(hist, *(res.singles_rates[c] for c in (i, j)), res.duration_s)
    return _emit_hist(args, hist, "g2", s, [path])


def _pair_histogram(path, s, i, j):
    total = None
    for stream, since in coincidence.with_margin(iter_tag_file(path), s.margin):
        first = total is None
        p = coincidence.owned_pairs(coincidence.find_pairs(stream, i, j, s.max_delay),
                                    None if first else since)
        h = coincidence.histogram_pairs(p, s.bin_width, s.delay_range, stream.tick_ps)
        total = h if total is None else total + h
    return total


def _emit_hist(args, hist, kind, s, inputs) -> int:
    out = Path(args.out)
    hist = replace(hist, meta=dict(hist.meta, t_c_ns=s.t_c * hist.tick_ps / 1000))
    _atomic_write(out, ("t", hist.to_csv))
    _write_manifest(out, kind, _params(args), inputs, [out])
    return 0


def _params(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def cmd_g3(args) -> int:
    path, tick_ps = _tagfile(args)
    s = _settings(args, tick_ps, {"g3"})
    res = _analyze_file(path, s)
    return _emit_hist(args, res.g3(), "g3", s, [path])


def cmd_g4(args) -> int:
    path, tick_ps = _tagfile(args)
    s = _settings(args, tick_ps, {"g4"})
    res = _analyze_file(path, s)
    hist = res.g4_hist
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    ns = tick_ps / 1000
    for edge in hist.edges(0):
        sl = hist.slice_at(int(edge), axis=0)
        target = out / f"g4_tau12_{edge * ns:+g}ns.csv"
        _atomic_write(target, ("t", sl.to_csv))
        written.append(target)
    peak = hist.peak()
    summary = (f"peak_tau_12_ns = {peak[0] * ns:g}\npeak_tau_31_ns = {peak[1] * ns:g}\n"
               f"peak_tau_41_ns = {peak[2] * ns:g}\npeak_count = {int(hist.counts.max())}\n"
               f"total_count = {int(hist.counts.sum())}\n")
    _write_text(out / "summary.txt", summary)
    written.append(out / "summary.txt")
    _write_manifest(out / "g4", "g4", _params(args), [path], written)
    return 0


def cmd_correct(args) -> int:
    path, tick_ps = _tagfile(args)
    s = _settings(args, tick_ps, {"window"})
    res = _analyze_file(path, s)
    report = accidentals.correct_window_counts(res.window).report()
    counts = "".join(f"N_{''.join(map(str, k))} = {v}\n" for k, v in sorted(
        res.window.counts.items(), key=lambda kv: (len(kv[0]), kv[0])))
    out = Path(args.out)
    _write_text(out, report + counts)
    _write_manifest(out, "correct", _params(args), [path], [out])
    return 0


def parse_report(text: str) -> dict:
    values = {}
    for line in text.splitlines():
        if "=" in line and not line.startswith("#"):
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
    return values


def cmd_infer(args) -> int:
    path = Path(args.report)
    values = parse_report(path.read_text())

    def get(name):
        try:
            return float(values[name])
        except (KeyError, ValueError):
            raise ConfigError(f"report lacks a numeric {name}") from None

    corrected = {k: get("c_" + "".join(map(str, k)))
                 for k in rates.PAIR_KEYS + rates.TRIPLET_KEYS + (rates.QUAD_KEY,)}
    eta = _floats(args.eta, 4, "--eta") if args.eta else rates.REFERENCE_ETA
    try:
        eff = rates.EfficiencySet.from_totals(eta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    text = "".join(f"eta_{k} = {e:g}\n" for k, e in zip((1, 2, 3, 4), eff.eta))
    text += rates.infer_generation_rates(corrected, eff).report()
    if args.eta_prime:
        eta_p = _floats(args.eta_prime, 4, "--eta-prime")
        fit = rates.fit_arm_losses(corrected, corrected, corrected[rates.QUAD_KEY], eta_p)
        text += fit.report()
    out = Path(args.out)
    _write_text(out, text)
    _write_manifest(out, "infer", _params(args), [path], [out])
    return 0


def _oracle_model(args) -> gaussian_oracle.CorrelationModel:
    kw = dict(tau_c=args.tau_c_ns, tau_0=args.tau0_ns, tau_s=args.tau_s_ns, tau_a=args.tau_a_ns,
              one_sided=args.one_sided)
    if args.config:
        parser = configparser.ConfigParser()
        if not parser.read(args.config) or "model" not in parser:
            raise ConfigError("oracle config needs a [model] section")
        sec = parser["model"]
        for key in ("tau_c", "tau_0", "tau_s", "tau_a"):
            if key in sec:
                kw[key] = sec.getfloat(key)
        if "one_sided" in sec:
            kw["one_sided"] = sec.getboolean("one_sided")
        if "g2_peak" in sec:
            args.g2_peak = sec.getfloat("g2_peak")
    try:
        return gaussian_oracle.CorrelationModel.from_g2_peak(args.g2_peak, **kw)
    except gaussian_oracle.DomainError as exc:
        raise ConfigError(str(exc)) from None


def cmd_oracle(args) -> int:
    model = _oracle_model(args)
    out = Path(args.out)
    _atomic_write(out, ("t", lambda fh: gaussian_oracle.grid_csv(
        fh, args.kind, model, -args.range_ns, args.range_ns, args.bin_ns, args.tau12_ns)))
    _write_manifest(out, "oracle", _params(args), [], [out])
    return 0


def cmd_sweep(args) -> int:
    base = _sim_config(args)
    levels = _floats(args.levels, args.levels.count(",") + 1, "--levels")
    if len(levels) < 2 or min(levels) <= 0:
        raise ConfigError("--levels needs at least two positive pump levels")
    t_c = _ticks(args.tc_ns, base.tick_ps, "--tc-ns", 1)
    rows = []
    for p, chunks in simulator.iter_power_sweep(base, levels):
        wc = coincidence.window_counts_chunked(chunks, t_c)
        s = wc.singles_rates
        rows.append((p, s[1] + s[2], wc.pair_rate, wc.triplet_rate, wc.quadruplet_rate))
    arr = np.array(rows)
    lines = [f"level[{k}] = {r[0]:g}\nR_s[{k}] = {r[1]:.6g}\nR_p[{k}] = {r[2]:.6g}\n"
             f"R_t[{k}] = {r[3]:.6g}\nR_q[{k}] = {r[4]:.6g}" for k, r in enumerate(rows)]
    text = "\n".join(lines) + "\n" + "".join(f"{name} = {v:.4f}\n" for name, v in sweep_slopes(arr).items())
    out = Path(args.out)
    _write_text(out, text)
    _write_manifest(out, "sweep", dict(_params(args), base=_cfg_dict(base)), [], [out])
    return 0


def sweep_slopes(rows: np.ndarray) -> dict:
    """Log-log slopes from rows of (level, R_s, R_p, R_t, R_q)."""
    ls, lp, lt, lq = (np.log(rows[:, k]) for k in (1, 2, 3, 4))
    return {"slope_Rp_vs_Rs": float(np.polyfit(ls, lp, 1)[0]),
            "slope_Rt_vs_Rp": float(np.polyfit(lp, lt, 1)[0]),
            "slope_Rq_vs_Rp": float(np.polyfit(lp, lq, 1)[0])}


# --- argument parsing --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadcorr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def analysis(sp, range_default=60.0):
        sp.add_argument("tagfile")
        sp.add_argument("--tc-ns", type=float, default=20.0)
        sp.add_argument("--bin-ns", type=float, default=2.0)
        sp.add_argument("--range-ns", type=float, default=range_default)
        sp.add_argument("--out", required=True)

    def sim_source(sp):
        sp.add_argument("--config")
        sp.add_argument("--preset", choices=sorted(simulator.PRESETS), default="reference")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--duration", type=float)

    sp = sub.add_parser("simulate", help="write a simulated tag file")
    sim_source(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("g2", help="pair-delay histogram")
    analysis(sp)
    sp.add_argument("--channels", help="two detector ids, e.g. 1,3")
    sp.set_defaults(func=cmd_g2)

    sp = sub.add_parser("g3", help="heralded three-fold delay map")
    analysis(sp)
    sp.set_defaults(func=cmd_g3)

    sp = sub.add_parser("g4", help="four-fold delay histogram, one CSV per tau_12 slice")
    analysis(sp)
    sp.set_defaults(func=cmd_g4)

    sp = sub.add_parser("correct", help="window counts with accidental subtraction")
    analysis(sp)
    sp.set_defaults(func=cmd_correct)

    sp = sub.add_parser("infer", help="generation rates from a correction report")
    sp.add_argument("report")
    sp.add_argument("--eta", help="total efficiencies eta_1..eta_4")
    sp.add_argument("--eta-prime", help="per-detector efficiencies; enables the arm-loss fit")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("oracle", help="analytic correlation on a delay grid")
    sp.add_argument("--kind", choices=gaussian_oracle.GRID_KINDS, default="g3")
    sp.add_argument("--config")
    sp.add_argument("--g2-peak", type=float, default=5.0)
    sp.add_argument("--tau-c-ns", type=float, default=16.0)
    sp.add_argument("--tau0-ns", type=float, default=8.0)
    sp.add_argument("--tau-s-ns", type=float, default=16.0)
    sp.add_argument("--tau-a-ns", type=float, default=16.0)
    sp.add_argument("--one-sided", action="store_true")
    sp.add_argument("--tau12-ns", type=float, default=0.0)
    sp.add_argument("--bin-ns", type=float, default=2.0)
    sp.add_argument("--range-ns", type=float, default=60.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("sweep", help="simulated pump-power sweep and scaling slopes")
    sim_source(sp)
    sp.set_defaults(preset="sweep")
    sp.add_argument("--levels", default="0.2,0.4,0.6,0.8,1.0")
    sp.add_argument("--tc-ns", type=float, default=20.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, simulator.InvalidConfig, gaussian_oracle.DomainError) as exc:
        print(f"quadcorr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TagStreamError, OSError) as exc:
        print(f"quadcorr: input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except rates.NoConvergence as exc:
        print(f"quadcorr: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except rates.InferenceError as exc:
        print(f"quadcorr: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
