"""Named, seeded experiment presets and the run/validate machinery behind the CLI.

Every preset declares a parameter schema with per-tier defaults
(``smoke``, ``desk``, ``full``).  A run resolves the schema against the tier
and any overrides, executes, writes CSV files into the output directory and
finishes with ``manifest.json`` carrying SHA-256 digests of every data file.
All randomness comes from the run seed through :func:`numkit.derive_seed`.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__, chanest, constellation, endtoend, infoflow, ntk
from .constellation import GsConfig
from .numkit import Rng, derive_seed

__all__ = [
    "TIERS",
    "ConfigError",
    "DivergenceError",
    "OutputError",
    "Param",
    "Preset",
    "REGISTRY",
    "list_presets",
    "read_config_file",
    "resolve",
    "validate",
    "estimate_seconds",
    "run",
]

TIERS = ("smoke", "desk", "full")
TIER_BUDGET = {"smoke": 600.0, "desk": 7200.0}


class ConfigError(ValueError):
    """Bad preset name, override key or value.  CLI exit code 2."""


class DivergenceError(RuntimeError):
    """Training produced non-finite values.  CLI exit code 3."""


class OutputError(OSError):
    """The output directory cannot be created or written.  CLI exit code 4."""


# --------------------------------------------------------------------------
# schema

def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _width_or_auto(text: str):
    return "auto" if text.strip() == "auto" else float(text)


PARSERS: dict[str, Callable[[str], Any]] = {
    "int": lambda t: int(float(t)) if "e" in t.lower() else int(t),
    "float": float,
    "str": str.strip,
    "ints": _ints,
    "floats": _floats,
    "width": _width_or_auto,
}


@dataclass(frozen=True)
class Param:
    name: str
    kind: str
    default: Any
    help: str = ""

    def value_for(self, tier: str):
        if isinstance(self.default, dict):
            return self.default[tier]
        return self.default

    def parse(self, text: str):
        try:
            return PARSERS[self.kind](str(text))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"cannot parse {self.name}={text!r} as {self.kind}: {exc}") from None


@dataclass(frozen=True)
class Preset:
    name: str
    figure: str
    description: str
    params: tuple[Param, ...]
    runner: Callable[["RunContext"], None]
    cost: Callable[[dict], float]
    infeasible: tuple[str, ...] = ()   # tiers that are declared out of reach

    @property
    def schema(self) -> dict[str, Param]:
        return {p.name: p for p in self.params}


@dataclass
class RunContext:
    preset: Preset
    seed: int
    cfg: dict
    out: Path
    files: list[str] = field(default_factory=list)
    diverged: list[str] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def rng(self, component: str, index: int = 0) -> Rng:
        return Rng(derive_seed(self.seed, self.preset.name, component, index))

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name


# --------------------------------------------------------------------------
# helpers shared by runners

def _tag(x: float) -> str:
    return f"{x:g}".replace("-", "m").replace(".", "p")


def _write_rows(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def _overlap_ratio(points: np.ndarray) -> float:
    mean_norm = float(np.mean(np.linalg.norm(points, axis=1)))
    return constellation.min_distance(points) / mean_norm if mean_norm > 0 else 0.0


# per-unit timing constants (seconds) measured on one core; used by the cost model
AE_EPOCH = 3.0e-4
GS_STEP_PER_RESTART = 2.0e-5
NN_SAMPLE_EPOCH_PER_LAYER = 1.0e-5
EIG_5000 = 35.0


def _eig_cost(n: int) -> float:
    return EIG_5000 * (n / 5000.0) ** 3 + 1e-3


# --------------------------------------------------------------------------
# runners

def _run_fig4(ctx: RunContext) -> None:
    c = ctx.cfg
    for i, snr in enumerate(c["snr_db"]):
        ch = endtoend.ChannelLayer("awgn", endtoend.noise_var_for_snr(snr, c["M"], c["d"]))
        sys = endtoend.build_system(c["M"], c["d"], ch, ctx.rng("init", i))
        tr = endtoend.train(sys, c["epochs"], c["eta"], ctx.rng("train", i),
                            record_every=c["record_every"], seed=ctx.seed, snr_db=snr)
        endtoend.write_trace_csv(ctx.path(f"trace_snr{_tag(snr)}.csv"), tr)
        if tr.diverged:
            ctx.diverged.append(f"snr {snr:g} dB diverged at epoch {tr.diverged_at}")


def _run_constellations(ctx: RunContext) -> None:
    c = ctx.cfg
    d = c["d"]
    summary = []
    for M in c["M"]:
        gs_cfg = GsConfig(n0=c["n0"], step=c["gs_step"], max_steps=c["gs_steps"], restarts=c["gs_restarts"],
                          seed=derive_seed(ctx.seed, ctx.preset.name, "gs", M))
        gs = constellation.optimize(M, d, gs_cfg)
        constellation.write_constellation_csv(ctx.path(f"gs_M{M}_d{d}.csv"), gs.constellation)
        summary.append(("gradient_search", M, d, gs.restart, constellation.min_distance(gs.constellation),
                        constellation.asymptotic_pe(gs.constellation, c["n0"]), 0))
        best = None
        for s in range(c["ae_seeds"]):
            ch = endtoend.ChannelLayer("awgn", endtoend.noise_var_for_snr(c["snr_db"], M, d))
            sys = endtoend.build_system(M, d, ch, ctx.rng(f"ae_init_M{M}", s))
            tr = endtoend.train(sys, c["ae_epochs"], c["eta"], ctx.rng(f"ae_train_M{M}", s),
                                record_every=max(1, c["ae_epochs"]), seed=s)
            if tr.diverged:
                ctx.diverged.append(f"AE M={M} seed {s} diverged at epoch {tr.diverged_at}")
                summary.append(("autoencoder", M, d, s, float("nan"), float("nan"), 1))
                continue
            con = endtoend.extract_constellation(sys)
            dmin = constellation.min_distance(con)
            summary.append(("autoencoder", M, d, s, dmin, constellation.asymptotic_pe(con, c["n0"]), 0))
            if best is None or dmin > best[0]:
                best = (dmin, con)
        if best is not None:
            constellation.write_constellation_csv(ctx.path(f"ae_M{M}_d{d}.csv"), best[1])
    _write_rows(ctx.path("summary.csv"), ["method", "M", "d", "seed", "min_distance", "pe", "diverged"], summary)


def _run_fig7(ctx: RunContext) -> None:
    c = ctx.cfg
    M, d = c["M"], c["d"]
    traces, summary = [], []
    for s in range(c["seeds"]):
        pair = ntk.drift_pair(M, d, c["snr_db"], c["epochs"], c["eta"],
                              derive_seed(ctx.seed, ctx.preset.name, "pair", s), record_every=c["record_every"])
        for kind in ("rayleigh_flat", "awgn"):
            dtr, sys = pair[kind]
            dtr.seed = s
            dtr.train_trace.seed = s
            traces.append(dtr)
            endtoend.write_trace_csv(ctx.path(f"trace_{kind}_s{s}.csv"), dtr.train_trace)
            if dtr.diverged:
                ctx.diverged.append(f"{kind} seed {s} diverged")
                summary.append((kind, s, float("nan"), float("nan"), float("nan"), float("nan"), 1))
                continue
            pts = endtoend.encode(sys)
            if kind == "rayleigh_flat":
                constellation.write_constellation_csv(ctx.path(f"constellation_{kind}_s{s}.csv"),
                                                      endtoend.extract_constellation(sys))
            summary.append((kind, s, constellation.min_distance(pts),
                            float(np.mean(np.linalg.norm(pts, axis=1))), _overlap_ratio(pts),
                            float(dtr.transmitter()[-1]), 0))
    ntk.write_drift_csv(ctx.path("drift.csv"), traces)
    _write_rows(ctx.path("summary.csv"),
                ["channel_kind", "seed", "min_distance", "mean_norm", "overlap_ratio", "terminal_tx_drift",
                 "diverged"], summary)


def _baseline_reports(model, snr: float, n_test: int, rng: Rng, seed: int):
    nv = chanest.noise_var_for_snr(snr)
    h = chanest.sample_channel(model, rng.spawn("h"), n_test)
    v = chanest.ls_estimate(model, h, nv, rng.spawn("n"))
    ls = float(np.mean(np.sum(np.abs(v - h) ** 2, axis=1)))
    lm = float(np.mean(np.sum(np.abs(chanest.lmmse_estimate(model, v, nv) - h) ** 2, axis=1)))
    R = chanest.EstimatorReport
    return [
        R("ls_analytic", chanest.ls_mse(model, nv), 0, snr, seed=seed),
        R("ls", ls, n_test, snr, seed=seed),
        R("lmmse_analytic", chanest.lmmse_mse(model, nv), 0, snr, seed=seed),
        R("lmmse", lm, n_test, snr, seed=seed),
    ]


def _run_fig7m(ctx: RunContext) -> None:
    c = ctx.cfg
    model = chanest.exponential_model(c["n_c"])
    reports = []
    for i, snr in enumerate(c["snr_db"]):
        reports += _baseline_reports(model, snr, c["n_test"], ctx.rng("baseline", i), ctx.seed)
        test = chanest.build_dataset(model, c["n_test"], snr, c["pilot_spacing"], ctx.rng("test", i))
        for j, n_train in enumerate(c["n_train"]):
            train = chanest.build_dataset(model, n_train, snr, c["pilot_spacing"], ctx.rng(f"train_{j}", i))
            net, tr = chanest.train_nn_estimator(train, c["hidden_layers"], c["width"], c["epochs"], c["eta"],
                                                 c["batch"], ctx.rng(f"net_{j}", i))
            if tr.diverged:
                ctx.diverged.append(f"estimator n_train={n_train} at {snr:g} dB diverged")
                mse = float("nan")
            else:
                mse = chanest.estimator_mse(net, test)
            reports.append(chanest.EstimatorReport("nn", mse, c["n_test"], snr, n_train, c["hidden_layers"],
                                                   c["width"], ctx.seed))
    chanest.write_sweep_csv(ctx.path("mse_vs_snr.csv"), reports)


def _run_fig8(ctx: RunContext) -> None:
    c = ctx.cfg
    model = chanest.exponential_model(c["n_c"])
    reports = []
    for i, snr in enumerate(c["snr_db"]):
        reports += _baseline_reports(model, snr, c["n_test"], ctx.rng("baseline", i), ctx.seed)
        _, per_trial = chanest.depth_sweep(
            model, c["n_train"], c["depths"], c["trials"], ctx.rng("sweep", i), snr_db=snr, width=c["width"],
            epochs=c["epochs"], eta=c["eta"], batch=c["batch"], n_test=c["n_test"],
            pilot_spacing=c["pilot_spacing"])
        if not np.all(np.isfinite(per_trial)):
            ctx.diverged.append(f"depth sweep at {snr:g} dB had diverged trials")
        for t in range(per_trial.shape[0]):
            for j, depth in enumerate(c["depths"]):
                reports.append(chanest.EstimatorReport("nn", float(per_trial[t, j]), c["n_test"], snr,
                                                       c["n_train"], depth, c["width"], t))
    chanest.write_sweep_csv(ctx.path("depth_sweep.csv"), reports)


def _run_entropy(ctx: RunContext) -> None:
    c = ctx.cfg
    rows = []
    for n_c in c["n_c"]:
        model = chanest.exponential_model(n_c)
        for i, snr in enumerate(c["snr_db"]):
            for s in range(c["seeds"]):
                for n in c["n"]:
                    ds = chanest.build_dataset(model, n, snr, c["pilot_spacing"],
                                               ctx.rng(f"data_{n_c}_{i}_{s}", n))
                    gz = infoflow.gram(chanest.to_real(ds.z), c["kernel_width"])
                    gv = infoflow.gram(chanest.to_real(ds.v), c["kernel_width"])
                    s_v = infoflow.renyi_entropy(gv, c["alpha"])
                    s_j = infoflow.joint_entropy(gz, gv, c["alpha"])
                    rows.append((n_c, float(snr), n, s, float(c["alpha"]), gz.kernel_width, gv.kernel_width,
                                 s_j, s_v, s_j - s_v))
    _write_rows(ctx.path("entropy_vs_n.csv"),
                ["n_c", "snr_db", "n", "seed", "alpha", "kernel_width_z", "kernel_width_v", "s_joint", "s_v",
                 "s_cond"], rows)


def _parse_topology(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(t) for t in text.split("-"))
    except ValueError:
        raise ConfigError(f"topology {text!r} must look like 128-64-128") from None
    if len(widths) < 3 or len(widths) % 2 == 0:
        raise ConfigError("topology needs an odd number of hidden layers (2S - 1)")
    return widths


def _run_ip(ctx: RunContext) -> None:
    c = ctx.cfg
    widths = _parse_topology(c["topology"])
    model = chanest.exponential_model(widths[0] // 2)
    train = chanest.build_dataset(model, c["n_train"], c["snr_db"], c["pilot_spacing"], ctx.rng("train"))
    ev = chanest.build_dataset(model, c["n_eval"], c["snr_db"], c["pilot_spacing"], ctx.rng("eval"))
    _, trace = infoflow.train_with_planes(
        chanest.to_real(train.v), chanest.to_real(train.z), chanest.to_real(ev.v), chanest.to_real(ev.z),
        widths, c["iterations"], c["eta"], c["batch"], ctx.rng("net"), activation=c["activation"],
        alpha=c["alpha"], kernel_width=c["kernel_width"], seed=ctx.seed)
    if not all(math.isfinite(r[5]) for r in trace.rows):
        ctx.diverged.append("information-plane training produced a non-finite MSE")
    infoflow.write_infoplane_csv(ctx.path("infoplane.csv"), trace)


def _run_ntk(ctx: RunContext) -> None:
    c = ctx.cfg
    x = ctx.rng("inputs").normal((c["n_inputs"], c["d_in"]))
    xn = ntk.normalize_inputs(x)
    k = ntk.limit_gram(xn, c["depth"], c["activation"])
    rows, _ = ntk.width_sweep(xn, c["depth"], c["widths"], c["seeds"], ctx.rng("sweep"), c["activation"],
                              k_limit=k)
    ntk.write_sweep_csv(ctx.path("ntk_width_sweep.csv"), rows, c["depth"])
    _write_rows(ctx.path("limit_gram.csv"), ["i", "j", "k"],
                [(i, j, float(k[i, j])) for i in range(k.shape[0]) for j in range(k.shape[1])])
    _write_rows(ctx.path("inputs.csv"), ["i"] + [f"x{j + 1}" for j in range(xn.shape[1])],
                [(i, *map(float, row)) for i, row in enumerate(xn)])


# --------------------------------------------------------------------------
# registry

def _t(smoke, desk, full):
    return {"smoke": smoke, "desk": desk, "full": full}


AE_COMMON = (
    Param("eta", "float", 0.1, "gradient-descent step on the raw N(0,1) weights"),
)
EST_COMMON = (
    Param("n_c", "int", 64, "subcarriers"),
    Param("pilot_spacing", "int", 1, "LS pilots every k-th subcarrier (1 = full LS observation)"),
    Param("width", "int", 128, "hidden width"),
    Param("eta", "float", 1e-3, "step size in the conventional (fan-scaled) parameterisation"),
    Param("batch", "int", 100, "mini-batch size"),
)


def _ae_cost(c):
    return AE_EPOCH * c["epochs"] * len(c["snr_db"])


def _const_cost(c):
    ms = c["M"]
    return sum(GS_STEP_PER_RESTART * c["gs_steps"] * c["gs_restarts"] * (M / 8) ** 2
               + AE_EPOCH * (M / 8) * c["ae_epochs"] * c["ae_seeds"] for M in ms)


def _fig7_cost(c):
    return 2 * AE_EPOCH * c["epochs"] * c["seeds"]


def _fig7m_cost(c):
    per = sum(NN_SAMPLE_EPOCH_PER_LAYER * (c["hidden_layers"] + 1) * n * c["epochs"] * (c["width"] / 128) ** 2
              for n in c["n_train"])
    return len(c["snr_db"]) * per


def _fig8_cost(c):
    return len(c["snr_db"]) * c["trials"] * sum(
        NN_SAMPLE_EPOCH_PER_LAYER * (d + 1) * c["n_train"] * c["epochs"] for d in c["depths"])


def _entropy_cost(c):
    return len(c["n_c"]) * len(c["snr_db"]) * c["seeds"] * sum(2 * _eig_cost(n) for n in c["n"])


def _ip_cost(c):
    widths = _parse_topology(c["topology"])
    snaps = len(infoflow.default_snapshots(c["iterations"]))
    train = 1e-5 * c["iterations"] * c["batch"] * len(widths) / 3
    return train + snaps * len(widths) * 3 * _eig_cost(c["n_eval"])


def _ntk_cost(c):
    return 1e-7 * c["seeds"] * sum(m * m * c["depth"] * c["n_inputs"] for m in c["widths"]) + 0.05 * c["n_inputs"] ** 2


def _ip_params(topology, iters):
    return (
        Param("topology", "str", topology, "layer widths, input-...-output"),
        Param("activation", "str", "linear", ""),
        Param("iterations", "int", iters, "mini-batch steps"),
        Param("eta", "float", 1e-3, "step size in the conventional (fan-scaled) parameterisation"),
        Param("batch", "int", 100, ""),
        Param("n_train", "int", 1000, ""),
        Param("n_eval", "int", _t(100, 200, 500), "samples used for the Gram matrices"),
        Param("snr_db", "float", 10.0, ""),
        Param("pilot_spacing", "int", 4, "pilots every k-th subcarrier, linear interpolation"),
        Param("alpha", "float", 1.01, "Renyi order"),
        Param("kernel_width", "width", "auto", "Gaussian kernel width or 'auto' (rule of thumb)"),
    )


PRESETS = [
    Preset("fig4_fro_awgn", "Fig. 4",
           "Fig. 4: per-layer Frobenius norms of the autoencoder versus epochs on AWGN at low and high SNR",
           (Param("M", "int", 8), Param("d", "int", 2), Param("snr_db", "floats", (0.0, 25.0)),
            Param("epochs", "int", _t(2000, 40000, 1000000)), Param("record_every", "int", _t(20, 100, 1000)))
           + AE_COMMON, _run_fig4, _ae_cost),
    Preset("fig5_constellations", "Fig. 5",
           "Fig. 5: gradient-search versus autoencoder constellations, d=2, M in {8, 16}",
           (Param("d", "int", 2), Param("M", "ints", (8, 16)), Param("n0", "float", 0.05),
            Param("gs_step", "float", 2e-4), Param("gs_steps", "int", 1000), Param("gs_restarts", "int", _t(5, 50, 50)),
            Param("ae_epochs", "int", _t(2000, 100000, 1000000)), Param("ae_seeds", "int", _t(1, 5, 5)),
            Param("snr_db", "float", 25.0)) + AE_COMMON, _run_constellations, _const_cost),
    Preset("fig6_constellations_3d", "Fig. 6",
           "Fig. 6: gradient-search versus autoencoder constellations in three dimensions",
           (Param("d", "int", 3), Param("M", "ints", (8, 16)), Param("n0", "float", 0.05),
            Param("gs_step", "float", 2e-4), Param("gs_steps", "int", 1000), Param("gs_restarts", "int", _t(5, 50, 50)),
            Param("ae_epochs", "int", _t(2000, 100000, 1000000)), Param("ae_seeds", "int", _t(1, 5, 5)),
            Param("snr_db", "float", 25.0)) + AE_COMMON, _run_constellations, _const_cost),
    Preset("fig7_rayleigh_ae", "Fig. 7",
           "Fig. 7: autoencoder under Rayleigh flat fading: norms, weight drift against AWGN, overlapping points",
           (Param("M", "int", 8), Param("d", "int", 2), Param("snr_db", "float", 25.0),
            Param("epochs", "int", _t(2000, 10000, 1000000)), Param("seeds", "int", _t(1, 5, 5)),
            Param("record_every", "int", _t(20, 100, 1000))) + AE_COMMON, _run_fig7, _fig7_cost),
    Preset("fig7m_mse_samples", "MSE-vs-SNR figure (training-set size)",
           "MSE-vs-SNR figure: LS, LMMSE and one-hidden-layer estimators for several training-set sizes",
           (Param("snr_db", "floats", _t((0.0, 10.0, 20.0), (0.0, 5.0, 10.0, 15.0, 20.0, 25.0),
                                        (0.0, 5.0, 10.0, 15.0, 20.0, 25.0))),
            Param("n_train", "ints", _t((100, 1000), (100, 1000, 10000), (100, 1000, 10000, 100000))),
            Param("hidden_layers", "int", 1), Param("epochs", "int", _t(50, 2000, 10000)),
            Param("n_test", "int", _t(500, 5000, 100000))) + EST_COMMON, _run_fig7m, _fig7m_cost),
    Preset("fig8_depth", "Fig. 8",
           "Fig. 8: estimator MSE for 1, 3 and 5 hidden layers versus SNR with 100 training samples",
           (Param("snr_db", "floats", _t((10.0,), (0.0, 5.0, 10.0, 15.0, 20.0, 25.0), (0.0, 5.0, 10.0, 15.0, 20.0, 25.0))),
            Param("depths", "ints", (1, 3, 5)), Param("n_train", "int", 100), Param("trials", "int", _t(2, 10, 10)),
            Param("epochs", "int", _t(100, 2000, 20000)), Param("n_test", "int", _t(500, 2000, 100000)))
           + EST_COMMON, _run_fig8, _fig8_cost),
    Preset("fig_entropy_vs_n", "conditional-entropy figure",
           "Conditional-entropy figure: S_alpha(z | LS estimate) versus training-set size n for several SNRs and N_c",
           (Param("n", "ints", _t((100, 500), (100, 500, 1000, 5000), (100, 500, 1000, 5000, 10000))),
            Param("snr_db", "floats", _t((10.0,), (0.0, 10.0, 20.0), (0.0, 10.0, 20.0))),
            Param("n_c", "ints", _t((64,), (64,), (64, 128))), Param("seeds", "int", _t(1, 1, 5)),
            Param("pilot_spacing", "int", 4), Param("alpha", "float", 1.01),
            Param("kernel_width", "width", "auto")), _run_entropy, _entropy_cost),
    Preset("fig9_ip_deep", "Fig. 9",
           "Fig. 9: information planes of the deep 128-64-32-16-8-16-32-64-128 linear estimator",
           _ip_params("128-64-32-16-8-16-32-64-128", _t(50, 1000, 5000)), _run_ip, _ip_cost),
    Preset("fig10_ip_slfn", "Fig. 10",
           "Fig. 10: information planes of the single-hidden-layer 128-128-128 linear estimator",
           _ip_params("128-128-128", _t(50, 200, 5000)), _run_ip, _ip_cost),
    Preset("ntk_width_sweep", "convergence analysis (Gram matrix near its limit)",
           "Convergence analysis: spectral distance between the empirical and limit Gram matrices versus width",
           (Param("widths", "ints", _t((50, 200), (50, 200, 800), (50, 200, 800, 3200))),
            Param("depth", "int", 2), Param("activation", "str", "relu"), Param("seeds", "int", _t(3, 10, 10)),
            Param("n_inputs", "int", 8), Param("d_in", "int", 4)), _run_ntk, _ntk_cost),
]

REGISTRY: dict[str, Preset] = {p.name: p for p in PRESETS}


def list_presets() -> list[tuple[str, str, str]]:
    return [(p.name, p.figure, p.description) for p in PRESETS]


# --------------------------------------------------------------------------
# configuration

def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _preset(name: str) -> Preset:
    if name not in REGISTRY:
        raise ConfigError(f"unknown preset {name!r}; run `physlab list` to see the {len(REGISTRY)} registered presets")
    return REGISTRY[name]


def resolve(name: str, overrides: dict[str, str] | None = None) -> tuple[Preset, str, dict]:
    """Apply string overrides to the tier defaults.  ``tier`` is itself an override."""
    preset = _preset(name)
    overrides = dict(overrides or {})
    tier = overrides.pop("tier", "desk")
    if tier not in TIERS:
        raise ConfigError(f"tier must be one of {TIERS}, got {tier!r}")
    schema = preset.schema
    unknown = sorted(set(overrides) - set(schema))
    if unknown:
        raise ConfigError(f"preset {name} has no parameter(s) {', '.join(unknown)}; "
                          f"valid keys: tier, {', '.join(schema)}")
    cfg = {k: p.value_for(tier) for k, p in schema.items()}
    for k, text in overrides.items():
        cfg[k] = schema[k].parse(text)
    return preset, tier, cfg


def _range_violations(cfg: dict) -> list[str]:
    out = []
    for key in ("snr_db",):
        if key in cfg:
            vals = cfg[key] if isinstance(cfg[key], tuple) else (cfg[key],)
            if any(not -10.0 <= v <= 40.0 for v in vals):
                out.append(f"{key} must lie in [-10, 40] dB")
    if "alpha" in cfg and (cfg["alpha"] <= 0 or cfg["alpha"] == 1.0):
        out.append("alpha must be > 0 and != 1 (use a value near 1 such as 1.01 for the Shannon limit)")
    if "M" in cfg:
        ms = cfg["M"] if isinstance(cfg["M"], tuple) else (cfg["M"],)
        if any(m < 2 or m & (m - 1) for m in ms):
            out.append("M must be a power of 2 (one-hot alphabet)")
    for key, val in cfg.items():
        vals = val if isinstance(val, tuple) else (val,)
        if key in ("eta", "n0", "gs_step") and not all(v > 0 for v in vals):
            out.append(f"{key} must be positive")
        if isinstance(val, (int, tuple)) and key not in ("snr_db", "M") and key != "alpha":
            if any(isinstance(v, int) and v < (0 if key == "seeds" else 1) for v in vals):
                out.append(f"{key} must be positive")
    if cfg.get("kernel_width", "auto") != "auto" and not cfg["kernel_width"] > 0:
        out.append("kernel_width must be positive or 'auto'")
    if "depths" in cfg and list(cfg["depths"]) != sorted(cfg["depths"]):
        out.append("depths must be ascending")
    if "widths" in cfg and list(cfg["widths"]) != sorted(cfg["widths"]):
        out.append("widths must be ascending")
    if "n_c" in cfg and "pilot_spacing" in cfg:
        ncs = cfg["n_c"] if isinstance(cfg["n_c"], tuple) else (cfg["n_c"],)
        if any(n % cfg["pilot_spacing"] for n in ncs):
            out.append("pilot_spacing must divide n_c")
    if "topology" in cfg:
        try:
            widths = _parse_topology(cfg["topology"])
            if widths[0] != widths[-1] or widths[0] % 2:
                out.append("topology must have equal, even input and output widths (2 N_c)")
        except ConfigError as exc:
            out.append(str(exc))
    if cfg.get("activation", "relu") not in ("relu", "softplus", "linear"):
        out.append("activation must be relu, softplus or linear")
    return out


def estimate_seconds(preset: Preset, cfg: dict) -> float:
    return float(preset.cost(cfg))


def validate(name: str, overrides: dict[str, str] | None = None) -> tuple[list[str], list[str]]:
    """``(violations, warnings)``; never runs the experiment."""
    try:
        preset, tier, cfg = resolve(name, overrides)
    except ConfigError as exc:
        return [str(exc)], []
    violations = _range_violations(cfg)
    warnings = []
    if tier in preset.infeasible:
        violations.append(f"tier {tier} is declared infeasible for {name}")
    if not violations:
        est = estimate_seconds(preset, cfg)
        budget = TIER_BUDGET.get(tier)
        if budget is not None and est > budget:
            warnings.append(f"resource: estimated runtime {est:,.0f} s exceeds the {tier} budget of {budget:,.0f} s")
        elif est > 86400:
            warnings.append(f"resource: estimated runtime {est / 3600:,.1f} h")
    return violations, warnings


# --------------------------------------------------------------------------
# run

CONVENTIONS = {
    "snr_db": "10 log10(E||z||^2 / E||n||^2) for the autoencoder; 10 log10(1 / sigma_n^2) per subcarrier for estimation",
    "kernel_width": "auto = 1.06 * sqrt(sum of per-coordinate variances) * n^(-1/5)",
    "entropy_units": "bits",
    "mse": "squared error summed over subcarriers, averaged over samples",
    "ntk_inputs": "unit-normalised",
    "eta": "autoencoder: raw weights; estimators: conventional fan-scaled parameterisation",
}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def run(name: str, seed: int, overrides: dict[str, str] | None, out_dir) -> dict:
    """Execute a preset; returns the manifest (also written as ``manifest.json``)."""
    preset, tier, cfg = resolve(name, overrides)
    violations = _range_violations(cfg)
    if violations:
        raise ConfigError("; ".join(violations))
    if tier in preset.infeasible:
        raise ConfigError(f"tier {tier} is declared infeasible for {name}: full-scale parameters exceed "
                          "what this harness can run; use --set tier=desk")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"cannot write to output directory {out}: {exc.strerror}; "
                          "choose a writable --out path") from None
    ctx = RunContext(preset, seed, cfg, out)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        preset.runner(ctx)
    except OSError as exc:
        raise OutputError(f"failed writing results to {out}: {exc}") from None
    files = [{"name": f, "sha256": _sha256(out / f), "bytes": (out / f).stat().st_size} for f in ctx.files]
    manifest = {
        "preset": name,
        "figure": preset.figure,
        "seed": seed,
        "tier": tier,
        "config": {k: _jsonable(v) for k, v in cfg.items()},
        "conventions": CONVENTIONS,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "elapsed_seconds": round(time.perf_counter() - t0, 3),
        "files": files,
        "status": "diverged" if ctx.diverged else "ok",
        "problems": ctx.diverged,
        "version": __version__,
    }
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"failed writing manifest to {out}: {exc.strerror}") from None
    if ctx.diverged:
        raise DivergenceError("; ".join(ctx.diverged))
    return manifest
