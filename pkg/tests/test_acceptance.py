"""Acceptance criteria 1-8, one pass/fail line each (see the summary section of the run).

Criteria 3-5 train real networks on the synthetic corpus and take several minutes.
"""

import csv
import io
import math
import time
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from cer_mtl.cli import main
from cer_mtl.data import synthetic_recordings
from cer_mtl.losses import TASKS, TraceSet, ccc, pcc, sliding_ccc
from cer_mtl.model import ModelConfig, build_model, count_parameters
from cer_mtl.training import DataConfig, TrainConfig, evaluate, fit

ROOT = Path(__file__).resolve().parents[1]

# Desk-scale protocol shared by criteria 3-5: ten 400 s recordings per seed,
# a training example every 20 frames, and a learning rate large enough to
# converge within 30 epochs.
SEEDS = (1, 2, 3, 4, 5)
FRAMES = 24000
RECORDINGS = 10
DATA = DataConfig(center_stride=20)


def train_cfg(seed: int, loss: str = "ccc") -> TrainConfig:
    return TrainConfig(learning_rate=3e-3, max_epochs=30, patience=8, loss=loss, seed=seed)


class Protocol:
    """Lazily trains and caches held-out CCC per (kind, seed), with wall time.

    Kinds: ``mtl`` (CCC loss, N=20), ``mse``, ``stl`` (one network per task), ``window40``, ``window60``.
    """

    def __init__(self):
        self._corpora = {}
        self.runs: dict[tuple[str, int], tuple[dict[str, float], float]] = {}

    def corpus(self, seed):
        if seed not in self._corpora:
            self._corpora[seed] = synthetic_recordings(seed, RECORDINGS, FRAMES, "medium")
        return self._corpora[seed]

    def _fit(self, seed, model, loss):
        result, bundle = fit(self.corpus(seed), model, train_cfg(seed, loss), DATA)
        return evaluate(result.network, bundle.test, loss).ccc

    def run(self, kind: str, seed: int):
        key = (kind, seed)
        if key not in self.runs:
            t0 = time.perf_counter()
            if kind == "stl":
                scores = {t: self._fit(seed, ModelConfig(tasks=(t,), mode="stl"), "ccc")[t] for t in TASKS}
            elif kind.startswith("window"):
                scores = self._fit(seed, ModelConfig(window=int(kind[6:])), "ccc")
            else:
                scores = self._fit(seed, ModelConfig(), "mse" if kind == "mse" else "ccc")
            self.runs[key] = (scores, time.perf_counter() - t0)
        return self.runs[key]

    def median(self, kind: str, task: str) -> float:
        return float(np.median([self.run(kind, s)[0][task] for s in SEEDS]))

    def seconds(self, *kinds: str) -> float:
        return sum(self.run(k, s)[1] for k in kinds for s in SEEDS)


@pytest.fixture(scope="module")
def protocol():
    return Protocol()


def test_1_gradient_suite(report):
    out = io.StringIO()
    t0 = time.perf_counter()
    with redirect_stdout(out):
        code = main(["gradcheck", "--seed", "0", "--points", "5"])
    elapsed = time.perf_counter() - t0
    rows = dict(line.split()[:2] for line in out.getvalue().splitlines())
    required = {"conv1d", "maxpool1d", "gru_step", "dense", "mse_loss", "pcc_loss", "ccc_loss",
                "mtl_objective_cer_mtl"}
    worst = max(float(v) for v in rows.values())
    ok = code == 0 and required <= set(rows) and worst < 1e-4 and elapsed < 120
    report(1, ok, f"{len(rows)} components, worst rel. error {worst:.2e} (< 1e-4), {elapsed:.0f} s (< 120 s)")
    assert ok


def _direct(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    return 2 * cov / (vx + vy + (mx - my) ** 2), cov / math.sqrt(vx * vy)


def test_2_metric_oracle(report):
    rng = np.random.default_rng(2024)
    worst, lin_ok = 0.0, True
    for _ in range(1000):
        n = int(rng.integers(3, 60))
        x = rng.normal(rng.normal(), rng.uniform(0.1, 3), n)
        y = rng.uniform(-2, 2) * x + rng.uniform(-1, 1) + rng.uniform(0, 2) * rng.standard_normal(n)
        c, p = ccc(x, y), pcc(x, y)
        dc, dp = _direct(list(x), list(y))
        worst = max(worst, abs(c - dc), abs(p - dp))
        lin_ok &= abs(c) <= abs(p) + 1e-15
    xs, ys = [0.0, 1.0, 2.0, 3.0], [1.0, 1.0, 3.0, 3.0]
    worked = abs(ccc(xs, ys) - 0.8) < 1e-15 and round(pcc(xs, ys), 6) == 0.894427
    ok = worst <= 1e-12 and lin_ok and worked
    report(2, ok, f"max |lib - direct| over 1000 pairs {worst:.1e} (<= 1e-12), |CCC| <= |PCC| on all: {lin_ok}, "
                  f"worked ccc={ccc(xs, ys)!r} pcc={pcc(xs, ys):.6f}")
    assert ok


@pytest.mark.slow
def test_3_ccc_loss_beats_mse(report, protocol):
    ccc_med, mse_med = protocol.median("mtl", "activation"), protocol.median("mse", "activation")
    elapsed = protocol.seconds("mtl", "mse")
    gap = ccc_med - mse_med
    ok = gap >= 0.05 and elapsed < 900
    per_seed = ", ".join(
        f"{protocol.run('mtl', s)[0]['activation']:.3f}/{protocol.run('mse', s)[0]['activation']:.3f}" for s in SEEDS
    )
    report(3, ok, f"median activation CCC {ccc_med:.3f} (ccc loss) vs {mse_med:.3f} (mse loss), gap {gap:+.3f} "
                  f"(>= 0.05), {elapsed:.0f} s (< 900 s); per seed ccc/mse {per_seed}")
    assert ok


@pytest.mark.slow
def test_4_mtl_vs_stl(report, protocol):
    mtl = {t: protocol.median("mtl", t) for t in TASKS}
    stl = {t: protocol.median("stl", t) for t in TASKS}
    elapsed = protocol.seconds("mtl", "stl")
    ok = mtl["valence"] >= stl["valence"] and elapsed < 900
    cells = " ".join(f"{t[:3]} {mtl[t]:.3f}/{stl[t]:.3f}" for t in TASKS)
    report(4, ok, f"median CCC MTL/STL: {cells} (valence MTL >= STL), {elapsed:.0f} s (< 900 s)")
    assert ok


@pytest.mark.slow
def test_5_window_sweep(report, protocol, tmp_path):
    # machinery: the CLI sweep on a small corpus emits a three-row table
    small = tmp_path / "small"
    with redirect_stdout(io.StringIO()):
        main(["synth", "--seed", "5", "--frames", "1500", "--recordings", "6", "--out", str(small)])
        code = main(["sweep", "--axis", "window", "--values", "20,40,60", "--data", str(small / "manifest.json"),
                     "--out", str(tmp_path / "sweep"), "--folds", "3", "--epochs", "1", "--lr", "3e-3",
                     "--center-stride", "40"])
    with open(tmp_path / "sweep" / "sweep_window.csv", newline="") as fh:
        rows = [r["N"] for r in csv.DictReader(fh)]
    machinery = code == 0 and rows == ["20", "40", "60"]

    # direction: activation CCC against N on the acceptance corpus; N=20 is the default MTL run
    med = {n: protocol.median("mtl" if n == 20 else f"window{n}", "activation") for n in (20, 40, 60)}
    monotone = med[20] <= med[40] <= med[60]
    ok = machinery and monotone
    per_seed = ", ".join(
        "/".join(f"{protocol.run('mtl' if n == 20 else f'window{n}', s)[0]['activation']:.3f}" for n in (20, 40, 60))
        for s in SEEDS
    )
    report(5, ok, f"CLI sweep rows {rows}; median activation CCC by N "
                  + " ".join(f"{n}:{v:.3f}" for n, v in med.items())
                  + f" (non-decreasing); per seed N=20/40/60 {per_seed}")
    assert ok


def test_6_parameter_accounting(report):
    counts = count_parameters(build_model(ModelConfig(), 0))
    readme = (ROOT / "README.md").read_text()
    documented = "5,615" in readme and f"{counts.total:,}" in readme
    ok = 3000 <= counts.total <= 10000 and len(counts.per_layer) == 10 and documented
    report(6, ok, f"total {counts.total} in [3000, 10000], {len(counts.per_layer)} layers listed, "
                  f"README reconciles against 5,615: {documented}")
    assert ok


def test_7_determinism(report, tmp_path):
    with redirect_stdout(io.StringIO()):
        main(["synth", "--seed", "8", "--frames", "1500", "--recordings", "6", "--out", str(tmp_path / "d")])
        for run in ("a", "b"):
            assert main(["train", "--data", str(tmp_path / "d" / "manifest.json"), "--out", str(tmp_path / run),
                         "--seed", "3", "--folds", "3", "--epochs", "3", "--lr", "3e-3", "--center-stride", "20"]) == 0
    same = {
        name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for name in ("epoch_log.csv", "best.ckpt")
    }
    ok = all(same.values())
    report(7, ok, f"byte-identical across two train runs: {same}")
    assert ok


def test_8_sliding_ccc(report):
    rng = np.random.default_rng(8)
    ref = np.cumsum(rng.standard_normal(256)) * 0.1
    pred = 0.7 * ref + 0.2 + 0.1 * rng.standard_normal(256)
    out = sliding_ccc(TraceSet({"activation": ref}, {"activation": pred}), 100)["activation"]
    worst = max(
        abs(out[i] - _direct(list(pred[i : i + 100]), list(ref[i : i + 100]))[0]) for i in range(out.size)
    )
    ok = out.size == 157 and worst <= 1e-12
    report(8, ok, f"{out.size} values (157 expected), max deviation from direct per-window CCC {worst:.1e}")
    assert ok
