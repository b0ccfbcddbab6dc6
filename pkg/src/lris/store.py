"""In-memory MCMC output and its on-disk layout."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators import read_flat_matrix, write_flat_matrix

CSV_COLUMNS = ("chain", "iter", "mu_or_kappa2", "sigma_or_upsilon", "x_accept", "hyper_accept", "logw")
NA = -1


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class ChainRecord:
    """Stored series of one chain.

    ``hyper_accept`` uses ``-1`` where the hyperparameter step has no
    accept/reject decision (conjugate draws).
    """

    chain: int
    iters: np.ndarray
    hyper1: np.ndarray
    hyper2: np.ndarray
    x_accept: np.ndarray
    hyper_accept: np.ndarray
    logw: np.ndarray
    x: np.ndarray | None = None
    x_sum: np.ndarray | None = None
    x_sumsq: np.ndarray | None = None
    n_moment: int = 0
    rank_schedule: list = field(default_factory=list)
    timings_ns: dict = field(default_factory=dict)
    seed_entropy: list = field(default_factory=list)
    rw_scale_trace: list = field(default_factory=list)

    @classmethod
    def allocate(cls, chain: int, rows: int, n: int, store_x: bool) -> "ChainRecord":
        return cls(
            chain=chain,
            iters=np.zeros(rows, dtype=np.int64),
            hyper1=np.zeros(rows),
            hyper2=np.zeros(rows),
            x_accept=np.zeros(rows, dtype=np.int8),
            hyper_accept=np.full(rows, NA, dtype=np.int8),
            logw=np.zeros(rows),
            x=np.zeros((rows, n)) if store_x else None,
            x_sum=np.zeros(n),
            x_sumsq=np.zeros(n),
        )

    @property
    def x_mean(self) -> np.ndarray:
        return self.x_sum / max(self.n_moment, 1)

    @property
    def x_var(self) -> np.ndarray:
        m = self.x_mean
        return self.x_sumsq / max(self.n_moment, 1) - m * m

    def sampling_mask(self, burn_in: int) -> np.ndarray:
        return self.iters > burn_in


@dataclass
class ChainStore:
    chains: list
    hyper_names: tuple = ("mu", "sigma")
    burn_in: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.chains)

    def series(self, name: str, sampling_only: bool = True) -> list:
        """Per-chain arrays of a hyperparameter (by name) or ``x_accept``/``logw``."""
        if name in self.hyper_names:
            attr = "hyper1" if name == self.hyper_names[0] else "hyper2"
        else:
            attr = name
        out = []
        for rec in self.chains:
            arr = getattr(rec, attr)
            out.append(arr[rec.sampling_mask(self.burn_in)] if sampling_only else arr)
        return out

    def x_series(self, sampling_only: bool = True) -> list:
        out = []
        for rec in self.chains:
            if rec.x is None:
                raise ValueError("x-series was not stored for this run")
            out.append(rec.x[rec.sampling_mask(self.burn_in)] if sampling_only else rec.x)
        return out

    def merged_x_mean(self) -> np.ndarray:
        total = sum(rec.x_sum for rec in self.chains)
        return total / sum(rec.n_moment for rec in self.chains)

    def acceptance_rate(self) -> float:
        flags = np.concatenate(self.series("x_accept"))
        return float(np.mean(flags)) if flags.size else float("nan")

    def hyper_acceptance_rate(self) -> float | None:
        flags = np.concatenate(self.series("hyper_accept"))
        flags = flags[flags != NA]
        return float(np.mean(flags)) if flags.size else None

    def timings(self) -> dict:
        out: dict = {}
        for rec in self.chains:
            for k, v in rec.timings_ns.items():
                out[k] = out.get(k, 0) + v
        return out

    # -- persistence -------------------------------------------------------

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for rec in self.chains:
                for i in range(rec.iters.size):
                    ha = int(rec.hyper_accept[i])
                    w.writerow([
                        rec.chain, int(rec.iters[i]), _fmt(rec.hyper1[i]), _fmt(rec.hyper2[i]),
                        int(rec.x_accept[i]), "" if ha == NA else ha, _fmt(rec.logw[i]),
                    ])

    def save(self, outdir) -> None:
        """Write ``chains.csv``, ``x_mean.bin`` and ``store.json`` (rank schedule, timings, moments)."""
        outdir = Path(outdir)
        self.write_csv(outdir / "chains.csv")
        write_flat_matrix(outdir / "x_mean.bin", np.vstack([rec.x_mean for rec in self.chains]))
        side = {
            "hyper_names": list(self.hyper_names),
            "burn_in": self.burn_in,
            "meta": self.meta,
            "chains": [
                {
                    "chain": rec.chain,
                    "n_moment": rec.n_moment,
                    "rank_schedule": rec.rank_schedule,
                    "timings_ns": rec.timings_ns,
                    "seed_entropy": rec.seed_entropy,
                    "rw_scale_trace": rec.rw_scale_trace,
                }
                for rec in self.chains
            ],
        }
        (outdir / "store.json").write_text(json.dumps(side, indent=1, default=_json_default))
        write_flat_matrix(outdir / "x_sumsq.bin", np.vstack([rec.x_sumsq for rec in self.chains]))
        if all(rec.x is not None for rec in self.chains):
            np.save(outdir / "x_series.npy", np.stack([rec.x for rec in self.chains]))

    @classmethod
    def load(cls, outdir) -> "ChainStore":
        outdir = Path(outdir)
        side = json.loads((outdir / "store.json").read_text())
        means = read_flat_matrix(outdir / "x_mean.bin")
        sumsq = read_flat_matrix(outdir / "x_sumsq.bin")
        xs = np.load(outdir / "x_series.npy") if (outdir / "x_series.npy").exists() else None
        rows: dict = {}
        with open(outdir / "chains.csv", newline="") as fh:
            for r in csv.DictReader(fh):
                rows.setdefault(int(r["chain"]), []).append(r)
        chains = []
        for i, info in enumerate(side["chains"]):
            rr = rows.get(info["chain"], [])
            rec = ChainRecord(
                chain=info["chain"],
                iters=np.array([int(r["iter"]) for r in rr], dtype=np.int64),
                hyper1=np.array([float(r["mu_or_kappa2"]) for r in rr]),
                hyper2=np.array([float(r["sigma_or_upsilon"]) for r in rr]),
                x_accept=np.array([int(r["x_accept"]) for r in rr], dtype=np.int8),
                hyper_accept=np.array([NA if r["hyper_accept"] == "" else int(r["hyper_accept"]) for r in rr],
                                      dtype=np.int8),
                logw=np.array([float(r["logw"]) for r in rr]),
                x=None if xs is None else xs[i],
                x_sum=means[i] * max(info["n_moment"], 1),
                x_sumsq=sumsq[i],
                n_moment=info["n_moment"],
                rank_schedule=[tuple(e) for e in info["rank_schedule"]],
                timings_ns=info["timings_ns"],
                seed_entropy=info["seed_entropy"],
                rw_scale_trace=info["rw_scale_trace"],
            )
            chains.append(rec)
        return cls(chains, tuple(side["hyper_names"]), side["burn_in"], side["meta"])


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")
