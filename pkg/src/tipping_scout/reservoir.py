"""Parameter-aware echo-state network.

The reservoir is a fixed random recurrent network driven by the measured
time series plus one extra input channel carrying the bifurcation-parameter
value, connected to every node:

    r(t+dt) = (1-alpha) r(t) + alpha tanh(A r(t) + W_in u(t) + k_b W_b (b+b0))
    v(t)    = W_out r(t)

Only W_out is learned, by ridge regression over sessions recorded at a few
parameter values. In closed loop the output is fed back as the next input
and b is the single external drive, so predictions can be made at parameter
values never seen in training.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from . import _kernels
from .dynsys import TimeSeries, EscapeRegion

__all__ = [
    "HyperParams",
    "TrainingCorpus",
    "Prediction",
    "Reservoir",
    "RegularizationRequired",
    "ModelFormatError",
    "spectral_radius",
]

MODEL_FORMAT = "tipping-scout-reservoir-v1"


class RegularizationRequired(np.linalg.LinAlgError):
    """Normal equations are singular and beta is zero."""


class ModelFormatError(ValueError):
    """Model file is missing, truncated, or from an incompatible layout."""


@dataclass(frozen=True)
class HyperParams:
    """The seven tunable reservoir quantities plus the structural size.

    avg_degree and spectral_radius shape the recurrent matrix, sigma_in the
    input weights, (k_b, b0) the parameter channel, alpha the leak, and
    beta the ridge regularization.
    """

    n_nodes: int = 1000
    avg_degree: float = 6.0
    spectral_radius: float = 0.9
    sigma_in: float = 1.0
    k_b: float = 1.0
    b0: float = 0.0
    alpha: float = 1.0
    beta: float = 1e-7

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if not 0.0 < self.avg_degree <= self.n_nodes:
            raise ValueError("avg_degree must be in (0, n_nodes]")
        if self.spectral_radius <= 0.0:
            raise ValueError("spectral_radius must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "avg_degree": self.avg_degree,
            "spectral_radius": self.spectral_radius,
            "sigma_in": self.sigma_in,
            "k_b": self.k_b,
            "b0": self.b0,
            "alpha": self.alpha,
            "beta": self.beta,
        }


@dataclass
class TrainingCorpus:
    """Training sessions (one per parameter value) and the shared washout."""

    sessions: Sequence[TimeSeries]
    washout: int = 1000

    def __post_init__(self):
        if len(self.sessions) < 1:
            raise ValueError("corpus needs at least one session")
        dims = {s.dim for s in self.sessions}
        if len(dims) != 1:
            raise ValueError(f"sessions disagree on dimension: {sorted(dims)}")
        dts = {s.dt for s in self.sessions}
        if len(dts) != 1:
            raise ValueError(f"sessions disagree on dt: {sorted(dts)}")
        for s in self.sessions:
            if len(s) <= self.washout + 1:
                raise ValueError(
                    f"session at param={s.param} has {len(s)} samples, "
                    f"needs more than washout+1 = {self.washout + 1}"
                )

    @property
    def dim(self) -> int:
        return self.sessions[0].dim

    @property
    def dt(self) -> float:
        return self.sessions[0].dt

    @property
    def params(self) -> list:
        return [s.param for s in self.sessions]


@dataclass
class Prediction:
    """Closed-loop output; diverged marks a non-finite-output early stop."""

    series: TimeSeries
    diverged: bool


def spectral_radius(A: sparse.spmatrix, seed_vector: Optional[np.ndarray] = None) -> float:
    """Modulus of the leading eigenvalue of a sparse matrix.

    Uses ARPACK with a deterministic start vector, falling back to a dense
    eigendecomposition for tiny or non-convergent cases.
    """
    n = A.shape[0]
    if n <= 16:
        return float(np.max(np.abs(np.linalg.eigvals(A.toarray()))))
    if seed_vector is None:
        seed_vector = np.ones(n) / np.sqrt(n)
    try:
        vals = eigs(A, k=1, which="LM", v0=seed_vector,
                    maxiter=50 * n, return_eigenvectors=False)
        return float(np.abs(vals[0]))
    except ArpackNoConvergence:
        return float(np.max(np.abs(np.linalg.eigvals(A.toarray()))))


class Reservoir:
    """Fixed random network with a trainable linear readout.

    Build with :meth:`build`; the recurrent matrix A, input weights W_in and
    parameter-channel weights W_b stay fixed for the life of the object.
    ``train`` fits W_out and the input normalization, after which ``predict``
    runs the machine as an autonomous closed loop at any parameter value.
    """

    def __init__(
        self,
        hyper: HyperParams,
        dim: int,
        seed: int,
        A: sparse.csr_matrix,
        W_in: np.ndarray,
        W_b: np.ndarray,
        W_out: Optional[np.ndarray] = None,
        input_mean: Optional[np.ndarray] = None,
        input_scale: Optional[np.ndarray] = None,
    ):
        self.hyper = hyper
        self.dim = dim
        self.seed = seed
        self.A = A.tocsr()
        self.W_in = np.ascontiguousarray(W_in, dtype=float)
        self.W_b = np.ascontiguousarray(W_b, dtype=float)
        self.W_out = None if W_out is None else np.ascontiguousarray(W_out, dtype=float)
        # identity transform until train() fits the corpus statistics
        self.input_mean = np.zeros(dim) if input_mean is None else np.asarray(input_mean, dtype=float)
        self.input_scale = np.ones(dim) if input_scale is None else np.asarray(input_scale, dtype=float)
        self.r = np.zeros(hyper.n_nodes)
        self.session_rmse: Optional[list] = None

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, hyper: HyperParams, dim: int, seed: int) -> "Reservoir":
        """Sample the fixed matrices; deterministic per seed.

        A is Erdos-Renyi with edge probability avg_degree/n_nodes and
        uniform(-1,1) weights, rescaled to the requested spectral radius.
        W_in is uniform(-sigma_in, sigma_in); W_b is uniform(-1,1) with
        zeros resampled so the parameter channel reaches every node.
        """
        n = hyper.n_nodes
        A = None
        for attempt in range(64):
            rng = np.random.default_rng([seed, 0, attempt])
            mask = rng.random((n, n)) < hyper.avg_degree / n
            dense = np.zeros((n, n))
            dense[mask] = rng.uniform(-1.0, 1.0, int(mask.sum()))
            cand = sparse.csr_matrix(dense)
            sr = spectral_radius(cand)
            if sr > 1e-12:
                cand.data *= hyper.spectral_radius / sr
                A = cand
                break
        if A is None:
            raise RuntimeError("could not sample a matrix with nonzero spectral radius")

        W_in = np.random.default_rng([seed, 1]).uniform(-hyper.sigma_in, hyper.sigma_in, (n, dim))
        rng_b = np.random.default_rng([seed, 2])
        W_b = rng_b.uniform(-1.0, 1.0, n)
        while np.any(W_b == 0.0):
            zeros = W_b == 0.0
            W_b[zeros] = rng_b.uniform(-1.0, 1.0, int(zeros.sum()))
        return cls(hyper, dim, seed, A, W_in, W_b)

    # -- low-level dynamics -------------------------------------------------

    def _bias(self, b: float) -> np.ndarray:
        return self.hyper.k_b * (b + self.hyper.b0) * self.W_b

    def reset(self) -> None:
        self.r = np.zeros(self.hyper.n_nodes)

    def step(self, u: np.ndarray, b: float) -> np.ndarray:
        """Advance the reservoir state by one input sample; returns the new r.

        u is taken as-is (no input normalization): this is the raw update
        equation.
        """
        u = np.ascontiguousarray(u, dtype=float).reshape(1, self.dim)
        _kernels.reservoir_drive(
            self.A.data, self.A.indices, self.A.indptr,
            self.W_in, self._bias(b), self.r, u, self.hyper.alpha,
        )
        if not np.isfinite(self.r).all():
            raise FloatingPointError("reservoir state became non-finite")
        return self.r.copy()

    def drive(
        self,
        series: Union[TimeSeries, np.ndarray],
        b: float,
        reset: bool = True,
        normalize: bool = True,
    ) -> np.ndarray:
        """Run the reservoir open loop over a series; returns (T, n) states.

        Row t is the state after ingesting sample t. By default the state is
        reset to zero first and inputs pass through the fitted input
        transform (identity before training); pass reset=False to continue
        from the current state.
        """
        inputs = series.states if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
        if inputs.ndim != 2 or inputs.shape[1] != self.dim:
            raise ValueError(f"expected (T, {self.dim}) inputs")
        if normalize:
            inputs = (inputs - self.input_mean) / self.input_scale
        if reset:
            self.reset()
        states = _kernels.reservoir_drive(
            self.A.data, self.A.indices, self.A.indptr,
            self.W_in, self._bias(b), self.r,
            np.ascontiguousarray(inputs), self.hyper.alpha,
        )
        if not np.isfinite(self.r).all():
            raise FloatingPointError("reservoir state became non-finite")
        return states

    # -- training -----------------------------------------------------------

    def train(self, corpus: TrainingCorpus, normalize: bool = True) -> "Reservoir":
        """Fit W_out by ridge regression on one-step-ahead targets.

        Each session is driven from r = 0 with its own parameter value on
        the channel; the first `washout` states are discarded. Inputs are
        normalized per coordinate to zero mean and unit variance pooled over
        the corpus, and the same transform is fixed for prediction; pass
        normalize=False for data that is already in model units.
        """
        if corpus.dim != self.dim:
            raise ValueError(f"corpus dimension {corpus.dim} != reservoir dim {self.dim}")
        if normalize:
            pooled = np.vstack([s.states for s in corpus.sessions])
            self.input_mean = pooled.mean(axis=0)
            std = pooled.std(axis=0)
            self.input_scale = np.where(std > 0.0, std, 1.0)
        else:
            self.input_mean = np.zeros(self.dim)
            self.input_scale = np.ones(self.dim)

        n = self.hyper.n_nodes
        w = corpus.washout
        gram = np.zeros((n, n))
        moment = np.zeros((n, self.dim))
        per_session = []
        for s in corpus.sessions:
            states = self.drive(s, s.param)
            X = states[w:-1]
            Y = (s.states[w + 1 :] - self.input_mean) / self.input_scale
            g = X.T @ X
            h = X.T @ Y
            gram += g
            moment += h
            per_session.append((s.param, g, h, float(np.sum(Y * Y)), X.shape[0]))

        if self.hyper.beta > 0.0:
            gram_reg = gram + self.hyper.beta * np.eye(n)
        else:
            gram_reg = gram
        try:
            factor = cho_factor(gram_reg)
        except np.linalg.LinAlgError:
            if self.hyper.beta == 0.0:
                raise RegularizationRequired(
                    "normal equations are singular; regularization required (beta > 0)"
                ) from None
            raise
        W = cho_solve(factor, moment)           # (n, dim)
        self.W_out = np.ascontiguousarray(W.T)  # (dim, n)

        self.session_rmse = []
        for param, g, h, yy, count in per_session:
            sq = float(np.sum(W * (g @ W)) - 2.0 * np.sum(W * h) + yy)
            self.session_rmse.append((param, np.sqrt(max(sq, 0.0) / (count * self.dim))))
        return self

    # -- prediction ----------------------------------------------------------

    def predict(
        self,
        warmup: TimeSeries,
        b: float,
        steps: int,
        stop_region: Optional[EscapeRegion] = None,
    ) -> Prediction:
        """Closed-loop forecast at parameter b after synchronizing on warmup.

        The reservoir is driven from r = 0 through the warmup series, then
        the readout is fed back as input for `steps` samples. Output is in
        raw data units. A non-finite output stops the loop early with
        diverged=True. If stop_region is given, the loop also stops once
        escape from the region is established (grace consecutive samples
        outside), returning the prefix that contains the escape; this is a
        pure optimization for escape-time studies and does not change the
        emitted samples.
        """
        if self.W_out is None:
            raise RuntimeError("reservoir is untrained: call train() first")
        if len(warmup) < 1:
            raise ValueError("warmup must contain at least one sample")
        if steps < 0:
            raise ValueError("steps must be >= 0")
        self.drive(warmup, b)
        if steps == 0:
            return Prediction(TimeSeries(warmup.dt, np.empty((0, self.dim)), b), False)
        if stop_region is None:
            lo = np.zeros(self.dim)
            hi = np.zeros(self.dim)
            floor_coord, floor_value, grace, monitor = -1, 0.0, 1, False
        else:
            if stop_region.dim != self.dim:
                raise ValueError("stop_region dimension mismatch")
            lo, hi = stop_region.lower, stop_region.upper
            floor_coord = stop_region._floor_coord_int
            floor_value = stop_region.floor_value
            grace, monitor = stop_region.grace, True
        out, n_valid, diverged = _kernels.reservoir_closed_loop(
            self.A.data, self.A.indices, self.A.indptr,
            self.W_in, self._bias(b), self.W_out, self.r,
            self.hyper.alpha, steps,
            self.input_mean, self.input_scale,
            lo, hi, floor_coord, floor_value, grace, monitor,
        )
        return Prediction(TimeSeries(warmup.dt, out[:n_valid], b), bool(diverged))

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        """Write the model to an npz container; byte-stable round trip."""
        meta = {
            "format": MODEL_FORMAT,
            "dim": self.dim,
            "seed": self.seed,
            "hyper": self.hyper.to_dict(),
            "trained": self.W_out is not None,
        }
        arrays = {
            "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
            "a_data": self.A.data,
            "a_indices": self.A.indices,
            "a_indptr": self.A.indptr,
            "w_in": self.W_in,
            "w_b": self.W_b,
            "input_mean": self.input_mean,
            "input_scale": self.input_scale,
            "state": self.r,
        }
        if self.W_out is not None:
            arrays["w_out"] = self.W_out
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "Reservoir":
        """Read a model written by save; rejects truncated or alien files."""
        try:
            with np.load(path) as data:
                arrays = {k: data[k] for k in data.files}
        except (zipfile.BadZipFile, OSError, ValueError, EOFError, KeyError) as exc:
            raise ModelFormatError(f"{path}: not a readable model file ({exc})") from None
        try:
            meta = json.loads(bytes(arrays["meta"]).decode())
        except Exception as exc:
            raise ModelFormatError(f"{path}: bad metadata ({exc})") from None
        if meta.get("format") != MODEL_FORMAT:
            raise ModelFormatError(
                f"{path}: format {meta.get('format')!r}, expected {MODEL_FORMAT!r}"
            )
        hyper = HyperParams(**meta["hyper"])
        n, dim = hyper.n_nodes, int(meta["dim"])
        required = {"a_data", "a_indices", "a_indptr", "w_in", "w_b",
                    "input_mean", "input_scale", "state"}
        missing = required - set(arrays)
        if missing:
            raise ModelFormatError(f"{path}: missing arrays {sorted(missing)}")
        if arrays["w_in"].shape != (n, dim) or arrays["a_indptr"].shape != (n + 1,):
            raise ModelFormatError(f"{path}: array shapes disagree with metadata")
        A = sparse.csr_matrix(
            (arrays["a_data"], arrays["a_indices"], arrays["a_indptr"]), shape=(n, n)
        )
        w_out = arrays.get("w_out")
        if meta["trained"] and w_out is None:
            raise ModelFormatError(f"{path}: trained model missing w_out")
        res = cls(
            hyper, dim, int(meta["seed"]), A,
            arrays["w_in"], arrays["w_b"], w_out,
            arrays["input_mean"], arrays["input_scale"],
        )
        res.r = np.ascontiguousarray(arrays["state"], dtype=float)
        return res
