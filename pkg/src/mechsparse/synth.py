"""Synthetic sequential benchmarks: random injective mixing network,
sinusoidal sparse transition means, built-in graphs, trajectory sampling.

Trajectories are indexed 0-based: z[0] is drawn from a standard normal,
z[t] for t >= 1 from a Gaussian centered on mu(z[t-1], a[t-1]), and
x[t] = f(z[t]) + observation noise. Actions are i.i.d. uniform on [-2, 2]
at every step (a[T-1] is stored but drives nothing).
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .graph_algebra import BinaryGraph

LEAKY_SLOPE = 0.2
#: trajectories are generated in fixed-size chunks with independent RNG
#: streams keyed by (data_seed, chunk index); the size is part of the data
#: format and must not change, or regeneration breaks bit-reproducibility
CHUNK_SIZE = 16384
FORMAT_VERSION = "1"
ACTION_LOW, ACTION_HIGH = -2.0, 2.0


def _leaky(h):
    return np.where(h > 0, h, LEAKY_SLOPE * h)


def _orthogonalized(matrix):
    """Orthonormalize the smaller side of a Gaussian draw, deterministically.

    Columns when the matrix is tall (injective map), rows when wide; QR sign
    ambiguity is fixed from the R diagonal so results are LAPACK-stable.
    """
    d_out, d_in = matrix.shape
    transpose = d_in > d_out
    A = matrix.T if transpose else matrix
    Q, R = np.linalg.qr(A)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q = Q * signs
    return Q.T if transpose else Q


@dataclass(frozen=True)
class MixingNetwork:
    """Random MLP observation map f: stacked linear layers with leaky-ReLU
    between them; each weight matrix has orthogonal columns scaled by the
    variance-preserving factor, so f is injective layer by layer."""

    weights: tuple
    d_z: int
    d_x: int
    widths: tuple
    seed: int

    def forward(self, z):
        h = np.asarray(z, dtype=np.float64)
        if h.shape[-1] != self.d_z:
            raise ValidationError(
                f"mixing input has dim {h.shape[-1]}, expected {self.d_z}"
            )
        last = len(self.weights) - 1
        for k, W in enumerate(self.weights):
            h = h @ W.T
            if k < last:
                h = _leaky(h)
        return h

    def __call__(self, z):
        return self.forward(z)

    def to_json(self):
        return {
            "d_z": self.d_z,
            "d_x": self.d_x,
            "widths": list(self.widths),
            "seed": self.seed,
        }


def sample_mixing(d_z, d_x, widths=(20, 20, 20), seed=0):
    """Gaussian weights, orthogonalized and rescaled, deterministic per seed."""
    if d_z > d_x:
        raise ValidationError(f"need d_z <= d_x, got d_z={d_z} > d_x={d_x}")
    if not widths:
        raise ValidationError("widths must be nonempty")
    dims = [int(d_z)] + [int(w) for w in widths] + [int(d_x)]
    if any(d < 1 for d in dims):
        raise ValidationError(f"all layer dims must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    weights = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        raw = rng.standard_normal((d_out, d_in))
        # Scale the orthonormal directions so entries sit at the fan-based
        # std (gain for slope-0.2 leaky-ReLU); orthonormal vectors have
        # entry RMS 1/sqrt(max(d_in, d_out)), so the multiplier is the
        # target std times that root. Square layers then get spectral norm
        # sqrt(2/(1+slope^2)), which keeps the signal variance roughly
        # constant through the stack instead of collapsing it below the
        # observation noise.
        target_std = np.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2)) * np.sqrt(
            2.0 / (d_in + d_out)
        )
        scale = target_std * np.sqrt(max(d_in, d_out))
        weights.append(scale * _orthogonalized(raw))
    return MixingNetwork(
        weights=tuple(weights),
        d_z=d_z,
        d_x=d_x,
        widths=tuple(int(w) for w in widths),
        seed=int(seed),
    )


def _sin_args(values, d_z):
    """args[..., i, k] = (i+3)/pi * values[..., k] + i, for 0-based row i."""
    freqs = (np.arange(d_z, dtype=np.float64) + 3.0) / np.pi
    phases = np.arange(d_z, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    return freqs[:, None] * vals[..., None, :] + phases[:, None], freqs


def mu_time(z_prev, G):
    """z_prev + 0.5 * [row i of gz dotted with sin(freq_i*z_prev + phase_i)]_i."""
    if not isinstance(G, BinaryGraph):
        raise ValidationError("mu_time expects a BinaryGraph")
    z_prev = np.asarray(z_prev, dtype=np.float64)
    if z_prev.shape[-1] != G.d_z:
        raise ValidationError(f"z_prev has dim {z_prev.shape[-1]}, expected {G.d_z}")
    args, _ = _sin_args(z_prev, G.d_z)
    return z_prev + 0.5 * (G.gz * np.sin(args)).sum(axis=-1)


def mu_time_jacobian(z_prev, G):
    """Analytic d mu_time / d z_prev: I + 0.5 * gz * freq_i * cos(args)."""
    z_prev = np.asarray(z_prev, dtype=np.float64)
    args, freqs = _sin_args(z_prev, G.d_z)
    jac = 0.5 * G.gz * freqs[:, None] * np.cos(args)
    return jac + np.eye(G.d_z)


def mu_action(a_prev, G):
    """[row i of ga dotted with sin(freq_i*a_prev + phase_i)]_i; no z term."""
    if not isinstance(G, BinaryGraph):
        raise ValidationError("mu_action expects a BinaryGraph")
    a_prev = np.asarray(a_prev, dtype=np.float64)
    if a_prev.shape[-1] != G.d_a:
        raise ValidationError(f"a_prev has dim {a_prev.shape[-1]}, expected {G.d_a}")
    args, _ = _sin_args(a_prev, G.d_z)
    return (G.ga * np.sin(args)).sum(axis=-1)


def mu_action_jacobian(a_prev, G):
    """Analytic d mu_action / d a_prev: ga * freq_i * cos(args)."""
    a_prev = np.asarray(a_prev, dtype=np.float64)
    args, freqs = _sin_args(a_prev, G.d_z)
    return G.ga * freqs[:, None] * np.cos(args)


def builtin_graph(name):
    """The four benchmark graphs (10 latents, 5 actions).

    gz1: five 2x2 all-ones diagonal blocks. gz2: gz1 plus couplings between
    the first, third, and last blocks. ga1: each action parents one pair of
    latents. ga2: ga1 with action 0 additionally parenting latents 8 and 9.
    Time graphs carry an all-zero action block and vice versa.
    """
    d_z, d_a = 10, 5
    if name == "gz1":
        gz = np.kron(np.eye(5, dtype=np.uint8), np.ones((2, 2), dtype=np.uint8))
        return BinaryGraph(gz=gz, ga=np.zeros((d_z, d_a), dtype=np.uint8))
    if name == "gz2":
        gz = np.kron(np.eye(5, dtype=np.uint8), np.ones((2, 2), dtype=np.uint8))
        gz[0:2, 8:10] = 1
        gz[8:10, 0:2] = 1
        gz[8:10, 4:6] = 1
        return BinaryGraph(gz=gz, ga=np.zeros((d_z, d_a), dtype=np.uint8))
    if name == "ga1":
        ga = np.repeat(np.eye(5, dtype=np.uint8), 2, axis=0)
        return BinaryGraph(gz=np.zeros((d_z, d_z), dtype=np.uint8), ga=ga)
    if name == "ga2":
        ga = np.repeat(np.eye(5, dtype=np.uint8), 2, axis=0)
        ga[8:10, 0] = 1
        return BinaryGraph(gz=np.zeros((d_z, d_z), dtype=np.uint8), ga=ga)
    raise ValidationError(f"unknown builtin graph {name!r} (gz1|gz2|ga1|ga2)")


def builtin_kind(name):
    """Dataset kind implied by a builtin graph name."""
    if name in ("gz1", "gz2"):
        return "time"
    if name in ("ga1", "ga2"):
        return "action"
    raise ValidationError(f"unknown builtin graph {name!r} (gz1|gz2|ga1|ga2)")


@dataclass(frozen=True)
class TransitionSpec:
    """Ground-truth transition family: kind, graph, noise scales, length."""

    kind: str
    graph: BinaryGraph
    latent_noise_std: float = 0.01
    obs_noise_std: float = 0.01
    T: int = 2

    def __post_init__(self):
        if self.kind not in ("time", "action"):
            raise ValidationError(f"kind must be 'time' or 'action', got {self.kind!r}")
        if not isinstance(self.graph, BinaryGraph):
            raise ValidationError("graph must be a BinaryGraph")
        if self.latent_noise_std < 0 or self.obs_noise_std < 0:
            raise ValidationError("noise stds must be nonnegative")
        if self.kind == "time":
            if self.graph.ga.any():
                raise ValidationError("time kind requires an all-zero action block")
            if self.T < 2:
                raise ValidationError("time kind requires T >= 2")
        else:
            if self.graph.gz.any():
                raise ValidationError("action kind requires an all-zero latent block")
            if self.T < 1:
                raise ValidationError("T must be >= 1")

    @property
    def d_z(self):
        return self.graph.d_z

    @property
    def d_a(self):
        return self.graph.d_a

    def to_json(self):
        return {
            "kind": self.kind,
            "graph": self.graph.to_json(),
            "latent_noise_std": self.latent_noise_std,
            "obs_noise_std": self.obs_noise_std,
            "t": self.T,
        }

    @classmethod
    def from_json(cls, obj):
        try:
            return cls(
                kind=obj["kind"],
                graph=BinaryGraph.from_json(obj["graph"]),
                latent_noise_std=float(obj["latent_noise_std"]),
                obs_noise_std=float(obj["obs_noise_std"]),
                T=int(obj["t"]),
            )
        except KeyError as exc:
            raise ValidationError(f"transition spec missing field: {exc}") from exc


def builtin_spec(name, latent_noise_std=0.01, obs_noise_std=0.01, T=2):
    return TransitionSpec(
        kind=builtin_kind(name),
        graph=builtin_graph(name),
        latent_noise_std=latent_noise_std,
        obs_noise_std=obs_noise_std,
        T=T,
    )


class TransitionMap:
    """The mean function mu(z_prev, a_prev) of a TransitionSpec, with its
    analytic Jacobian with respect to z_prev exposed for variability checks."""

    def __init__(self, spec):
        if not isinstance(spec, TransitionSpec):
            raise ValidationError("TransitionMap expects a TransitionSpec")
        self.spec = spec
        self.graph = spec.graph
        self.kind = spec.kind

    def __call__(self, z_prev, a_prev):
        if self.kind == "time":
            return mu_time(z_prev, self.graph)
        return mu_action(a_prev, self.graph)

    def jacobian_z(self, z_prev, a_prev):
        if self.kind == "time":
            return mu_time_jacobian(z_prev, self.graph)
        z_prev = np.asarray(z_prev, dtype=np.float64)
        d = self.graph.d_z
        return np.zeros(z_prev.shape[:-1] + (d, d))


@dataclass
class Dataset:
    """In-memory trajectory collection plus the metadata needed to rebuild it."""

    x: np.ndarray
    a: np.ndarray
    z: np.ndarray
    spec: TransitionSpec
    mixing: dict
    data_seed: int
    version: str = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.x.shape[0]

    def meta_json(self):
        meta = {
            "format_version": self.version,
            "n": int(self.n),
            "spec": self.spec.to_json(),
            "mixing": dict(self.mixing),
            "data_seed": int(self.data_seed),
            "action_distribution": f"iid uniform[{ACTION_LOW},{ACTION_HIGH}]",
            "chunk_size": CHUNK_SIZE,
        }
        meta.update(self.extra)
        return meta

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for stem, arr in (("x", self.x), ("a", self.a), ("z", self.z)):
            (out / f"{stem}.bin").write_bytes(
                np.ascontiguousarray(arr, dtype="<f4").tobytes()
            )
        (out / "meta.json").write_text(
            json.dumps(self.meta_json(), sort_keys=True, indent=2) + "\n"
        )
        return out

    @classmethod
    def load(cls, in_dir):
        src = Path(in_dir)
        try:
            meta = json.loads((src / "meta.json").read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed meta.json in {src}: {exc}") from exc
        spec = TransitionSpec.from_json(meta["spec"])
        n, T = int(meta["n"]), spec.T
        dims = {"x": meta["mixing"]["d_x"], "a": spec.d_a, "z": spec.d_z}
        arrays = {}
        for stem, dim in dims.items():
            raw = np.frombuffer((src / f"{stem}.bin").read_bytes(), dtype="<f4")
            expected = n * T * dim
            if raw.size != expected:
                raise ValidationError(
                    f"{stem}.bin has {raw.size} values, expected {expected}"
                )
            arrays[stem] = raw.reshape(n, T, dim).astype(np.float64)
        known = {"format_version", "n", "spec", "mixing", "data_seed",
                 "action_distribution", "chunk_size"}
        extra = {k: v for k, v in meta.items() if k not in known}
        return cls(
            x=arrays["x"],
            a=arrays["a"],
            z=arrays["z"],
            spec=spec,
            mixing=meta["mixing"],
            data_seed=int(meta["data_seed"]),
            version=str(meta["format_version"]),
            extra=extra,
        )

    def sha256(self):
        h = hashlib.sha256()
        for arr in (self.x, self.a, self.z):
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()

    def split_heldout(self, frac=0.1):
        """(train indices, held-out indices): held-out = last frac of trajectories."""
        n_held = max(1, int(round(self.n * frac)))
        cut = self.n - n_held
        if cut < 1:
            raise ValidationError(f"dataset too small to split: n={self.n}")
        return np.arange(cut), np.arange(cut, self.n)


def simulate(spec, mixing, N, seed):
    """Draw N trajectories; bit-reproducible per (mixing seed, data seed).

    Each fixed-size chunk of trajectories uses an independent counter-based
    RNG stream keyed by (seed, chunk index) with a fixed draw order, so
    output is identical however the chunks are scheduled.
    """
    if not isinstance(spec, TransitionSpec):
        raise ValidationError("simulate expects a TransitionSpec")
    if not isinstance(mixing, MixingNetwork):
        raise ValidationError("simulate expects a MixingNetwork")
    if mixing.d_z != spec.d_z:
        raise ValidationError(
            f"mixing d_z={mixing.d_z} does not match graph d_z={spec.d_z}"
        )
    if N < 1:
        raise ValidationError(f"N must be >= 1, got {N}")
    if seed < 0:
        raise ValidationError("seed must be nonnegative")
    tmap = TransitionMap(spec)
    T, d_z, d_a, d_x = spec.T, spec.d_z, spec.d_a, mixing.d_x
    x = np.empty((N, T, d_x))
    a = np.empty((N, T, d_a))
    z = np.empty((N, T, d_z))
    for chunk in range(0, N, CHUNK_SIZE):
        lo, hi = chunk, min(chunk + CHUNK_SIZE, N)
        n_c = hi - lo
        bits = np.random.Philox(key=np.array([seed, chunk // CHUNK_SIZE], dtype=np.uint64))
        g = np.random.Generator(bits)
        a_c = g.uniform(ACTION_LOW, ACTION_HIGH, (n_c, T, d_a))
        z_c = np.empty((n_c, T, d_z))
        z_c[:, 0] = g.standard_normal((n_c, d_z))
        z_noise = g.standard_normal((n_c, T - 1, d_z)) if T > 1 else None
        x_noise = g.standard_normal((n_c, T, d_x))
        for t in range(1, T):
            z_c[:, t] = (
                tmap(z_c[:, t - 1], a_c[:, t - 1])
                + spec.latent_noise_std * z_noise[:, t - 1]
            )
        x[lo:hi] = mixing.forward(z_c) + spec.obs_noise_std * x_noise
        a[lo:hi] = a_c
        z[lo:hi] = z_c
    return Dataset(
        x=x,
        a=a,
        z=z,
        spec=spec,
        mixing=mixing.to_json(),
        data_seed=int(seed),
    )


def empirical_injectivity(mixing, n_pairs=10000, seed=0):
    """min ||f(z) - f(z')|| / ||z - z'|| over random pairs (reported, not asserted)."""
    rng = np.random.default_rng(seed)
    z1 = rng.standard_normal((n_pairs, mixing.d_z))
    z2 = rng.standard_normal((n_pairs, mixing.d_z))
    num = np.linalg.norm(mixing.forward(z1) - mixing.forward(z2), axis=1)
    den = np.linalg.norm(z1 - z2, axis=1)
    keep = den > 1e-12
    return float(np.min(num[keep] / den[keep]))
