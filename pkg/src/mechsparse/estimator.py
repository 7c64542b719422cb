"""Constrained sparse-mechanism VAE.

A sequential Gaussian VAE whose transition prior gates its inputs through
Bernoulli edge masks with learnable logits. Training maximizes the ELBO
subject to an expected-edge-count budget via gradient descent-ascent on the
Lagrangian, with dual restarts and a linearly decaying budget. Edge
gradients flow through a straight-through relaxed-Bernoulli sample; the
learnable block is the latent-parent matrix on time datasets and the
action-parent matrix on action datasets (the other block is fixed to zero).
"""

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import NumericalError, ValidationError
from .graph_algebra import BinaryGraph

CHECKPOINT_VERSION = "1"
_NOISE_EPS = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run; serializes to/from a flat JSON object."""

    total_steps: int = 20000
    batch_size: int = 512
    primal_lr: float = 1e-3
    dual_lr: float = 1e-2
    beta_target: float = None
    ramp_frac: float = 0.5
    temperature: float = 1.0
    seed: int = 0
    enc_widths: tuple = (64, 64)
    dec_widths: tuple = (64, 64)
    trans_widths: tuple = (32, 32)
    no_sparsity: bool = False
    heldout_frac: float = 0.1
    eval_every: int = 0
    checkpoint_every: int = 0
    log_every: int = 100
    mask_sampling: str = "per_example"

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValidationError("config.total_steps: must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("config.batch_size: must be >= 1")
        if self.primal_lr <= 0 or self.dual_lr <= 0:
            raise ValidationError("config.primal_lr/dual_lr: must be > 0")
        if self.temperature <= 0:
            raise ValidationError("config.temperature: must be > 0")
        if not 0.0 <= self.ramp_frac <= 1.0:
            raise ValidationError("config.ramp_frac: must lie in [0, 1]")
        if not 0.0 < self.heldout_frac < 1.0:
            raise ValidationError("config.heldout_frac: must lie in (0, 1)")
        if not self.no_sparsity:
            if self.beta_target is None or self.beta_target <= 0:
                raise ValidationError(
                    "config.beta_target: required and > 0 unless no_sparsity"
                )
        if self.mask_sampling != "per_example":
            raise ValidationError(
                "config.mask_sampling: only 'per_example' is implemented"
            )
        for name in ("enc_widths", "dec_widths", "trans_widths"):
            widths = getattr(self, name)
            if not widths or any(int(w) < 1 for w in widths):
                raise ValidationError(f"config.{name}: nonempty positive widths required")
            object.__setattr__(self, name, tuple(int(w) for w in widths))

    def to_json(self):
        obj = asdict(self)
        for name in ("enc_widths", "dec_widths", "trans_widths"):
            obj[name] = list(obj[name])
        return obj

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict):
            raise ValidationError("config: expected a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"config: unknown fields {sorted(unknown)}")
        kwargs = dict(obj)
        for name in ("enc_widths", "dec_widths", "trans_widths"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"config: {exc}") from exc


def _mlp(d_in, widths, d_out):
    layers = []
    prev = d_in
    for w in widths:
        layers += [nn.Linear(prev, w), nn.LeakyReLU(0.2)]
        prev = w
    layers.append(nn.Linear(prev, d_out))
    return nn.Sequential(*layers)


class GroupedTransitions(nn.Module):
    """d_z independent MLPs evaluated in one batched matmul per layer.

    Weight tensors have shape (d_z, out, in); input (B, d_z, d_in) maps to
    one scalar mean per latent, output (B, d_z). Initialization matches the
    default linear-layer scheme, independently per latent.
    """

    def __init__(self, d_z, d_in, widths):
        super().__init__()
        self.d_z = d_z
        dims = [d_in] + list(widths) + [1]
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for a, b in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(a)
            self.weights.append(
                nn.Parameter(torch.empty(d_z, b, a).uniform_(-bound, bound))
            )
            self.biases.append(
                nn.Parameter(torch.empty(d_z, b).uniform_(-bound, bound))
            )

    def forward(self, inp):
        h = inp.transpose(0, 1)  # (d_z, B, d_in)
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = torch.baddbmm(b.unsqueeze(1), h, W.transpose(1, 2))
            if k < last:
                h = torch.nn.functional.leaky_relu(h, 0.2)
        return h.squeeze(-1).transpose(0, 1)  # (B, d_z)


def sample_masks(gamma, temperature, batch_shape=(), noise=None, generator=None,
                 mode="st"):
    """Relaxed-Bernoulli edge masks with the straight-through estimator.

    Forward value is the hard threshold of the relaxed sample (mode "st") or
    the relaxed sample itself (mode "soft"); the backward path always runs
    through the relaxed sigmoid. `noise` fixes the uniform draws (for
    gradient oracles); otherwise fresh draws per call.
    """
    if temperature <= 0:
        raise ValidationError("temperature must be > 0")
    if mode not in ("st", "soft"):
        raise ValidationError(f"unknown mask mode {mode!r}")
    shape = tuple(batch_shape) + tuple(gamma.shape)
    if noise is None:
        noise = torch.rand(shape, generator=generator, dtype=gamma.dtype)
    elif tuple(noise.shape) != shape:
        raise ValidationError(f"noise shape {tuple(noise.shape)} != {shape}")
    logistic = torch.log(noise + _NOISE_EPS) - torch.log1p(-noise + _NOISE_EPS)
    soft = torch.sigmoid((gamma + logistic) / temperature)
    if mode == "soft":
        return soft
    hard = (soft > 0.5).to(soft.dtype)
    return hard + (soft - soft.detach())


def constraint_value(gamma):
    """Expected learnable edge count: the elementwise sigmoid's grand sum."""
    if isinstance(gamma, torch.Tensor):
        return torch.sigmoid(gamma).sum()
    sig = 1.0 / (1.0 + np.exp(-np.asarray(gamma, dtype=np.float64)))
    return float(sig.sum())


def beta_schedule(step, total_steps, ramp_frac, start, target):
    """Linear ramp from start to target over the first ramp_frac of training."""
    ramp = max(1, int(round(total_steps * ramp_frac)))
    frac = min(1.0, step / ramp)
    return float(start + (target - start) * frac)


def _gaussian_kl(mean_q, logvar_q, mean_p, logvar_p):
    """KL(N(mean_q, e^logvar_q) || N(mean_p, e^logvar_p)), summed over the
    last dimension."""
    term = (
        logvar_p
        - logvar_q
        + (torch.exp(logvar_q) + (mean_q - mean_p) ** 2) / torch.exp(logvar_p)
        - 1.0
    )
    return 0.5 * term.sum(dim=-1)


class SparseMechanismVAE(nn.Module):
    """Encoder/decoder pair plus per-latent gated transition priors."""

    def __init__(self, d_z, d_x, d_a, kind, config):
        super().__init__()
        if kind not in ("time", "action"):
            raise ValidationError(f"kind must be 'time' or 'action', got {kind!r}")
        self.d_z, self.d_x, self.d_a, self.kind = d_z, d_x, d_a, kind
        self.temperature = config.temperature
        self.encoder = _mlp(d_x, config.enc_widths, 2 * d_z)
        self.decoder = _mlp(d_z, config.dec_widths, d_x)
        self.obs_logvar = nn.Parameter(torch.tensor(-4.0))
        self.transitions = GroupedTransitions(d_z, d_z + d_a, config.trans_widths)
        self.trans_logvar = nn.Parameter(torch.full((d_z,), -4.0))
        self.prior0_mean = nn.Parameter(torch.zeros(d_z))
        self.prior0_logvar = nn.Parameter(torch.zeros(d_z))
        n_learn = d_z if kind == "time" else d_a
        self.gamma = nn.Parameter(torch.full((d_z, n_learn), 5.0))

    @property
    def learnable_edge_count(self):
        return self.gamma.numel()

    def full_masks(self, learned_masks):
        """Embed the learnable block into the (d_z, d_z + d_a) gate layout."""
        shape = learned_masks.shape[:-2]
        zeros_dim = self.d_a if self.kind == "time" else self.d_z
        zeros = torch.zeros(
            shape + (self.d_z, zeros_dim), dtype=learned_masks.dtype
        )
        if self.kind == "time":
            return torch.cat([learned_masks, zeros], dim=-1)
        return torch.cat([zeros, learned_masks], dim=-1)

    def encode(self, x):
        out = self.encoder(x)
        return out[..., : self.d_z], out[..., self.d_z :]

    def encode_means(self, x):
        with torch.no_grad():
            mean, _ = self.encode(x)
        return mean

    def elbo(self, x, a, *, latent_noise=None, mask_noise=None, mask_mode="st",
             generator=None):
        """Reconstruction minus KL, averaged over the batch.

        One reparameterized latent sample per (example, step) is used both
        for reconstruction and as the conditioning input of the next step's
        transition prior; one edge-mask sample per example is shared across
        steps. Fixed noise tensors make the whole expression a
        deterministic, differentiable function of the parameters.
        """
        if x.dim() != 3 or a.dim() != 3 or x.shape[:2] != a.shape[:2]:
            raise ValidationError(
                f"x and a must be (B, T, dim) with matching B, T; got "
                f"{tuple(x.shape)} and {tuple(a.shape)}"
            )
        B, T = x.shape[0], x.shape[1]
        q_mean, q_logvar = self.encode(x)
        if latent_noise is None:
            latent_noise = torch.randn(
                (B, T, self.d_z), generator=generator, dtype=x.dtype
            )
        z = q_mean + torch.exp(0.5 * q_logvar) * latent_noise

        x_hat = self.decoder(z)
        obs_var = torch.exp(self.obs_logvar)
        sq_err = ((x - x_hat) ** 2).sum(dim=-1)
        log2pi = math.log(2.0 * math.pi)
        recon = -0.5 * (
            self.d_x * (log2pi + self.obs_logvar) + sq_err / obs_var
        ).sum(dim=1)

        masks = sample_masks(
            self.gamma,
            self.temperature,
            batch_shape=(B,),
            noise=mask_noise,
            generator=generator,
            mode=mask_mode,
        )
        gates = self.full_masks(masks)

        kl = _gaussian_kl(
            q_mean[:, 0], q_logvar[:, 0], self.prior0_mean, self.prior0_logvar
        )
        for t in range(1, T):
            prev = torch.cat([z[:, t - 1], a[:, t - 1]], dim=-1)
            gated = gates * prev.unsqueeze(1)
            trans_mean = self.transitions(gated)
            kl = kl + _gaussian_kl(
                q_mean[:, t], q_logvar[:, t], trans_mean, self.trans_logvar
            )

        recon_mean = recon.mean()
        kl_mean = kl.mean()
        if not torch.isfinite(recon_mean):
            raise NumericalError("non-finite reconstruction term")
        if not torch.isfinite(kl_mean):
            raise NumericalError("non-finite KL term")
        return {
            "elbo": recon_mean - kl_mean,
            "recon": recon_mean,
            "kl": kl_mean,
        }

    def extract_graph(self, threshold=0.5):
        """Binary graph of the edges whose probability exceeds the threshold."""
        with torch.no_grad():
            probs = torch.sigmoid(self.gamma).cpu().numpy()
        learned = (probs > threshold).astype(np.uint8)
        if self.kind == "time":
            return BinaryGraph(
                gz=learned, ga=np.zeros((self.d_z, self.d_a), dtype=np.uint8)
            )
        return BinaryGraph(
            gz=np.zeros((self.d_z, self.d_z), dtype=np.uint8), ga=learned
        )


@dataclass
class TrainState:
    """Everything owned by the training loop."""

    model: SparseMechanismVAE
    config: TrainConfig
    kind: str
    alpha: float = 0.0
    beta: float = math.inf
    step: int = 0
    history: list = field(default_factory=list)


def _dataset_tensors(dataset, idx):
    x = torch.tensor(dataset.x[idx], dtype=torch.float32)
    a = torch.tensor(dataset.a[idx], dtype=torch.float32)
    return x, a


def train(dataset, config, out_dir=None, log=None):
    """Run the constrained descent-ascent loop on the dataset's train split."""
    torch.manual_seed(config.seed)
    kind = dataset.spec.kind
    d_z, d_a, d_x = dataset.spec.d_z, dataset.spec.d_a, dataset.x.shape[-1]
    model = SparseMechanismVAE(d_z, d_x, d_a, kind, config)
    train_idx, _ = dataset.split_heldout(config.heldout_frac)
    x_all, a_all = _dataset_tensors(dataset, train_idx)
    n_train = x_all.shape[0]
    opt = torch.optim.Adam(model.parameters(), lr=config.primal_lr)
    gen = torch.Generator().manual_seed(config.seed)
    beta_start = float(d_z * (d_z + d_a))
    state = TrainState(model=model, config=config, kind=kind)

    for step in range(config.total_steps):
        if config.no_sparsity:
            beta = math.inf
        else:
            beta = beta_schedule(
                step, config.total_steps, config.ramp_frac, beta_start,
                config.beta_target,
            )
        idx = torch.randint(0, n_train, (config.batch_size,), generator=gen)
        out = model.elbo(x_all[idx], a_all[idx], generator=gen)
        loss = -out["elbo"]
        if not config.no_sparsity:
            loss = loss + state.alpha * (constraint_value(model.gamma) - beta)
        if not torch.isfinite(loss):
            if out_dir is not None:
                save_checkpoint(state, Path(out_dir) / "diverged.pt")
            raise NumericalError(f"non-finite loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()

        with torch.no_grad():
            c_post = float(constraint_value(model.gamma))
        if not config.no_sparsity:
            violation = c_post - beta
            state.alpha = max(0.0, state.alpha + config.dual_lr * violation)
            if violation <= 0:
                state.alpha = 0.0
        state.beta = beta
        state.step = step + 1

        if config.log_every and (step % config.log_every == 0
                                 or step == config.total_steps - 1):
            rec = {
                "step": step,
                "elbo": float(out["elbo"].detach()),
                "recon": float(out["recon"].detach()),
                "kl": float(out["kl"].detach()),
                "constraint": c_post,
                "alpha": state.alpha,
                "beta": beta,
            }
            state.history.append(rec)
            if log is not None:
                log(
                    f"step {rec['step']:>6d}  elbo {rec['elbo']:>10.2f}  "
                    f"edges {rec['constraint']:>7.2f}  beta {rec['beta']:>7.2f}  "
                    f"alpha {rec['alpha']:.3f}"
                )
        if (
            out_dir is not None
            and config.checkpoint_every
            and (step + 1) % config.checkpoint_every == 0
        ):
            save_checkpoint(state, Path(out_dir) / f"checkpoint_{step + 1}.pt")
    return state


def evaluate(state, dataset, heldout=True):
    """Metrics + equivalence witnesses on encoder means (held-out split).

    Returns the metric report, the fitted affine witness, the
    consistency-equivalence diagnostics, and the four matrices of the
    standard comparison figure (aligned learned graph, true graph, |C|,
    allowed pattern).
    """
    from .equivalence import consistency_equivalence_report, fit_linear_witness
    from .graph_algebra import combined_mask
    from .metrics import metric_report

    model = state.model
    _, held_idx = dataset.split_heldout(state.config.heldout_frac)
    idx = held_idx if heldout else np.arange(dataset.n)
    x, _ = _dataset_tensors(dataset, idx)
    zhat = model.encode_means(x).numpy().reshape(-1, model.d_z).astype(np.float64)
    z_true = dataset.z[idx].reshape(-1, model.d_z)
    g_true = dataset.spec.graph
    g_hat = model.extract_graph()
    report = metric_report(z_true, zhat, g_true, g_hat)
    witness = fit_linear_witness(z_true, zhat)
    eq = consistency_equivalence_report(witness, g_true, g_hat)
    sigma = report.p_hat.sigma
    matrices = {
        "learned_gz_aligned": g_hat.gz[np.ix_(sigma, sigma)].astype(int),
        "learned_ga_aligned": g_hat.ga[sigma].astype(int),
        "true_gz": g_true.gz.astype(int),
        "true_ga": g_true.ga.astype(int),
        "coefficients_aligned_abs": np.abs(
            np.asarray(witness.L) @ report.p_hat.matrix
        ),
        "allowed_pattern": combined_mask(g_true).astype(int),
    }
    return {
        "metrics": report,
        "witness": witness,
        "equivalence": eq,
        "matrices": matrices,
        "n_eval": int(len(idx)),
    }


def save_checkpoint(state, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "kind": state.kind,
            "dims": {
                "d_z": state.model.d_z,
                "d_x": state.model.d_x,
                "d_a": state.model.d_a,
            },
            "config": state.config.to_json(),
            "model": state.model.state_dict(),
            "alpha": state.alpha,
            "beta": state.beta,
            "step": state.step,
            "history": state.history,
            "torch_rng": torch.get_rng_state(),
        },
        path,
    )
    return path


def load_checkpoint(path):
    try:
        blob = torch.load(path, weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValidationError(f"unreadable checkpoint {path}: {exc}") from exc
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(
            f"checkpoint version {blob.get('version')!r} unsupported"
        )
    config = TrainConfig.from_json(blob["config"])
    dims = blob["dims"]
    model = SparseMechanismVAE(
        dims["d_z"], dims["d_x"], dims["d_a"], blob["kind"], config
    )
    model.load_state_dict(blob["model"])
    return TrainState(
        model=model,
        config=config,
        kind=blob["kind"],
        alpha=float(blob["alpha"]),
        beta=float(blob["beta"]),
        step=int(blob["step"]),
        history=list(blob["history"]),
    )
