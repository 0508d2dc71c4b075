"""Inference network: amortized per-address proposal parameters.

Architecture: a dense tanh encoder embeds the standardized observation, an
embedding table gives each address (instance stripped) a learned vector, and
a shared tanh trunk maps [obs embedding, address embedding, previous value]
to a hidden state read out by one linear head per address. Heads emit the
unconstrained proposal parameters consumed by proposal_from_params.

Everything is plain float64 numpy with hand-written backpropagation; the
analytic gradients are validated against central finite differences in the
test suite. Training is plain SGD with global-norm gradient clipping on
fresh Record-mode batches each step, so the simulator itself is the
(infinite) training set. All randomness derives from the config master seed:
stream (0,) initializes parameters, (1, i) drives the standardization and
head-discovery simulations, (2, step, i) the training batches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import distributions as dists
from .errors import (
    ConfigError,
    DimensionMismatch,
    MalformedFile,
    NonFiniteLoss,
    SimpplError,
    UnknownHead,
    VersionMismatch,
)
from .runtime import Mode, run_model

NET_FORMAT_VERSION = 1

_STD_FLOOR = 1e-6
_N_STANDARDIZE = 1000


@dataclass(frozen=True)
class HeadSpec:
    family: str
    out_dim: int


@dataclass
class NetArchitecture:
    obs_dim: int
    obs_embed_dim: int = 32
    addr_embed_dim: int = 16
    hidden_dim: int = 64
    heads: dict = field(default_factory=dict)

    def __post_init__(self):
        for dim in (self.obs_dim, self.obs_embed_dim, self.addr_embed_dim, self.hidden_dim):
            if dim < 1:
                raise ConfigError(f"architecture dimensions must be >= 1, got {dim}")
        for key, head in self.heads.items():
            if head.out_dim < 1:
                raise ConfigError(f"head {key!r} has out_dim {head.out_dim}")

    @property
    def trunk_in_dim(self):
        return self.obs_embed_dim + self.addr_embed_dim + 1


class NetParams:
    """Named float64 arrays; iteration order is fixed by sorted names."""

    def __init__(self, arrays):
        self.arrays = arrays

    def names(self):
        return sorted(self.arrays)

    def zeros_like(self):
        return NetParams({k: np.zeros_like(v) for k, v in self.arrays.items()})

    def copy(self):
        return NetParams({k: v.copy() for k, v in self.arrays.items()})

    def global_norm(self):
        return math.sqrt(sum(float(np.square(v).sum()) for v in self.arrays.values()))

    def scale(self, factor):
        for v in self.arrays.values():
            v *= factor

    def add_scaled(self, other, factor):
        for k, v in self.arrays.items():
            v += factor * other.arrays[k]

    def all_finite(self):
        return all(np.isfinite(v).all() for v in self.arrays.values())

    def to_vector(self):
        return np.concatenate([self.arrays[k].ravel() for k in self.names()])

    def from_vector(self, vec):
        need = sum(a.size for a in self.arrays.values())
        if vec.size != need:
            raise DimensionMismatch(f"vector has {vec.size} entries, params need {need}")
        pos = 0
        for k in self.names():
            arr = self.arrays[k]
            arr[...] = vec[pos:pos + arr.size].reshape(arr.shape)
            pos += arr.size


@dataclass
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, obs):
        return (obs - self.mean) / self.std


def glorot_init(arch, seed):
    """Uniform(+-sqrt(6/(fan_in+fan_out))) for encoder/trunk/embeddings,
    zeros for heads so initial proposals are each family's neutral member."""
    rng = np.random.default_rng(seed)
    arrays = {}

    def uniform(shape, fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    arrays["obs_W"] = uniform((arch.obs_embed_dim, arch.obs_dim), arch.obs_dim, arch.obs_embed_dim)
    arrays["obs_b"] = np.zeros(arch.obs_embed_dim)
    arrays["trunk_W"] = uniform((arch.hidden_dim, arch.trunk_in_dim), arch.trunk_in_dim, arch.hidden_dim)
    arrays["trunk_b"] = np.zeros(arch.hidden_dim)
    for key in sorted(arch.heads):
        head = arch.heads[key]
        arrays[f"embed::{key}"] = uniform((arch.addr_embed_dim,), 1, arch.addr_embed_dim)
        arrays[f"head_W::{key}"] = np.zeros((head.out_dim, arch.hidden_dim))
        arrays[f"head_b::{key}"] = np.zeros(head.out_dim)
    return NetParams(arrays)


def _squash(value):
    # keeps large raw values (momenta in tens of GeV) from saturating the trunk
    return value / (1.0 + abs(value))


@dataclass
class ProposalNetwork:
    """Bundle of architecture, parameters, and observation standardization."""

    arch: NetArchitecture
    params: NetParams
    standardization: Standardization

    def encode_obs(self, obs_vec):
        obs_vec = np.asarray(obs_vec, dtype=float)
        if obs_vec.shape != (self.arch.obs_dim,):
            raise DimensionMismatch(
                f"observation has shape {obs_vec.shape}, expected ({self.arch.obs_dim},)"
            )
        a = self.params.arrays
        return np.tanh(a["obs_W"] @ self.standardization.apply(obs_vec) + a["obs_b"])

    def raw_from_encoding(self, h_obs, head_key, prev_value):
        a = self.params.arrays
        if head_key not in self.arch.heads:
            raise UnknownHead(f"no head for address {head_key!r}")
        x = np.concatenate([h_obs, a[f"embed::{head_key}"], [_squash(prev_value)]])
        hidden = np.tanh(a["trunk_W"] @ x + a["trunk_b"])
        return a[f"head_W::{head_key}"] @ hidden + a[f"head_b::{head_key}"]

    def forward(self, obs_vec, address, prev_value):
        """Unconstrained proposal parameters for one address.

        address may be an Address or an already-stripped head key.
        """
        key = address if isinstance(address, str) else address.head_key
        return self.raw_from_encoding(self.encode_obs(obs_vec), key, prev_value)


def net_forward(net, observation, address, prev_value):
    return net.forward(observation, address, prev_value)


def _trace_obs_vector(trace):
    values = [o.value for o in trace.observes]
    if any(v is None for v in values):
        raise SimpplError("trace carries no recorded observe values")
    return np.asarray(values, dtype=float)


def _loss_and_grad(net, batch, want_grad):
    """Mean over traces of the summed proposal NLL, with optional gradients.

    The loss itself is computed through proposal_from_params/log_prob; the
    family gradients come from proposal_nll_grad. Finite-difference tests
    hold the two routes against each other.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    arch = net.arch
    a = net.params.arrays
    grads = net.params.zeros_like().arrays if want_grad else None
    total = 0.0
    e_dim = arch.obs_embed_dim
    a_dim = arch.addr_embed_dim
    for trace in batch:
        obs = net.standardization.apply(_trace_obs_vector(trace))
        if obs.shape != (arch.obs_dim,):
            raise DimensionMismatch(
                f"trace observation has shape {obs.shape}, expected ({arch.obs_dim},)"
            )
        h_obs = np.tanh(a["obs_W"] @ obs + a["obs_b"])
        d_h_obs = np.zeros_like(h_obs) if want_grad else None
        prev = 0.0
        for entry in trace.entries:
            key = entry.address.head_key
            if key not in arch.heads:
                raise UnknownHead(f"no head for address {key!r}")
            prior = dists.from_params(entry.address.family_tag, entry.params)
            x = np.concatenate([h_obs, a[f"embed::{key}"], [_squash(prev)]])
            pre = a["trunk_W"] @ x + a["trunk_b"]
            hidden = np.tanh(pre)
            raw = a[f"head_W::{key}"] @ hidden + a[f"head_b::{key}"]
            proposal = dists.proposal_from_params(prior, raw)
            total -= proposal.log_prob(entry.value)
            if want_grad:
                _, d_raw = dists.proposal_nll_grad(prior, raw, entry.value)
                grads[f"head_W::{key}"] += np.outer(d_raw, hidden)
                grads[f"head_b::{key}"] += d_raw
                d_hidden = a[f"head_W::{key}"].T @ d_raw
                d_pre = d_hidden * (1.0 - hidden * hidden)
                grads["trunk_W"] += np.outer(d_pre, x)
                grads["trunk_b"] += d_pre
                d_x = a["trunk_W"].T @ d_pre
                d_h_obs += d_x[:e_dim]
                grads[f"embed::{key}"] += d_x[e_dim:e_dim + a_dim]
            prev = float(entry.value)
        if want_grad:
            d_pre_obs = d_h_obs * (1.0 - h_obs * h_obs)
            grads["obs_W"] += np.outer(d_pre_obs, obs)
            grads["obs_b"] += d_pre_obs
    scale = 1.0 / len(batch)
    if want_grad:
        grad_params = NetParams(grads)
        grad_params.scale(scale)
        return total * scale, grad_params
    return total * scale, None


def ic_loss(net, batch):
    """Mean per-trace sum of -log q over all entries."""
    return _loss_and_grad(net, batch, want_grad=False)[0]


def ic_grad(net, batch):
    """Exact gradient of ic_loss with respect to every parameter array."""
    return _loss_and_grad(net, batch, want_grad=True)[1]


@dataclass
class TrainingConfig:
    steps: int
    master_seed: int = 0
    batch_size: int = 64
    learning_rate: float = 1e-3
    grad_clip_norm: float = 10.0

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0 or self.grad_clip_norm <= 0:
            raise ConfigError("learning_rate and grad_clip_norm must be positive")


def _derived_seed(master_seed, *key):
    return np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(key))


def discover_architecture(model_spec, master_seed, n_sims=_N_STANDARDIZE,
                          obs_embed_dim=32, addr_embed_dim=16, hidden_dim=64):
    """Build the architecture and standardization from prior simulations.

    Runs n_sims Record-mode executions: their observe values give the
    per-cell standardization moments and their entries enumerate the heads.
    """
    if n_sims < 2:
        raise ConfigError("n_sims must be >= 2")
    heads = {}
    obs_rows = []
    for i in range(n_sims):
        trace = run_model(model_spec.run, Mode.RECORD, _derived_seed(master_seed, 1, i))
        obs_rows.append(_trace_obs_vector(trace))
        if obs_rows[-1].size != obs_rows[0].size:
            raise ConfigError(
                "models with varying observation layout cannot be standardized"
            )
        for entry in trace.entries:
            key = entry.address.head_key
            if key not in heads:
                prior = dists.from_params(entry.address.family_tag, entry.params)
                heads[key] = HeadSpec(entry.address.family_tag, dists.proposal_param_dim(prior))
    matrix = np.asarray(obs_rows)
    std = Standardization(
        mean=matrix.mean(axis=0),
        std=np.maximum(matrix.std(axis=0), _STD_FLOOR),
    )
    arch = NetArchitecture(
        obs_dim=matrix.shape[1],
        obs_embed_dim=obs_embed_dim,
        addr_embed_dim=addr_embed_dim,
        hidden_dim=hidden_dim,
        heads=heads,
    )
    return arch, std


def train(model_spec, config, arch=None, standardization=None, on_step=None):
    """SGD training loop; returns the trained ProposalNetwork.

    Each step draws a fresh batch of Record-mode traces with seeds derived
    from (master_seed, step, index), so the same config always produces
    bitwise-identical parameters.
    """
    if arch is None or standardization is None:
        disc_arch, disc_std = discover_architecture(model_spec, config.master_seed)
        arch = arch or disc_arch
        standardization = standardization or disc_std
    params = glorot_init(arch, _derived_seed(config.master_seed, 0))
    net = ProposalNetwork(arch=arch, params=params, standardization=standardization)
    for step in range(config.steps):
        batch = [
            run_model(model_spec.run, Mode.RECORD, _derived_seed(config.master_seed, 2, step, i))
            for i in range(config.batch_size)
        ]
        loss, grad = _loss_and_grad(net, batch, want_grad=True)
        if not math.isfinite(loss):
            raise NonFiniteLoss(step)
        norm = grad.global_norm()
        if not math.isfinite(norm):
            raise NonFiniteLoss(step, "gradient is not finite")
        if norm > config.grad_clip_norm:
            grad.scale(config.grad_clip_norm / norm)
        params.add_scaled(grad, -config.learning_rate)
        if not params.all_finite():
            raise NonFiniteLoss(step, "parameters became non-finite")
        if on_step is not None:
            on_step(step, loss)
    return net


class TrainedProposal:
    """Adapter exposing a ProposalNetwork as a runtime proposal source.

    The observation is fixed per inference run, so its encoding is computed
    once and shared by every particle. Addresses without a head return None,
    which the runtime counts and resolves by falling back to the prior.
    """

    def __init__(self, net, obs_vector):
        self.net = net
        self._h_obs = net.encode_obs(np.asarray(obs_vector, dtype=float))

    def proposal_for(self, address, prev_value, prior):
        key = address.head_key
        if key not in self.net.arch.heads:
            return None
        raw = self.net.raw_from_encoding(self._h_obs, key, prev_value)
        return dists.proposal_from_params(prior, raw)


# ---------------------------------------------------------------------------
# serialization


def save_net(net, path):
    obj = {
        "version": NET_FORMAT_VERSION,
        "arch": {
            "obs_dim": net.arch.obs_dim,
            "obs_embed_dim": net.arch.obs_embed_dim,
            "addr_embed_dim": net.arch.addr_embed_dim,
            "hidden_dim": net.arch.hidden_dim,
            "heads": {
                key: {"family": head.family, "out_dim": head.out_dim}
                for key, head in net.arch.heads.items()
            },
        },
        "standardization": {
            "mean": net.standardization.mean.tolist(),
            "std": net.standardization.std.tolist(),
        },
        "params": {name: arr.tolist() for name, arr in net.params.arrays.items()},
    }
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True)


def load_net(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedFile(f"{path}: {exc}") from exc
    if not isinstance(obj, dict) or "version" not in obj:
        raise MalformedFile(f"{path}: missing version field")
    if obj["version"] != NET_FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: format version {obj['version']!r}, supported {NET_FORMAT_VERSION}"
        )
    try:
        arch_obj = obj["arch"]
        heads = {
            key: HeadSpec(h["family"], int(h["out_dim"]))
            for key, h in arch_obj["heads"].items()
        }
        arch = NetArchitecture(
            obs_dim=int(arch_obj["obs_dim"]),
            obs_embed_dim=int(arch_obj["obs_embed_dim"]),
            addr_embed_dim=int(arch_obj["addr_embed_dim"]),
            hidden_dim=int(arch_obj["hidden_dim"]),
            heads=heads,
        )
        std = Standardization(
            mean=np.asarray(obj["standardization"]["mean"], dtype=float),
            std=np.asarray(obj["standardization"]["std"], dtype=float),
        )
        arrays = {name: np.asarray(arr, dtype=float) for name, arr in obj["params"].items()}
        net = ProposalNetwork(arch=arch, params=NetParams(arrays), standardization=std)
        _check_shapes(net)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"{path}: {exc}") from exc
    return net


def _check_shapes(net):
    arch = net.arch
    expected = {
        "obs_W": (arch.obs_embed_dim, arch.obs_dim),
        "obs_b": (arch.obs_embed_dim,),
        "trunk_W": (arch.hidden_dim, arch.trunk_in_dim),
        "trunk_b": (arch.hidden_dim,),
    }
    for key, head in arch.heads.items():
        expected[f"embed::{key}"] = (arch.addr_embed_dim,)
        expected[f"head_W::{key}"] = (head.out_dim, arch.hidden_dim)
        expected[f"head_b::{key}"] = (head.out_dim,)
    actual = {k: v.shape for k, v in net.params.arrays.items()}
    if actual != expected:
        raise ValueError("parameter arrays do not match the architecture")
    if net.standardization.mean.shape != (arch.obs_dim,) or net.standardization.std.shape != (
        arch.obs_dim,
    ):
        raise ValueError("standardization vectors do not match obs_dim")
