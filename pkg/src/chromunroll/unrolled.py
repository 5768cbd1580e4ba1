"""Unrolled ISTA / primal-dual / half-quadratic networks.

Each network runs ``K`` iterations of its classical solver with per-layer
hyperparameters. Parameters are stored unconstrained and mapped through
softplus, so they stay strictly positive under any optimizer step.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .operators import ForwardModel, convolution, make_forward
from .sigmodel import KernelSpec, sample_kernel
from .solvers import hq_step, ista_step, pd_step

VARIANTS = ("u-ista", "u-pd", "u-hq")
CHECKPOINT_FORMAT = "chromunroll-checkpoint"
CHECKPOINT_VERSION = 1

# per-layer parameter names; "rho" is shared by all U-PD layers
LAYER_PARAMS = {
    "u-ista": ("gamma", "chi"),
    "u-pd": ("tau", "sigma"),
    "u-hq": ("lambda1", "lambda2", "delta1", "delta2"),
}
SHARED_PARAMS = {"u-ista": (), "u-pd": ("rho",), "u-hq": ()}


class NonFiniteError(FloatingPointError):
    def __init__(self, msg, layer=None):
        super().__init__(msg)
        self.layer = layer


class TrainingAborted(RuntimeError):
    def __init__(self, msg, epoch, batch):
        super().__init__(msg)
        self.epoch = epoch
        self.batch = batch


def default_parameters(variant, K, L, sigma_e=0.02, n=2000) -> dict:
    """Classical-solver hyperparameters for every layer."""
    if variant == "u-ista":
        vals = {"gamma": 1.0 / L**2, "chi": 0.01}
    elif variant == "u-pd":
        vals = {"tau": 0.99 / L, "sigma": 0.99 / L}
    elif variant == "u-hq":
        vals = {"lambda1": 0.1, "lambda2": 0.1, "delta1": 1.0, "delta2": 1.0}
    else:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    out = {k: np.full(K, v) for k, v in vals.items()}
    if variant == "u-pd":
        out["rho"] = np.array([sigma_e * math.sqrt(n)])
    return out


@dataclass
class ForwardSetup:
    """What is needed to rebuild the forward operator of a checkpoint."""

    n: int
    sigma_f: float
    a: float
    sigma_g: float
    sigma_e: float
    trunc_eps: float = 1e-4

    @classmethod
    def from_spec(cls, spec) -> "ForwardSetup":
        return cls(
            n=spec.n, sigma_f=spec.sigma_f, a=spec.a, sigma_g=spec.sigma_g,
            sigma_e=spec.sigma_e, trunc_eps=spec.trunc_eps,
        )

    def build(self) -> ForwardModel:
        kernel = sample_kernel(KernelSpec(sigma_f=self.sigma_f, a=self.a, trunc_eps=self.trunc_eps))
        return make_forward(kernel, self.sigma_g, self.n)


class UnrolledModel:
    """K-layer unrolled solver with learnable positive hyperparameters.

    Parameters
    ----------
    variant : {"u-ista", "u-pd", "u-hq"}
    K : int
        Number of layers (0 allowed; returns zeros).
    op : ForwardModel
    raw : dict, optional
        Unconstrained parameter arrays; defaults to the classical settings.
    cg_iters : int
        Conjugate-gradient iterations per U-HQ layer.
    """

    def __init__(self, variant, K, op, raw=None, cg_iters=20, sigma_e=0.02, fingerprint=None, setup=None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        if K < 0:
            raise ValueError("K must be >= 0")
        self.variant = variant
        self.K = int(K)
        self.op = op
        self.cg_iters = int(cg_iters)
        self.fingerprint = fingerprint
        self.setup = setup
        self.history = []
        self.peak_op = convolution(op.kernel, op.dim_in) if isinstance(op, ForwardModel) else None
        if raw is None:
            theta = default_parameters(variant, self.K, op.norm, sigma_e=sigma_e, n=op.dim_in)
            raw = {k: ad.softplus_inv(v) for k, v in theta.items()}
        self.raw = {k: np.array(v, dtype=np.float64) for k, v in raw.items()}
        expected = set(LAYER_PARAMS[variant]) | set(SHARED_PARAMS[variant])
        if set(self.raw) != expected:
            raise ValueError(f"{variant} needs parameters {sorted(expected)}, got {sorted(self.raw)}")
        for k in LAYER_PARAMS[variant]:
            if self.raw[k].shape != (self.K,):
                raise ValueError(f"parameter {k} must have shape ({self.K},)")

    @classmethod
    def from_setup(cls, variant, K, setup: ForwardSetup, **kw):
        return cls(variant, K, setup.build(), sigma_e=setup.sigma_e, setup=setup, **kw)

    # -- parameters --------------------------------------------------------
    @property
    def names(self) -> list:
        return sorted(self.raw)

    @property
    def theta(self) -> dict:
        return {k: np.logaddexp(0.0, v) for k, v in self.raw.items()}

    def flat(self) -> np.ndarray:
        return np.concatenate([self.raw[k].ravel() for k in self.names]) if self.raw else np.zeros(0)

    def set_flat(self, vec):
        i = 0
        for k in self.names:
            m = self.raw[k].size
            self.raw[k] = np.array(vec[i : i + m], dtype=np.float64).reshape(self.raw[k].shape)
            i += m

    def copy(self) -> "UnrolledModel":
        m = UnrolledModel(
            self.variant, self.K, self.op, raw={k: v.copy() for k, v in self.raw.items()},
            cg_iters=self.cg_iters, fingerprint=self.fingerprint, setup=self.setup,
        )
        m.history = list(self.history)
        return m

    # -- evaluation --------------------------------------------------------
    def _layers(self, z, params, check_layer):
        """Run K layers on batch ``z``; ``params`` maps names to per-layer values."""
        op = self.op
        x = np.zeros(np.shape(z))
        if self.variant == "u-pd":
            xbar = x
            y = np.zeros(np.shape(z))
        for k in range(self.K):
            if self.variant == "u-ista":
                x = ista_step(op, x, z, params["gamma"][k], params["chi"][k])
            elif self.variant == "u-pd":
                x, xbar, y = pd_step(
                    op, x, xbar, y, z, params["tau"][k], params["sigma"][k], params["rho"][0]
                )
            else:
                x = hq_step(
                    op, x, z, params["lambda1"][k], params["lambda2"][k],
                    params["delta1"][k], params["delta2"][k], self.cg_iters,
                )
            check_layer(k, x)
        return x

    def peaks(self, x):
        return ad.apply_op(self.peak_op, x)


def _check_finite(k, x):
    if not np.all(np.isfinite(ad.value(x))):
        raise NonFiniteError(f"non-finite values after layer {k + 1}", layer=k + 1)


@dataclass
class ForwardTape:
    """Tape plus handles needed by :func:`backward`."""

    tape: ad.Tape
    raw_vars: dict
    theta_vars: dict
    x: ad.Var | np.ndarray
    p: ad.Var | np.ndarray


def forward(model: UnrolledModel, z):
    """Run the network on ``z`` (one signal or a batch) while recording a tape.

    Returns ``(x_hat, p_hat, tape)`` with ``p_hat`` the clean peak estimate.
    """
    z = np.asarray(z, dtype=np.float64)
    tape = ad.Tape()
    raw_vars, theta_vars, params = {}, {}, {}
    for name in model.names:
        rv = [tape.var(u) for u in model.raw[name]]
        tv = [ad.softplus(u) for u in rv]
        raw_vars[name], theta_vars[name], params[name] = rv, tv, tv
    x = model._layers(z, params, _check_finite)
    if model.K == 0:
        x = np.zeros_like(z)
    p = model.peaks(x)
    return ad.value(x), ad.value(p), ForwardTape(tape, raw_vars, theta_vars, x, p)


@dataclass
class Gradients:
    raw: dict
    theta: dict

    def flat(self, names) -> np.ndarray:
        return np.concatenate([self.raw[k].ravel() for k in names]) if names else np.zeros(0)


def backward(ft: ForwardTape, grad_p=None, grad_x=None) -> Gradients:
    """Reverse pass: loss gradients at ``p_hat`` (and/or ``x_hat``) to parameters."""
    seeds = {}
    for out, g in ((ft.p, grad_p), (ft.x, grad_x)):
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != np.shape(ad.value(out)):
            raise ValueError(f"loss gradient shape {g.shape} does not match output {np.shape(ad.value(out))}")
        if isinstance(out, ad.Var):
            seeds[out] = g
    names = list(ft.raw_vars)
    flat_vars = [v for k in names for v in ft.raw_vars[k]] + [v for k in names for v in ft.theta_vars[k]]
    if seeds:
        grads = ft.tape.backward(seeds, flat_vars)
    else:
        grads = [np.zeros(()) for _ in flat_vars]
    raw, theta, i = {}, {}, 0
    for k in names:
        m = len(ft.raw_vars[k])
        raw[k] = np.array([float(g) for g in grads[i : i + m]])
        i += m
    for k in names:
        m = len(ft.theta_vars[k])
        theta[k] = np.array([float(g) for g in grads[i : i + m]])
        i += m
    return Gradients(raw=raw, theta=theta)


def infer(model: UnrolledModel, z):
    """Tape-free forward pass; returns ``(x_hat, p_hat, seconds)``."""
    z = np.asarray(z, dtype=np.float64)
    t0 = time.perf_counter()
    x = model._layers(z, model.theta, _check_finite) if model.K else np.zeros_like(z)
    p = model.peak_op.apply(x)
    return x, p, time.perf_counter() - t0


# -- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = "p"
    seed: int = 0
    patience: int | None = 20

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("p", "x"):
            raise ValueError("loss must be 'p' (peak signal) or 'x' (spike train)")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, size, lr, **_):
        self.lr = lr

    def step(self, params, grad):
        return params - self.lr * grad


def _stack(records, attr):
    return np.stack([getattr(r, attr) for r in records])


def batch_loss(model, records, target="p"):
    """Mean squared error of a tape-free pass over ``records``."""
    if not records:
        return float("nan")
    z = _stack(records, "z")
    x, p, _ = infer(model, z)
    ref = _stack(records, target if target == "p" else "s")
    est = p if target == "p" else x
    return float(np.mean((est - ref) ** 2))


def loss_and_grad(model, records, target="p"):
    z = _stack(records, "z")
    x, p, ft = forward(model, z)
    if target == "p":
        diff = p - _stack(records, "p")
        g = backward(ft, grad_p=2.0 * diff / diff.size)
    else:
        diff = x - _stack(records, "s")
        g = backward(ft, grad_x=2.0 * diff / diff.size)
    return float(np.mean(diff**2)), g


def train(model: UnrolledModel, train_records, val_records, cfg: TrainConfig, log=None):
    """Fit ``model`` in place; returns ``(model, history)``.

    Batches are drawn from a seeded permutation per epoch; the parameters
    with the lowest validation loss (epoch 0 = initialization included) are
    restored at the end.
    """
    if not train_records:
        raise ValueError("empty training split")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    names = model.names
    opt = (Adam if cfg.optimizer == "adam" else SGD)(
        model.flat().size, cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps
    )
    def evaluate(records, epoch):
        try:
            return batch_loss(model, records, cfg.loss)
        except NonFiniteError as exc:
            raise TrainingAborted(f"epoch {epoch}, full-split evaluation: {exc}", epoch, -1) from exc

    val_loss = evaluate(val_records, 0)
    history = [{"epoch": 0, "train_loss": evaluate(train_records, 0), "val_loss": val_loss}]
    best = (val_loss if math.isfinite(val_loss) else math.inf, model.flat().copy(), 0)
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_records))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_records[i] for i in order[start : start + cfg.batch_size]]
            try:
                loss, grads = loss_and_grad(model, batch, cfg.loss)
            except NonFiniteError as exc:
                raise TrainingAborted(f"epoch {epoch}, batch {b}: {exc}", epoch, b) from exc
            gvec = grads.flat(names)
            if not (math.isfinite(loss) and np.all(np.isfinite(gvec))):
                raise TrainingAborted(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            model.set_flat(opt.step(model.flat(), gvec))
            total += loss * len(batch)
            count += len(batch)
        val_loss = evaluate(val_records, epoch)
        if not math.isfinite(val_loss) and val_records:
            raise TrainingAborted(f"non-finite validation loss at epoch {epoch}", epoch, -1)
        history.append({"epoch": epoch, "train_loss": total / count, "val_loss": val_loss})
        if log is not None:
            log(f"epoch {epoch}: train {total / count:.6e} val {val_loss:.6e}")
        if val_loss < best[0]:
            best = (val_loss, model.flat().copy(), epoch)
            stale = 0
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
    if val_records:
        model.set_flat(best[1])
    model.history = history
    return model, history


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: UnrolledModel, path, train_config: TrainConfig | None = None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": model.variant,
        "K": model.K,
        "cg_iters": model.cg_iters,
        "params": {k: [repr(float(u)) for u in model.raw[k]] for k in model.names},
        "fingerprint": model.fingerprint,
        "forward": asdict(model.setup) if model.setup is not None else None,
        "train_config": train_config.to_dict() if train_config is not None else None,
        "history": model.history,
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def load_checkpoint(path) -> UnrolledModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    if doc.get("forward") is None:
        raise ValueError(f"{path}: checkpoint lacks a forward-model description")
    setup = ForwardSetup(**doc["forward"])
    raw = {k: np.array([float(s) for s in v]) for k, v in doc["params"].items()}
    model = UnrolledModel.from_setup(
        doc["variant"], doc["K"], setup, raw=raw, cg_iters=doc["cg_iters"], fingerprint=doc["fingerprint"]
    )
    model.history = doc.get("history") or []
    return model
