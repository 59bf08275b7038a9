"""State-space model types, free-run simulation and parameter plumbing.

The augmented model is

    x(k+1) = f_prior(x(k), u(k)) + f_net(x(k), u(k))
    y(k)   = g_prior(x(k), u(k)) + g_net(x(k), u(k))

where each completion network is a one-hidden-layer Gaussian-basis network
with an explicit linear bypass.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _backend, _pykernels
from .errors import ConfigurationError, DomainError, SimulationDivergence


def _frozen(a, ndim=None, name="array"):
    a = np.array(a, dtype=float)
    if ndim is not None and a.ndim != ndim:
        raise ConfigurationError(f"{name} must be {ndim}-D, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled time series stored as an (N, d) array.

    A 1-D input is treated as a scalar signal of shape (N, 1).
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ConfigurationError(f"signal must be (N, d) with N, d >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("signal contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


def as_signal(s):
    return s if isinstance(s, Signal) else Signal(s)


class PriorModel:
    """Known state-space model ``x+ = f(x, u)``, ``y = g(x, u)``.

    Subclasses provide the maps and their Jacobians with respect to ``x``;
    the Jacobians are needed for sensitivity propagation during training.
    """

    n_x: int
    n_u: int
    n_y: int

    def state(self, x, u):
        raise NotImplementedError

    def output(self, x, u):
        raise NotImplementedError

    def state_jac(self, x, u):
        raise NotImplementedError

    def output_jac(self, x, u):
        raise NotImplementedError


@dataclass(frozen=True)
class LinearPrior(PriorModel):
    """Linear-affine prior ``x+ = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in "ABCD":
            object.__setattr__(self, name, _frozen(np.atleast_2d(getattr(self, name)), 2, name))
        n_x = self.A.shape[0]
        n_u = self.B.shape[1]
        n_y = self.C.shape[0]
        if (self.A.shape != (n_x, n_x) or self.B.shape != (n_x, n_u)
                or self.C.shape != (n_y, n_x) or self.D.shape != (n_y, n_u)):
            raise ConfigurationError(
                f"inconsistent prior matrices A{self.A.shape} B{self.B.shape} "
                f"C{self.C.shape} D{self.D.shape}")
        for name in "ABCD":
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"prior matrix {name} has non-finite entries")

    @classmethod
    def scalar(cls, a, b, c=1.0, d=0.0):
        return cls([[a]], [[b]], [[c]], [[d]])

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_y(self):
        return self.C.shape[0]

    # overflow is reported by the simulators as SimulationDivergence
    def state(self, x, u):
        with np.errstate(over="ignore", invalid="ignore"):
            return self.A @ x + self.B @ u

    def output(self, x, u):
        with np.errstate(over="ignore", invalid="ignore"):
            return self.C @ x + self.D @ u

    def state_jac(self, x, u):
        return self.A

    def output_jac(self, x, u):
        return self.C


class FunctionalPrior(PriorModel):
    """Prior built from arbitrary callables.

    Jacobians default to central differences when not supplied.
    """

    def __init__(self, n_x, n_u, n_y, state_map, output_map,
                 state_jac=None, output_jac=None, fd_step=1e-6):
        self.n_x, self.n_u, self.n_y = int(n_x), int(n_u), int(n_y)
        self._f, self._g = state_map, output_map
        self._fj, self._gj = state_jac, output_jac
        self._h = fd_step

    def state(self, x, u):
        return np.asarray(self._f(x, u), dtype=float).reshape(self.n_x)

    def output(self, x, u):
        return np.asarray(self._g(x, u), dtype=float).reshape(self.n_y)

    def _fd(self, fn, x, u, d_out):
        J = np.empty((d_out, self.n_x))
        for c in range(self.n_x):
            e = np.zeros(self.n_x)
            e[c] = self._h
            J[:, c] = (fn(x + e, u) - fn(x - e, u)) / (2 * self._h)
        return J

    def state_jac(self, x, u):
        if self._fj is not None:
            return np.asarray(self._fj(x, u), dtype=float).reshape(self.n_x, self.n_x)
        return self._fd(self.state, x, u, self.n_x)

    def output_jac(self, x, u):
        if self._gj is not None:
            return np.asarray(self._gj(x, u), dtype=float).reshape(self.n_y, self.n_x)
        return self._fd(self.output, x, u, self.n_y)


def rbf_activation(z):
    """Elementwise Gaussian basis ``exp(-z**2)``; values lie in (0, 1].

    For ``|z| > ~27.3`` the result underflows to 0.0 in double precision.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("rbf_activation requires finite input")
    return np.exp(-z * z)


@dataclass(frozen=True)
class CompletionNetwork:
    """``out = A_lin x + B_lin u + W_out phi(W_in [x; u] + b_hidden) + b_out``."""

    W_in: np.ndarray
    b_hidden: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    A_lin: np.ndarray
    B_lin: np.ndarray

    def __post_init__(self):
        for name, nd in (("W_in", 2), ("b_hidden", 1), ("W_out", 2),
                         ("b_out", 1), ("A_lin", 2), ("B_lin", 2)):
            object.__setattr__(self, name, _frozen(getattr(self, name), nd, name))
        n_n = self.b_hidden.shape[0]
        d = self.b_out.shape[0]
        n_x = self.A_lin.shape[1]
        n_u = self.B_lin.shape[1]
        if n_n < 1:
            raise ConfigurationError("completion network needs at least one neuron")
        if (self.W_in.shape != (n_n, n_x + n_u) or self.W_out.shape != (d, n_n)
                or self.A_lin.shape[0] != d or self.B_lin.shape[0] != d):
            raise ConfigurationError("inconsistent completion network shapes")
        for name in ("W_in", "b_hidden", "W_out", "b_out", "A_lin", "B_lin"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"completion parameter {name} has non-finite entries")

    @property
    def n_n(self):
        return self.b_hidden.shape[0]

    @property
    def n_x(self):
        return self.A_lin.shape[1]

    @property
    def n_u(self):
        return self.B_lin.shape[1]

    @property
    def d_out(self):
        return self.b_out.shape[0]

    @property
    def size(self):
        return _pykernels.net_size(self.n_n, self.n_x, self.n_u, self.d_out)

    def to_vector(self):
        return np.concatenate([self.W_in.ravel(), self.b_hidden, self.W_out.ravel(),
                               self.b_out, self.A_lin.ravel(), self.B_lin.ravel()])

    @classmethod
    def from_vector(cls, theta, n_n, n_x, n_u, d_out):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (_pykernels.net_size(n_n, n_x, n_u, d_out),):
            raise ConfigurationError("parameter vector length does not match network shape")
        return cls(*_pykernels._unpack(theta, n_n, n_x, n_u, d_out))


def completion_forward(net, x, u):
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape[0] != net.n_x or u.shape[0] != net.n_u:
        raise ConfigurationError(
            f"expected x of dim {net.n_x} and u of dim {net.n_u}, got {x.shape[0]}, {u.shape[0]}")
    hidden = rbf_activation(net.W_in @ np.concatenate((x, u)) + net.b_hidden)
    return net.A_lin @ x + net.B_lin @ u + net.W_out @ hidden + net.b_out


def init_completion(n_x, n_u, d_out, n_n, rng_seed=None):
    """Network whose output is identically zero at initialization.

    Linear bypass, output weights and output bias start at zero; hidden
    weights and biases are drawn i.i.d. from U(-1, 1), ``W_in`` first.
    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    for name, v in (("n_x", n_x), ("n_u", n_u), ("d_out", d_out), ("n_n", n_n)):
        if int(v) < 1:
            raise ConfigurationError(f"{name} must be positive, got {v}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    W_in = rng.uniform(-1.0, 1.0, size=(n_n, n_x + n_u))
    b_hidden = rng.uniform(-1.0, 1.0, size=n_n)
    return CompletionNetwork(
        W_in=W_in,
        b_hidden=b_hidden,
        W_out=np.zeros((d_out, n_n)),
        b_out=np.zeros(d_out),
        A_lin=np.zeros((d_out, n_x)),
        B_lin=np.zeros((d_out, n_u)),
    )


@dataclass(frozen=True)
class AugmentedModel:
    """Prior model plus state completion and optional output completion."""

    prior: PriorModel
    f_net: CompletionNetwork
    g_net: Optional[CompletionNetwork] = None

    def __post_init__(self):
        p = self.prior
        if self.f_net.n_x != p.n_x or self.f_net.d_out != p.n_x or self.f_net.n_u != p.n_u:
            raise ConfigurationError("state completion does not match prior dimensions")
        if self.g_net is not None and (self.g_net.n_x != p.n_x or self.g_net.n_u != p.n_u
                                       or self.g_net.d_out != p.n_y):
            raise ConfigurationError("output completion does not match prior dimensions")

    @property
    def n_params(self):
        return self.f_net.size + (self.g_net.size if self.g_net is not None else 0)


def init_augmented(prior, n_n, rng_seed=None, output_completion=False):
    """Augmented model that reproduces ``prior`` exactly; f_net drawn before g_net."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    f_net = init_completion(prior.n_x, prior.n_u, prior.n_x, n_n, rng)
    g_net = init_completion(prior.n_x, prior.n_u, prior.n_y, n_n, rng) if output_completion else None
    return AugmentedModel(prior, f_net, g_net)


@dataclass(frozen=True)
class ParamVector:
    """Flat trainable parameters with the layout they were taken from.

    ``layout`` holds ``(name, shape)`` pairs in storage order.
    """

    theta: np.ndarray
    layout: tuple = field(default=())

    def __len__(self):
        return self.theta.shape[0]


_NET_FIELDS = ("W_in", "b_hidden", "W_out", "b_out", "A_lin", "B_lin")


def param_layout(m):
    out = []
    for tag, net in (("f", m.f_net), ("g", m.g_net)):
        if net is None:
            continue
        for name in _NET_FIELDS:
            out.append((f"{tag}.{name}", getattr(net, name).shape))
    return tuple(out)


def flatten_params(m):
    parts = [m.f_net.to_vector()]
    if m.g_net is not None:
        parts.append(m.g_net.to_vector())
    theta = np.concatenate(parts)
    theta.setflags(write=False)
    return ParamVector(theta, param_layout(m))


def unflatten_params(m, theta):
    """Return a copy of ``m`` with completion parameters taken from ``theta``."""
    if isinstance(theta, ParamVector):
        theta = theta.theta
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != m.n_params:
        raise ConfigurationError(f"expected {m.n_params} parameters, got {theta.shape[0]}")
    f = m.f_net
    n_f = f.size
    f_net = CompletionNetwork.from_vector(theta[:n_f], f.n_n, f.n_x, f.n_u, f.d_out)
    g_net = None
    if m.g_net is not None:
        g = m.g_net
        g_net = CompletionNetwork.from_vector(theta[n_f:], g.n_n, g.n_x, g.n_u, g.d_out)
    return AugmentedModel(m.prior, f_net, g_net)


def augmented_step(m, x, u, step=0):
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape[0] != m.prior.n_x or u.shape[0] != m.prior.n_u:
        raise ConfigurationError("state or input dimension mismatch")
    with np.errstate(over="ignore", invalid="ignore"):
        x_next = m.prior.state(x, u) + completion_forward(m.f_net, x, u)
        y = m.prior.output(x, u)
        if m.g_net is not None:
            y = y + completion_forward(m.g_net, x, u)
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(y))):
        raise SimulationDivergence(step)
    return x_next, y


def propagate(m, u, x0, sens=False):
    """Run the simulation kernel; returns the raw kernel dict (see ``_pykernels``)."""
    u = np.ascontiguousarray(as_signal(u).values)
    p = m.prior
    if u.shape[1] != p.n_u:
        raise ConfigurationError(f"input dimension {u.shape[1]} != prior n_u {p.n_u}")
    x0 = np.zeros(p.n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != p.n_x:
        raise ConfigurationError(f"x0 must have dimension {p.n_x}")
    theta_f = m.f_net.to_vector()
    theta_g = m.g_net.to_vector() if m.g_net is not None else np.zeros(0)
    n_n_g = m.g_net.n_n if m.g_net is not None else 0
    if isinstance(p, LinearPrior) and _backend.use_compiled():
        return _backend._ckernels.propagate_linear(
            p.A, p.B, p.C, p.D, theta_f, m.f_net.n_n, theta_g, n_n_g, u, x0, bool(sens))
    return _pykernels.propagate(p, theta_f, m.f_net.n_n, theta_g if n_n_g else None,
                                n_n_g, u, x0, sens)


def simulate(m, u_seq, x0=None):
    """Free-run simulation; returns ``(x_seq, y_seq)`` as Signals.

    ``x_seq[k]`` is the state at step k, so ``x_seq[0] == x0``. ``m`` may be
    an AugmentedModel or a bare PriorModel.
    """
    if isinstance(m, PriorModel):
        return _simulate_prior(m, u_seq, x0)
    res = propagate(m, u_seq, x0)
    if res["bad"] >= 0:
        raise SimulationDivergence(res["bad"])
    return Signal(res["xs"]), Signal(res["ys"])


def _simulate_prior(prior, u_seq, x0):
    u = as_signal(u_seq).values
    if u.shape[1] != prior.n_u:
        raise ConfigurationError("input dimension mismatch")
    x = np.zeros(prior.n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    xs = np.empty((u.shape[0], prior.n_x))
    ys = np.empty((u.shape[0], prior.n_y))
    for k in range(u.shape[0]):
        if not np.all(np.isfinite(x)):
            raise SimulationDivergence(k)
        xs[k] = x
        ys[k] = prior.output(x, u[k])
        if not np.all(np.isfinite(ys[k])):
            raise SimulationDivergence(k)
        x = prior.state(x, u[k])
    return Signal(xs), Signal(ys)
