import numpy as np
import pytest

from utrcaf import model


def finite_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        out[i] = (up - down) / (2 * h)
    return out


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def random_probs(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    logits = rng.normal(size=(n, k))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_arch():
    return model.ArchitectureSpec(input_dim=3, hidden_dims=(5,), bottleneck_dim=4, num_classes=3, activation="tanh")


# -- parameter-space gradient checks -----------------------------------------

LOSS_NAMES = ("cross_entropy_ls", "loss_kd", "loss_forget", "loss_discover", "loss_div", "loss_adapt")


def loss_case(name: str, seed: int):
    """A random small model, batch and loss; returns (params, value_fn, grad_fn).

    ``value_fn(params)`` evaluates the loss and ``grad_fn(params)`` returns
    the analytic gradient list from :func:`utrcaf.model.backward`.
    """
    from utrcaf import losses

    r = np.random.default_rng(seed)
    p, d, k = int(r.integers(2, 5)), int(r.integers(2, 7)), int(r.integers(2, 4))
    n = int(r.integers(2, 9))
    arch = model.ArchitectureSpec(p, (int(r.integers(2, 6)),), d, k, "tanh")
    params = model.init_params(arch, seed)
    X = r.normal(size=(n, p))
    labels = r.integers(0, k, size=n)

    def from_logits(value, grad):
        def value_fn(prm):
            return value(model.forward(prm, X).probs)

        def grad_fn(prm):
            fwd = model.forward(prm, X)
            return model.backward(prm, fwd, dlogits=grad(fwd.probs))

        return params, value_fn, grad_fn

    if name == "cross_entropy_ls":
        eps = float(r.uniform(0.0, 0.3))
        return from_logits(
            lambda pr: losses.cross_entropy_ls(pr, labels, eps),
            lambda pr: losses.grad_cross_entropy_ls(pr, labels, eps),
        )
    if name == "loss_adapt":
        return from_logits(lambda pr: losses.loss_adapt(pr, labels), lambda pr: losses.grad_loss_adapt(pr, labels))
    if name == "loss_forget":
        risk = np.flatnonzero(r.random(n) < 0.6)
        if risk.size == 0:
            risk = np.array([0])
        return from_logits(
            lambda pr: losses.loss_forget(pr, labels, risk),
            lambda pr: losses.grad_loss_forget(pr, labels, risk),
        )
    if name == "loss_discover":
        return from_logits(losses.loss_discover, losses.grad_loss_discover)
    if name == "loss_div":
        return from_logits(losses.loss_div, losses.grad_loss_div)
    if name == "loss_kd":
        source = r.normal(size=(n, d))
        weights = losses.q_weight(r.normal(size=d))

        def value_fn(prm):
            return losses.loss_kd(source, model.encode(prm, X), weights)

        def grad_fn(prm):
            fwd = model.forward(prm, X)
            return model.backward(prm, fwd, dz=losses.grad_loss_kd(source, fwd.z, weights))

        return params, value_fn, grad_fn
    raise KeyError(name)


def param_grad_error(params, value_fn, grad_fn, h: float = 1e-5) -> float:
    """Relative error between analytic and central-difference gradients."""
    vec = params.to_vector()
    numeric = finite_diff(lambda v: value_fn(params.from_vector(v)), vec, h)
    analytic = np.concatenate([g.ravel() for g in grad_fn(params)])
    return rel_err(analytic, numeric)
