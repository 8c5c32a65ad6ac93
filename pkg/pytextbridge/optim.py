from typing import Dict
import numpy as np
from . import utils


class OptimizerError(utils.TextBridgeError):
    code = "NON_FINITE_GRADIENT"


class AdamState:
    """First and second moment estimates per parameter block, plus the shared timestep"""

    def __init__(self, step=0, m=None, v=None):
        self.step = step
        self.m = dict(m or {})                                      # type: Dict[str, np.ndarray]
        self.v = dict(v or {})                                      # type: Dict[str, np.ndarray]

    def copy(self) -> "AdamState":
        return AdamState(self.step, {k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()})


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              betas=(0.9, 0.999), eps=1e-8) -> None:
    """Updates the given parameter blocks in place with one bias-corrected Adam step"""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise OptimizerError("Non-finite gradient in parameter block '" + name + "'")
        if grad.shape != params[name].shape:
            raise OptimizerError("Gradient shape " + str(grad.shape) + " does not match parameter block '"
                                 + name + "'")

    state.step += 1
    beta1, beta2 = betas
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, grad in grads.items():
        param = params[name]
        m = state.m.setdefault(name, np.zeros_like(param))
        v = state.v.setdefault(name, np.zeros_like(param))
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam optimizer over the trainable blocks of a ModelParams object"""

    def __init__(self, lr: float, betas=(0.9, 0.999), eps=1e-8, state=None):
        if lr <= 0.0:
            raise OptimizerError("Learning rate must be positive, got " + str(lr), code="CONFIG_ERROR")
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state = state if state is not None else AdamState()

    def step(self, params, grads: Dict[str, np.ndarray]) -> None:
        """Applies one update; gradients of frozen blocks are dropped before the update"""
        trainable = {name: grads[name] for name in params.trainable()}
        adam_step(params.tensors, trainable, self.state, self.lr, self.betas, self.eps)

    def settings(self) -> dict:
        return {"lr": self.lr, "betas": list(self.betas), "eps": self.eps, "step": self.state.step}
