import logging

import numpy as np

from neural_processes.exceptions import NumericError

logger = logging.getLogger(__name__)


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    Un paso de Adam con correccion de sesgo.

    Args:
        params (list[np.ndarray]): valores actuales.
        grads (list[np.ndarray]): gradientes, con las mismas formas que ``params``.
        state (dict): ``{"t": int, "m": list, "v": list}``; un dict vacio parte con momentos en cero.

    Returns:
        tuple: (parametros nuevos, estado nuevo). Las entradas nunca se modifican.

    Raises:
        NumericError: algun gradiente tiene NaN o infinito; no se actualiza nada.
    """
    for i, grad in enumerate(grads):
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient in parameter #{i}; Adam step rejected")
    t = state.get("t", 0) + 1
    m_prev = state.get("m") or [np.zeros_like(p) for p in params]
    v_prev = state.get("v") or [np.zeros_like(p) for p in params]
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_prev, v_prev):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, {"t": t, "m": new_m, "v": new_v}


class Adam:
    """
    Envoltorio con estado de ``adam_step`` para una lista de Parameters.

    Un parametro con ``grad`` None se trata como gradiente cero.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = {}

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        values, self.state = adam_step(
            [p.data for p in self.params], grads, self.state,
            lr=self.lr, beta1=self.betas[0], beta2=self.betas[1], eps=self.eps,
        )
        for param, value in zip(self.params, values):
            param.data = value
        logger.debug(f"adam step {self.state['t']} applied to {len(self.params)} parameters")
