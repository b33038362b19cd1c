"""
Procesos Neuronales Multimodales.

``MNP`` conecta las piezas: extractores de features opcionales, atencion sobre
la memoria de contexto dinamica, encoders por modalidad, agregacion (MBA o las
bases Mean/Concat), un decoder compartido por los caminos unificado y
unimodales, y prediccion Monte Carlo. ``train_step`` ejecuta un paso de
optimizacion seguido de la actualizacion de memoria con el mismo mini-batch.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from neural_processes.attention import AttentionConfig, Lengthscale, LENGTHSCALE_INIT, attention_weights, rbf_matrix
from neural_processes.encoders import AGGREGATIONS, ModalityEncoders, aggregate_baseline, mba_fuse, target_specific
from neural_processes.exceptions import ConfigError, ContractError, NumericError
from neural_processes.memory import UpdateStrategy
from neural_processes.nn import FeatureExtractor, FeedForward, Identity, Module
from neural_processes.tensor import LEAKY_RELU_SLOPE, Tensor, clamp_min, concat, no_grad, softmax_rows

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
DEFAULT_LATENT_DIM = 128
DEFAULT_MC_SAMPLES = 5


@dataclass
class LossReport:
    """Componentes escalares de la perdida de un paso; total = nll + beta * rbf."""

    nll: float
    nll_unified: float
    nll_unimodal: list
    contrastive: list
    contrastive_mean: float
    rbf: float
    total: float

    def as_row(self):
        row = {"loss_total": self.total, "loss_nll": self.nll, "loss_nll_unified": self.nll_unified,
               "loss_rbf": self.rbf, "loss_cl": self.contrastive_mean}
        for m, value in enumerate(self.nll_unimodal):
            row[f"loss_nll_m{m}"] = value
        for m, value in enumerate(self.contrastive):
            row[f"loss_cl_m{m}"] = value
        return row


@dataclass
class ForwardPass:
    unified: Tensor
    unimodal: list
    draws: np.ndarray
    attention: list
    inputs: list
    posterior: object = None
    unimodal_posteriors: list = field(default_factory=list)


def nll_loss(unified, unimodal, targets):
    """
    -media de log p(clase correcta) de la prediccion unificada, mas el promedio sobre las
    modalidades del mismo termino para cada prediccion unimodal. Las probabilidades se
    acotan en 1e-12 antes del log.
    """
    targets = Tensor(targets)

    def term(probs):
        return -(targets * clamp_min(probs, PROB_FLOOR).log()).sum(axis=1).mean()

    unified_term = term(unified)
    unimodal_terms = [term(p) for p in unimodal]
    total = unified_term
    if unimodal_terms:
        summed = unimodal_terms[0]
        for t in unimodal_terms[1:]:
            summed = summed + t
        total = total + summed * (1.0 / len(unimodal_terms))
    return total, unified_term, unimodal_terms


def supervised_contrastive(kernel, labels, tau):
    """
    Perdida contrastiva supervisada sobre una matriz de similitud con valores en [0, 1].

    Todas las filas son anclas; los positivos comparten el label del ancla y el
    denominador recorre todas las demas filas. Un ancla sin positivos no aporta;
    los terminos de las anclas se suman.
    """
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    kernel = kernel if isinstance(kernel, Tensor) else Tensor(kernel)
    n = kernel.shape[0]
    if n < 2:
        return Tensor(0.0)
    classes = np.asarray(labels).argmax(axis=1)
    others = 1.0 - np.eye(n)
    positives = (classes[:, None] == classes[None, :]) * others
    counts = positives.sum(axis=1)
    anchor_weight = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)

    logits = kernel * (1.0 / tau)
    # kernel <= 1: restar 1/tau mantiene exp() acotado
    shift = 1.0 / tau
    denominator = ((logits - shift).exp() * Tensor(others)).sum(axis=1, keepdims=True)
    # [N,1] -> [N,N]
    log_denominator = clamp_min(denominator, 1e-300).log() @ Tensor(np.ones((1, n)))
    log_prob = logits - shift - log_denominator
    per_anchor = -(log_prob * Tensor(positives)).sum(axis=1)
    return (per_anchor * Tensor(anchor_weight)).sum()


def contrastive_loss_single(features, labels, lengthscale, tau, kernel_form="literal"):
    """Perdida contrastiva supervisada de una modalidad con similitudes RBF entre sus filas."""
    return supervised_contrastive(rbf_matrix(features, features, lengthscale, kernel_form), labels, tau)


def contrastive_loss(features, labels, lengthscales, tau, kernel_form="literal"):
    """Promedio de las perdidas contrastivas por modalidad; devuelve (L_CL, tensores por modalidad)."""
    per_modality = [contrastive_loss_single(x, labels, l, tau, kernel_form)
                    for x, l in zip(features, lengthscales)]
    total = per_modality[0]
    for term in per_modality[1:]:
        total = total + term
    return total * (1.0 / len(per_modality)), per_modality


def lengthscale_penalty(lengthscales):
    total = None
    for l in lengthscales:
        norm = (l * l).sum().sqrt()
        total = norm if total is None else total + norm
    return total * (1.0 / len(lengthscales))


def rbf_loss(cl_loss, lengthscales, alpha):
    """L_RBF = L_CL + alpha * mean_m ||l^m||_2."""
    if alpha < 0:
        raise ContractError(f"alpha must be non-negative, got {alpha}")
    return cl_loss + lengthscale_penalty(lengthscales) * alpha


class MNP(Module):
    """
    Clasificador Multimodal Neural Process.

    Args:
        dims (list[int]): ancho de entrada por modalidad.
        n_classes (int): K.
        latent_dim (int): d_e.
        attention (AttentionConfig): par similitud / normalizacion.
        aggregation (str): "mba", "mean" o "concat".
        memory_strategy (UpdateStrategy): regla de actualizacion de la memoria de contexto.
        n_samples (int): muestras Monte Carlo S.
        alpha, beta, tau (float): penalizacion del lengthscale, peso de L_RBF, temperatura contrastiva.
        rbf_loss_enabled (bool): incluir el termino contrastivo de L_RBF.
        learn_lengthscale (bool): dejar que el optimizador actualice los lengthscales.
        feature_extractor (bool): poner un extractor FC residual delante de cada modalidad.
        seed (int): semilla de la inicializacion y del ruido Monte Carlo.
    """

    def __init__(self, dims, n_classes, latent_dim=DEFAULT_LATENT_DIM, attention=None, aggregation="mba",
                 memory_strategy=None, n_samples=DEFAULT_MC_SAMPLES, alpha=1.0, beta=1.0, tau=0.1,
                 rbf_loss_enabled=True, learn_lengthscale=True, lengthscale_init=LENGTHSCALE_INIT,
                 feature_extractor=False, extractor_width=128, leaky_slope=LEAKY_RELU_SLOPE, seed=0):
        if aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got '{aggregation}'")
        if n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
        if tau <= 0:
            raise ConfigError(f"tau must be positive, got {tau}")
        self.dims = list(dims)
        self.n_classes = n_classes
        self.latent_dim = latent_dim
        self.attention_config = attention or AttentionConfig()
        self.aggregation = aggregation
        self.memory_strategy = memory_strategy or UpdateStrategy()
        self.n_samples = n_samples
        self.alpha, self.beta, self.tau = alpha, beta, tau
        self.rbf_loss_enabled = rbf_loss_enabled
        self.learn_lengthscale = learn_lengthscale
        self.memory = None

        init_rng = np.random.default_rng(seed)
        self.noise_rng = np.random.default_rng([seed, 1])
        self.extractors = [FeatureExtractor(d, extractor_width, rng=init_rng) if feature_extractor else Identity(d)
                           for d in self.dims]
        space = [e.out_features for e in self.extractors]
        self.lengthscales = [Lengthscale(d, lengthscale_init) for d in space]
        self.encoders = [ModalityEncoders(d, n_classes, latent_dim, init_rng, leaky_slope) for d in space]
        self.concat_mlp = (FeedForward(len(space) * latent_dim, latent_dim, latent_dim, init_rng, slope=leaky_slope)
                           if aggregation == "concat" else None)
        self.decoder = FeedForward(latent_dim, latent_dim, n_classes, init_rng, slope=leaky_slope)

    @property
    def n_modalities(self):
        return len(self.dims)

    def trainable_parameters(self):
        frozen = set() if self.learn_lengthscale else {id(l) for l in self.lengthscales}
        return [p for p in self.parameters() if id(p) not in frozen]

    def clamp_lengthscales(self):
        for l in self.lengthscales:
            l.clamp_()

    def _check_inputs(self, features, memory):
        if memory is None:
            raise ContractError("the model has no context memory; initialise it before predicting")
        if len(features) != self.n_modalities:
            raise ContractError(f"expected {self.n_modalities} modalities, got {len(features)}")
        for m, x in enumerate(features):
            if x.shape[1] != self.dims[m]:
                raise ContractError(f"modality {m} has {x.shape[1]} features, model expects {self.dims[m]}")

    def attend(self, features, memory=None):
        """Atencion de cada modalidad sobre sus filas de contexto, mas las entradas proyectadas."""
        memory = memory if memory is not None else self.memory
        self._check_inputs(features, memory)
        attention, targets, contexts = [], [], []
        for m, x in enumerate(features):
            target = self.extractors[m](Tensor(x))
            context = self.extractors[m](Tensor(memory.features(m)))
            attention.append(attention_weights(self.attention_config, target, context, self.lengthscales[m]))
            targets.append(target)
            contexts.append(context)
        return attention, targets, contexts

    def _decode(self, posterior, noise):
        n_samples, n_targets = noise.shape[0], posterior.mean.shape[0]
        if noise.shape[1:] != (n_targets, self.latent_dim):
            raise ContractError(f"noise has shape {noise.shape}, expected [S, {n_targets}, {self.latent_dim}]")
        noise = noise.reshape(n_samples * n_targets, self.latent_dim)
        mean = concat([posterior.mean] * n_samples, axis=0)
        std = concat([posterior.variance.sqrt()] * n_samples, axis=0)
        probs = softmax_rows(self.decoder(mean + std * Tensor(noise)))
        averaged = probs.reshape(n_samples, n_targets, self.n_classes).mean(axis=0)
        return averaged, probs.data.reshape(n_samples, n_targets, self.n_classes)

    def forward(self, features, memory=None, n_samples=None, noise=None, rng=None):
        """
        Pasada completa sobre un conjunto objetivo.

        Args:
            features (list[np.ndarray]): filas objetivo por modalidad.
            memory (ContextMemory, opcional): por defecto la memoria del modelo.
            n_samples (int, opcional): muestras Monte Carlo, por defecto S.
            noise (np.ndarray, opcional): normales estandar fijas [S, N_T, d_e]; se reutilizan en todos los caminos.
            rng (np.random.Generator, opcional): fuente del ruido cuando se omite ``noise``; por defecto el
                generador propio del modelo. El ruido se sortea una vez por pasada.

        Returns:
            ForwardPass
        """
        memory = memory if memory is not None else self.memory
        n_samples = n_samples or self.n_samples
        attention, targets, contexts = self.attend(features, memory)
        context_y = memory.labels()
        terms, r_stars = [], []
        for m in range(self.n_modalities):
            encoder = self.encoders[m]
            r, s = encoder.encode_context(contexts[m], context_y)
            r_star, s_star = target_specific(attention[m], r, s)
            u, q = encoder.mean_context(contexts[m], context_y)
            terms.append((r_star, s_star, u, q))
            r_stars.append(r_star)

        if self.aggregation == "mba":
            if noise is None:
                source = rng if rng is not None else self.noise_rng
                noise = source.standard_normal((n_samples, features[0].shape[0], self.latent_dim))
            noise = np.asarray(noise, dtype=np.float64)
            posterior = mba_fuse(terms)
            unified, draws = self._decode(posterior, noise)
            unimodal, posteriors = [], []
            for term in terms:
                single = mba_fuse([term])
                probs, _ = self._decode(single, noise)
                unimodal.append(probs)
                posteriors.append(single)
            return ForwardPass(unified, unimodal, draws, attention, targets, posterior, posteriors)

        z = aggregate_baseline(self.aggregation, r_stars, self.concat_mlp)
        unified = softmax_rows(self.decoder(z))
        unimodal = [softmax_rows(self.decoder(r_star)) for r_star in r_stars]
        return ForwardPass(unified, unimodal, unified.data[None].copy(), attention, targets)

    def losses(self, out, labels):
        """Tensores de perdida de una pasada: (total, L_TY, L_RBF, reporte)."""
        nll, nll_unified, nll_unimodal = nll_loss(out.unified, out.unimodal, labels)
        if self.rbf_loss_enabled:
            cl, cl_terms = contrastive_loss(out.inputs, labels, self.lengthscales, self.tau,
                                            self.attention_config.kernel_form)
            rbf = rbf_loss(cl, self.lengthscales, self.alpha)
        else:
            cl, cl_terms = Tensor(0.0), [Tensor(0.0) for _ in range(self.n_modalities)]
            rbf = lengthscale_penalty(self.lengthscales) * self.alpha
        total = nll + rbf * self.beta
        report = LossReport(
            nll=nll.item(), nll_unified=nll_unified.item(), nll_unimodal=[t.item() for t in nll_unimodal],
            contrastive=[t.item() for t in cl_terms], contrastive_mean=cl.item(), rbf=rbf.item(),
            total=total.item(),
        )
        return total, nll, rbf, report

    def predict(self, features, memory=None, n_samples=None, batch_size=None, rng=None):
        """
        Probabilidades predictivas unificadas y salidas softmax por muestra, sin registrar grafo.

        Returns:
            tuple[np.ndarray, np.ndarray]: probabilidades [N, K] y muestras [S, N, K].
        """
        n = features[0].shape[0]
        step = batch_size or n or 1
        probs, draws = [], []
        with no_grad():
            for start in range(0, n, step):
                chunk = [x[start:start + step] for x in features]
                out = self.forward(chunk, memory, n_samples, rng=rng)
                probs.append(out.unified.data)
                draws.append(out.draws)
        return np.concatenate(probs, axis=0), np.concatenate(draws, axis=1)

    def predict_unified(self, batch, memory=None, n_samples=None, noise=None, rng=None):
        with no_grad():
            return self.forward(batch.features, memory, n_samples, noise, rng).unified.data

    def predict_unimodal(self, batch, m, memory=None, n_samples=None, noise=None, rng=None):
        with no_grad():
            return self.forward(batch.features, memory, n_samples, noise, rng).unimodal[m].data

    def attention_matrix(self, features, m, memory=None):
        with no_grad():
            attention, _, _ = self.attend(features, memory)
        return attention[m].data

    def hyperparameters(self):
        return {
            "dims": self.dims, "n_classes": self.n_classes, "latent_dim": self.latent_dim,
            "attention": asdict(self.attention_config), "aggregation": self.aggregation,
            "memory_strategy": asdict(self.memory_strategy), "n_samples": self.n_samples,
            "alpha": self.alpha, "beta": self.beta, "tau": self.tau,
            "rbf_loss_enabled": self.rbf_loss_enabled, "learn_lengthscale": self.learn_lengthscale,
        }


def train_step(model, batch, optimiser):
    """
    Un paso de optimizacion sobre un mini-batch objetivo y luego la actualizacion de la memoria.

    Returns:
        LossReport

    Raises:
        NumericError: la perdida o un gradiente no es finito; parametros y memoria quedan como estaban.
    """
    optimiser.zero_grad()
    model.zero_grad()
    out = model.forward(batch.features)
    total, _, _, report = model.losses(out, batch.labels)
    if not np.isfinite(report.total):
        raise NumericError(f"non-finite loss (nll={report.nll}, rbf={report.rbf}); step aborted")
    total.backward()
    optimiser.step()
    model.clamp_lengthscales()
    model.memory = model.memory.update(
        batch, [a.data for a in out.attention], [p.data for p in out.unimodal], model.memory_strategy)
    return report
