class MNPError(Exception):
    """Clase base de todos los errores que lanza el paquete neural_processes."""


class DimensionError(MNPError, ValueError):
    """Las formas de los operandos no coinciden."""


class ContractError(MNPError, ValueError):
    """Se violo una precondicion de la operacion."""


class DomainError(MNPError, ValueError):
    """Un valor cae fuera del dominio de la funcion (por ejemplo log de un numero no positivo)."""


class GraphError(MNPError, RuntimeError):
    """El grafo de autodiff se uso de una forma no soportada."""


class ConfigError(MNPError, ValueError):
    """La configuracion del experimento o del modelo es invalida."""


class IngestionError(MNPError, ValueError):
    """Los archivos de entrada no se pudieron leer o son inconsistentes."""


class ProtocolError(MNPError, ValueError):
    """El protocolo del experimento no puede correr con esos datos o ese checkpoint."""


class NumericError(MNPError, ArithmeticError):
    """Una perdida o un gradiente dejo de ser finito."""
