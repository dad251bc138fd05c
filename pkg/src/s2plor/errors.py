from __future__ import annotations


class S2plorError(RuntimeError):
    pass


class NumericsError(S2plorError):
    pass


class ShapeError(S2plorError):
    pass


class PreprocessingError(S2plorError):
    pass


class CsContractError(PreprocessingError):
    pass


class DegenerateDenominator(S2plorError):
    pass


class DatasetError(S2plorError):
    pass


class TransportError(S2plorError):
    pass


class FrameError(TransportError):
    pass


class HandshakeError(TransportError):
    pass


class VerificationError(S2plorError):
    def __init__(self, role: str, invocation: int, rounds_run: int, residual: float) -> None:
        self.role = role
        self.invocation = invocation
        self.rounds_run = rounds_run
        self.residual = residual
        super().__init__(
            f"Verificacao rejeitada por {role} na multiplicacao #{invocation} "
            f"(rodada {rounds_run}, residuo {residual:.3e})."
        )


class ProtocolAbort(S2plorError):
    def __init__(self, message: str, *, iteration: int | None = None, batch: int | None = None):
        self.iteration = iteration
        self.batch = batch
        where = []
        if iteration is not None:
            where.append(f"iteracao {iteration}")
        if batch is not None:
            where.append(f"lote {batch}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")
