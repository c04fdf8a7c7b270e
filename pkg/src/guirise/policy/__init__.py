from .base import (
    MalformedResponse,
    Policy,
    PolicyContext,
    PolicyUnavailable,
    RemoteUnreachable,
    SampledTurn,
    UnknownToken,
)
from .remote import RemotePolicy, remote_rollout
from .scripted import ScriptedCorruptPolicy, ScriptedOraclePolicy
from .toy import SparseGrad, ToyPolicy
from .vocab import Vocab, sim_vocab

__all__ = [
    "MalformedResponse", "Policy", "PolicyContext", "PolicyUnavailable", "RemoteUnreachable", "SampledTurn",
    "UnknownToken", "RemotePolicy", "remote_rollout", "ScriptedCorruptPolicy", "ScriptedOraclePolicy",
    "SparseGrad", "ToyPolicy", "Vocab", "sim_vocab",
]
