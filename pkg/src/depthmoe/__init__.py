"""depthmoe: adaptive-depth mixture-of-experts reasoning chains.

A desk-scale, fully testable implementation of complexity-aware routing over
five expert families composed into dynamic chains, trained with a staged
curriculum and a joint task/routing/balance loss, with exact MAC accounting
against uniform-depth and width-MoE baselines.
"""

from . import kernels
from .autograd import Tape, Tensor, backward, cross_entropy, matmul, softmax
from .complexity import (
    ComplexityFeatures, ComplexityWeights, TokenSequence, complexity_score,
    extract_features,
)
from .efficiency import CostModel, CostReport, chain_cost, memory_report, uniform_cost
from .experts import (
    ExpertKind, ExpertModule, MemoryState, SupervisorSignal, expert_apply,
    mce_supervise, mie_update,
)
from .model import DepthMoeModel, ModelConfig
from .optim import OptimizerState, optimizer_step
from .routing import (
    ChainTrace, DepthPolicy, RoutingDecision, RoutingNetwork, choose_k,
    compose_chain, phi, routing_probs, select_top_k,
)
from .taskgen import SampleRecord, TierSpec, generate, mix_corpus
from .training import (
    CurriculumStage, LabeledBatch, LossWeights, balance_loss, joint_loss,
    pretrain_expert, routing_loss, run_curriculum,
)

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "backward", "matmul", "softmax", "cross_entropy",
    "OptimizerState", "optimizer_step",
    "TokenSequence", "ComplexityFeatures", "ComplexityWeights",
    "extract_features", "complexity_score",
    "ExpertKind", "ExpertModule", "MemoryState", "SupervisorSignal",
    "expert_apply", "mie_update", "mce_supervise",
    "RoutingNetwork", "RoutingDecision", "ChainTrace", "DepthPolicy",
    "phi", "routing_probs", "select_top_k", "choose_k", "compose_chain",
    "LossWeights", "LabeledBatch", "CurriculumStage",
    "balance_loss", "routing_loss", "joint_loss", "pretrain_expert", "run_curriculum",
    "CostModel", "CostReport", "uniform_cost", "chain_cost", "memory_report",
    "TierSpec", "SampleRecord", "generate", "mix_corpus",
    "DepthMoeModel", "ModelConfig",
    "kernels",
]
