"""Load imbalance measurement and Replicate-and-Quantize for toy sparse MoE models."""

__version__ = "0.1.0"

from .analysis import ImportanceReport, find_heavy_hitters, sample_calibration, wanda_expert_scores
from .metrics import LayerTrace, RoutingTrace, gap_matrix, lis, merge_traces
from .model import (ExpertInstance, MoeLayer, MoeModel, Router, dispatch_instance, forward_layer,
                    forward_model, route_token)
from .numerics import Matrix, col_l2_norms, matmul, softmax_row, topk_indices
from .quantization import PrecisionScheme, QuantizedMatrix, dequantize, quantize, storage_bytes
from .streaming import StreamConfig, StreamReport, build_adversarial_stream, run_stream
from .transform import MemoryReport, RQPlan, apply_plan, build_plan, memory_report
from .workload import SkewSpec, gen_model, gen_tokens
