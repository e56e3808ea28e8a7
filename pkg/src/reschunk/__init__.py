"""Two-scale residual-chunk graph network for human motion prediction."""

from .ablation import AblationVariant, run_ablation
from .edge_inference import (EdgeEncoder, EdgePosterior, JointPartition, coarsen, correlation_matrix,
                             encode_edges, group_joints, sample_edges)
from .evaluation import HorizonSpec, ResultsTable, emit_table, mpjpe, mpjpe_curve, zero_velocity_baseline
from .graph_layers import GcnBlock, GraphConv, Pono, graph_conv, pono
from .model import (ForwardResult, ModelConfig, ResChunk, load_checkpoint, parameter_tree,
                    predict, save_checkpoint)
from .motion_data import (MotionSequence, SkeletonSpec, WindowingConfig, crop_sample, load_sequence,
                          save_sequence, slide_windows, synth_dataset, to_positions)
from .plotting import plot_prediction
from .training import (LossBreakdown, OptimizerConfig, WindowDataset, adam_step, grad_check, kl_loss, recon_loss,
                       total_loss, train)

__version__ = "0.1.0"
