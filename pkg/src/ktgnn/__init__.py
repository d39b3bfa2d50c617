"""Silent-node classification on vocal/silent graphs.

The package couples a small matrix autodiff engine with a graph model whose
vocal minority carries complete features and labels while the silent
majority must be completed, message-passed, and classified across the
population distribution shift.
"""

from .graph import (SILENT, VOCAL, PopulationMeans, VSGraph, build_graph,
                    drop_cross_domain_edges, population_means, silent_subgraph)
from .dafc import (CompletionResult, DAFCParams, complete_features,
                   completion_schedule, distribution_consistency_loss)
from .damp import DAMPLayerParams, damp_layer_forward, distribution_shift
from .dtc import (DTCOutputs, DTCParams, classification_loss, dtc_forward,
                  kl_loss, predict_silent, total_loss)
from .model import KTGNNModel
from .baselines import GCNBaseline, MLPBaseline, apply_completion
from .metrics import compute_auc, compute_f1
from .train import Adam, TrainConfig, split_dataset, train
from .data import (DatasetManifest, SynthConfig, default_benchmark_config,
                   export_stats, generate_synthetic, load_dataset, save_dataset)

__version__ = "0.1.0"
