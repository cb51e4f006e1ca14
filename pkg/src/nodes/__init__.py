"""
LDSeg - Nodes Package
Contains the LangGraph nodes of the experiment workflow.
"""

from src.nodes.data import data_node, generate_data
from src.nodes.training import run_training, train_ae_node, train_baseline_node, train_cd_node
from src.nodes.evaluator import evaluate_directories, evaluate_models, evaluate_node
from src.nodes.reporter import reporter_node, write_report

__all__ = [
    # Data
    'data_node',
    'generate_data',
    # Training
    'run_training',
    'train_ae_node',
    'train_cd_node',
    'train_baseline_node',
    # Evaluation
    'evaluate_node',
    'evaluate_models',
    'evaluate_directories',
    # Report
    'reporter_node',
    'write_report',
]
