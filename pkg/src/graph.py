"""
LDSeg - Graph Definition
End-to-end experiment workflow: dataset, parallel training, evaluation and report.
"""

from typing import List, Literal, Union

from langgraph.checkpoint.memory import MemorySaver
from langgraph.graph import END, START, StateGraph

from src.nodes.data import data_node
from src.nodes.evaluator import evaluate_node
from src.nodes.reporter import reporter_node
from src.nodes.training import train_ae_node, train_baseline_node, train_cd_node
from src.state import ExperimentState


# ============ Wrappers ============

def data_agent(state: ExperimentState) -> dict:
    """Wrapper for Data Node."""
    return data_node(state)

def train_ae_agent(state: ExperimentState) -> dict:
    """Wrapper for Autoencoder Training Node."""
    return train_ae_node(state)

def train_cd_agent(state: ExperimentState) -> dict:
    """Wrapper for Conditional Denoiser Training Node."""
    return train_cd_node(state)

def train_baseline_agent(state: ExperimentState) -> dict:
    """Wrapper for Baseline Training Node."""
    return train_baseline_node(state)

def evaluate_agent(state: ExperimentState) -> dict:
    """Wrapper for Evaluator Node."""
    return evaluate_node(state)

def reporter_agent(state: ExperimentState) -> dict:
    """Wrapper for Reporter Node."""
    return reporter_node(state)

def error_agent(state: ExperimentState) -> dict:
    """Handle error state."""
    errors = state.get("errors") or [{"node": "unknown", "message": "Unknown error", "exit_code": 1}]
    first = errors[0]
    return {
        "current_step": "error",
        "exit_code": int(first.get("exit_code", 1)),
        "logs": [f"❌ WORKFLOW FAILED at {first['node']}: {first['message']}"],
    }


# ============ Routing Logic ============

def route_after_data(state: ExperimentState) -> Union[List[str], Literal["error"]]:
    """Fan out to both training branches, or stop on a dataset failure."""
    if state.get("errors"):
        return "error"
    return ["train_ae", "train_baseline"]

def route_after_sync(state: ExperimentState) -> Literal["evaluate", "error"]:
    """Decide next step once both training branches are done."""
    if state.get("errors"):
        return "error"
    return "evaluate"

def route_after_evaluate(state: ExperimentState) -> Literal["reporter", "error"]:
    """Decide next step after evaluation."""
    if state.get("errors"):
        return "error"
    return "reporter"


# ============ Sync Node for Parallel Join ============

def sync_node(state: ExperimentState) -> dict:
    """
    Synchronization point - joins the diffusion and baseline training branches.
    """
    trained = [k for k in ("autoencoder_path", "denoiser_path", "baseline_path") if state.get(k)]
    return {
        "current_step": "train",
        "logs": [f"🔄 Sync: {len(trained)} checkpoints ({', '.join(k[:-5] for k in trained) or 'none'})"],
    }


# ============ Graph Construction ============

def build_experiment_graph() -> StateGraph:
    """
    Builds the experiment workflow.

    Architecture:
        START
          │
          ▼
      [Gen Data] ─────────────────────┐
          ├──────────────────┐        │
          ▼                  ▼        │
     [Train AE]      [Train Baseline] │
          │                  │        │
          ▼                  │        │
     [Train CD]              │        │
          │                  │        │
          └───────┬──────────┘        │
                  ▼                   │
               [Sync] ──────────────► [Error] ──► END
                  │                   ▲
                  ▼                   │
             [Evaluate] ──────────────┘
                  │
                  ▼
             [Reporter]
                  │
                  ▼
                 END
    """
    workflow = StateGraph(ExperimentState)

    # 1. Add All Nodes
    workflow.add_node("gen_data", data_agent)
    workflow.add_node("train_ae", train_ae_agent)
    workflow.add_node("train_cd", train_cd_agent)
    workflow.add_node("train_baseline", train_baseline_agent)
    workflow.add_node("sync", sync_node)
    workflow.add_node("evaluate", evaluate_agent)
    workflow.add_node("reporter", reporter_agent)
    workflow.add_node("error", error_agent)

    # 2. Dataset, then parallel training
    workflow.add_edge(START, "gen_data")
    workflow.add_conditional_edges(
        "gen_data",
        route_after_data,
        ["train_ae", "train_baseline", "error"],
    )
    workflow.add_edge("train_ae", "train_cd")

    # 3. Join both branches
    workflow.add_edge(["train_cd", "train_baseline"], "sync")
    workflow.add_conditional_edges(
        "sync",
        route_after_sync,
        {
            "evaluate": "evaluate",
            "error": "error",
        },
    )

    # 4. Evaluation and report
    workflow.add_conditional_edges(
        "evaluate",
        route_after_evaluate,
        {
            "reporter": "reporter",
            "error": "error",
        },
    )
    workflow.add_edge("reporter", END)

    # 5. Error termination
    workflow.add_edge("error", END)

    return workflow


def compile_experiment_graph(checkpointer=None):
    """Compile the experiment graph into a runnable app."""
    if checkpointer is None:
        checkpointer = MemorySaver()
    return build_experiment_graph().compile(checkpointer=checkpointer)
