from langgraph.graph import StateGraph, START, END
from langgraph.graph.state import CompiledStateGraph
from langchain_core.runnables import RunnableConfig

from typing import Any, Callable, Dict, List, Optional, Type, Union


class BasePipeline(CompiledStateGraph):
    """
    Base class of the staged pipelines: holds the constructor parameters, the
    compiled graph built from them, and the final state of the last run.

    Attributes not defined here are looked up on the compiled graph.
    """

    def __init__(self, **params):
        self._params = params
        self._compiled_graph = self._make_compiled_graph()
        self.response = None

    def _make_compiled_graph(self):
        raise NotImplementedError(f"{type(self).__name__} must build its graph in `_make_compiled_graph`.")

    def __getattr__(self, name: str):
        return getattr(self._compiled_graph, name)

    def invoke(
        self,
        input: Union[dict[str, Any], Any],
        config: Optional[RunnableConfig] = None,
        **kwargs
    ):
        """
        Run the compiled graph to completion and keep its final state in ``response``.

        Parameters
        ----------
        input : dict
            Initial graph state.
        config : RunnableConfig, optional
            Run configuration (recursion limit, callbacks).
        """
        self.response = self._compiled_graph.invoke(input=input, config=config, **kwargs)
        return self.response


def create_staged_pipeline_graph(
    GraphState: Type,
    node_functions: Dict[str, Callable],
    stage_node_names: List[str],
    retry_node_name: str,
    gate_node_name: str,
    passed_key: str = "gate_passed",
    max_retries_key: str = "max_retries",
    retry_count_key: str = "retry_count",
    resume_key: str = "completed_stage",
    checkpointer: Optional[Callable] = None,
):
    """
    Creates a linear staged graph with one gated stage that may be retried.

    Parameters
    ----------
    GraphState : Type
        The TypedDict or class used as state for the workflow.
    node_functions : dict
        A dictionary mapping node names to their respective functions.
        Example: {
            "computational_pretrain": computational_pretrain,
            "balance_adjustment": balance_adjustment,
            "security_gate": security_gate,
            ...
        }
    stage_node_names : list of str
        Stage nodes in execution order; stage ``k`` is ``stage_node_names[k - 1]``.
    retry_node_name : str
        The stage node that is followed by the gate and repeated when the gate fails.
    gate_node_name : str
        The node that judges the retried stage and sets ``passed_key``.
    passed_key : str, optional
        The state key holding the gate verdict.
    max_retries_key : str, optional
        The state key used for the maximum number of retries.
    retry_count_key : str, optional
        The state key for the current retry count.
    resume_key : str, optional
        The state key holding the number of already completed stages. The graph
        starts at the first stage not yet completed.
    checkpointer : callable, optional
        A checkpointer callable if desired.

    Returns
    -------
    app : CompiledStateGraph
        The compiled workflow application.
    """

    workflow = StateGraph(GraphState)

    # * NODES

    for name in stage_node_names:
        workflow.add_node(name, node_functions[name])
    workflow.add_node(gate_node_name, node_functions[gate_node_name])

    # * EDGES

    def resume_point(state):
        completed = state.get(resume_key) or 0
        if completed >= len(stage_node_names):
            return "END"
        return stage_node_names[completed]

    workflow.add_conditional_edges(
        START,
        resume_point,
        {**{name: name for name in stage_node_names}, "END": END},
    )

    for current, following in zip(stage_node_names, stage_node_names[1:]):
        if current != retry_node_name:
            workflow.add_edge(current, following)
    workflow.add_edge(retry_node_name, gate_node_name)

    index = stage_node_names.index(retry_node_name)
    after_gate = stage_node_names[index + 1] if index + 1 < len(stage_node_names) else END

    # Define a helper to check if the gate failed & we can still retry
    def failed_and_can_retry(state):
        return (
            not state.get(passed_key)
            and state.get(retry_count_key) is not None
            and state.get(max_retries_key) is not None
            and state[retry_count_key] <= state[max_retries_key]
        )

    workflow.add_conditional_edges(
        gate_node_name,
        lambda s: "pass" if s.get(passed_key) else ("retry" if failed_and_can_retry(s) else "END"),
        {
            "pass": after_gate,
            "retry": retry_node_name,
            "END": END,
        },
    )

    if stage_node_names[-1] != retry_node_name:
        workflow.add_edge(stage_node_names[-1], END)

    app = workflow.compile(checkpointer=checkpointer)

    return app
