from hanlab.templates.pipeline_templates import(
    create_staged_pipeline_graph,
    BasePipeline,
)
