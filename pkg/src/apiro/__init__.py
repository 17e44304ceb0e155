"""Security-tool API recommendation: corpus ingestion, augmentation, subword
embeddings, a CNN ranker, a similarity baseline, and the evaluation kit."""

__version__ = "0.1.0"
